#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SOURCE: &str = "\
-DOCSTART- -X- O O

Obama B-PER
went O
to O
New B-LOC
York I-LOC
. O

Angela B-PER
Merkel I-PER
visited O
the O
Red B-ORG
Cross I-ORG
. O
";

pub const TARGET: &str = "\
Obama
fue
a
Nueva
York
.

Angela
Merkel
visitó
la
Cruz
Roja
.
";

pub const GOLD: &str = "\
Obama B-PER
fue O
a O
Nueva B-LOC
York I-LOC
. O

Angela B-PER
Merkel I-PER
visitó O
la O
Cruz B-ORG
Roja I-ORG
. O
";

pub const CATEGORIES: &str = "PER Person\nLOC Location\nORG Organization\n";

pub const LEXICON: &str = "\
obama obama
went fue
to a
new nueva
york york
angela angela
merkel merkel
visited visitó
the la
red roja
cross cruz
";

/// Top beams are wrong on purpose; correct fillers come second.
pub const BEAMS: &str = r#"{"prompt": "Obama fue a Nueva York . <Person>None</Person> <Location>None</Location>", "beams": [{"text": "<Person>Obama fue</Person> <Location>York</Location>", "logprob": -0.3}, {"text": "<Person>Obama</Person> <Location>Nueva York</Location>", "logprob": -0.6}, {"text": "<Person>Obama</Person <Location>", "logprob": -0.9}]}
{"prompt": "Angela Merkel visitó la Cruz Roja . <Person>None</Person> <Organization>None</Organization>", "beams": [{"text": "<Person>Merkel</Person> <Organization>la Cruz</Organization>", "logprob": -0.2}, {"text": "<Person>Angela Merkel</Person> <Organization>Cruz Roja</Organization>", "logprob": -0.4}]}
{"prompt": "Obama", "beams": [{"text": "Obama", "logprob": -0.1}]}
{"prompt": "New York", "beams": [{"text": "Nueva York", "logprob": -0.1}]}
{"prompt": "Angela Merkel", "beams": [{"text": "Angela Merkel", "logprob": -0.1}]}
{"prompt": "Red Cross", "beams": [{"text": "Cruz Roja", "logprob": -0.1}]}
"#;

pub const ALIGNMENTS: &str = "0-0 1-1 2-2 3-3 4-4 5-5\n0-0 1-1 2-2 3-3 4-5 5-4 6-6\n";

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in [
            ("source.conll", SOURCE),
            ("target.conll", TARGET),
            ("gold.conll", GOLD),
            ("categories.txt", CATEGORIES),
            ("lexicon.txt", LEXICON),
            ("beams.jsonl", BEAMS),
            ("align.txt", ALIGNMENTS),
        ] {
            fs::write(dir.path().join(name), text).unwrap();
        }
        Fixture { dir }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap()
    }

    /// `project`/`sweep` arguments for the fixture's corpus.
    pub fn corpus_args(&self) -> Vec<String> {
        let p = |n: &str| self.path(n).display().to_string();
        vec![
            "--source".into(),
            p("source.conll"),
            "--target".into(),
            p("target.conll"),
            "--categories".into(),
            p("categories.txt"),
            "--src-lang".into(),
            "en".into(),
            "--tgt-lang".into(),
            "es".into(),
        ]
    }

    pub fn mock_args(&self) -> Vec<String> {
        let p = |n: &str| self.path(n).display().to_string();
        vec![
            "--endpoint".into(),
            "mock".into(),
            "--lexicon".into(),
            p("lexicon.txt"),
            "--beam-script".into(),
            p("beams.jsonl"),
        ]
    }
}

pub fn spanproj<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_spanproj"))
        .args(args)
        .output()
        .unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn p(path: &Path) -> String {
    path.display().to_string()
}

pub fn micro_f1(report_json: &str) -> f64 {
    let v: serde_json::Value = serde_json::from_str(report_json).unwrap();
    v["micro"]["f1"].as_f64().unwrap()
}
