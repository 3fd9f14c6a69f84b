//! Command-line flags, the optional TOML config file, and validation.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use spanproj::eval::validate_counts;
use spanproj::pipeline::{CandidateSource, Method, PipelineConfig};
use spanproj::scoring::ScoringMethod;

#[derive(Debug, Parser)]
#[command(
    name = "spanproj",
    version,
    about = "Project span annotations across a parallel corpus"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project source annotations onto the target sentences and write CoNLL.
    Project(RunArgs),
    /// Score a predicted CoNLL file against gold.
    Evaluate(EvaluateArgs),
    /// Report F1 for increasing numbers of generated candidates.
    Sweep(RunArgs),
    /// Probe the inference backend and list its capabilities.
    ServeCheck(ServeCheckArgs),
}

/// Flags shared by `project` and `sweep`. Every flag may also be given in the
/// `--config` TOML file under the same name; flags win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunArgs {
    /// TOML file with default values for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Labeled source corpus (CoNLL, BIO tags in the last column).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target sentences, one per source sentence (CoNLL or JSONL with `tokens`).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// tprojection, ngram+select, most-probable, oracle, alignment, span-translation.
    #[arg(long)]
    pub method: Option<String>,
    /// Beams requested from the generator (default 100).
    #[arg(long)]
    pub beams: Option<usize>,
    /// Backend base URL, or `mock` for the built-in lexicon scorer and scripted generator.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Map from raw tags to category names (`RAW Name` lines or a JSON object).
    #[arg(long)]
    pub categories: Option<PathBuf>,
    #[arg(long)]
    pub src_lang: Option<String>,
    #[arg(long)]
    pub tgt_lang: Option<String>,
    /// Word alignments in Pharaoh `i-j` format, one line per sentence pair.
    #[arg(long)]
    pub alignments: Option<PathBuf>,
    /// Gold target annotations (CoNLL).
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Projected CoNLL output; for `sweep`, the F1 table as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation report (JSON); needs --gold.
    #[arg(long)]
    pub report_json: Option<PathBuf>,
    /// Run metadata (JSON); defaults to `<out>.meta.json`.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Candidate counts for `sweep`, e.g. 1,10,50,100.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Requests per scoring batch (default 32).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Generation length limit (default 64).
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    /// translation or embedding.
    #[arg(long)]
    pub scoring: Option<String>,
    /// Candidate source for the oracle method: generator or ngram.
    #[arg(long)]
    pub candidates: Option<String>,
    /// Fall back to n-gram candidates when no beam of a pair parses.
    #[arg(long)]
    pub ngram_fallback: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory for the persistent self-probability cache.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Recorded in the run metadata; selection itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-request timeout in seconds (default 120).
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Word pairs for the mock scorer (`src tgt` per line).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// JSONL `{"prompt": ..., "beams": [{"text", "logprob"}]}` for the mock generator.
    #[arg(long)]
    pub beam_script: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Predicted CoNLL.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold CoNLL with the same sentences and tokens.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub categories: Option<PathBuf>,
    #[arg(long)]
    pub report_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeCheckArgs {
    #[arg(long)]
    pub endpoint: String,
    /// Also check that the backend supports this method.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value = "translation")]
    pub scoring: String,
    #[arg(long, default_value_t = 10)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "url")]
pub enum Endpoint {
    None,
    Mock,
    Http(String),
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "mock" {
            Ok(Endpoint::Mock)
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(Endpoint::Http(s.to_string()))
        } else {
            Err(format!("--endpoint must be an http(s) URL or `mock`, got {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Project,
    Sweep,
}

/// Fully resolved settings of a `project` or `sweep` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub source: PathBuf,
    pub target: PathBuf,
    pub endpoint: Endpoint,
    pub categories: Option<PathBuf>,
    pub alignments: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub counts: Vec<usize>,
    pub threads: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub timeout_secs: u64,
    pub lexicon: Option<PathBuf>,
    pub beam_script: Option<PathBuf>,
}

impl RunArgs {
    /// Fills unset flags from `file`.
    fn merge(self, file: RunArgs) -> RunArgs {
        macro_rules! pick {
            ($($f:ident),*) => { RunArgs { config: self.config, ngram_fallback: self.ngram_fallback || file.ngram_fallback, $($f: self.$f.or(file.$f)),* } };
        }
        pick!(
            source,
            target,
            method,
            beams,
            endpoint,
            categories,
            src_lang,
            tgt_lang,
            alignments,
            gold,
            out,
            report_json,
            metadata,
            counts,
            batch_size,
            max_new_tokens,
            scoring,
            candidates,
            threads,
            cache_dir,
            seed,
            timeout_secs,
            lexicon,
            beam_script
        )
    }

    pub fn with_config_file(self) -> Result<RunArgs, Vec<String>> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| vec![format!("--config {}: {e}", path.display())])?;
        let file: RunArgs = toml::from_str(&text).map_err(|e| vec![format!("--config {}: {e}", path.display())])?;
        Ok(self.merge(file))
    }

    /// Checks every setting and reports all problems at once.
    pub fn resolve(self, mode: Mode) -> Result<RunConfig, Vec<String>> {
        let a = self.with_config_file()?;
        let mut errors = Vec::new();
        let defaults = PipelineConfig::default();

        let method = match a.method.as_deref().map(str::parse::<Method>) {
            None => defaults.method,
            Some(Ok(m)) => m,
            Some(Err(e)) => {
                errors.push(format!("--method: {e}"));
                defaults.method
            }
        };
        let scoring = match a.scoring.as_deref() {
            None | Some("translation") => ScoringMethod::Translation,
            Some("embedding") => ScoringMethod::Embedding,
            Some(other) => {
                errors.push(format!("--scoring must be translation or embedding, got {other:?}"));
                ScoringMethod::Translation
            }
        };
        let candidates = match a.candidates.as_deref().map(str::parse::<CandidateSource>) {
            None => CandidateSource::Generator,
            Some(Ok(c)) => c,
            Some(Err(e)) => {
                errors.push(format!("--candidates: {e}"));
                CandidateSource::Generator
            }
        };
        let positive = |name: &str, v: Option<usize>, default: usize, errors: &mut Vec<String>| match v {
            Some(0) => {
                errors.push(format!("--{name} must be at least 1"));
                default
            }
            Some(n) => n,
            None => default,
        };
        let n_beams = positive("beams", a.beams, defaults.n_beams, &mut errors);
        let batch_size = positive("batch-size", a.batch_size, defaults.batch_size, &mut errors);
        let max_new_tokens = positive("max-new-tokens", a.max_new_tokens, defaults.max_new_tokens, &mut errors);
        if a.threads == Some(0) {
            errors.push("--threads must be at least 1".into());
        }

        let required = |flag: &str, v: &Option<PathBuf>, errors: &mut Vec<String>| {
            if v.is_none() {
                errors.push(format!("--{flag} is required"));
            }
        };
        required("source", &a.source, &mut errors);
        required("target", &a.target, &mut errors);
        if mode == Mode::Project {
            required("out", &a.out, &mut errors);
        }
        if method == Method::Alignment && a.alignments.is_none() {
            errors.push("--alignments is required for --method alignment".into());
        }
        if method == Method::Oracle && a.gold.is_none() {
            errors.push("--gold is required for --method oracle".into());
        }
        if a.report_json.is_some() && a.gold.is_none() {
            errors.push("--report-json needs --gold".into());
        }

        let mut counts = Vec::new();
        if mode == Mode::Sweep {
            if a.gold.is_none() && method != Method::Oracle {
                errors.push("--gold is required for sweep".into());
            }
            match &a.counts {
                None => errors.push("--counts is required for sweep".into()),
                Some(c) => match validate_counts(c) {
                    Ok(()) => counts = c.clone(),
                    Err(e) => errors.push(format!("--counts: {e}")),
                },
            }
            if !method.needs_generator(candidates) {
                errors.push(format!(
                    "sweep varies the number of beams; --method {method} does not generate"
                ));
            }
        }

        let needs_generator = method.needs_generator(candidates);
        let needs_scorer = method.needs_scorer();
        let endpoint = match a.endpoint.as_deref() {
            Some(s) => Endpoint::parse(s).unwrap_or_else(|e| {
                errors.push(e);
                Endpoint::None
            }),
            None => {
                if needs_generator || needs_scorer {
                    errors.push(format!("--endpoint is required for --method {method}"));
                }
                Endpoint::None
            }
        };
        if endpoint == Endpoint::Mock {
            if needs_generator && a.beam_script.is_none() {
                errors.push(format!(
                    "--beam-script is required for --method {method} with --endpoint mock"
                ));
            }
            if needs_scorer && a.lexicon.is_none() {
                errors.push(format!(
                    "--lexicon is required for --method {method} with --endpoint mock"
                ));
            }
        } else {
            for (flag, v) in [("lexicon", &a.lexicon), ("beam-script", &a.beam_script)] {
                if v.is_some() {
                    errors.push(format!("--{flag} only applies with --endpoint mock"));
                }
            }
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        let metadata = a.metadata.or_else(|| a.out.as_deref().map(default_metadata_path));
        Ok(RunConfig {
            pipeline: PipelineConfig {
                method,
                n_beams,
                max_new_tokens,
                batch_size,
                src_lang: a.src_lang.unwrap_or(defaults.src_lang),
                tgt_lang: a.tgt_lang.unwrap_or(defaults.tgt_lang),
                scoring,
                candidates,
                ngram_fallback: a.ngram_fallback,
            },
            source: a.source.expect("checked"),
            target: a.target.expect("checked"),
            endpoint,
            categories: a.categories,
            alignments: a.alignments,
            gold: a.gold,
            out: a.out,
            report_json: a.report_json,
            metadata,
            counts,
            threads: a.threads,
            cache_dir: a.cache_dir,
            seed: a.seed,
            timeout_secs: a.timeout_secs.unwrap_or(120),
            lexicon: a.lexicon,
            beam_script: a.beam_script,
        })
    }
}

pub fn default_metadata_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunArgs {
        RunArgs {
            source: Some("src.conll".into()),
            target: Some("tgt.txt".into()),
            out: Some("out/proj.conll".into()),
            endpoint: Some("http://localhost:8000".into()),
            ..Default::default()
        }
    }

    #[test]
    fn defaults() {
        let c = base().resolve(Mode::Project).unwrap();
        assert_eq!(c.pipeline.method, Method::TProjection);
        assert_eq!(c.pipeline.n_beams, 100);
        assert_eq!(c.metadata.unwrap(), PathBuf::from("out/proj.conll.meta.json"));
    }

    #[test]
    fn alignment_without_file_names_the_flag() {
        let args = RunArgs {
            method: Some("alignment".into()),
            ..base()
        };
        let errs = args.resolve(Mode::Project).unwrap_err();
        assert_eq!(
            errs,
            vec!["--alignments is required for --method alignment".to_string()]
        );
    }

    #[test]
    fn all_errors_at_once() {
        let args = RunArgs {
            method: Some("oracle".into()),
            beams: Some(0),
            scoring: Some("bleu".into()),
            endpoint: Some("localhost".into()),
            ..Default::default()
        };
        let errs = args.resolve(Mode::Project).unwrap_err();
        for needle in [
            "--beams",
            "--scoring",
            "--source",
            "--target",
            "--out",
            "--gold",
            "--endpoint",
        ] {
            assert!(
                errs.iter().any(|e| e.contains(needle)),
                "{needle} missing from {errs:?}"
            );
        }
    }

    #[test]
    fn mock_needs_its_files() {
        let args = RunArgs {
            endpoint: Some("mock".into()),
            ..base()
        };
        let errs = args.resolve(Mode::Project).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn sweep_checks_counts() {
        let args = RunArgs {
            gold: Some("gold.conll".into()),
            counts: Some(vec![10, 5]),
            ..base()
        };
        assert!(args.clone().resolve(Mode::Sweep).is_err());
        let ok = RunArgs {
            counts: Some(vec![1, 5, 10]),
            ..args
        };
        assert_eq!(ok.resolve(Mode::Sweep).unwrap().counts, vec![1, 5, 10]);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = std::env::temp_dir().join(format!("spanproj-args-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, "beams = 7\nmethod = \"most-probable\"\nsrc-lang = \"de\"\n").unwrap();
        let args = RunArgs {
            config: Some(path.clone()),
            beams: Some(3),
            ..base()
        };
        let c = args.resolve(Mode::Project).unwrap();
        assert_eq!(c.pipeline.n_beams, 3);
        assert_eq!(c.pipeline.method, Method::MostProbable);
        assert_eq!(c.pipeline.src_lang, "de");

        std::fs::write(&path, "beamz = 7\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            ..base()
        };
        assert!(args.resolve(Mode::Project).unwrap_err()[0].contains("beamz"));
        std::fs::remove_dir_all(dir).ok();
    }
}
