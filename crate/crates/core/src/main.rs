use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use spantrack::data::{corpus_stats, generate_synthetic, Corpus, GeneratorProfile};
use spantrack::eval::{evaluate, run_sharing_comparison, run_svd_ablation};
use spantrack::heads::{slot_head_parameter_count, SharingMode};
use spantrack::tracker::{track_dialogue, update_state, DialogueState, ModelBundle};
use spantrack::training::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "spantrack", version, about = "Span-extracting dialogue state tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test corpora from a synthetic profile.
    GenData {
        #[arg(long)]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_dialogues: Option<usize>,
        #[arg(long)]
        dev_dialogues: Option<usize>,
        #[arg(long)]
        test_dialogues: Option<usize>,
    },
    /// Train a model with early stopping on the dev corpus.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Training history; defaults to `<out>.history.jsonl`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a model on a corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Track dialogue state turn by turn, printing one JSON state per turn.
    Track {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "interactive", required_unless_present = "interactive")]
        dialogue: Option<PathBuf>,
        #[arg(long)]
        interactive: bool,
    },
    /// Train one model per slot value dropout rate and seed.
    AblateSvd {
        #[command(flatten)]
        splits: SplitArgs,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Slots scored as OOV; detected from train and test when omitted.
        #[arg(long, value_delimiter = ',')]
        oov_slots: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train shared and slot-specific encoders under the same config.
    CompareSharing {
        #[command(flatten)]
        splits: SplitArgs,
        #[command(flatten)]
        overrides: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter counts of a saved model.
    Params {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON training config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sharing: Option<SharingMode>,
    /// Slot value dropout rate.
    #[arg(long)]
    svd: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    Corpus::load(existing(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelBundle, CliError> {
    ModelBundle::load(existing(path)?).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(existing(path)?).map_err(runtime)?;
                TrainConfig::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        if let Some(s) = self.sharing {
            cfg.sharing = s;
        }
        if let Some(p) = self.svd {
            cfg.slot_value_dropout = p;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.max_epochs {
            cfg.max_epochs = n;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// A closed stdout ends output quietly rather than failing.
fn emit(out: &mut impl Write, line: &str) -> Result<(), CliError> {
    match writeln!(out, "{line}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn print_state(out: &mut impl Write, state: &DialogueState) -> Result<(), CliError> {
    emit(out, &serde_json::to_string(state).map_err(runtime)?)
}

#[derive(Deserialize)]
struct TurnText {
    #[serde(default)]
    system: String,
    user: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DialogueFile {
    Turns(Vec<TurnText>),
    Dialogue { turns: Vec<TurnText> },
}

fn track_file(model: &ModelBundle, path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(existing(path)?).map_err(runtime)?;
    let turns = match serde_json::from_str(&text) {
        Ok(DialogueFile::Turns(t)) | Ok(DialogueFile::Dialogue { turns: t }) => t,
        Err(e) => return Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    };
    let pairs: Vec<(&str, &str)> = turns.iter().map(|t| (t.system.as_str(), t.user.as_str())).collect();
    let states = track_dialogue(model, &pairs).map_err(runtime)?;
    let mut out = io::stdout().lock();
    states.iter().try_for_each(|s| print_state(&mut out, s))
}

/// Reads alternating system and user lines, prompting for each on stderr.
fn track_interactive(model: &ModelBundle) -> Result<(), CliError> {
    let mut lines = io::stdin().lock().lines();
    let mut out = io::stdout().lock();
    let mut state = DialogueState::new();
    let prompt = |p: &str| {
        eprint!("{p}");
        let _ = io::stderr().flush();
    };
    loop {
        prompt("system> ");
        let Some(system) = lines.next().transpose().map_err(runtime)? else {
            return Ok(());
        };
        prompt("user> ");
        let Some(user) = lines.next().transpose().map_err(runtime)? else {
            return Ok(());
        };
        let pred = model.predict_turn(&system, &user).map_err(runtime)?;
        state = update_state(&state, &pred);
        print_state(&mut out, &state)?;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            profile,
            seed,
            out,
            train_dialogues,
            dev_dialogues,
            test_dialogues,
        } => {
            let mut p = GeneratorProfile::named(&profile, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            p = p.clone().with_sizes(
                train_dialogues.unwrap_or(p.train_dialogues),
                dev_dialogues.unwrap_or(p.dev_dialogues),
                test_dialogues.unwrap_or(p.test_dialogues),
            );
            let splits = generate_synthetic(&p).map_err(runtime)?;
            fs::create_dir_all(&out).map_err(runtime)?;
            let mut stats = serde_json::Map::new();
            for (name, c) in [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)] {
                c.save(out.join(format!("{name}.json"))).map_err(runtime)?;
                let s = corpus_stats(c, (name != "train").then_some(&splits.train));
                stats.insert(name.into(), serde_json::to_value(s).map_err(runtime)?);
            }
            let stats = json!({ "profile": p.name, "seed": seed, "oov_slots": p.oov_slots(), "splits": stats });
            write_file(&out.join("stats.json"), &serde_json::to_string_pretty(&stats).map_err(runtime)?)
        }
        Command::Train {
            train: train_path,
            dev,
            overrides,
            out,
            history,
        } => {
            let cfg = overrides.resolve()?;
            let (train_corpus, dev) = (load_corpus(&train_path)?, load_corpus(&dev)?);
            let outcome = train(&train_corpus, &dev, &cfg).map_err(runtime)?;
            outcome.model.save(&out).map_err(runtime)?;
            let history = history.unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".history.jsonl");
                name.into()
            });
            write_file(&history, &outcome.history.to_jsonl())
        }
        Command::Eval { model, corpus, report } => {
            let (model, corpus) = (load_model(&model)?, load_corpus(&corpus)?);
            let text = evaluate(&model, &corpus).map_err(runtime)?.to_json();
            match report {
                Some(path) => write_file(&path, &text),
                None => emit(&mut io::stdout().lock(), &text),
            }
        }
        Command::Track {
            model,
            dialogue,
            interactive,
        } => {
            let model = load_model(&model)?;
            match dialogue {
                Some(path) if !interactive => track_file(&model, &path),
                _ => track_interactive(&model),
            }
        }
        Command::AblateSvd {
            splits,
            overrides,
            grid,
            seeds,
            oov_slots,
            out,
        } => {
            let cfg = overrides.resolve()?;
            let (tr, dv, te) = (load_corpus(&splits.train)?, load_corpus(&splits.dev)?, load_corpus(&splits.test)?);
            let oov = (!oov_slots.is_empty()).then_some(oov_slots);
            let table = run_svd_ablation(&tr, &dv, &te, &cfg, &grid, &seeds, oov).map_err(runtime)?;
            fs::create_dir_all(&out).map_err(runtime)?;
            write_file(&out.join("svd_ablation.json"), &table.to_json())?;
            write_file(&out.join("svd_ablation.csv"), &table.to_csv())
        }
        Command::CompareSharing {
            splits,
            overrides,
            seeds,
            out,
        } => {
            let cfg = overrides.resolve()?;
            let (tr, dv, te) = (load_corpus(&splits.train)?, load_corpus(&splits.dev)?, load_corpus(&splits.test)?);
            let table = run_sharing_comparison(&tr, &dv, &te, &cfg, &seeds).map_err(runtime)?;
            fs::create_dir_all(&out).map_err(runtime)?;
            write_file(&out.join("sharing.json"), &table.to_json())?;
            write_file(&out.join("sharing.csv"), &table.to_csv())
        }
        Command::Params { model } => {
            let model = load_model(&model)?;
            let cfg = model.config();
            let k = model.slots().len();
            let encoders = match model.sharing() {
                SharingMode::Shared => 1,
                SharingMode::SlotSpecific => k,
            };
            let report = json!({
                "sharing": model.sharing(),
                "slots": k,
                "encoder_parameters": cfg.parameter_count(),
                "encoders": encoders,
                "head_parameters": slot_head_parameter_count(cfg.hidden_size) * k,
                "total": model.parameter_count(),
                "stored_scalars": model.params().scalar_count(),
            });
            emit(&mut io::stdout().lock(), &serde_json::to_string_pretty(&report).map_err(runtime)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
