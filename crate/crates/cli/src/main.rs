use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fedfuse::alignment::{align_files, PauseThresholds};
use fedfuse::augmentation::{augment_dataset, load_corpus, synth_generate, write_corpus, CorpusManifest};
use fedfuse::federation::{Aggregator, Strategy};
use fedfuse::harness::{
    grid_search, read_reports, run_experiment, write_reports, CorpusSource, ExperimentConfig, Paradigm, RunReport,
};
use fedfuse::model::{gradient_check, FusionConfig, Modality};
use fedfuse::numerics::Profile;

#[derive(Parser)]
#[command(name = "fedfuse", version, about = "Deterministic federated learning simulator for a cross-modal fusion classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Test,
    Run,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Test => Profile::Test,
            ProfileArg::Run => Profile::Run,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    /// Modality by paradigm, with and without augmentation.
    Paradigms,
    /// Aggregator by deployment strategy.
    Strategies,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config JSON; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(p) = self.profile {
            cfg.federation.profile = p.into();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus in the ingestion layout.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align transcripts and frame features of a corpus into padded samples.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        /// Output JSON file of aligned samples.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        frame_hz: Option<f64>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Pause thresholds in seconds: comma,period,ellipsis.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        thresholds: Option<Vec<f64>>,
    },
    /// Augment a synthetic corpus by speaker/content recombination.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "test")]
        profile: ProfileArg,
    },
    /// Run a cross-validated experiment and write its report.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run a whole comparison table instead of the single configured cell.
        #[arg(long, value_enum)]
        sweep: Option<Sweep>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Grid search over the config's `grid` space.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Finite-difference check of the model gradients on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value_t = 6)]
        max_len: usize,
        #[arg(long, default_value_t = 4)]
        mlp_hidden: usize,
        #[arg(long)]
        ffn: bool,
        #[arg(long, value_enum, default_value = "both")]
        modality: ModalityArg,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge report JSON files into the comparison tables.
    Report {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Audio,
    Text,
    Both,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Audio => Modality::Audio,
            ModalityArg::Text => Modality::Text,
            ModalityArg::Both => Modality::Both,
        }
    }
}

fn sweep_configs(base: &ExperimentConfig, sweep: Option<Sweep>) -> Vec<ExperimentConfig> {
    match sweep {
        None => vec![base.clone()],
        Some(Sweep::Paradigms) => Modality::ALL
            .into_iter()
            .flat_map(|modality| {
                Paradigm::ALL.into_iter().flat_map(move |paradigm| {
                    [false, true].map(|augment| ExperimentConfig { modality, paradigm, augment, ..base.clone() })
                })
            })
            .collect(),
        Some(Sweep::Strategies) => {
            let mu = match base.federation.aggregator {
                Aggregator::FedProx { mu } => mu,
                _ => 0.01,
            };
            let fine_tune = match base.federation.strategy {
                Strategy::Pfl { fine_tune_epochs } => fine_tune_epochs,
                _ => 1,
            };
            let aggs = [Aggregator::FedAvg, Aggregator::FedProx { mu }, Aggregator::FedAdam, Aggregator::FedAdagrad, Aggregator::FedYogi];
            let strats = [Strategy::Sfl, Strategy::Pfl { fine_tune_epochs: fine_tune }, Strategy::Afl];
            aggs.iter()
                .flat_map(|&aggregator| {
                    strats.iter().map(move |&strategy| {
                        let mut c = base.clone();
                        c.paradigm = Paradigm::Federated;
                        c.federation.aggregator = aggregator;
                        c.federation.strategy = strategy;
                        c
                    })
                })
                .collect()
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData { common, out } => {
            let cfg = common.load()?;
            let CorpusSource::Synthetic(mut synth) = cfg.corpus else {
                bail!("gen-data needs a synthetic corpus config");
            };
            if let Some(s) = common.seed {
                synth.seed = s;
            }
            let (g, samples) = synth_generate(&synth)?;
            write_corpus(&out, &samples, Some(&g), cfg.federation.profile.dtype())?;
            println!("wrote {} samples to {}", samples.len(), out.display());
        }
        Command::Align { corpus, out, frame_hz, max_len, thresholds } => {
            let manifest: CorpusManifest = serde_json::from_slice(&fs::read(corpus.join("manifest.json"))?)?;
            let mut opts = manifest.align;
            if let Some(hz) = frame_hz {
                opts.frame_hz = hz;
            }
            if let Some(n) = max_len {
                opts.max_len = n;
            }
            if let Some(t) = thresholds {
                opts.thresholds = PauseThresholds { comma: t[0], period: t[1], ellipsis: t[2] };
            }
            let aligned = manifest
                .samples
                .iter()
                .map(|e| {
                    let mut s = align_files(&corpus, &e.files, &opts).with_context(|| format!("aligning {}", e.id))?;
                    s.label = e.label;
                    s.speaker_id = e.speaker_id.clone();
                    Ok(serde_json::json!({ "id": e.id, "sample": s }))
                })
                .collect::<Result<Vec<_>>>()?;
            write_json(&out, &aligned)?;
            println!("aligned {} recordings into {}", aligned.len(), out.display());
        }
        Command::Augment { corpus, out, seed, profile } => {
            let c = load_corpus(&corpus)?;
            let Some(g) = c.generator.as_ref() else {
                bail!("{} has no converter; only synthetic corpora can be augmented", corpus.display());
            };
            let augmented = augment_dataset(&c.samples, seed, g)?;
            write_corpus(&out, &augmented, Some(g), Profile::from(profile).dtype())?;
            println!("wrote {} samples ({} original) to {}", augmented.len(), c.samples.len(), out.display());
        }
        Command::Run { common, out, sweep, workers } => {
            let mut base = common.load()?;
            if workers.is_some() {
                base.workers = workers;
            }
            let mut reports: Vec<RunReport> = Vec::new();
            for cfg in sweep_configs(&base, sweep) {
                let r = run_experiment(&cfg)?;
                log::info!(
                    "{} {} aug={} {} {}: acc {:.4} f1 {:.4} ({:.1}s)",
                    r.paradigm.name(),
                    r.modality.name(),
                    r.augment,
                    r.aggregator.as_deref().unwrap_or("-"),
                    r.strategy.as_deref().unwrap_or("-"),
                    r.mean.accuracy,
                    r.mean.f1,
                    r.runtime_secs
                );
                reports.push(r);
            }
            let tables = write_reports(&out, &reports)?;
            print!("{}", tables.text());
        }
        Command::Grid { common, out } => {
            let cfg = common.load()?;
            let (best, report) = grid_search(&cfg, &cfg.grid, None)?;
            write_json(&out.join("grid.json"), &report)?;
            write_json(&out.join("best_config.json"), &best)?;
            for row in &report.rows {
                println!("{:>3} {:?} {:.4}", row.index, row.point, row.score);
            }
            println!("best: {:?}", report.best().point);
        }
        Command::Gradcheck { instances, hidden_dim, heads, max_len, mlp_hidden, ffn, modality, tol, seed } => {
            let cfg = FusionConfig {
                hidden_dim,
                heads,
                max_len,
                mlp_hidden,
                include_ffn: ffn,
                modality: modality.into(),
                ..FusionConfig::default()
            };
            let mut failed = 0;
            for i in 0..instances {
                let r = gradient_check(&cfg, seed + i as u64, tol)?;
                println!("instance {i}: max rel error {:.3e} over {} coordinates", r.max_rel_error, r.coordinates);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                bail!("{failed} of {instances} instances exceeded {tol:e}");
            }
        }
        Command::Report { inputs, out } => {
            let mut reports = Vec::new();
            for p in &inputs {
                reports.extend(read_reports(p).with_context(|| format!("reading {}", p.display()))?);
            }
            let tables = write_reports(&out, &reports)?;
            print!("{}", tables.text());
        }
    }
    Ok(())
}
