//! The `fhve` command line: a full experiment run plus one subcommand per
//! pipeline stage so each stage can be driven from its file artifacts.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Checkpoint, Profile, RunConfig};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::evalbench::{
    run_experiment, stage_rng, train_linear_probe, write_probe_csv, Condition, ProbeConfig, ProbeRow, SeedRun,
    SYNTH_STREAM,
};
use crate::federation::{dirichlet_partition, write_round_csv};
use crate::model::Architecture;
use crate::synthesis::{mix_parameters, synthesize, synthesize_balanced, MetaMixture, SamplingPrior, SyntheticSidecar};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;

/// Caps the worker pool when set to a positive integer.
pub const THREADS_ENV: &str = "FHVE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fhve", version, about = "Federated hypernetwork CVAE training, synthesis, and probing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full experiment for every configured seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's seed list; repeatable.
        #[arg(long)]
        seed: Vec<u64>,
        /// Replaces the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split a dataset file across clients with Dirichlet label skew.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value_t = 0.3)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate labeled samples from a checkpoint and a meta-code file.
    #[command(group(ArgGroup::new("labels").required(true).args(["balanced", "class"])))]
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON holding either `code` or `codes` with `weights`.
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        count: usize,
        /// Spread `count` evenly over all classes.
        #[arg(long)]
        balanced: bool,
        /// Generate `count` samples of this class only.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, value_enum, default_value_t = SamplingPrior::ClassPrior)]
        prior: SamplingPrior,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a linear probe on one dataset file and score it on another.
    Probe {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = ProbeConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = ProbeConfig::default().lr)]
        lr: f64,
        /// Recorded in the output row.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Recorded in the output row.
        #[arg(long, default_value_t = 0)]
        client: usize,
        #[arg(long, value_enum, default_value_t = Condition::Synthetic)]
        condition: Condition,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a complete config for a profile as JSON.
    PrintDefaults {
        #[arg(long, value_enum, default_value_t = Profile::Full)]
        profile: Profile,
    },
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match thread_cap() {
        Ok(Some(n)) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::InvalidArgument(format!("cannot build worker pool: {e}"))),
        },
        Ok(None) => dispatch(cli.command),
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_INVALID,
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => EXIT_INVALID,
        Error::CheckpointVersion { .. } => EXIT_CHECKPOINT,
        _ => EXIT_RUNTIME,
    }
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config {
                field: THREADS_ENV.into(),
                reason: format!("expected a positive integer, got {v:?}"),
            }),
        },
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out).map(|_| ()),
        Command::Partition {
            data,
            clients,
            alpha,
            seed,
            out,
        } => cmd_partition(&data, clients, alpha, seed, &out).map(|_| ()),
        Command::Synth {
            checkpoint,
            code,
            count,
            balanced: _,
            class,
            prior,
            seed,
            out,
        } => cmd_synth(&checkpoint, &code, count, class, prior, seed, &out).map(|_| ()),
        Command::Probe {
            train,
            test,
            epochs,
            lr,
            seed,
            client,
            condition,
            out,
        } => {
            let probe = ProbeConfig { epochs, lr };
            cmd_probe(&train, &test, &probe, seed, client, condition, &out).map(|_| ())
        }
        Command::PrintDefaults { profile } => {
            let text = RunConfig::profile(profile).to_json()?;
            match writeln!(io::stdout(), "{text}") {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
                _ => Ok(()),
            }
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Runs the experiment and writes every artifact under the output directory.
pub fn cmd_run(config: &Path, seeds: Vec<u64>, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if !seeds.is_empty() {
        cfg.seeds = seeds;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    fs::write(dir.join("resolved_config.json"), cfg.to_json()? + "\n").map_err(|e| Error::io(&dir, e))?;

    let (report, runs) = run_experiment(&cfg.experiment(), &cfg.seeds)?;
    write_json(&report, &dir.join("report.json"))?;
    write_probe_csv(&report.probes, &dir.join("probe.csv"))?;
    for run in &runs {
        write_seed_artifacts(&cfg, run, &dir.join(format!("seed_{}", run.seed)))?;
        let s = run.summary();
        println!(
            "seed {}: synthetic-only BACC {:.3}, pooled {:.3}, untrained {:.3}, ε {}",
            run.seed,
            run.mean_bacc(Condition::Synthetic),
            s.pooled_bacc,
            s.untrained_bacc,
            s.total_epsilon.map_or("n/a".to_owned(), |e| format!("{e:.4}"))
        );
    }
    log::info!("wrote outputs to {}", dir.display());
    Ok(cfg)
}

fn write_seed_artifacts(cfg: &RunConfig, run: &SeedRun, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_round_csv(&run.outcome.reports, &dir.join("rounds.csv"))?;
    run.outcome.messages.write_jsonl(&dir.join("messages.jsonl"))?;
    Checkpoint {
        model: cfg.model.clone(),
        phi: run.outcome.phi.clone(),
    }
    .write(&dir.join("phi.ckpt"))?;
    write_json(&run.meta, &dir.join("meta_code.json"))?;
    write_json(&run.stats, &dir.join("class_stats.json"))?;
    run.synthetic.write(&dir.join("synthetic.fhve"))?;
    let dp = &cfg.federation.dp;
    let sidecar = SyntheticSidecar {
        codes: vec![run.meta.code.clone()],
        weights: vec![1.0],
        sampling_prior: cfg.synthesis.sampling_prior,
        seed: run.seed,
        count: run.synthetic.len(),
        epsilon: run.total_epsilon,
        delta: dp.enabled.then_some(dp.delta),
    };
    write_json(&sidecar, &dir.join("synthetic.json"))?;
    for (i, (tr, te)) in run.data.train.iter().zip(&run.data.test).enumerate() {
        tr.write(&dir.join(format!("client_{i}_train.fhve")))?;
        te.write(&dir.join(format!("client_{i}_test.fhve")))?;
    }
    Ok(())
}

/// Writes `client_<i>.fhve` for each part and returns the part sizes.
pub fn cmd_partition(data: &Path, clients: usize, alpha: f64, seed: u64, out: &Path) -> Result<Vec<usize>> {
    let set = LabeledSet::read(data)?;
    let parts = dirichlet_partition(&set, clients, alpha, &mut ChaCha8Rng::seed_from_u64(seed))?;
    create_dir(out)?;
    for (i, p) in parts.iter().enumerate() {
        p.write(&out.join(format!("client_{i}.fhve")))?;
    }
    let sizes: Vec<usize> = parts.iter().map(LabeledSet::len).collect();
    println!("{}", sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
    Ok(sizes)
}

/// Reads a meta-code file: a fitted meta-code (`code`) or a mixture
/// (`codes`, `weights`).
pub fn read_mixture(path: &Path) -> Result<MetaMixture> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let bad = || Error::Format {
        path: path.to_path_buf(),
        reason: "expected `code` or `codes` with `weights`".into(),
    };
    let mix = if v.get("codes").is_some() {
        serde_json::from_value::<MetaMixture>(v).map_err(|_| bad())?
    } else {
        let code = v.get("code").cloned().ok_or_else(bad)?;
        MetaMixture::single(serde_json::from_value(code).map_err(|_| bad())?)
    };
    mix.validate()?;
    Ok(mix)
}

/// Samples `count` points (balanced over classes unless `class` is given)
/// with the same random stream a run uses for its synthetic set.
pub fn cmd_synth(
    checkpoint: &Path,
    code: &Path,
    count: usize,
    class: Option<usize>,
    prior: SamplingPrior,
    seed: u64,
    out: &Path,
) -> Result<LabeledSet> {
    let ck = Checkpoint::read(checkpoint)?;
    let arch = Architecture::new(ck.model.clone())?;
    let mix = read_mixture(code)?;
    let gen = mix_parameters(&arch, &mix, &ck.phi)?;
    let mut rng = stage_rng(seed, SYNTH_STREAM);
    let set = match class {
        None => synthesize_balanced(&arch, &gen, &ck.phi, count, prior, &mut rng)?,
        Some(y) => {
            let mut s = LabeledSet::new(arch.cfg.data_dim, arch.cfg.num_classes);
            for (x, label) in synthesize(&arch, &gen, &ck.phi, y, count, prior, &mut rng)? {
                s.push(x, label);
            }
            s
        }
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    set.write(out)?;
    let sidecar = SyntheticSidecar {
        codes: mix.codes,
        weights: mix.weights,
        sampling_prior: prior,
        seed,
        count: set.len(),
        epsilon: None,
        delta: None,
    };
    write_json(&sidecar, &out.with_extension("json"))?;
    Ok(set)
}

pub fn cmd_probe(
    train: &Path,
    test: &Path,
    probe: &ProbeConfig,
    seed: u64,
    client: usize,
    condition: Condition,
    out: &Path,
) -> Result<ProbeRow> {
    probe.validate()?;
    let tr = LabeledSet::read(train)?;
    let te = LabeledSet::read(test)?;
    let score = train_linear_probe(&tr, &te, probe)?;
    let row = ProbeRow {
        seed,
        client,
        condition,
        accuracy: score.accuracy,
        balanced_accuracy: score.balanced_accuracy,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_probe_csv(std::slice::from_ref(&row), out)?;
    println!("accuracy {:.4} balanced accuracy {:.4}", row.accuracy, row.balanced_accuracy);
    Ok(row)
}
