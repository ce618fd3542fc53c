//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use stagebc::chunkstore::{Dataset, DatasetConfig, LabelChoice};
use stagebc::demogen::{collect, AnnotateConfig, CollectConfig, DemoArchive, ExpertConfig};
use stagebc::doorworld::EnvParams;
use stagebc::evalbench::{
    ablation_table, comparison_table, funnel_text, guidance_table, run_ablation, run_comparison, run_guidance,
    EvalConfig, GuidanceConfig, ReferenceTrajectory, Scenario,
};
use stagebc::par::Exec;
use stagebc::policy::{train, Checkpoint, PolicyConfig, Variant};
use stagebc::runtime::{rollout, RolloutConfig, StageFeed, StageSourceSpec};
use stagebc::Error;

use crate::config::{write_envelope, write_manifest, RunConfig};
use crate::exit::{require, CliError, CliResult};
use crate::serve::{serve_forever, ServeConfig};

#[derive(Debug, Parser)]
#[command(name = "stagebc", version, about = "Stage-conditioned imitation learning on a simulated door")]
pub struct Cli {
    /// JSON file overriding the default environment parameters.
    #[arg(long, global = true)]
    pub env_file: Option<PathBuf>,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect scripted-expert demonstrations and annotate their stages.
    GenDemos(GenDemos),
    /// Train one policy variant.
    Train(TrainArgs),
    /// Compare trained variants on held-out door dynamics.
    Eval(EvalArgs),
    /// Stage-input ablation of a stage-conditioned model.
    Ablate(AblateArgs),
    /// Behavior-guidance scenarios.
    Guidance(GuidanceArgs),
    /// Run and record a single episode.
    Rollout(RolloutArgs),
    /// Serve live rollouts to the steering console over a websocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDemos {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = stagebc::demogen::DEFAULT_DEMO_SEED)]
    pub seed: u64,
    /// Expert noise scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value = "demos.bin")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Demonstration archive to chunk.
    #[arg(long, conflicts_with = "dataset")]
    pub demos: Option<PathBuf>,
    /// Prebuilt dataset; must match the requested H and window.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// stage, plain or history5.
    #[arg(long, default_value = "stage")]
    pub variant: String,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on privileged oracle stages instead of annotated ones.
    #[arg(long)]
    pub oracle_labels: bool,
    /// Also write the dataset built from `--demos`.
    #[arg(long)]
    pub save_dataset: Option<PathBuf>,
    #[arg(long, default_value = "checkpoint.bin")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoints to compare (repeat the flag).
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// The archive the checkpoints were trained on.
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_eval: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Print the layout of published table 1 or 2.
    #[arg(long)]
    pub paper_table: Option<u8>,
    #[arg(long, default_value = "eval.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_eval: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Only table 3 applies here.
    #[arg(long)]
    pub paper_table: Option<u8>,
    #[arg(long, default_value = "ablation.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GuidanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// latch_disabled or recovery.
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 50)]
    pub n_seeds: usize,
    /// Schedule for latch_disabled, e.g. `S1@0,S4@40,S5@90`.
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long, default_value = "guidance.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// oracle, oracle-monotone, constant:S1, random:SEED or sequence:S1@0,...
    #[arg(long, default_value = "oracle")]
    pub source: String,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Start from the canonical pose instead of a randomized one.
    #[arg(long)]
    pub canonical: bool,
    #[arg(long, default_value = "episode.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Control steps per second sent to the console.
    #[arg(long, default_value_t = 10.0)]
    pub rate_hz: f64,
    /// Stage fed when the operator has not prompted.
    #[arg(long, default_value = "constant:S1")]
    pub base_source: String,
    /// Include the latch flag in state messages.
    #[arg(long)]
    pub debug_latch: bool,
    #[arg(long)]
    pub budget: Option<usize>,
}

fn load_env(path: Option<&Path>) -> CliResult<EnvParams> {
    let Some(path) = path else {
        return Ok(EnvParams::default());
    };
    require(path)?;
    let p: EnvParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    p.validate()?;
    Ok(p)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require(path)?;
    Ok(Checkpoint::load(path)?)
}

fn load_archive(path: &Path) -> CliResult<DemoArchive> {
    require(path)?;
    Ok(DemoArchive::load(path)?)
}

/// Reference trace from the training split of the archive every model was
/// trained on.
fn reference_for(archive: &DemoArchive, models: &[&Checkpoint]) -> CliResult<ReferenceTrajectory> {
    let hash = archive.hash()?;
    for m in models {
        if m.provenance.demo_hash != hash {
            return Err(Error::Provenance(format!(
                "checkpoint trained on demos {} but --demos has hash {hash}",
                m.provenance.demo_hash
            ))
            .into());
        }
    }
    Ok(ReferenceTrajectory::from_archive(archive, &DatasetConfig::default())?)
}

fn exec(cli: &Cli) -> Exec {
    if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn paper_table(requested: Option<u8>, allowed: &[u8]) -> CliResult<Option<u8>> {
    match requested {
        Some(t) if !allowed.contains(&t) => Err(CliError::Usage(format!(
            "--paper-table {t} is not produced by this command (allowed: {allowed:?})"
        ))),
        other => Ok(other),
    }
}

/// Runs a parsed command; returns the text printed on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    let env = load_env(cli.env_file.as_deref())?;
    let exec = exec(cli);
    match &cli.command {
        Command::GenDemos(a) => {
            let mut expert = ExpertConfig::default();
            if let Some(s) = a.sigma {
                expert.sigma = s;
            }
            let cc = CollectConfig {
                n: a.n,
                seed: a.seed,
                expert,
                ..CollectConfig::default()
            };
            let demos = collect(&cc, &env, exec)?;
            let archive = DemoArchive::build(env.clone(), cc, demos, &AnnotateConfig::default());
            archive.save(&a.out)?;
            let m = write_manifest(&a.out, &RunConfig::new("gen-demos", a, &env, &[])?)?;
            Ok(format!(
                "wrote {} ({} demos, demo hash {}, config {})",
                a.out.display(),
                archive.trajectories.len(),
                archive.hash()?,
                m.config_hash
            ))
        }
        Command::Train(a) => {
            let variant = Variant::parse(&a.variant)?;
            let mut pc = PolicyConfig::for_variant(variant);
            if let Some(h) = a.h {
                pc.h = h;
            }
            if let Some(e) = a.epochs {
                pc.epochs = e;
            }
            if let Some(lr) = a.lr {
                pc.lr = lr;
            }
            if let Some(s) = a.seed {
                pc.seed = s;
            }
            pc.validate()?;
            let (ds, input) = match (&a.demos, &a.dataset) {
                (Some(d), None) => {
                    let archive = load_archive(d)?;
                    let dc = DatasetConfig {
                        h: pc.h,
                        k: pc.k,
                        labels: if a.oracle_labels { LabelChoice::Oracle } else { LabelChoice::Archive },
                        ..DatasetConfig::default()
                    };
                    let ds = Dataset::build(&archive, &dc)?;
                    if let Some(p) = &a.save_dataset {
                        ds.save(p)?;
                    }
                    (ds, d.clone())
                }
                (None, Some(d)) => {
                    require(d)?;
                    (Dataset::load_expecting(d, pc.h, pc.k)?, d.clone())
                }
                _ => return Err(CliError::Usage("train needs exactly one of --demos or --dataset".into())),
            };
            let result = train(&ds, &pc)?;
            let best = &result.curves[result.best_epoch];
            let ckpt = Checkpoint::new(result.weights, &ds)?;
            ckpt.save(&a.out)?;
            let m = write_manifest(&a.out, &RunConfig::new("train", a, &env, &[&input])?)?;
            Ok(format!(
                "wrote {} ({} params, best epoch {} val recon {:.4}, dataset {}, config {})",
                a.out.display(),
                ckpt.weights.param_count(),
                result.best_epoch,
                best.val_recon,
                ckpt.dataset_hash,
                m.config_hash
            ))
        }
        Command::Eval(a) => {
            let table = paper_table(a.paper_table, &[1, 2])?;
            let models = a.checkpoints.iter().map(|p| load_checkpoint(p)).collect::<CliResult<Vec<_>>>()?;
            let refs: Vec<&Checkpoint> = models.iter().collect();
            let archive = load_archive(&a.demos)?;
            let reference = reference_for(&archive, &refs)?;
            let mut ec = EvalConfig {
                n_eval: a.n_eval,
                exec,
                ..EvalConfig::default()
            };
            if let Some(s) = a.seed {
                ec.seed = s;
            }
            if let Some(b) = a.budget {
                ec.rollout.budget = b;
            }
            let report = run_comparison(&env, &refs, &reference, &ec)?;
            let mut inputs: Vec<&Path> = a.checkpoints.iter().map(PathBuf::as_path).collect();
            inputs.push(&a.demos);
            write_envelope(&a.out, &RunConfig::new("eval", a, &env, &inputs)?, &report)?;
            Ok(match table {
                Some(2) => funnel_text(&report),
                Some(_) => comparison_table(&report),
                None => format!("{}\n{}", comparison_table(&report), funnel_text(&report)),
            })
        }
        Command::Ablate(a) => {
            paper_table(a.paper_table, &[3])?;
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let archive = load_archive(&a.demos)?;
            let reference = reference_for(&archive, &[&ckpt])?;
            let mut ec = EvalConfig {
                n_eval: a.n_eval,
                exec,
                ..EvalConfig::default()
            };
            if let Some(s) = a.seed {
                ec.seed = s;
            }
            let report = run_ablation(&env, &ckpt, &reference, &ec)?;
            write_envelope(
                &a.out,
                &RunConfig::new("ablate", a, &env, &[&a.checkpoint, &a.demos])?,
                &report,
            )?;
            Ok(ablation_table(&report))
        }
        Command::Guidance(a) => {
            let scenario = Scenario::parse(&a.scenario)?;
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let mut gc = GuidanceConfig {
                n_seeds: a.n_seeds,
                exec,
                ..GuidanceConfig::default()
            };
            if let Some(s) = &a.schedule {
                match StageSourceSpec::parse(&format!("sequence:{s}"))? {
                    StageSourceSpec::FixedSequence { schedule } => gc.schedule = schedule,
                    _ => unreachable!("sequence prefix parses to a fixed sequence"),
                }
            }
            let report = run_guidance(&env, &ckpt, scenario, &gc)?;
            write_envelope(&a.out, &RunConfig::new("guidance", a, &env, &[&a.checkpoint])?, &report)?;
            Ok(guidance_table(&report))
        }
        Command::Rollout(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let src = StageSourceSpec::parse(&a.source)?;
            let mut rc = RolloutConfig {
                randomize_init: !a.canonical,
                ..RolloutConfig::default()
            };
            if let Some(b) = a.budget {
                rc.budget = b;
            }
            let rec = rollout(&env, &ckpt, StageFeed::new(&src, a.seed)?, src.kind(), a.seed, &rc)?;
            write_envelope(&a.out, &RunConfig::new("rollout", a, &env, &[&a.checkpoint])?, &rec)?;
            Ok(format!(
                "wrote {} ({} steps, success {}, stages passed {})",
                a.out.display(),
                rec.len(),
                rec.outcome.success,
                rec.outcome.stages_passed()
            ))
        }
        Command::Serve(a) => {
            let ckpt = load_checkpoint(&a.checkpoint)?;
            let mut rollout = RolloutConfig::default();
            if let Some(b) = a.budget {
                rollout.budget = b;
            }
            let cfg = ServeConfig {
                env,
                checkpoint: ckpt,
                seed: a.seed,
                rate_hz: a.rate_hz,
                base_source: StageSourceSpec::parse(&a.base_source)?,
                debug_latch: a.debug_latch,
                rollout,
            };
            serve_forever(&format!("{}:{}", a.host, a.port), cfg)?;
            Ok(String::new())
        }
    }
}
