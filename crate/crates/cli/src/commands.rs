use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use trpca_core::baseline::{tune, write_tune_log, SearchSpace};
use trpca_core::datagen::{derive_seed, gen_instance, InstanceMeta, RpcaInstance};
use trpca_core::error::Error;
use trpca_core::experiment::{self, write_grid_csv, write_heatmap_svg, write_sensitivity_csv, ExperimentSpec};
use trpca_core::io::{
    read_frame_dir, read_mask, read_params, read_tensor, write_params, write_tensor, write_trace, ParamsDocument,
};
use trpca_core::learner::{
    activate, train_on, write_train_log, LossKind, RawParams, ThresholdScale, TrainConfig,
};
use trpca_core::metrics::relative_error;
use trpca_core::solver::{self, HyperParams, SolverConfig};

use crate::config::{parse_rank, resolve, write_resolved, FamilyConfig, InputConfig, RankSpec};
use crate::CliError;

fn default_out() -> PathBuf {
    PathBuf::from("trpca-out")
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Prefixes I/O and format errors with the offending path.
fn at<T>(path: &Path, r: trpca_core::error::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))).into(),
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

/// Reads an instance from a `datagen` directory or a bare observation file.
fn load_instance(inp: &InputConfig) -> Result<RpcaInstance, CliError> {
    let path = inp.input.as_ref().ok_or_else(|| config_error("input is required"))?;
    let optional = |dir: &Path, name: &str| Some(dir.join(name)).filter(|p| p.is_file());
    let (y_path, mut xstar_path, sstar_path, mut mask_path, meta) = if path.is_dir() {
        let meta_path = path.join("meta.json");
        let meta: Option<InstanceMeta> = if meta_path.is_file() {
            Some(serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?)
        } else {
            None
        };
        (
            path.join("Y.tns3"),
            optional(path, "Xstar.tns3"),
            optional(path, "Sstar.tns3"),
            optional(path, "mask.tns3"),
            meta,
        )
    } else {
        (path.clone(), None, None, None, None)
    };
    if let Some(p) = &inp.xstar {
        xstar_path = Some(p.clone());
    }
    if let Some(p) = &inp.mask {
        mask_path = Some(p.clone());
    }
    let rank = match (inp.rank, meta) {
        (Some(r), _) => r.triple(),
        (None, Some(m)) => RankSpec::Uniform(m.r).triple(),
        (None, None) => return Err(config_error("rank is required when the input has no meta.json")),
    };
    let mut inst = RpcaInstance::observed(at(&y_path, read_tensor(&y_path))?, rank)?;
    if let Some(p) = xstar_path {
        let x = at(&p, read_tensor(&p))?;
        x.check_same_dims(&inst.y)?;
        inst.xstar = Some(x);
    }
    if let Some(p) = sstar_path {
        let s = at(&p, read_tensor(&p))?;
        s.check_same_dims(&inst.y)?;
        inst.sstar = Some(s);
    }
    if let Some(p) = mask_path {
        inst = inst.with_mask(at(&p, read_mask(&p))?)?;
    }
    inst.meta = meta;
    Ok(inst)
}

/// Absolute thresholds for `y`. Raw values are re-scaled to `y` unless the
/// document was written for the same scale.
fn hyper_for(doc: &ParamsDocument, y: &trpca_core::tensor::Tensor3) -> Result<HyperParams, CliError> {
    let scale = ThresholdScale::of(y)?;
    if scale == doc.scale {
        Ok(doc.hyper())
    } else {
        info!("re-scaling thresholds from s0 = {} to s0 = {}", doc.scale.s0, scale.s0);
        Ok(activate(&doc.raw, &scale))
    }
}

fn warm_start(path: Option<&Path>) -> Result<RawParams, CliError> {
    match path {
        Some(p) => Ok(at(p, read_params(p))?.raw),
        None => Ok(RawParams::default_init()),
    }
}

// ---- datagen ----

#[derive(clap::Args, Debug, Serialize)]
pub struct DatagenFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// `entrywise` or `per-fiber`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub fiber_mode: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatagenConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub family: FamilyConfig,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            family: FamilyConfig::default(),
            seed: 0,
        }
    }
}

pub fn datagen(flags: &DatagenFlags) -> Result<(), CliError> {
    let cfg: DatagenConfig = resolve(flags.config.as_deref(), "datagen", flags)?;
    write_resolved(&cfg.out, &cfg)?;
    let f = &cfg.family;
    let inst = gen_instance(f.n, f.r, f.alpha, f.kappa, f.sparsity(), cfg.seed)?.with_support_mask()?;
    let out = &cfg.out;
    write_tensor(out.join("Y.tns3"), &inst.y)?;
    write_tensor(out.join("Xstar.tns3"), inst.xstar.as_ref().expect("generated"))?;
    write_tensor(out.join("Sstar.tns3"), inst.sstar.as_ref().expect("generated"))?;
    write_tensor(out.join("mask.tns3"), inst.mask.as_ref().expect("derived"))?;
    let meta = inst.meta.expect("generated");
    let mut text = serde_json::to_string_pretty(&meta).map_err(Error::from)?;
    text.push('\n');
    fs::write(out.join("meta.json"), text)?;
    println!("wrote instance n={} r={} alpha={} theta={:e} to {}", meta.n, meta.r, meta.alpha, meta.theta, out.display());
    Ok(())
}

// ---- solve ----

#[derive(clap::Args, Debug, Serialize)]
pub struct SolveFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `datagen` directory or TNS3 observation.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub xstar: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// `r` or `r1,r2,r3`.
    #[arg(long, value_parser = parse_rank)]
    pub rank: Option<RankSpec>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Hyperparameter JSON as written by train, finetune or tune-baseline.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub zeta0: Option<f64>,
    #[arg(long)]
    pub zeta1: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Pin modes whose rank equals their dimension.
    #[arg(long)]
    pub skip_full_rank_modes: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolveConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub input: InputConfig,
    pub iterations: usize,
    pub params: Option<PathBuf>,
    pub zeta0: Option<f64>,
    pub zeta1: Option<f64>,
    pub rho: Option<f64>,
    pub eta: Option<f64>,
    pub skip_full_rank_modes: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            input: InputConfig::default(),
            iterations: 100,
            params: None,
            zeta0: None,
            zeta1: None,
            rho: None,
            eta: None,
            skip_full_rank_modes: false,
        }
    }
}

pub fn solve(flags: &SolveFlags) -> Result<(), CliError> {
    let cfg: SolveConfig = resolve(flags.config.as_deref(), "solve", flags)?;
    write_resolved(&cfg.out, &cfg)?;
    let inst = load_instance(&cfg.input)?;
    let explicit = [cfg.zeta0, cfg.zeta1, cfg.rho, cfg.eta];
    let h = match (&cfg.params, explicit) {
        (Some(_), e) if e.iter().any(Option::is_some) => {
            return Err(config_error("give either params or zeta0/zeta1/rho/eta, not both"))
        }
        (Some(p), _) => hyper_for(&at(p, read_params(p))?, &inst.y)?,
        (None, [Some(z0), Some(z1), Some(rho), Some(eta)]) => HyperParams::new(z0, z1, rho, eta)?,
        (None, [None, None, None, None]) => activate(&RawParams::default_init(), &ThresholdScale::of(&inst.y)?),
        _ => return Err(config_error("zeta0, zeta1, rho and eta must be given together")),
    };
    let scfg = SolverConfig::new(inst.rank, cfg.iterations).with_skipping(cfg.skip_full_rank_modes);
    let trace = match solver::solve(&inst.y, &scfg, &h, inst.xstar.as_ref()) {
        Ok(t) => t,
        Err(e) => {
            write_trace(cfg.out.join("trace.csv"), &e.records)?;
            return Err(e.error.into());
        }
    };
    write_trace(cfg.out.join("trace.csv"), &trace.records)?;
    let x = trace.factors.reconstruct()?;
    write_tensor(cfg.out.join("X.tns3"), &x)?;
    write_tensor(cfg.out.join("S.tns3"), &trace.sparse)?;
    let last = trace.final_record();
    match &inst.xstar {
        Some(xs) => println!("loss_ssl {:e}  relative error {:e}", last.loss_ssl, relative_error(xs, &trace.factors)?),
        None => println!("loss_ssl {:e}", last.loss_ssl),
    }
    Ok(())
}

// ---- train ----

#[derive(clap::Args, Debug, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub fiber_mode: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// `sl`, `ssl` or `sm`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// `central-diff` or `forward-dual`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on this many fixed instances instead of a fresh one per step.
    #[arg(long)]
    pub dataset_size: Option<usize>,
    /// Initial parameters (JSON); the default initialization otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainCmdConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub family: FamilyConfig,
    pub iterations: usize,
    pub loss: LossKind,
    #[serde(flatten)]
    pub train: TrainConfig,
    pub dataset_size: Option<usize>,
    pub init: Option<PathBuf>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            family: FamilyConfig::default(),
            iterations: 100,
            loss: LossKind::Sl,
            train: TrainConfig::supervised(),
            dataset_size: None,
            init: None,
        }
    }
}

pub fn train(flags: &TrainFlags) -> Result<(), CliError> {
    let cfg: TrainCmdConfig = resolve(flags.config.as_deref(), "train", flags)?;
    write_resolved(&cfg.out, &cfg)?;
    let family = cfg.family.family();
    let scfg = SolverConfig::new(trpca_core::tensor::RankTriple::uniform(family.r), cfg.iterations);
    let init = warm_start(cfg.init.as_deref())?;
    let sample = |i: u64| -> trpca_core::error::Result<RpcaInstance> {
        let inst = family.sample(derive_seed(cfg.train.seed, i))?;
        match cfg.loss {
            LossKind::Sm => inst.with_support_mask(),
            _ => Ok(inst),
        }
    };
    let outcome = match cfg.dataset_size {
        Some(0) => return Err(config_error("dataset_size must be positive")),
        Some(k) => {
            let data = (0..k as u64).map(sample).collect::<trpca_core::error::Result<Vec<_>>>()?;
            train_on(&data, &scfg, cfg.loss, &cfg.train, init)?
        }
        None => trpca_core::learner::train(|step| sample(step as u64), &scfg, cfg.loss, &cfg.train, init)?,
    };
    write_train_log(cfg.out.join("train_log.csv"), &outcome.log)?;
    // Raw parameters are shape-free; the absolute thresholds shown are for
    // the first training instance.
    let reference = sample(0)?;
    let doc = ParamsDocument::from_raw(outcome.raw, ThresholdScale::of(&reference.y)?)?;
    write_params(cfg.out.join("params.json"), &doc)?;
    println!(
        "best loss {:e} at step {} ({} solves, {} skipped steps)",
        outcome.best_loss, outcome.best_step, outcome.solves, outcome.skipped
    );
    Ok(())
}

// ---- finetune ----

#[derive(clap::Args, Debug, Serialize)]
pub struct FinetuneFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub xstar: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_parser = parse_rank)]
    pub rank: Option<RankSpec>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Warm-start parameters (JSON); the default initialization otherwise.
    #[arg(long)]
    pub warm: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub early_stop_tol: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinetuneCmdConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub input: InputConfig,
    pub iterations: usize,
    pub warm: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for FinetuneCmdConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            input: InputConfig::default(),
            iterations: 100,
            warm: None,
            train: TrainConfig::finetune(),
        }
    }
}

pub fn finetune(flags: &FinetuneFlags) -> Result<(), CliError> {
    let cfg: FinetuneCmdConfig = resolve(flags.config.as_deref(), "finetune", flags)?;
    write_resolved(&cfg.out, &cfg)?;
    let inst = load_instance(&cfg.input)?;
    let warm = warm_start(cfg.warm.as_deref())?;
    let scfg = SolverConfig::new(inst.rank, cfg.iterations);
    let out = trpca_core::learner::finetune(&inst, &scfg, &cfg.train, warm)?;
    write_train_log(cfg.out.join("finetune_log.csv"), &out.train.log)?;
    write_trace(cfg.out.join("trace.csv"), &out.trace.records)?;
    write_params(
        cfg.out.join("params.json"),
        &ParamsDocument::from_raw(out.raw, ThresholdScale::of(&inst.y)?)?,
    )?;
    let last = out.trace.final_record();
    let warm_text = out.warm_loss.map_or("diverged".to_string(), |l| format!("{l:e}"));
    print!("loss_ssl {warm_text} -> {:e}", last.loss_ssl);
    match last.rel_error {
        Some(e) => println!("  relative error {e:e}"),
        None => println!(),
    }
    Ok(())
}

// ---- tune-baseline ----

#[derive(clap::Args, Debug, Serialize)]
pub struct TuneFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub xstar: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, value_parser = parse_rank)]
    pub rank: Option<RankSpec>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Number of solver evaluations.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TuneCmdConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub input: InputConfig,
    pub iterations: usize,
    /// Bounds as `[lo, hi]`; threshold bounds are multiples of `ℓ∞(Y)`.
    #[serde(flatten)]
    pub space: SearchSpace,
    pub seed: u64,
}

impl Default for TuneCmdConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            input: InputConfig::default(),
            iterations: 100,
            space: SearchSpace::default(),
            seed: 0,
        }
    }
}

pub fn tune_baseline(flags: &TuneFlags) -> Result<(), CliError> {
    let cfg: TuneCmdConfig = resolve(flags.config.as_deref(), "tune-baseline", flags)?;
    write_resolved(&cfg.out, &cfg)?;
    let inst = load_instance(&cfg.input)?;
    let scfg = SolverConfig::new(inst.rank, cfg.iterations);
    let out = tune(&inst, &scfg, &cfg.space, cfg.seed)?;
    write_tune_log(cfg.out.join("tune_log.csv"), &out.log)?;
    write_params(
        cfg.out.join("params.json"),
        &ParamsDocument::from_hyper(&out.best, ThresholdScale::of(&inst.y)?)?,
    )?;
    println!("best loss_ssl {:e} after {} evaluations", out.best_loss, out.log.len());
    Ok(())
}

// ---- phase-grid ----

#[derive(clap::Args, Debug, Serialize)]
pub struct PhaseGridFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated corruption fractions.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// Comma-separated ranks.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// `baseline`, `supervised`, `supervised-finetune`, `ssl-only` or `fixed`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub per_fiber_mode: Option<usize>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub finetune_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// `central-diff` or `forward-dual`.
    #[arg(long)]
    pub gradient: Option<String>,
    #[arg(long)]
    pub baseline_budget: Option<usize>,
    /// Warm-start parameters (JSON), overriding `warm` in the config.
    #[arg(long)]
    pub warm_params: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PhaseGridConfig {
    pub out: PathBuf,
    pub warm_params: Option<PathBuf>,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

impl Default for PhaseGridConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            warm_params: None,
            spec: ExperimentSpec::default(),
        }
    }
}

pub fn phase_grid(flags: &PhaseGridFlags) -> Result<(), CliError> {
    let mut cfg: PhaseGridConfig = resolve(flags.config.as_deref(), "phase-grid", flags)?;
    if let Some(p) = &cfg.warm_params {
        cfg.spec.warm = Some(at(p, read_params(p))?.raw);
    }
    write_resolved(&cfg.out, &cfg)?;
    let report = experiment::phase_grid(&cfg.spec)?;
    write_grid_csv(cfg.out.join("grid.csv"), &report)?;
    write_heatmap_svg(cfg.out.join("heatmap.svg"), &report)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    fs::write(cfg.out.join("cells.json"), text)?;
    for c in &report.cells {
        println!("alpha {:<5} r {:<3} log10 mean error {:.3}", c.alpha, c.rank, c.log10_mean());
    }
    Ok(())
}

// ---- sensitivity ----

#[derive(clap::Args, Debug, Serialize)]
pub struct SensitivityFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Warm-start parameters (JSON).
    #[arg(long)]
    pub warm: Option<PathBuf>,
    /// Supervised steps on the family before fine-tuning; 0 uses the warm start as is.
    #[arg(long)]
    pub train_steps: Option<usize>,
    /// Fine-tuning steps per instance.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SensitivityCmdConfig {
    pub out: PathBuf,
    #[serde(flatten)]
    pub family: FamilyConfig,
    pub instances: usize,
    pub iterations: usize,
    pub warm: Option<PathBuf>,
    pub train_steps: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for SensitivityCmdConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            family: FamilyConfig::default(),
            instances: 20,
            iterations: 100,
            warm: None,
            train_steps: 0,
            train: TrainConfig::finetune(),
        }
    }
}

pub fn sensitivity(flags: &SensitivityFlags) -> Result<(), CliError> {
    let cfg: SensitivityCmdConfig = resolve(flags.config.as_deref(), "sensitivity", flags)?;
    write_resolved(&cfg.out, &cfg)?;
    let family = cfg.family.family();
    let scfg = SolverConfig::new(trpca_core::tensor::RankTriple::uniform(family.r), cfg.iterations);
    let mut warm = warm_start(cfg.warm.as_deref())?;
    if cfg.train_steps > 0 {
        let tcfg = TrainConfig {
            steps: cfg.train_steps,
            learning_rate: cfg.train.learning_rate,
            method: cfg.train.method,
            seed: cfg.train.seed,
            ..TrainConfig::supervised()
        };
        warm = experiment::train_for_family(&family, &scfg, &tcfg, warm, cfg.train.seed)?;
    }
    let instances = (0..cfg.instances as u64)
        .map(|i| family.sample(derive_seed(cfg.train.seed, i)))
        .collect::<trpca_core::error::Result<Vec<_>>>()?;
    let report = experiment::sensitivity_report(&instances, &scfg, warm, &cfg.train)?;
    write_sensitivity_csv(cfg.out.join("sensitivity.csv"), &report)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    fs::write(cfg.out.join("sensitivity_rows.json"), text)?;
    let kept = report.kept().count();
    println!("{kept} of {} instances kept", instances.len());
    if let (Some(z1), Some(rho)) = (report.median_abs_change(1), report.median_abs_change(2)) {
        println!("median |change|: zeta1 {z1:.2}%  rho {rho:.2}%");
    }
    Ok(())
}

// ---- convert ----

#[derive(clap::Args, Debug, Serialize)]
pub struct ConvertFlags {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of binary PGM frames, stacked in file-name order.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConvertConfig {
    pub out: PathBuf,
    pub frames: Option<PathBuf>,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            frames: None,
        }
    }
}

pub fn convert(flags: &ConvertFlags) -> Result<(), CliError> {
    let cfg: ConvertConfig = resolve(flags.config.as_deref(), "convert", flags)?;
    let frames = cfg.frames.as_ref().ok_or_else(|| config_error("frames is required"))?;
    write_resolved(&cfg.out, &cfg)?;
    let t = at(frames, read_frame_dir(frames))?;
    write_tensor(cfg.out.join("Y.tns3"), &t)?;
    let (h, w, k) = t.dims();
    println!("wrote {h} x {w} x {k} tensor to {}", cfg.out.join("Y.tns3").display());
    Ok(())
}
