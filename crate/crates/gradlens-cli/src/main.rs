//! Command-line front end: gradient checking, component sweeps, ratio-bound
//! verification, and toy training, all file-based and reproducible.
//!
//! Exit codes: 0 on success, 1 when an assertion or tolerance fails
//! (gradient mismatch, bound mismatch, training divergence), 2 on usage or
//! config errors. `GRADLENS_THREADS` caps worker threads.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gradlens::embeddings::EmbeddingBatch;
use gradlens::lemma;
use gradlens::losses::{LossKind, LossParams};
use gradlens::paradigm;
use gradlens::rng::Rng;
use gradlens::simulator::{self, SweepProtocol};
use gradlens::trainer::{self, ConjectureInputs, TrainError, TrainerConfig};
use gradlens_cli::io;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gradlens", version, about = "Gradient-component analyses for sentence-representation losses")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Monte-Carlo component sweeps over angle-space distributions.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Verify the minimum-ratio bound or histogram it over embeddings.
    #[command(subcommand)]
    Lemma(LemmaCmd),
    /// Train the toy encoder, optionally sweeping one component.
    Train(TrainArgs),
}

#[derive(Args, Clone, Copy, Default)]
struct ParamFlags {
    /// Temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// ArcCon angular margin (radians).
    #[arg(long)]
    u: Option<f64>,
    /// Indicator margin.
    #[arg(long)]
    m: Option<f64>,
    /// Static ratio.
    #[arg(long)]
    r: Option<f64>,
    /// Uniformity coupling.
    #[arg(long)]
    nu_u: Option<f64>,
    /// Barlow coupling.
    #[arg(long)]
    nu_b: Option<f64>,
    /// First VICReg coupling.
    #[arg(long)]
    nu_v1: Option<f64>,
    /// Second VICReg coupling.
    #[arg(long)]
    nu_v2: Option<f64>,
}

impl ParamFlags {
    fn apply(&self, mut p: LossParams) -> LossParams {
        if let Some(v) = self.tau {
            p.tau = v;
        }
        if let Some(v) = self.u {
            p.u = v;
        }
        if let Some(v) = self.m {
            p.m = v;
        }
        if let Some(v) = self.r {
            p.r = v;
        }
        if let Some(v) = self.nu_u {
            p.nu_u = v;
        }
        if let Some(v) = self.nu_b {
            p.nu_b = v;
        }
        if let Some(v) = self.nu_v1 {
            p.nu_v1 = v;
        }
        if let Some(v) = self.nu_v2 {
            p.nu_v2 = v;
        }
        p
    }
}

fn parse_kind(s: &str) -> Result<LossKind, String> {
    LossKind::parse(s).ok_or_else(|| {
        format!(
            "unknown loss kind '{s}' (expected one of: {})",
            LossKind::ALL.map(|k| k.name()).join(", ")
        )
    })
}

#[derive(Args)]
struct GradcheckArgs {
    /// Loss kind name, or `all`.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long)]
    seed: u64,
    /// Max relative error allowed (tangent-projected).
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[command(flatten)]
    params: ParamFlags,
    /// Write the JSON report here (stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimulateCmd {
    /// Mean gradient-dissipation heatmap.
    Gd(SimGridArgs),
    /// Hardest-negative weight-fraction curves.
    Weight(SimWeightArgs),
    /// Mean dynamic-ratio heatmap (ArcCon or MET).
    Ratio(SimGridArgs),
}

#[derive(Args)]
struct SimGridArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: LossKind,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 1000)]
    batches: usize,
    #[arg(long, default_value_t = 127)]
    negatives: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma_pos: f64,
    #[arg(long, default_value_t = 0.10)]
    sigma_neg: f64,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    params: ParamFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimWeightArgs {
    #[arg(long, value_parser = parse_kind)]
    kind: LossKind,
    /// Comma-separated temperature list.
    #[arg(long, value_delimiter = ',', required = true)]
    taus: Vec<f64>,
    /// Fixed positive-angle mean (radians).
    #[arg(long, default_value_t = PI / 6.0)]
    mu_pos: f64,
    #[arg(long, default_value_t = 100)]
    grid: usize,
    #[arg(long, default_value_t = 1000)]
    batches: usize,
    #[arg(long, default_value_t = 127)]
    negatives: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma_pos: f64,
    #[arg(long, default_value_t = 0.10)]
    sigma_neg: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum LemmaCmd {
    /// Sweep random feasible configs comparing the closed form against the
    /// bisection oracle.
    Verify(LemmaVerifyArgs),
    /// Histogram the minimum ratio over a saved embedding file.
    Distribution(LemmaDistArgs),
}

#[derive(Args)]
struct LemmaVerifyArgs {
    #[arg(long, default_value_t = 10000)]
    configs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LemmaDistArgs {
    /// GLNS1 embedding dump.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Histogram range as `lo,hi` (data range otherwise).
    #[arg(long, value_delimiter = ',', num_args = 2)]
    range: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML trainer config; flags override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Sweep one component: `gd:0.3,0.6,1.0`, `weight:0.05,3.0`, or
    /// `ratio:0.5,1.0,2.0`.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long, value_parser = parse_kind)]
    loss: Option<LossKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    n_items: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[command(flatten)]
    params: ParamFlags,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Also dump the final holdout embeddings (GLNS1).
    #[arg(long)]
    dump_embs: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: C,
    outputs: Vec<String>,
}

fn write_manifest<C: Serialize>(
    path: &Path,
    command: &str,
    seed: Option<u64>,
    config: C,
    outputs: &[&Path],
) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        outputs: outputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    };
    io::atomic_write(path, &io::json_bytes(&manifest)?)
}

fn manifest_path(primary: &Path) -> PathBuf {
    let stem = primary
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run");
    primary.with_file_name(format!("{stem}.manifest.json"))
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("GRADLENS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Gradcheck(args) => gradcheck(args),
        Cmd::Simulate(SimulateCmd::Gd(args)) => simulate_grid(args, false),
        Cmd::Simulate(SimulateCmd::Ratio(args)) => simulate_grid(args, true),
        Cmd::Simulate(SimulateCmd::Weight(args)) => simulate_weight(args),
        Cmd::Lemma(LemmaCmd::Verify(args)) => lemma_verify(args),
        Cmd::Lemma(LemmaCmd::Distribution(args)) => lemma_distribution(args),
        Cmd::Train(args) => train_cmd(args),
    }
}

#[derive(Serialize)]
struct GradcheckOutput {
    tol: f64,
    pass: bool,
    kinds: BTreeMap<String, paradigm::GradCheckReport>,
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let kinds: Vec<LossKind> = if args.kind == "all" {
        LossKind::ALL.to_vec()
    } else {
        vec![parse_kind(&args.kind).map_err(|e| anyhow!(e))?]
    };
    let params = args.params.apply(LossParams::default());
    let mut reports = BTreeMap::new();
    let mut pass = true;
    for kind in kinds {
        let report = paradigm::check(kind, args.trials, args.n, args.d, &params, args.seed)?;
        pass &= report.max_rel_error < args.tol;
        reports.insert(kind.name().to_string(), report);
    }
    let output = GradcheckOutput {
        tol: args.tol,
        pass,
        kinds: reports,
    };
    let bytes = io::json_bytes(&output)?;
    match &args.out {
        Some(path) => {
            io::atomic_write(path, &bytes)?;
            write_manifest(
                &manifest_path(path),
                "gradcheck",
                Some(args.seed),
                serde_json::json!({
                    "kind": args.kind, "trials": args.trials, "n": args.n,
                    "d": args.d, "tol": args.tol, "params": params,
                }),
                &[path],
            )?;
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn simulate_grid(args: SimGridArgs, ratio: bool) -> Result<ExitCode> {
    let proto = SweepProtocol {
        n_grid: args.grid,
        n_batches: args.batches,
        n_negatives: args.negatives,
        sigma_pos: args.sigma_pos,
        sigma_neg: args.sigma_neg,
        seed: args.seed,
    };
    let params = args.params.apply(LossParams::default());
    let grid = if ratio {
        simulator::ratio_heatmap(args.kind, &proto, &params)?
    } else {
        simulator::gd_heatmap(args.kind, &proto, &params)?
    };
    io::atomic_write(&args.out, io::grid_csv(&grid).as_bytes())?;
    write_manifest(
        &manifest_path(&args.out),
        if ratio { "simulate ratio" } else { "simulate gd" },
        Some(args.seed),
        serde_json::json!({ "kind": args.kind.name(), "protocol": proto, "params": params }),
        &[&args.out],
    )?;
    Ok(ExitCode::SUCCESS)
}

fn simulate_weight(args: SimWeightArgs) -> Result<ExitCode> {
    let proto = SweepProtocol {
        n_grid: args.grid,
        n_batches: args.batches,
        n_negatives: args.negatives,
        sigma_pos: args.sigma_pos,
        sigma_neg: args.sigma_neg,
        seed: args.seed,
    };
    let curves = simulator::weight_fraction_curve(args.kind, args.mu_pos, &args.taus, &proto)?;
    io::atomic_write(&args.out, io::curves_csv(&curves).as_bytes())?;
    write_manifest(
        &manifest_path(&args.out),
        "simulate weight",
        Some(args.seed),
        serde_json::json!({
            "kind": args.kind.name(), "taus": args.taus, "mu_pos": args.mu_pos,
            "protocol": proto,
        }),
        &[&args.out],
    )?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct LemmaVerifyOutput {
    configs: usize,
    tol: f64,
    max_abs_diff: f64,
    mismatches: usize,
    infeasible_rejected: usize,
    pass: bool,
}

fn lemma_verify(args: LemmaVerifyArgs) -> Result<ExitCode> {
    if args.configs == 0 {
        bail!("--configs must be >= 1");
    }
    let mut rng = Rng::new(args.seed);
    let lambdas = [0.1, 0.5, 1.0];
    let mut max_abs_diff: f64 = 0.0;
    let mut mismatches = 0usize;
    for _ in 0..args.configs {
        let cfg = lemma::random_feasible_config(&mut rng, &lambdas);
        let closed = lemma::r_min_closed_form(&cfg)?;
        let oracle = lemma::r_min_oracle(&cfg, 1e-9)?;
        let diff = (closed - oracle).abs();
        max_abs_diff = max_abs_diff.max(diff);
        if diff > args.tol {
            mismatches += 1;
        }
    }
    let output = LemmaVerifyOutput {
        configs: args.configs,
        tol: args.tol,
        max_abs_diff,
        mismatches,
        infeasible_rejected: 0,
        pass: mismatches == 0,
    };
    let bytes = io::json_bytes(&output)?;
    match &args.out {
        Some(path) => {
            io::atomic_write(path, &bytes)?;
            write_manifest(
                &manifest_path(path),
                "lemma verify",
                Some(args.seed),
                serde_json::json!({ "configs": args.configs, "tol": args.tol }),
                &[path],
            )?;
        }
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(if output.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn lemma_distribution(args: LemmaDistArgs) -> Result<ExitCode> {
    let batch = io::read_embs(&args.embeddings)?;
    let range = match &args.range {
        Some(v) => Some((v[0], v[1])),
        None => None,
    };
    let hist = lemma::min_ratio_distribution(&[batch], args.lambda, args.bins, range)?;
    io::atomic_write(&args.out, io::hist_csv(&hist).as_bytes())?;
    let sidecar = args.out.with_extension("json");
    io::atomic_write(
        &sidecar,
        &io::json_bytes(&serde_json::json!({
            "skipped": hist.skipped,
            "infeasible": hist.infeasible,
            "lambda": hist.lambda,
        }))?,
    )?;
    write_manifest(
        &manifest_path(&args.out),
        "lemma distribution",
        None,
        serde_json::json!({
            "embeddings": args.embeddings.display().to_string(),
            "lambda": args.lambda, "bins": args.bins, "range": args.range,
        }),
        &[&args.out, &sidecar],
    )?;
    Ok(ExitCode::SUCCESS)
}

enum AblateAxis {
    Gd,
    Weight,
    Ratio,
}

fn parse_ablate(spec: &str) -> Result<(AblateAxis, Vec<f64>)> {
    let (axis, values) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("--ablate expects `axis:v1,v2,...`"))?;
    let axis = match axis {
        "gd" => AblateAxis::Gd,
        "weight" => AblateAxis::Weight,
        "ratio" => AblateAxis::Ratio,
        other => bail!("unknown ablation axis '{other}' (gd, weight, ratio)"),
    };
    let values: Vec<f64> = values
        .split(',')
        .map(|v| v.parse::<f64>().context("parsing ablation value"))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("--ablate needs at least one value");
    }
    Ok((axis, values))
}

fn train_cmd(args: TrainArgs) -> Result<ExitCode> {
    let mut config: TrainerConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainerConfig::default(),
    };
    config.seed = args.seed;
    if let Some(v) = args.loss {
        config.loss = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    if let Some(v) = args.n_items {
        config.n_items = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.noise_sigma {
        config.noise_sigma = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    config.params = args.params.apply(config.params);
    config.validate()?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let run_variant = |config: &TrainerConfig, name: &str| -> Result<(PathBuf, trainer::TrainTrace, Option<Vec<EmbeddingBatch>>)> {
        match trainer::train(config) {
            Ok(outcome) => {
                let path = args.out_dir.join(format!("trace_{name}.csv"));
                io::atomic_write(&path, io::trace_csv(&outcome.trace).as_bytes())?;
                if matches!(config.loss, LossKind::Arc | LossKind::Met) {
                    let rpath = args.out_dir.join(format!("trace_{name}_ratios.csv"));
                    io::atomic_write(&rpath, io::ratio_trace_csv(&outcome.trace).as_bytes())?;
                }
                Ok((path, outcome.trace, Some(outcome.final_holdout)))
            }
            Err(TrainError::Diverged { step, trace }) => {
                let path = args.out_dir.join(format!("trace_{name}.csv"));
                io::atomic_write(&path, io::trace_csv(&trace).as_bytes())?;
                eprintln!("training diverged at step {step}; partial trace in {}", path.display());
                Err(anyhow!("diverged")).context("__diverged__")
            }
            Err(TrainError::Lib(e)) => Err(e.into()),
        }
    };

    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut exit = ExitCode::SUCCESS;
    match &args.ablate {
        None => {
            match run_variant(&config, "run") {
                Ok((path, _, holdout)) => {
                    outputs.push(path);
                    if let (Some(embs_path), Some(batches)) = (&args.dump_embs, holdout) {
                        dump_holdout(embs_path, &batches)?;
                        outputs.push(embs_path.clone());
                    }
                }
                Err(e) if e.to_string().contains("__diverged__") => exit = ExitCode::from(1),
                Err(e) => return Err(e),
            };
        }
        Some(spec) => {
            let (axis, values) = parse_ablate(spec)?;
            let mut inputs = ConjectureInputs::default();
            let mut diverged = false;
            for &v in &values {
                let mut variant = config.clone();
                let name = match axis {
                    AblateAxis::Gd => {
                        variant.params.m = v;
                        format!("gd_m{v}")
                    }
                    AblateAxis::Weight => {
                        variant.params.tau = v;
                        format!("weight_tau{v}")
                    }
                    AblateAxis::Ratio => {
                        variant.params.r = v;
                        format!("ratio_r{v}")
                    }
                };
                match run_variant(&variant, &name) {
                    Ok((path, trace, _)) => {
                        outputs.push(path);
                        match axis {
                            AblateAxis::Gd => inputs.gd_traces.push((v, config.seed, trace)),
                            AblateAxis::Weight => {
                                inputs.weight_traces.push((v, config.seed, trace))
                            }
                            AblateAxis::Ratio => inputs.ratio_traces.push((v, config.seed, trace)),
                        }
                    }
                    Err(e) if e.to_string().contains("__diverged__") => diverged = true,
                    Err(e) => return Err(e),
                }
            }
            if diverged {
                exit = ExitCode::from(1);
            } else {
                let report = trainer::evaluate_conjectures(&inputs)?;
                let rpath = args.out_dir.join("conjectures.json");
                io::atomic_write(&rpath, &io::json_bytes(&report)?)?;
                outputs.push(rpath);
            }
        }
    }

    let manifest = args.out_dir.join("manifest.json");
    write_manifest(
        &manifest,
        "train",
        Some(config.seed),
        serde_json::json!({ "config": config, "ablate": args.ablate }),
        &outputs.iter().map(|p| p.as_path()).collect::<Vec<_>>(),
    )?;
    Ok(exit)
}

fn dump_holdout(path: &Path, batches: &[EmbeddingBatch]) -> Result<()> {
    // concatenate the holdout batches into one dump
    let d = batches[0].d();
    let n: usize = batches.iter().map(|b| b.n()).sum();
    let mut anchors = gradlens::Matrix::zeros(n, d);
    let mut positives = gradlens::Matrix::zeros(n, d);
    let mut row = 0;
    for b in batches {
        for i in 0..b.n() {
            anchors.row_mut(row).copy_from_slice(b.anchor(i));
            positives.row_mut(row).copy_from_slice(b.positive(i));
            row += 1;
        }
    }
    let merged = EmbeddingBatch::new(anchors, positives)?;
    io::write_embs(path, &merged)
}
