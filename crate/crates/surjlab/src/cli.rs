//! Batch command line. Every subcommand reads its inputs up front, runs
//! to completion, and writes results to files; progress chatter goes to
//! stderr so stdout stays clean for the one-line summary. The process
//! exits 0 exactly when everything converged or certified, and still
//! writes the report when it did not, so partial results survive.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::blocks::{Activation, AttnTail, BlockTail, DiffMap, MlpParams, RetentionMode, Sequence};
use crate::degree::{brouwer_degree, DomainBox};
use crate::error::Error;
use crate::harness::{
    invert_diffusion, invert_preln_block, invert_retention_sequence, invert_transformer_sequence,
    attention_unreachable_witness, relu_mlp_unreachable_witness, run_verdict_battery, Witness,
};
use crate::io::{
    config_digest, generate_model, load_config, load_model, save_model, save_report,
    write_inversions_csv, DegreeRecord, ExperimentConfig, GenerateSpec, InversionRecord,
    ModelFile, ModelKind, ModelSpec, ReportBody, ReportFile, SolveSettings, TargetSpec, Task,
};
use crate::numerics::{det_sign, seeded_gaussian, seeded_gaussian_vector, Matrix, Seed, Vector};
use crate::solvers::{
    leaky_mlp_invert_exact, leaky_mlp_invert_homotopy, newton_invert, InversionResult, Method,
};
use crate::Result;

#[derive(Parser)]
#[command(name = "surjlab", version, about = "surjectivity probes for sequence-model layers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded random model file.
    Gen(GenArgs),
    /// Evaluate a model on inputs and write the outputs.
    Forward(RunArgs),
    /// Drive a model to targets and report per-target residuals.
    Invert(RunArgs),
    /// Run the per-architecture verdict battery.
    Battery(BatteryArgs),
    /// Hunt for a certified unreachable target.
    Witness(WitnessArgs),
    /// Degree fixtures with the determinant-sign cross-check.
    Degree(DegreeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// mlp | layernorm | attention | retention | tf_block | stack | diffusion
    kind: String,
    #[arg(long)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Hidden width of the mlp variants (kind-specific default).
    #[arg(long)]
    hidden: Option<usize>,
    /// Stack depth (default 2).
    #[arg(long)]
    blocks: Option<usize>,
    /// Euler steps of the diffusion sampler (default 10).
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file; required unless the config names or generates one.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON file with an array of input/target vectors.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Descent rate of the gradient stage on transformer paths.
    #[arg(long)]
    lr: Option<f64>,
    /// Descent steps per token before the Newton polish.
    #[arg(long)]
    steps: Option<usize>,
    /// Report destination (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also flatten per-target rows to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BatteryArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Comma-separated ambient dimensions.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    dims: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct WitnessArgs {
    /// Existing model file (mlp or attention); random relu nets when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instances to try before giving up.
    #[arg(long, default_value_t = 16)]
    trials: usize,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DegreeArgs {
    /// Ambient dimension of the piecewise-linear fixtures (1 or 2).
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random piecewise-linear instances.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Forward(a) => cmd_run(a, Task::Forward),
        Cmd::Invert(a) => cmd_run(a, Task::Invert),
        Cmd::Battery(a) => cmd_battery(a),
        Cmd::Witness(a) => cmd_witness(a),
        Cmd::Degree(a) => cmd_degree(a),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// SURJLAB_SEED wins over both the config file and the --seed flag.
fn effective_seed(flag: Option<u64>, config: u64) -> u64 {
    if let Ok(s) = std::env::var("SURJLAB_SEED") {
        if let Ok(v) = s.parse() {
            return v;
        }
        eprintln!("ignoring unparseable SURJLAB_SEED={s:?}");
    }
    flag.unwrap_or(config)
}

fn cmd_gen(a: GenArgs) -> Result<bool> {
    let kind: ModelKind = a.kind.parse()?;
    let spec = GenerateSpec {
        kind,
        dim: a.dims,
        seed: effective_seed(None, a.seed),
        hidden: a.hidden,
        blocks: a.blocks,
        steps: a.steps,
    };
    let file = generate_model(&spec)?;
    save_model(&a.out, &file)?;
    eprintln!("wrote {kind} model, dim {}, to {}", file.dim, a.out.display());
    Ok(true)
}

/// Merge config file and flags into one effective config. Flags win.
fn effective_config(a: &RunArgs, task: Task) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let (mut cfg, base) = match &a.config {
        Some(p) => {
            let dir = p.parent().map(Path::to_path_buf);
            (load_config(p)?, dir)
        }
        None => (ExperimentConfig::new(task), None),
    };
    cfg.task = task;
    if let Some(m) = &a.model {
        cfg.model = Some(m.display().to_string());
        cfg.generate = None;
    }
    if let Some(t) = &a.targets {
        cfg.target = Some(TargetSpec::File { path: t.display().to_string() });
    }
    cfg.seed = effective_seed(a.seed, cfg.seed);
    if let Some(tol) = a.tol {
        cfg.solve.tol = tol;
    }
    if let Some(lr) = a.lr {
        cfg.solve.lr = lr;
    }
    if let Some(steps) = a.steps {
        cfg.solve.steps = steps;
    }
    if let Some(out) = &a.out {
        cfg.out = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn cmd_run(a: RunArgs, task: Task) -> Result<bool> {
    // a model path given on the command line resolves from the working
    // directory, not from the config file's directory
    let flag_model = a.model.is_some();
    let (cfg, base) = effective_config(&a, task)?;
    let base = if flag_model { None } else { base.as_deref().map(Path::to_path_buf) };
    let model = cfg.resolve_model(base.as_deref())?;
    let targets = resolve_config_targets(&cfg, &model, base.as_deref())?;
    eprintln!(
        "{} {} model, dim {}, {} vectors",
        if task == Task::Forward { "evaluating" } else { "inverting" },
        model.model.kind(),
        model.dim,
        targets.len()
    );
    let body = match task {
        Task::Forward => ReportBody::Forward { outputs: forward_model(&model, &targets)? },
        _ => {
            let results = invert_model(&model, &targets, &cfg.solve, cfg.seed)?;
            let records: Vec<InversionRecord> =
                results.iter().enumerate().map(|(i, r)| InversionRecord::new(i, r)).collect();
            if let Some(csv) = &a.csv {
                write_inversions_csv(csv, &records)?;
            }
            ReportBody::Inversions { results: records }
        }
    };
    let report = ReportFile::new(task, cfg.seed, config_digest(&cfg), body);
    finish(&report, cfg.out.as_deref().map(Path::new))
}

fn resolve_config_targets(
    cfg: &ExperimentConfig,
    model: &ModelFile,
    base: Option<&Path>,
) -> Result<Vec<Vector>> {
    let spec = cfg
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("no targets: give --targets or a config".into()))?;
    let targets = crate::io::resolve_targets(spec, model.dim, cfg.seed, base)?;
    if targets.is_empty() {
        return Err(Error::InvalidInput("the target list is empty".into()));
    }
    Ok(targets)
}

/// Print the summary line, write the report when a path was given, and
/// translate "did everything succeed" into the exit code.
fn finish(report: &ReportFile, out: Option<&Path>) -> Result<bool> {
    let ok = report.all_good();
    if let Some(path) = out {
        save_report(path, report)?;
        eprintln!("report written to {}", path.display());
    }
    println!("{}: {}", task_name(report.task), if ok { "ok" } else { "FAILED" });
    Ok(ok)
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::Forward => "forward",
        Task::Invert => "invert",
        Task::Battery => "battery",
        Task::Witness => "witness",
        Task::Degree => "degree",
        Task::Diffusion => "diffusion",
        Task::Policy => "policy",
    }
}

fn forward_model(model: &ModelFile, inputs: &[Vector]) -> Result<Vec<Vector>> {
    match &model.model {
        ModelSpec::Mlp { params } => Ok(inputs.iter().map(|x| params.forward(x)).collect()),
        ModelSpec::Layernorm { params } => inputs.iter().map(|x| params.forward(x)).collect(),
        ModelSpec::Attention { params } => {
            // causal self-attention over the input list
            let mut out = Vec::with_capacity(inputs.len());
            for i in 0..inputs.len() {
                let tail = AttnTail::new(params.clone(), inputs[..i].to_vec())?;
                out.push(tail.eval(&inputs[i])?);
            }
            Ok(out)
        }
        ModelSpec::Retention { params } => {
            let seq = Sequence::new(inputs.to_vec())?;
            Ok(params.forward(&seq, RetentionMode::Recurrent)?.items().to_vec())
        }
        ModelSpec::TfBlock { params } => {
            let seq = Sequence::new(inputs.to_vec())?;
            Ok(params.forward(&seq)?.items().to_vec())
        }
        ModelSpec::Stack { params } => {
            let seq = Sequence::new(inputs.to_vec())?;
            Ok(params.forward(&seq)?.items().to_vec())
        }
        ModelSpec::Diffusion { params } => {
            inputs.iter().map(|noise| params.generate(noise)).collect()
        }
    }
}

/// One failed target must not sink the batch: solver giving-up becomes
/// a non-converged row in the report (and a nonzero exit), while a
/// malformed batch (bad dimensions, unusable model) still aborts.
fn per_target(dim: usize, method: Method, r: Result<InversionResult>) -> Result<InversionResult> {
    match r {
        Ok(r) => Ok(r),
        Err(e @ Error::DimensionMismatch { .. }) | Err(e @ Error::InvalidInput(_)) => Err(e),
        Err(_) => Ok(InversionResult {
            x: Vector::zeros(dim),
            residual: f64::INFINITY,
            iters: 0,
            method,
            converged: false,
            ball_radius: None,
        }),
    }
}

fn invert_model(
    model: &ModelFile,
    targets: &[Vector],
    s: &SolveSettings,
    seed: u64,
) -> Result<Vec<InversionResult>> {
    let cfg = s.solve_config(seed);
    let d = model.dim;
    match &model.model {
        ModelSpec::Mlp { params } => {
            let square = params
                .layers
                .iter()
                .all(|l| l.weight.rows() == l.weight.cols());
            let leaky = params
                .layers
                .iter()
                .all(|l| matches!(l.activation, Activation::LeakyRelu { .. } | Activation::Identity));
            if !leaky {
                return Err(Error::InvalidInput(
                    "mlp inversion covers leaky-rectifier nets; wrap others in a pre-norm block"
                        .into(),
                ));
            }
            let hcfg = s.homotopy_config();
            targets
                .iter()
                .map(|y| {
                    let r = if square {
                        leaky_mlp_invert_exact(params, y, s.tol)
                    } else {
                        leaky_mlp_invert_homotopy(params, y, &hcfg)
                    };
                    per_target(d, Method::Homotopy, r)
                })
                .collect()
        }
        ModelSpec::Layernorm { .. } => Err(Error::InvalidInput(
            "layer norm alone maps onto a sphere, not the whole space; invert it inside a block"
                .into(),
        )),
        ModelSpec::Attention { params } => {
            // single-token read: attention over an empty prefix is Va
            // plus nothing, but keep the general tail so a solved token
            // really replays through the layer
            targets
                .iter()
                .map(|y| {
                    let tail = AttnTail::new(params.clone(), Vec::new())?;
                    let t2 = tail.clone();
                    let r = newton_invert(
                        move |x| tail.eval(x),
                        move |x| t2.jacobian(x),
                        y,
                        &Vector::zeros(params.dim()),
                        s.tol,
                        cfg.max_iters,
                    );
                    per_target(d, Method::Newton, r)
                })
                .collect()
        }
        ModelSpec::Retention { params } => {
            let seq = Sequence::new(targets.to_vec())?;
            let (_, results) = invert_retention_sequence(params, &seq, &s.homotopy_config())?;
            Ok(results)
        }
        ModelSpec::TfBlock { params } => targets
            .iter()
            .map(|y| {
                let tail = BlockTail::new(params.clone(), &[])?;
                per_target(d, Method::FixedPoint, invert_preln_block(&tail, y, &cfg))
            })
            .collect(),
        ModelSpec::Stack { params } => {
            let seq = Sequence::new(targets.to_vec())?;
            let (_, results) =
                invert_transformer_sequence(params, &seq, &s.gd_config(), &cfg)?;
            Ok(results)
        }
        ModelSpec::Diffusion { params } => targets
            .iter()
            .map(|y| {
                let r = invert_diffusion(params, y, &cfg).map(|inv| {
                    let iters = inv.per_step.iter().map(|r| r.iters).sum();
                    InversionResult {
                        x: inv.noise.unwrap_or_else(|| Vector::zeros(params.dim())),
                        residual: inv.replay_residual.unwrap_or(f64::INFINITY),
                        iters,
                        method: Method::FixedPoint,
                        converged: inv.converged,
                        ball_radius: None,
                    }
                });
                per_target(d, Method::FixedPoint, r)
            })
            .collect(),
    }
}

fn cmd_battery(a: BatteryArgs) -> Result<bool> {
    let seed = effective_seed(None, a.seed);
    if a.dims.is_empty() || a.dims.contains(&0) {
        return Err(Error::InvalidInput("battery dims must be positive".into()));
    }
    if a.trials == 0 {
        return Err(Error::InvalidInput("battery needs at least one trial".into()));
    }
    eprintln!("battery: seed {seed}, dims {:?}, {} trials per row", a.dims, a.trials);
    let verdicts = run_verdict_battery(Seed(seed), &a.dims, a.trials);
    for row in &verdicts.rows {
        eprintln!("  {:24} {:?}", row.architecture, row.verdict);
    }
    let mut cfg = ExperimentConfig::new(Task::Battery);
    cfg.seed = seed;
    cfg.solve.trials = a.trials;
    let report = ReportFile::new(
        Task::Battery,
        seed,
        config_digest(&cfg),
        ReportBody::Battery { report: verdicts },
    );
    finish(&report, a.out.as_deref())
}

fn cmd_witness(a: WitnessArgs) -> Result<bool> {
    let seed = effective_seed(None, a.seed);
    let tol = a.tol.unwrap_or(1e-8);
    let mut cfg = ExperimentConfig::new(Task::Witness);
    cfg.seed = seed;
    cfg.solve.tol = tol;
    cfg.solve.trials = a.trials;
    cfg.model = a.model.as_ref().map(|p| p.display().to_string());

    let (witness, attempts) = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            let w = match &model.model {
                ModelSpec::Mlp { params } => relu_mlp_unreachable_witness(params),
                ModelSpec::Attention { params } => {
                    attention_unreachable_witness(params, &cfg.solve.solve_config(seed))
                }
                other => Err(Error::InvalidInput(format!(
                    "witness hunting covers mlp and attention models, not {}",
                    other.kind()
                ))),
            };
            (non_witness_to_none(w)?, 1)
        }
        None => {
            // random relu nets with one extra hidden unit; roughly a
            // quarter of draws admit the certificate, so keep trying
            let mut found = None;
            let mut attempts = 0;
            for k in 0..a.trials as u64 {
                attempts += 1;
                let net = random_relu_net(a.dims, a.dims + 1, Seed(seed).stream(k));
                match non_witness_to_none(relu_mlp_unreachable_witness(&net))? {
                    Some(w) => {
                        found = Some(w);
                        break;
                    }
                    None => continue,
                }
            }
            (found, attempts)
        }
    };
    match &witness {
        Some(w) => eprintln!("witness after {attempts} instance(s): {:?} target", w.kind),
        None => eprintln!("no certificate in {attempts} instance(s)"),
    }
    let report = ReportFile::new(
        Task::Witness,
        seed,
        config_digest(&cfg),
        ReportBody::Witness { witness, attempts },
    );
    finish(&report, a.out.as_deref())
}

/// "This instance has no witness" is a finding, not a failure.
fn non_witness_to_none(w: Result<Witness>) -> Result<Option<Witness>> {
    match w {
        Ok(w) => Ok(Some(w)),
        Err(Error::WitnessNotFound) | Err(Error::NoDeadDirection) => Ok(None),
        Err(e) => Err(e),
    }
}

fn random_relu_net(d: usize, d1: usize, seed: Seed) -> MlpParams {
    MlpParams::two_layer(
        seeded_gaussian(d1, d, seed.stream(0)),
        seeded_gaussian_vector(d1, seed.stream(1)),
        Activation::Relu,
        seeded_gaussian(d, d1, seed.stream(2)),
        seeded_gaussian_vector(d, seed.stream(3)),
    )
    .expect("generated relu net shapes are consistent")
}

fn cmd_degree(a: DegreeArgs) -> Result<bool> {
    let seed = effective_seed(None, a.seed);
    if !(1..=2).contains(&a.dims) {
        return Err(Error::InvalidInput(
            "the piecewise-linear degree fixtures run in dimension 1 or 2".into(),
        ));
    }
    let mut cfg = ExperimentConfig::new(Task::Degree);
    cfg.seed = seed;
    cfg.solve.trials = a.trials;
    let mut rows: Vec<DegreeRecord> = Vec::new();

    // scalar anchors: an odd power is onto (degree 1), an even one is not
    let cube_box = DomainBox::centered_cube(1, 2.0)?;
    let cube = brouwer_degree(
        |x: &Vector| Ok(Vector::new(vec![x[0] * x[0] * x[0]])),
        |x: &Vector| Ok(Matrix::from_rows(vec![vec![3.0 * x[0] * x[0]]])),
        &cube_box,
        &Vector::new(vec![1.0]),
        8,
    )?;
    rows.push(DegreeRecord { fixture: "cube".into(), expected: 1, result: cube });
    let square = brouwer_degree(
        |x: &Vector| Ok(Vector::new(vec![x[0] * x[0]])),
        |x: &Vector| Ok(Matrix::from_rows(vec![vec![2.0 * x[0]]])),
        &cube_box,
        &Vector::new(vec![1.0]),
        8,
    )?;
    rows.push(DegreeRecord { fixture: "square".into(), expected: 0, result: square });

    // random piecewise-linear bijections: the degree the root count
    // produces must match the determinant sign of the weight product
    for t in 0..a.trials as u64 {
        let d = a.dims;
        let s = Seed(seed).stream(0xDE6 + t);
        let net = MlpParams::two_layer(
            seeded_gaussian(d, d, s.stream(0)),
            Vector::zeros(d),
            Activation::LeakyRelu { alpha: 0.4 },
            seeded_gaussian(d, d, s.stream(1)),
            Vector::zeros(d),
        )?;
        let expected = det_sign(&net.layers[1].weight.matmul(&net.layers[0].weight)) as i64;
        let y = Vector::from_fn(d, |i| 0.3 - 0.1 * i as f64);
        // size the box around the known root so a stiff draw cannot
        // push it outside
        let exact = leaky_mlp_invert_exact(&net, &y, 1e-9)?;
        let domain = DomainBox::centered_cube(d, 3.0 * exact.x.norm_inf() + 2.0)?;
        let r = brouwer_degree(
            |x| Ok(net.forward(x)),
            |x| Ok(net.jacobian(x)),
            &domain,
            &y,
            10,
        )?;
        rows.push(DegreeRecord { fixture: format!("leaky_{t}"), expected, result: r });
    }
    for row in &rows {
        eprintln!(
            "  {:10} degree {} (expected {}), {} root(s)",
            row.fixture,
            row.result.degree,
            row.expected,
            row.result.roots.len()
        );
    }
    let report = ReportFile::new(
        Task::Degree,
        seed,
        config_digest(&cfg),
        ReportBody::Degree { results: rows },
    );
    finish(&report, a.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_override_prefers_env_then_flag_then_config() {
        // the env var is process-global, so exercise only the pure part
        std::env::remove_var("SURJLAB_SEED");
        assert_eq!(effective_seed(Some(5), 9), 5);
        assert_eq!(effective_seed(None, 9), 9);
    }

    #[test]
    fn cli_parses_the_documented_flags() {
        let cli = Cli::try_parse_from([
            "surjlab", "invert", "--model", "m.json", "--targets", "t.json", "--seed", "3",
            "--tol", "1e-6", "--lr", "0.2", "--steps", "50", "--out", "r.json",
        ])
        .unwrap();
        let Cmd::Invert(a) = cli.cmd else { panic!("wrong subcommand") };
        assert_eq!(a.seed, Some(3));
        assert_eq!(a.tol, Some(1e-6));
        assert_eq!(a.lr, Some(0.2));
        assert_eq!(a.steps, Some(50));

        let cli =
            Cli::try_parse_from(["surjlab", "battery", "--dims", "2,4", "--trials", "5"]).unwrap();
        let Cmd::Battery(a) = cli.cmd else { panic!("wrong subcommand") };
        assert_eq!(a.dims, vec![2, 4]);
        assert_eq!(a.trials, 5);

        let cli = Cli::try_parse_from(["surjlab", "gen", "stack", "--dims", "16", "--blocks", "2",
            "--out", "m.json"])
        .unwrap();
        let Cmd::Gen(a) = cli.cmd else { panic!("wrong subcommand") };
        assert_eq!(a.dims, 16);
        assert_eq!(a.blocks, Some(2));
    }
}
