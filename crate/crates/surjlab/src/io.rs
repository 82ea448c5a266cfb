//! Model, config, and report files. JSON throughout, with two hard
//! guarantees: a saved model reloads with every float bit-exact (the
//! writer emits the shortest decimal that round-trips), and a report
//! regenerated from the same model, config, and seed is byte-identical.
//! Wall-clock timings are therefore opt-in; they never appear unless
//! asked for.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blocks::{
    Activation, AttentionParams, Gating, LayerNormParams, MlpParams, RetentionParams, StackParams,
    TransformerBlockParams,
};
use crate::degree::DegreeResult;
use crate::error::Error;
use crate::harness::{DiffusionSchedule, VelocityNet, VerdictReport, Witness};
use crate::numerics::{seeded_gaussian, seeded_gaussian_vector, Seed, Vector};
use crate::solvers::{GdConfig, HomotopyConfig, InversionResult, Method, SolveConfig};
use crate::Result;

/// Bumped on any change to the on-disk layout. Loading rejects other
/// versions outright rather than guessing at field meanings.
pub const SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// model files

/// On-disk model. The `dim` field is redundant on purpose: load()
/// cross-checks it against the shapes actually found in `params`, so a
/// file edited by hand cannot smuggle in an inconsistency.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub dim: usize,
    #[serde(flatten)]
    pub model: ModelSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp { params: MlpParams },
    Layernorm { params: LayerNormParams },
    Attention { params: AttentionParams },
    Retention { params: RetentionParams },
    TfBlock { params: TransformerBlockParams },
    Stack { params: StackParams },
    Diffusion { params: DiffusionSchedule },
}

impl ModelSpec {
    /// Ambient dimension, read off the parameters themselves.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Mlp { params } => params.out_dim(),
            ModelSpec::Layernorm { params } => params.dim(),
            ModelSpec::Attention { params } => params.dim(),
            ModelSpec::Retention { params } => params.dim(),
            ModelSpec::TfBlock { params } => params.dim(),
            ModelSpec::Stack { params } => params.dim(),
            ModelSpec::Diffusion { params } => params.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp { params } => params.validate(),
            ModelSpec::Layernorm { params } => params.validate(),
            ModelSpec::Attention { params } => params.validate(),
            ModelSpec::Retention { params } => params.validate(),
            ModelSpec::TfBlock { params } => params.validate(),
            ModelSpec::Stack { params } => params.validate(),
            ModelSpec::Diffusion { params } => params.validate(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Mlp { .. } => ModelKind::Mlp,
            ModelSpec::Layernorm { .. } => ModelKind::Layernorm,
            ModelSpec::Attention { .. } => ModelKind::Attention,
            ModelSpec::Retention { .. } => ModelKind::Retention,
            ModelSpec::TfBlock { .. } => ModelKind::TfBlock,
            ModelSpec::Stack { .. } => ModelKind::Stack,
            ModelSpec::Diffusion { .. } => ModelKind::Diffusion,
        }
    }
}

impl ModelFile {
    pub fn new(model: ModelSpec) -> Self {
        ModelFile { schema_version: SCHEMA_VERSION, dim: model.dim(), model }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
                context: "model dimension must be positive",
            });
        }
        self.model.validate()?;
        if self.model.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                got: self.dim,
                context: "dim field disagrees with parameter shapes",
            });
        }
        Ok(())
    }
}

pub fn save_model(path: &Path, model: &ModelFile) -> Result<()> {
    model.validate()?;
    write_json(path, model)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, &e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    check_schema_version(&value)?;
    let model: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    model.validate()?;
    Ok(model)
}

/// Version gate shared by every loader: refuse anything but the current
/// stamp, naming the found version, so a future layout is never parsed
/// as if it were this one.
fn check_schema_version(value: &serde_json::Value) -> Result<()> {
    let v = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse("missing field `schema_version`".into()))?;
    if v != SCHEMA_VERSION as u64 {
        return Err(Error::UnsupportedSchema(v as u32));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// model generation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Layernorm,
    Attention,
    Retention,
    TfBlock,
    Stack,
    Diffusion,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Layernorm => "layernorm",
            ModelKind::Attention => "attention",
            ModelKind::Retention => "retention",
            ModelKind::TfBlock => "tf_block",
            ModelKind::Stack => "stack",
            ModelKind::Diffusion => "diffusion",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "layernorm" => Ok(ModelKind::Layernorm),
            "attention" => Ok(ModelKind::Attention),
            "retention" => Ok(ModelKind::Retention),
            "tf_block" => Ok(ModelKind::TfBlock),
            "stack" => Ok(ModelKind::Stack),
            "diffusion" => Ok(ModelKind::Diffusion),
            other => Err(Error::InvalidInput(format!(
                "unknown model kind {other:?}; expected one of mlp, layernorm, attention, \
                 retention, tf_block, stack, diffusion"
            ))),
        }
    }
}

/// Recipe for a seeded random instance. Two identical specs produce
/// byte-identical model files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenerateSpec {
    pub kind: ModelKind,
    pub dim: usize,
    pub seed: u64,
    /// Hidden width of the mlp variants; kind-specific default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// Stack depth; 2 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    /// Euler steps of the diffusion sampler; 10 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

/// Build a random instance. Weight matrices are seeded gaussians scaled
/// by 1/sqrt(fan-in) so deeper and wider instances stay in the regime
/// the inverters are tuned for; biases are unscaled gaussians; every
/// layer norm is written with gamma = 1, beta = 0 explicitly in the
/// file rather than implied.
pub fn generate_model(spec: &GenerateSpec) -> Result<ModelFile> {
    let d = spec.dim;
    if d == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
            context: "generation dimension must be positive",
        });
    }
    let seed = Seed(spec.seed);
    let model = match spec.kind {
        ModelKind::Mlp => {
            // square hidden layer by default: the leaky net stays a bijection
            let h = spec.hidden.unwrap_or(d);
            let mlp = MlpParams::two_layer(
                seeded_gaussian(h, d, seed.stream(0)).scaled(1.0 / (d as f64).sqrt()),
                seeded_gaussian_vector(h, seed.stream(1)),
                Activation::LeakyRelu { alpha: 0.3 },
                seeded_gaussian(d, h, seed.stream(2)).scaled(1.0 / (h as f64).sqrt()),
                seeded_gaussian_vector(d, seed.stream(3)),
            )?;
            ModelSpec::Mlp { params: mlp }
        }
        ModelKind::Layernorm => {
            ModelSpec::Layernorm { params: LayerNormParams::standard(d) }
        }
        ModelKind::Attention => {
            let s = 1.0 / (d as f64).sqrt();
            let params = AttentionParams::new(
                seeded_gaussian(d, d, seed.stream(0)).scaled(s),
                seeded_gaussian(d, d, seed.stream(1)).scaled(s),
                seeded_gaussian(d, d, seed.stream(2)).scaled(s),
            )?;
            ModelSpec::Attention { params }
        }
        ModelKind::Retention => {
            let params = RetentionParams::new(
                seeded_gaussian(d, d, seed.stream(0)),
                seeded_gaussian(d, d, seed.stream(1)),
                seeded_gaussian(d, d, seed.stream(2)),
                Gating::None,
            )?;
            ModelSpec::Retention { params }
        }
        ModelKind::TfBlock => {
            let h = spec.hidden.unwrap_or(3 * d / 2 + 1);
            ModelSpec::TfBlock { params: random_block(d, h, seed)? }
        }
        ModelKind::Stack => {
            let h = spec.hidden.unwrap_or(3 * d / 2 + 1);
            let depth = spec.blocks.unwrap_or(2);
            if depth == 0 {
                return Err(Error::InvalidInput("stack depth must be positive".into()));
            }
            let blocks = (0..depth as u64)
                .map(|b| random_block(d, h, seed.stream(0x100 + b)))
                .collect::<Result<Vec<_>>>()?;
            ModelSpec::Stack { params: StackParams::new(blocks)? }
        }
        ModelKind::Diffusion => {
            let h = spec.hidden.unwrap_or(2 * d);
            let steps = spec.steps.unwrap_or(10);
            if steps == 0 {
                return Err(Error::InvalidInput("diffusion needs at least one step".into()));
            }
            let mlp = MlpParams::two_layer(
                seeded_gaussian(h, d + 1, seed.stream(0)).scaled(1.0 / ((d + 1) as f64).sqrt()),
                seeded_gaussian_vector(h, seed.stream(1)),
                Activation::Gelu,
                seeded_gaussian(d, h, seed.stream(2)).scaled(1.0 / (h as f64).sqrt()),
                seeded_gaussian_vector(d, seed.stream(3)),
            )?;
            let knots = (0..=steps).map(|i| i as f64 / steps as f64).collect();
            let sched = DiffusionSchedule::new(
                knots,
                VelocityNet::PrelnMlp { ln: LayerNormParams::standard(d), mlp },
            )?;
            ModelSpec::Diffusion { params: sched }
        }
    };
    let file = ModelFile::new(model);
    file.validate()?;
    Ok(file)
}

fn random_block(d: usize, hidden: usize, seed: Seed) -> Result<TransformerBlockParams> {
    let s = 1.0 / (d as f64).sqrt();
    TransformerBlockParams::new(
        LayerNormParams::standard(d),
        AttentionParams::new(
            seeded_gaussian(d, d, seed.stream(0)).scaled(s),
            seeded_gaussian(d, d, seed.stream(1)).scaled(s),
            seeded_gaussian(d, d, seed.stream(2)).scaled(s),
        )?,
        LayerNormParams::standard(d),
        seeded_gaussian(hidden, d, seed.stream(3)).scaled(s),
        seeded_gaussian_vector(hidden, seed.stream(4)),
        seeded_gaussian(d, hidden, seed.stream(5)).scaled(1.0 / (hidden as f64).sqrt()),
        seeded_gaussian_vector(d, seed.stream(6)),
    )
}

// ---------------------------------------------------------------------------
// experiment configs

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Forward,
    Invert,
    Battery,
    Witness,
    Degree,
    Diffusion,
    Policy,
}

/// Where the targets come from. A config carries at most one of these,
/// enforced by the type.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TargetSpec {
    /// JSON file holding an array of vectors.
    File { path: String },
    /// Seeded gaussians, rescaled onto the bound when they exceed it.
    Random { count: usize, norm_bound: f64 },
    /// Inline list of target vectors.
    Literal { values: Vec<Vec<f64>> },
}

/// The tolerance/budget knobs a config or the command line can set.
/// Everything not listed here stays at the solver defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub lr: f64,
    pub steps: usize,
    pub trials: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings { tol: 1e-8, max_iters: 500, lr: 0.1, steps: 200, trials: 20 }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!("lr must be positive, got {}", self.lr)));
        }
        if self.max_iters == 0 || self.steps == 0 || self.trials == 0 {
            return Err(Error::InvalidInput(
                "max_iters, steps, and trials must all be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn solve_config(&self, seed: u64) -> SolveConfig {
        SolveConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            seed: Seed(seed),
            ..SolveConfig::default()
        }
    }

    pub fn gd_config(&self) -> GdConfig {
        GdConfig { lr: self.lr, steps: self.steps, init: None }
    }

    pub fn homotopy_config(&self) -> HomotopyConfig {
        HomotopyConfig { tol: self.tol, ..HomotopyConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    /// Path to a model file; exactly one of this and `generate` for
    /// tasks that act on a model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solve: SolveSettings,
    /// Report destination; stdout summary only when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            task,
            model: None,
            generate: None,
            target: None,
            seed: 0,
            solve: SolveSettings::default(),
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solve.validate()?;
        if self.model.is_some() && self.generate.is_some() {
            return Err(Error::InvalidInput(
                "config gives both a model path and a generation spec; pick one".into(),
            ));
        }
        let needs_model = matches!(
            self.task,
            Task::Forward | Task::Invert | Task::Diffusion | Task::Policy
        );
        if needs_model && self.model.is_none() && self.generate.is_none() {
            return Err(Error::InvalidInput(
                "this task needs a model: set `model` or `generate`".into(),
            ));
        }
        let needs_target = matches!(
            self.task,
            Task::Forward | Task::Invert | Task::Diffusion | Task::Policy
        );
        if needs_target && self.target.is_none() {
            return Err(Error::InvalidInput("this task needs a `target` spec".into()));
        }
        Ok(())
    }

    /// Load the referenced model, or build the generated one. The
    /// config path's directory resolves relative model paths.
    pub fn resolve_model(&self, base: Option<&Path>) -> Result<ModelFile> {
        if let Some(p) = &self.model {
            let path = Path::new(p);
            let path = match (path.is_relative(), base) {
                (true, Some(dir)) => dir.join(path),
                _ => path.to_path_buf(),
            };
            return load_model(&path);
        }
        if let Some(g) = &self.generate {
            return generate_model(g);
        }
        Err(Error::InvalidInput("config has neither `model` nor `generate`".into()))
    }
}

pub fn save_config(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    write_json(path, cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, &e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    check_schema_version(&value)?;
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Sha-256 of the config serialization, hex, stamped into every report
/// so a result can be traced to the settings that produced it. The
/// report destination is blanked first: where a result is written does
/// not change what the result is.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.out = None;
    let json = serde_json::to_string(&cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// targets

/// Load a JSON array of vectors, all of dimension `dim`.
pub fn load_targets(path: &Path, dim: usize) -> Result<Vec<Vector>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, &e))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    rows.into_iter().map(|r| checked_vector(r, dim)).collect()
}

/// Materialize a target spec at dimension `dim`. Random targets are
/// drawn from streams of `seed`, one per index, so the list is stable
/// under reordering of everything else.
pub fn resolve_targets(
    spec: &TargetSpec,
    dim: usize,
    seed: u64,
    base: Option<&Path>,
) -> Result<Vec<Vector>> {
    match spec {
        TargetSpec::File { path } => {
            let p = Path::new(path);
            let p = match (p.is_relative(), base) {
                (true, Some(dir)) => dir.join(p),
                _ => p.to_path_buf(),
            };
            load_targets(&p, dim)
        }
        TargetSpec::Random { count, norm_bound } => {
            if !(norm_bound.is_finite() && *norm_bound > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "target norm bound must be positive, got {norm_bound}"
                )));
            }
            Ok((0..*count as u64)
                .map(|i| {
                    let v = seeded_gaussian_vector(dim, Seed(seed).stream(0xA6 + i));
                    let n = v.norm();
                    if n > *norm_bound {
                        v.scaled(norm_bound / n)
                    } else {
                        v
                    }
                })
                .collect())
        }
        TargetSpec::Literal { values } => {
            values.iter().map(|r| checked_vector(r.clone(), dim)).collect()
        }
    }
}

fn checked_vector(row: Vec<f64>, dim: usize) -> Result<Vector> {
    if row.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: row.len(),
            context: "target vector length",
        });
    }
    if !row.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("target entries must be finite".into()));
    }
    Ok(Vector::new(row))
}

// ---------------------------------------------------------------------------
// reports

/// One inversion, flattened for the report. The residual goes through
/// Option because JSON has no infinity: a failed solve that never
/// produced a finite residual reports null.
#[derive(Clone, Debug, Serialize)]
pub struct InversionRecord {
    pub index: usize,
    pub x: Vector,
    pub residual: Option<f64>,
    pub iters: usize,
    pub method: Method,
    pub converged: bool,
}

impl InversionRecord {
    pub fn new(index: usize, r: &InversionResult) -> Self {
        InversionRecord {
            index,
            x: r.x.clone(),
            residual: r.residual.is_finite().then_some(r.residual),
            iters: r.iters,
            method: r.method,
            converged: r.converged,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DegreeRecord {
    pub fixture: String,
    pub expected: i64,
    pub result: DegreeResult,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportBody {
    Forward { outputs: Vec<Vector> },
    Inversions { results: Vec<InversionRecord> },
    Battery { report: VerdictReport },
    Witness { witness: Option<Witness>, attempts: usize },
    Degree { results: Vec<DegreeRecord> },
}

#[derive(Clone, Debug, Serialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub tool_version: String,
    pub task: Task,
    pub seed: u64,
    pub config_digest: String,
    /// Milliseconds per item, present only when timing was requested:
    /// timing noise would break byte-identical reruns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<Vec<f64>>,
    pub body: ReportBody,
}

impl ReportFile {
    pub fn new(task: Task, seed: u64, config_digest: String, body: ReportBody) -> Self {
        ReportFile {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            task,
            seed,
            config_digest,
            timings_ms: None,
            body,
        }
    }

    /// Did every item converge / certify? Drives the process exit code.
    pub fn all_good(&self) -> bool {
        match &self.body {
            ReportBody::Forward { .. } => true,
            ReportBody::Inversions { results } => results.iter().all(|r| r.converged),
            ReportBody::Battery { report } => !report.rows.is_empty(),
            ReportBody::Witness { witness, .. } => witness.is_some(),
            ReportBody::Degree { results } => {
                !results.is_empty() && results.iter().all(|r| r.result.degree == r.expected)
            }
        }
    }
}

pub fn save_report(path: &Path, report: &ReportFile) -> Result<()> {
    write_json(path, report)
}

/// Flatten inversion records to CSV, one row per target. The solution
/// vector rides in one space-separated field so the column count stays
/// fixed across dimensions.
pub fn write_inversions_csv(path: &Path, records: &[InversionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["index", "converged", "method", "iters", "residual", "x"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in records {
        let method = serde_json::to_value(r.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let residual = r.residual.map(|v| format!("{v}")).unwrap_or_default();
        let x = r
            .x
            .as_slice()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(" ");
        w.write_record([
            r.index.to_string(),
            r.converged.to_string(),
            method,
            r.iters.to_string(),
            residual,
            x,
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

// ---------------------------------------------------------------------------
// shared plumbing

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, &e))
}

fn io_err(path: &Path, e: &std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn stack_spec(seed: u64) -> GenerateSpec {
        GenerateSpec {
            kind: ModelKind::Stack,
            dim: 3,
            seed,
            hidden: Some(5),
            blocks: Some(2),
            steps: None,
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let file = generate_model(&stack_spec(7)).unwrap();
        save_model(&path, &file).unwrap();
        let loaded = load_model(&path).unwrap();
        // the writer emits shortest-round-trip decimals, which are
        // injective on floats, so string equality is bit equality
        assert_eq!(
            serde_json::to_string(&file).unwrap(),
            serde_json::to_string(&loaded).unwrap()
        );
        let (ModelSpec::Stack { params: a }, ModelSpec::Stack { params: b }) =
            (&file.model, &loaded.model)
        else {
            panic!("kind changed in transit")
        };
        let w = (&a.blocks[1].w1, &b.blocks[1].w1);
        assert_eq!(w.0[(2, 1)].to_bits(), w.1[(2, 1)].to_bits());
    }

    #[test]
    fn same_spec_same_bytes() {
        let dir = tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save_model(&p1, &generate_model(&stack_spec(11)).unwrap()).unwrap();
        save_model(&p2, &generate_model(&stack_spec(11)).unwrap()).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn every_kind_generates_and_reloads() {
        let dir = tempdir().unwrap();
        for kind in [
            ModelKind::Mlp,
            ModelKind::Layernorm,
            ModelKind::Attention,
            ModelKind::Retention,
            ModelKind::TfBlock,
            ModelKind::Stack,
            ModelKind::Diffusion,
        ] {
            let spec =
                GenerateSpec { kind, dim: 4, seed: 3, hidden: None, blocks: None, steps: None };
            let file = generate_model(&spec).unwrap();
            assert_eq!(file.dim, 4, "{kind}");
            assert_eq!(file.model.kind(), kind);
            let path = dir.path().join(format!("{kind}.json"));
            save_model(&path, &file).unwrap();
            assert_eq!(load_model(&path).unwrap().model.kind(), kind);
        }
    }

    #[test]
    fn missing_field_is_named_in_the_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let file = generate_model(&GenerateSpec {
            kind: ModelKind::Retention,
            dim: 2,
            seed: 0,
            hidden: None,
            blocks: None,
            steps: None,
        })
        .unwrap();
        let mut v = serde_json::to_value(&file).unwrap();
        v["params"].as_object_mut().unwrap().remove("gating");
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        match load_model(&path) {
            Err(Error::Parse(msg)) => assert!(msg.contains("gating"), "got: {msg}"),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let full = serde_json::to_string(&generate_model(&stack_spec(1)).unwrap()).unwrap();
        fs::write(&path, &full[..full.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn unknown_schema_version_is_refused() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut v = serde_json::to_value(&generate_model(&stack_spec(1)).unwrap()).unwrap();
        v["schema_version"] = serde_json::json!(99);
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(load_model(&path), Err(Error::UnsupportedSchema(99))));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(
            &path,
            r#"{"schema_version":1,"dim":0,"type":"layernorm","params":{"gamma":[],"beta":[],"epsilon":1e-6}}"#,
        )
        .unwrap();
        assert!(matches!(load_model(&path), Err(Error::DimensionMismatch { .. })));
        let err = generate_model(&GenerateSpec {
            kind: ModelKind::Mlp,
            dim: 0,
            seed: 0,
            hidden: None,
            blocks: None,
            steps: None,
        });
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn dim_field_must_match_the_shapes() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut v = serde_json::to_value(&generate_model(&stack_spec(1)).unwrap()).unwrap();
        v["dim"] = serde_json::json!(5);
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::DimensionMismatch { expected: 3, got: 5, .. })
        ));
    }

    #[test]
    fn config_round_trip_and_digest_stability() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.json");
        let mut cfg = ExperimentConfig::new(Task::Invert);
        cfg.generate = Some(stack_spec(4));
        cfg.target = Some(TargetSpec::Random { count: 10, norm_bound: 2.0 });
        cfg.seed = 42;
        save_config(&path, &cfg).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(config_digest(&cfg), config_digest(&loaded));
        assert_eq!(loaded.seed, 42);
        assert!(matches!(loaded.target, Some(TargetSpec::Random { count: 10, .. })));
    }

    #[test]
    fn config_rejects_model_and_generate_together() {
        let mut cfg = ExperimentConfig::new(Task::Invert);
        cfg.model = Some("m.json".into());
        cfg.generate = Some(stack_spec(0));
        cfg.target = Some(TargetSpec::Literal { values: vec![vec![0.0; 3]] });
        assert!(matches!(cfg.validate(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn config_rejects_nonpositive_tolerances() {
        let mut cfg = ExperimentConfig::new(Task::Battery);
        cfg.solve.tol = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidInput(_))));
        cfg.solve.tol = 1e-8;
        cfg.solve.lr = -0.1;
        assert!(matches!(cfg.validate(), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn random_targets_respect_the_bound_and_the_seed() {
        let spec = TargetSpec::Random { count: 20, norm_bound: 1.5 };
        let a = resolve_targets(&spec, 6, 9, None).unwrap();
        let b = resolve_targets(&spec, 6, 9, None).unwrap();
        assert_eq!(a.len(), 20);
        for (u, v) in a.iter().zip(&b) {
            assert!(u.norm() <= 1.5 + 1e-12);
            assert_eq!(u.as_slice(), v.as_slice());
        }
        let c = resolve_targets(&spec, 6, 10, None).unwrap();
        assert!(a[0].as_slice() != c[0].as_slice(), "different seed, different draw");
    }

    #[test]
    fn literal_targets_check_their_dimension() {
        let spec = TargetSpec::Literal { values: vec![vec![1.0, 2.0], vec![3.0]] };
        assert!(matches!(
            resolve_targets(&spec, 2, 0, None),
            Err(Error::DimensionMismatch { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs: Vec<InversionRecord> = (0..3)
            .map(|i| InversionRecord {
                index: i,
                x: Vector::new(vec![0.5, -1.25]),
                residual: (i != 1).then_some(1e-9),
                iters: 7,
                method: Method::Newton,
                converged: i != 1,
            })
            .collect();
        write_inversions_csv(&path, &recs).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "index,converged,method,iters,residual,x");
        assert!(lines[1].starts_with("0,true,newton,7,0.000000001,"));
        assert!(lines[2].contains(",,"), "missing residual stays empty");
    }

    #[test]
    fn report_exit_semantics() {
        let body = ReportBody::Inversions {
            results: vec![InversionRecord {
                index: 0,
                x: Vector::zeros(1),
                residual: Some(0.0),
                iters: 0,
                method: Method::Exact,
                converged: true,
            }],
        };
        let r = ReportFile::new(Task::Invert, 0, "d".into(), body);
        assert!(r.all_good());
        let body = ReportBody::Witness { witness: None, attempts: 3 };
        assert!(!ReportFile::new(Task::Witness, 0, "d".into(), body).all_good());
    }
}
