//! Experiment configuration, stage orchestration and report emission.
//!
//! A run is described by a versioned TOML document. Stages execute in a
//! fixed dependency order and every file they write is listed, with its
//! SHA-256, in `manifest.json` inside the output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::{
    compute_unstable_bundle, save_section, stationarity_residual, StationarityReport,
};
use crate::dynamics::{lyapunov_rates, riccati_coefficients, AnosovSystem, FrameField, RateReport, SystemKind, SystemManifest};
use crate::microlocal::{
    cone_energy, csv_error, rigidity_thresholds, threshold_sign_report, unstable_conormal, wavefront_test,
    ConeEnergyProfile, ManifoldDim, ThresholdLocation, Thresholds, WavefrontVerdict, APERTURES_DEG,
};
use crate::resonance::{
    build_escape_weight, compute_resonances, hausdorff, s1_and_delta, weighted_generator, Backend,
    ResonanceReport, StripEstimate,
};
use crate::spectral::{block_norms, estimate_regularity, holder_field, RegularityEstimate, Scale};
use crate::{Error, Grid, PeriodicField, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "PARADYN_OUT";

const BUNDLED: &[(&str, &str)] = &[("catmap_baseline", include_str!("../configs/catmap_baseline.toml"))];

pub fn bundled_config_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_config(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Pipeline stages, declared in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Rates,
    Bundle,
    Regularity,
    Wavefront,
    Thresholds,
    Resonances,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Rates => "rates",
            StageKind::Bundle => "bundle",
            StageKind::Regularity => "regularity",
            StageKind::Wavefront => "wavefront",
            StageKind::Thresholds => "thresholds",
            StageKind::Resonances => "resonances",
        }
    }

    fn dependencies(self) -> &'static [StageKind] {
        match self {
            StageKind::Rates | StageKind::Bundle => &[],
            StageKind::Regularity | StageKind::Wavefront => &[StageKind::Bundle],
            StageKind::Thresholds | StageKind::Resonances => &[StageKind::Rates],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesParams {
    pub t: f64,
    pub samples: usize,
}

impl Default for RatesParams {
    fn default() -> Self {
        Self { t: 20.0, samples: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleParams {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BundleParams {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularityParams {
    /// Inclusive band window; defaults to `[3, J-2]`.
    pub bands: Option<[i32; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WavefrontParams {
    pub apertures_deg: Vec<f64>,
    pub sobolev_index: f64,
    pub bands: Option<[i32; 2]>,
}

impl Default for WavefrontParams {
    fn default() -> Self {
        Self {
            apertures_deg: APERTURES_DEG.to_vec(),
            sobolev_index: 1.0,
            bands: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Sweep {
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.to - self.from) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.from + i as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdParams {
    pub s: Vec<f64>,
    pub t: f64,
    pub location: ThresholdLocation,
    pub sweep: Option<Sweep>,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            s: vec![1.9, 2.1],
            t: 20.0,
            location: ThresholdLocation::SinkEuStar,
            sweep: Some(Sweep {
                from: 1.5,
                to: 2.5,
                step: 0.05,
            }),
        }
    }
}

/// Potential `V` of the weighted operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    Constant { value: f64 },
    /// Random-phase field of regularity `r`, scaled to sup norm `amplitude`
    /// and drawn from the run seed.
    Rough { r: f64, amplitude: f64 },
}

impl PotentialSpec {
    pub fn regularity(&self) -> f64 {
        match self {
            PotentialSpec::Rough { r, .. } => *r,
            _ => f64::INFINITY,
        }
    }

    pub fn synthesize(&self, grid: Grid, rng: &mut ChaCha8Rng) -> PeriodicField {
        match self {
            PotentialSpec::Zero => PeriodicField::constant(grid, 0.0),
            PotentialSpec::Constant { value } => PeriodicField::constant(grid, *value),
            PotentialSpec::Rough { r, amplitude } => {
                let v = holder_field(grid, *r, rng);
                let sup = v.sup_norm();
                if sup > 0.0 {
                    v.scale(amplitude / sup)
                } else {
                    v
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonanceParams {
    /// `(u, s)` pairs.
    pub weights: Vec<[f64; 2]>,
    pub truncation: usize,
    pub aperture_deg: f64,
    pub backend: Backend,
    pub potential: PotentialSpec,
    /// Lower edge of the reported strip; derived from the weights and rates
    /// when absent.
    pub strip_re_min: Option<f64>,
    /// Regularity entering the strip width; defaults to the smaller of the
    /// system and potential regularities.
    pub r: Option<f64>,
}

impl Default for ResonanceParams {
    fn default() -> Self {
        Self {
            weights: vec![[-1.0, 1.0]],
            truncation: 32,
            aperture_deg: 15.0,
            backend: Backend::Map,
            potential: PotentialSpec::Zero,
            strip_re_min: None,
            r: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Base grid size `N` (per axis) for bundle and diagnostic fields.
    pub grid: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub system: SystemManifest,
    pub stages: Vec<StageKind>,
    #[serde(default)]
    pub rates: RatesParams,
    #[serde(default)]
    pub bundle: BundleParams,
    #[serde(default)]
    pub regularity: RegularityParams,
    #[serde(default)]
    pub wavefront: WavefrontParams,
    #[serde(default)]
    pub thresholds: ThresholdParams,
    #[serde(default)]
    pub resonances: ResonanceParams,
    /// Directory against which relative paths resolve.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// A configuration with default stage parameters.
    pub fn new(name: &str, system: SystemManifest, grid: usize, stages: Vec<StageKind>) -> Result<Self> {
        let cfg = Self {
            schema_version: SCHEMA_VERSION,
            name: name.to_string(),
            seed: 0,
            grid,
            output: None,
            system,
            stages,
            rates: RatesParams::default(),
            bundle: BundleParams::default(),
            regularity: RegularityParams::default(),
            wavefront: WavefrontParams::default(),
            thresholds: ThresholdParams::default(),
            resonances: ResonanceParams::default(),
            base_dir: PathBuf::from("."),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// A bundled configuration by name, or a TOML file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match bundled_config(name_or_path) {
            Some(text) => Self::from_toml_str(text, Path::new(".")),
            None => {
                let path = Path::new(name_or_path);
                if !path.exists() {
                    let known: Vec<&str> = bundled_config_names().collect();
                    return Err(Error::Config(format!(
                        "'{name_or_path}' is neither a file nor a bundled config ({})",
                        known.join(", ")
                    )));
                }
                Self::load(path)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(Error::Config(format!("invalid run name '{}'", self.name)));
        }
        Grid::new(self.grid, 2)?;
        if self.stages.is_empty() {
            return Err(Error::Config("no stages requested".into()));
        }
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.rates.t, "rates.t")?;
        positive(self.bundle.tol, "bundle.tol")?;
        positive(self.thresholds.t, "thresholds.t")?;
        positive(self.resonances.aperture_deg, "resonances.aperture_deg")?;
        for a in &self.wavefront.apertures_deg {
            positive(*a, "wavefront aperture")?;
        }
        if let Some(sw) = &self.thresholds.sweep {
            positive(sw.step, "thresholds.sweep.step")?;
            if sw.to < sw.from {
                return Err(Error::Config("thresholds.sweep: to < from".into()));
            }
        }
        if self.resonances.weights.is_empty() {
            return Err(Error::Config("resonances.weights is empty".into()));
        }
        for [u, s] in &self.resonances.weights {
            if !(*u < 0.0 && *s > 0.0) {
                return Err(Error::Config(format!("weight ({u}, {s}) needs u < 0 < s")));
            }
        }
        Ok(())
    }

    /// Requested stages plus their prerequisites, in execution order.
    pub fn execution_order(&self) -> Vec<StageKind> {
        let mut set = BTreeSet::new();
        let mut todo = self.stages.clone();
        while let Some(s) = todo.pop() {
            if set.insert(s) {
                todo.extend_from_slice(s.dependencies());
            }
        }
        set.into_iter().collect()
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// `out` if given, else the configured `output` (relative to the config
    /// file), else `$PARADYN_OUT/<name>`, else `paradyn-out/<name>`.
    pub fn output_dir(&self, out: Option<&Path>) -> PathBuf {
        if let Some(o) = out {
            return o.to_path_buf();
        }
        if let Some(o) = &self.output {
            return self.base_dir.join(o);
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("paradyn-out"));
        root.join(&self.name)
    }
}

/// Reads a system manifest from a `.json` or `.toml` file.
pub fn read_system_manifest(path: &Path) -> Result<SystemManifest> {
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(serde_json::from_str(&text)?),
        _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub manifest: SystemManifest,
    pub system_hash: String,
    pub kind: SystemKind,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub e_u: [f64; 2],
    pub e_s: [f64; 2],
    /// `None` for smooth systems.
    pub regularity: Option<f64>,
    pub perturbation_c1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub grid: usize,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub stationarity: Option<StationarityReport>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRegularity {
    pub scale: Scale,
    pub estimate: RegularityEstimate,
    /// `(j, log2 ‖Δ_j u‖)` for every band with a nonzero block.
    pub log2_block_norms: Vec<(i32, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub field: String,
    pub scales: Vec<ScaleRegularity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavefrontEntry {
    pub aperture_deg: f64,
    pub verdict: WavefrontVerdict,
    pub profile: ConeEnergyProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavefrontReport {
    pub field: String,
    pub direction: [f64; 3],
    pub sobolev_index: f64,
    pub entries: Vec<WavefrontEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginPoint {
    pub s: f64,
    pub max_margin: f64,
    pub min_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsReport {
    pub location: ThresholdLocation,
    pub t: f64,
    pub thresholds: Thresholds,
    pub evaluations: Vec<MarginPoint>,
    pub sweep: Vec<MarginPoint>,
    /// Sweep value after which the largest margin first becomes positive.
    pub crossing: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSetReport {
    pub strip: StripEstimate,
    pub strip_re_min: f64,
    pub reports: Vec<ResonanceReport>,
    /// Hausdorff distance of each weight's set to the first one.
    pub hausdorff_to_first: Vec<f64>,
}

/// Every JSON report written by the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "report", rename_all = "snake_case")]
pub enum Report {
    System(SystemReport),
    Rates(RateReport),
    Bundle(BundleReport),
    Regularity(RegularityReport),
    Wavefront(Box<WavefrontReport>),
    Thresholds(ThresholdsReport),
    Resonances(ResonanceSetReport),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactStatus {
    Complete,
    /// Written by a stage that later failed.
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub stage: String,
    pub status: ArtifactStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageKind,
    pub status: StageStatus,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub system_hash: Option<String>,
    pub stages: Vec<StageRecord>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn succeeded(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Ok)
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
    stage: &'static str,
}

impl Writer {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let rel = path
            .strip_prefix(&self.dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.artifacts.push(Artifact {
            sha256: sha256_file(path)?,
            path: rel,
            stage: self.stage.to_string(),
            status: ArtifactStatus::Complete,
        });
        Ok(())
    }

    fn report(&mut self, name: &str, report: &Report) -> Result<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.record(&path)
    }

    fn mark_partial(&mut self) {
        for a in self.artifacts.iter_mut().filter(|a| a.stage == self.stage) {
            a.status = ArtifactStatus::Partial;
        }
    }
}

#[derive(Default)]
struct State {
    rates: Option<RateReport>,
    slope: Option<PeriodicField>,
}

/// Runs the configured stages into `out_dir`. On a stage failure the
/// manifest is still written, with that stage's files marked partial, and
/// the stage's error is returned.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut w = Writer {
        dir: out_dir.to_path_buf(),
        artifacts: Vec::new(),
        stage: "system",
    };
    let mut manifest = Manifest {
        name: cfg.name.clone(),
        schema_version: cfg.schema_version,
        seed: cfg.seed,
        config_sha256: cfg.digest(),
        system_hash: None,
        stages: Vec::new(),
        artifacts: Vec::new(),
    };
    let order = cfg.execution_order();
    let outcome = (|| -> Result<()> {
        let sys = cfg.system.build(&cfg.base_dir).map_err(|e| stage_error("system", e))?;
        manifest.system_hash = Some(sys.manifest_hash().to_string());
        write_system(&mut w, cfg, &sys)?;
        let mut state = State::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (i, &stage) in order.iter().enumerate() {
            w.stage = stage.name();
            let result = match stage {
                StageKind::Rates => stage_rates(&mut w, cfg, &sys, &mut state),
                StageKind::Bundle => stage_bundle(&mut w, cfg, &sys, &mut state),
                StageKind::Regularity => stage_regularity(&mut w, cfg, &state),
                StageKind::Wavefront => stage_wavefront(&mut w, cfg, &sys, &state),
                StageKind::Thresholds => stage_thresholds(&mut w, cfg, &sys, &state),
                StageKind::Resonances => stage_resonances(&mut w, cfg, &sys, &state, &mut rng),
            };
            match result {
                Ok(()) => manifest.stages.push(StageRecord {
                    stage,
                    status: StageStatus::Ok,
                    error: None,
                }),
                Err(e) => {
                    w.mark_partial();
                    manifest.stages.push(StageRecord {
                        stage,
                        status: StageStatus::Failed,
                        error: Some(e.to_string()),
                    });
                    manifest.stages.extend(order[i + 1..].iter().map(|&s| StageRecord {
                        stage: s,
                        status: StageStatus::Skipped,
                        error: None,
                    }));
                    return Err(stage_error(stage.name(), e));
                }
            }
        }
        Ok(())
    })();
    manifest.artifacts = std::mem::take(&mut w.artifacts);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST_FILE), text)?;
    outcome.map(|()| manifest)
}

fn stage_error(stage: &str, e: Error) -> Error {
    Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

fn write_system(w: &mut Writer, cfg: &ExperimentConfig, sys: &AnosovSystem) -> Result<()> {
    let sp = sys.splitting();
    let r = sys.regularity();
    let report = SystemReport {
        manifest: cfg.system.clone(),
        system_hash: sys.manifest_hash().to_string(),
        kind: sys.kind(),
        lambda_u: sp.lambda_u,
        lambda_s: sp.lambda_s,
        e_u: [sp.e_u[0], sp.e_u[1]],
        e_s: [sp.e_s[0], sp.e_s[1]],
        regularity: r.is_finite().then_some(r),
        perturbation_c1: sys.perturbation().map(|p| p.c1_size()),
    };
    w.report("system.json", &Report::System(report))
}

fn stage_rates(w: &mut Writer, cfg: &ExperimentConfig, sys: &AnosovSystem, state: &mut State) -> Result<()> {
    let rates = lyapunov_rates(sys, cfg.rates.t, cfg.rates.samples)?;
    w.report("rates.json", &Report::Rates(rates.clone()))?;
    state.rates = Some(rates);
    Ok(())
}

fn stage_bundle(w: &mut Writer, cfg: &ExperimentConfig, sys: &AnosovSystem, state: &mut State) -> Result<()> {
    let grid = Grid::new(cfg.grid, 2)?;
    let frames = FrameField::axes(grid);
    let section = compute_unstable_bundle(sys, &frames, cfg.bundle.tol, cfg.bundle.max_iter)?;
    let files = save_section(&w.dir, "bundle_eu", &section, sys.manifest_hash())?;
    for f in &files {
        w.record(f)?;
    }
    let stationarity = match sys.kind() {
        SystemKind::Suspension { .. } => {
            let coeffs = riccati_coefficients(sys, &frames)?;
            Some(stationarity_residual(sys, &coeffs, &section)?)
        }
        SystemKind::Map => None,
    };
    let report = BundleReport {
        grid: cfg.grid,
        iterations: section.iterations,
        residual: section.residual,
        history: section.history.clone(),
        stationarity,
        files: w.artifacts.iter().filter(|a| a.stage == "bundle").map(|a| a.path.clone()).collect(),
    };
    w.report("bundle.json", &Report::Bundle(report))?;
    state.slope = Some(section.slope().clone());
    Ok(())
}

fn prerequisite<'a, T>(value: &'a Option<T>, what: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::Precondition(format!("{what} stage has not run")))
}

fn stage_regularity(w: &mut Writer, cfg: &ExperimentConfig, state: &State) -> Result<()> {
    let slope = prerequisite(&state.slope, "bundle")?;
    let bands = cfg.regularity.bands.map(|[a, b]| (a, b));
    let scales = [Scale::Holder, Scale::Sobolev]
        .into_iter()
        .map(|scale| {
            Ok(ScaleRegularity {
                scale,
                estimate: estimate_regularity(slope, scale, bands)?,
                log2_block_norms: block_norms(slope, scale)
                    .into_iter()
                    .filter(|(_, v)| *v > 0.0)
                    .map(|(j, v)| (j, v.log2()))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = RegularityReport {
        field: "unstable_slope".into(),
        scales,
    };
    w.report("regularity.json", &Report::Regularity(report))
}

fn stage_wavefront(w: &mut Writer, cfg: &ExperimentConfig, sys: &AnosovSystem, state: &State) -> Result<()> {
    let slope = prerequisite(&state.slope, "bundle")?;
    let direction = unstable_conormal(sys);
    let p = &cfg.wavefront;
    let bands = p.bands.map(|[a, b]| (a, b));
    let entries = p
        .apertures_deg
        .iter()
        .map(|&deg| {
            Ok(WavefrontEntry {
                aperture_deg: deg,
                verdict: wavefront_test(slope, direction, deg.to_radians(), p.sobolev_index, bands)?,
                profile: cone_energy(slope, direction, deg.to_radians())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = WavefrontReport {
        field: "unstable_slope".into(),
        direction,
        sobolev_index: p.sobolev_index,
        entries,
    };
    w.report("wavefront.json", &Report::Wavefront(Box::new(report)))
}

fn stage_thresholds(w: &mut Writer, cfg: &ExperimentConfig, sys: &AnosovSystem, state: &State) -> Result<()> {
    let rates = prerequisite(&state.rates, "rates")?;
    let p = &cfg.thresholds;
    let dim = match sys.kind() {
        SystemKind::Suspension { .. } => ManifoldDim::Three,
        SystemKind::Map => ManifoldDim::General,
    };
    // Hyperbolic toral automorphisms and the shear perturbations preserve area.
    let thresholds = rigidity_thresholds(rates, dim, true)?;
    let mut evaluations = Vec::with_capacity(p.s.len());
    for (i, &s) in p.s.iter().enumerate() {
        let rep = threshold_sign_report(sys, s, p.t, p.location)?;
        let path = w.path(&format!("thresholds_orbits_{i}.csv"));
        rep.write_csv(&path)?;
        w.record(&path)?;
        evaluations.push(MarginPoint {
            s,
            max_margin: rep.max_margin,
            min_margin: rep.min_margin,
        });
    }
    let sweep = match &p.sweep {
        Some(sw) => sw
            .values()
            .into_iter()
            .map(|s| {
                let rep = threshold_sign_report(sys, s, p.t, p.location)?;
                Ok(MarginPoint {
                    s,
                    max_margin: rep.max_margin,
                    min_margin: rep.min_margin,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let crossing = sweep
        .windows(2)
        .find(|pair| (pair[0].max_margin < 0.0) != (pair[1].max_margin < 0.0))
        .map(|pair| pair[1].s);
    let report = ThresholdsReport {
        location: p.location,
        t: p.t,
        thresholds,
        evaluations,
        sweep,
        crossing,
    };
    w.report("thresholds.json", &Report::Thresholds(report))
}

fn stage_resonances(
    w: &mut Writer,
    cfg: &ExperimentConfig,
    sys: &AnosovSystem,
    state: &State,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let rates = prerequisite(&state.rates, "rates")?;
    let p = &cfg.resonances;
    let grid = Grid::new(cfg.grid, 2)?;
    let v = p.potential.synthesize(grid, rng);
    let r = p.r.unwrap_or_else(|| sys.regularity().min(p.potential.regularity()));
    let strip = s1_and_delta(sys, &v, r, rates)?;
    // Map eigenvalues are per return time, flow resonances per unit time.
    let scale = match p.backend {
        Backend::Map => sys.roof(),
        Backend::Flow { .. } => 1.0,
    };
    let slowest = rates.nu_u_min.min(rates.nu_s_min);
    let strip_re_min = p.strip_re_min.unwrap_or_else(|| {
        p.weights
            .iter()
            .map(|[u, s]| (strip.s1 - s.min(u.abs()) * slowest) * scale)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let mut reports = Vec::with_capacity(p.weights.len());
    for (i, &[u, s]) in p.weights.iter().enumerate() {
        let weight = build_escape_weight(sys, u, s, p.aperture_deg.to_radians())?;
        let op = weighted_generator(sys, &v, &weight, p.truncation, p.backend)?;
        let mut report = compute_resonances(&op, strip_re_min)?;
        report.s1 = Some(strip.s1);
        report.delta = strip.delta;
        let path = w.path(&format!("resonances_{i}.csv"));
        report.write_csv(&path)?;
        w.record(&path)?;
        reports.push(report);
    }
    let first = reports[0].values();
    let hausdorff_to_first = reports.iter().map(|r| hausdorff(&first, &r.values())).collect();
    let report = ResonanceSetReport {
        strip,
        strip_re_min,
        reports,
        hausdorff_to_first,
    };
    w.report("resonances.json", &Report::Resonances(report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedReport {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<SkippedReport>,
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Converts pipeline reports into per-figure CSV tables in `out_dir`.
/// Missing or unreadable reports, and report kinds without a figure, are
/// listed in [`PlotData::skipped`].
pub fn emit_plot_data(reports: &[PathBuf], out_dir: &Path) -> Result<PlotData> {
    fs::create_dir_all(out_dir)?;
    let mut out = PlotData::default();
    for path in reports {
        let skip = |reason: String| SkippedReport {
            path: path.clone(),
            reason,
        };
        let report: Report = match fs::read_to_string(path) {
            Err(e) => {
                out.skipped.push(skip(format!("unreadable: {e}")));
                continue;
            }
            Ok(text) => match serde_json::from_str(&text) {
                Ok(r) => r,
                Err(e) => {
                    out.skipped.push(skip(format!("not a pipeline report: {e}")));
                    continue;
                }
            },
        };
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let target = |suffix: &str| out_dir.join(format!("{stem}_{suffix}.csv"));
        match report {
            Report::Regularity(r) => {
                for sc in &r.scales {
                    let scale = match sc.scale {
                        Scale::Holder => "holder",
                        Scale::Sobolev => "sobolev",
                    };
                    let p = target(scale);
                    write_rows(
                        &p,
                        &["j", "log2_block_norm"],
                        sc.log2_block_norms.iter().map(|(j, v)| vec![j.to_string(), v.to_string()]),
                    )?;
                    out.written.push(p);
                }
            }
            Report::Resonances(r) => {
                for (i, rep) in r.reports.iter().enumerate() {
                    let p = target(&format!("scatter_{i}"));
                    write_rows(
                        &p,
                        &["re", "im", "residual"],
                        rep.eigenvalues
                            .iter()
                            .map(|e| vec![e.re.to_string(), e.im.to_string(), e.residual.to_string()]),
                    )?;
                    out.written.push(p);
                }
            }
            Report::Thresholds(r) if !r.sweep.is_empty() => {
                let p = target("margins");
                write_rows(
                    &p,
                    &["s", "margin"],
                    r.sweep.iter().map(|m| vec![m.s.to_string(), m.max_margin.to_string()]),
                )?;
                out.written.push(p);
            }
            Report::Wavefront(r) => {
                for e in &r.entries {
                    let p = target(&format!("cone_{}deg", e.aperture_deg));
                    e.profile.write_csv(&p)?;
                    out.written.push(p);
                }
            }
            Report::Thresholds(_) => out.skipped.push(skip("threshold report has no sweep".into())),
            Report::System(_) | Report::Rates(_) | Report::Bundle(_) => {
                out.skipped.push(skip("report kind has no plot data".into()))
            }
        }
    }
    Ok(out)
}

/// Reports listed in a run manifest, for [`emit_plot_data`].
pub fn manifest_reports(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(out_dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    Ok(manifest
        .artifacts
        .iter()
        .filter(|a| a.path.ends_with(".json"))
        .map(|a| out_dir.join(&a.path))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "mini"
grid = 32
stages = ["regularity"]

[system]
matrix = [[2, 1], [1, 1]]
"#;

    #[test]
    fn stage_dependencies_are_added_in_order() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(cfg.execution_order(), vec![StageKind::Bundle, StageKind::Regularity]);
    }

    #[test]
    fn unknown_keys_and_bad_grids_are_rejected() {
        let extra = format!("{MINIMAL}\n[bundle]\ntol = 1e-10\nbogus = 1\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&extra, Path::new(".")),
            Err(Error::Config(_))
        ));
        let bad = MINIMAL.replace("grid = 32", "grid = 48");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad, Path::new(".")),
            Err(Error::NotPowerOfTwo(48))
        ));
        let version = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&version, Path::new(".")).is_err());
    }

    #[test]
    fn bundled_baseline_parses() {
        let cfg = ExperimentConfig::resolve("catmap_baseline").unwrap();
        assert_eq!(cfg.name, "catmap_baseline");
        assert!(cfg.execution_order().contains(&StageKind::Resonances));
    }

    #[test]
    fn sweep_includes_both_ends() {
        let s = Sweep {
            from: 1.5,
            to: 2.5,
            step: 0.05,
        };
        let v = s.values();
        assert_eq!(v.len(), 21);
        assert!((v[20] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn output_dir_precedence() {
        let mut cfg = ExperimentConfig::from_toml_str(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.output_dir(Some(Path::new("/x"))), PathBuf::from("/x"));
        cfg.output = Some("runs/a".into());
        assert_eq!(cfg.output_dir(None), PathBuf::from("/cfg/runs/a"));
    }
}
