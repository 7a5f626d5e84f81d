//! Experiment orchestration: run configuration, the analysis pipelines and
//! result emission behind the `z2ed` command-line tool.
//!
//! A run is described by a single TOML file validated against the structs
//! below (unknown keys are rejected). Every pipeline writes a `metadata.json`
//! carrying the config hash, code version and seed, plus CSV tables for the
//! observables, so outputs are reproducible and diffable: two runs with the
//! same config and seed produce bit-identical tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ent::{
    self, entanglement_gap, entanglement_spectrum, reduce_to_a, reduce_to_b,
    sector_resolved_spectrum, EntanglementSpectrum,
};
use crate::lattice::{
    build_dual_cut_torus, build_dual_torus, build_original, verify_canonical_map, Coupling,
    CutTorusHamiltonian, LatticeGeometry, WindingMode,
};
use crate::pauli::{OperatorSum, PauliString};
use crate::spectra::{
    eigh_dense, eigvals_in_x_sector, evolve_compiled, ground_state_compiled, match_beta,
    CompiledHamiltonian, EvolveOptions, MatchTarget, PackedXSector, StateVector,
    XSectorBasis,
};
use crate::stats::{self, gap_ratio_stats, scaling_fit, GridRange, ScalingOptions};
use crate::varfit::{fit, subsystem_ansatz, FitOptions, TermKind};

// ---------------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// Bad configuration or usage; exit code 1.
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Numeric failure or non-convergence; exit code 2.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Estimated footprint exceeds the budget; exit code 3.
    #[error("memory budget exceeded for {what}: need {required_gb:.2} GB, budget {budget_gb:.2} GB")]
    Budget { what: String, required_gb: f64, budget_gb: f64 },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } => 1,
            HarnessError::Numeric(_) => 2,
            HarnessError::Budget { .. } => 3,
        }
    }
}

macro_rules! numeric_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Numeric(e.to_string())
            }
        }
    )*};
}
numeric_from!(
    crate::lattice::LatticeError,
    crate::pauli::PauliError,
    crate::spectra::SpectraError,
    crate::ent::EntError,
    crate::varfit::VarFitError,
    crate::stats::StatsError
);

type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

// ---------------------------------------------------------------------------
// Configuration schema

/// Geometry block. `kind` is one of `"torus"`, `"cylinder"`, `"cut_torus"`;
/// tori and cylinders take `nx`/`ny`, cut tori take `nx_a`/`nx_b`/`ny`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: String,
    #[serde(default)]
    pub nx: Option<usize>,
    #[serde(default)]
    pub nx_a: Option<usize>,
    #[serde(default)]
    pub nx_b: Option<usize>,
    pub ny: usize,
}

impl GeometryConfig {
    pub fn to_geometry(&self) -> Result<LatticeGeometry> {
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| {
                HarnessError::Config(format!("geometry kind '{}' needs '{}'", self.kind, name))
            })
        };
        let geom = match self.kind.as_str() {
            "torus" => LatticeGeometry::torus(need(self.nx, "nx")?, self.ny),
            "cylinder" => LatticeGeometry::cylinder(need(self.nx, "nx")?, self.ny),
            "cut_torus" => LatticeGeometry::cut_torus(
                need(self.nx_a, "nx_a")?,
                need(self.nx_b, "nx_b")?,
                self.ny,
            ),
            other => {
                return Err(HarnessError::Config(format!("unknown geometry kind '{other}'")))
            }
        };
        geom.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(geom)
    }
}

/// Coupling block: a single value or a sweep list, exclusively.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub sweep: Option<Vec<f64>>,
}

impl CouplingConfig {
    fn single(&self) -> Result<f64> {
        match (self.eps, &self.sweep) {
            (Some(e), None) => Ok(e),
            _ => Err(HarnessError::Config(
                "this pipeline needs [coupling] with 'eps' (and no 'sweep')".into(),
            )),
        }
    }

    fn list(&self) -> Result<Vec<f64>> {
        match (&self.eps, &self.sweep) {
            (None, Some(s)) if !s.is_empty() => Ok(s.clone()),
            (Some(e), None) => Ok(vec![*e]),
            _ => Err(HarnessError::Config(
                "this pipeline needs [coupling] with 'eps' or a non-empty 'sweep'".into(),
            )),
        }
    }
}

/// A coupling value that may be the literal string `"infinity"`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsValue {
    Number(f64),
    Word(InfinityWord),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum InfinityWord {
    #[serde(rename = "infinity")]
    Infinity,
}

impl EpsValue {
    pub fn to_coupling(self) -> Coupling {
        match self {
            EpsValue::Number(e) => Coupling::Finite(e),
            EpsValue::Word(_) => Coupling::Infinite,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    /// `"random_eigenstate"` or `"electric_product"`.
    pub mode: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchConfig {
    pub eps_initial: EpsValue,
    pub eps_final: f64,
    pub initial_state: InitialStateConfig,
    /// Strictly increasing measurement times.
    pub times: Vec<f64>,
}

/// Grid specification `{ min, max, step }` for the scaling fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridConfig {
    fn to_range(self) -> GridRange {
        GridRange::new(self.min, self.max, self.step)
    }
}

fn default_true() -> bool {
    true
}
fn default_unfold_degree() -> usize {
    3
}
fn default_krylov_dim() -> usize {
    30
}
fn default_beta_match() -> String {
    "entropy".into()
}
fn default_samples() -> usize {
    64
}

/// Analysis toggles shared by the pipelines. Every field has a default, so
/// the block may be omitted entirely.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_unfold_degree")]
    pub unfold_degree: usize,
    /// Fixed low-lying band size for the entanglement gap; auto-detected
    /// when absent.
    #[serde(default)]
    pub band_size: Option<usize>,
    /// Include single-spin electric terms of the retained cut links in the
    /// variational ansatz.
    #[serde(default = "default_true")]
    pub boundary_electric: bool,
    /// Tie ansatz couplings related by translation along the cut.
    #[serde(default = "default_true")]
    pub tie_translation: bool,
    /// `"entropy"` or `"energy"`: which observable the thermal reference
    /// state must match.
    #[serde(default = "default_beta_match")]
    pub beta_match: String,
    /// Reference time of the scaling collapse.
    #[serde(default)]
    pub t_ref: Option<f64>,
    /// Comparison times of the scaling collapse.
    #[serde(default)]
    pub t_tests: Option<Vec<f64>>,
    /// Schmidt index window `[min, max]` of the collapse, 1-based.
    #[serde(default)]
    pub window: Option<(usize, usize)>,
    #[serde(default)]
    pub alpha_grid: Option<GridConfig>,
    #[serde(default)]
    pub beta_grid: Option<GridConfig>,
    #[serde(default)]
    pub eps_t0_grid: Option<GridConfig>,
    #[serde(default = "default_samples")]
    pub scaling_samples: usize,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    /// Spectrum archive consumed by `scaling-fit`; defaults to
    /// `<output dir>/spectra.csv`.
    #[serde(default)]
    pub archive: Option<String>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            unfold_degree: default_unfold_degree(),
            band_size: None,
            boundary_electric: true,
            tie_translation: true,
            beta_match: default_beta_match(),
            t_ref: None,
            t_tests: None,
            window: None,
            alpha_grid: None,
            beta_grid: None,
            eps_t0_grid: None,
            scaling_samples: default_samples(),
            krylov_dim: default_krylov_dim(),
            archive: None,
        }
    }
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out_dir() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Geometries to check; a built-in small-lattice list when absent.
    #[serde(default)]
    pub geometries: Option<Vec<GeometryConfig>>,
}

/// The complete, schema-checked run description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub coupling: Option<CouplingConfig>,
    #[serde(default)]
    pub quench: Option<QuenchConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{path:?}: {e}")))
    }

    fn geometry(&self) -> Result<LatticeGeometry> {
        self.geometry
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing [geometry] block".into()))?
            .to_geometry()
    }

    fn coupling(&self) -> Result<&CouplingConfig> {
        self.coupling
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing [coupling] block".into()))
    }

    fn quench(&self) -> Result<&QuenchConfig> {
        self.quench
            .as_ref()
            .ok_or_else(|| HarnessError::Config("missing [quench] block".into()))
    }

    /// Hash of the canonical serialized form, embedded in every output.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }

    fn scaling_options(&self, eps: f64) -> ScalingOptions {
        let mut opts = ScalingOptions { eps, ..ScalingOptions::default() };
        if let Some(g) = self.analysis.alpha_grid {
            opts.alpha = g.to_range();
        }
        if let Some(g) = self.analysis.beta_grid {
            opts.beta = g.to_range();
        }
        if let Some(g) = self.analysis.eps_t0_grid {
            opts.eps_t0 = g.to_range();
        }
        if let Some(w) = self.analysis.window {
            opts.window = w;
        }
        opts.samples = self.analysis.scaling_samples;
        opts
    }
}

// ---------------------------------------------------------------------------
// Runner

const BYTES_PER_AMP: f64 = 16.0;

pub struct Runner {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub budget_bytes: f64,
}

impl Runner {
    pub fn new(config: RunConfig, out_dir: Option<PathBuf>, seed: u64, budget_gb: f64) -> Self {
        let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(&config.output.dir));
        Runner { config, out_dir, seed, budget_bytes: budget_gb * 1e9 }
    }

    fn preflight(&self, what: &str, bytes: f64) -> Result<()> {
        if bytes > self.budget_bytes {
            return Err(HarnessError::Budget {
                what: what.to_string(),
                required_gb: bytes / 1e9,
                budget_gb: self.budget_bytes / 1e9,
            });
        }
        Ok(())
    }

    fn write_file(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(io_err(&self.out_dir))?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Self-description header shared by every pipeline: config hash, code
    /// version, seed, pipeline name, parameter echo. The timestamp is the
    /// only field allowed to differ between reruns.
    fn write_metadata(&self, pipeline: &str, extra: serde_json::Value) -> Result<()> {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "pipeline": pipeline,
            "config_hash": self.config.hash(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "timestamp_unix": stamp,
            "config": &self.config,
            "results": extra,
        });
        let text = serde_json::to_string_pretty(&meta)
            .map_err(|e| HarnessError::Numeric(e.to_string()))?;
        self.write_file(&format!("{pipeline}_metadata.json"), &text)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Shared building blocks

/// Packed-sector ground-state machinery for one cut-torus coupling. Work
/// happens in the winding sector (v_x, v_y) = (+1, +1); within the
/// topologically ordered phase the four sectors are degenerate and any fixed
/// one represents the ground state.
struct CutRun {
    cut: CutTorusHamiltonian,
    packed: PackedXSector,
    compiled: CompiledHamiltonian,
}

impl CutRun {
    fn build(geom: LatticeGeometry, coupling: Coupling) -> Result<Self> {
        let cut = build_dual_cut_torus(geom, coupling, WindingMode::Fixed { vx: 1, vy: 1 })?;
        let constraints = cut.register.retained_link_constraints()?;
        let syms: Vec<(PauliString, i8)> = constraints.iter().map(|c| (*c, 1)).collect();
        let packed = PackedXSector::build(cut.register.register_size(), &syms)?;
        let compiled = packed.compile(&cut.total())?;
        Ok(CutRun { cut, packed, compiled })
    }

    fn a_size(&self) -> usize {
        self.cut.register.a_size()
    }

    fn register_size(&self) -> usize {
        self.cut.register.register_size()
    }

    fn ground_state(&self, seed: u64) -> Result<(f64, StateVector)> {
        let (e, packed_psi) = ground_state_compiled(&self.compiled, seed)?;
        Ok((e, self.packed.lift(&packed_psi)))
    }

    /// Estimated working set of a packed Lanczos/Krylov solve plus the lifted
    /// state and the reduced density matrix on the smaller side.
    fn footprint_bytes(&self, krylov_dim: usize) -> f64 {
        let packed = (krylov_dim as f64 + 4.0) * BYTES_PER_AMP * (1u64 << self.packed.free_bits()) as f64;
        let lifted = BYTES_PER_AMP * (1u64 << self.register_size()) as f64;
        let side = if self.a_size() <= DENSE_SIDE_LIMIT {
            self.a_size()
        } else {
            self.register_size() - self.a_size()
        };
        // Reduced density matrix plus the rotated copy used for sector
        // resolution, plus eigensolver workspace of comparable size.
        let rho = 3.0 * BYTES_PER_AMP * 4f64.powi(side as i32);
        packed + lifted + rho
    }

    /// Flux sector operators expressed on the A register. Each is the
    /// A-supported factor of a conserved Gauss-law product, so any state in
    /// the physical sector has a block-diagonal reduced density matrix in
    /// their joint eigenbasis (enforced at runtime by the off-block check of
    /// the sector-resolved spectrum).
    fn sector_ops_on_a(&self) -> Result<Vec<PauliString>> {
        let a = self.a_size();
        Ok(self
            .cut
            .register
            .flux_sector_ops()?
            .iter()
            .map(|op| restrict_string(op, a))
            .collect())
    }
}

/// Re-express a Pauli string supported on the low `register` qubits on a
/// register of exactly that size.
fn restrict_string(p: &PauliString, register: usize) -> PauliString {
    PauliString::from_masks(register, p.x_mask(), p.z_mask()).with_sign(p.real_sign())
}

/// Re-express an operator sum supported on the low `register` qubits.
fn restrict_sum(h: &OperatorSum, register: usize) -> Result<OperatorSum> {
    let mask = if register >= 64 { u64::MAX } else { (1u64 << register) - 1 };
    let mut out = OperatorSum::new(register);
    for (c, p) in h.terms() {
        if (p.x_mask() | p.z_mask()) & !mask != 0 {
            return Err(HarnessError::Numeric(format!(
                "operator {p} not supported on the low {register} qubits"
            )));
        }
        out.add(*c, restrict_string(p, register))?;
    }
    Ok(out)
}

/// Render a joint sign pattern as the boundary-flux sector string: one
/// `u`/`d` per flux operator (+1/-1) and a trailing `+`/`-` for the open
/// electric string when present.
fn sector_string(pattern: &[i8]) -> String {
    let n = pattern.len();
    pattern
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i + 1 == n && n % 2 == 1 {
                if *s > 0 {
                    '+'
                } else {
                    '-'
                }
            } else if *s > 0 {
                'u'
            } else {
                'd'
            }
        })
        .collect()
}

/// Largest subsystem register for which the dense reduced-density-matrix
/// solve is still routine.
const DENSE_SIDE_LIMIT: usize = 13;

/// Entanglement spectrum of the lifted state. The flux sector labels live on
/// the A register, so the A-side reduction is used whenever its dense solve
/// is affordable; otherwise the spectrum comes unresolved from the (smaller)
/// B side, which shares the nonzero Schmidt spectrum.
fn spectrum_of_state(run: &CutRun, psi: &StateVector) -> Result<(EntanglementSpectrum, bool)> {
    let a = run.a_size();
    if a <= DENSE_SIDE_LIMIT {
        let rho = reduce_to_a(psi, a)?;
        let ops = run.sector_ops_on_a()?;
        Ok((sector_resolved_spectrum(&rho, &ops)?, true))
    } else {
        let rho = reduce_to_b(psi, a)?;
        Ok((entanglement_spectrum(&rho)?, false))
    }
}

fn fmt_row(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Serialize)]
pub struct VerifyEntry {
    pub geometry: String,
    pub map_violations: usize,
    pub spectrum_checked: bool,
    pub spectrum_max_dev: Option<f64>,
    pub skipped: Option<String>,
}

fn default_verify_geometries() -> Vec<LatticeGeometry> {
    vec![
        LatticeGeometry::torus(2, 2),
        LatticeGeometry::torus(3, 2),
        LatticeGeometry::torus(2, 3),
        LatticeGeometry::cylinder(3, 2),
        LatticeGeometry::cylinder(2, 3),
        LatticeGeometry::cut_torus(2, 2, 2),
        LatticeGeometry::cut_torus(3, 2, 3),
        LatticeGeometry::cut_torus(2, 3, 2),
    ]
}

/// Gauss-projected spectrum of the original formulation, the independent
/// oracle against which dual spectra are compared.
fn original_physical_spectrum(geom: LatticeGeometry, coupling: Coupling) -> Result<Vec<f64>> {
    let (h, gauss) = build_original(geom, coupling)?;
    let syms: Vec<(PauliString, i8)> = gauss.into_iter().map(|g| (g, 1)).collect();
    let basis = XSectorBasis::build(h.register_size(), &syms)?;
    let mut v = eigvals_in_x_sector(&h, &basis)?.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(v)
}

fn max_elementwise_dev(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(HarnessError::Numeric(format!(
            "spectrum dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

impl Runner {
    pub fn run_verify(&self) -> Result<Vec<VerifyEntry>> {
        let eps = 0.7;
        let geoms: Vec<LatticeGeometry> = match &self.config.verify.geometries {
            Some(list) if list.is_empty() => {
                return Err(HarnessError::Config("[verify] geometry list is empty".into()))
            }
            Some(list) => list.iter().map(|g| g.to_geometry()).collect::<Result<_>>()?,
            None => default_verify_geometries(),
        };
        let mut entries = Vec::new();
        let mut bad = 0usize;
        for geom in geoms {
            let report = verify_canonical_map(geom)?;
            let mut entry = VerifyEntry {
                geometry: geom.label(),
                map_violations: report.violations.len(),
                spectrum_checked: false,
                spectrum_max_dev: None,
                skipped: None,
            };
            match self.spectrum_check(geom, eps) {
                Ok(Some(dev)) => {
                    entry.spectrum_checked = true;
                    entry.spectrum_max_dev = Some(dev);
                    if dev > 1e-9 {
                        bad += 1;
                    }
                }
                Ok(None) => entry.skipped = Some("no spectrum oracle at this size".into()),
                Err(e) => return Err(e),
            }
            if !report.is_clean() {
                bad += 1;
            }
            entries.push(entry);
        }
        let rows: String = std::iter::once(fmt_row(&[
            "geometry".into(),
            "map_violations".into(),
            "spectrum_checked".into(),
            "spectrum_max_dev".into(),
            "skipped".into(),
        ]))
        .chain(entries.iter().map(|e| {
            fmt_row(&[
                e.geometry.clone(),
                e.map_violations.to_string(),
                e.spectrum_checked.to_string(),
                e.spectrum_max_dev.map(|d| format!("{d:.3e}")).unwrap_or_default(),
                e.skipped.clone().unwrap_or_default(),
            ])
        }))
        .collect();
        self.write_file("verify.csv", &rows)?;
        self.write_metadata(
            "verify",
            serde_json::json!({ "entries": entries.len(), "failures": bad }),
        )?;
        if bad > 0 {
            return Err(HarnessError::Numeric(format!(
                "{bad} verification failure(s); see verify.csv"
            )));
        }
        Ok(entries)
    }

    /// Max elementwise deviation between a dual spectrum and its oracle, or
    /// `None` when the geometry is too large for the dense oracle.
    fn spectrum_check(&self, geom: LatticeGeometry, eps: f64) -> Result<Option<f64>> {
        match geom.kind {
            crate::lattice::GeometryKind::PeriodicTorus => {
                let links = 2 * geom.nx() * geom.ny;
                let phys_qubits = geom.nx() * geom.ny + 1;
                if links > 18 || phys_qubits > 11 {
                    return Ok(None);
                }
                let phys = original_physical_spectrum(geom, Coupling::Finite(eps))?;
                let (h, _) = build_dual_torus(geom, Coupling::Finite(eps), WindingMode::Explicit)?;
                let (dual, _) = eigh_dense(&h.to_dense())?;
                let mut dual = dual.to_vec();
                dual.sort_by(|a, b| a.partial_cmp(b).unwrap());
                Ok(Some(max_elementwise_dev(&phys, &dual)?))
            }
            crate::lattice::GeometryKind::CutTorus => {
                // The cut construction must reproduce the uncut dual torus
                // exactly within the physical sector of the retained-link
                // constraints; checked in one fixed winding sector.
                let torus = LatticeGeometry::torus(geom.nx(), geom.ny);
                let mode = WindingMode::Fixed { vx: 1, vy: 1 };
                let cut = build_dual_cut_torus(geom, Coupling::Finite(eps), mode)?;
                let constraints = cut.register.retained_link_constraints()?;
                let sector_dim = cut.register.register_size() - constraints.len();
                if sector_dim > 11 || cut.register.register_size() > 22 {
                    return Ok(None);
                }
                let syms: Vec<(PauliString, i8)> = constraints.iter().map(|c| (*c, 1)).collect();
                let basis = XSectorBasis::build(cut.register.register_size(), &syms)?;
                let mut cut_vals = eigvals_in_x_sector(&cut.total(), &basis)?.to_vec();
                cut_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (h, _) = build_dual_torus(torus, Coupling::Finite(eps), mode)?;
                let (uncut, _) = eigh_dense(&h.to_dense())?;
                let mut uncut = uncut.to_vec();
                uncut.sort_by(|a, b| a.partial_cmp(b).unwrap());
                Ok(Some(max_elementwise_dev(&cut_vals, &uncut)?))
            }
            crate::lattice::GeometryKind::OpenCylinder => Ok(None),
        }
    }
}

// ---------------------------------------------------------------------------
// ground-es

impl Runner {
    pub fn run_ground_es(&self) -> Result<EntanglementSpectrum> {
        let geom = self.config.geometry()?;
        let eps = self.config.coupling()?.single()?;
        let run = CutRun::build(geom, Coupling::Finite(eps))?;
        self.preflight("ground-state entanglement spectrum", run.footprint_bytes(30))?;
        let (energy, psi) = run.ground_state(self.seed)?;
        let (spectrum, resolved) = spectrum_of_state(&run, &psi)?;
        let mut rows = fmt_row(&["n".into(), "xi".into(), "lambda".into(), "sector".into()]);
        for (n, level) in spectrum.levels.iter().enumerate() {
            let sector = if resolved {
                sector_string(&spectrum.sector_labels[level.sector])
            } else {
                String::new()
            };
            rows.push_str(&fmt_row(&[
                (n + 1).to_string(),
                format!("{:.12e}", level.xi),
                format!("{:.12e}", level.lambda),
                sector,
            ]));
        }
        self.write_file("ground_es.csv", &rows)?;
        self.write_metadata(
            "ground_es",
            serde_json::json!({
                "geometry": geom.label(),
                "eps": eps,
                "ground_energy": energy,
                "entropy": spectrum.von_neumann_entropy(),
                "levels": spectrum.levels.len(),
                "sector_resolved": resolved,
            }),
        )?;
        Ok(spectrum)
    }
}

// ---------------------------------------------------------------------------
// scan

#[derive(Debug, Serialize)]
pub struct ScanPoint {
    pub eps: f64,
    pub gap: f64,
    pub band_size: usize,
    pub auto_detected: bool,
    pub entropy: f64,
    pub energy: f64,
}

#[derive(Debug, Serialize)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub eps_c: f64,
    pub eps_c_uncertainty: f64,
}

impl Runner {
    pub fn run_scan(&self) -> Result<ScanResult> {
        let geom = self.config.geometry()?;
        let sweep = self.config.coupling()?.list()?;
        if sweep.len() < 3 {
            return Err(HarnessError::Config(
                "gap scan needs a sweep of at least 3 couplings".into(),
            ));
        }
        {
            let probe = CutRun::build(geom, Coupling::Finite(sweep[0]))?;
            let workers = rayon::current_num_threads().min(sweep.len()).max(1);
            self.preflight("gap scan", probe.footprint_bytes(30) * workers as f64)?;
        }
        use rayon::prelude::*;
        let band = self.config.analysis.band_size;
        let seed = self.seed;
        let points: Vec<ScanPoint> = sweep
            .par_iter()
            .map(|&eps| -> Result<ScanPoint> {
                let run = CutRun::build(geom, Coupling::Finite(eps))?;
                let (energy, psi) = run.ground_state(seed)?;
                let (spectrum, _) = spectrum_of_state(&run, &psi)?;
                let gap = entanglement_gap(&spectrum, band)?;
                Ok(ScanPoint {
                    eps,
                    gap: gap.gap,
                    band_size: gap.band_size,
                    auto_detected: gap.auto_detected,
                    entropy: spectrum.von_neumann_entropy(),
                    energy,
                })
            })
            .collect::<Result<_>>()?;
        let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.eps, p.gap)).collect();
        let crit = ent::critical_coupling(&pairs)?;
        let mut rows = fmt_row(&[
            "eps".into(),
            "gap".into(),
            "band_size".into(),
            "auto_detected".into(),
            "entropy".into(),
            "energy".into(),
        ]);
        for p in &points {
            rows.push_str(&fmt_row(&[
                format!("{:.6}", p.eps),
                format!("{:.12e}", p.gap),
                p.band_size.to_string(),
                p.auto_detected.to_string(),
                format!("{:.12e}", p.entropy),
                format!("{:.12e}", p.energy),
            ]));
        }
        self.write_file("scan.csv", &rows)?;
        self.write_metadata(
            "scan",
            serde_json::json!({
                "geometry": geom.label(),
                "eps_c": crit.value,
                "eps_c_uncertainty": crit.uncertainty,
                "slope": crit.slope,
                "points": points.len(),
            }),
        )?;
        Ok(ScanResult { points, eps_c: crit.value, eps_c_uncertainty: crit.uncertainty })
    }
}

// ---------------------------------------------------------------------------
// eh-fit

#[derive(Debug, Serialize)]
pub struct EhFitRecord {
    pub eps: f64,
    pub relative_entropy: f64,
    pub entropy_exact: f64,
    pub entropy_variational: f64,
    pub converged: bool,
    pub evaluations: usize,
}

impl Runner {
    pub fn run_eh_fit(&self) -> Result<Vec<EhFitRecord>> {
        let geom = self.config.geometry()?;
        let eps_list = self.config.coupling()?.list()?;
        let mut beta_rows = fmt_row(&[
            "eps".into(),
            "kind".into(),
            "x".into(),
            "y".into(),
            "desc".into(),
            "beta".into(),
        ]);
        let mut spec_rows =
            fmt_row(&["eps".into(), "n".into(), "xi_exact".into(), "xi_variational".into()]);
        let mut records = Vec::new();
        for &eps in &eps_list {
            let run = CutRun::build(geom, Coupling::Finite(eps))?;
            let a = run.a_size();
            // The relative-entropy objective diagonalizes dense matrices of
            // dimension 2^a per evaluation.
            self.preflight(
                "variational fit",
                run.footprint_bytes(30) + 4.0 * BYTES_PER_AMP * 4f64.powi(a as i32),
            )?;
            let (_, psi) = run.ground_state(self.seed)?;
            let rho = reduce_to_a(&psi, a)?;
            let mut ansatz = subsystem_ansatz(&run.cut.register, self.config.analysis.boundary_electric)?;
            if self.config.analysis.tie_translation {
                ansatz.tie_translation_along_cut();
            }
            let result = fit(&rho, &ansatz, &FitOptions::default())?;
            for (term, beta) in ansatz.terms.iter().zip(&result.betas) {
                beta_rows.push_str(&fmt_row(&[
                    format!("{eps:.6}"),
                    match term.kind {
                        TermKind::Electric => "electric".into(),
                        TermKind::Magnetic => "magnetic".into(),
                    },
                    term.x.to_string(),
                    term.y.to_string(),
                    term.desc.to_string(),
                    format!("{beta:.12e}"),
                ]));
            }
            let exact = entanglement_spectrum(&rho)?.xis();
            let variational = variational_spectrum(&ansatz.terms, &result.betas, a)?;
            for (n, (xe, xv)) in exact.iter().zip(&variational).enumerate() {
                spec_rows.push_str(&fmt_row(&[
                    format!("{eps:.6}"),
                    (n + 1).to_string(),
                    format!("{xe:.12e}"),
                    format!("{xv:.12e}"),
                ]));
            }
            records.push(EhFitRecord {
                eps,
                relative_entropy: result.relative_entropy,
                entropy_exact: result.entropy_exact,
                entropy_variational: result.entropy_variational,
                converged: result.converged,
                evaluations: result.trajectory.len(),
            });
        }
        self.write_file("eh_fit_betas.csv", &beta_rows)?;
        self.write_file("eh_fit_spectrum.csv", &spec_rows)?;
        self.write_metadata("eh_fit", serde_json::json!({ "fits": records }))?;
        if let Some(r) = records.iter().find(|r| !r.converged) {
            return Err(HarnessError::Numeric(format!(
                "variational fit did not converge at eps = {}",
                r.eps
            )));
        }
        Ok(records)
    }
}

/// Entanglement spectrum of the fitted Gibbs ansatz: with modular operator
/// `K = sum beta_n h_n` and eigenvalues `mu_k`, the levels are
/// `xi_k = mu_k + ln Z`.
fn variational_spectrum(
    terms: &[crate::varfit::AnsatzTerm],
    betas: &[f64],
    register: usize,
) -> Result<Vec<f64>> {
    let mut k = OperatorSum::new(register);
    for (term, beta) in terms.iter().zip(betas) {
        k.add(*beta, term.op)?;
    }
    let (mu, _) = eigh_dense(&k.to_dense())?;
    // ln Z = ln sum_k exp(-mu_k), stabilized around the smallest level.
    let mu0 = mu[0];
    let lnz = mu.iter().map(|m| (-(m - mu0)).exp()).sum::<f64>().ln() - mu0;
    Ok(mu.iter().map(|m| m + lnz).collect())
}

// ---------------------------------------------------------------------------
// quench

#[derive(Debug, Clone, Serialize)]
pub struct TimeSeriesRecord {
    pub time: f64,
    pub entropy: f64,
    pub electric_energy: f64,
    pub magnetic_energy: f64,
    pub bhattacharyya: f64,
    pub r_mean: f64,
    pub r_count: usize,
    pub schmidt_rank: usize,
    /// First data row of this time's block in `spectra.csv`.
    pub spectra_offset: usize,
}

impl Runner {
    pub fn run_quench(&self) -> Result<Vec<TimeSeriesRecord>> {
        let geom = self.config.geometry()?;
        let q = self.config.quench()?;
        if q.times.is_empty() || q.times.windows(2).any(|w| w[1] <= w[0]) || q.times[0] < 0.0 {
            return Err(HarnessError::Config(
                "[quench] times must be non-negative and strictly increasing".into(),
            ));
        }
        let krylov = self.config.analysis.krylov_dim;
        let run = CutRun::build(geom, Coupling::Finite(q.eps_final))?;
        self.preflight("quench", run.footprint_bytes(krylov))?;
        let seed = q.initial_state.seed ^ self.seed;
        let mut packed_state = self.initial_state(&run, q, seed)?;
        let opts = EvolveOptions { krylov_dim: krylov, ..EvolveOptions::default() };

        // Split energy observables, compiled once onto the packed register.
        let (mag_w, elec_w) = Coupling::Finite(q.eps_final).weights()?;
        let k = run.register_size();
        let mut h_elec = OperatorSum::new(k);
        let mut h_mag = OperatorSum::new(k);
        for l in run.cut.register.links() {
            h_elec.add(-elec_w, run.cut.register.electric_image(l))?;
        }
        for p in run.cut.register.plaquettes() {
            h_mag.add(-mag_w, run.cut.register.magnetic_image(p))?;
        }
        let c_elec = run.packed.compile(&h_elec)?;
        let c_mag = run.packed.compile(&h_mag)?;

        let mut rows_spec = fmt_row(&["t".into(), "n".into(), "xi".into(), "sector".into()]);
        let mut spec_offset = 1usize;
        let mut records: Vec<TimeSeriesRecord> = Vec::new();
        let mut schmidt: Vec<Vec<f64>> = Vec::new();
        let mut prev_t = 0.0;
        for &t in &q.times {
            if t > prev_t {
                packed_state = evolve_compiled(&packed_state, &run.compiled, t - prev_t, opts)?;
            }
            prev_t = t;
            let psi = run.packed.lift(&packed_state);
            let (spectrum, resolved) = spectrum_of_state(&run, &psi)?;
            let entropy = spectrum.von_neumann_entropy();
            let ratios = gap_ratio_stats(&spectrum);
            let rank = spectrum.levels.len();
            let offset = spec_offset;
            for (n, level) in spectrum.levels.iter().enumerate() {
                let sector = if resolved {
                    sector_string(&spectrum.sector_labels[level.sector])
                } else {
                    String::new()
                };
                rows_spec.push_str(&fmt_row(&[
                    format!("{t:.6}"),
                    (n + 1).to_string(),
                    format!("{:.12e}", level.xi),
                    sector,
                ]));
                spec_offset += 1;
            }
            schmidt.push(spectrum.levels.iter().map(|l| l.lambda).collect());
            records.push(TimeSeriesRecord {
                time: t,
                entropy,
                electric_energy: c_elec.expectation(&packed_state),
                magnetic_energy: c_mag.expectation(&packed_state),
                bhattacharyya: f64::NAN, // filled in below
                r_mean: if ratios.ratios.is_empty() { 0.0 } else { ratios.mean },
                r_count: ratios.ratios.len(),
                schmidt_rank: rank,
                spectra_offset: offset,
            });
        }

        // Thermal reference on A, matched to the final-time state; the
        // Bhattacharyya column then tracks the approach to it.
        let thermal = self.thermal_reference(&run, records.last().unwrap(), &packed_state)?;
        for (rec, p) in records.iter_mut().zip(&schmidt) {
            rec.bhattacharyya = stats::bhattacharyya(p, &thermal)?;
        }

        let mut rows_ts = fmt_row(&[
            "t".into(),
            "entropy".into(),
            "electric_energy".into(),
            "magnetic_energy".into(),
            "bhattacharyya".into(),
            "r_mean".into(),
            "r_count".into(),
            "schmidt_rank".into(),
            "spectra_offset".into(),
        ]);
        for r in &records {
            rows_ts.push_str(&fmt_row(&[
                format!("{:.6}", r.time),
                format!("{:.12e}", r.entropy),
                format!("{:.12e}", r.electric_energy),
                format!("{:.12e}", r.magnetic_energy),
                format!("{:.12e}", r.bhattacharyya),
                format!("{:.12e}", r.r_mean),
                r.r_count.to_string(),
                r.schmidt_rank.to_string(),
                r.spectra_offset.to_string(),
            ]));
        }
        self.write_file("timeseries.csv", &rows_ts)?;
        self.write_file("spectra.csv", &rows_spec)?;
        self.write_metadata(
            "quench",
            serde_json::json!({
                "geometry": geom.label(),
                "eps_final": q.eps_final,
                "initial_mode": q.initial_state.mode,
                "time_points": records.len(),
                "final_entropy": records.last().map(|r| r.entropy),
                "final_r_mean": records.last().map(|r| r.r_mean),
            }),
        )?;
        Ok(records)
    }

    /// Prepare the pre-quench state on the packed register.
    ///
    /// `electric_product`: a seeded random computational-basis label of the
    /// packed register, which lifts to a random product state in the rotated
    /// basis, i.e. an exact eigenstate of the pure-electric Hamiltonian that
    /// satisfies the sector constraints. `random_eigenstate`: a uniform draw
    /// from the middle half of the dense pre-quench spectrum. At infinite
    /// initial coupling the eigenbasis is the product basis, so both modes
    /// coincide and the product route is used.
    fn initial_state(&self, run: &CutRun, q: &QuenchConfig, seed: u64) -> Result<StateVector> {
        let free = run.packed.free_bits();
        let dim = run.packed.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let infinite = matches!(q.eps_initial.to_coupling(), Coupling::Infinite);
        match q.initial_state.mode.as_str() {
            "electric_product" => Ok(StateVector::basis_state(free, rng.gen_range(0..dim) as usize)),
            "random_eigenstate" if infinite => {
                Ok(StateVector::basis_state(free, rng.gen_range(0..dim) as usize))
            }
            "random_eigenstate" => {
                self.preflight(
                    "dense pre-quench eigenbasis",
                    2.0 * BYTES_PER_AMP * (dim as f64) * (dim as f64),
                )?;
                if free > 13 {
                    return Err(HarnessError::Numeric(format!(
                        "random_eigenstate needs a dense solve; packed register {free} > 13 qubits"
                    )));
                }
                let cut0 = build_dual_cut_torus(
                    run.cut.register.geometry,
                    q.eps_initial.to_coupling(),
                    WindingMode::Fixed { vx: 1, vy: 1 },
                )?;
                let c0 = run.packed.compile(&cut0.total())?;
                let dense = dense_of_compiled(&c0);
                let (_, vecs) = eigh_dense(&dense)?;
                let n = dim as usize;
                let pick = rng.gen_range(n / 4..(3 * n / 4).max(n / 4 + 1));
                Ok(StateVector::new(vecs.column(pick).to_owned(), free))
            }
            other => Err(HarnessError::Config(format!(
                "unknown initial-state mode '{other}' (expected 'random_eigenstate' or 'electric_product')"
            ))),
        }
    }

    /// Descending Schmidt spectrum of the thermal state of H_A whose entropy
    /// or energy matches the late-time reduced state.
    fn thermal_reference(
        &self,
        run: &CutRun,
        last: &TimeSeriesRecord,
        final_state: &StateVector,
    ) -> Result<Vec<f64>> {
        let a = run.a_size();
        if a > 13 {
            return Err(HarnessError::Numeric(format!(
                "thermal reference needs a dense solve on A; a_size {a} > 13"
            )));
        }
        let h_a = restrict_sum(&run.cut.h_a, a)?;
        let target = match self.config.analysis.beta_match.as_str() {
            "entropy" => MatchTarget::Entropy(last.entropy),
            "energy" => {
                // <H_A> of the final-time state, evaluated on the packed
                // register (equal to Tr[rho_A H_A]).
                let c_ha = run.packed.compile(&run.cut.h_a)?;
                MatchTarget::Energy(c_ha.expectation(final_state))
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown beta_match '{other}' (expected 'entropy' or 'energy')"
                )))
            }
        };
        let (_, rho) = match_beta(&h_a, target)?;
        let mut vals: Vec<f64> = rho.eigenvalues()?.iter().cloned().filter(|p| *p > 0.0).collect();
        vals.sort_by(|x, y| y.partial_cmp(x).unwrap());
        Ok(vals)
    }
}

/// Dense matrix of a compiled Hamiltonian, built column by column.
fn dense_of_compiled(h: &CompiledHamiltonian) -> ndarray::Array2<crate::Complex64> {
    let dim = 1usize << h.register_size();
    let mut out = ndarray::Array2::zeros((dim, dim));
    let mut basis = ndarray::Array1::zeros(dim);
    let mut col = ndarray::Array1::zeros(dim);
    for j in 0..dim {
        basis[j] = crate::Complex64::new(1.0, 0.0);
        h.apply_into(&basis, &mut col);
        out.column_mut(j).assign(&col);
        basis[j] = crate::Complex64::new(0.0, 0.0);
    }
    out
}

// ---------------------------------------------------------------------------
// scaling-fit

impl Runner {
    pub fn run_scaling_fit(&self) -> Result<stats::ScalingFit> {
        let archive = match &self.config.analysis.archive {
            Some(p) => PathBuf::from(p),
            None => self.out_dir.join("spectra.csv"),
        };
        let spectra = read_spectra_archive(&archive)?;
        let t_ref = self.config.analysis.t_ref.ok_or_else(|| {
            HarnessError::Config("scaling-fit needs [analysis] t_ref".into())
        })?;
        let t_tests = self
            .config
            .analysis
            .t_tests
            .clone()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| HarnessError::Config("scaling-fit needs [analysis] t_tests".into()))?;
        let eps = self.config.quench.as_ref().map(|q| q.eps_final).unwrap_or(1.0);
        let opts = self.config.scaling_options(eps);
        let fit = scaling_fit(&spectra, t_ref, &t_tests, &opts)?;
        let mut marg = fmt_row(&["parameter".into(), "value".into(), "likelihood".into()]);
        for (name, m) in [
            ("alpha", &fit.marginal_alpha),
            ("beta", &fit.marginal_beta),
            ("eps_t0", &fit.marginal_eps_t0),
        ] {
            for (v, w) in m.values.iter().zip(&m.density) {
                marg.push_str(&fmt_row(&[
                    name.into(),
                    format!("{v:.6}"),
                    format!("{w:.12e}"),
                ]));
            }
        }
        self.write_file("scaling_marginals.csv", &marg)?;
        self.write_metadata(
            "scaling_fit",
            serde_json::json!({
                "alpha": fit.alpha,
                "alpha_err": fit.alpha_err,
                "beta": fit.beta,
                "beta_err": fit.beta_err,
                "eps_t0": fit.eps_t0,
                "eps_t0_err": fit.eps_t0_err,
                "chi2_min": fit.chi2_min,
                "best": fit.best,
                "window_clipped": fit.window_clipped,
                "archive": archive.display().to_string(),
            }),
        )?;
        Ok(fit)
    }
}

/// Parse a `spectra.csv` archive back into `(t, descending P(n))` pairs.
fn read_spectra_archive(path: &Path) -> Result<Vec<(f64, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut by_time: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let bad = || HarnessError::Config(format!("{path:?}:{}: malformed archive row", i + 1));
        let t: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let _n = it.next().ok_or_else(bad)?;
        let xi: f64 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        by_time.entry(t.to_bits()).or_insert_with(|| (t, Vec::new())).1.push((-xi).exp());
    }
    if by_time.is_empty() {
        return Err(HarnessError::Config(format!("{path:?}: no spectra found")));
    }
    let mut out: Vec<(f64, Vec<f64>)> = by_time.into_values().collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (_, p) in &mut out {
        p.sort_by(|x, y| y.partial_cmp(x).unwrap());
    }
    Ok(out)
}
