//! Experiment orchestration: the TOML configuration, the run manifest with checksums, and the
//! `constants`, `moments`, `solve`, `converge` and `validate` commands.
//!
//! Every CSV starts with `# schema=1` and a provenance line carrying the artifact version, the
//! configuration hash and the seed. Runs are deterministic: the same configuration reproduces
//! byte-identical files.

use crate::diagrams::{mc_moment, CoupledUpsilon, DiagramError, McSetup, MomentReport, MomentSymbol, Statistic, UpsilonConfig, UpsilonModel};
use crate::fourier::{decode_snapshot, snapshot_bytes, DispersionQ, FourierError, FourierField, FrequencyLattice};
use crate::gaussian::NoiseSeed;
use crate::renorm::{default_cutoff, limit_renorm_set, renorm_set, standard_cutoff, KernelMethod, KernelOpts, Potential, RenormError, RenormOptions, RenormSet};
use crate::solver::{pair_difference, solve, solve_coupled, y_norm, SolverConfig, SolverError, SolverMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA: &str = "# schema=1";
pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Renorm(#[from] RenormError),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("regenerated {0} differs from the persisted file")]
    NotReproducible(String),
    #[error("audit failed: {0}")]
    AuditFailed(String),
}

impl HarnessError {
    /// Stable machine-readable reason.
    pub fn reason(&self) -> &'static str {
        match self {
            HarnessError::Usage(_) => "usage",
            HarnessError::Config(_) => "config",
            HarnessError::Renorm(RenormError::GrowthViolation(_)) => "growth_violation",
            HarnessError::Renorm(_) => "renorm",
            HarnessError::Diagram(_) => "diagrams",
            HarnessError::Solver(_) => "solver",
            HarnessError::Fourier(_) => "fourier",
            HarnessError::Io { .. } => "io",
            HarnessError::Checksum(_) => "checksum",
            HarnessError::NotReproducible(_) => "not_reproducible",
            HarnessError::AuditFailed(_) => "audit_failed",
        }
    }

    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Config(_) => 3,
            HarnessError::Checksum(_) | HarnessError::NotReproducible(_) => 4,
            HarnessError::AuditFailed(_) => 6,
            _ => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Named family of the smoothing symbol `Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    /// `laplacian` (`z^2`), `bilaplacian` (`z^2 + nu z^4`) or `polynomial` (`z^2 sum c_j z^{2j}`).
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
}

impl SymbolSpec {
    pub fn build(&self, eps: f64) -> Result<DispersionQ> {
        match self.family.as_str() {
            "laplacian" => Ok(DispersionQ::laplacian(eps)),
            "bilaplacian" => Ok(DispersionQ::bilaplacian(self.nu.unwrap_or(1.0), eps)),
            "polynomial" => match &self.coeffs {
                Some(c) if !c.is_empty() => Ok(DispersionQ::polynomial(c.clone(), eps)),
                _ => Err(HarnessError::Config("polynomial symbol needs coeffs".into())),
            },
            f => Err(HarnessError::Config(format!("unknown symbol family {f:?}"))),
        }
    }
}

/// `V(x) = sum_j coeffs[j-1] x^{2j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub coeffs: Vec<f64>,
}

/// Rule tying the Galerkin cutoff to `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSpec {
    /// `scaled` (`ceil(factor/eps)`), `standard` (`floor(1/eps)`) or `fixed` (`k`).
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

impl Default for CutoffSpec {
    fn default() -> Self {
        Self { rule: "scaled".into(), factor: Some(4.0), k: None }
    }
}

impl CutoffSpec {
    pub fn cutoff(&self, eps: f64) -> Result<usize> {
        match self.rule.as_str() {
            "scaled" => {
                let f = self.factor.unwrap_or(4.0);
                if f == 4.0 {
                    Ok(default_cutoff(eps))
                } else {
                    Ok((f / eps - 1e-9).ceil() as usize)
                }
            }
            "standard" => Ok(standard_cutoff(eps)),
            "fixed" => self.k.ok_or_else(|| HarnessError::Config("fixed cutoff needs k".into())),
            r => Err(HarnessError::Config(format!("unknown cutoff rule {r:?}"))),
        }
    }

    pub fn describe(&self) -> String {
        match self.rule.as_str() {
            "scaled" => format!("ceil({}/eps)", self.factor.unwrap_or(4.0)),
            "standard" => "floor(1/eps)".into(),
            _ => format!("{}", self.k.unwrap_or(0)),
        }
    }
}

/// Lattice-sum settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// `auto`, `direct` or `transform`.
    pub method: String,
    pub tol: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { method: "auto".into(), tol: 1e-10 }
    }
}

impl KernelSpec {
    fn opts(&self) -> Result<KernelOpts> {
        let method = match self.method.as_str() {
            "auto" => KernelMethod::Auto,
            "direct" => KernelMethod::Direct,
            "transform" => KernelMethod::Transform,
            m => return Err(HarnessError::Config(format!("unknown kernel method {m:?}"))),
        };
        Ok(KernelOpts { method, tol: self.tol })
    }
}

/// Monte Carlo audit settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsSpec {
    pub samples: usize,
    /// `1`, `1^n` or component tags such as `2'`, `3'0`.
    pub symbols: Vec<String>,
    pub modes: Vec<[i64; 3]>,
    /// `second_moment`, `mean` or `covariance`.
    pub statistic: String,
    #[serde(default)]
    pub lag_steps: u64,
    pub dt: f64,
    #[serde(default)]
    pub steps: u64,
    pub t_burn: f64,
    pub dt_burn: f64,
    /// Use the discrete-time constants of the step `dt` (exact centring of the stepped objects).
    #[serde(default = "yes")]
    pub discrete_constants: bool,
    /// Largest accepted `|z|`.
    #[serde(default = "four")]
    pub z_max: f64,
}

fn yes() -> bool {
    true
}
fn four() -> f64 {
    4.0
}

/// Solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    /// Overrides the coupling constant of the model (`0` gives the linear flow).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "kappa")]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default = "sequential")]
    pub mode: SolverMode,
    #[serde(default = "iters")]
    pub picard_iters: usize,
    #[serde(default = "ptol")]
    pub picard_tol: f64,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default = "one")]
    pub sub: usize,
    #[serde(default = "burn")]
    pub t_burn: f64,
    #[serde(default = "dburn")]
    pub dt_burn: f64,
    /// `w(0)` is this constant; `v(0) = 0`.
    #[serde(default)]
    pub w0: f64,
    /// Write a snapshot of `Phi` every this many recorded times (`0` disables snapshots).
    #[serde(default = "one")]
    pub snapshot_every: usize,
}

fn kappa() -> f64 {
    0.05
}
fn sequential() -> SolverMode {
    SolverMode::Sequential
}
fn iters() -> usize {
    200
}
fn ptol() -> f64 {
    1e-8
}
fn one() -> usize {
    1
}
fn burn() -> f64 {
    10.0
}
fn dburn() -> f64 {
    1e-2
}

/// Whole experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default = "seed")]
    pub seed: u64,
    pub eps: Vec<f64>,
    pub symbol: SymbolSpec,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub cutoff: CutoffSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
}

fn seed() -> u64 {
    1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Canonical TOML text; `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("configuration is serialisable")
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        sha256_hex(self.emit().as_bytes())[..16].to_string()
    }

    pub fn potential(&self) -> Result<Potential> {
        Ok(Potential::new(self.potential.coeffs.clone())?)
    }

    /// Structural checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(HarnessError::Usage("the eps list is empty".into()));
        }
        if self.eps.iter().any(|e| !(e.is_finite() && *e > 0.0 && *e <= 1.0)) {
            return Err(HarnessError::Config("every eps must lie in (0, 1]".into()));
        }
        self.symbol.build(self.eps[0])?;
        self.potential()?;
        self.kernel.opts()?;
        for &e in &self.eps {
            self.cutoff.cutoff(e)?;
        }
        if let Some(m) = &self.moments {
            if m.samples == 0 {
                return Err(HarnessError::Config("moments.samples must be positive".into()));
            }
            if m.symbols.is_empty() || m.modes.is_empty() {
                return Err(HarnessError::Config("moments need symbols and modes".into()));
            }
            for s in &m.symbols {
                MomentSymbol::parse(s).ok_or_else(|| HarnessError::Config(format!("unknown symbol {s:?}")))?;
            }
            statistic(m)?;
            if !(m.dt > 0.0 && m.t_burn >= 0.0 && m.dt_burn > 0.0) {
                return Err(HarnessError::Config("moments need dt > 0, t_burn >= 0, dt_burn > 0".into()));
            }
        }
        if let Some(s) = &self.solver {
            let n = self.potential()?.n();
            self.solver_config(s, self.eps[0], 1.0, 0, n).validate(n)?;
            if s.sub == 0 || !(s.dt_burn > 0.0) || s.t_burn < 0.0 {
                return Err(HarnessError::Config("solver needs sub >= 1, dt_burn > 0, t_burn >= 0".into()));
            }
        }
        Ok(())
    }

    fn solver_config(&self, s: &SolverSpec, eps: f64, model_lambda: f64, k: usize, n: usize) -> SolverConfig {
        let mut c = SolverConfig::new(eps, s.lambda.unwrap_or(model_lambda), s.dt, s.t_end, k, n);
        c.kappa = s.kappa;
        c.delta0 = s.delta0.unwrap_or(s.kappa / (2 * n) as f64);
        c.mode = s.mode;
        c.picard_iters = s.picard_iters;
        c.picard_tol = s.picard_tol;
        c.record_stride = s.record_stride;
        c
    }

    fn upsilon_config(s: &SolverSpec) -> UpsilonConfig {
        UpsilonConfig { dt: s.dt, sub: s.sub, t_burn: s.t_burn, dt_burn: s.dt_burn, sample: 0 }
    }

    fn need_moments(&self) -> Result<&MomentsSpec> {
        self.moments.as_ref().ok_or_else(|| HarnessError::Config("missing [moments] table".into()))
    }

    fn need_solver(&self) -> Result<&SolverSpec> {
        self.solver.as_ref().ok_or_else(|| HarnessError::Config("missing [solver] table".into()))
    }

    /// Constants of the `eps`-model at cutoff `k`.
    fn renorm(&self, eps: f64, k: usize, dt: Option<f64>) -> Result<(DispersionQ, Potential, RenormSet)> {
        let q = self.symbol.build(eps)?;
        let v = self.potential()?;
        let opts = RenormOptions { dt, kernel: self.kernel.opts()?, ..Default::default() };
        let r = renorm_set(&q, &v, k, &opts)?;
        Ok((q, v, r))
    }
}

fn statistic(m: &MomentsSpec) -> Result<Statistic> {
    match m.statistic.as_str() {
        "second_moment" => Ok(Statistic::SecondMoment),
        "mean" => Ok(Statistic::Mean),
        "covariance" => Ok(Statistic::Covariance { lag_steps: m.lag_steps }),
        s => Err(HarnessError::Config(format!("unknown statistic {s:?}"))),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in d.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Header lines of every CSV.
pub fn csv_preamble(cfg: &ExperimentConfig, command: &str) -> String {
    format!(
        "{SCHEMA}\n# version={VERSION} config_hash={} seed={} command={command} cutoff={}\n",
        cfg.hash(),
        cfg.seed,
        cfg.cutoff.describe()
    )
}

/// One output file of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Record of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Blow-up time per `eps` (negative when none occurred).
    #[serde(default)]
    pub blowup: Vec<f64>,
    pub files: Vec<FileEntry>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("manifest is serialisable")
    }

    /// Recomputes every checksum.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            let p = dir.join(&f.path);
            let bytes = std::fs::read(&p).map_err(io_err(&p))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(HarnessError::Checksum(f.path.clone()));
            }
        }
        Ok(())
    }
}

/// In-memory output of a command: relative path to bytes, in write order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub blowup: Vec<f64>,
    /// One-line human summary.
    pub summary: String,
}

impl RunOutput {
    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files.iter().find(|(p, _)| p == path).map(|(_, b)| b.as_slice())
    }

    pub fn text(&self, path: &str) -> Option<String> {
        self.get(path).map(|b| String::from_utf8_lossy(b).into_owned())
    }
}

/// Writes the files and a manifest into `dir`.
pub fn persist(dir: &Path, command: &str, cfg: &ExperimentConfig, out: &RunOutput) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for (rel, bytes) in &out.files {
        let p = dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&p, bytes).map_err(io_err(&p))?;
        files.push(FileEntry { path: rel.clone(), sha256: sha256_hex(bytes) });
    }
    let m = Manifest {
        version: VERSION.into(),
        command: command.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        blowup: out.blowup.clone(),
        files,
        config: cfg.clone(),
    };
    let p = dir.join(MANIFEST);
    std::fs::write(&p, m.emit()).map_err(io_err(&p))?;
    Ok(m)
}

/// Sweep of the renormalisation constants over the `eps` list.
pub fn cmd_constants(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut csv = csv_preamble(cfg, "constants");
    csv.push_str(crate::renorm::CSV_HEADER);
    csv.push('\n');
    let mut lam = f64::NAN;
    for &eps in &cfg.eps {
        let k = cfg.cutoff.cutoff(eps)?;
        let (_, _, r) = cfg.renorm(eps, k, None)?;
        lam = r.lambda;
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    Ok(RunOutput {
        files: vec![("constants.csv".into(), csv.into_bytes())],
        blowup: vec![],
        summary: format!("{} rows, lambda = {lam:.10}", cfg.eps.len()),
    })
}

/// Monte Carlo moment audit: one report per `eps`, symbol and mode; fails when `|z| > z_max`.
/// The table is returned in both cases; the verdict is the last comment line.
pub fn cmd_moments(cfg: &ExperimentConfig) -> Result<(RunOutput, bool)> {
    cfg.validate()?;
    let m = cfg.need_moments()?;
    let stat = statistic(m)?;
    let mut csv = csv_preamble(cfg, "moments");
    csv.push_str("eps,");
    csv.push_str(MomentReport::CSV_HEADER);
    csv.push('\n');
    let mut worst: f64 = 0.0;
    for &eps in &cfg.eps {
        let k = cfg.cutoff.cutoff(eps)?;
        let (q, v, r) = cfg.renorm(eps, k, m.discrete_constants.then_some(m.dt))?;
        let model = UpsilonModel::new(&q, &v, k, r)?;
        let setup = McSetup { model, cfg: UpsilonConfig { dt: m.dt, sub: 1, t_burn: m.t_burn, dt_burn: m.dt_burn, sample: 0 }, steps: m.steps };
        for s in &m.symbols {
            let sym = MomentSymbol::parse(s).expect("validated");
            for &mode in &m.modes {
                let rep = mc_moment(&setup, sym, stat, mode, m.samples, NoiseSeed::new(cfg.seed))?;
                if let Some(z) = rep.z {
                    worst = worst.max(z.abs());
                }
                let _ = writeln!(csv, "{eps},{}", rep.csv_row());
            }
        }
    }
    let pass = worst <= m.z_max;
    let _ = writeln!(csv, "# verdict={} max_abs_z={worst:.4}", if pass { "pass" } else { "fail" });
    let out = RunOutput {
        files: vec![("moments.csv".into(), csv.into_bytes())],
        blowup: vec![],
        summary: format!("max |z| = {worst:.3} ({})", if pass { "pass" } else { "fail" }),
    };
    Ok((out, pass))
}

fn constant_field(k: usize, c: f64) -> FourierField {
    FourierField::constant(FrequencyLattice::minimal(k), c)
}

/// Remainder solves, one per `eps`, with `Phi` snapshots and a trajectory table.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let s = cfg.need_solver()?;
    let mut csv = csv_preamble(cfg, "solve");
    csv.push_str("eps,K,lambda,t,v_l2,w_l2,phi_l2,phi_mean\n");
    let mut files = Vec::new();
    let mut blow = Vec::new();
    for (ie, &eps) in cfg.eps.iter().enumerate() {
        let k = cfg.cutoff.cutoff(eps)?;
        let (q, v, r) = cfg.renorm(eps, k, None)?;
        let n = v.n();
        let model = UpsilonModel::new(&q, &v, k, r)?;
        let scfg = cfg.solver_config(s, eps, model.lambda(), k, n);
        let drv = CoupledUpsilon::new(NoiseSeed::new(cfg.seed), vec![model], ExperimentConfig::upsilon_config(s))?;
        let sol = solve(&scfg, &drv, 0, &constant_field(k, 0.0), &constant_field(k, s.w0))?;
        let phi = sol.phi();
        for (i, t) in sol.pair.t_grid.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{eps},{k},{},{t:.10e},{:.12e},{:.12e},{:.12e},{:.12e}",
                scfg.lambda,
                sol.pair.v[i].norm2_sq().sqrt(),
                sol.pair.w[i].norm2_sq().sqrt(),
                phi[i].norm2_sq().sqrt(),
                phi[i].get([0, 0, 0]).re
            );
            if s.snapshot_every > 0 && (i % s.snapshot_every == 0 || i + 1 == phi.len()) {
                files.push((format!("snapshots/eps{ie}_phi_{i:05}.bin"), snapshot_bytes(&phi[i])));
            }
        }
        blow.push(sol.blowup.unwrap_or(-1.0));
        if let Some(tb) = sol.blowup {
            let _ = writeln!(csv, "# blowup eps={eps} t={tb}");
        }
    }
    files.insert(0, ("solve.csv".into(), csv.into_bytes()));
    let summary = format!("{} solves, blow-ups: {}", cfg.eps.len(), blow.iter().filter(|b| **b >= 0.0).count());
    Ok(RunOutput { files, blowup: blow, summary })
}

/// One row of the convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergeRow {
    pub eps: f64,
    pub k: usize,
    /// Grid `Y` distance (the `eps` form of the norm) between the `eps` and limiting pairs.
    pub y_distance: f64,
    /// Same in the limiting form of the norm.
    pub y_distance_limit_norm: f64,
    /// Largest relative `L^2` distance of the reconstructed solutions over the recorded times.
    pub phi_distance: f64,
}

/// Matched-seed solves at every `eps` and at the limit, all at one cutoff, and their distances.
pub fn converge_rows(cfg: &ExperimentConfig) -> Result<Vec<ConvergeRow>> {
    cfg.validate()?;
    let s = cfg.need_solver()?;
    let ks: Vec<usize> = cfg.eps.iter().map(|&e| cfg.cutoff.cutoff(e)).collect::<Result<_>>()?;
    let k = ks[0];
    if ks.iter().any(|&x| x != k) {
        return Err(HarnessError::Config("converge needs one cutoff for all eps (use rule = \"fixed\")".into()));
    }
    let v = cfg.potential()?;
    let n = v.n();
    let mut models = Vec::new();
    let mut cfgs = Vec::new();
    let mut lam = f64::NAN;
    for &eps in &cfg.eps {
        let (q, v, r) = cfg.renorm(eps, k, None)?;
        lam = r.lambda;
        let m = UpsilonModel::new(&q, &v, k, r)?;
        cfgs.push(cfg.solver_config(s, eps, m.lambda(), k, n));
        models.push(m);
    }
    let lim = UpsilonModel::limit(limit_renorm_set(lam, k, None)?)?;
    let mut lc = cfg.solver_config(s, 0.0, lam, k, 2);
    lc.delta0 = cfgs[0].delta0.min(lc.delta0);
    cfgs.push(lc);
    models.push(lim);
    let drv = CoupledUpsilon::new(NoiseSeed::new(cfg.seed), models, ExperimentConfig::upsilon_config(s))?;
    let inits: Vec<_> = cfgs.iter().map(|_| (constant_field(k, 0.0), constant_field(k, s.w0))).collect();
    let sols = solve_coupled(&cfgs, &drv, &inits)?;
    let (limit, members) = sols.split_last().expect("limit appended");
    let lim_phi = limit.phi();
    members
        .iter()
        .zip(&cfg.eps)
        .map(|(sol, &eps)| {
            let d = pair_difference(&sol.pair, &limit.pair)?;
            let t = s.t_end.min(*d.t_grid.last().unwrap_or(&0.0));
            let phi = sol.phi();
            let pd = phi.iter().zip(&lim_phi).map(|(a, b)| crate::solver::relative_l2(a, b)).fold(0.0, f64::max);
            Ok(ConvergeRow {
                eps,
                k,
                y_distance: y_norm(&d, eps, t, s.kappa, cfgs[0].delta0)?,
                y_distance_limit_norm: y_norm(&d, 0.0, t, s.kappa, cfgs[0].delta0)?,
                phi_distance: pd,
            })
        })
        .collect()
}

/// `true` when the distances decrease along the `eps` list sorted downwards.
pub fn decreasing_trend(rows: &[ConvergeRow]) -> bool {
    let mut r: Vec<&ConvergeRow> = rows.iter().collect();
    r.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    r.windows(2).all(|w| w[1].y_distance < w[0].y_distance)
}

pub fn cmd_converge(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let rows = converge_rows(cfg)?;
    let trend = decreasing_trend(&rows);
    let mut csv = csv_preamble(cfg, "converge");
    csv.push_str("eps,K,y_distance,y_distance_limit_norm,phi_distance\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:.12e},{:.12e},{:.12e}", r.eps, r.k, r.y_distance, r.y_distance_limit_norm, r.phi_distance);
    }
    let _ = writeln!(csv, "# trend={}", if trend { "decreasing" } else { "not_decreasing" });
    Ok(RunOutput {
        files: vec![("converge.csv".into(), csv.into_bytes())],
        blowup: vec![],
        summary: format!("trend {}", if trend { "decreasing" } else { "not decreasing" }),
    })
}

/// Runs `command` on `cfg`; the moment audit returns its verdict as an error after writing.
pub fn run(command: &str, cfg: &ExperimentConfig) -> Result<(RunOutput, Option<HarnessError>)> {
    match command {
        "constants" => Ok((cmd_constants(cfg)?, None)),
        "moments" => {
            let (out, pass) = cmd_moments(cfg)?;
            let err = (!pass).then(|| HarnessError::AuditFailed(out.summary.clone()));
            Ok((out, err))
        }
        "solve" => Ok((cmd_solve(cfg)?, None)),
        "converge" => Ok((cmd_converge(cfg)?, None)),
        c => Err(HarnessError::Usage(format!("unknown command {c:?}"))),
    }
}

/// Runs a command into `dir`. A finished run of the same configuration already in `dir` is
/// verified against its checksums and reused instead of recomputed.
pub fn run_into(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<(Manifest, Option<HarnessError>, bool)> {
    if dir.join(MANIFEST).exists() {
        let m = Manifest::load(dir)?;
        if m.command == command && m.config_hash == cfg.hash() && m.version == VERSION {
            m.verify(dir)?;
            return Ok((m, None, true));
        }
    }
    let (out, verdict) = run(command, cfg)?;
    let m = persist(dir, command, cfg, &out)?;
    Ok((m, verdict, false))
}

/// Checks a persisted run: checksums, snapshot decoding, and optionally that a fresh run of the
/// embedded configuration reproduces every file byte for byte.
pub fn cmd_validate(dir: &Path, regenerate: bool) -> Result<Manifest> {
    let m = Manifest::load(dir)?;
    m.verify(dir)?;
    for f in m.files.iter().filter(|f| f.path.ends_with(".bin")) {
        let p = dir.join(&f.path);
        let bytes = std::fs::read(&p).map_err(io_err(&p))?;
        decode_snapshot(&bytes)?;
    }
    if regenerate {
        let (out, _) = run(&m.command, &m.config)?;
        for f in &m.files {
            match out.get(&f.path) {
                Some(b) if sha256_hex(b) == f.sha256 => {}
                _ => return Err(HarnessError::NotReproducible(f.path.clone())),
            }
        }
    }
    Ok(m)
}

/// Parses a comma-separated list of reals.
pub fn parse_eps_list(s: &str) -> Result<Vec<f64>> {
    let v: std::result::Result<Vec<f64>, _> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::parse).collect();
    match v {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err(HarnessError::Usage("the eps list is empty".into())),
        Err(e) => Err(HarnessError::Usage(format!("bad eps list {s:?}: {e}"))),
    }
}
