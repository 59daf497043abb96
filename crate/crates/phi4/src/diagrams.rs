//! The seven stochastic objects driving the remainder equation, streamed in time from one free
//! field, together with Wick-contraction second moments, Monte Carlo audits, the shell
//! regularity diagnostic and the enhanced-noise norm.

use crate::besov::{besov_norm, res_phys, Blocks, GridOps};
use crate::fft::good_size;
use crate::fourier::{DispersionQ, FourierError, FourierField, FrequencyLattice};
use crate::gaussian::{chaos_coefficients, CoupledOU, GaussianError, NoiseSeed, Phase};
use crate::poly::{factorial, Poly};
use crate::renorm::{Potential, RenormError, RenormSet, TimeKernel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Renorm(#[from] RenormError),
    #[error("constants do not match the model: {0}")]
    Mismatch(String),
    #[error("unsupported symbol {0}")]
    Unsupported(String),
    #[error("lattice sum with {terms:.3e} terms is not feasible")]
    Infeasible { terms: f64 },
    #[error("time grid ends at {have} but {want} was requested")]
    InsufficientGrid { have: f64, want: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DiagramError>;

/// Component tags in their canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    ZeroP,
    OneP,
    TwoP,
    ThreeZero,
    ThreeOneP,
    TwoTwoP,
    ThreeTwoP,
}

impl Tag {
    pub const ALL: [Tag; 7] = [Tag::ZeroP, Tag::OneP, Tag::TwoP, Tag::ThreeZero, Tag::ThreeOneP, Tag::TwoTwoP, Tag::ThreeTwoP];

    pub fn name(self) -> &'static str {
        match self {
            Tag::ZeroP => "0'",
            Tag::OneP => "1'",
            Tag::TwoP => "2'",
            Tag::ThreeZero => "3'0",
            Tag::ThreeOneP => "3'1'",
            Tag::TwoTwoP => "2'2'",
            Tag::ThreeTwoP => "3'2'",
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Besov exponent of the component.
    pub fn regularity(self, kappa: f64) -> f64 {
        match self {
            Tag::ZeroP => -kappa,
            Tag::OneP => -0.5 - kappa,
            Tag::TwoP => -1.0 - kappa,
            Tag::ThreeZero => 0.5 - kappa,
            Tag::ThreeOneP => -kappa,
            Tag::TwoTwoP => -kappa,
            Tag::ThreeTwoP => -0.5 - kappa,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Fourier bands (as multiples of the cutoff) of the objects built from a potential of degree `2n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bands {
    pub k: usize,
    pub n: usize,
}

impl Bands {
    pub fn zero_p(&self) -> usize {
        (2 * self.n - 4) * self.k
    }
    pub fn one_p(&self) -> usize {
        (2 * self.n - 3) * self.k
    }
    pub fn two_p(&self) -> usize {
        (2 * self.n - 2) * self.k
    }
    pub fn three_one(&self) -> usize {
        (2 * self.n - 2) * self.k
    }
    pub fn two_two(&self) -> usize {
        (4 * self.n - 4) * self.k
    }
    pub fn three_two(&self) -> usize {
        (2 * self.n - 1) * self.k
    }
    /// Grid on which the solver's products and the blocks of `2'` are exact.
    pub fn solver_grid(&self) -> usize {
        good_size((2 * self.n * self.k + 1).max((4 * self.n - 4) * self.k + 1))
    }
    /// Grid on which every component is exact at full band.
    pub fn full_grid(&self) -> usize {
        good_size(2 * self.two_two() + 1)
    }
}

/// Polynomials in the free field defining `0'`, `1'`, `2'`, `3'`, plus the constants they use.
#[derive(Clone, Debug)]
pub struct UpsilonModel {
    q: DispersionQ,
    k: usize,
    n: usize,
    renorm: RenormSet,
    polys: [Poly; 4],
    potential: Option<Potential>,
}

impl UpsilonModel {
    /// Model at `eps = q.eps() > 0` for the potential `v`, cutoff `k`.
    pub fn new(q: &DispersionQ, v: &Potential, k: usize, renorm: RenormSet) -> Result<Self> {
        let eps = q.eps();
        if eps <= 0.0 {
            return Err(DiagramError::Renorm(RenormError::ZeroEps));
        }
        if renorm.k != k || (renorm.eps - eps).abs() > 1e-15 * eps.max(1.0) {
            return Err(DiagramError::Mismatch(format!(
                "constants at (eps={}, K={}), model at (eps={eps}, K={k})",
                renorm.eps, renorm.k
            )));
        }
        let lam = renorm.lambda;
        if lam == 0.0 {
            return Err(DiagramError::Renorm(RenormError::ZeroLambda));
        }
        let s = eps.sqrt();
        let x = Poly::monomial(1, 1.0);
        let p0 = v.derivative(4).rescale_arg(s).scale(1.0 / (6.0 * lam));
        let p1 = v.derivative(3).rescale_arg(s).scale(1.0 / (6.0 * lam * s));
        let p2 = v.derivative(2).rescale_arg(s).scale(1.0 / (3.0 * lam * eps)).sub(&Poly::new(vec![renorm.c1]));
        let p3 = v.derivative(1).rescale_arg(s).scale(1.0 / (lam * eps * s)).sub(&x.scale(3.0 * renorm.c1));
        Ok(Self { q: q.clone(), k, n: v.n(), renorm, polys: [p0, p1, p2, p3], potential: Some(v.clone()) })
    }

    /// Limiting model at cutoff `k`: Laplacian free field, `0' = 1`, `1' = X`, `2' = X^2 - c1`,
    /// `3' = X^3 - 3 c1 X`.
    pub fn limit(renorm: RenormSet) -> Result<Self> {
        if renorm.eps != 0.0 {
            return Err(DiagramError::Mismatch("limit model needs constants with eps = 0".into()));
        }
        let nu = renorm.c1;
        let polys = [
            Poly::new(vec![1.0]),
            Poly::monomial(1, 1.0),
            Poly::new(vec![-nu, 0.0, 1.0]),
            Poly::new(vec![0.0, -3.0 * nu, 0.0, 1.0]),
        ];
        Ok(Self { q: DispersionQ::laplacian(0.0), k: renorm.k, n: 2, renorm, polys, potential: None })
    }

    pub fn symbol(&self) -> &DispersionQ {
        &self.q
    }
    pub fn eps(&self) -> f64 {
        self.q.eps()
    }
    pub fn cutoff(&self) -> usize {
        self.k
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn renorm(&self) -> &RenormSet {
        &self.renorm
    }
    pub fn lambda(&self) -> f64 {
        self.renorm.lambda
    }
    pub fn potential(&self) -> Option<&Potential> {
        self.potential.as_ref()
    }
    pub fn is_limit(&self) -> bool {
        self.potential.is_none()
    }
    /// Polynomials `p_j` with `<j'> = p_j(<1>)` (`j = 0..3`).
    pub fn polys(&self) -> &[Poly; 4] {
        &self.polys
    }
    /// Pointwise variance of the free field on the cutoff cube.
    pub fn nu(&self) -> f64 {
        if self.is_limit() {
            self.renorm.sigma2_eps
        } else {
            self.renorm.sigma2_eps / self.eps()
        }
    }
    pub fn bands(&self) -> Bands {
        Bands { k: self.k, n: self.n }
    }
}

/// Time stepping of the construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsilonConfig {
    /// Step of the Duhamel quadrature on `[0, T]`.
    pub dt: f64,
    /// Free-field substeps per step (the free field is exact on the finer grid).
    pub sub: usize,
    /// Burn-in horizon before time 0.
    pub t_burn: f64,
    /// Burn-in step.
    pub dt_burn: f64,
    /// Replica index.
    pub sample: u64,
}

impl Default for UpsilonConfig {
    fn default() -> Self {
        Self { dt: 1e-3, sub: 1, t_burn: 10.0, dt_burn: 1e-2, sample: 0 }
    }
}

impl UpsilonConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.dt.is_finite()
            && self.sub >= 1
            && self.t_burn >= 0.0
            && self.t_burn.is_finite()
            && (self.t_burn == 0.0 || (self.dt_burn > 0.0 && self.dt_burn.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(DiagramError::Config(format!("{self:?}")))
        }
    }

    pub fn burn_steps(&self) -> u64 {
        if self.t_burn == 0.0 {
            0
        } else {
            (self.t_burn / self.dt_burn).round().max(1.0) as u64
        }
    }
}

/// Per-mode exponential-Euler factors.
#[derive(Clone, Debug)]
struct Prop {
    h: f64,
    e: Vec<f64>,
    phi: Vec<f64>,
}

impl Prop {
    fn new(rates: &[f64], h: f64) -> Self {
        Self {
            h,
            e: rates.iter().map(|a| (-a * h).exp()).collect(),
            phi: rates.iter().map(|a| -(-a * h).exp_m1() / a).collect(),
        }
    }

    fn apply(&self, acc: &mut FourierField, src: &FourierField) {
        for (((c, s), e), p) in acc.coeffs_mut().iter_mut().zip(src.coeffs()).zip(&self.e).zip(&self.phi) {
            *c = *c * *e + s * *p;
        }
    }
}

/// Accumulators `3'0` and `2'0` of one model.
#[derive(Clone)]
struct Stream {
    model: Arc<UpsilonModel>,
    ops: Arc<GridOps>,
    lat_k: FrequencyLattice,
    lat_two: FrequencyLattice,
    rates_k: Vec<f64>,
    rates_two: Vec<f64>,
    prop: Option<(Prop, Prop)>,
    y: FourierField,
    z: FourierField,
}

/// Samples at one time, shared by the accumulator update and the frames.
struct Sources {
    x: FourierField,
    xp: Vec<f64>,
    p0: Vec<f64>,
    p1: Vec<f64>,
    two: FourierField,
    three: FourierField,
}

impl Stream {
    fn new(model: Arc<UpsilonModel>) -> Result<Self> {
        let b = model.bands();
        let m = b.solver_grid();
        let lat_k = FrequencyLattice::new(b.k, m)?;
        let lat_two = FrequencyLattice::new(b.two_p(), m)?;
        Ok(Self {
            rates_k: model.q.rates(&lat_k)?,
            rates_two: model.q.rates(&lat_two)?,
            ops: GridOps::get(m),
            y: FourierField::zeros(lat_k),
            z: FourierField::zeros(lat_two),
            prop: None,
            model,
            lat_k,
            lat_two,
        })
    }

    fn sources(&self, x_free: &FourierField) -> Sources {
        let x = x_free.resample(self.lat_k);
        let xp = self.ops.phys(&x);
        let [q0, q1, q2, q3] = &self.model.polys;
        let ev = |p: &Poly| xp.iter().map(|&v| p.eval(v)).collect::<Vec<f64>>();
        let (p0, p1, p2, p3) = (ev(q0), ev(q1), ev(q2), ev(q3));
        let (two, three_full) = self.ops.spec2(&p2, &p3, self.lat_two.cutoff());
        let three = three_full.resample(self.lat_k);
        Sources { x, xp, p0, p1, two, three }
    }

    fn update(&mut self, src: &Sources, h: f64) {
        if self.prop.as_ref().is_none_or(|(p, _)| p.h != h) {
            self.prop = Some((Prop::new(&self.rates_k, h), Prop::new(&self.rates_two, h)));
        }
        let (pk, pt) = self.prop.as_ref().expect("set above");
        pk.apply(&mut self.y, &src.three);
        pt.apply(&mut self.z, &src.two);
    }

    fn solver_frame(&self, src: &Sources, t: f64) -> SolverFrame {
        let ops = self.ops.clone();
        let r = &self.model.renorm;
        let (by, btwo) = ops.blocks2(&self.y, &src.two);
        let n = ops.m().pow(3);
        let mut three_two = ops.spec(&res_phys(&by, &btwo, n), self.lat_k.cutoff());
        three_two.axpy(-(3.0 * r.c2 + 2.0 * r.c3), &src.x).expect("same lattice");
        let yp = ops.phys(&self.y);
        SolverFrame {
            t,
            x: src.x.clone(),
            y: self.y.clone(),
            two: src.two.clone(),
            three_two,
            xp: src.xp.clone(),
            yp,
            p0: src.p0.clone(),
            p1: src.p1.clone(),
            blocks_two: btwo,
            ops,
            model: self.model.clone(),
        }
    }

    fn full_frame(&self, x_free: &FourierField, t: f64) -> UpsilonFrame {
        let model = &self.model;
        let b = model.bands();
        let r = &model.renorm;
        let ops = GridOps::get(b.full_grid());
        let n = ops.m().pow(3);
        let lat = |band: usize| FrequencyLattice::new(band, ops.m()).expect("full grid holds every band");
        let x = x_free.resample(lat(b.k));
        let xp = ops.phys(&x);
        let [q0, q1, q2, _] = &model.polys;
        let ev = |p: &Poly| xp.iter().map(|&v| p.eval(v)).collect::<Vec<f64>>();
        let (zero, one) = ops.spec2(&ev(q0), &ev(q1), b.one_p());
        let zero = zero.resample(lat(b.zero_p()));
        let two = ops.spec(&ev(q2), b.two_p());
        let y = self.y.resample(lat(b.k));
        let z = self.z.resample(lat(b.two_p()));
        let (by, bone) = ops.blocks2(&y, &one);
        let (bz, btwo) = ops.blocks2(&z, &two);
        let (mut three_one, mut two_two) = ops.spec2(&res_phys(&by, &bone, n), &res_phys(&bz, &btwo, n), b.two_two());
        three_one = three_one.resample(lat(b.three_one()));
        let c0 = three_one.get([0, 0, 0]);
        three_one.set([0, 0, 0], c0 - r.c3);
        let c0 = two_two.get([0, 0, 0]);
        two_two.set([0, 0, 0], c0 - r.c2);
        let mut three_two = ops.spec(&res_phys(&by, &btwo, n), b.three_two());
        three_two.axpy(-(3.0 * r.c2 + 2.0 * r.c3), &x.resample(lat(b.three_two()))).expect("same lattice");
        UpsilonFrame { t, x, two_zero: z, comps: [zero, one, two, y, three_one, two_two, three_two] }
    }
}

/// What the remainder solver needs at one time, on the solver grid.
#[derive(Clone)]
pub struct SolverFrame {
    pub t: f64,
    /// Free field, cutoff `K`.
    pub x: FourierField,
    /// `3'0`, cutoff `K`.
    pub y: FourierField,
    /// `2'`, full band.
    pub two: FourierField,
    /// Galerkin projection of `3'2'`.
    pub three_two: FourierField,
    pub(crate) xp: Vec<f64>,
    pub(crate) yp: Vec<f64>,
    pub(crate) p0: Vec<f64>,
    pub(crate) p1: Vec<f64>,
    pub(crate) blocks_two: Blocks,
    pub(crate) ops: Arc<GridOps>,
    pub(crate) model: Arc<UpsilonModel>,
}

impl SolverFrame {
    pub fn model(&self) -> &UpsilonModel {
        &self.model
    }
    pub fn grid(&self) -> usize {
        self.ops.m()
    }
    /// Samples of the free field on the solver grid.
    pub fn x_samples(&self) -> &[f64] {
        &self.xp
    }
}

/// All seven components at one time, each exact at its full band.
#[derive(Clone, Debug)]
pub struct UpsilonFrame {
    pub t: f64,
    pub x: FourierField,
    pub two_zero: FourierField,
    pub comps: [FourierField; 7],
}

impl UpsilonFrame {
    pub fn get(&self, tag: Tag) -> &FourierField {
        &self.comps[tag.index()]
    }
}

/// Several models driven by one white noise, advanced in lockstep.
#[derive(Clone)]
pub struct CoupledUpsilon {
    ou: CoupledOU,
    streams: Vec<Stream>,
    cfg: UpsilonConfig,
    steps: u64,
}

/// Free fields of the given symbols at time 0 after the burn-in path of `cfg`, without any
/// accumulators. Shares every draw with [`CoupledUpsilon`] for the same symbols.
pub fn free_driver(seed: NoiseSeed, cfg: &UpsilonConfig, lattice: FrequencyLattice, qs: &[DispersionQ]) -> Result<CoupledOU> {
    cfg.validate()?;
    let mut ou = CoupledOU::stationary_in(seed, cfg.sample, lattice, qs, Phase::Stationary)?;
    for _ in 0..cfg.burn_steps() {
        ou.advance_in(cfg.dt_burn, Phase::BurnIn)?;
    }
    ou.set_time(0.0);
    Ok(ou)
}

impl CoupledUpsilon {
    /// Draws the stationary free fields at `-t_burn` and integrates the accumulators up to time 0.
    pub fn new(seed: NoiseSeed, models: Vec<UpsilonModel>, cfg: UpsilonConfig) -> Result<Self> {
        cfg.validate()?;
        let Some(first) = models.first() else {
            return Err(DiagramError::Config("no models".into()));
        };
        let k = first.cutoff();
        if models.iter().any(|m| m.cutoff() != k) {
            return Err(DiagramError::Mismatch("coupled models need one cutoff".into()));
        }
        let qs: Vec<DispersionQ> = models.iter().map(|m| m.q.clone()).collect();
        let mut ou = CoupledOU::stationary_in(seed, cfg.sample, FrequencyLattice::minimal(k), &qs, Phase::Stationary)?;
        let mut streams = models.into_iter().map(|m| Stream::new(Arc::new(m))).collect::<Result<Vec<_>>>()?;
        for _ in 0..cfg.burn_steps() {
            for (s, x) in streams.iter_mut().zip(ou.fields()) {
                let src = s.sources(x);
                s.update(&src, cfg.dt_burn);
            }
            ou.advance_in(cfg.dt_burn, Phase::BurnIn)?;
        }
        ou.set_time(0.0);
        Ok(Self { ou, streams, cfg, steps: 0 })
    }

    pub fn config(&self) -> &UpsilonConfig {
        &self.cfg
    }
    pub fn time(&self) -> f64 {
        self.steps as f64 * self.cfg.dt
    }
    pub fn step_index(&self) -> u64 {
        self.steps
    }
    pub fn models(&self) -> Vec<&UpsilonModel> {
        self.streams.iter().map(|s| s.model.as_ref()).collect()
    }
    /// Free fields at the current time, one per model.
    pub fn free_fields(&self) -> &[FourierField] {
        self.ou.fields()
    }
    /// Current `3'0` of model `i` (cutoff `K`, solver grid).
    pub fn three_zero(&self, i: usize) -> &FourierField {
        &self.streams[i].y
    }
    /// Current `2'0` of model `i`.
    pub fn two_zero(&self, i: usize) -> &FourierField {
        &self.streams[i].z
    }

    fn sources(&self) -> Vec<Sources> {
        self.streams.iter().zip(self.ou.fields()).map(|(s, x)| s.sources(x)).collect()
    }

    fn advance(&mut self, srcs: &[Sources]) -> Result<()> {
        for (s, src) in self.streams.iter_mut().zip(srcs) {
            s.update(src, self.cfg.dt);
        }
        let h = self.cfg.dt / self.cfg.sub as f64;
        for _ in 0..self.cfg.sub {
            self.ou.advance_in(h, Phase::Path)?;
        }
        self.steps += 1;
        Ok(())
    }

    /// One step forward without building frames.
    pub fn skip(&mut self) -> Result<()> {
        let srcs = self.sources();
        self.advance(&srcs)
    }

    /// Solver frames at the current time, then one step forward.
    pub fn next_solver_frames(&mut self) -> Result<Vec<SolverFrame>> {
        let t = self.time();
        let srcs = self.sources();
        let frames = self.streams.iter().zip(&srcs).map(|(s, src)| s.solver_frame(src, t)).collect();
        self.advance(&srcs)?;
        Ok(frames)
    }

    /// Full frames at the current time, then one step forward.
    pub fn next_full_frames(&mut self) -> Result<Vec<UpsilonFrame>> {
        let t = self.time();
        let frames = self.streams.iter().zip(self.ou.fields()).map(|(s, x)| s.full_frame(x, t)).collect();
        self.skip()?;
        Ok(frames)
    }

    /// Full frames at the current time without stepping.
    pub fn full_frames_now(&self) -> Vec<UpsilonFrame> {
        let t = self.time();
        self.streams.iter().zip(self.ou.fields()).map(|(s, x)| s.full_frame(x, t)).collect()
    }
}

/// Where an enhanced noise came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: UpsilonConfig,
    pub renorm: RenormSet,
}

/// The seven components on a uniform time grid starting at 0.
#[derive(Clone, Debug)]
pub struct EnhancedNoise {
    pub frames: Vec<UpsilonFrame>,
    pub t_grid: Vec<f64>,
    pub eps: f64,
    pub provenance: Provenance,
}

impl EnhancedNoise {
    pub fn component(&self, tag: Tag) -> Vec<&FourierField> {
        self.frames.iter().map(|f| f.get(tag)).collect()
    }
}

fn grid_step(t_grid: &[f64], fallback: f64) -> Result<f64> {
    if t_grid.first() != Some(&0.0) {
        return Err(DiagramError::Config("time grid must start at 0".into()));
    }
    if t_grid.len() == 1 {
        return Ok(fallback);
    }
    let h = t_grid[1];
    let uniform = t_grid.iter().enumerate().all(|(i, &t)| (t - i as f64 * h).abs() <= 1e-9 * h.max(t.abs()));
    if h <= 0.0 || !uniform {
        return Err(DiagramError::Config("time grid must be uniform and increasing".into()));
    }
    Ok(h)
}

fn collect_frames(seed: NoiseSeed, model: UpsilonModel, t_grid: &[f64], cfg: UpsilonConfig) -> Result<EnhancedNoise> {
    let renorm = model.renorm().clone();
    let eps = model.eps();
    let mut drv = CoupledUpsilon::new(seed, vec![model], cfg)?;
    let mut frames = Vec::with_capacity(t_grid.len());
    for i in 0..t_grid.len() {
        if i + 1 == t_grid.len() {
            frames.extend(drv.full_frames_now());
        } else {
            frames.extend(drv.next_full_frames()?);
        }
    }
    Ok(EnhancedNoise {
        frames,
        t_grid: t_grid.to_vec(),
        eps,
        provenance: Provenance { seed: seed.master, config: cfg, renorm },
    })
}

/// Enhanced noise at `eps = q.eps()` on `t_grid`; the grid step overrides `cfg.dt`.
pub fn build_upsilon(
    seed: NoiseSeed,
    k: usize,
    q: &DispersionQ,
    v: &Potential,
    t_grid: &[f64],
    renorm: &RenormSet,
    cfg: UpsilonConfig,
) -> Result<EnhancedNoise> {
    let cfg = UpsilonConfig { dt: grid_step(t_grid, cfg.dt)?, ..cfg };
    let model = UpsilonModel::new(q, v, k, renorm.clone())?;
    collect_frames(seed, model, t_grid, cfg)
}

/// The standard objects of the limiting equation with the sharp cutoff `floor(1/eps)`:
/// `2 = X^{<>2}`, `30`, `31 = 30 o 1`, `22 = 20 o 2 - c2`, `32 = 30 o 2 - 3 c2 X`, in the slots of
/// `2'`, `3'0`, `3'1'`, `2'2'`, `3'2'`. Draws coincide mode by mode with [`build_upsilon`] at the
/// same seed. `frames[0].two_zero` is `20(0)`.
pub fn build_limit_upsilon(seed: NoiseSeed, eps_cutoff: f64, t_grid: &[f64], lambda: f64, cfg: UpsilonConfig) -> Result<EnhancedNoise> {
    let cfg = UpsilonConfig { dt: grid_step(t_grid, cfg.dt)?, ..cfg };
    let cutoff = crate::renorm::standard_cutoff(eps_cutoff);
    let renorm = crate::renorm::limit_renorm_set(lambda, cutoff, None)?;
    collect_frames(seed, UpsilonModel::limit(renorm)?, t_grid, cfg)
}

/// Objects with an analytic second moment or Monte Carlo readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentSymbol {
    /// The free field `<1>`.
    Free,
    /// `<1>^{<>n}` with respect to the pointwise variance on the cutoff cube.
    Wick(usize),
    Comp(Tag),
}

impl MomentSymbol {
    pub fn name(&self) -> String {
        match self {
            MomentSymbol::Free => "1".into(),
            MomentSymbol::Wick(n) => format!("1^{n}"),
            MomentSymbol::Comp(t) => t.name().into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "1" {
            return Some(MomentSymbol::Free);
        }
        if let Some(n) = s.strip_prefix("1^") {
            return n.parse().ok().map(MomentSymbol::Wick);
        }
        Tag::parse(s).map(MomentSymbol::Comp)
    }
}

fn in_cube(k: [i64; 3], c: usize) -> bool {
    k.iter().all(|x| x.unsigned_abs() as usize <= c)
}

/// `sum_{l_1 + .. + l_p = k, |l_j|_inf <= K} prod_j 1/(2 b_j) g(sum_j b_j)`.
fn wick_sum(q: &DispersionQ, p: usize, cutoff: usize, k: [i64; 3], g: &(dyn Fn(f64) -> f64 + Sync)) -> Result<f64> {
    if p == 0 {
        return Ok(if k == [0, 0, 0] { g(0.0) } else { 0.0 });
    }
    if !in_cube(k, p * cutoff) {
        return Ok(0.0);
    }
    let lat = FrequencyLattice::minimal(cutoff);
    let terms = (lat.len() as f64).powi(p as i32 - 1);
    if terms > 1e9 {
        return Err(DiagramError::Infeasible { terms });
    }
    let kk = cutoff as i64;
    let table: Vec<f64> = (0..=3 * cutoff * cutoff)
        .map(|r2| q.bracket2_radial((r2 as f64).sqrt()))
        .collect::<std::result::Result<_, _>>()?;
    let modes: Vec<([i64; 3], f64)> = lat
        .modes()
        .map(|l| (l, table[(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]) as usize]))
        .collect();

    #[allow(clippy::too_many_arguments)]
    fn rec(legs: usize, rest: [i64; 3], w: f64, bsum: f64, modes: &[([i64; 3], f64)], table: &[f64], kk: i64, g: &(dyn Fn(f64) -> f64 + Sync)) -> f64 {
        if legs == 1 {
            if rest.iter().any(|x| x.abs() > kk) {
                return 0.0;
            }
            let b = table[(rest[0] * rest[0] + rest[1] * rest[1] + rest[2] * rest[2]) as usize];
            return w / (2.0 * b) * g(bsum + b);
        }
        let reach = (legs as i64 - 1) * kk;
        let mut s = 0.0;
        for (l, b) in modes {
            let r = [rest[0] - l[0], rest[1] - l[1], rest[2] - l[2]];
            if r.iter().any(|x| x.abs() > reach) {
                continue;
            }
            s += rec(legs - 1, r, w / (2.0 * b), bsum + b, modes, table, kk, g);
        }
        s
    }

    if p == 1 {
        return Ok(rec(1, k, 1.0, 0.0, &modes, &table, kk, g));
    }
    Ok(modes
        .par_iter()
        .map(|(l, b)| {
            let r = [k[0] - l[0], k[1] - l[1], k[2] - l[2]];
            if r.iter().any(|x| x.abs() > (p as i64 - 1) * kk) {
                0.0
            } else {
                rec(p - 1, r, 1.0 / (2.0 * b), *b, &modes, &table, kk, g)
            }
        })
        .sum())
}

/// Stationary second moment `E|tau(k)|^2`, or the two-time covariance
/// `E[tau(t, k) conj(tau(t + lag, k))]`, from Wick contractions on the cutoff cube.
/// `3'0` supports `lag = 0` only, with the time kernel of its Duhamel integral.
pub fn second_moment_oracle(model: &UpsilonModel, symbol: MomentSymbol, k: [i64; 3], lag: f64, time: TimeKernel) -> Result<f64> {
    let q = model.symbol();
    let cutoff = model.cutoff();
    let lag = lag.abs();
    let decay = move |b: f64| (-b * lag).exp();
    let chaos = |p: &Poly, g: &(dyn Fn(f64) -> f64 + Sync)| -> Result<f64> {
        let c = chaos_coefficients(p, model.nu());
        let mut total = 0.0;
        for (j, cj) in c.iter().enumerate() {
            if *cj == 0.0 {
                continue;
            }
            total += cj * cj * factorial(j) * wick_sum(q, j, cutoff, k, g)?;
        }
        Ok(total)
    };
    match symbol {
        MomentSymbol::Free => {
            if !in_cube(k, cutoff) {
                return Ok(0.0);
            }
            let b = q.bracket2(k)?;
            Ok(decay(b) / (2.0 * b))
        }
        MomentSymbol::Wick(n) => Ok(factorial(n) * wick_sum(q, n, cutoff, k, &decay)?),
        MomentSymbol::Comp(Tag::ZeroP) => chaos(&model.polys[0], &decay),
        MomentSymbol::Comp(Tag::OneP) => chaos(&model.polys[1], &decay),
        MomentSymbol::Comp(Tag::TwoP) => chaos(&model.polys[2], &decay),
        MomentSymbol::Comp(Tag::ThreeZero) => {
            if lag != 0.0 {
                return Err(DiagramError::Unsupported("3'0 at unequal times".into()));
            }
            if !in_cube(k, cutoff) {
                return Ok(0.0);
            }
            let a = q.bracket2(k)?;
            let g = move |bsum: f64| match time {
                TimeKernel::Continuum => 1.0 / (a * (a + bsum)),
                TimeKernel::Discrete(h) => {
                    let phi = -(-a * h).exp_m1() / a;
                    let qq = (-a * h).exp();
                    let r = (-bsum * h).exp();
                    phi * phi * (1.0 + qq * r) / ((1.0 - qq * qq) * (1.0 - qq * r))
                }
            };
            chaos(&model.polys[3], &g)
        }
        MomentSymbol::Comp(t) => Err(DiagramError::Unsupported(t.name().into())),
    }
}

/// Which Monte Carlo statistic of `tau(t, k)` to estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    /// `|tau(t, k)|^2`.
    SecondMoment,
    /// `Re tau(t, k)`.
    Mean,
    /// `Re[tau(t, k) conj(tau(t + lag dt, k))]`.
    Covariance { lag_steps: u64 },
}

impl Statistic {
    pub fn name(&self) -> String {
        match self {
            Statistic::SecondMoment => "second_moment".into(),
            Statistic::Mean => "mean".into(),
            Statistic::Covariance { lag_steps } => format!("covariance_lag{lag_steps}"),
        }
    }
}

/// Sample mean with its jackknife standard error against an oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub symbol: String,
    pub statistic: String,
    pub k: [i64; 3],
    pub t: f64,
    pub samples: usize,
    pub mean: f64,
    pub se: Option<f64>,
    pub oracle: f64,
    pub z: Option<f64>,
}

impl MomentReport {
    pub const CSV_HEADER: &'static str = "symbol,statistic,kx,ky,kz,t,samples,mean,se,oracle,z";

    /// Builds the report from raw per-sample values.
    pub fn from_samples(symbol: String, statistic: String, k: [i64; 3], t: f64, values: &[f64], oracle: f64) -> Self {
        let (mean, se) = jackknife_mean(values);
        let z = se.filter(|s| *s > 0.0).map(|s| (mean - oracle) / s);
        Self { symbol, statistic, k, t, samples: values.len(), mean, se, oracle, z }
    }

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{v:.12e}"));
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{:.12e},{},{:.12e},{}",
            self.symbol,
            self.statistic,
            self.k[0],
            self.k[1],
            self.k[2],
            self.t,
            self.samples,
            self.mean,
            opt(self.se),
            self.oracle,
            opt(self.z)
        );
        s
    }
}

/// Mean and jackknife standard error (`None` below two samples).
pub fn jackknife_mean(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, None);
    }
    let total: f64 = values.iter().sum();
    let mean = total / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let loo: Vec<f64> = values.iter().map(|x| (total - x) / (m - 1) as f64).collect();
    let lbar = loo.iter().sum::<f64>() / m as f64;
    let var = (m - 1) as f64 / m as f64 * loo.iter().map(|l| (l - lbar).powi(2)).sum::<f64>();
    (mean, Some(var.sqrt()))
}

/// One Monte Carlo experiment: a model, its time stepping, and the readout step.
#[derive(Clone, Debug)]
pub struct McSetup {
    pub model: UpsilonModel,
    pub cfg: UpsilonConfig,
    /// Readout at `t = steps * dt`.
    pub steps: u64,
}

fn needs_history(symbol: MomentSymbol) -> bool {
    matches!(symbol, MomentSymbol::Comp(Tag::ThreeZero | Tag::ThreeOneP | Tag::TwoTwoP | Tag::ThreeTwoP))
}

/// `symbol` at the current time of model 0 of `drv`.
fn readout(drv: &CoupledUpsilon, symbol: MomentSymbol) -> FourierField {
    let model = drv.models()[0];
    let x = &drv.free_fields()[0];
    let poly_field = |p: &Poly, band: usize| {
        let ops = GridOps::get(good_size(2 * p.degree().max(1) * model.cutoff() + 1));
        let xp = ops.phys(x);
        let vals: Vec<f64> = xp.iter().map(|&v| p.eval(v)).collect();
        ops.spec(&vals, band)
    };
    match symbol {
        MomentSymbol::Free => x.clone(),
        MomentSymbol::Wick(n) => {
            let h = crate::gaussian::hermite_poly(n, model.nu());
            poly_field(&h, n * model.cutoff())
        }
        MomentSymbol::Comp(Tag::ThreeZero) => drv.three_zero(0).clone(),
        MomentSymbol::Comp(t @ (Tag::ZeroP | Tag::OneP | Tag::TwoP)) => {
            let p = &model.polys()[t.index()];
            poly_field(p, p.degree() * model.cutoff())
        }
        MomentSymbol::Comp(t) => drv.full_frames_now().swap_remove(0).comps[t.index()].clone(),
    }
}

/// Per-replica values of `statistic` for `symbol` at mode `k`.
pub fn mc_values(setup: &McSetup, symbol: MomentSymbol, statistic: Statistic, k: [i64; 3], m: usize, seed: NoiseSeed) -> Result<Vec<f64>> {
    let mut base = setup.cfg;
    if !needs_history(symbol) {
        base.t_burn = 0.0;
    }
    (0..m)
        .into_par_iter()
        .map(|i| {
            let cfg = UpsilonConfig { sample: setup.cfg.sample + i as u64, ..base };
            let mut drv = CoupledUpsilon::new(seed, vec![setup.model.clone()], cfg)?;
            for _ in 0..setup.steps {
                drv.skip()?;
            }
            let a = readout(&drv, symbol).get(k);
            Ok(match statistic {
                Statistic::SecondMoment => a.norm_sqr(),
                Statistic::Mean => a.re,
                Statistic::Covariance { lag_steps } => {
                    for _ in 0..lag_steps {
                        drv.skip()?;
                    }
                    let b = readout(&drv, symbol).get(k);
                    (a * b.conj()).re
                }
            })
        })
        .collect()
}

/// Monte Carlo estimate over `m` replicas compared with its oracle: the Wick second moment (or
/// two-time covariance) for [`Statistic::SecondMoment`] / [`Statistic::Covariance`], and the
/// exact mean (zero except for the constant mode of `0'`) for [`Statistic::Mean`].
pub fn mc_moment(setup: &McSetup, symbol: MomentSymbol, statistic: Statistic, k: [i64; 3], m: usize, seed: NoiseSeed) -> Result<MomentReport> {
    if m == 0 {
        return Err(DiagramError::Config("need at least one sample".into()));
    }
    let oracle = match statistic {
        Statistic::SecondMoment => second_moment_oracle(&setup.model, symbol, k, 0.0, TimeKernel::Discrete(setup.cfg.dt))?,
        Statistic::Covariance { lag_steps } => {
            second_moment_oracle(&setup.model, symbol, k, lag_steps as f64 * setup.cfg.dt, TimeKernel::Discrete(setup.cfg.dt))?
        }
        Statistic::Mean => match (symbol, k) {
            (MomentSymbol::Comp(Tag::ZeroP), [0, 0, 0]) => {
                crate::gaussian::gaussian_expectation(&setup.model.polys()[0], setup.model.nu())
            }
            (MomentSymbol::Wick(0), [0, 0, 0]) => 1.0,
            _ => 0.0,
        },
    };
    let values = mc_values(setup, symbol, statistic, k, m, seed)?;
    let t = setup.steps as f64 * setup.cfg.dt;
    Ok(MomentReport::from_samples(symbol.name(), statistic.name(), k, t, &values, oracle))
}

/// Shell-wise profile of `<k>^{d + 2 alpha} E|tau(k)|^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub sup: f64,
    pub argmax: [i64; 3],
    /// Sup over shell `j`: `k = 0` for `j = 0`, `2^{j-1} <= |k|_inf < 2^j` otherwise.
    pub shells: Vec<f64>,
    /// Largest over smallest nonzero shell sup (1 when all vanish).
    pub ratio: f64,
    /// `ratio <= 4`.
    pub flat: bool,
}

fn shell_of(k: [i64; 3]) -> usize {
    let m = k.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
    if m == 0 {
        0
    } else {
        (64 - m.leading_zeros()) as usize
    }
}

/// `sup_k <k>^{d + 2 alpha} E|tau(k)|^2` with the bracket of `weight` (use `eps = 0` for the plain
/// bracket), its maximiser and the dyadic-shell trend.
pub fn regularity_diagnostic(moments: &[([i64; 3], f64)], weight: &DispersionQ, alpha: f64, d: usize) -> Result<RegularityReport> {
    let mut shells: Vec<f64> = Vec::new();
    let mut sup = 0.0;
    let mut argmax = [0, 0, 0];
    for &(k, m2) in moments {
        let w = weight.bracket(k)?.powf(d as f64 + 2.0 * alpha) * m2;
        let s = shell_of(k);
        if shells.len() <= s {
            shells.resize(s + 1, 0.0);
        }
        shells[s] = shells[s].max(w);
        if w > sup {
            sup = w;
            argmax = k;
        }
    }
    let live: Vec<f64> = shells.iter().copied().filter(|&x| x > 0.0).collect();
    let ratio = if live.is_empty() {
        1.0
    } else {
        live.iter().copied().fold(0.0, f64::max) / live.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(RegularityReport { sup, argmax, shells, ratio, flat: ratio <= 4.0 })
}

/// Indices of at most `n` roughly evenly spaced grid points, always including the ends.
pub(crate) fn subsample(len: usize, n: usize) -> Vec<usize> {
    if len <= n {
        return (0..len).collect();
    }
    let mut v: Vec<usize> = (0..n).map(|i| (i * (len - 1) + (n - 1) / 2) / (n - 1)).collect();
    v.dedup();
    v
}

/// Number of grid times used for the Hoelder seminorms.
pub const HOLDER_POINTS: usize = 33;

/// `sum_tau sup_{t <= T} ||tau(t)||_{|tau|} + sup_{s < t <= T} ||3'0(t) - 3'0(s)||_{1/4 - kappa} / |t - s|^{1/8}`
/// over the grid (the Hoelder term on at most [`HOLDER_POINTS`] grid times).
pub fn x_norm(u: &EnhancedNoise, t_max: f64, kappa: f64) -> Result<f64> {
    let have = u.t_grid.last().copied().unwrap_or(f64::NEG_INFINITY);
    if u.frames.is_empty() || have < t_max - 1e-9 * t_max.abs().max(1.0) {
        return Err(DiagramError::InsufficientGrid { have, want: t_max });
    }
    let idx: Vec<usize> = (0..u.frames.len()).filter(|&i| u.t_grid[i] <= t_max + 1e-12).collect();
    let mut total = 0.0;
    for tag in Tag::ALL {
        let a = tag.regularity(kappa);
        let s = idx
            .par_iter()
            .map(|&i| besov_norm(u.frames[i].get(tag), a))
            .reduce(|| 0.0, f64::max);
        total += s;
    }
    let pts: Vec<usize> = subsample(idx.len(), HOLDER_POINTS).into_iter().map(|i| idx[i]).collect();
    let pairs: Vec<(usize, usize)> = pts.iter().enumerate().flat_map(|(a, &i)| pts[a + 1..].iter().map(move |&j| (i, j))).collect();
    let hold = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = u.frames[j].get(Tag::ThreeZero).sub(u.frames[i].get(Tag::ThreeZero)).expect("one lattice");
            besov_norm(&d, 0.25 - kappa) / (u.t_grid[j] - u.t_grid[i]).powf(0.125)
        })
        .reduce(|| 0.0, f64::max);
    Ok(total + hold)
}

