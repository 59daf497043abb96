//! The paracontrolled remainder system for `(v, w)`: coefficients `F_j`, the map `G`, an
//! exponential-Euler integrator in sequential and Picard form, the `Y` norms, reconstruction of
//! the solution, and a brute-force integrator of the full renormalised equation.

use crate::besov::{besov_norm, lt_phys, res_phys, GridOps};
use crate::diagrams::{free_driver, subsample, CoupledUpsilon, DiagramError, SolverFrame, Tag, UpsilonFrame, UpsilonModel, HOLDER_POINTS};
use crate::fft::good_size;
use crate::fourier::{FourierError, FourierField, FrequencyLattice};
use crate::gaussian::{GaussianError, NoiseSeed, Phase};
use crate::poly::{factorial, Poly};
pub use crate::renorm::taylor_remainder;
use crate::renorm::Potential;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error(transparent)]
    Diagram(#[from] DiagramError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("inputs do not match: {0}")]
    Mismatch(String),
    #[error("trajectory ends at {have} but {want} was requested")]
    ShortTrajectory { have: f64, want: f64 },
    #[error("Picard iteration stopped contracting at sweep {sweep} (distances {distances:?})")]
    NonContraction { sweep: usize, distances: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Sequential,
    Picard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eps: f64,
    pub lambda: f64,
    pub dt: f64,
    /// Horizon `T`.
    pub t_end: f64,
    /// Galerkin cutoff `K`.
    pub k: usize,
    pub kappa: f64,
    pub delta0: f64,
    pub picard_iters: usize,
    pub picard_tol: f64,
    pub mode: SolverMode,
    /// Keep every `record_stride`-th step (and the last).
    pub record_stride: usize,
}

impl SolverConfig {
    /// Defaults `kappa = 0.05`, `delta0 = kappa / (2n)` for a potential of degree `2n`.
    pub fn new(eps: f64, lambda: f64, dt: f64, t_end: f64, k: usize, n: usize) -> Self {
        let kappa = 0.05;
        Self {
            eps,
            lambda,
            dt,
            t_end,
            k,
            kappa,
            delta0: kappa / (2 * n) as f64,
            picard_iters: 200,
            picard_tol: 1e-8,
            mode: SolverMode::Sequential,
            record_stride: 1,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |s: &str| Err(SolverError::Config(s.into()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("T must be non-negative");
        }
        if !(self.delta0 > 0.0 && self.delta0 < self.kappa / n as f64) {
            return bad("need 0 < delta0 < kappa/n");
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1");
        }
        if !self.lambda.is_finite() || self.eps < 0.0 {
            return bad("lambda must be finite and eps non-negative");
        }
        Ok(())
    }
}

/// Recorded trajectories of the remainders with the objects needed to rebuild the solution.
#[derive(Clone, Debug)]
pub struct RemainderPair {
    pub t_grid: Vec<f64>,
    pub v: Vec<FourierField>,
    pub w: Vec<FourierField>,
    pub initial: (FourierField, FourierField),
}

/// Output of [`solve`].
#[derive(Clone, Debug)]
pub struct Solution {
    pub pair: RemainderPair,
    /// Free field at the recorded times.
    pub x: Vec<FourierField>,
    /// `3'0` at the recorded times.
    pub y: Vec<FourierField>,
    pub lambda: f64,
    /// Time of the first non-finite value; the trajectories stop at the last finite state.
    pub blowup: Option<f64>,
    /// Sup distances between consecutive Picard sweeps.
    pub picard_distances: Vec<f64>,
}

impl Solution {
    pub fn phi(&self) -> Vec<FourierField> {
        reconstruct_phi(&self.x, &self.y, &self.pair, self.lambda).expect("recorded on one lattice")
    }
}

/// `-eps^{-3/2} V'(sqrt(eps) x; sqrt(eps) y)` with the derivatives tabulated once.
#[derive(Clone, Debug)]
struct Remainder {
    derivs: Vec<(Poly, f64)>,
    s: f64,
    pref: f64,
}

impl Remainder {
    fn new(v: &Potential, eps: f64) -> Option<Self> {
        if v.degree() <= 4 || eps == 0.0 {
            return None;
        }
        let top = v.degree();
        let mut d = v.poly().nth_derivative(5);
        let mut derivs = Vec::new();
        for j in 4..top {
            derivs.push((d.clone(), 1.0 / factorial(j)));
            d = d.derivative();
        }
        Some(Self { derivs, s: eps.sqrt(), pref: -eps.powf(-1.5) })
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let (bx, by) = (self.s * x, self.s * y);
        let mut yj = by.powi(4);
        let mut acc = 0.0;
        for (p, inv) in &self.derivs {
            acc += p.eval(bx) * yj * inv;
            yj *= by;
        }
        self.pref * acc
    }
}

/// Right-hand sides of one step: the `v` source `P_K(f < 2')` and the full `w` right-hand side.
struct Rhs {
    v_src: FourierField,
    w_rhs: FourierField,
}

/// Per-model constants of the stepping.
#[derive(Clone)]
struct Stepper {
    lambda: f64,
    c2: f64,
    c3: f64,
    rem: Option<Remainder>,
    e: Vec<f64>,
    phi: Vec<f64>,
    lat: FrequencyLattice,
}

impl Stepper {
    fn new(model: &UpsilonModel, lambda: f64, dt: f64) -> Result<Self> {
        let b = model.bands();
        let lat = FrequencyLattice::new(b.k, b.solver_grid())?;
        let rates = model.symbol().rates(&lat)?;
        Ok(Self {
            lambda,
            c2: model.renorm().c2,
            c3: model.renorm().c3,
            rem: model.potential().and_then(|v| Remainder::new(v, model.eps())),
            e: rates.iter().map(|a| (-a * dt).exp()).collect(),
            phi: rates.iter().map(|a| -(-a * dt).exp_m1() / a).collect(),
            lat,
        })
    }

    /// With `f = u - lambda 3'0`:
    /// `v_src = P_K(f < 2')` and
    /// `w_rhs = P_K[F3 u^3 + F2 u^2 + F1 u + F0 - 3 lambda (f > 2') + R + 9 lambda^2 (2' o J - C2 f)
    ///          - 3 lambda (g o 2')]`, where the `2'2'`, `h` and commutator terms of `G` have been
    /// combined with the `2'2'` parts of `F1`, `F0` into `2' o J - C2 f`.
    fn rhs(&self, fr: &SolverFrame, u: &FourierField, g: &FourierField, j: &FourierField) -> Rhs {
        let ops = &fr.ops;
        let n = ops.m().pow(3);
        let lam = self.lambda;
        let (up, _) = ops.phys2(u, g);
        let fp: Vec<f64> = up.iter().zip(&fr.yp).map(|(a, y)| a - lam * y).collect();
        let f = ops.spec(&fp, u.lattice().cutoff());
        let (bf, bj) = ops.blocks2(&f, j);
        let bg = ops.blocks(g);
        let bt = &fr.blocks_two;
        let v_phys = lt_phys(&bf, bt, n);
        let gt = lt_phys(bt, &bf, n);
        let rj = res_phys(bt, &bj, n);
        let rg = res_phys(&bg, bt, n);
        let (l2, l3, l4) = (lam * lam, lam * lam * lam, lam.powi(4));
        let mut w_phys = vec![0.0; n];
        for i in 0..n {
            let (p0, p1, y, x, u, f) = (fr.p0[i], fr.p1[i], fr.yp[i], fr.xp[i], up[i], fp[i]);
            let y2 = y * y;
            let f3 = -lam * p0;
            let f2 = 3.0 * l2 * p0 * y - 3.0 * lam * p1;
            let f1 = -3.0 * l3 * p0 * y2 + 6.0 * l2 * (y * p1 - self.c3);
            let f0 = l4 * p0 * y2 * y - 3.0 * l3 * (y2 * p1 - 2.0 * self.c3 * y);
            let mut acc = ((f3 * u + f2) * u + f1) * u + f0;
            acc += -3.0 * lam * gt[i] + 9.0 * l2 * (rj[i] - self.c2 * f) - 3.0 * lam * rg[i];
            if let Some(r) = &self.rem {
                acc += r.eval(x, f);
            }
            w_phys[i] = acc;
        }
        let (v_src, mut w_rhs) = ops.spec2(&v_phys, &w_phys, self.lat.cutoff());
        w_rhs.axpy(3.0 * l2, &fr.three_two).expect("solver lattice");
        Rhs { v_src, w_rhs }
    }

    fn advance(&self, acc: &mut FourierField, src: &FourierField, scale: f64) {
        for (((c, s), e), p) in acc.coeffs_mut().iter_mut().zip(src.coeffs()).zip(&self.e).zip(&self.phi) {
            *c = *c * *e + s * (*p * scale);
        }
    }

    fn decay(&self, acc: &mut FourierField) {
        for (c, e) in acc.coeffs_mut().iter_mut().zip(&self.e) {
            *c *= *e;
        }
    }
}

/// State of the sequential march.
#[derive(Clone, Debug)]
pub struct StepState {
    pub v: FourierField,
    pub w: FourierField,
    /// `I(P_K(f < 2'))`, so that `v = e^{t(L-1)} v(0) - 3 lambda J`.
    pub j: FourierField,
    /// `e^{t(L-1)} v(0)`.
    pub ev0: FourierField,
}

impl StepState {
    fn new(v0: &FourierField, w0: &FourierField, lat: FrequencyLattice) -> Self {
        Self { v: v0.resample(lat), w: w0.resample(lat), j: FourierField::zeros(lat), ev0: v0.resample(lat) }
    }

    fn finite(&self) -> bool {
        [&self.v, &self.w].iter().all(|f| f.coeffs().iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

/// One exponential-Euler step from the frame at `t`; the right-hand side is evaluated at
/// `(v_in, w_in)` (equal to the state's own `(v, w)` in sequential mode).
fn step_with(st: &Stepper, state: &StepState, fr: &SolverFrame, v_in: &FourierField, w_in: &FourierField) -> StepState {
    let u = v_in.add(w_in).expect("one lattice");
    let g = state.ev0.add(w_in).expect("one lattice");
    let rhs = st.rhs(fr, &u, &g, &state.j);
    let mut next = state.clone();
    st.advance(&mut next.v, &rhs.v_src, -3.0 * st.lambda);
    st.advance(&mut next.j, &rhs.v_src, 1.0);
    st.advance(&mut next.w, &rhs.w_rhs, 1.0);
    st.decay(&mut next.ev0);
    next
}

/// One sequential step of the `(v, w)` system for the model of `fr`.
pub fn step(state: &StepState, fr: &SolverFrame, cfg: &SolverConfig) -> Result<StepState> {
    let st = Stepper::new(fr.model(), cfg.lambda, cfg.dt)?;
    Ok(step_with(&st, state, fr, &state.v, &state.w))
}

/// Initial state for [`step`].
pub fn initial_state(fr: &SolverFrame, v0: &FourierField, w0: &FourierField) -> StepState {
    StepState::new(v0, w0, fr.y.lattice())
}

fn check(cfg: &SolverConfig, model: &UpsilonModel, drv_dt: f64) -> Result<()> {
    cfg.validate(model.n())?;
    if cfg.k != model.cutoff() {
        return Err(SolverError::Mismatch(format!("K = {} but the noise has K = {}", cfg.k, model.cutoff())));
    }
    if (cfg.eps - model.eps()).abs() > 1e-15 {
        return Err(SolverError::Mismatch(format!("eps = {} but the noise has eps = {}", cfg.eps, model.eps())));
    }
    if (cfg.dt - drv_dt).abs() > 1e-15 * cfg.dt {
        return Err(SolverError::Mismatch(format!("dt = {} but the noise has dt = {drv_dt}", cfg.dt)));
    }
    Ok(())
}

struct Recorder {
    stride: usize,
    last: usize,
    t: Vec<f64>,
    v: Vec<FourierField>,
    w: Vec<FourierField>,
    x: Vec<FourierField>,
    y: Vec<FourierField>,
}

impl Recorder {
    fn new(stride: usize, last: usize) -> Self {
        Self { stride, last, t: vec![], v: vec![], w: vec![], x: vec![], y: vec![] }
    }

    fn push(&mut self, i: usize, fr: &SolverFrame, s: &StepState) {
        if i % self.stride == 0 || i == self.last {
            self.t.push(fr.t);
            self.v.push(s.v.clone());
            self.w.push(s.w.clone());
            self.x.push(fr.x.clone());
            self.y.push(fr.y.clone());
        }
    }

    fn finish(self, init: (FourierField, FourierField), lambda: f64, blowup: Option<f64>, picard: Vec<f64>) -> Solution {
        Solution {
            pair: RemainderPair { t_grid: self.t, v: self.v, w: self.w, initial: init },
            x: self.x,
            y: self.y,
            lambda,
            blowup,
            picard_distances: picard,
        }
    }
}

fn sup_dist(a: &FourierField, b: &FourierField) -> f64 {
    let d = a.sub(b).expect("one lattice");
    d.to_physical().iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves the `(v, w)` system on `[0, T]` for model `member` of `drv`, which must sit at time 0.
/// Sequential mode marches [`step`]; Picard mode iterates the integral map over the whole
/// trajectory (replaying the same noise) until the sup distance between sweeps is below
/// `picard_tol` or `picard_iters` sweeps were made.
pub fn solve(cfg: &SolverConfig, drv: &CoupledUpsilon, member: usize, v0: &FourierField, w0: &FourierField) -> Result<Solution> {
    let model = drv.models().get(member).copied().ok_or_else(|| SolverError::Config(format!("no member {member}")))?.clone();
    check(cfg, &model, drv.config().dt)?;
    if drv.step_index() != 0 {
        return Err(SolverError::Mismatch("noise stream is not at time 0".into()));
    }
    let st = Stepper::new(&model, cfg.lambda, cfg.dt)?;
    let nsteps = cfg.steps();
    let init = (v0.resample(st.lat), w0.resample(st.lat));
    match cfg.mode {
        SolverMode::Sequential => {
            let mut d = drv.clone();
            let mut state = StepState::new(v0, w0, st.lat);
            let mut rec = Recorder::new(cfg.record_stride, nsteps);
            for i in 0..=nsteps {
                let fr = d.next_solver_frames()?.swap_remove(member);
                rec.push(i, &fr, &state);
                if i == nsteps {
                    break;
                }
                let next = step_with(&st, &state, &fr, &state.v, &state.w);
                if !next.finite() {
                    return Ok(rec.finish(init, cfg.lambda, Some(fr.t + cfg.dt), vec![]));
                }
                state = next;
            }
            Ok(rec.finish(init, cfg.lambda, None, vec![]))
        }
        SolverMode::Picard => {
            let mut prev_v = vec![init.0.clone(); nsteps + 1];
            let mut prev_w = vec![init.1.clone(); nsteps + 1];
            let mut dists: Vec<f64> = Vec::new();
            for sweep in 0..cfg.picard_iters.max(1) {
                let mut d = drv.clone();
                let mut state = StepState::new(v0, w0, st.lat);
                let mut new_v = Vec::with_capacity(nsteps + 1);
                let mut new_w = Vec::with_capacity(nsteps + 1);
                let mut rec = Recorder::new(cfg.record_stride, nsteps);
                let mut blow = None;
                for i in 0..=nsteps {
                    let fr = d.next_solver_frames()?.swap_remove(member);
                    rec.push(i, &fr, &state);
                    new_v.push(state.v.clone());
                    new_w.push(state.w.clone());
                    if i == nsteps {
                        break;
                    }
                    let next = step_with(&st, &state, &fr, &prev_v[i], &prev_w[i]);
                    if !next.finite() {
                        blow = Some(fr.t + cfg.dt);
                        break;
                    }
                    state = next;
                }
                if blow.is_some() {
                    return Ok(rec.finish(init, cfg.lambda, blow, dists));
                }
                let dist = (0..=nsteps)
                    .into_par_iter()
                    .map(|i| sup_dist(&new_v[i], &prev_v[i]).max(sup_dist(&new_w[i], &prev_w[i])))
                    .reduce(|| 0.0, f64::max);
                dists.push(dist);
                let k = dists.len();
                if k >= 3 && dists[k - 1] > dists[k - 2] && dists[k - 2] > dists[k - 3] {
                    return Err(SolverError::NonContraction { sweep, distances: dists });
                }
                prev_v = new_v;
                prev_w = new_w;
                if dist < cfg.picard_tol || sweep + 1 == cfg.picard_iters.max(1) {
                    return Ok(rec.finish(init, cfg.lambda, None, dists));
                }
            }
            unreachable!("loop returns on its last sweep")
        }
    }
}

/// Sequential solves of every member of `drv` in lockstep on one noise path.
pub fn solve_coupled(cfgs: &[SolverConfig], drv: &CoupledUpsilon, inits: &[(FourierField, FourierField)]) -> Result<Vec<Solution>> {
    let models = drv.models();
    if cfgs.len() != models.len() || inits.len() != models.len() {
        return Err(SolverError::Config("one configuration and initial pair per member".into()));
    }
    let mut steppers = Vec::new();
    let mut states = Vec::new();
    let mut recs = Vec::new();
    for ((cfg, model), (v0, w0)) in cfgs.iter().zip(&models).zip(inits) {
        check(cfg, model, drv.config().dt)?;
        if cfg.steps() != cfgs[0].steps() {
            return Err(SolverError::Config("members need one horizon".into()));
        }
        let st = Stepper::new(model, cfg.lambda, cfg.dt)?;
        states.push(StepState::new(v0, w0, st.lat));
        recs.push(Recorder::new(cfg.record_stride, cfg.steps()));
        steppers.push(st);
    }
    let nsteps = cfgs[0].steps();
    let mut d = drv.clone();
    let mut blow: Vec<Option<f64>> = vec![None; models.len()];
    for i in 0..=nsteps {
        let frames = d.next_solver_frames()?;
        for (m, fr) in frames.iter().enumerate() {
            if blow[m].is_some() {
                continue;
            }
            recs[m].push(i, fr, &states[m]);
            if i < nsteps {
                let s = &states[m];
                let next = step_with(&steppers[m], s, fr, &s.v, &s.w);
                if next.finite() {
                    states[m] = next;
                } else {
                    blow[m] = Some(fr.t + cfgs[m].dt);
                }
            }
        }
    }
    Ok(recs
        .into_iter()
        .zip(inits)
        .zip(cfgs)
        .zip(blow)
        .zip(&steppers)
        .map(|((((r, (v0, w0)), cfg), b), st)| r.finish((v0.resample(st.lat), w0.resample(st.lat)), cfg.lambda, b, vec![]))
        .collect())
}

/// `Phi = <1> - lambda 3'0 + v + w` at every recorded time.
pub fn reconstruct_phi(x: &[FourierField], y: &[FourierField], p: &RemainderPair, lambda: f64) -> Result<Vec<FourierField>> {
    if x.len() != p.v.len() || y.len() != p.v.len() || p.w.len() != p.v.len() {
        return Err(SolverError::Mismatch("trajectory lengths differ".into()));
    }
    (0..p.v.len())
        .map(|i| {
            let lat = p.v[i].lattice();
            let mut out = x[i].resample(lat);
            out.axpy(-lambda, &y[i].resample(lat))?;
            out.axpy(1.0, &p.v[i])?;
            out.axpy(1.0, &p.w[i])?;
            Ok(out)
        })
        .collect()
}

/// Sup and Hölder parts of one component on the recorded times `<= t_max`. For `eps > 0` the
/// low-regularity sup is split at `t = eps^2` with the weight `(sqrt(t)/eps)^delta0` on the
/// early part; `hi` is the regularity of the `t^{2/3}`-weighted sup.
fn y_component(traj: &[FourierField], t: &[f64], eps: f64, t_max: f64, kappa: f64, delta0: f64, hi: f64) -> f64 {
    let idx: Vec<usize> = (0..traj.len()).filter(|&i| t[i] <= t_max + 1e-12).collect();
    let (early, late, big) = idx
        .par_iter()
        .map(|&i| {
            let ti = t[i];
            let k = besov_norm(&traj[i], kappa);
            let big = if ti > 0.0 { ti.powf(2.0 / 3.0) * besov_norm(&traj[i], hi) } else { 0.0 };
            if eps > 0.0 && ti <= eps * eps {
                let late = if ti == eps * eps { k } else { 0.0 };
                ((ti.sqrt() / eps).powf(delta0) * k, late, big)
            } else {
                (0.0, k, big)
            }
        })
        .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
    let pts: Vec<usize> = subsample(idx.len(), HOLDER_POINTS).into_iter().map(|i| idx[i]).collect();
    let pairs: Vec<(usize, usize)> = pts.iter().enumerate().flat_map(|(a, &i)| pts[a + 1..].iter().map(move |&j| (i, j))).collect();
    let hold = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = traj[j].sub(&traj[i]).expect("one lattice");
            t[i].powf(0.25) * besov_norm(&d, kappa) / (t[j] - t[i]).powf(0.125)
        })
        .reduce(|| 0.0, f64::max);
    early + late + big + hold
}

/// Grid version of the `Y` norm of a pair on `[0, T]` (`eps = 0` selects the limiting norm).
pub fn y_norm(p: &RemainderPair, eps: f64, t_max: f64, kappa: f64, delta0: f64) -> Result<f64> {
    let have = p.t_grid.last().copied().unwrap_or(f64::NEG_INFINITY);
    if have < t_max - 1e-9 * t_max.abs().max(1.0) {
        return Err(SolverError::ShortTrajectory { have, want: t_max });
    }
    let a = y_component(&p.v, &p.t_grid, eps, t_max, kappa, delta0, 1.0 - 2.0 * kappa);
    let b = y_component(&p.w, &p.t_grid, eps, t_max, kappa, delta0, 1.0 + 2.0 * kappa);
    Ok(a + b)
}

/// Difference of two pairs recorded on the same times (projected to the smaller cutoff).
pub fn pair_difference(a: &RemainderPair, b: &RemainderPair) -> Result<RemainderPair> {
    if a.t_grid.len() != b.t_grid.len() || a.t_grid.iter().zip(&b.t_grid).any(|(s, t)| (s - t).abs() > 1e-12) {
        return Err(SolverError::Mismatch("pairs recorded on different times".into()));
    }
    let k = a.v[0].lattice().cutoff().min(b.v[0].lattice().cutoff());
    let lat = FrequencyLattice::minimal(k);
    let diff = |x: &FourierField, y: &FourierField| x.resample(lat).sub(&y.resample(lat)).expect("one lattice");
    Ok(RemainderPair {
        t_grid: a.t_grid.clone(),
        v: a.v.iter().zip(&b.v).map(|(x, y)| diff(x, y)).collect(),
        w: a.w.iter().zip(&b.w).map(|(x, y)| diff(x, y)).collect(),
        initial: (diff(&a.initial.0, &b.initial.0), diff(&a.initial.1, &b.initial.1)),
    })
}

/// Settings of the brute-force integrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    /// Step (one free-field step per step).
    pub dt: f64,
    pub t_end: f64,
    /// Drop the `C Phi` counterterm.
    pub ablate_counterterm: bool,
    /// Keep every `record_stride`-th step (and the last).
    pub record_stride: usize,
}

/// Exponential Euler for `d Phi = (L - 1) Phi - P_K[eps^{-3/2} V'(sqrt(eps) Phi)] + C Phi + xi`
/// (`lambda Phi^3` in place of the potential term for the limiting model), written for
/// `Z = Phi - <1>` so that the noise enters only through the exact free field.
/// `noise` gives the seed and the burn-in/sample settings of the free field; its `dt` and `sub`
/// are ignored. Returns `(t, Phi)` at the recorded steps.
pub fn brute_force_reference(
    seed: NoiseSeed,
    noise: &crate::diagrams::UpsilonConfig,
    model: &UpsilonModel,
    cfg: &ReferenceConfig,
    z0: &FourierField,
) -> Result<Vec<(f64, FourierField)>> {
    if !(cfg.dt > 0.0) || cfg.record_stride == 0 {
        return Err(SolverError::Config("reference needs dt > 0 and a positive stride".into()));
    }
    let k = model.cutoff();
    let n = model.n();
    let m = good_size(2 * n * k + 1);
    let lat = FrequencyLattice::new(k, m)?;
    let ops = GridOps::get(m);
    let rates = model.symbol().rates(&lat)?;
    let e: Vec<f64> = rates.iter().map(|a| (-a * cfg.dt).exp()).collect();
    let ph: Vec<f64> = rates.iter().map(|a| -(-a * cfg.dt).exp_m1() / a).collect();
    let r = model.renorm();
    let c = if cfg.ablate_counterterm { 0.0 } else { r.c_total };
    let force: Box<dyn Fn(f64) -> f64 + Sync> = match model.potential() {
        Some(v) => {
            let eps = model.eps();
            let d = v.derivative(1).rescale_arg(eps.sqrt()).scale(eps.powf(-1.5));
            Box::new(move |p| -d.eval(p) + c * p)
        }
        None => {
            let lam = r.lambda;
            Box::new(move |p| -lam * p * p * p + c * p)
        }
    };
    let mut ou = free_driver(seed, noise, FrequencyLattice::minimal(k), std::slice::from_ref(model.symbol()))?;
    let mut z = z0.resample(lat);
    let nsteps = (cfg.t_end / cfg.dt).round() as usize;
    let mut out = Vec::new();
    for i in 0..=nsteps {
        let x = ou.fields()[0].resample(lat);
        let phi = x.add(&z)?;
        if i % cfg.record_stride == 0 || i == nsteps {
            out.push((i as f64 * cfg.dt, phi.clone()));
        }
        if i == nsteps {
            break;
        }
        let pp = ops.phys(&phi);
        let nl: Vec<f64> = pp.iter().map(|&p| force(p)).collect();
        let src = ops.spec(&nl, k);
        for (((zc, s), a), b) in z.coeffs_mut().iter_mut().zip(src.coeffs()).zip(&e).zip(&ph) {
            *zc = *zc * *a + s * *b;
        }
        if z.coeffs().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            break;
        }
        ou.advance_in(cfg.dt, Phase::Path)?;
    }
    Ok(out)
}

/// `Phi(0) - <1>(0) = -lambda 3'0(0) + v(0) + w(0)` for a stream at time 0.
pub fn initial_remainder(drv: &CoupledUpsilon, member: usize, lambda: f64, v0: &FourierField, w0: &FourierField) -> Result<FourierField> {
    let y = drv.three_zero(member);
    let lat = y.lattice();
    let mut z = y.scaled(-lambda);
    z.axpy(1.0, &v0.resample(lat))?;
    z.axpy(1.0, &w0.resample(lat))?;
    Ok(z)
}

/// Relative `L^2` distance `|a - b| / |b|` of two fields (over the smaller cutoff).
pub fn relative_l2(a: &FourierField, b: &FourierField) -> f64 {
    let k = a.lattice().cutoff().min(b.lattice().cutoff());
    let lat = FrequencyLattice::minimal(k);
    let (a, b) = (a.resample(lat), b.resample(lat));
    (a.sub(&b).expect("one lattice").norm2_sq() / b.norm2_sq()).sqrt()
}

/// Exact full-band helpers for the term-by-term formulas.
struct Full {
    ops: std::sync::Arc<GridOps>,
}

impl Full {
    fn new(band: usize) -> Self {
        Self { ops: GridOps::get(good_size(2 * band + 1)) }
    }
    fn lat(&self, band: usize) -> FrequencyLattice {
        FrequencyLattice::new(band, self.ops.m()).expect("grid holds the band")
    }
    fn up(&self, f: &FourierField) -> FourierField {
        f.resample(self.lat(f.lattice().cutoff()))
    }
    fn n(&self) -> usize {
        self.ops.m().pow(3)
    }
    fn mul(&self, f: &FourierField, g: &FourierField) -> FourierField {
        let (a, b) = self.ops.phys2(&self.up(f), &self.up(g));
        let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        self.ops.spec(&p, f.lattice().cutoff() + g.lattice().cutoff())
    }
    fn lt(&self, f: &FourierField, g: &FourierField) -> FourierField {
        let (bf, bg) = self.ops.blocks2(&self.up(f), &self.up(g));
        self.ops.spec(&lt_phys(&bf, &bg, self.n()), f.lattice().cutoff() + g.lattice().cutoff())
    }
    fn res(&self, f: &FourierField, g: &FourierField) -> FourierField {
        let (bf, bg) = self.ops.blocks2(&self.up(f), &self.up(g));
        self.ops.spec(&res_phys(&bf, &bg, self.n()), f.lattice().cutoff() + g.lattice().cutoff())
    }
    fn com(&self, f: &FourierField, g: &FourierField, h: &FourierField) -> FourierField {
        self.res(&self.lt(f, g), h).sub(&self.mul(f, &self.res(g, h)).resample(self.lat(f.lattice().cutoff() + g.lattice().cutoff() + h.lattice().cutoff()))).expect("one lattice")
    }
}

fn add_all(terms: &[(f64, &FourierField)]) -> FourierField {
    let band = terms.iter().map(|(_, f)| f.lattice().cutoff()).max().unwrap_or(0);
    let m = terms.iter().map(|(_, f)| f.lattice().grid()).max().unwrap_or(1).max(2 * band + 1);
    let lat = FrequencyLattice::new(band, m).expect("grid checked");
    let mut out = FourierField::zeros(lat);
    for (s, f) in terms {
        out.axpy(*s, &f.resample(lat)).expect("one lattice");
    }
    out
}

/// `F_0, .., F_3` term by term from a full frame, each exact at full band.
pub fn coeffs_f(lambda: f64, fr: &UpsilonFrame) -> [FourierField; 4] {
    let k = fr.x.lattice().cutoff();
    let band = fr.get(Tag::TwoTwoP).lattice().cutoff() + k;
    let op = Full::new(band.max(1));
    let zero = fr.get(Tag::ZeroP);
    let one = fr.get(Tag::OneP);
    let y = fr.get(Tag::ThreeZero);
    let c31 = fr.get(Tag::ThreeOneP);
    let c22 = fr.get(Tag::TwoTwoP);
    let c32 = fr.get(Tag::ThreeTwoP);
    let l = lambda;
    let y2 = op.mul(y, y);
    let y3 = op.mul(&y2, y);
    let f3 = zero.scaled(-l);
    let f2 = add_all(&[(3.0 * l * l, &op.mul(zero, y)), (-3.0 * l, one)]);
    let f1 = add_all(&[
        (-3.0 * l.powi(3), &op.mul(zero, &y2)),
        (6.0 * l * l, &op.lt(y, one)),
        (6.0 * l * l, &op.lt(one, y)),
        (6.0 * l * l, c31),
        (9.0 * l * l, c22),
    ]);
    let yy = op.res(y, y);
    let f0 = add_all(&[
        (l.powi(4), &op.mul(zero, &y3)),
        (-3.0 * l.powi(3), &op.lt(&y2, one)),
        (-3.0 * l.powi(3), &op.lt(one, &y2)),
        (-3.0 * l.powi(3), &op.res(&yy, one)),
        (-6.0 * l.powi(3), &op.mul(c31, y)),
        (-6.0 * l.powi(3), &op.com(y, y, one)),
        (3.0 * l * l, c32),
        (-9.0 * l.powi(3), &op.mul(c22, y)),
    ]);
    [f0, f1, f2, f3]
}

/// Inputs of [`g_map`] that carry time history.
pub struct GInputs<'a> {
    /// `u = v + w` at time `t` (cutoff `K`).
    pub u: &'a FourierField,
    /// `h = e^{t(L-1)} 2'0(0)`.
    pub h: &'a FourierField,
    /// `[I, <](u - lambda 3'0, 2')` at time `t`.
    pub comm: &'a FourierField,
}

/// `P_K G(lambda, Upsilon, u)` term by term:
/// `sum F_j u^j - 3 lambda f > 2' - eps^{-3/2} V'(sqrt(eps) <1>; sqrt(eps) f)
///  + 9 lambda^2 [Com(f; I(2'); 2') + 2' o [I, <](f, 2') - (2' o h) f]`, `f = u - lambda 3'0`,
/// `I(2') = 2'0 - h`. The potential term is dropped for the limiting model (`v = None`).
pub fn g_map(lambda: f64, eps: f64, v: Option<&Potential>, fr: &UpsilonFrame, inp: &GInputs) -> FourierField {
    let k = fr.x.lattice().cutoff();
    let two = fr.get(Tag::TwoP);
    let y = fr.get(Tag::ThreeZero);
    let band = fr.get(Tag::TwoTwoP).lattice().cutoff() + 2 * k + two.lattice().cutoff() + inp.h.lattice().cutoff();
    let op = Full::new(band);
    let l = lambda;
    let f = add_all(&[(1.0, inp.u), (-l, y)]);
    let [f0, f1, f2, f3] = coeffs_f(lambda, fr);
    let u = inp.u;
    let u2 = op.mul(u, u);
    let u3 = op.mul(&u2, u);
    let i2 = add_all(&[(1.0, &fr.two_zero), (-1.0, inp.h)]);
    let mut terms: Vec<(f64, FourierField)> = vec![
        (1.0, op.mul(&f3, &u3)),
        (1.0, op.mul(&f2, &u2)),
        (1.0, op.mul(&f1, u)),
        (1.0, f0),
        (-3.0 * l, op.lt(two, &f)),
        (9.0 * l * l, op.com(&f, &i2, two)),
        (9.0 * l * l, op.res(two, inp.comm)),
        (-9.0 * l * l, op.mul(&op.res(two, inp.h), &f)),
    ];
    if let (Some(v), true) = (v, eps > 0.0) {
        if let Some(r) = Remainder::new(v, eps) {
            let m = op.ops.m();
            let xp = op.ops.phys(&op.up(&fr.x));
            let fp = op.ops.phys(&op.up(&f));
            let p: Vec<f64> = xp.iter().zip(&fp).map(|(a, b)| r.eval(*a, *b)).collect();
            let deg = v.degree() - 1;
            let _ = m;
            terms.push((1.0, op.ops.spec(&p, (deg * k).min(op.ops.max_band()))));
        }
    }
    let refs: Vec<(f64, &FourierField)> = terms.iter().map(|(s, f)| (*s, f)).collect();
    add_all(&refs).resample(FrequencyLattice::minimal(k))
}

/// The collapsed right-hand side used by the integrator with `e^{t(L-1)} v(0) + w = 0`:
/// returns `P_K G` for the given `u` and accumulator `J = I(P_K(f < 2'))`.
pub fn g_collapsed(lambda: f64, fr: &SolverFrame, u: &FourierField, j: &FourierField) -> Result<FourierField> {
    let st = Stepper::new(fr.model(), lambda, 1.0)?;
    let lat = st.lat;
    let rhs = st.rhs(fr, &u.resample(lat), &FourierField::zeros(lat), &j.resample(lat));
    Ok(rhs.w_rhs.resample(FrequencyLattice::minimal(lat.cutoff())))
}

/// `F3 = -lambda 0'` etc. evaluated only from the pieces the integrator keeps: used to check the
/// quartic relation `F2 = 3 lambda^2 3'0 - 3 lambda <1>`.
pub fn f2_quartic(lambda: f64, fr: &SolverFrame) -> FourierField {
    let mut out = fr.y.scaled(3.0 * lambda * lambda);
    out.axpy(-3.0 * lambda, &fr.x).expect("one lattice");
    out
}
