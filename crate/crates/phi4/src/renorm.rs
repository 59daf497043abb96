//! Scalar constants: `sigma^2`, `sigma_eps^2`, `lambda`, the chaos weights `a_m`, the counterterms
//! `C1`, `C2`, `C3`, their combination, and the standard constants of the limiting model.

use crate::fourier::{DispersionQ, FourierError, FrequencyLattice};
use crate::gaussian::gaussian_expectation;
use crate::poly::{factorial, Poly};
use crate::quad;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenormError {
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error("growth violation: fitted exponent {0:.4} does not exceed 3, the radial integral diverges")]
    GrowthViolation(f64),
    #[error("potential must be even of degree at least 4 with nonzero leading coefficient")]
    BadPotential,
    #[error("coupling lambda vanishes")]
    ZeroLambda,
    #[error("eps must be positive here")]
    ZeroEps,
    #[error("direct lattice sum with {terms:.3e} terms is not feasible")]
    Infeasible { terms: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, RenormError>;

/// Even polynomial `V(x) = sum_j v_{2j} x^{2j}`, stored as `(v_2, v_4, ..., v_{2n})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    coeffs: Vec<f64>,
}

impl Potential {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 || *coeffs.last().unwrap() == 0.0 || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(RenormError::BadPotential);
        }
        Ok(Self { coeffs })
    }

    /// `x^4 / 4`.
    pub fn quartic() -> Self {
        Self { coeffs: vec![0.0, 0.25] }
    }

    /// `(a/6) x^6`.
    pub fn sextic(a: f64) -> Self {
        Self { coeffs: vec![0.0, 0.0, a / 6.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Half the degree.
    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    pub fn degree(&self) -> usize {
        2 * self.n()
    }

    pub fn poly(&self) -> Poly {
        let mut c = vec![0.0; self.degree() + 1];
        for (j, v) in self.coeffs.iter().enumerate() {
            c[2 * j + 2] = *v;
        }
        Poly::new(c)
    }

    pub fn derivative(&self, k: usize) -> Poly {
        self.poly().nth_derivative(k)
    }

    /// Adds `c x^2`.
    pub fn plus_quadratic(&self, c: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs[0] += c;
        Self { coeffs }
    }
}

/// `V'(x + y) - sum_{j<=3} V^(j+1)(x) y^j / j!`, exactly.
pub fn taylor_remainder(v: &Potential, x: f64, y: f64) -> f64 {
    let p = v.poly();
    let top = p.degree();
    let mut d = p.nth_derivative(5);
    let mut acc = 0.0;
    let mut j = 4;
    // sum_{j >= 4} V^(j+1)(x) y^j / j!
    while j < top && !d.is_zero() {
        acc += d.eval(x) * y.powi(j as i32) / factorial(j);
        d = d.derivative();
        j += 1;
    }
    acc
}

fn eval_q(q: &DispersionQ, z: f64) -> Result<f64> {
    let v = q.eval(z);
    if !v.is_finite() {
        return Err(FourierError::NonFinite(z).into());
    }
    Ok(v)
}

/// `2 pi int_{r0}^inf r^2 / (c + Q(2 pi r)) dr` with decade panels up to `rmax` and a power-law tail.
fn radial_integral(q: &DispersionQ, c: f64, r0: f64, rmax: f64, tol: f64) -> Result<f64> {
    let f = |r: f64| {
        let z = 2.0 * PI * r;
        let d = c + q.eval(z);
        if r == 0.0 && c == 0.0 {
            1.0 / (4.0 * PI * PI)
        } else {
            r * r / d
        }
    };
    let mut edges = vec![r0];
    let mut e = if r0 < 1.0 { 1.0 } else { 10f64.powf(r0.log10().floor() + 1.0) };
    while e < rmax {
        edges.push(e);
        e *= 10.0;
    }
    edges.push(rmax.max(r0));
    let panels = edges.len().max(2) - 1;
    let mut total = 0.0;
    for w in edges.windows(2) {
        if w[1] > w[0] {
            let (v, _) = quad::integrate(f, w[0], w[1], tol / panels as f64);
            total += v;
        }
    }
    let big = rmax.max(r0);
    let qa = c + eval_q(q, PI * big)?;
    let qb = c + eval_q(q, 2.0 * PI * big)?;
    let p = (qb / qa).ln() / 2f64.ln();
    if !(p > 3.0 + 1e-9) {
        return Err(RenormError::GrowthViolation(p));
    }
    let tail = big.powi(3) / (qb * (p - 3.0));
    Ok(2.0 * PI * (total + tail))
}

/// `sigma^2 = 2 pi int_0^inf r^2 / Q(2 pi r) dr`.
pub fn sigma2_limit(q: &DispersionQ, rmax: f64, tol: f64) -> Result<f64> {
    if rmax <= 1.0 || tol <= 0.0 {
        return Err(RenormError::Invalid("need rmax > 1 and tol > 0".into()));
    }
    radial_integral(q, 0.0, 0.0, rmax, tol)
}

/// Lattice value of `sigma_eps^2` with an estimate of the omitted tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sigma2Eps {
    pub value: f64,
    pub tail: f64,
}

/// `(eps/2) sum_{|k|_inf <= K} 1/<k>_eps^2`.
pub fn sigma2_eps(q: &DispersionQ, k: usize) -> Result<f64> {
    if q.eps() <= 0.0 {
        return Err(RenormError::ZeroEps);
    }
    let table = rate_table(q, 3 * k * k)?;
    let s = shell_counts(k);
    let sum: f64 = s.iter().enumerate().map(|(r2, &n)| if n > 0 { n as f64 / table[r2] } else { 0.0 }).sum();
    Ok(0.5 * q.eps() * sum)
}

/// [`sigma2_eps`] together with the continuum tail outside the ball of radius `K`.
pub fn sigma2_eps_detailed(q: &DispersionQ, k: usize) -> Result<Sigma2Eps> {
    let value = sigma2_eps(q, k)?;
    let eps = q.eps();
    let r0 = eps * k as f64;
    let tail = radial_integral(q, eps * eps, r0, (r0 * 1e3).max(1e4), 1e-10)?;
    Ok(Sigma2Eps { value, tail })
}

/// Number of lattice points of the cube `|k|_inf <= K` on each sphere `|k|^2 = r2`.
fn shell_counts(k: usize) -> Vec<u64> {
    let kk = k as i64;
    let mut out = vec![0u64; 3 * k * k + 1];
    for a in -kk..=kk {
        for b in -kk..=kk {
            for c in -kk..=kk {
                out[(a * a + b * b + c * c) as usize] += 1;
            }
        }
    }
    out
}

/// `<k>_eps^2` tabulated by `|k|^2`.
fn rate_table(q: &DispersionQ, r2max: usize) -> Result<Vec<f64>> {
    (0..=r2max).map(|r2| q.bracket2_radial((r2 as f64).sqrt()).map_err(Into::into)).collect()
}

/// `lambda = E V''''(X) / 6` for `X ~ N(0, sigma2)`.
pub fn coupling_lambda(v: &Potential, sigma2: f64) -> f64 {
    gaussian_expectation(&v.derivative(4), sigma2) / 6.0
}

/// `a_m = E V^(2m+2)(X) / (6 lambda (2m-1)!)` for `m = 1..n-1`, `X ~ N(0, sigma2_eps)`.
pub fn a_coeffs(v: &Potential, lambda: f64, sigma2_eps: f64) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return Err(RenormError::ZeroLambda);
    }
    Ok((1..v.n())
        .map(|m| gaussian_expectation(&v.derivative(2 * m + 2), sigma2_eps) / (6.0 * lambda * factorial(2 * m - 1)))
        .collect())
}

/// `C1 = E V''(X) / (3 lambda eps)`.
pub fn c1(v: &Potential, eps: f64, lambda: f64, sigma2_eps: f64) -> Result<f64> {
    if lambda == 0.0 {
        return Err(RenormError::ZeroLambda);
    }
    if eps <= 0.0 {
        return Err(RenormError::ZeroEps);
    }
    Ok(gaussian_expectation(&v.derivative(2), sigma2_eps) / (3.0 * lambda * eps))
}

/// `C = 3 lambda C1 - 9 lambda^2 C2 - 6 lambda^2 C3`.
pub fn c_total(lambda: f64, c1: f64, c2: f64, c3: f64) -> f64 {
    3.0 * lambda * c1 - 9.0 * lambda * lambda * c2 - 6.0 * lambda * lambda * c3
}

/// Time kernel used in the wick-contraction sums: continuum `1/(a + B)` or its exponential-Euler
/// counterpart at step `dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeKernel {
    Continuum,
    Discrete(f64),
}

impl TimeKernel {
    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            TimeKernel::Continuum => 1.0 / (a + b),
            TimeKernel::Discrete(h) => {
                let phi = -(-a * h).exp_m1() / a;
                phi * (-b * h).exp() / -(-(a + b) * h).exp_m1()
            }
        }
    }
}

/// Direct evaluation of
/// `sum_{l_1..l_p in cube K} prod_j b_j^{-1} T(a(l + k), sum_j b_j)`, `l = sum_j l_j`,
/// optionally restricted to `|l|_inf <= restrict`.
pub fn kernel_sum_direct(
    q: &DispersionQ,
    p: usize,
    k: usize,
    shift: [i64; 3],
    restrict: Option<usize>,
    time: TimeKernel,
) -> Result<f64> {
    if p == 0 {
        return Err(RenormError::Invalid("need at least one leg".into()));
    }
    let lat = FrequencyLattice::minimal(k);
    let terms = (lat.len() as f64).powi(p as i32);
    if terms > 6e8 {
        return Err(RenormError::Infeasible { terms });
    }
    let modes: Vec<([i64; 3], f64)> = lat
        .modes()
        .map(|l| Ok((l, q.bracket2(l)?)))
        .collect::<Result<_>>()?;
    let span = p as i64 * k as i64 + shift.iter().map(|x| x.abs()).max().unwrap();
    let table = rate_table(q, (3 * span * span) as usize)?;
    let lim = restrict.map(|r| r as i64);

    fn rec(
        legs: usize,
        acc: [i64; 3],
        w: f64,
        bsum: f64,
        modes: &[([i64; 3], f64)],
        shift: [i64; 3],
        lim: Option<i64>,
        table: &[f64],
        time: TimeKernel,
    ) -> f64 {
        if legs == 0 {
            if let Some(r) = lim {
                if acc.iter().any(|x| x.abs() > r) {
                    return 0.0;
                }
            }
            let l = [acc[0] + shift[0], acc[1] + shift[1], acc[2] + shift[2]];
            let a = table[(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]) as usize];
            return w * time.eval(a, bsum);
        }
        let mut s = 0.0;
        for (l, b) in modes {
            s += rec(
                legs - 1,
                [acc[0] + l[0], acc[1] + l[1], acc[2] + l[2]],
                w / b,
                bsum + b,
                modes,
                shift,
                lim,
                table,
                time,
            );
        }
        s
    }

    let parts: Vec<f64> = modes
        .par_iter()
        .map(|(l, b)| rec(p - 1, *l, 1.0 / b, *b, &modes, shift, lim, &table, time))
        .collect();
    Ok(parts.iter().sum())
}

/// Separable cosine transform of a radial cube-supported lattice function, evaluated on the
/// sorted octant `0 <= x <= y <= z <= P/2` (the result is symmetric under permutations).
struct OctantTransform {
    half: usize,
    /// `cos(2 pi l x / P)` for `x in 0..=P/2`, `l in 0..=lmax`, row-major in `x`.
    cos: Vec<f64>,
    lmax: usize,
}

impl OctantTransform {
    fn new(p: usize, lmax: usize) -> Self {
        let half = p / 2;
        let mut cos = Vec::with_capacity((half + 1) * (lmax + 1));
        for x in 0..=half {
            for l in 0..=lmax {
                let w = if l == 0 { 1.0 } else { 2.0 };
                cos.push(w * (2.0 * PI * ((l * x) % p) as f64 / p as f64).cos());
            }
        }
        Self { half, cos, lmax }
    }

    /// `F(x) = sum_{|l|_inf <= s} f(|l|^2) e^{-2 pi i l.x/P}` at `out[(x*h + y)*h + z]` for sorted
    /// `x <= y <= z`; other entries are left at zero.
    fn apply(&self, f: &dyn Fn(usize) -> f64, s: usize) -> Vec<f64> {
        assert!(s <= self.lmax);
        let h = self.half + 1;
        let n = s + 1;
        let row = |x: usize| &self.cos[x * (self.lmax + 1)..x * (self.lmax + 1) + n];
        // axis 2 on (a <= b, c) -> (a, b, z)
        let mut t1 = vec![0.0; n * n * h];
        for a in 0..n {
            for b in a..n {
                let src: Vec<f64> = (0..n).map(|c| f(a * a + b * b + c * c)).collect();
                let dst = &mut t1[(a * n + b) * h..(a * n + b) * h + h];
                for (z, d) in dst.iter_mut().enumerate() {
                    *d = row(z).iter().zip(&src).map(|(c, v)| c * v).sum();
                }
            }
        }
        // axis 1: (a, b, z) -> (a, y, z), z >= y
        let mut t2 = vec![0.0; n * h * h];
        for a in 0..n {
            for y in 0..h {
                let cr = row(y);
                let dst = &mut t2[(a * h + y) * h + y..(a * h + y) * h + h];
                for (b, c) in cr.iter().enumerate() {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    let src = &t1[(lo * n + hi) * h + y..(lo * n + hi) * h + h];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += c * v;
                    }
                }
            }
        }
        // axis 0: (a, y, z) -> (x, y, z), x <= y <= z
        let hh = h * h;
        let mut out = vec![0.0; h * hh];
        out.par_chunks_mut(hh).enumerate().for_each(|(x, dst)| {
            let cr = row(x);
            for (a, c) in cr.iter().enumerate() {
                for y in x..h {
                    let src = &t2[(a * h + y) * h + y..(a * h + y) * h + h];
                    let d = &mut dst[y * h + y..y * h + h];
                    for (d, v) in d.iter_mut().zip(src) {
                        *d += c * v;
                    }
                }
            }
        });
        out
    }
}

/// Same sum as [`kernel_sum_direct`] at `k = 0` with the continuum kernel, via
/// `1/A = int_0^inf e^{-sA} ds` (trapezoid in `ln s`) and separable cosine transforms per node.
/// `tol` sets the node spacing; the trapezoid error decays like `exp(-pi^2/du)`.
pub fn kernel_sum_transform(q: &DispersionQ, p: usize, k: usize, restrict: Option<usize>, tol: f64) -> Result<f64> {
    if p == 0 {
        return Err(RenormError::Invalid("need at least one leg".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(RenormError::Invalid("tol must lie in (0, 1)".into()));
    }
    let span_l = p * k;
    let span_h = restrict.map_or(span_l, |r| r.min(span_l));
    let mut pp = span_l + span_h + 1;
    pp += pp % 2;
    let half = pp / 2;
    let tr = OctantTransform::new(pp, span_h.max(k));
    let tb = rate_table(q, 3 * k * k)?;
    let ta = rate_table(q, 3 * span_h * span_h)?;
    let a_max = ta.iter().cloned().fold(0.0, f64::max) + p as f64 * tb.iter().cloned().fold(0.0, f64::max);
    let a_min = 1.0 + p as f64;
    let du = PI * PI / ((1.0 / tol).ln() + 1.0);
    // below s0 the integrand is flat to relative order (s0 a_max)^2
    let u_lo = -(a_max.ln()) + 0.5 * tol.ln();
    let u_hi = ((1.0 / tol).ln() / a_min).ln();
    let nodes = ((u_hi - u_lo) / du).ceil() as usize + 1;
    let h = half + 1;
    let mult = |x: usize| if x == 0 || x == half { 1.0 } else { 2.0 };
    let cut = (1.0 / tol).ln() + 10.0;
    let mut total = 0.0;
    for i in 0..nodes {
        let u = u_lo + du * i as f64;
        let s = u.exp();
        let reach = |tab: &[f64], lim: usize| (0..=lim).take_while(|&l| s * tab[l * l] < cut).last().unwrap_or(0);
        let kg = reach(&tb, k);
        let kh = reach(&ta, span_h);
        let g = tr.apply(&|r2| (-s * tb[r2]).exp() / tb[r2], kg);
        let hv = tr.apply(&|r2| (-s * ta[r2]).exp(), kh);
        let mut acc = 0.0;
        for x in 0..h {
            for y in x..h {
                let base = (x * h + y) * h;
                for z in y..h {
                    let perms = if x == z {
                        1.0
                    } else if x == y || y == z {
                        3.0
                    } else {
                        6.0
                    };
                    acc += perms * mult(x) * mult(y) * mult(z) * hv[base + z] * g[base + z].powi(p as i32);
                }
            }
        }
        let f = s * acc / (pp as f64).powi(3);
        total += if i == 0 { f * (1.0 + 0.5 * du) } else { du * f };
    }
    Ok(total)
}

/// How the lattice kernels are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelMethod {
    /// Transform path when the direct sum is large, direct otherwise.
    #[default]
    Auto,
    Direct,
    Transform,
}

/// Kernel evaluation method and accuracy of the transform path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelOpts {
    pub method: KernelMethod,
    pub tol: f64,
}

impl Default for KernelOpts {
    fn default() -> Self {
        Self { method: KernelMethod::Auto, tol: 1e-10 }
    }
}

fn kernel_sum(q: &DispersionQ, p: usize, k: usize, restrict: Option<usize>, time: TimeKernel, kopts: KernelOpts) -> Result<f64> {
    let terms = ((2 * k + 1) as f64).powi(3 * p as i32);
    let direct = match (kopts.method, time) {
        (_, TimeKernel::Discrete(_)) | (KernelMethod::Direct, _) => true,
        (KernelMethod::Transform, _) => false,
        (KernelMethod::Auto, _) => terms < 2e6,
    };
    if direct {
        kernel_sum_direct(q, p, k, [0, 0, 0], restrict, time)
    } else {
        kernel_sum_transform(q, p, k, restrict, kopts.tol)
    }
}

/// `int G_{eps,m}(s, k) ds = ((2m+1)!/2^{2m}) sum_{2m-tuples} prod <l_j>^{-2} / (<l+k>^2 + sum <l_j>^2)`.
pub fn g_kernel_time_integral(q: &DispersionQ, m: usize, k: usize, mode: [i64; 3]) -> Result<f64> {
    if m == 0 {
        return Err(RenormError::Invalid("m must be at least 1".into()));
    }
    let pref = factorial(2 * m + 1) / 4f64.powi(m as i32);
    let s = if mode == [0, 0, 0] {
        kernel_sum(q, 2 * m, k, None, TimeKernel::Continuum, KernelOpts::default())?
    } else {
        kernel_sum_direct(q, 2 * m, k, mode, None, TimeKernel::Continuum)?
    };
    Ok(pref * s)
}

/// `E[I(<1>^{diamond p}) o <1>^{diamond p}] = (p!/2^p) sum prod b_j^{-1} T(a, B)`.
pub fn wick_resonance_mean(q: &DispersionQ, p: usize, k: usize, restrict: Option<usize>, time: TimeKernel, kopts: KernelOpts) -> Result<f64> {
    Ok(factorial(p) / 2f64.powi(p as i32) * kernel_sum(q, p, k, restrict, time, kopts)?)
}

/// `C2 = sum_m (a_m/m)^2 eps^{2m-2} E[I(<1>^{diamond 2m}) o <1>^{diamond 2m}]`.
pub fn c2(q: &DispersionQ, a: &[f64], k: usize, time: TimeKernel, kopts: KernelOpts) -> Result<f64> {
    let eps = q.eps();
    let mut total = 0.0;
    for (i, am) in a.iter().enumerate() {
        let m = i + 1;
        if *am == 0.0 {
            continue;
        }
        let w = (am / m as f64).powi(2) * eps.powi(2 * m as i32 - 2);
        if w == 0.0 {
            continue;
        }
        total += w * wick_resonance_mean(q, 2 * m, k, None, time, kopts)?;
    }
    Ok(total)
}

/// `C3 = sum_{m=1}^{n-2} 3 a_m a_{m+1}/(m(2m+1)) eps^{2m-1} E[I(P_K <1>^{diamond(2m+1)}) o <1>^{diamond(2m+1)}]`.
pub fn c3(q: &DispersionQ, a: &[f64], k: usize, time: TimeKernel, kopts: KernelOpts) -> Result<f64> {
    let eps = q.eps();
    let mut total = 0.0;
    for m in 1..a.len() {
        let w = 3.0 * a[m - 1] * a[m] / (m * (2 * m + 1)) as f64 * eps.powi(2 * m as i32 - 1);
        if w == 0.0 {
            continue;
        }
        total += w * wick_resonance_mean(q, 2 * m + 1, k, Some(k), time, kopts)?;
    }
    Ok(total)
}

/// All constants at one `(eps, K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormSet {
    pub eps: f64,
    pub k: usize,
    pub sigma2: f64,
    pub sigma2_eps: f64,
    pub lambda: f64,
    pub a_m: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c_total: f64,
    /// Step of the discrete time kernel, when the constants match a time-stepped simulation.
    pub dt: Option<f64>,
}

/// Knobs for [`renorm_set`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenormOptions {
    pub dt: Option<f64>,
    pub kernel: KernelOpts,
    pub rmax: f64,
    pub tol: f64,
}

impl Default for RenormOptions {
    fn default() -> Self {
        Self { dt: None, kernel: KernelOpts::default(), rmax: 1e4, tol: 1e-12 }
    }
}

/// Evaluates every constant for `eps > 0` at cutoff `K`.
pub fn renorm_set(q: &DispersionQ, v: &Potential, k: usize, opts: &RenormOptions) -> Result<RenormSet> {
    let eps = q.eps();
    if eps <= 0.0 {
        return Err(RenormError::ZeroEps);
    }
    let sigma2 = sigma2_limit(q, opts.rmax, opts.tol)?;
    let lambda = coupling_lambda(v, sigma2);
    let s2e = sigma2_eps(q, k)?;
    let a = a_coeffs(v, lambda, s2e)?;
    let c1v = c1(v, eps, lambda, s2e)?;
    let time = opts.dt.map_or(TimeKernel::Continuum, TimeKernel::Discrete);
    let c2v = c2(q, &a, k, time, opts.kernel)?;
    let c3v = c3(q, &a, k, time, opts.kernel)?;
    Ok(RenormSet {
        eps,
        k,
        sigma2,
        sigma2_eps: s2e,
        lambda,
        c_total: c_total(lambda, c1v, c2v, c3v),
        a_m: a,
        c1: c1v,
        c2: c2v,
        c3: c3v,
        dt: opts.dt,
    })
}

/// Constants of the limiting model at cutoff `K` with coupling `lambda`: Laplacian weights,
/// `C1 = c^(1)`, `C2 = c^(2)`, `C3 = 0`.
pub fn limit_renorm_set(lambda: f64, k: usize, dt: Option<f64>) -> Result<RenormSet> {
    if lambda == 0.0 {
        return Err(RenormError::ZeroLambda);
    }
    let time = dt.map_or(TimeKernel::Continuum, TimeKernel::Discrete);
    let (s1, s2) = standard_constants_with(k, time)?;
    let c1v = s1;
    Ok(RenormSet {
        eps: 0.0,
        k,
        sigma2: f64::NAN,
        sigma2_eps: s1,
        lambda,
        a_m: vec![1.0],
        c1: c1v,
        c2: s2,
        c3: 0.0,
        c_total: c_total(lambda, c1v, s2, 0.0),
        dt,
    })
}

/// Sharp Fourier cutoff `|k|_inf <= floor(1/eps)` standing in for mollification at scale `eps`.
pub fn standard_cutoff(eps: f64) -> usize {
    (1.0 / eps + 1e-12).floor() as usize
}

/// `(c^(1), c^(2))` with Laplacian weights on the cube `|k|_inf <= cutoff`.
pub fn standard_constants(cutoff: usize) -> Result<(f64, f64)> {
    standard_constants_with(cutoff, TimeKernel::Continuum)
}

fn standard_constants_with(cutoff: usize, time: TimeKernel) -> Result<(f64, f64)> {
    let q = DispersionQ::laplacian(0.0);
    let table = rate_table(&q, 3 * cutoff * cutoff)?;
    let c1s: f64 = shell_counts(cutoff)
        .iter()
        .enumerate()
        .map(|(r2, &n)| if n > 0 { n as f64 / (2.0 * table[r2]) } else { 0.0 })
        .sum();
    let c2s = wick_resonance_mean(&q, 2, cutoff, None, time, KernelOpts::default())?;
    Ok((c1s, c2s))
}

/// Header of the constants CSV.
pub const CSV_HEADER: &str = "eps,K,sigma2_eps,lambda,C1,C2,C3,C_total";

impl RenormSet {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.eps, self.k, self.sigma2_eps, self.lambda, self.c1, self.c2, self.c3, self.c_total
        );
        s
    }
}

/// Least-squares line `y = a + b x` and its `R^2`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (my - b * mx, b, r2)
}

/// `K = ceil(4/eps)`.
pub fn default_cutoff(eps: f64) -> usize {
    (4.0 / eps - 1e-9).ceil() as usize
}
