//! Stationary Ornstein-Uhlenbeck free fields, counter-based noise, Hermite polynomials, Wick
//! powers and Gaussian chaos coefficients.

use crate::fourier::{DispersionQ, FourierError, FourierField, FrequencyLattice};
use crate::poly::{factorial, gaussian_moment, Poly};
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error("time step must be positive, got {0}")]
    BadStep(f64),
    #[error("coupled ensembles take 1 to 8 members, got {0}")]
    Members(usize),
}

pub type Result<T> = std::result::Result<T, GaussianError>;

/// Which family of draws a counter belongs to, so that independent uses never share words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Initial stationary draw.
    Stationary = 0,
    /// Increments on the simulation time grid.
    Path = 1,
    /// Increments on the burn-in grid before time 0.
    BurnIn = 2,
    /// Scalar draws not tied to a lattice mode.
    Scalar = 3,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Master seed; every draw is addressed by `(sample, phase, step, mode)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseSeed {
    pub master: u64,
}

impl NoiseSeed {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    /// Generator for one `(sample, phase, step)` triple.
    pub fn stream(&self, sample: u64, phase: Phase, step: u64) -> StepNoise {
        let mut key = [0u8; 32];
        let mut h = splitmix(self.master ^ 0x5048_4934_4E4F_4953);
        h = splitmix(h ^ sample);
        h = splitmix(h ^ phase as u64);
        for chunk in key.chunks_mut(8) {
            h = splitmix(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step);
        StepNoise { rng }
    }
}

/// Counter-addressed normals for one time step.
pub struct StepNoise {
    rng: ChaCha8Rng,
}

fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

/// Canonical key of a mode, independent of the lattice it lives on.
pub fn mode_key(k: [i64; 3]) -> u64 {
    let mask = (1u64 << 21) - 1;
    (zigzag(k[0]) & mask) << 42 | (zigzag(k[1]) & mask) << 21 | (zigzag(k[2]) & mask)
}

/// Whether `k` is the representative of the pair `{k, -k}` (first nonzero coordinate positive).
pub fn is_half_rep(k: [i64; 3]) -> bool {
    k.iter().find(|&&x| x != 0).is_some_and(|&x| x > 0)
}

impl StepNoise {
    /// Two independent standard normals attached to `key`.
    pub fn pair(&mut self, key: u64) -> (f64, f64) {
        self.pair_in(key, 0)
    }

    /// Like [`StepNoise::pair`] for an independent component `comp < 8`.
    pub fn pair_in(&mut self, key: u64, comp: u8) -> (f64, f64) {
        assert!(comp < 8);
        self.rng.set_word_pos(key as u128 * 4 + ((comp as u128) << 65));
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * f64::powi(2.0, -53);
        let u2 = (b >> 11) as f64 * f64::powi(2.0, -53);
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        (r * th.cos(), r * th.sin())
    }

    /// Hermitian field of unit complex normals: `E|z(k)|^2 = 1`, `z(0)` real.
    pub fn complex_normals(&mut self, lattice: FrequencyLattice) -> FourierField {
        self.complex_normals_in(lattice, 0)
    }

    /// Independent copy of [`StepNoise::complex_normals`] for component `comp`.
    pub fn complex_normals_in(&mut self, lattice: FrequencyLattice, comp: u8) -> FourierField {
        let mut f = FourierField::zeros(lattice);
        let n = lattice.len();
        let c = f.coeffs_mut();
        for i in 0..n {
            let k = lattice.freq(i);
            if k == [0, 0, 0] {
                c[i] = Complex64::new(self.pair_in(mode_key(k), comp).0, 0.0);
            } else if is_half_rep(k) {
                let (a, b) = self.pair_in(mode_key(k), comp);
                let z = Complex64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2;
                c[i] = z;
                c[n - 1 - i] = z.conj();
            }
        }
        f
    }
}

/// Per-mode OU state of the free field `<1>_eps`.
#[derive(Clone, Debug)]
pub struct ModeOUEnsemble {
    lattice: FrequencyLattice,
    q: DispersionQ,
    rates: Vec<f64>,
    t: f64,
    step: u64,
    seed: NoiseSeed,
    sample: u64,
    field: FourierField,
}

impl ModeOUEnsemble {
    pub fn lattice(&self) -> FrequencyLattice {
        self.lattice
    }

    pub fn symbol(&self) -> &DispersionQ {
        &self.q
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn field(&self) -> &FourierField {
        &self.field
    }

    pub fn into_field(self) -> FourierField {
        self.field
    }

    /// `<k>_eps^2` per mode in lattice order.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Overrides the step counter (used when several runs share one increment path).
    pub fn with_step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    /// Exact OU transition over `dt`, drawing the increments of counter `step + 1` in `phase`.
    pub fn advance_in(&mut self, dt: f64, phase: Phase) -> Result<()> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(GaussianError::BadStep(dt));
        }
        self.step += 1;
        let z = self.seed.stream(self.sample, phase, self.step).complex_normals(self.lattice);
        for ((c, a), g) in self.field.coeffs_mut().iter_mut().zip(&self.rates).zip(z.coeffs()) {
            let e = (-a * dt).exp();
            let sd = (-(-2.0 * a * dt).exp_m1() / (2.0 * a)).sqrt();
            *c = *c * e + g * sd;
        }
        self.t += dt;
        Ok(())
    }

    /// Exact OU transition over `dt` along the simulation path.
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        self.advance_in(dt, Phase::Path)
    }
}

/// Draws every mode from the stationary law `E|f(k)|^2 = 1/(2 <k>_eps^2)`.
pub fn sample_stationary(seed: NoiseSeed, sample: u64, lattice: FrequencyLattice, q: &DispersionQ) -> Result<ModeOUEnsemble> {
    sample_stationary_in(seed, sample, lattice, q, Phase::Stationary)
}

pub(crate) fn sample_stationary_in(
    seed: NoiseSeed,
    sample: u64,
    lattice: FrequencyLattice,
    q: &DispersionQ,
    phase: Phase,
) -> Result<ModeOUEnsemble> {
    let rates = q.rates(&lattice)?;
    let mut field = seed.stream(sample, phase, 0).complex_normals(lattice);
    for (c, a) in field.coeffs_mut().iter_mut().zip(&rates) {
        *c *= (0.5 / a).sqrt();
    }
    Ok(ModeOUEnsemble { lattice, q: q.clone(), rates, t: 0.0, step: 0, seed, sample, field })
}

/// Free fields of several symbols driven by one white noise: per mode, the vector of OU
/// processes with rates `<k>_i^2` is advanced with its exact joint Gaussian transition.
/// With a single member this coincides draw for draw with [`ModeOUEnsemble`].
#[derive(Clone, Debug)]
pub struct CoupledOU {
    lattice: FrequencyLattice,
    /// `rates[i][r2]`
    rates: Vec<Vec<f64>>,
    r2: Vec<usize>,
    t: f64,
    steps: [u64; 4],
    seed: NoiseSeed,
    sample: u64,
    fields: Vec<FourierField>,
    chol: Option<(f64, Vec<Vec<f64>>)>,
}

/// Lower Cholesky factor of `c` (row-major `n x n`); pivots lost to rounding are set to zero.
fn cholesky_psd(c: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = c[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                l[i * n + i] = if s > 1e-14 * c[i * n + i] { s.sqrt() } else { 0.0 };
            } else {
                let d = l[j * n + j];
                l[i * n + j] = if d > 0.0 { s / d } else { 0.0 };
            }
        }
    }
    l
}

impl CoupledOU {
    /// Joint stationary draw at time 0 (counter 0 of the `Stationary` phase).
    pub fn stationary(seed: NoiseSeed, sample: u64, lattice: FrequencyLattice, qs: &[DispersionQ]) -> Result<Self> {
        Self::stationary_in(seed, sample, lattice, qs, Phase::Stationary)
    }

    pub(crate) fn stationary_in(
        seed: NoiseSeed,
        sample: u64,
        lattice: FrequencyLattice,
        qs: &[DispersionQ],
        phase: Phase,
    ) -> Result<Self> {
        if qs.is_empty() || qs.len() > 8 {
            return Err(GaussianError::Members(qs.len()));
        }
        let k = lattice.cutoff();
        let r2max = 3 * k * k;
        let rates = qs
            .iter()
            .map(|q| (0..=r2max).map(|r2| q.bracket2_radial((r2 as f64).sqrt())).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let r2 = lattice.modes().map(|m| (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as usize).collect();
        let mut me = Self {
            lattice,
            rates,
            r2,
            t: 0.0,
            steps: [0; 4],
            seed,
            sample,
            fields: Vec::new(),
            chol: None,
        };
        let gram = me.gram(None);
        me.fields = me.combine(&gram, phase, 0, None);
        Ok(me)
    }

    fn members(&self) -> usize {
        self.rates.len()
    }

    /// Per `|k|^2`, the Cholesky factor of the stationary covariance (`h = None`) or of the
    /// increment covariance over `h`.
    fn gram(&self, h: Option<f64>) -> Vec<Vec<f64>> {
        let n = self.members();
        (0..self.rates[0].len())
            .map(|r2| {
                let mut c = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let s = self.rates[i][r2] + self.rates[j][r2];
                        c[i * n + j] = match h {
                            None => 1.0 / s,
                            Some(h) => -(-s * h).exp_m1() / s,
                        };
                    }
                }
                cholesky_psd(&c, n)
            })
            .collect()
    }

    fn combine(&self, chol: &[Vec<f64>], phase: Phase, step: u64, decay: Option<f64>) -> Vec<FourierField> {
        let n = self.members();
        let mut stream = self.seed.stream(self.sample, phase, step);
        let z: Vec<FourierField> = (0..n).map(|c| stream.complex_normals_in(self.lattice, c as u8)).collect();
        (0..n)
            .map(|i| {
                let mut f = match decay {
                    Some(_) => self.fields[i].clone(),
                    None => FourierField::zeros(self.lattice),
                };
                for (idx, c) in f.coeffs_mut().iter_mut().enumerate() {
                    let r2 = self.r2[idx];
                    let l = &chol[r2];
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (j, zj) in z.iter().enumerate().take(i + 1) {
                        acc += zj.coeffs()[idx] * l[i * n + j];
                    }
                    *c = match decay {
                        Some(h) => *c * (-self.rates[i][r2] * h).exp() + acc,
                        None => acc,
                    };
                }
                f
            })
            .collect()
    }

    /// Exact joint transition over `dt` with the next counter of `phase`.
    pub fn advance_in(&mut self, dt: f64, phase: Phase) -> Result<()> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(GaussianError::BadStep(dt));
        }
        if self.chol.as_ref().is_none_or(|(h, _)| *h != dt) {
            self.chol = Some((dt, self.gram(Some(dt))));
        }
        let slot = phase as usize;
        self.steps[slot] += 1;
        let chol = &self.chol.as_ref().expect("set above").1;
        self.fields = self.combine(chol, phase, self.steps[slot], Some(dt));
        self.t += dt;
        Ok(())
    }

    pub fn advance(&mut self, dt: f64) -> Result<()> {
        self.advance_in(dt, Phase::Path)
    }

    pub fn fields(&self) -> &[FourierField] {
        &self.fields
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn lattice(&self) -> FrequencyLattice {
        self.lattice
    }

    /// Shifts the clock without touching the state (burn-in starts at negative times).
    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }
}

/// `H_n(x; nu)` from `H_{n+1} = x H_n - n nu H_{n-1}`.
pub fn hermite(n: usize, x: f64, nu: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if n == 0 {
        return 1.0;
    }
    for k in 1..n {
        let h2 = x * h1 - k as f64 * nu * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// `H_n(.; nu)` as a polynomial.
pub fn hermite_poly(n: usize, nu: f64) -> Poly {
    let x = Poly::monomial(1, 1.0);
    let (mut h0, mut h1) = (Poly::new(vec![1.0]), x.clone());
    if n == 0 {
        return h0;
    }
    for k in 1..n {
        let h2 = x.mul(&h1).sub(&h0.scale(k as f64 * nu));
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Pointwise `H_n(f(x); nu)`.
pub fn wick_power(f_phys: &[f64], n: usize, nu: f64) -> Vec<f64> {
    f_phys.iter().map(|&x| hermite(n, x, nu)).collect()
}

/// `c_k = E[f^(k)(X)] / k!` for `X ~ N(0, nu)`, so that `f = sum_k c_k H_k(.; nu)`.
pub fn chaos_coefficients(f: &Poly, nu: f64) -> Vec<f64> {
    let mut d = f.clone();
    let mut out = Vec::with_capacity(f.degree() + 1);
    for k in 0..=f.degree() {
        out.push(gaussian_expectation(&d, nu) / factorial(k));
        d = d.derivative();
    }
    out
}

/// `E f(X)` for `X ~ N(0, sigma2)` from the moment formula.
pub fn gaussian_expectation(f: &Poly, sigma2: f64) -> f64 {
    f.coeffs().iter().enumerate().map(|(p, a)| a * gaussian_moment(p, sigma2)).sum()
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the weight `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn gh64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(64))
}

/// `E f(X)` for `X ~ N(0, sigma2)` by 64-node Gauss-Hermite quadrature.
pub fn gaussian_expectation_fn<F: Fn(f64) -> f64>(f: F, sigma2: f64) -> f64 {
    let (x, w) = gh64();
    let s = (2.0 * sigma2).sqrt();
    x.iter().zip(w).map(|(xi, wi)| wi * f(s * xi)).sum::<f64>() / std::f64::consts::PI.sqrt()
}
