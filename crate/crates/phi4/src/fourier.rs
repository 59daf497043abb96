//! Truncated Fourier fields on the 3-torus, the dispersion `<k>_eps`, transforms,
//! dealiased products and the diagonal semigroup.

use crate::fft::{self, index_of};
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FourierError {
    #[error("grid size {m} cannot hold cutoff {k} (need at least {need})")]
    GridTooSmall { k: usize, m: usize, need: usize },
    #[error("expected {expected} samples, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("fields live on different lattices ({0} vs {1})")]
    LatticeMismatch(FrequencyLattice, FrequencyLattice),
    #[error("symbol evaluation is not finite at z = {0}")]
    NonFinite(f64),
    #[error("symbol is negative at z = {0}: positivity violated")]
    Domain(f64),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FourierError>;

/// Modes `k` in `{-K..K}^3` together with a physical grid of `M` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FrequencyLattice {
    k: usize,
    m: usize,
}

impl fmt::Display for FrequencyLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K={} M={}", self.k, self.m)
    }
}

impl FrequencyLattice {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if m < 2 * k + 1 {
            return Err(FourierError::GridTooSmall { k, m, need: 2 * k + 1 });
        }
        Ok(Self { k, m })
    }

    /// Lattice with the smallest admissible grid.
    pub fn minimal(k: usize) -> Self {
        Self { k, m: 2 * k + 1 }
    }

    pub fn cutoff(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> usize {
        self.m
    }

    pub fn side(&self) -> usize {
        2 * self.k + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn physical_len(&self) -> usize {
        self.m.pow(3)
    }

    pub fn contains(&self, k: [i64; 3]) -> bool {
        let c = self.k as i64;
        k.iter().all(|&x| x.abs() <= c)
    }

    pub fn index(&self, k: [i64; 3]) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let c = self.k as i64;
        let s = self.side();
        Some(((k[0] + c) as usize * s + (k[1] + c) as usize) * s + (k[2] + c) as usize)
    }

    pub fn freq(&self, idx: usize) -> [i64; 3] {
        let s = self.side();
        let c = self.k as i64;
        [
            (idx / (s * s)) as i64 - c,
            ((idx / s) % s) as i64 - c,
            (idx % s) as i64 - c,
        ]
    }

    /// Index of `-k` for the mode stored at `idx`.
    pub fn conj_index(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn modes(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        (0..self.len()).map(move |i| self.freq(i))
    }

    /// Same cutoff on a different grid.
    pub fn with_grid(&self, m: usize) -> Result<Self> {
        Self::new(self.k, m)
    }
}

/// Radial symbol `Q`.
#[derive(Clone)]
pub enum Symbol {
    /// `Q(z) = z^2`.
    Laplacian,
    /// `Q(z) = sum_i c_i z^(2i+2)`, i.e. coefficients of `z^2, z^4, ...`.
    Polynomial(Vec<f64>),
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Laplacian => write!(f, "Laplacian"),
            Symbol::Polynomial(c) => write!(f, "Polynomial({c:?})"),
            Symbol::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// The symbol `Q` at scale `eps`, with `eps = 0` meaning the Laplacian limit.
#[derive(Clone, Debug)]
pub struct DispersionQ {
    symbol: Symbol,
    eps: f64,
    params: BTreeMap<String, f64>,
}

impl DispersionQ {
    pub fn laplacian(eps: f64) -> Self {
        Self { symbol: Symbol::Laplacian, eps, params: BTreeMap::new() }
    }

    /// `Q(z) = z^2 + nu z^4`.
    pub fn bilaplacian(nu: f64, eps: f64) -> Self {
        let mut params = BTreeMap::new();
        params.insert("nu".to_string(), nu);
        Self { symbol: Symbol::Polynomial(vec![1.0, nu]), eps, params }
    }

    pub fn polynomial(coeffs: Vec<f64>, eps: f64) -> Self {
        Self { symbol: Symbol::Polynomial(coeffs), eps, params: BTreeMap::new() }
    }

    pub fn custom<F>(name: &str, f: F, eps: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            symbol: Symbol::Custom { name: name.to_string(), f: Arc::new(f) },
            eps,
            params: BTreeMap::new(),
        }
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self { eps, ..self.clone() }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn symbol(&self) -> &Symbol {
        &self.symbol
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Raw radial symbol `Q(z)`.
    pub fn eval(&self, z: f64) -> f64 {
        match &self.symbol {
            Symbol::Laplacian => z * z,
            Symbol::Polynomial(c) => {
                let z2 = z * z;
                let mut acc = 0.0;
                for &ci in c.iter().rev() {
                    acc = acc * z2 + ci;
                }
                acc * z2
            }
            Symbol::Custom { f, .. } => f(z),
        }
    }

    /// `<k>_eps^2` as a function of `|k|`.
    pub fn bracket2_radial(&self, r: f64) -> Result<f64> {
        if self.eps == 0.0 {
            return Ok(1.0 + 4.0 * PI * PI * r * r);
        }
        let z = 2.0 * PI * self.eps * r;
        let q = self.eval(z);
        if !q.is_finite() {
            return Err(FourierError::NonFinite(z));
        }
        if q < 0.0 {
            return Err(FourierError::Domain(z));
        }
        Ok(1.0 + q / (self.eps * self.eps))
    }

    pub fn bracket2(&self, k: [i64; 3]) -> Result<f64> {
        let r2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        self.bracket2_radial(r2.sqrt())
    }

    pub fn bracket(&self, k: [i64; 3]) -> Result<f64> {
        self.bracket2(k).map(f64::sqrt)
    }

    /// `<k>_eps^2` for every mode of a lattice with cutoff `k`, in lattice order.
    pub fn rates(&self, lattice: &FrequencyLattice) -> Result<Vec<f64>> {
        let kk = lattice.cutoff();
        let mut by_r2 = vec![f64::NAN; 3 * kk * kk + 1];
        let mut out = Vec::with_capacity(lattice.len());
        for k in lattice.modes() {
            let r2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize;
            if by_r2[r2].is_nan() {
                by_r2[r2] = self.bracket2_radial((r2 as f64).sqrt())?;
            }
            out.push(by_r2[r2]);
        }
        Ok(out)
    }
}

/// Outcome of one assumption check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Clone, Debug)]
pub struct AssumptionCheck {
    pub item: u8,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub items: Vec<AssumptionCheck>,
    /// Fitted `eta` from the log-log slope of `Q` on `[1, zmax]`.
    pub eta_hat: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn status(&self, item: u8) -> CheckStatus {
        self.items
            .iter()
            .find(|c| c.item == item)
            .map(|c| c.status)
            .unwrap_or(CheckStatus::NotChecked)
    }
}

/// Checks items (1)-(3) of the symbol assumption on a log-spaced sample grid.
pub fn validate_symbol(q: &DispersionQ, zmax: f64, nsamples: usize) -> Result<ValidationReport> {
    assert!(zmax > 1.0 && nsamples >= 100, "need zmax > 1 and at least 100 samples");
    let ev = |z: f64| -> Result<f64> {
        let v = q.eval(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(FourierError::NonFinite(z))
        }
    };
    let mut items = Vec::new();

    let h = 1e-3;
    let q0 = ev(0.0)?;
    let curv = (q0 - 2.0 * ev(h)? + ev(2.0 * h)?) / (2.0 * h * h);
    let ok1 = q0.abs() < 1e-12 && (curv - 1.0).abs() < 1e-3;
    items.push(AssumptionCheck {
        item: 1,
        status: if ok1 { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("Q(0) = {q0:e}, Q''(0)/2 = {curv:.6}"),
    });

    let lo = 1e-3f64.ln();
    let hi = zmax.ln();
    let zs: Vec<f64> = (0..nsamples)
        .map(|i| (lo + (hi - lo) * i as f64 / (nsamples - 1) as f64).exp())
        .collect();
    let mut worst = None;
    let mut vals = Vec::with_capacity(zs.len());
    for &z in &zs {
        let v = ev(z)?;
        if v <= 0.0 && worst.is_none() {
            worst = Some(z);
        }
        vals.push(v);
    }
    items.push(AssumptionCheck {
        item: 2,
        status: if worst.is_none() { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: match worst {
            None => "Q > 0 on all samples".to_string(),
            Some(z) => format!("Q(z) <= 0 at z = {z:.4}"),
        },
    });

    let pts: Vec<(f64, f64)> = zs
        .iter()
        .zip(&vals)
        .filter(|(z, v)| **z >= 1.0 && **v > 0.0)
        .map(|(z, v)| (z.ln(), v.ln()))
        .collect();
    let eta_hat = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx - 3.0
    } else {
        f64::NAN
    };
    let ok3 = eta_hat > 0.0 && worst.is_none();
    items.push(AssumptionCheck {
        item: 3,
        status: if ok3 { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("fitted growth exponent {:.4} on [1, {zmax}]", eta_hat + 3.0),
    });
    items.push(AssumptionCheck {
        item: 4,
        status: CheckStatus::NotChecked,
        detail: "derivative growth bound is not evaluated".to_string(),
    });
    Ok(ValidationReport { items, eta_hat })
}

/// Complex coefficients of a field on a [`FrequencyLattice`].
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    lattice: FrequencyLattice,
    coeffs: Vec<Complex64>,
    hermitian: bool,
}

impl FourierField {
    pub fn zeros(lattice: FrequencyLattice) -> Self {
        Self { lattice, coeffs: vec![Complex64::default(); lattice.len()], hermitian: true }
    }

    pub fn constant(lattice: FrequencyLattice, c: f64) -> Self {
        let mut f = Self::zeros(lattice);
        f.coeffs[lattice.index([0, 0, 0]).unwrap()] = Complex64::new(c, 0.0);
        f
    }

    /// `exp(2 pi i k.x)`; not real unless `k = 0`.
    pub fn exponential(lattice: FrequencyLattice, k: [i64; 3]) -> Self {
        let mut f = Self::zeros(lattice);
        let i = lattice.index(k).expect("mode outside lattice");
        f.coeffs[i] = Complex64::new(1.0, 0.0);
        f.hermitian = k == [0, 0, 0];
        f
    }

    /// `cos(2 pi k.x)`.
    pub fn cosine(lattice: FrequencyLattice, k: [i64; 3]) -> Self {
        let mut f = Self::zeros(lattice);
        let mk = [-k[0], -k[1], -k[2]];
        f.coeffs[lattice.index(k).expect("mode outside lattice")] += Complex64::new(0.5, 0.0);
        f.coeffs[lattice.index(mk).unwrap()] += Complex64::new(0.5, 0.0);
        f
    }

    pub fn from_coeffs(lattice: FrequencyLattice, coeffs: Vec<Complex64>, hermitian: bool) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(FourierError::Shape { expected: lattice.len(), got: coeffs.len() });
        }
        Ok(Self { lattice, coeffs, hermitian })
    }

    pub fn lattice(&self) -> FrequencyLattice {
        self.lattice
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn set_hermitian(&mut self, h: bool) {
        self.hermitian = h;
    }

    pub fn get(&self, k: [i64; 3]) -> Complex64 {
        self.lattice.index(k).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    pub fn set(&mut self, k: [i64; 3], v: Complex64) {
        let i = self.lattice.index(k).expect("mode outside lattice");
        self.coeffs[i] = v;
    }

    /// Largest `|f(-k) - conj f(k)|`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[self.lattice.conj_index(i)] - self.coeffs[i].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Replaces the coefficients by their Hermitian part.
    pub fn symmetrize(&mut self) {
        let n = self.coeffs.len();
        for i in 0..n / 2 + 1 {
            let j = n - 1 - i;
            let a = 0.5 * (self.coeffs[i] + self.coeffs[j].conj());
            self.coeffs[i] = a;
            self.coeffs[j] = a.conj();
        }
        self.hermitian = true;
    }

    /// Copy onto lattice `target`: truncates or zero-pads modes.
    pub fn resample(&self, target: FrequencyLattice) -> Self {
        let mut out = Self::zeros(target);
        out.hermitian = self.hermitian;
        let c = self.lattice.cutoff().min(target.cutoff()) as i64;
        for a in -c..=c {
            for b in -c..=c {
                for d in -c..=c {
                    let k = [a, b, d];
                    out.coeffs[target.index(k).unwrap()] = self.coeffs[self.lattice.index(k).unwrap()];
                }
            }
        }
        out
    }

    /// Galerkin projection onto `|k|_inf <= k`, keeping the grid when possible.
    pub fn project(&self, k: usize) -> Self {
        let m = self.lattice.grid().max(2 * k + 1);
        self.resample(FrequencyLattice { k, m })
    }

    pub fn same_lattice(&self, other: &Self) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(FourierError::LatticeMismatch(self.lattice, other.lattice));
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut f = self.clone();
        f.scale(s);
        f
    }

    /// `self += s * other` on a shared lattice.
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.same_lattice(other)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * s;
        }
        self.hermitian &= other.hermitian;
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut f = self.clone();
        f.axpy(1.0, other)?;
        Ok(f)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut f = self.clone();
        f.axpy(-1.0, other)?;
        Ok(f)
    }

    /// `sum_k |f(k)|^2`, the spatial mean square by Parseval.
    pub fn norm2_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        let t = self.lattice.cutoff().max(other.lattice.cutoff());
        let lat = FrequencyLattice::minimal(t);
        let a = self.resample(lat);
        let b = other.resample(lat);
        a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    /// Complex grid samples on an `m^3` grid (requires `m >= 2K+1`).
    pub(crate) fn to_grid(&self, m: usize) -> Vec<Complex64> {
        assert!(m >= self.lattice.side(), "grid too small for field");
        let mut buf = vec![Complex64::default(); m * m * m];
        let c = self.lattice.cutoff() as i64;
        let s = self.lattice.side();
        for a in -c..=c {
            let ia = index_of(a, m) * m * m;
            for b in -c..=c {
                let ib = ia + index_of(b, m) * m;
                let row = ((a + c) as usize * s + (b + c) as usize) * s;
                for d in -c..=c {
                    buf[ib + index_of(d, m)] = self.coeffs[row + (d + c) as usize];
                }
            }
        }
        fft::plan(m).inverse(&mut buf);
        buf
    }

    /// Real samples on an `m^3` grid.
    pub fn to_physical_on(&self, m: usize) -> Vec<f64> {
        self.to_grid(m).into_iter().map(|z| z.re).collect()
    }

    /// Inverse transform onto the lattice's own grid.
    pub fn to_physical(&self) -> Vec<f64> {
        self.to_physical_on(self.lattice.grid())
    }

    pub fn to_physical_complex(&self) -> Vec<Complex64> {
        self.to_grid(self.lattice.grid())
    }

    /// Coefficients of grid samples on the lattice (aliased if the samples are not band-limited).
    pub(crate) fn from_grid(mut buf: Vec<Complex64>, m: usize, lattice: FrequencyLattice, hermitian: bool) -> Self {
        fft::plan(m).forward(&mut buf);
        let norm = 1.0 / (m * m * m) as f64;
        let c = lattice.cutoff() as i64;
        assert!(2 * lattice.cutoff() < m, "grid cannot resolve the requested lattice");
        let mut coeffs = Vec::with_capacity(lattice.len());
        for a in -c..=c {
            let ia = index_of(a, m) * m * m;
            for b in -c..=c {
                let ib = ia + index_of(b, m) * m;
                for d in -c..=c {
                    coeffs.push(buf[ib + index_of(d, m)] * norm);
                }
            }
        }
        let mut f = Self { lattice, coeffs, hermitian };
        if hermitian {
            f.symmetrize();
        }
        f
    }
}

/// Transform of real grid samples onto `lattice` (samples must lie on `lattice.grid()`).
pub fn forward(samples: &[f64], lattice: FrequencyLattice) -> Result<FourierField> {
    let m = lattice.grid();
    if samples.len() != m * m * m {
        return Err(FourierError::Shape { expected: m * m * m, got: samples.len() });
    }
    let buf = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    Ok(FourierField::from_grid(buf, m, lattice, true))
}

/// Real grid samples of a field on its own grid.
pub fn inverse(f: &FourierField) -> Vec<f64> {
    f.to_physical()
}

/// Multiplies each mode by `exp(-t <k>_eps^2)`.
pub fn apply_semigroup(f: &FourierField, q: &DispersionQ, t: f64) -> Result<FourierField> {
    if t < 0.0 {
        return Err(FourierError::NegativeTime(t));
    }
    let rates = q.rates(&f.lattice)?;
    let mut out = f.clone();
    for (c, r) in out.coeffs.iter_mut().zip(rates) {
        *c *= (-t * r).exp();
    }
    Ok(out)
}

fn pointwise_on(f: &FourierField, g: &FourierField, m: usize) -> Vec<Complex64> {
    let a = f.to_grid(m);
    let b = g.to_grid(m);
    a.into_iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Product projected back to the shared lattice, computed alias-free on a padded grid.
pub fn product(f: &FourierField, g: &FourierField, degree_hint: usize) -> Result<FourierField> {
    f.same_lattice(g)?;
    let k = f.lattice.cutoff();
    let need = ((degree_hint.max(2) + 1) * k + 1).max(3 * k + 1);
    let m = fft::good_size(need);
    let prod = pointwise_on(f, g, m);
    let big = FrequencyLattice { k, m };
    let out = FourierField::from_grid(prod, m, big, f.hermitian && g.hermitian);
    Ok(out.resample(f.lattice))
}

/// Exact product on the lattice with cutoff `K_f + K_g`.
pub fn product_full(f: &FourierField, g: &FourierField) -> FourierField {
    let k = f.lattice.cutoff() + g.lattice.cutoff();
    let m = fft::good_size(2 * k + 1);
    let prod = pointwise_on(f, g, m);
    let grid = f.lattice.grid().max(g.lattice.grid()).max(2 * k + 1);
    let out = FourierField::from_grid(prod, m, FrequencyLattice { k, m }, f.hermitian && g.hermitian);
    out.resample(FrequencyLattice { k, m: grid })
}

const MAGIC: &[u8; 8] = b"PHI4FLD1";
const MAX_SNAPSHOT_CUTOFF: u32 = 512;

/// Writes the binary snapshot format.
pub fn write_snapshot<W: Write>(f: &FourierField, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(f.lattice.cutoff() as u32).to_le_bytes())?;
    w.write_all(&(f.lattice.grid() as u32).to_le_bytes())?;
    w.write_all(&[f.hermitian as u8])?;
    for c in &f.coeffs {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn snapshot_bytes(f: &FourierField) -> Vec<u8> {
    let mut v = Vec::with_capacity(17 + 16 * f.coeffs.len());
    write_snapshot(f, &mut v).expect("writing to a Vec cannot fail");
    v
}

/// Decodes a snapshot, validating header, length and Hermitian symmetry.
pub fn decode_snapshot(bytes: &[u8]) -> Result<FourierField> {
    let bad = |s: &str| FourierError::Snapshot(s.to_string());
    if bytes.len() < 17 {
        return Err(bad("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let k = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let herm = match bytes[16] {
        0 => false,
        1 => true,
        _ => return Err(bad("hermitian flag must be 0 or 1")),
    };
    if k > MAX_SNAPSHOT_CUTOFF || m > 8 * MAX_SNAPSHOT_CUTOFF + 1 {
        return Err(bad("lattice too large"));
    }
    let lattice = FrequencyLattice::new(k as usize, m as usize).map_err(|e| bad(&e.to_string()))?;
    let body = &bytes[17..];
    if body.len() != 16 * lattice.len() {
        return Err(bad("payload length does not match lattice"));
    }
    let coeffs: Vec<Complex64> = body
        .chunks_exact(16)
        .map(|ch| {
            Complex64::new(
                f64::from_le_bytes(ch[..8].try_into().unwrap()),
                f64::from_le_bytes(ch[8..].try_into().unwrap()),
            )
        })
        .collect();
    if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(bad("non-finite coefficient"));
    }
    let f = FourierField { lattice, coeffs, hermitian: herm };
    if herm {
        let scale = f.coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        if f.hermitian_defect() > 1e-12 * scale {
            return Err(bad("hermitian flag set but coefficients are not conjugate-symmetric"));
        }
    }
    Ok(f)
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<FourierField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_snapshot(&bytes)
}

/// Largest `|k|` on the lattice, used to size dyadic partitions.
pub fn max_radius(k: usize) -> f64 {
    (3.0f64).sqrt() * k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_bijection() {
        let lat = FrequencyLattice::new(3, 8).unwrap();
        for i in 0..lat.len() {
            assert_eq!(lat.index(lat.freq(i)), Some(i));
            let k = lat.freq(i);
            assert_eq!(lat.freq(lat.conj_index(i)), [-k[0], -k[1], -k[2]]);
        }
        assert!(FrequencyLattice::new(3, 6).is_err());
    }

    #[test]
    fn polynomial_symbol_eval() {
        let q = DispersionQ::bilaplacian(2.0, 0.5);
        assert!((q.eval(3.0) - (9.0 + 2.0 * 81.0)).abs() < 1e-12);
    }
}
