//! Littlewood-Paley blocks, grid Besov norms, Bony paraproducts and the commutators built on
//! them.
//!
//! Blocks are realised on a physical grid: each `Delta_j f` is a Fourier multiplier followed by
//! a band-limited inverse transform, and paraproducts are sums of pointwise block products.
//! When the grid resolves the full product band, the decomposition `fg = f<g + f>g + f o g`
//! holds to rounding.

use crate::fft::{self, Fft3};
use crate::fourier::{self, DispersionQ, FourierError, FourierField, FrequencyLattice};
use num_complex::Complex64;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BesovError {
    #[error(transparent)]
    Fourier(#[from] FourierError),
    #[error("block index {0} is below -1")]
    BadBlock(i32),
    #[error("trajectories have {f} and {g} samples but the time grid has {t}")]
    TimeGrid { f: usize, g: usize, t: usize },
    #[error("time grid must start at 0 and increase")]
    BadTimes,
}

pub type Result<T> = std::result::Result<T, BesovError>;

/// Radial profile: 1 on `[0, 3/4]`, 0 on `[4/3, inf)`, C^2 quintic in between.
pub fn theta(r: f64) -> f64 {
    const A: f64 = 0.75;
    const B: f64 = 4.0 / 3.0;
    if r <= A {
        1.0
    } else if r >= B {
        0.0
    } else {
        let s = (r - A) / (B - A);
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// `chi_tilde = theta`, `chi(xi) = theta(|xi|/2) - theta(|xi|)`, and `chi_j = chi(./2^j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicPartition {
    jmax: i32,
}

impl DyadicPartition {
    /// Smallest `jmax` with `2^jmax >= 8 band / 3`.
    pub fn for_band(band: usize) -> Self {
        let mut j = 0;
        while (1u64 << j) as f64 * 3.0 < 8.0 * band as f64 {
            j += 1;
        }
        Self { jmax: j }
    }

    pub fn jmax(&self) -> i32 {
        self.jmax
    }

    pub fn chi_tilde(r: f64) -> f64 {
        theta(r)
    }

    pub fn chi(r: f64) -> f64 {
        theta(r / 2.0) - theta(r)
    }

    /// Weight of block `j >= -1` at radius `r`.
    pub fn weight(j: i32, r: f64) -> f64 {
        if j < 0 {
            theta(r)
        } else {
            Self::chi(r / f64::powi(2.0, j))
        }
    }

    /// Largest `|1 - sum_j chi_j(r)|` over `r` sampled in `[0, 2^jmax]`.
    pub fn partition_residual(&self, samples: usize) -> f64 {
        let top = f64::powi(2.0, self.jmax);
        (0..=samples)
            .map(|i| {
                let r = top * i as f64 / samples as f64;
                let s: f64 = (-1..=self.jmax).map(|j| Self::weight(j, r)).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Whether `r` could carry weight in block `j` (support test).
    pub fn in_support(j: i32, r: f64) -> bool {
        if j < 0 {
            r < 4.0 / 3.0
        } else {
            let s = f64::powi(2.0, j);
            r > 0.75 * s && r < 8.0 / 3.0 * s
        }
    }
}

/// Per-block grid sup norms `b_j = ||Delta_j f||_inf` for `j = -1..=jmax`.
#[derive(Clone, Debug, PartialEq)]
pub struct BesovProfile {
    pub sups: Vec<f64>,
}

impl BesovProfile {
    pub fn norm(&self, alpha: f64) -> f64 {
        self.sups
            .iter()
            .enumerate()
            .map(|(i, b)| 2f64.powf(alpha * (i as f64 - 1.0)) * b)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema=1\nj,b_j\n");
        for (i, b) in self.sups.iter().enumerate() {
            let _ = writeln!(s, "{},{:.17e}", i as i64 - 1, b);
        }
        s
    }
}

/// Physical blocks of one field; entry `j + 1` is `None` when the block vanishes.
#[derive(Clone, Debug)]
pub(crate) struct Blocks {
    pub(crate) b: Vec<Option<Vec<f64>>>,
}

impl Blocks {
    fn len(&self) -> usize {
        self.b.len()
    }
}

/// Transforms and block filters for one cubic grid.
pub(crate) struct GridOps {
    m: usize,
    fft: Arc<Fft3>,
    part: DyadicPartition,
    /// `table[j + 1][|k|^2]`
    table: Vec<Vec<f64>>,
}

fn grid_cache() -> &'static Mutex<HashMap<usize, Arc<GridOps>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GridOps>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl GridOps {
    pub(crate) fn get(m: usize) -> Arc<GridOps> {
        let mut map = grid_cache().lock().expect("grid cache poisoned");
        map.entry(m).or_insert_with(|| Arc::new(GridOps::new(m))).clone()
    }

    fn new(m: usize) -> Self {
        let band = (m - 1) / 2;
        let part = DyadicPartition::for_band(band.max(1));
        let r2max = 3 * band * band;
        let table = (-1..=part.jmax)
            .map(|j| (0..=r2max).map(|r2| DyadicPartition::weight(j, (r2 as f64).sqrt())).collect())
            .collect();
        Self { m, fft: fft::plan(m), part, table }
    }

    pub(crate) fn m(&self) -> usize {
        self.m
    }

    pub(crate) fn max_band(&self) -> usize {
        (self.m - 1) / 2
    }

    fn check_band(&self, band: usize) {
        assert!(2 * band < self.m, "band {band} is not resolved on grid {}", self.m);
    }

    /// Real samples of a (Hermitian) field.
    pub(crate) fn phys(&self, f: &FourierField) -> Vec<f64> {
        let b = f.lattice().cutoff();
        self.check_band(b);
        self.fft.inverse_banded(f.coeffs(), b).into_iter().map(|z| z.re).collect()
    }

    /// Samples of two real fields with one complex transform.
    pub(crate) fn phys2(&self, f: &FourierField, g: &FourierField) -> (Vec<f64>, Vec<f64>) {
        let b = f.lattice().cutoff().max(g.lattice().cutoff());
        self.check_band(b);
        // the compact layout depends only on the band, so fields already at band `b` are used as is
        let lat = FrequencyLattice::minimal(b);
        let at_band = |h: &FourierField| if h.lattice().cutoff() == b { None } else { Some(h.resample(lat)) };
        let (fr, gr) = (at_band(f), at_band(g));
        let packed: Vec<Complex64> = fr
            .as_ref()
            .unwrap_or(f)
            .coeffs()
            .iter()
            .zip(gr.as_ref().unwrap_or(g).coeffs())
            .map(|(a, c)| a + Complex64::i() * c)
            .collect();
        let out = self.fft.inverse_banded(&packed, b);
        (out.iter().map(|z| z.re).collect(), out.iter().map(|z| z.im).collect())
    }

    /// Coefficients `|k|_inf <= band` of real samples.
    pub(crate) fn spec(&self, p: &[f64], band: usize) -> FourierField {
        self.check_band(band);
        let buf = p.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let norm = 1.0 / (self.m * self.m * self.m) as f64;
        let c: Vec<Complex64> = self.fft.forward_banded(buf, band).into_iter().map(|z| z * norm).collect();
        let lat = FrequencyLattice::new(band, self.m).expect("band checked");
        let mut f = FourierField::from_coeffs(lat, c, true).expect("length matches");
        f.symmetrize();
        f
    }

    /// Coefficients of two real sample arrays from one complex transform.
    pub(crate) fn spec2(&self, p: &[f64], q: &[f64], band: usize) -> (FourierField, FourierField) {
        self.check_band(band);
        let buf = p.iter().zip(q).map(|(&x, &y)| Complex64::new(x, y)).collect();
        let norm = 1.0 / (self.m * self.m * self.m) as f64;
        let z = self.fft.forward_banded(buf, band);
        let n = z.len();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let zc = z[n - 1 - i].conj();
            a.push((z[i] + zc) * (0.5 * norm));
            b.push((z[i] - zc) * Complex64::new(0.0, -0.5 * norm));
        }
        let lat = FrequencyLattice::new(band, self.m).expect("band checked");
        (
            FourierField::from_coeffs(lat, a, true).expect("length matches"),
            FourierField::from_coeffs(lat, b, true).expect("length matches"),
        )
    }

    /// Multiplier of block `j` applied to compact coefficients.
    pub(crate) fn filter(&self, f: &FourierField, j: i32) -> Option<FourierField> {
        let lat = f.lattice();
        let band = lat.cutoff();
        if j > self.part.jmax || (j >= 0 && 0.75 * f64::powi(2.0, j) >= (3.0f64).sqrt() * band as f64) {
            return None;
        }
        let row = &self.table[(j + 1) as usize];
        let mut out = f.clone();
        let mut any = false;
        for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
            let k = lat.freq(i);
            let r2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as usize;
            let w = row[r2];
            if w != 0.0 {
                any = true;
            }
            *c *= w;
        }
        // trim to the block's support so the transform runs on a smaller band
        let outer = if j < 0 { 4.0 / 3.0 } else { 8.0 / 3.0 * f64::powi(2.0, j) };
        let trim = (outer.floor() as usize).min(band);
        any.then(|| if trim < band { out.resample(FrequencyLattice::minimal(trim)) } else { out })
    }

    /// Physical blocks `j = -1..=jmax`, two per transform.
    pub(crate) fn blocks(&self, f: &FourierField) -> Blocks {
        self.check_band(f.lattice().cutoff());
        let nb = (self.part.jmax + 2) as usize;
        let filt: Vec<Option<FourierField>> = (-1..=self.part.jmax).map(|j| self.filter(f, j)).collect();
        let live: Vec<usize> = (0..nb).filter(|&i| filt[i].is_some()).collect();
        let mut b: Vec<Option<Vec<f64>>> = vec![None; nb];
        for pair in live.chunks(2) {
            if pair.len() == 2 {
                let (x, y) = self.phys2(filt[pair[0]].as_ref().unwrap(), filt[pair[1]].as_ref().unwrap());
                b[pair[0]] = Some(x);
                b[pair[1]] = Some(y);
            } else {
                b[pair[0]] = Some(self.phys(filt[pair[0]].as_ref().unwrap()));
            }
        }
        Blocks { b }
    }

    /// Blocks of two fields, sharing transforms across both.
    pub(crate) fn blocks2(&self, f: &FourierField, g: &FourierField) -> (Blocks, Blocks) {
        let nb = (self.part.jmax + 2) as usize;
        let mut filt: Vec<(usize, usize, FourierField)> = Vec::new();
        for (w, h) in [f, g].into_iter().enumerate() {
            self.check_band(h.lattice().cutoff());
            for j in -1..=self.part.jmax {
                if let Some(x) = self.filter(h, j) {
                    filt.push((w, (j + 1) as usize, x));
                }
            }
        }
        let mut out = [Blocks { b: vec![None; nb] }, Blocks { b: vec![None; nb] }];
        for pair in filt.chunks(2) {
            if pair.len() == 2 {
                let (x, y) = self.phys2(&pair[0].2, &pair[1].2);
                out[pair[0].0].b[pair[0].1] = Some(x);
                out[pair[1].0].b[pair[1].1] = Some(y);
            } else {
                out[pair[0].0].b[pair[0].1] = Some(self.phys(&pair[0].2));
            }
        }
        let [a, b] = out;
        (a, b)
    }
}

fn add_prod(out: &mut [f64], a: &[f64], b: &[f64]) {
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += x * y;
    }
}

/// `f < g = sum_j S_{j-2} f Delta_j g` on the grid.
pub(crate) fn lt_phys(f: &Blocks, g: &Blocks, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_live = false;
    // index i = j + 1; S_{j-2} collects blocks with index <= i - 2
    for i in 0..g.len() {
        if i >= 2 {
            if let Some(fb) = &f.b[i - 2] {
                for (a, b) in s.iter_mut().zip(fb) {
                    *a += b;
                }
                s_live = true;
            }
        }
        if let (true, Some(gb)) = (s_live, &g.b[i]) {
            add_prod(&mut out, &s, gb);
        }
    }
    out
}

/// `f o g = sum_{|i-j|<=1} Delta_i f Delta_j g` on the grid.
pub(crate) fn res_phys(f: &Blocks, g: &Blocks, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let nb = f.len();
    for i in 0..nb {
        let Some(fb) = &f.b[i] else { continue };
        for j in i.saturating_sub(1)..(i + 2).min(nb) {
            if let Some(gb) = &g.b[j] {
                add_prod(&mut out, fb, gb);
            }
        }
    }
    out
}

fn same(f: &FourierField, g: &FourierField) -> Result<()> {
    f.same_lattice(g).map_err(BesovError::from)
}

/// Grid able to hold exact blocks of band `kin` and alias-free products projected to band `kout`
/// of factors whose bands sum to `ktot`.
fn grid_for(kin: usize, ktot: usize, kout: usize) -> Arc<GridOps> {
    GridOps::get(fft::good_size((2 * kin + 1).max(ktot + kout + 1)))
}

/// `Delta_j f` as a Fourier multiplier.
pub fn block(f: &FourierField, j: i32) -> Result<FourierField> {
    if j < -1 {
        return Err(BesovError::BadBlock(j));
    }
    let lat = f.lattice();
    let mut out = f.clone();
    for (i, c) in out.coeffs_mut().iter_mut().enumerate() {
        let k = lat.freq(i);
        let r = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
        *c *= DyadicPartition::weight(j, r);
    }
    Ok(out)
}

/// Partition used for a field of cutoff `k`.
pub fn partition_for(f: &FourierField) -> DyadicPartition {
    DyadicPartition::for_band(f.lattice().cutoff().max(1))
}

/// Grid sup norms of every block, evaluated on the field's own grid.
pub fn besov_profile(f: &FourierField) -> BesovProfile {
    let m = f.lattice().grid();
    let part = partition_for(f);
    let plan = fft::plan(m);
    let band = f.lattice().cutoff();
    let sups = (-1..=part.jmax())
        .map(|j| {
            let b = block(f, j).expect("j >= -1");
            if b.coeffs().iter().all(|c| c.norm() == 0.0) {
                return 0.0;
            }
            plan.inverse_banded(b.coeffs(), band).iter().map(|z| z.re.abs()).fold(0.0, f64::max)
        })
        .collect();
    BesovProfile { sups }
}

/// `sup_j 2^{alpha j} ||Delta_j f||_inf`.
pub fn besov_norm(f: &FourierField, alpha: f64) -> f64 {
    besov_profile(f).norm(alpha)
}

fn check_grid(f: &FourierField, g: &FourierField) -> Result<usize> {
    same(f, g)?;
    Ok(f.lattice().cutoff())
}

/// `f < g`, projected to the shared lattice.
pub fn para_lt(f: &FourierField, g: &FourierField) -> Result<FourierField> {
    let k = check_grid(f, g)?;
    let ops = grid_for(k, 2 * k, k);
    let (bf, bg) = ops.blocks2(f, g);
    let p = lt_phys(&bf, &bg, ops.m().pow(3));
    Ok(ops.spec(&p, k).resample(f.lattice()))
}

/// `f > g = g < f`.
pub fn para_gt(f: &FourierField, g: &FourierField) -> Result<FourierField> {
    para_lt(g, f)
}

/// `f o g`, projected to the shared lattice.
pub fn resonance(f: &FourierField, g: &FourierField) -> Result<FourierField> {
    let k = check_grid(f, g)?;
    let ops = grid_for(k, 2 * k, k);
    let (bf, bg) = ops.blocks2(f, g);
    let p = res_phys(&bf, &bg, ops.m().pow(3));
    Ok(ops.spec(&p, k).resample(f.lattice()))
}

/// `(f < g, f > g, f o g)` from one set of blocks, projected to the shared lattice.
pub fn bony(f: &FourierField, g: &FourierField) -> Result<(FourierField, FourierField, FourierField)> {
    let k = check_grid(f, g)?;
    let ops = grid_for(k, 2 * k, k);
    let (bf, bg) = ops.blocks2(f, g);
    let n = ops.m().pow(3);
    let (lt, gt) = ops.spec2(&lt_phys(&bf, &bg, n), &lt_phys(&bg, &bf, n), k);
    let rs = ops.spec(&res_phys(&bf, &bg, n), k);
    let lat = f.lattice();
    Ok((lt.resample(lat), gt.resample(lat), rs.resample(lat)))
}

/// The three Bony pieces of `fg`, each exact at full band `K_f + K_g`.
pub fn bony_full(f: &FourierField, g: &FourierField) -> (FourierField, FourierField, FourierField) {
    let kf = f.lattice().cutoff();
    let kg = g.lattice().cutoff();
    let kt = kf + kg;
    let ops = grid_for(kt, kt, kt);
    let (bf, bg) = ops.blocks2(f, g);
    let n = ops.m().pow(3);
    let lt = lt_phys(&bf, &bg, n);
    let gt = lt_phys(&bg, &bf, n);
    let rs = res_phys(&bf, &bg, n);
    let (a, b) = ops.spec2(&lt, &gt, kt);
    (a, b, ops.spec(&rs, kt))
}

/// `Com(f, g, h) = (f < g) o h - f (g o h)`, projected to the shared lattice.
pub fn commutator_com(f: &FourierField, g: &FourierField, h: &FourierField) -> Result<FourierField> {
    let k = check_grid(f, g)?;
    same(f, h)?;
    let ops = grid_for(2 * k, 3 * k, k);
    let n = ops.m().pow(3);
    let (bf, bg) = ops.blocks2(f, g);
    let lt = ops.spec(&lt_phys(&bf, &bg, n), 2 * k);
    let (blt, bh) = ops.blocks2(&lt, h);
    let first = res_phys(&blt, &bh, n);
    let gh = res_phys(&bg, &bh, n);
    let fp = ops.phys(f);
    let p: Vec<f64> = first.iter().zip(&fp).zip(&gh).map(|((a, x), y)| a - x * y).collect();
    Ok(ops.spec(&p, k).resample(f.lattice()))
}

/// `e^{t(L_eps - 1)}(f < g) - f < e^{t(L_eps - 1)} g`.
pub fn heat_para_commutator(f: &FourierField, g: &FourierField, q: &DispersionQ, t: f64) -> Result<FourierField> {
    if t < 0.0 {
        return Err(FourierError::NegativeTime(t).into());
    }
    let a = fourier::apply_semigroup(&para_lt(f, g)?, q, t)?;
    let b = para_lt(f, &fourier::apply_semigroup(g, q, t)?)?;
    Ok(a.sub(&b)?)
}

/// Left-endpoint exponential quadrature of `I(F)(t_n) = int_0^{t_n} e^{(t_n - s)(L_eps - 1)} F(s) ds`.
pub fn duhamel(traj: &[FourierField], q: &DispersionQ, t_grid: &[f64]) -> Result<Vec<FourierField>> {
    if traj.len() != t_grid.len() {
        return Err(BesovError::TimeGrid { f: traj.len(), g: traj.len(), t: t_grid.len() });
    }
    if t_grid.first().is_some_and(|&t| t != 0.0) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BesovError::BadTimes);
    }
    let Some(first) = traj.first() else { return Ok(Vec::new()) };
    let rates = q.rates(&first.lattice())?;
    let mut acc = FourierField::zeros(first.lattice());
    let mut out = vec![acc.clone()];
    for n in 1..traj.len() {
        let h = t_grid[n] - t_grid[n - 1];
        same(&traj[n - 1], &acc)?;
        for ((c, src), a) in acc.coeffs_mut().iter_mut().zip(traj[n - 1].coeffs()).zip(&rates) {
            let e = (-a * h).exp();
            *c = *c * e + src * (-(-a * h).exp_m1() / a);
        }
        out.push(acc.clone());
    }
    Ok(out)
}

/// `[I_eps, <](f, g)(t) = I_eps(f < g)(t) - f(t) < I_eps(g)(t)` along a time grid.
pub fn duhamel_para_commutator(
    f_traj: &[FourierField],
    g_traj: &[FourierField],
    q: &DispersionQ,
    t_grid: &[f64],
) -> Result<Vec<FourierField>> {
    if f_traj.len() != t_grid.len() || g_traj.len() != t_grid.len() {
        return Err(BesovError::TimeGrid { f: f_traj.len(), g: g_traj.len(), t: t_grid.len() });
    }
    let lt: Vec<FourierField> = f_traj.iter().zip(g_traj).map(|(f, g)| para_lt(f, g)).collect::<Result<_>>()?;
    let ilt = duhamel(&lt, q, t_grid)?;
    let ig = duhamel(g_traj, q, t_grid)?;
    ilt.iter()
        .zip(f_traj)
        .zip(&ig)
        .map(|((a, f), g)| Ok(a.sub(&para_lt(f, g)?)?))
        .collect()
}
