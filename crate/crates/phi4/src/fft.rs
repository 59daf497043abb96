//! Cubic 3-D FFTs built from rustfft line transforms, plus a plan cache.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

pub(crate) struct Fft3 {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

fn cache() -> &'static Mutex<HashMap<usize, Arc<Fft3>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft3>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared plan for an `m x m x m` grid.
pub(crate) fn plan(m: usize) -> Arc<Fft3> {
    let mut map = cache().lock().expect("fft plan cache poisoned");
    map.entry(m)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Fft3 {
                m,
                fwd: planner.plan_fft_forward(m),
                inv: planner.plan_fft_inverse(m),
            })
        })
        .clone()
}

/// Smallest size `>= n` whose prime factors are all 2 or 3 (fastest radices here).
pub(crate) fn good_size(n: usize) -> usize {
    let mut s = n.max(1);
    loop {
        let mut r = s;
        for p in [2, 3] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return s;
        }
        s += 1;
    }
}

/// Grid index of signed frequency `k`.
#[inline]
pub(crate) fn index_of(k: i64, m: usize) -> usize {
    k.rem_euclid(m as i64) as usize
}

impl Fft3 {
    /// Unnormalised transform with kernel `exp(-2 pi i k x / m)`.
    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    /// Unnormalised transform with kernel `exp(+2 pi i k x / m)`.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
    }

    fn run(&self, data: &mut [Complex64], f: &Arc<dyn Fft<f64>>) {
        let m = self.m;
        assert_eq!(data.len(), m * m * m, "fft buffer has wrong length");
        let mut scratch = vec![Complex64::default(); f.get_inplace_scratch_len()];
        let mut tmp = vec![Complex64::default(); data.len()];
        // transform the contiguous axis, then rotate axes so the next one becomes contiguous
        for _ in 0..3 {
            f.process_with_scratch(data, &mut scratch);
            rotate(data, &mut tmp, m);
            data.copy_from_slice(&tmp);
        }
    }
}

const TILE: usize = 16;

impl Fft3 {
    /// Inverse transform of compact band-`b` coefficients (side `2b+1`, row-major with
    /// frequency `-b` first) onto the full `m^3` grid. Zero lines are skipped.
    pub(crate) fn inverse_banded(&self, c: &[Complex64], b: usize) -> Vec<Complex64> {
        self.banded_inv(c, b, &self.inv)
    }

    /// Forward transform of grid samples, keeping only `|k|_inf <= b` (compact layout).
    pub(crate) fn forward_banded(&self, data: Vec<Complex64>, b: usize) -> Vec<Complex64> {
        self.banded_fwd(data, b, &self.fwd)
    }

    fn banded_inv(&self, c: &[Complex64], b: usize, f: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
        let m = self.m;
        let s = 2 * b + 1;
        assert!(s <= m, "band exceeds grid");
        assert_eq!(c.len(), s * s * s, "compact buffer has wrong length");
        let zero = Complex64::default();
        let pos: Vec<usize> = (0..s).map(|d| index_of(d as i64 - b as i64, m)).collect();
        let mut scratch = vec![zero; f.get_inplace_scratch_len()];

        let mut l1 = vec![zero; s * s * m];
        for ab in 0..s * s {
            let line = &mut l1[ab * m..ab * m + m];
            for d in 0..s {
                line[pos[d]] = c[ab * s + d];
            }
        }
        f.process_with_scratch(&mut l1, &mut scratch);

        let mut l2 = vec![zero; s * m * m];
        let mut buf = vec![zero; TILE * m];
        for a in 0..s {
            for z0 in (0..m).step_by(TILE) {
                let w = TILE.min(m - z0);
                buf[..w * m].fill(zero);
                for bb in 0..s {
                    let src = &l1[(a * s + bb) * m + z0..(a * s + bb) * m + z0 + w];
                    for (t, v) in src.iter().enumerate() {
                        buf[t * m + pos[bb]] = *v;
                    }
                }
                f.process_with_scratch(&mut buf[..w * m], &mut scratch);
                for y in 0..m {
                    let dst = &mut l2[(a * m + y) * m + z0..(a * m + y) * m + z0 + w];
                    for (t, v) in dst.iter_mut().enumerate() {
                        *v = buf[t * m + y];
                    }
                }
            }
        }

        let m2 = m * m;
        let mut out = vec![zero; m2 * m];
        for q0 in (0..m2).step_by(TILE) {
            let w = TILE.min(m2 - q0);
            buf[..w * m].fill(zero);
            for a in 0..s {
                let src = &l2[a * m2 + q0..a * m2 + q0 + w];
                for (t, v) in src.iter().enumerate() {
                    buf[t * m + pos[a]] = *v;
                }
            }
            f.process_with_scratch(&mut buf[..w * m], &mut scratch);
            for x in 0..m {
                let dst = &mut out[x * m2 + q0..x * m2 + q0 + w];
                for (t, v) in dst.iter_mut().enumerate() {
                    *v = buf[t * m + x];
                }
            }
        }
        out
    }

    fn banded_fwd(&self, mut data: Vec<Complex64>, b: usize, f: &Arc<dyn Fft<f64>>) -> Vec<Complex64> {
        let m = self.m;
        let m2 = m * m;
        let s = 2 * b + 1;
        assert!(s <= m, "band exceeds grid");
        assert_eq!(data.len(), m2 * m, "fft buffer has wrong length");
        let zero = Complex64::default();
        let pos: Vec<usize> = (0..s).map(|d| index_of(d as i64 - b as i64, m)).collect();
        let mut scratch = vec![zero; f.get_inplace_scratch_len()];

        f.process_with_scratch(&mut data, &mut scratch);
        let mut a1 = vec![zero; m2 * s];
        for xy in 0..m2 {
            let line = &data[xy * m..xy * m + m];
            let dst = &mut a1[xy * s..xy * s + s];
            for d in 0..s {
                dst[d] = line[pos[d]];
            }
        }
        drop(data);

        let mut a2 = vec![zero; m * s * s];
        let mut buf = vec![zero; TILE * m];
        for x in 0..m {
            for d0 in (0..s).step_by(TILE) {
                let w = TILE.min(s - d0);
                for y in 0..m {
                    let src = &a1[(x * m + y) * s + d0..(x * m + y) * s + d0 + w];
                    for (t, v) in src.iter().enumerate() {
                        buf[t * m + y] = *v;
                    }
                }
                f.process_with_scratch(&mut buf[..w * m], &mut scratch);
                for bb in 0..s {
                    let dst = &mut a2[(x * s + bb) * s + d0..(x * s + bb) * s + d0 + w];
                    for (t, v) in dst.iter_mut().enumerate() {
                        *v = buf[t * m + pos[bb]];
                    }
                }
            }
        }

        let s2 = s * s;
        let mut out = vec![zero; s2 * s];
        for q0 in (0..s2).step_by(TILE) {
            let w = TILE.min(s2 - q0);
            for x in 0..m {
                let src = &a2[x * s2 + q0..x * s2 + q0 + w];
                for (t, v) in src.iter().enumerate() {
                    buf[t * m + x] = *v;
                }
            }
            f.process_with_scratch(&mut buf[..w * m], &mut scratch);
            for a in 0..s {
                let dst = &mut out[a * s2 + q0..a * s2 + q0 + w];
                for (t, v) in dst.iter_mut().enumerate() {
                    *v = buf[t * m + pos[a]];
                }
            }
        }
        out
    }
}

/// `out[k][i][j] = a[i][j][k]`, blocked for cache locality.
fn rotate(a: &[Complex64], out: &mut [Complex64], m: usize) {
    const B: usize = 8;
    let m2 = m * m;
    for i in 0..m {
        let src = &a[i * m2..(i + 1) * m2];
        for j0 in (0..m).step_by(B) {
            let j1 = (j0 + B).min(m);
            for k0 in (0..m).step_by(B) {
                let k1 = (k0 + B).min(m);
                for j in j0..j1 {
                    let row = &src[j * m..j * m + m];
                    for k in k0..k1 {
                        out[k * m2 + i * m + j] = row[k];
                    }
                }
            }
        }
    }
}


#[cfg(test)]
mod banded_tests {
    use super::*;

    #[test]
    fn banded_matches_full() {
        let m = 11;
        let b = 3;
        let s = 2 * b + 1;
        let p = plan(m);
        let c: Vec<Complex64> = (0..s * s * s)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut full = vec![Complex64::default(); m * m * m];
        for a in 0..s {
            for bb in 0..s {
                for d in 0..s {
                    let idx = |v: usize| index_of(v as i64 - b as i64, m);
                    full[(idx(a) * m + idx(bb)) * m + idx(d)] = c[(a * s + bb) * s + d];
                }
            }
        }
        let mut want = full.clone();
        p.inverse(&mut want);
        let got = p.inverse_banded(&c, b);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).norm() < 1e-10);
        }
        let back = p.forward_banded(got, b);
        let n3 = (m * m * m) as f64;
        for (x, y) in back.iter().zip(&c) {
            assert!((x / n3 - y).norm() < 1e-12);
        }
    }

    #[test]
    #[ignore]
    fn timing() {
        for (m, b) in [(50usize, 16usize), (54, 16), (64, 16), (54, 8), (40, 16), (45,16), (48,16)] {
        let p = plan(m);
            let s = 2 * b + 1;
            let c = vec![Complex64::new(1.0, 0.0); s * s * s];
            let t = std::time::Instant::now();
            for _ in 0..20 {
                let g = p.inverse_banded(&c, b);
                std::hint::black_box(p.forward_banded(g, b));
            }
            eprintln!("m={m} b={b}: {:?} per inverse+forward", t.elapsed() / 20);
        }
        let m = 49;
        let p = plan(m);
        let mut d = vec![Complex64::new(1.0, 0.0); m * m * m];
        let t = std::time::Instant::now();
        for _ in 0..20 {
            p.forward(&mut d);
        }
        eprintln!("full: {:?} per transform", t.elapsed() / 20);
    }
}
