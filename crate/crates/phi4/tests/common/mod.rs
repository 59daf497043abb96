//! Shared helpers for the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use phi4::fourier::{FourierField, FrequencyLattice};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Draws(ChaCha8Rng);

impl Draws {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * f64::powi(2.0, -53)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Real band-limited field with `|f(k)| ~ (1 + |k|)^{-decay}` and random phases.
pub fn random_field(rng: &mut Draws, k: usize, decay: f64) -> FourierField {
    let lat = FrequencyLattice::minimal(k);
    let n = lat.len();
    let mut c = vec![Complex64::default(); n];
    for i in 0..n {
        let j = n - 1 - i;
        if j < i {
            continue;
        }
        let m = lat.freq(i);
        let r = ((m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64).sqrt();
        let s = (1.0 + r).powf(-decay);
        if i == j {
            c[i] = Complex64::new(s * rng.normal(), 0.0);
        } else {
            let z = Complex64::new(rng.normal(), rng.normal()) * s;
            c[i] = z;
            c[j] = z.conj();
        }
    }
    FourierField::from_coeffs(lat, c, true).unwrap()
}

pub fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Composite Gauss-Legendre (5 points) on `n` equal panels.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let x = [0.0, 0.538_469_310_105_683_1, -0.538_469_310_105_683_1, 0.906_179_845_938_664, -0.906_179_845_938_664];
    let w = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
    let h = (b - a) / n as f64;
    (0..n)
        .map(|p| {
            let c = a + (p as f64 + 0.5) * h;
            x.iter().zip(&w).map(|(xi, wi)| wi * f(c + 0.5 * h * xi)).sum::<f64>() * 0.5 * h
        })
        .sum()
}
