mod common;

use common::*;
use phi4::besov::*;
use phi4::fourier::*;

fn radius(k: [i64; 3]) -> f64 {
    ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt()
}

fn grid_sup(f: &FourierField) -> f64 {
    sup(&f.to_physical())
}

fn unit(f: FourierField) -> FourierField {
    let s = grid_sup(&f);
    f.scaled(1.0 / s)
}

#[test]
fn partition_of_unity_and_supports() {
    for band in [1, 4, 16, 40] {
        let p = DyadicPartition::for_band(band);
        assert!(f64::powi(2.0, p.jmax()) * 3.0 >= 8.0 * band as f64);
        assert!(p.partition_residual(20_000) < 1e-10);
    }
    for i in 0..2000 {
        let r = 8.0 * i as f64 / 2000.0;
        if r >= 4.0 / 3.0 {
            assert_eq!(DyadicPartition::chi_tilde(r), 0.0);
        }
        if r <= 0.75 || r >= 8.0 / 3.0 {
            assert_eq!(DyadicPartition::chi(r), 0.0);
        }
        for j in -1..4 {
            if !DyadicPartition::in_support(j, r) {
                assert_eq!(DyadicPartition::weight(j, r), 0.0);
            }
        }
    }
}

#[test]
fn block_examples() {
    let lat = FrequencyLattice::minimal(6);
    let c = FourierField::constant(lat, 2.5);
    assert_eq!(block(&c, -1).unwrap(), c);
    for j in 0..5 {
        assert!(block(&c, j).unwrap().coeffs().iter().all(|z| z.norm() == 0.0));
    }
    assert!(block(&c, -2).is_err());
    let k = [2, 0, 0];
    let e = FourierField::exponential(lat, k);
    let live: Vec<i32> = (-1..6).filter(|&j| block(&e, j).unwrap().get(k).norm() > 0.0).collect();
    assert!(!live.is_empty() && live.len() <= 2);
    assert!(live.windows(2).all(|w| w[1] == w[0] + 1));
    for j in -1..6 {
        let want = DyadicPartition::weight(j, 2.0);
        assert!((block(&e, j).unwrap().get(k).re - want).abs() < 1e-15);
    }
    let mut rng = Draws::new(5);
    let f = random_field(&mut rng, 6, 0.0);
    let mut acc = FourierField::zeros(lat);
    for j in -1..=partition_for(&f).jmax() {
        acc = acc.add(&block(&f, j).unwrap()).unwrap();
    }
    assert!(acc.max_coeff_diff(&f) < 1e-10);
}

#[test]
fn norm_examples() {
    let lat = FrequencyLattice::minimal(4);
    assert_eq!(besov_norm(&FourierField::zeros(lat), 0.3), 0.0);
    assert!((besov_norm(&FourierField::constant(lat, 1.0), 1.0) - 0.5).abs() < 1e-15);
    let k = [2, 1, 0];
    let c = FourierField::cosine(lat, k);
    for alpha in [-0.5, 0.0, 0.7] {
        let want = (-1..=partition_for(&c).jmax())
            .map(|j| f64::powf(2.0, alpha * j as f64) * DyadicPartition::weight(j, radius(k)))
            .fold(0.0, f64::max);
        assert!((besov_norm(&c, alpha) - want).abs() < 1e-12, "{alpha}");
    }
    let prof = besov_profile(&c);
    assert!(prof.sups.iter().all(|b| *b >= 0.0));
    assert_eq!(prof.norm(0.2), besov_norm(&c, 0.2));
}

#[test]
fn norm_monotone_in_alpha_without_low_block() {
    let mut rng = Draws::new(6);
    for _ in 0..10 {
        let mut f = random_field(&mut rng, 8, 1.0);
        // remove the lowest block so only j >= 0 carries weight
        f = f.sub(&block(&f, -1).unwrap()).unwrap();
        let s = grid_sup(&f);
        f.scale(1.0 / s);
        let alphas = [-1.5, -1.0, -0.5, -0.1, 0.0];
        for w in alphas.windows(2) {
            assert!(besov_norm(&f, w[0]) <= besov_norm(&f, w[1]) * (1.0 + 1e-14));
        }
    }
    // the lowest block carries 2^{-alpha}, which decreases in alpha
    let one = FourierField::constant(FrequencyLattice::minimal(2), 1.0);
    assert!(besov_norm(&one, -1.0) > besov_norm(&one, 0.0));
}

#[test]
fn paraproduct_examples() {
    let lat = FrequencyLattice::minimal(8);
    let mut rng = Draws::new(7);
    let g = random_field(&mut rng, 8, 0.5);
    let c = FourierField::constant(lat, 1.7);
    assert!(para_gt(&c, &g).unwrap().coeffs().iter().all(|z| z.norm() < 1e-13));
    let cg = g.scaled(1.7);
    let sum = para_lt(&c, &g).unwrap().add(&resonance(&c, &g).unwrap()).unwrap();
    assert!(sum.max_coeff_diff(&cg) < 1e-12);
    for _ in 0..10 {
        let f = unit(random_field(&mut rng, 8, 0.0));
        let g = unit(random_field(&mut rng, 8, 0.0));
        let fg = product(&f, &g, 2).unwrap();
        let parts = para_lt(&f, &g)
            .unwrap()
            .add(&para_gt(&f, &g).unwrap())
            .unwrap()
            .add(&resonance(&f, &g).unwrap())
            .unwrap();
        assert!(sup(&fg.sub(&parts).unwrap().to_physical()) < 1e-11);
        assert_eq!(para_gt(&f, &g).unwrap(), para_lt(&g, &f).unwrap());
        let (lt, gt, rs) = bony(&f, &g).unwrap();
        assert!(lt.max_coeff_diff(&para_lt(&f, &g).unwrap()) < 1e-14);
        assert!(gt.max_coeff_diff(&para_gt(&f, &g).unwrap()) < 1e-14);
        assert!(rs.max_coeff_diff(&resonance(&f, &g).unwrap()) < 1e-14);
    }
    assert!(para_lt(&c, &FourierField::zeros(FrequencyLattice::minimal(3))).is_err());
}

#[test]
fn commutator_examples() {
    let lat = FrequencyLattice::minimal(6);
    let mut rng = Draws::new(8);
    let g = random_field(&mut rng, 6, 1.0);
    let h = random_field(&mut rng, 6, 1.0);
    let zero = commutator_com(&FourierField::zeros(lat), &g, &h).unwrap();
    assert!(zero.coeffs().iter().all(|z| z.norm() < 1e-14));
    let c = FourierField::constant(lat, 0.8);
    let com = commutator_com(&c, &g, &h).unwrap();
    let first = resonance(&para_lt(&c, &g).unwrap(), &h).unwrap();
    let second = resonance(&g, &h).unwrap().scaled(0.8);
    assert!(com.max_coeff_diff(&first.sub(&second).unwrap()) < 1e-12);
}

#[test]
fn commutator_bound() {
    let (a, b, c) = (0.9, -0.5, -0.3);
    let mut rng = Draws::new(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let f = random_field(&mut rng, 16, 1.5 + a);
        let g = random_field(&mut rng, 16, 1.5 + b);
        let h = random_field(&mut rng, 16, 1.5 + c);
        let com = commutator_com(&f, &g, &h).unwrap();
        let r = besov_norm(&com, a + b + c) / (besov_norm(&f, a) * besov_norm(&g, b) * besov_norm(&h, c));
        worst = worst.max(r);
    }
    assert!(worst <= 10.0, "ratio {worst}");
}

#[test]
fn bony_bounds() {
    let (a, b) = (0.6, -0.4);
    let mut rng = Draws::new(10);
    let mut worst = [0.0f64; 3];
    for _ in 0..10 {
        let f = random_field(&mut rng, 16, 1.5 + a);
        let g = random_field(&mut rng, 16, 1.5 + b);
        let (fa, gb) = (besov_norm(&f, a), besov_norm(&g, b));
        let r = [
            besov_norm(&para_lt(&f, &g).unwrap(), b) / (grid_sup(&f) * gb),
            besov_norm(&para_gt(&f, &g).unwrap(), a + b) / (fa * gb),
            besov_norm(&resonance(&f, &g).unwrap(), a + b) / (fa * gb),
        ];
        for i in 0..3 {
            worst[i] = worst[i].max(r[i]);
        }
    }
    assert!(worst.iter().all(|r| *r <= 10.0), "{worst:?}");
}

#[test]
fn heat_commutator_examples() {
    let lat = FrequencyLattice::minimal(8);
    let q = DispersionQ::bilaplacian(1.0, 0.1);
    let mut rng = Draws::new(11);
    let f = random_field(&mut rng, 8, 0.5);
    let g = random_field(&mut rng, 8, 0.5);
    let z = heat_para_commutator(&f, &g, &q, 0.0).unwrap();
    assert!(z.coeffs().iter().all(|c| c.norm() < 1e-14));
    assert!(heat_para_commutator(&f, &g, &q, -0.1).is_err());
    let c = FourierField::constant(lat, 1.3);
    let zc = heat_para_commutator(&c, &g, &q, 0.05).unwrap();
    assert!(zc.coeffs().iter().all(|c| c.norm() < 1e-13));
    let t = 0.02;
    let direct = apply_semigroup(&para_lt(&f, &g).unwrap(), &q, t)
        .unwrap()
        .sub(&para_lt(&f, &apply_semigroup(&g, &q, t).unwrap()).unwrap())
        .unwrap();
    assert!(heat_para_commutator(&f, &g, &q, t).unwrap().max_coeff_diff(&direct) < 1e-12);
}

#[test]
fn duhamel_commutator_examples() {
    let k = 8;
    let lat = FrequencyLattice::minimal(k);
    let q = DispersionQ::bilaplacian(1.0, 0.1);
    let dt = 1e-3;
    let n = 101;
    let t_grid: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    let mut rng = Draws::new(12);
    let f = random_field(&mut rng, k, 0.5);
    let zeros = vec![FourierField::zeros(lat); n];
    let ft = vec![f.clone(); n];
    for x in duhamel_para_commutator(&ft, &zeros, &q, &t_grid).unwrap() {
        assert!(x.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    // f constant: c < g is the multiplier c * sum_{j >= 1} Delta_j, which commutes with I
    let g = random_field(&mut rng, k, 0.5);
    let c = FourierField::constant(lat, 0.6);
    let mut high = FourierField::zeros(lat);
    for j in 1..=partition_for(&g).jmax() {
        high = high.add(&block(&g, j).unwrap()).unwrap();
    }
    assert!(para_lt(&c, &g).unwrap().max_coeff_diff(&high.scaled(0.6)) < 1e-12);
    let ct = vec![c.clone(); n];
    let gt = vec![g.clone(); n];
    for x in duhamel_para_commutator(&ct, &gt, &q, &t_grid).unwrap() {
        assert!(x.coeffs().iter().all(|z| z.norm() < 1e-10));
    }

    // single real modes, constant in time: per-mode closed-form integrals
    let (ka, kb) = ([1, 0, 0], [6, 0, 0]);
    let fa = FourierField::cosine(lat, ka);
    let gb = FourierField::cosine(lat, kb);
    let w: f64 = (0..=partition_for(&gb).jmax())
        .map(|j| {
            let low: f64 = (-1..=j - 2).map(|i| DyadicPartition::weight(i, radius(ka))).sum();
            DyadicPartition::weight(j, radius(kb)) * low
        })
        .sum();
    assert!(w > 0.0);
    let a_b = q.bracket2(kb).unwrap();
    let out = duhamel_para_commutator(&vec![fa; n], &vec![gb; n], &q, &t_grid).unwrap();
    // cos(a x) cos(b x) puts 1/4 on each of +-(b + a) and +-(b - a)
    for ks in [[7, 0, 0], [5, 0, 0], [-7, 0, 0]] {
        let a_s = q.bracket2(ks).unwrap();
        for (i, x) in out.iter().enumerate().skip(1) {
            let t = t_grid[i];
            let want = 0.25 * w * ((1.0 - (-a_s * t).exp()) / a_s - (1.0 - (-a_b * t).exp()) / a_b);
            let got = x.get(ks).re;
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{ks:?} t={t} {got} {want}");
        }
    }
    assert!(duhamel_para_commutator(&ct, &gt, &q, &t_grid[1..]).is_err());
}
