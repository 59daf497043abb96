use phi4::diagrams::*;
use phi4::fourier::{DispersionQ, FourierField, FrequencyLattice};
use phi4::gaussian::NoiseSeed;
use phi4::renorm::{renorm_set, Potential, RenormOptions};
use phi4::solver::*;
use num_complex::Complex64 as C;

fn model(eps: f64, k: usize, v: &Potential) -> UpsilonModel {
    let q = DispersionQ::bilaplacian(1.0, eps);
    let r = renorm_set(&q, v, k, &RenormOptions::default()).unwrap();
    UpsilonModel::new(&q, v, k, r).unwrap()
}

fn noise(dt: f64, sub: usize) -> UpsilonConfig {
    UpsilonConfig { dt, sub, t_burn: 0.2, dt_burn: 1e-2, sample: 0 }
}

fn bump(k: usize, a: f64) -> FourierField {
    let lat = FrequencyLattice::minimal(k);
    let mut f = FourierField::zeros(lat);
    f.set([0, 0, 0], C::new(a, 0.0));
    f.set([1, 0, 0], C::new(0.3 * a, 0.1 * a));
    f.set([-1, 0, 0], C::new(0.3 * a, -0.1 * a));
    if lat.contains([0, 2, 1]) {
        f.set([0, 2, 1], C::new(-0.2 * a, 0.05 * a));
        f.set([0, -2, -1], C::new(-0.2 * a, -0.05 * a));
    }
    f
}

#[test]
fn zero_coupling_is_exact_linear_decay() {
    let k = 3;
    let m = model(0.2, k, &Potential::quartic());
    let dt = 1e-3;
    let drv = CoupledUpsilon::new(NoiseSeed::new(4), vec![m.clone()], noise(dt, 1)).unwrap();
    let mut cfg = SolverConfig::new(0.2, 0.0, dt, 0.02, k, 2);
    cfg.record_stride = 5;
    let (v0, w0) = (bump(k, 1.0), bump(k, -0.7));
    let sol = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    for (i, t) in sol.pair.t_grid.iter().enumerate() {
        for kk in FrequencyLattice::minimal(k).modes() {
            let a = m.symbol().bracket2(kk).unwrap();
            let d = (-a * t).exp();
            assert!((sol.pair.v[i].get(kk) - v0.get(kk) * d).norm() < 1e-12);
            assert!((sol.pair.w[i].get(kk) - w0.get(kk) * d).norm() < 1e-12);
        }
    }
}

#[test]
fn config_is_validated() {
    let mut c = SolverConfig::new(0.2, 1.0, 1e-3, 0.01, 3, 2);
    assert!(c.validate(2).is_ok());
    c.delta0 = c.kappa / 2.0;
    assert!(c.validate(2).is_err());
    let m = model(0.2, 3, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(1), vec![m], noise(1e-3, 1)).unwrap();
    let bad = SolverConfig::new(0.2, 1.0, 1e-3, 0.01, 4, 2);
    assert!(solve(&bad, &drv, 0, &bump(3, 0.0), &bump(3, 0.0)).is_err());
}

#[test]
fn remainder_taylor_examples() {
    let v = Potential::sextic(1.0);
    let direct = |x: f64, y: f64| {
        let d = v.derivative(1);
        let dd = v.derivative(2);
        let d3 = v.derivative(3);
        let d4 = v.derivative(4);
        d.eval(x + y) - d.eval(x) - dd.eval(x) * y - d3.eval(x) * y * y / 2.0 - d4.eval(x) * y.powi(3) / 6.0
    };
    for (x, y) in [(0.3, -0.4), (1.1, 0.7), (-2.0, 0.05)] {
        let a = taylor_remainder(&v, x, y);
        assert!((a - direct(x, y)).abs() < 1e-10 * (1.0 + a.abs()), "{a}");
    }
    assert_eq!(taylor_remainder(&Potential::quartic(), 0.4, 2.0), 0.0);
}

fn reference_match(v: Potential, n: usize, lambda_scale: f64) {
    let (eps, k, dt, t) = (0.2, 3, 2e-3, 0.02);
    let m = model(eps, k, &v);
    let ncfg = noise(dt, 1);
    let seed = NoiseSeed::new(21);
    let drv = CoupledUpsilon::new(seed, vec![m.clone()], ncfg).unwrap();
    let lam = m.lambda();
    let (v0, w0) = (bump(k, 0.4 * lambda_scale), bump(k, 0.2));
    let z0 = initial_remainder(&drv, 0, lam, &v0, &w0).unwrap();
    let mut cfg = SolverConfig::new(eps, lam, dt, t, k, n);
    cfg.record_stride = 5;
    let sol = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    let phi = sol.phi();
    let rcfg = ReferenceConfig { dt, t_end: t, ablate_counterterm: false, record_stride: 5 };
    let r = brute_force_reference(seed, &ncfg, &m, &rcfg, &z0).unwrap();
    assert_eq!(r.len(), phi.len());
    for ((tr, pr), (ts, ps)) in r.iter().zip(sol.pair.t_grid.iter().zip(&phi)) {
        assert!((tr - ts).abs() < 1e-12);
        let d = relative_l2(ps, pr);
        assert!(d < 1e-9, "t = {tr}: {d}");
    }
}

#[test]
fn reconstruction_equals_direct_integration_at_equal_step_quartic() {
    reference_match(Potential::quartic(), 2, 1.0);
}

#[test]
fn reconstruction_equals_direct_integration_at_equal_step_sextic() {
    reference_match(Potential::sextic(1.0), 3, 1.0);
}

#[test]
fn picard_agrees_with_sequential() {
    let (eps, k, dt) = (0.2, 2, 2e-3);
    let m = model(eps, k, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(8), vec![m.clone()], noise(dt, 1)).unwrap();
    let mut cfg = SolverConfig::new(eps, m.lambda(), dt, 0.01, k, 2);
    let (v0, w0) = (bump(k, 0.3), bump(k, 0.1));
    let seq = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    cfg.mode = SolverMode::Picard;
    cfg.picard_tol = 1e-12;
    let pic = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    assert!(pic.picard_distances.last().unwrap() < &1e-12, "{:?}", pic.picard_distances);
    for (a, b) in seq.phi().iter().zip(&pic.phi()) {
        assert!(relative_l2(a, b) < 1e-10);
    }
}

#[test]
fn collapsed_rhs_matches_term_by_term_map() {
    let (eps, k, dt) = (0.2, 2, 1e-3);
    for (v, n) in [(Potential::quartic(), 2), (Potential::sextic(1.0), 3)] {
        let m = model(eps, k, &v);
        let mut drv = CoupledUpsilon::new(NoiseSeed::new(3), vec![m.clone()], noise(dt, 1)).unwrap();
        let full = drv.full_frames_now().remove(0);
        let sf = drv.next_solver_frames().unwrap().remove(0);
        let lam = m.lambda();
        let u = bump(k, 0.5);
        let zero = FourierField::zeros(FrequencyLattice::minimal(k));
        // at t = 0 with v(0) = w(0) = 0 on the history: J = 0, h = 2'0(0), commutator 0
        let h = full.two_zero.clone();
        let g = g_map(lam, eps, Some(&v), &full, &GInputs { u: &u, h: &h, comm: &zero });
        let c = g_collapsed(lam, &sf, &u, &zero).unwrap();
        let d = relative_l2(&c, &g);
        assert!(d < 1e-9, "n = {n}: {d}");
    }
}

#[test]
fn quartic_f2_is_linear_in_the_noise() {
    let (eps, k) = (0.2, 2);
    let m = model(eps, k, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(5), vec![m.clone()], noise(1e-3, 1)).unwrap();
    let fr = drv.full_frames_now().remove(0);
    let lam = m.lambda();
    let [_, _, f2, f3] = coeffs_f(lam, &fr);
    let expect = f2_expected(lam, &fr);
    assert!(relative_l2(&f2, &expect) < 1e-10);
    for kk in f3.lattice().modes() {
        let want = if kk == [0, 0, 0] { -lam } else { 0.0 };
        assert!((f3.get(kk).re - want).abs() < 1e-10 && f3.get(kk).im.abs() < 1e-10);
    }
}

fn f2_expected(lam: f64, fr: &UpsilonFrame) -> FourierField {
    let lat = fr.get(Tag::ThreeZero).lattice();
    let mut out = fr.get(Tag::ThreeZero).scaled(3.0 * lam * lam);
    out.axpy(-3.0 * lam, &fr.x.resample(lat)).unwrap();
    out
}

#[test]
fn y_norm_properties() {
    let k = 2;
    let lat = FrequencyLattice::minimal(k);
    let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.005).collect();
    let zero = FourierField::zeros(lat);
    let p0 = RemainderPair { t_grid: t.clone(), v: vec![zero.clone(); 11], w: vec![zero.clone(); 11], initial: (zero.clone(), zero.clone()) };
    assert_eq!(y_norm(&p0, 0.2, 0.05, 0.05, 0.01).unwrap(), 0.0);
    assert!(y_norm(&p0, 0.2, 0.1, 0.05, 0.01).is_err());
    let f = bump(k, 1.0);
    let p1 = RemainderPair { t_grid: t.clone(), v: vec![f.clone(); 11], w: vec![zero.clone(); 11], initial: (f.clone(), zero.clone()) };
    let a = y_norm(&p1, 0.2, 0.05, 0.05, 0.01).unwrap();
    let half = y_norm(&p1, 0.2, 0.025, 0.05, 0.01).unwrap();
    assert!(a > 0.0 && half <= a);
    let mut p2 = p1.clone();
    for x in p2.v.iter_mut() {
        *x = x.scaled(2.0);
    }
    let b = y_norm(&p2, 0.2, 0.05, 0.05, 0.01).unwrap();
    assert!((b - 2.0 * a).abs() < 1e-12 * b);
    let d = pair_difference(&p2, &p1).unwrap();
    assert!((y_norm(&d, 0.2, 0.05, 0.05, 0.01).unwrap() - a).abs() < 1e-12 * a);
}

fn sup_diff(a: &FourierField, b: &FourierField) -> f64 {
    a.to_physical().iter().zip(b.to_physical()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn sextic_remainder_example() {
    let v = Potential::sextic(1.0);
    assert!((taylor_remainder(&v, 1.0, 1.0) - 6.0).abs() < 1e-12);
    assert_eq!(taylor_remainder(&v, 0.7, 0.0), 0.0);
}

#[test]
fn zero_data_without_coupling_stays_zero() {
    let k = 2;
    let m = model(0.2, k, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(2), vec![m], noise(1e-3, 1)).unwrap();
    let cfg = SolverConfig::new(0.2, 0.0, 1e-3, 0.01, k, 2);
    let z = bump(k, 0.0);
    let sol = solve(&cfg, &drv, 0, &z, &z).unwrap();
    for (v, w) in sol.pair.v.iter().zip(&sol.pair.w) {
        assert!(v.coeffs().iter().chain(w.coeffs()).all(|c| c.norm() == 0.0));
    }
}

#[test]
fn zero_coupling_kills_the_nonlinearity() {
    let (eps, k) = (0.2, 2);
    let m = model(eps, k, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(6), vec![m], noise(1e-3, 1)).unwrap();
    let fr = drv.full_frames_now().remove(0);
    for f in coeffs_f(0.0, &fr) {
        assert!(f.coeffs().iter().all(|c| c.norm() == 0.0));
    }
    let u = bump(k, 0.8);
    let comm = bump(k, 0.3);
    let h = fr.two_zero.clone();
    let g = g_map(0.0, eps, Some(&Potential::quartic()), &fr, &GInputs { u: &u, h: &h, comm: &comm });
    assert!(g.coeffs().iter().all(|c| c.norm() < 1e-14));
}

#[test]
fn reconstruction_is_the_sum_of_its_parts() {
    let (eps, k, dt) = (0.2, 2, 1e-3);
    let m = model(eps, k, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(9), vec![m.clone()], noise(dt, 1)).unwrap();
    let cfg = SolverConfig::new(eps, m.lambda(), dt, 0.005, k, 2);
    let sol = solve(&cfg, &drv, 0, &bump(k, 0.2), &bump(k, 0.1)).unwrap();
    for (i, phi) in sol.phi().iter().enumerate() {
        let mut rest = phi.sub(&sol.x[i]).unwrap();
        rest.axpy(sol.lambda, &sol.y[i]).unwrap();
        rest = rest.sub(&sol.pair.v[i]).unwrap().sub(&sol.pair.w[i]).unwrap();
        assert!(rest.coeffs().iter().all(|c| c.norm() < 1e-14));
    }
    assert!(reconstruct_phi(&sol.x[1..], &sol.y, &sol.pair, sol.lambda).is_err());
}

#[test]
fn step_doubling_on_frozen_coefficients_is_second_order() {
    let (eps, k) = (0.2, 2);
    let v = Potential::sextic(1.0);
    let m = model(eps, k, &v);
    let mut drv = CoupledUpsilon::new(NoiseSeed::new(12), vec![m.clone()], noise(1e-3, 1)).unwrap();
    let fr = drv.next_solver_frames().unwrap().remove(0);
    let s0 = initial_state(&fr, &bump(k, 0.5), &bump(k, 0.4));
    let defect = |h: f64| {
        let mut c = SolverConfig::new(eps, m.lambda(), h, h, k, 3);
        let one = step(&s0, &fr, &c).unwrap();
        c.dt = h / 2.0;
        let two = step(&step(&s0, &fr, &c).unwrap(), &fr, &c).unwrap();
        sup_diff(&one.v.add(&one.w).unwrap(), &two.v.add(&two.w).unwrap())
    };
    let hs = [4e-4, 2e-4, 1e-4];
    let d: Vec<f64> = hs.iter().map(|&h| defect(h)).collect();
    for w in d.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope} from {d:?}");
    }
}

#[test]
fn picard_and_sequential_agree_at_unit_coupling() {
    let (eps, k, dt) = (0.2, 3, 1e-3);
    let m = model(eps, k, &Potential::quartic());
    let drv = CoupledUpsilon::new(NoiseSeed::new(13), vec![m], noise(dt, 1)).unwrap();
    let mut cfg = SolverConfig::new(eps, 1.0, dt, 0.1, k, 2);
    cfg.record_stride = 10;
    let (v0, w0) = (bump(k, 0.0), bump(k, 0.5));
    let seq = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    cfg.mode = SolverMode::Picard;
    let pic = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    let gap = seq.phi().iter().zip(&pic.phi()).map(|(a, b)| sup_diff(a, b)).fold(0.0, f64::max);
    assert!(gap < 1e-3, "{gap}");
}

#[test]
fn halving_dt_at_least_halves_the_discrepancy() {
    // the remainder equation has Holder-1/2 coefficients in time, so the defect of one path is
    // a random variable; compare root-mean-square defects over independent noise samples
    // against the finest step on each shared path
    use rayon::prelude::*;
    let (eps, k, t) = (0.2, 1, 0.01);
    let m = model(eps, k, &Potential::quartic());
    let (v0, w0) = (bump(k, 0.0), bump(k, 0.5));
    let fine = 2.5e-5;
    let sq: Vec<(f64, f64)> = (0..16u64)
        .into_par_iter()
        .map(|sample| {
            let run = |sub: usize| {
                let dt = fine * sub as f64;
                let ncfg = UpsilonConfig { sample, ..noise(dt, sub) };
                let drv = CoupledUpsilon::new(NoiseSeed::new(14), vec![m.clone()], ncfg).unwrap();
                let cfg = SolverConfig::new(eps, m.lambda(), dt, t, k, 2);
                solve(&cfg, &drv, 0, &v0, &w0).unwrap().phi().pop().unwrap()
            };
            let (u4, u2, u1) = (run(4), run(2), run(1));
            (u4.sub(&u1).unwrap().norm2_sq(), u2.sub(&u1).unwrap().norm2_sq())
        })
        .collect();
    let e4 = sq.iter().map(|p| p.0).sum::<f64>().sqrt();
    let e2 = sq.iter().map(|p| p.1).sum::<f64>().sqrt();
    assert!(e4 >= 2.0 * e2, "ratio {}", e4 / e2);
}

#[test]
fn potential_remainder_shrinks_like_a_power_of_eps() {
    use phi4::gaussian::sample_stationary;
    let v = Potential::sextic(1.0);
    let k = 6;
    let lat = FrequencyLattice::minimal(k);
    let f = bump(k, 1.0).to_physical();
    let eps_list = [0.2f64, 0.1, 0.05];
    let sups: Vec<f64> = eps_list
        .iter()
        .map(|&eps| {
            let q = DispersionQ::bilaplacian(1.0, eps);
            let x = sample_stationary(NoiseSeed::new(15), 0, lat, &q).unwrap().into_field().to_physical();
            x.iter()
                .zip(&f)
                .map(|(xi, fi)| (eps.powf(-1.5) * taylor_remainder(&v, eps.sqrt() * xi, eps.sqrt() * fi)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let lx: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    let (_, slope, _) = phi4::renorm::linear_fit(&lx, &ly);
    assert!(slope >= 0.2, "slope {slope} from {sups:?}");
}

#[test]
fn dropping_the_counterterm_departs_more_as_k_grows() {
    let (eps, dt, t) = (0.2, 1e-3, 0.02);
    let v = Potential::quartic();
    let mut gaps = Vec::new();
    for k in [2usize, 4, 6] {
        let m = model(eps, k, &v);
        let ncfg = noise(dt, 1);
        let seed = NoiseSeed::new(16);
        let drv = CoupledUpsilon::new(seed, vec![m.clone()], ncfg).unwrap();
        let (v0, w0) = (bump(k, 0.0), bump(k, 0.5));
        let z0 = initial_remainder(&drv, 0, m.lambda(), &v0, &w0).unwrap();
        let cfg = SolverConfig::new(eps, m.lambda(), dt, t, k, 2);
        let phi = solve(&cfg, &drv, 0, &v0, &w0).unwrap().phi().pop().unwrap();
        let mut rcfg = ReferenceConfig { dt, t_end: t, ablate_counterterm: false, record_stride: 1000 };
        let with = brute_force_reference(seed, &ncfg, &m, &rcfg, &z0).unwrap().pop().unwrap().1;
        assert!(relative_l2(&phi, &with) < 1e-9);
        rcfg.ablate_counterterm = true;
        let without = brute_force_reference(seed, &ncfg, &m, &rcfg, &z0).unwrap().pop().unwrap().1;
        gaps.push(relative_l2(&without, &phi));
    }
    assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
}
