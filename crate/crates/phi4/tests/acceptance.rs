//! Acceptance suite: one PASS/FAIL line per criterion and a summary naming the failures.
//! Pass criterion numbers as arguments to run a subset. With `PHI4_ACCEPTANCE_STRICT=1`
//! any failure gives a nonzero exit; otherwise failures are reported without failing the run.

mod common;

use common::*;
use phi4::besov::{besov_norm, bony};
use phi4::diagrams::*;
use phi4::fourier::*;
use phi4::gaussian::*;
use phi4::harness::{converge_rows, decreasing_trend, ExperimentConfig};
use phi4::poly::{factorial, Poly};
use phi4::renorm::*;
use phi4::solver::*;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn half_line<F: Fn(f64) -> f64>(g: F) -> f64 {
    gauss_legendre(|u| if u >= 1.0 { 0.0 } else { g(u / (1.0 - u)) / ((1.0 - u) * (1.0 - u)) }, 0.0, 1.0, 4000)
}

fn quartic_model(eps: f64, k: usize) -> UpsilonModel {
    let q = DispersionQ::bilaplacian(1.0, eps);
    let v = Potential::quartic();
    let r = renorm_set(&q, &v, k, &RenormOptions::default()).unwrap();
    UpsilonModel::new(&q, &v, k, r).unwrap()
}

fn z_score(values: &[f64], oracle: f64) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m - oracle) / (var / n).sqrt()
}

fn sigma2_limit_closed_form() -> Outcome {
    let mut worst = 0.0f64;
    let mut oracle_gap = 0.0f64;
    for nu in [0.25, 1.0, 4.0] {
        let got = sigma2_limit(&DispersionQ::bilaplacian(nu, 0.1), 1e4, 1e-12).unwrap();
        worst = worst.max((got - 1.0 / (8.0 * PI * nu.sqrt())).abs());
        let quad = 2.0 * PI * half_line(|r| 1.0 / (4.0 * PI * PI * (1.0 + 4.0 * PI * PI * nu * r * r)));
        oracle_gap = oracle_gap.max((got - quad).abs());
    }
    outcome(worst < 1e-6 && oracle_gap < 1e-6, format!("max error {worst:.2e}, quadrature gap {oracle_gap:.2e}"))
}

fn sextic_lambda() -> Outcome {
    let mut worst = 0.0f64;
    for (a, nu) in [(1.0, 1.0), (2.0, 0.5)] {
        let s2 = sigma2_limit(&DispersionQ::bilaplacian(nu, 0.1), 1e4, 1e-12).unwrap();
        let got = coupling_lambda(&Potential::sextic(a), s2);
        let example = 5.0 * a / (4.0 * PI * PI) * 4.0 * PI * half_line(|r| 1.0 / (1.0 + 4.0 * PI * PI * nu * r * r));
        worst = worst.max(((got - example) / example).abs());
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn free_field_law() -> Outcome {
    let dt = 1e-3;
    let mut worst = 0.0f64;
    for eps in [0.2, 0.1] {
        let model = quartic_model(eps, 2);
        let q = model.symbol().clone();
        let setup = McSetup { model, cfg: UpsilonConfig { dt, sub: 1, t_burn: 0.0, dt_burn: 1e-2, sample: 0 }, steps: 0 };
        for k in [[0, 0, 0], [1, 0, 0], [2, 1, 0]] {
            let a = q.bracket2(k).unwrap();
            let m2 = mc_values(&setup, MomentSymbol::Free, Statistic::SecondMoment, k, 10_000, NoiseSeed::new(31)).unwrap();
            worst = worst.max(z_score(&m2, 0.5 / a).abs());
            let cov = mc_values(&setup, MomentSymbol::Free, Statistic::Covariance { lag_steps: 1 }, k, 10_000, NoiseSeed::new(32)).unwrap();
            worst = worst.max(z_score(&cov, (-a * dt).exp() * 0.5 / a).abs());
        }
    }
    outcome(worst <= 3.0, format!("max |z| {worst:.2}"))
}

fn paraproduct_identity() -> Outcome {
    let mut rng = Draws::new(41);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut f = random_field(&mut rng, 16, 1.0);
        let mut g = random_field(&mut rng, 16, 1.0);
        f.scale(1.0 / sup(&f.to_physical()));
        g.scale(1.0 / sup(&g.to_physical()));
        let fg = product(&f, &g, 2).unwrap();
        let (lt, gt, rs) = bony(&f, &g).unwrap();
        let parts = lt.add(&gt).unwrap().add(&rs).unwrap();
        worst = worst.max(sup(&fg.sub(&parts).unwrap().to_physical()));
    }
    outcome(worst < 1e-11, format!("max sup gap {worst:.2e} over 100 unit-sup pairs"))
}

fn divergences() -> Outcome {
    let eps_list = [0.2, 0.141, 0.1, 0.071, 0.05];
    let v = Potential::quartic();
    let opts = RenormOptions { kernel: KernelOpts { method: KernelMethod::Auto, tol: 1e-8 }, ..Default::default() };
    let mut c2s = Vec::new();
    let mut c3_zero = true;
    let mut errs = Vec::new();
    for &e in &eps_list {
        let q = DispersionQ::bilaplacian(1.0, e);
        let r = renorm_set(&q, &v, default_cutoff(e), &opts).unwrap();
        c2s.push(r.c2);
        c3_zero &= r.c3 == 0.0;
        errs.push((r.sigma2_eps - r.sigma2).abs());
    }
    let logs: Vec<f64> = eps_list.iter().map(|e: &f64| (1.0 / e).ln()).collect();
    let (_, slope, r2) = linear_fit(&logs, &c2s);
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    // diagnostic only: how much of the misfit an eps^2 correction absorbs
    let r2_corrected = fit_r2(&[vec![1.0; logs.len()], logs.clone(), eps_list.iter().map(|e| e * e).collect()], &c2s);
    outcome(
        r2 > 0.99 && c3_zero && decreasing,
        format!(
            "C2 log fit R^2 {r2:.5} (slope {slope:.4}; log + eps^2 fit R^2 {r2_corrected:.5}), C3 zero {c3_zero}, sigma_eps^2 errors decreasing {decreasing}"
        ),
    )
}

/// `R^2` of the least-squares fit of `y` on the given columns.
fn fit_r2(cols: &[Vec<f64>], y: &[f64]) -> f64 {
    let p = cols.len();
    // normal equations, solved by Gaussian elimination with partial pivoting
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let mut row: Vec<f64> = (0..p).map(|j| cols[i].iter().zip(&cols[j]).map(|(x, z)| x * z).sum()).collect();
            row.push(cols[i].iter().zip(y).map(|(x, z)| x * z).sum());
            row
        })
        .collect();
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (n, yn) in y.iter().enumerate() {
        let fit: f64 = (0..p).map(|i| beta[i] * cols[i][n]).sum();
        ss_res += (yn - fit).powi(2);
        ss_tot += (yn - my).powi(2);
    }
    1.0 - ss_res / ss_tot
}

fn wick_machinery() -> Outcome {
    let nu = 0.7f64;
    let mut stream = NoiseSeed::new(61).stream(0, Phase::Scalar, 0);
    let mut xs = Vec::with_capacity(100_000);
    for key in 0..50_000u64 {
        let (a, b) = stream.pair(key);
        xs.push(nu.sqrt() * a);
        xs.push(nu.sqrt() * b);
    }
    let mut worst_z = 0.0f64;
    for m in 0..=4 {
        for n in 0..=4 {
            if m + n == 0 {
                continue;
            }
            let vals: Vec<f64> = xs.iter().map(|&x| hermite(m, x, nu) * hermite(n, x, nu)).collect();
            let want = if m == n { factorial(n) * nu.powi(n as i32) } else { 0.0 };
            worst_z = worst_z.max(z_score(&vals, want).abs());
        }
    }
    let mut rng = Draws::new(62);
    let mut worst_c = 0.0f64;
    for deg in 0..=6 {
        for _ in 0..20 {
            let nu = 0.05 + 2.0 * rng.uniform();
            let f = Poly::new((0..=deg).map(|_| 2.0 * rng.uniform() - 1.0).collect());
            let mut back = Poly::new(vec![0.0]);
            for (k, ck) in chaos_coefficients(&f, nu).iter().enumerate() {
                back = back.add(&hermite_poly(k, nu).scale(*ck));
            }
            for p in 0..=deg {
                worst_c = worst_c.max((back.coeff(p) - f.coeff(p)).abs());
            }
        }
    }
    outcome(worst_z <= 3.0 && worst_c < 1e-12, format!("max |z| {worst_z:.2}, reconstruction error {worst_c:.1e}"))
}

fn quartic_identities() -> Outcome {
    let model = quartic_model(0.2, 4);
    let cfg = UpsilonConfig { dt: 1e-3, t_burn: 0.05, dt_burn: 1e-2, ..Default::default() };
    let drv = CoupledUpsilon::new(NoiseSeed::new(71), vec![model.clone()], cfg).unwrap();
    let f = drv.full_frames_now().remove(0);
    let m = 24;
    let x = f.x.to_physical_on(m);
    let nu = model.nu();
    let zero = f.get(Tag::ZeroP).to_physical_on(m);
    let one = f.get(Tag::OneP).to_physical_on(m);
    let two = f.get(Tag::TwoP).to_physical_on(m);
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let scale = 1.0 + x[i] * x[i];
        worst = worst.max((zero[i] - 1.0).abs());
        worst = worst.max((one[i] - x[i]).abs() / scale);
        worst = worst.max((two[i] - (x[i] * x[i] - nu)).abs() / scale);
    }
    outcome(worst < 1e-10, format!("max pointwise defect {worst:.1e}"))
}

fn remainder_consistency() -> Outcome {
    let (eps, k, dt, t) = (0.2, 8, 1e-4, 0.05);
    let model = quartic_model(eps, k);
    let lam = model.lambda();
    let seed = NoiseSeed::new(81);
    let lat = FrequencyLattice::minimal(k);
    let v0 = FourierField::zeros(lat);
    let w0 = FourierField::constant(lat, 0.5);
    let fine = dt / 4.0;
    let base = UpsilonConfig { dt: fine, sub: 1, t_burn: 1.0, dt_burn: 1e-2, sample: 0 };
    let every = 5e-3;
    let solve_at = |sub: usize| {
        let h = fine * sub as f64;
        let drv = CoupledUpsilon::new(seed, vec![model.clone()], UpsilonConfig { dt: h, sub, ..base }).unwrap();
        let mut cfg = SolverConfig::new(eps, lam, h, t, k, 2);
        cfg.record_stride = (every / h).round() as usize;
        let sol = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
        (initial_remainder(&drv, 0, lam, &v0, &w0).unwrap(), sol.phi())
    };
    let (z0, coarse) = solve_at(4);
    let (_, half) = solve_at(2);
    let rcfg = ReferenceConfig { dt: fine, t_end: t, ablate_counterterm: false, record_stride: (every / fine).round() as usize };
    let reference = brute_force_reference(seed, &base, &model, &rcfg, &z0).unwrap();
    let gap = |phi: &[FourierField]| {
        phi.iter().zip(&reference).map(|(a, (_, b))| relative_l2(a, b)).fold(0.0f64, f64::max)
    };
    let (d1, d2) = (gap(&coarse), gap(&half));
    let aligned = coarse.len() == reference.len() && half.len() == reference.len();
    outcome(
        aligned && d1 < 1e-2 && d1 >= 2.0 * d2,
        format!("relative L2 discrepancy {d1:.3e} at dt, {d2:.3e} at dt/2 (ratio {:.2})", d1 / d2),
    )
}

fn linear_exactness() -> Outcome {
    let (eps, k, dt) = (0.2, 4, 1e-3);
    let model = quartic_model(eps, k);
    let drv = CoupledUpsilon::new(NoiseSeed::new(91), vec![model.clone()], UpsilonConfig { t_burn: 0.0, ..Default::default() }).unwrap();
    let cfg = SolverConfig::new(eps, 0.0, dt, 0.02, k, 2);
    let mut rng = Draws::new(92);
    let v0 = random_field(&mut rng, k, 1.0);
    let w0 = random_field(&mut rng, k, 1.0);
    let sol = solve(&cfg, &drv, 0, &v0, &w0).unwrap();
    let mut worst = 0.0f64;
    for (i, t) in sol.pair.t_grid.iter().enumerate() {
        for kk in FrequencyLattice::minimal(k).modes() {
            let d = (-model.symbol().bracket2(kk).unwrap() * t).exp();
            worst = worst.max((sol.pair.v[i].get(kk) - v0.get(kk) * d).norm());
            worst = worst.max((sol.pair.w[i].get(kk) - w0.get(kk) * d).norm());
        }
    }
    outcome(worst < 1e-12, format!("max coefficient error {worst:.1e}"))
}

fn semigroup_smoothing() -> Outcome {
    let (alpha, gamma) = (0.0, 1.0);
    let mut rng = Draws::new(101);
    let fields: Vec<FourierField> = (0..20).map(|_| random_field(&mut rng, 16, 1.5)).collect();
    let times: Vec<f64> = (0..=13).map(|j| f64::powi(2.0, -j)).collect();
    let mut worst = 0.0f64;
    for eps in [0.0, 0.1] {
        let q = DispersionQ::bilaplacian(1.0, eps);
        for f in &fields {
            let base = besov_norm(f, alpha);
            for &t in &times {
                let g = apply_semigroup(f, &q, t).unwrap();
                worst = worst.max(t.powf((gamma - alpha) / 2.0) * besov_norm(&g, gamma) / base);
            }
        }
    }
    outcome(worst <= 10.0, format!("empirical constant {worst:.3}"))
}

fn coupled_trend() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/converge.toml");
    let cfg = ExperimentConfig::load(std::path::Path::new(path)).unwrap();
    let rows = converge_rows(&cfg).unwrap();
    let d: Vec<String> = rows.iter().map(|r| format!("eps {} -> {:.4}", r.eps, r.y_distance)).collect();
    outcome(decreasing_trend(&rows), format!("Y distances {}", d.join(", ")))
}

type Check = fn() -> Outcome;

fn main() {
    let checks: [(&str, Duration, Check); 11] = [
        ("sigma^2 closed form", Duration::from_secs(1), sigma2_limit_closed_form),
        ("sextic lambda vs the example integral", Duration::from_secs(1), sextic_lambda),
        ("free-field law", Duration::from_secs(30), free_field_law),
        ("paraproduct identity", Duration::from_secs(10), paraproduct_identity),
        ("renormalisation divergences", Duration::from_secs(300), divergences),
        ("Wick machinery", Duration::from_secs(10), wick_machinery),
        ("quartic identities", Duration::from_secs(5), quartic_identities),
        ("remainder reconstruction vs direct integration", Duration::from_secs(300), remainder_consistency),
        ("linear exactness", Duration::from_secs(1), linear_exactness),
        ("semigroup smoothing", Duration::from_secs(30), semigroup_smoothing),
        ("coupled eps trend", Duration::from_secs(600), coupled_trend),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, limit, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let ok = o.ok && took <= *limit;
        if !ok {
            failed.push(n.to_string());
        }
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.2} s, limit {} s]",
            if ok { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed.is_empty() {
        println!("all selected criteria passed");
    } else {
        println!("criteria failed: {}", failed.join(", "));
        if std::env::var("PHI4_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
