use regdig::asymptotics::llt_prediction_target;
use regdig::charfn::{fit_moment_constants, forward_decay_check};
use regdig::integrals::{sphere_cubic_expectation, SphereParams};
use regdig::params::make_params;
use regdig::rng::SeededRng;
use regdig::walk::{build_step_distribution, walk_probability_charsum, WalkTarget};
use std::time::Instant;

fn main() {
    // 1. LLT at n=500, p=3, d=3, uniform target
    let t0 = Instant::now();
    let dist = build_step_distribution(3, 3).unwrap();
    let target = WalkTarget(vec![500, 500, 500]);
    let exact = walk_probability_charsum(&dist, 500, &target);
    let params = make_params(500, 3, 3, 0.01).unwrap();
    let fit = fit_moment_constants(3, &[3, 5, 7]).unwrap();
    let pred = llt_prediction_target(&params, &target, &fit).unwrap();
    println!(
        "LLT: charsum={exact:.6e} prediction={pred:.6e} ratio={:.4} ({:?})",
        pred / exact,
        t0.elapsed()
    );

    // 2. sphere expectation at the stated desk-scale regime
    let p = 100usize;
    let n = (100f64).powf(3.2).ceil();
    let d_p = fit.predict_c(100);
    let d_p = (3.0 - 1.0) / 6.0 - d_p / 27.0;
    let r2 = p as f64 * n.ln();
    let theta = d_p * (p as f64 / n).sqrt() * r2.powf(1.5);
    println!("sphere: D_p={d_p:.6} theta={theta:.3}");
    let t0 = Instant::now();
    let (est, ci) = sphere_cubic_expectation(
        &SphereParams { p, theta, r2, trials: 100_000 },
        &SeededRng::new(1234, 0),
    );
    println!("sphere: estimate={est:.4} ci95={ci:.4} ({:?})", t0.elapsed());
    // same but at the bulk radius R^2 = p
    let theta_bulk = d_p * (p as f64 / n).sqrt() * (p as f64).powf(1.5);
    let (est_b, ci_b) = sphere_cubic_expectation(
        &SphereParams { p, theta: theta_bulk, r2: p as f64, trials: 100_000 },
        &SeededRng::new(1234, 0),
    );
    println!("sphere bulk R^2=p: theta={theta_bulk:.4} estimate={est_b:.4} ci95={ci_b:.4}");

    // 3. third-moment ratios at d=3, p in {5,7}
    for rec in &fit.per_prime {
        println!(
            "third moment p={}: proportional={} ratios={:?}",
            rec.p, rec.proportional, rec.ratios
        );
    }
    let fit_hi = fit_moment_constants(3, &[7, 11, 13]).unwrap();
    let c17_pred = fit_hi.predict_c(17);
    let fit17 = fit_moment_constants(3, &[3, 13, 17]).unwrap();
    let c17 = fit17.per_prime[2].c_p;
    println!(
        "fit c1={:.6} c2={:.6} residual={:.2e}; predict C_17={c17_pred:.6} actual={c17:.6} rel={:.4}%",
        fit_hi.c1,
        fit_hi.c2,
        fit_hi.fit_residual,
        100.0 * (c17_pred - c17).abs() / c17.abs()
    );

    // 4. forward decay stability
    for p in [5u64, 7] {
        let u = build_step_distribution(3, p).unwrap();
        let mut line = format!("forward decay p={p}:");
        for kappa in [1e-4, 1e-3, 1e-2] {
            let c = forward_decay_check(&u, 2000, kappa, &mut SeededRng::new(42, 0));
            line += &format!(" k={kappa:.0e} C={c:.4}");
        }
        println!("{line}");
    }
}
