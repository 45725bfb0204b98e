use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ssa_mpc::risk::{
    build_risk_rows, delta, ensemble_moments, linearize_avoidance, nu, schur_offsets, zeta, AvoidanceCoeff,
    BetaFormula,
};

fn coeff(alpha: Vector3<f64>, beta: f64) -> AvoidanceCoeff {
    AvoidanceCoeff { alpha, beta, obstacle: 0, step: 0 }
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

/// Ensembles of varying size whose alphas span 0 to 3 dimensions.
fn random_ensemble(seed: u64) -> Vec<AvoidanceCoeff> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..60);
    let rank = rng.random_range(0..=3);
    let basis: Vec<Vector3<f64>> = (0..rank).map(|_| vec3(&mut rng, 1.0)).collect();
    let center = vec3(&mut rng, 3.0);
    let w = vec3(&mut rng, 1.0);
    let coupled = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            let mut a = center;
            for b in &basis {
                a += b * rng.random_range(-2.0..2.0);
            }
            let noise = rng.random_range(-1.0..1.0);
            let beta = if coupled { a.dot(&w) + 0.1 * noise } else { 2.0 * noise };
            coeff(a, beta)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn delta_is_the_sample_std_and_zeta_bounds_it(seed in any::<u64>()) {
        let coeffs = random_ensemble(seed);
        let m = ensemble_moments(&coeffs).unwrap();
        let s = schur_offsets(&m);
        prop_assert!(s.k >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..3 {
            let p = vec3(&mut rng, 10.0);
            let zs: Vec<f64> = coeffs.iter().map(|c| c.z(&p)).collect();
            let d = delta(&p, &m).unwrap();
            prop_assert!((d - sample_std(&zs)).abs() <= 1e-10, "delta {} direct {}", d, sample_std(&zs));
            prop_assert!(d <= zeta(&p, &m, &s) + 1e-9);
        }
    }
}

#[test]
fn schur_residual_matches_full_rank_oracle() {
    // With a full-rank alpha covariance, k is the conditional variance of beta.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let coeffs: Vec<_> = (0..30).map(|_| coeff(vec3(&mut rng, 2.0), rng.random_range(-3.0..3.0))).collect();
        let m = ensemble_moments(&coeffs).unwrap();
        assert_eq!(m.n_null, 0);
        let inv = m.cov_alpha.try_inverse().unwrap();
        let k = m.var_beta - m.cov_alpha_beta.dot(&(inv * m.cov_alpha_beta));
        assert!(k > -1e-12);
        assert!((schur_offsets(&m).k - k.max(0.0)).abs() < 1e-9);
    }
}

/// `P(z >= 0)` over `n` draws of `mu + sigma * x`, with `x` standardized.
fn tail_fraction(n: usize, mu: f64, sigma: f64, mut draw: impl FnMut() -> f64) -> f64 {
    (0..n).filter(|_| mu + sigma * draw() >= 0.0).count() as f64 / n as f64
}

#[test]
fn moment_bound_covers_matched_distributions() {
    let n = 100_000;
    for (i, &eps) in [0.05, 0.25, 0.5].iter().enumerate() {
        let v = nu(eps);
        let sigma = 1.7;
        // Tight: E[z] + nu sqrt(Var z) = 0.
        let mu = -v * sigma;
        let limit = eps + 3.0 * (eps * (1.0 - eps) / n as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);

        let gauss = tail_fraction(n, mu, sigma, || StandardNormal.sample(&mut rng));
        let uniform = tail_fraction(n, mu, sigma, || rng.random_range(-3f64.sqrt()..3f64.sqrt()));
        // Extremal two-point law: mass eps at nu, the rest at -1/nu.
        let two_point = tail_fraction(n, mu, sigma, || if rng.random_bool(eps) { v } else { -1.0 / v });

        for (name, p) in [("gaussian", gauss), ("uniform", uniform), ("two-point", two_point)] {
            assert!(p <= limit, "{name} eps {eps}: tail {p} above {limit}");
        }
        // The extremal law attains the bound.
        assert!((two_point - eps).abs() < 4.0 * (eps * (1.0 - eps) / n as f64).sqrt());
    }
}

#[test]
fn risk_rows_keep_ensemble_violations_below_tolerance() {
    // Ensemble drawn from a fixed law; a point satisfying the rows must
    // violate the linearized constraint for at most a fraction eps of fresh draws.
    let c = DMatrix::<f64>::identity(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for &eps in &[0.05, 0.25, 0.5] {
        let draw = |rng: &mut ChaCha8Rng| {
            let g: f64 = StandardNormal.sample(rng);
            let a = Vector3::new(1.0 + 0.1 * g, 0.2 * rng.random_range(-1.0..1.0), -0.5);
            coeff(a, 2.0 + rng.random_range(-1.0..1.0))
        };
        let ensemble: Vec<_> = (0..2000).map(|_| draw(&mut rng)).collect();
        let m = ensemble_moments(&ensemble).unwrap();
        let s = schur_offsets(&m);
        let rows = build_risk_rows(&m, &s, eps, 1, &c).unwrap();
        // Walk along -x until the first row holds with the tightest slack.
        let mut p = Vector3::new(0.0, 0.5, 1.0);
        let x = loop {
            assert!(p.x > -1e3, "eps {eps}: rows never satisfied");
            let x = DVector::from_column_slice(p.as_slice());
            let slack = (m.sigma_tilde_sqrt * (p - s.h)).abs();
            if rows.residual(&x, &slack).iter().all(|&r| r <= 1e-12) {
                break p;
            }
            p.x -= 0.01;
        };
        let fresh = 100_000;
        let bad = (0..fresh).filter(|_| draw(&mut rng).z(&x) >= 0.0).count() as f64 / fresh as f64;
        let limit = eps + 3.0 * (eps * (1.0 - eps) / fresh as f64).sqrt();
        assert!(bad <= limit, "eps {eps}: {bad}");
    }
}

#[test]
fn linearized_half_space_lies_outside_the_sphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut accepted = 0;
    let mut spheres = 0;
    while accepted < 10_000 {
        spheres += 1;
        let y = vec3(&mut rng, 5.0);
        let r = rng.random_range(0.1..2.0);
        // Linearization point anywhere, including inside the sphere.
        let p_bar = y + vec3(&mut rng, 3.0 * r);
        let Ok(lin) = linearize_avoidance(&p_bar, &y, r, BetaFormula::Corrected) else { continue };
        for _ in 0..200 {
            let p = y + vec3(&mut rng, 3.0 * r);
            if lin.z(&p) <= 0.0 {
                assert!((p - y).norm() >= r * (1.0 - 1e-12), "point {p:?} inside sphere at {y:?}, r {r}");
                accepted += 1;
            }
        }
    }
    assert!(spheres > 10);
}
