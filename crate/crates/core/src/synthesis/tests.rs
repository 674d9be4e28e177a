use super::*;
use crate::evaluation::{cost_lqr, mean_cost};
use crate::inference::{sample_confidence_region, PosteriorSpec};
use crate::model::{make_toeplitz_system, simulate_dataset};
use nalgebra::dmatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_cfg(n_x: usize, n_u: usize) -> SynthesisConfig<f64> {
    SynthesisConfig::<f64>::new(DMatrix::identity(n_x, n_x) * 1e-3, DMatrix::identity(n_u, n_u)).unwrap()
}

fn toeplitz_samples(n_x: usize, n_rollouts: usize, m: usize, seed: u64) -> Vec<LinearSystem<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = make_toeplitz_system::<f64>(n_x).unwrap();
    let data = simulate_dataset(&truth, n_rollouts, 6, &mut rng).unwrap();
    let spec = PosteriorSpec::known_pi(DMatrix::identity(n_x, n_x));
    sample_confidence_region(&data, &spec, 95.0, m, 20 * m, &mut rng).unwrap().samples
}

fn random_spd(n: usize, cond: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let q = g.qr().q();
    let eig = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            cond.powf(i as f64 / (n - 1) as f64)
        }
    }));
    symmetric_part(&(&q * eig * q.transpose()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn linearized_inverse_never_exceeds_inverse(n in 1usize..=6, log_c1 in 0.0f64..4.0, log_c2 in 0.0f64..4.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(n, 10f64.powf(log_c1), &mut rng) * 10f64.powf(rng.random_range(-1.0..1.0));
        let s0 = random_spd(n, 10f64.powf(log_c2), &mut rng);
        let s_inv = spd_inverse(&s).unwrap();
        let gap = &s_inv - linearized_inverse(&s, &s0).unwrap();
        prop_assert!(min_eigenvalue(&symmetric_part(&gap)) >= -1e-8 * crate::linalg::spectral_norm(&s_inv));
    }
}

#[test]
fn linearized_inverse_is_exact_at_expansion_point() {
    let s = dmatrix![2.0, 0.3; 0.3, 1.0];
    let t = linearized_inverse(&s, &s).unwrap();
    assert!((t - spd_inverse(&s).unwrap()).abs().max() < 1e-14);
}

#[test]
fn anchor_examples() {
    let cfg = SynthesisConfig::<f64>::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
    // A + BK = 0 gives the one-step value Q + KᵀRK.
    let sys = LinearSystem::new(dmatrix![0.4], dmatrix![2.0], dmatrix![1.0]).unwrap();
    let k = GainPolicy::new(dmatrix![-0.2]).unwrap();
    let x = compute_anchor(&k, &sys, &cfg).unwrap();
    assert!((x[(0, 0)] - 1.04).abs() < 1e-12);
    // a_cl = 0.5 with unit stage weight: 1/(1 − 0.25).
    let sys = LinearSystem::new(dmatrix![0.5], dmatrix![1.0], dmatrix![1.0]).unwrap();
    let cfg0 = SynthesisConfig::<f64>::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
    let x = compute_anchor(&GainPolicy::zeros(1, 1), &sys, &cfg0).unwrap();
    assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    let sys = LinearSystem::new(dmatrix![1.1], dmatrix![1.0], dmatrix![1.0]).unwrap();
    assert!(matches!(compute_anchor(&GainPolicy::zeros(1, 1), &sys, &cfg0), Err(Error::Unstable(_))));
}

#[test]
fn common_lyapunov_dead_dynamics() {
    let n = 3;
    let sys = LinearSystem::new(DMatrix::zeros(n, n), DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap();
    let cfg = SynthesisConfig::<f64>::new(DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap();
    let cl = solve_common_lyapunov(&[sys], &cfg).unwrap();
    assert!(cl.k.k().abs().max() < 1e-5);
    assert!((cl.objective - n as f64).abs() < 1e-5);
}

#[test]
fn common_lyapunov_is_tight_for_one_model() {
    let truth = make_toeplitz_system::<f64>(3).unwrap();
    let cfg = bench_cfg(3, 3);
    let (x, _) = dare(truth.a(), truth.b(), &cfg.q, &cfg.r).unwrap();
    let opt = (x * truth.pi()).trace();
    let cl = solve_common_lyapunov(std::slice::from_ref(&truth), &cfg).unwrap();
    assert!((cl.objective - opt).abs() <= 1e-4 * opt, "{} vs {}", cl.objective, opt);

    let twice = solve_common_lyapunov(&[truth.clone(), truth.clone()], &cfg).unwrap();
    assert!((twice.objective - cl.objective).abs() <= 1e-6 * opt);
    assert!((twice.k.k() - cl.k.k()).abs().max() < 1e-4);
}

#[test]
fn bound_is_tight_and_majorizes() {
    let samples = toeplitz_samples(3, 20, 8, 7);
    let cfg = bench_cfg(3, 3);
    let cl = solve_common_lyapunov(&samples, &cfg).unwrap();
    let kbar = cl.k;
    let j = mean_cost(&kbar, &samples, &cfg.q, &cfg.r).finite().unwrap();
    let anchors: Vec<_> = samples.iter().map(|s| compute_anchor(&kbar, s, &cfg).unwrap()).collect();
    let tight = surrogate_cost(&kbar, &samples, &anchors, &cfg).unwrap().finite().unwrap();
    assert!((tight - j).abs() <= 1e-5 * (1.0 + j), "{tight} vs {j}");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 10 {
        let delta = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.05..0.05));
        let k = GainPolicy::new(kbar.k() + delta).unwrap();
        let Cost::Finite(jk) = mean_cost(&k, &samples, &cfg.q, &cfg.r) else { continue };
        checked += 1;
        if let Cost::Finite(b) = surrogate_cost(&k, &samples, &anchors, &cfg).unwrap() {
            assert!(b >= jk - 1e-6 * (1.0 + jk), "bound {b} below cost {jk}");
        }
    }

    let step = mm_step(&samples, &anchors, &cfg).unwrap();
    let j_new = mean_cost(&step.k, &samples, &cfg.q, &cfg.r).finite().unwrap();
    assert!(j_new <= step.bound + 1e-6 * (1.0 + j_new));
    assert!(step.bound <= j + 1e-8 + 1e-7 * j);
}

#[test]
fn sdp_surrogate_matches_fixed_point() {
    let samples = toeplitz_samples(3, 20, 6, 11);
    let cfg = bench_cfg(3, 3);
    let kbar = solve_common_lyapunov(&samples, &cfg).unwrap().k;
    let anchors: Vec<_> = samples.iter().map(|s| compute_anchor(&kbar, s, &cfg).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let delta = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.01..0.01));
        let k = GainPolicy::new(kbar.k() + delta).unwrap();
        let fp = surrogate_cost(&k, &samples, &anchors, &cfg).unwrap();
        let sdp = surrogate_cost_sdp(&k, &samples, &anchors, &cfg).unwrap();
        match (fp, sdp) {
            (Cost::Finite(a), Cost::Finite(b)) => assert!((a - b).abs() <= 1e-6 * (1.0 + a), "{a} vs {b}"),
            (a, b) => assert_eq!(a.is_finite(), b.is_finite(), "{a} vs {b}"),
        }
    }
}

#[test]
fn single_model_recovers_lqr() {
    let cfg = bench_cfg(1, 1);
    let sys = LinearSystem::new(dmatrix![1.01], dmatrix![1.0], dmatrix![1.0]).unwrap();
    let (_, k_opt) = dare(sys.a(), sys.b(), &cfg.q, &cfg.r).unwrap();
    let opt = cost_lqr(&k_opt, &sys, &cfg.q, &cfg.r).finite().unwrap();
    let report = synthesize(std::slice::from_ref(&sys), &cfg).unwrap();
    let last = *report.cost_trace.last().unwrap();
    assert!((last - opt).abs() <= 1e-3 * opt);

    // Detuned start: MM from a stabilizing but poor gain.
    let k0 = GainPolicy::new(dmatrix![-0.3]).unwrap();
    let mut k = k0;
    for _ in 0..50 {
        let anchors = vec![compute_anchor(&k, &sys, &cfg).unwrap()];
        k = mm_step(std::slice::from_ref(&sys), &anchors, &cfg).unwrap().k;
    }
    assert!((k.k()[(0, 0)] - k_opt.k()[(0, 0)]).abs() < 1e-3);
}

#[test]
fn monotone_descent_and_improvement() {
    let samples = toeplitz_samples(3, 50, 100, 11);
    let cfg = bench_cfg(3, 3);
    let report = synthesize(&samples, &cfg).unwrap();
    for w in report.cost_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs()));
    }
    assert!(report.cost_trace.last().unwrap() < &report.cost_trace[0]);
    assert!(matches!(report.status, SynthesisStatus::Converged | SynthesisStatus::MaxIters));
    for s in &samples {
        assert!(spectral_radius(&s.closed_loop(&report.k)).unwrap() < 1.0);
    }
}

#[test]
fn infinite_tolerance_takes_one_step() {
    let samples = toeplitz_samples(2, 20, 10, 5);
    let mut cfg = bench_cfg(2, 2);
    cfg.epsilon_conv = f64::INFINITY;
    let report = synthesize(&samples, &cfg).unwrap();
    assert_eq!(report.iterations, 1);
    assert_eq!(report.cost_trace.len(), 2);
}

#[test]
fn nominal_examples() {
    let cfg = bench_cfg(2, 1);
    let k = synthesize_nominal(&DMatrix::zeros(2, 2), &dmatrix![1.0; 0.5], &cfg).unwrap();
    assert!(k.k().abs().max() < 1e-12);

    // Scalar DARE by fixed-point iteration.
    let (a, b, q, r) = (1.01f64, 1.0f64, 1e-3f64, 1.0f64);
    let mut p = q;
    for _ in 0..100_000 {
        p = q + a * a * p - (a * b * p).powi(2) / (r + b * b * p);
    }
    let k_oracle = -(b * p * a) / (r + b * b * p);
    let k = synthesize_nominal(&dmatrix![a], &dmatrix![b], &bench_cfg(1, 1)).unwrap();
    assert!((k.k()[(0, 0)] - k_oracle).abs() < 1e-9);

    let unstab = synthesize_nominal(&dmatrix![2.0], &dmatrix![0.0], &bench_cfg(1, 1));
    assert!(matches!(unstab, Err(Error::Unstabilizable)));
}

#[test]
fn alternate_s_with_nominal_only_matches_single_model() {
    let cfg = bench_cfg(1, 1);
    let sys = LinearSystem::new(dmatrix![1.01], dmatrix![1.0], dmatrix![1.0]).unwrap();
    let a = synthesize_alternate_s(std::slice::from_ref(&sys), &sys, &cfg).unwrap();
    let b = synthesize(std::slice::from_ref(&sys), &cfg).unwrap();
    let (ja, jb) = (*a.cost_trace.last().unwrap(), *b.cost_trace.last().unwrap());
    assert!((ja - jb).abs() <= 1e-3 * jb);
}

#[test]
fn alternate_s_stabilizes_every_sample() {
    let samples = toeplitz_samples(3, 20, 30, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let truth = make_toeplitz_system::<f64>(3).unwrap();
    let data = simulate_dataset(&truth, 20, 6, &mut rng).unwrap();
    let (a_ls, b_ls) = crate::inference::least_squares_estimate(&data).unwrap();
    let nominal = LinearSystem::new(a_ls, b_ls, DMatrix::identity(3, 3)).unwrap();
    let report = synthesize_alternate_s(&samples, &nominal, &bench_cfg(3, 3)).unwrap();
    for s in &samples {
        assert!(spectral_radius(&s.closed_loop(&report.k)).unwrap() < 1.0);
    }
    for w in report.cost_trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs()));
    }
}

#[test]
fn certificate_variant_yields_valid_certificate() {
    let samples = toeplitz_samples(2, 20, 10, 17);
    let mut cfg = bench_cfg(2, 2);
    cfg.enforce_common_lyap_certificate = true;
    let report = synthesize(&samples, &cfg).unwrap();
    let cert = report.certificate.expect("certificate requested");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let check = crate::evaluation::verify_convex_hull_certificate(&report.k, &cert.x, &cert.systems, 200, &mut rng);
    assert!(check.is_valid(), "{check:?}");
}

#[test]
fn invalid_weights_rejected() {
    assert!(SynthesisConfig::<f64>::new(dmatrix![-1.0], dmatrix![1.0]).is_err());
    assert!(SynthesisConfig::<f64>::new(dmatrix![1.0], dmatrix![0.0]).is_err());
    let mut cfg = SynthesisConfig::<f64>::new(dmatrix![1.0], dmatrix![1.0]).unwrap();
    cfg.epsilon_conv = 0.0;
    assert!(cfg.validate().is_err());
}
