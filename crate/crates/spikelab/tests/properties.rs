//! Property-based invariants. Each suite runs on randomly generated bulks,
//! spikes, aspect ratios, and seeds rather than hand-picked values.

use ndarray::{Array2, Axis};
use ndarray_linalg::Inverse;
use proptest::prelude::*;

use spikelab::clt::omega_statistic;
use spikelab::estimate::{detect_spikes, DetectionConfig};
use spikelab::mc::{run_clt_experiment, ExperimentConfig};
use spikelab::model::{build_case1, build_custom, BulkMeasure, PopulationModel};
use spikelab::sampler::{draw_matrix, rep_rng, sample_eigs, Distribution};
use spikelab::spectral::{phi, phi_prime, StieltjesContext};

fn bulk_strategy() -> impl Strategy<Value = BulkMeasure> {
    prop::collection::vec((0.3f64..5.0, 0.1f64..1.0), 1..=3).prop_map(|raw| {
        let total: f64 = raw.iter().map(|&(_, w)| w).sum();
        let atoms: Vec<(f64, f64)> = raw.iter().map(|&(t, w)| (t, w / total)).collect();
        BulkMeasure::new(atoms).expect("normalized atoms form a measure")
    })
}

/// (bulk, c, α) with α on a strictly increasing stretch of φ, clear of poles.
fn distant_alpha() -> impl Strategy<Value = (BulkMeasure, f64, f64)> {
    (bulk_strategy(), 0.05f64..1.5, -3.0f64..9.0).prop_filter(
        "alpha must sit on an increasing branch away from atoms and zero",
        |(bulk, c, alpha)| {
            alpha.abs() > 1e-2
                && bulk.atoms().iter().all(|&(t, _)| (alpha - t).abs() > 0.1 * t.max(1.0))
                && phi_prime(*alpha, *c, bulk).map(|d| d > 1e-3).unwrap_or(false)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    // φ and its branch inversion are mutually inverse off the support.
    #[test]
    fn phi_inversion_round_trip((bulk, c, alpha) in distant_alpha()) {
        let ctx = StieltjesContext::new(c, bulk.clone()).unwrap();
        let lambda = phi(alpha, c, &bulk).unwrap();
        let back = ctx.alpha_from_lambda(lambda).unwrap();
        prop_assert!(
            (back - alpha).abs() <= 1e-9 * alpha.abs().max(1.0),
            "alpha = {alpha}, lambda = {lambda}, back = {back}"
        );
    }

    // φ′ agrees with a central finite difference.
    #[test]
    fn phi_prime_matches_finite_difference((bulk, c, alpha) in distant_alpha()) {
        let h = 1e-6 * alpha.abs().max(1.0);
        let up = phi(alpha + h, c, &bulk).unwrap();
        let dn = phi(alpha - h, c, &bulk).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let exact = phi_prime(alpha, c, &bulk).unwrap();
        prop_assert!(
            (fd - exact).abs() <= 1e-5 * exact.abs().max(1.0),
            "fd = {fd}, exact = {exact}"
        );
    }

    // m̲₂ = m̲′ agrees with a central finite difference of m̲.
    #[test]
    fn m_underline2_matches_finite_difference((bulk, c, alpha) in distant_alpha()) {
        let ctx = StieltjesContext::new(c, bulk.clone()).unwrap();
        let lambda = phi(alpha, c, &bulk).unwrap();
        let scale = lambda.abs().max(1.0);
        // m̲ has square-root behavior at the support edges, so the step must
        // stay far below the distance to the nearest edge
        let dist = ctx
            .support_edges()
            .iter()
            .flat_map(|&(lo, hi)| [lo, hi])
            .map(|e| (lambda - e).abs())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(dist > 1e-3 * scale);
        let h = 1e-6 * scale;
        let up = ctx.m_underline(lambda + h).unwrap();
        let dn = ctx.m_underline(lambda - h).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let exact = ctx.m_underline2(lambda).unwrap();
        prop_assert!(
            (fd - exact).abs() <= 1e-4 * exact.abs().max(1e-2),
            "fd = {fd}, exact = {exact}"
        );
    }
}

/// Small two-group model with a two-atom bulk for resolvent tests.
fn omega_model(a1: f64, a2: f64) -> PopulationModel {
    let bulk = BulkMeasure::new(vec![(0.7, 0.5), (1.3, 0.5)]).unwrap();
    build_custom(20, bulk, &[(a1, 1), (a2, 2)]).unwrap()
}

/// Ω_M(λ) straight from its definition, solving on the n×n side:
/// C = (1/n) X*U₂D₂U₂*X, then √n[(1/n)tr(λI−C)⁻¹·D₁ − (1/n)√D₁U₁*X(λI−C)⁻¹X*U₁√D₁].
fn omega_dense(model: &PopulationModel, x: &Array2<f64>, lambda: f64) -> Array2<f64> {
    let n = x.ncols();
    let nf = n as f64;
    let mut u2x = model.u2.t().dot(x); // (p−M)×n
    for (mut row, &d) in u2x.axis_iter_mut(Axis(0)).zip(model.d2.iter()) {
        row.mapv_inplace(|v| v * d.sqrt());
    }
    let c_mat = u2x.t().dot(&u2x) / nf;
    let resolvent = (Array2::<f64>::eye(n) * lambda - &c_mat).inv().unwrap();
    let trace = resolvent.diag().sum();
    let u1x = model.u1.t().dot(x); // M×n
    let quad = u1x.dot(&resolvent).dot(&u1x.t()) / nf;
    let m = model.m();
    let mut omega = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let mut v = -(model.d1[i] * model.d1[j]).sqrt() * quad[(i, j)];
            if i == j {
                v += trace / nf * model.d1[i];
            }
            omega[(i, j)] = nf.sqrt() * v;
        }
    }
    omega
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    // The block statistic is exactly symmetric.
    #[test]
    fn omega_is_symmetric(seed in any::<u64>(), a1 in 5.0f64..9.0, a2 in 2.2f64..4.0) {
        let model = omega_model(a1, a2);
        let x = draw_matrix(20, 30, Distribution::Gaussian, &mut rep_rng(seed, 0));
        let lambda = 3.0 * (1.0 + a1);
        let omega = omega_statistic(&model, &x, lambda).unwrap();
        let asym = (&omega - &omega.t())
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        prop_assert!(asym <= 1e-10, "asymmetry {asym}");
    }

    // The p-side push-through equals the dense n×n-side evaluation.
    #[test]
    fn omega_matches_dense_oracle(
        seed in any::<u64>(),
        a1 in 5.0f64..9.0,
        a2 in 2.2f64..4.0,
        shift in 1.2f64..4.0,
        negate in any::<bool>(),
    ) {
        let model = omega_model(a1, a2);
        let x = draw_matrix(20, 30, Distribution::Gaussian, &mut rep_rng(seed, 1));
        let lambda = if negate { -shift } else { shift * (1.0 + a1) };
        let fast = match omega_statistic(&model, &x, lambda) {
            Ok(o) => o,
            // λ happened to graze a sample eigenvalue; nothing to compare
            Err(spikelab::Error::SingularResolvent { .. }) => return Ok(()),
            Err(e) => panic!("unexpected error: {e}"),
        };
        let dense = omega_dense(&model, &x, lambda);
        let scale = 1.0 + dense.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let gap = (&fast - &dense).iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-10 * scale, "gap {gap}, scale {scale}");
    }

    // Identical seeds replay identical spectra and experiment outputs,
    // including under the parallel runner.
    #[test]
    fn seeded_runs_are_bitwise_identical(seed in any::<u64>()) {
        let model = build_custom(30, BulkMeasure::point_mass(1.0).unwrap(), &[(6.0, 1)]).unwrap();
        let e1 = sample_eigs(&model, 40, Distribution::Rademacher, &mut rep_rng(seed, 2)).unwrap();
        let e2 = sample_eigs(&model, 40, Distribution::Rademacher, &mut rep_rng(seed, 2)).unwrap();
        prop_assert_eq!(e1, e2);

        let cfg = ExperimentConfig::new(40, 4, Distribution::Gaussian, seed);
        let r1 = run_clt_experiment(&model, &cfg).unwrap();
        let r2 = run_clt_experiment(&model, &cfg).unwrap();
        prop_assert_eq!(r1, r2);
    }

    // Rescaling every eigenvalue by s > 0 rescales t₀, the band, and the
    // estimated spike sizes by s and leaves the accept/reject pattern alone
    // (delocalized regime: the acceptance statistic is scale-free).
    #[test]
    fn detect_is_scale_equivariant(seed in any::<u64>(), s in 0.2f64..5.0) {
        let model = build_case1(200).unwrap();
        let eigs = sample_eigs(&model, 400, Distribution::Gaussian, &mut rep_rng(seed, 3)).unwrap();
        let scaled: Vec<f64> = eigs.iter().map(|&l| s * l).collect();
        let cfg = DetectionConfig::new(0.5);
        let base = detect_spikes(&eigs, &cfg).unwrap();
        let moved = detect_spikes(&scaled, &cfg).unwrap();
        prop_assert_eq!(base.m_hat, moved.m_hat);
        prop_assert!((moved.t0 / base.t0 - s).abs() <= 1e-9 * s);
        for (b, m) in base.candidates.iter().zip(moved.candidates.iter()) {
            prop_assert_eq!(b.rank, m.rank);
            prop_assert_eq!(b.status, m.status, "rank {}", b.rank);
            if let (Some(ab), Some(am)) = (b.alpha_hat, m.alpha_hat) {
                prop_assert!((am / ab - s).abs() <= 1e-9 * s, "rank {}", b.rank);
            }
        }
    }
}
