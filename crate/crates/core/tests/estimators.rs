use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use sock_core::estimators::{
    estimate_gradient, estimate_inner, estimate_jacobian, gradient_option2, multilevel_gradient,
    multilevel_gradient_with_batches, option1_variance_coefficient, option2_variance_coefficient,
    MultiLevelBatches,
};
use sock_core::levels::multilevel_full_gradient;
use sock_core::problem::full_gradient;
use sock_core::problems::{
    generate_instance, make_multilevel_linear, LinearLevels, LinearLevelsConfig, SmoothNonlinear,
};
use sock_core::rng::{sample_batch, sample_indices};
use sock_core::{
    BatchSizes, CompositionalOracle, EstimatorOption, Metered, MeteredLevels, MiniBatch,
    MultiLevelSnapshot, RandomStream, Snapshot, TwoLevelView,
};

fn random_vector(s: &mut RandomStream, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * s.standard_normal())
}

fn bits(v: &DVector<f64>) -> Vec<u64> {
    // -0.0 and 0.0 are the same exact quantity
    v.iter().map(|x| (x + 0.0).to_bits()).collect()
}

fn levels(counts: Vec<usize>, dims: Vec<usize>, seed: u64) -> LinearLevels {
    make_multilevel_linear(&LinearLevelsConfig {
        counts,
        dims,
        mu: 0.1,
        lambda: 0.0,
        spread: 0.6,
        identical: false,
        seed,
    })
    .unwrap()
}

#[test]
fn estimators_are_exact_at_the_snapshot() {
    let nl = SmoothNonlinear::generate(4, 6, 5, 0.7, 0.0, 0.0, 3).unwrap();
    let mv = generate_instance(5, 30, 1.0, 0.5, 0.1, 4).unwrap();
    let mvo = mv.as_compositional();
    let ml = levels(vec![3, 4, 5], vec![4, 3, 2, 1], 5);
    let mut s = RandomStream::new(6);
    for case in 0..100u64 {
        let batches = BatchSizes {
            inner_value: 1 + case % 7,
            inner_jac: 1 + (case * 3) % 11,
            outer: 1 + (case * 5) % 13,
        };
        let stream = RandomStream::new(100 + case);
        for option in [EstimatorOption::OptionI, EstimatorOption::OptionII] {
            let x = random_vector(&mut s, 4, 2.0);
            let mut m = Metered::new(&nl);
            let snap = Snapshot::take(&mut m, &x).unwrap();
            let g = estimate_gradient(&mut m, &snap, &x, option, batches, &stream, case).unwrap();
            assert_eq!(bits(&g), bits(&snap.grad_mean));

            let x = random_vector(&mut s, 5, 2.0);
            let mut m = Metered::new(&mvo);
            let snap = Snapshot::take(&mut m, &x).unwrap();
            let g = estimate_gradient(&mut m, &snap, &x, option, batches, &stream, case).unwrap();
            assert_eq!(bits(&g), bits(&snap.grad_mean));
        }
        let x = random_vector(&mut s, 4, 2.0);
        let mut m = MeteredLevels::new(&ml);
        let snap = MultiLevelSnapshot::take(&mut m, &x).unwrap();
        let value_batches = [1 + case % 5, 1 + case % 3];
        let jac_batches = [1 + case % 4, 2 + case % 6, 1 + case % 9];
        let g = multilevel_gradient(
            &mut m,
            &snap,
            &x,
            &value_batches,
            &jac_batches,
            &stream,
            case,
        )
        .unwrap();
        assert_eq!(bits(&g), bits(&snap.grad_mean));
    }
}

#[test]
fn snapshot_gradient_equals_full_gradient() {
    let nl = SmoothNonlinear::generate(4, 6, 5, 0.7, 0.0, 0.0, 7).unwrap();
    let ml = levels(vec![2, 3, 4], vec![3, 3, 2, 1], 8);
    let mut s = RandomStream::new(9);
    for _ in 0..10 {
        let x = random_vector(&mut s, 4, 1.0);
        let snap = Snapshot::take(&mut Metered::new(&nl), &x).unwrap();
        let full = full_gradient(&mut Metered::new(&nl), &x).unwrap();
        assert!((snap.grad_mean - full).amax() <= 1e-12);
        let x = random_vector(&mut s, 3, 1.0);
        let snap = MultiLevelSnapshot::take(&mut MeteredLevels::new(&ml), &x).unwrap();
        let full = multilevel_full_gradient(&mut MeteredLevels::new(&ml), &x).unwrap();
        assert!((snap.grad_mean - full).amax() <= 1e-12);
    }
}

/// Sample mean and standard error per coordinate.
fn mean_and_se(samples: &[DVector<f64>]) -> (DVector<f64>, DVector<f64>) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mean = samples.iter().fold(DVector::zeros(dim), |a, v| a + v) / n;
    let var = samples
        .iter()
        .fold(DVector::zeros(dim), |a: DVector<f64>, v| {
            a + (v - &mean).map(|d| d * d)
        })
        / (n - 1.0);
    (mean, var.map(|v| (v / n).sqrt()))
}

#[test]
fn inner_estimators_are_unbiased() {
    let nl = SmoothNonlinear::generate(3, 4, 8, 1.0, 0.0, 0.0, 11).unwrap();
    let mut s = RandomStream::new(12);
    let snap_point = random_vector(&mut s, 3, 1.0);
    let x = random_vector(&mut s, 3, 1.0);
    let mut m = Metered::new(&nl);
    let snap = Snapshot::take(&mut m, &snap_point).unwrap();
    let exact = Snapshot::take(&mut m, &x).unwrap();
    let draws = 20_000;
    let mut values = Vec::with_capacity(draws);
    let mut jacs = Vec::with_capacity(draws);
    for k in 0..draws as u64 {
        let batch = sample_batch(&mut s.child(1, k), nl.n_inner(), 2);
        values.push(estimate_inner(&mut m, &snap, &x, &batch).unwrap());
        let jac: DMatrix<f64> = estimate_jacobian(&mut m, &snap, &x, &batch).unwrap();
        jacs.push(DVector::from_column_slice(jac.as_slice()));
    }
    let (mean, se) = mean_and_se(&values);
    for i in 0..mean.len() {
        assert!((mean[i] - exact.inner_mean[i]).abs() <= 5.0 * se[i] + 1e-12);
    }
    let (mean, se) = mean_and_se(&jacs);
    let want = exact.inner_jac_mean.as_slice();
    for i in 0..mean.len() {
        assert!((mean[i] - want[i]).abs() <= 5.0 * se[i] + 1e-12);
    }
}

/// Monte-Carlo `E||g~ - grad f(x)||^2 / ||x - x~||^2`.
fn second_moment_ratio<O: CompositionalOracle>(
    oracle: &O,
    x: &DVector<f64>,
    snap_point: &DVector<f64>,
    option: EstimatorOption,
    batches: BatchSizes,
    stream: &RandomStream,
    draws: u64,
) -> f64 {
    let mut m = Metered::new(oracle);
    let snap = Snapshot::take(&mut m, snap_point).unwrap();
    let exact = full_gradient(&mut m, x).unwrap();
    let total: f64 = (0..draws)
        .map(|k| {
            let g = estimate_gradient(&mut m, &snap, x, option, batches, stream, k).unwrap();
            (g - &exact).norm_squared()
        })
        .sum();
    total / draws as f64 / (x - snap_point).norm_squared()
}

#[test]
fn second_moment_respects_variance_bounds() {
    let nl = SmoothNonlinear::generate(3, 6, 6, 0.8, 0.0, 0.0, 21).unwrap();
    let profile = nl.profile();
    let batches = BatchSizes {
        inner_value: 2,
        inner_jac: 2,
        outer: 3,
    };
    let c1 = option1_variance_coefficient(&profile, batches.inner_value, batches.inner_jac);
    let c2 = option2_variance_coefficient(&profile, profile.l, batches);
    let mut s = RandomStream::new(22);
    for pair in 0..5u64 {
        let x = random_vector(&mut s, 3, 1.5);
        let snap = random_vector(&mut s, 3, 1.5);
        let stream = RandomStream::new(pair);
        let r1 = second_moment_ratio(
            &nl,
            &x,
            &snap,
            EstimatorOption::OptionI,
            batches,
            &stream,
            2000,
        );
        let r2 = second_moment_ratio(
            &nl,
            &x,
            &snap,
            EstimatorOption::OptionII,
            batches,
            &stream,
            2000,
        );
        assert!(r1 <= c1, "option I: {r1} > {c1}");
        assert!(r2 <= c2, "option II: {r2} > {c2}");
    }
}

#[test]
fn meanvar_second_moment_respects_variance_bounds() {
    let mv = generate_instance(4, 25, 1.0, 0.5, 0.0, 23).unwrap();
    let profile = mv.explicit_constants(3.0).unwrap();
    let oracle = mv.as_compositional();
    let batches = BatchSizes {
        inner_value: 3,
        inner_jac: 3,
        outer: 4,
    };
    let c1 = option1_variance_coefficient(&profile, batches.inner_value, batches.inner_jac);
    let c2 = option2_variance_coefficient(&profile, mv.component_smoothness(), batches);
    let mut s = RandomStream::new(24);
    for pair in 0..5u64 {
        // both points inside the ball the constants were certified on
        let x = random_vector(&mut s, 4, 0.5);
        let snap = random_vector(&mut s, 4, 0.5);
        let stream = RandomStream::new(pair);
        let r1 = second_moment_ratio(
            &oracle,
            &x,
            &snap,
            EstimatorOption::OptionI,
            batches,
            &stream,
            2000,
        );
        let r2 = second_moment_ratio(
            &oracle,
            &x,
            &snap,
            EstimatorOption::OptionII,
            batches,
            &stream,
            2000,
        );
        assert!(r1 <= c1, "option I: {r1} > {c1}");
        assert!(r2 <= c2, "option II: {r2} > {c2}");
    }
}

#[test]
fn multilevel_second_moment_respects_bound() {
    let ml = levels(vec![3, 4, 5], vec![3, 3, 2, 1], 25);
    let radius = 4.0;
    let consts = ml.level_constants(radius);
    let value_batches = [2, 2];
    let jac_batches = [2, 2, 3];
    let coeff = consts.variance_bound(&value_batches, &jac_batches);
    let mut s = RandomStream::new(26);
    for pair in 0..5u64 {
        let x = random_vector(&mut s, 3, 0.5);
        let snap_point = random_vector(&mut s, 3, 0.5);
        let mut m = MeteredLevels::new(&ml);
        let snap = MultiLevelSnapshot::take(&mut m, &snap_point).unwrap();
        let exact = multilevel_full_gradient(&mut m, &x).unwrap();
        let stream = RandomStream::new(pair);
        let draws = 2000;
        let total: f64 = (0..draws)
            .map(|k| {
                let g = multilevel_gradient(
                    &mut m,
                    &snap,
                    &x,
                    &value_batches,
                    &jac_batches,
                    &stream,
                    k,
                )
                .unwrap();
                (g - &exact).norm_squared()
            })
            .sum();
        let ratio = total / draws as f64 / (&x - &snap_point).norm_squared();
        assert!(ratio <= coeff, "{ratio} > {coeff}");
    }
}

#[test]
fn two_level_multilevel_matches_option2_bit_for_bit() {
    let mut s = RandomStream::new(31);
    for case in 0..50u64 {
        let n0 = 2 + (case % 5) as usize;
        let n1 = 1 + (case % 4) as usize;
        let d0 = 2 + (case % 3) as usize;
        let d1 = 1 + (case % 4) as usize;
        let ml = levels(vec![n0, n1], vec![d0, d1, 1], 1000 + case);
        let view = TwoLevelView::new(&ml).unwrap();
        let snap_point = random_vector(&mut s, d0, 1.0);
        let x = random_vector(&mut s, d0, 1.0);
        let batches = MultiLevelBatches::sample(
            &ml,
            &[1 + case % 6],
            &[1 + case % 5, 1 + case % 7],
            &RandomStream::new(case),
            case,
        )
        .unwrap();

        let mut mm = MeteredLevels::new(&ml);
        let msnap = MultiLevelSnapshot::take(&mut mm, &snap_point).unwrap();
        let multi = multilevel_gradient_with_batches(&mut mm, &msnap, &x, &batches).unwrap();

        let mut m = Metered::new(&view);
        let snap = Snapshot::take(&mut m, &snap_point).unwrap();
        let ghat = estimate_inner(&mut m, &snap, &x, &batches.values[0]).unwrap();
        let jhat = estimate_jacobian(&mut m, &snap, &x, &batches.jacobians[0]).unwrap();
        let two = gradient_option2(&mut m, &snap, &ghat, &jhat, &batches.jacobians[1]).unwrap();

        assert_eq!(bits(&multi), bits(&two), "case {case}");
        assert_eq!(mm.counts().total(), m.counts().total(), "case {case}");
    }
}

fn chi_square_p_value(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn index_sampler_is_uniform() {
    let n = 12;
    let mut counts = vec![0u64; n];
    let mut s = RandomStream::new(41);
    for i in sample_indices(&mut s, n, 120_000) {
        counts[i] += 1;
    }
    assert!(chi_square_p_value(&counts) > 1e-4);
}

#[test]
fn multinomial_batches_have_multinomial_moments() {
    // batches larger than 4n take the conditional-binomial path
    let (n, size, reps) = (5usize, 60u64, 4000u64);
    let mut totals = vec![0u64; n];
    let mut last = Vec::with_capacity(reps as usize);
    let root = RandomStream::new(42);
    for r in 0..reps {
        let batch: MiniBatch = sample_batch(&mut root.child(7, r), n, size);
        assert_eq!(batch.size(), size);
        let mut per = vec![0u64; n];
        for &(i, c) in batch.entries() {
            per[i] = c;
        }
        for i in 0..n {
            totals[i] += per[i];
        }
        last.push(per[n - 1] as f64);
    }
    assert!(chi_square_p_value(&totals) > 1e-4);
    let p = 1.0 / n as f64;
    let want = size as f64 * p * (1.0 - p);
    let mean = last.iter().sum::<f64>() / reps as f64;
    let var = last.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    assert!((var - want).abs() <= 0.1 * want, "{var} vs {want}");
}
