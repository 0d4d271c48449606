use nalgebra::{DMatrix, DVector};
use phase_deblur::fourier::circular_convolve;
use phase_deblur::image::Image;
use phase_deblur::kernel::Kernel;
use phase_deblur::metrics::evaluate;
use phase_deblur::optimizer::{
    alternate, deblur_multiscale, energy, energy_terms, estimate_latent, refine_kernel,
    refine_kernel_field, support_for, truncated_quadratic_penalty, DeblurParams, GradientField,
};
use phase_deblur::synth::{blur_with_kernel, synthesize_linear_kernel, test_pattern, PatternKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| rng.random::<f64>())
}

fn synthetic_params() -> DeblurParams {
    DeblurParams {
        pad_boundary: false,
        ..DeblurParams::default()
    }
}

/// Dense ridge solve over every circular offset.
fn dense_refine(b: &Image, l: &Image, mu: f64) -> Vec<f64> {
    let (w, h) = b.dims();
    let n = w * h;
    let a = DMatrix::from_fn(n, n, |row, col| {
        let (x, y) = ((row % w) as isize, (row / w) as isize);
        let (dx, dy) = ((col % w) as isize, (col / w) as isize);
        l.get_wrapped(x - dx, y - dy)
    });
    let rhs = a.transpose() * DVector::from_column_slice(b.data());
    let normal = a.transpose() * &a + DMatrix::identity(n, n) * mu;
    normal
        .cholesky()
        .unwrap()
        .solve(&rhs)
        .iter()
        .copied()
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kernel_field_matches_dense_solve(seed in 0u64..10_000, w in 5usize..12, h in 5usize..12, mu in 0.01f64..5.0) {
        let l = random(w, h, seed);
        let b = random(w, h, seed + 1);
        let fast = refine_kernel_field(&b, &l, mu).unwrap();
        let dense = dense_refine(&b, &l, mu);
        for (a, d) in fast.data().iter().zip(&dense) {
            prop_assert!((a - d).abs() < 1e-8 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn refined_kernels_are_valid(seed in 0u64..10_000, support in prop::sample::select(vec![3usize, 5, 9, 15])) {
        let l = random(32, 32, seed);
        let k = synthesize_linear_kernel(6.0, seed as f64 % 180.0).unwrap();
        let b = circular_convolve(&l, &k).unwrap();
        let r = refine_kernel(&b, &l, 0.1, support).unwrap();
        prop_assert_eq!(r.side(), support);
        prop_assert!(r.weights().iter().all(|&w| w >= 0.0));
        prop_assert!((r.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_is_bounded_by_pixel_count(seed in 0u64..10_000, eps in 0.1f64..1.0) {
        let img = random(12, 10, seed);
        let g = GradientField::of(&img);
        let h = truncated_quadratic_penalty(&g, eps);
        prop_assert!((0.0..=120.0).contains(&h));
    }

    #[test]
    fn energy_splits_into_its_terms(seed in 0u64..10_000) {
        let p = DeblurParams::default();
        let l = random(16, 16, seed);
        let b = random(16, 16, seed + 7);
        let k = synthesize_linear_kernel(4.0, 20.0).unwrap();
        let t = energy_terms(&b, &l, &k, &p).unwrap();
        prop_assert!(t.data_term >= 0.0 && t.kernel_term >= 0.0 && t.gradient_term >= 0.0);
        prop_assert!((t.total() - energy(&b, &l, &k, &p).unwrap()).abs() < 1e-12);
    }

    /// The latent solve never ends above its starting objective.
    #[test]
    fn latent_solve_does_not_raise_the_objective(seed in 0u64..10_000, len in 3.0f64..9.0) {
        let p = DeblurParams::default();
        let sharp = test_pattern(PatternKind::Edges, 48, seed).unwrap();
        let k = synthesize_linear_kernel(len, (seed % 180) as f64).unwrap();
        let b = blur_with_kernel(&sharp, &k, 0.0, seed).unwrap();
        let objective = |l: &Image| {
            let t = energy_terms(&b, l, &k, &p).unwrap();
            t.data_term + t.gradient_term
        };
        let l = estimate_latent(&b, &k, &p).unwrap();
        prop_assert!(objective(&l) <= objective(&b) + 1e-12);
    }
}

#[test]
fn ground_truth_start_keeps_a_monotone_trace() {
    let p = synthetic_params();
    let sharp = test_pattern(PatternKind::Edges, 128, 1).unwrap();
    let k = synthesize_linear_kernel(12.0, 10.0).unwrap();
    let s = support_for(&k.square(), None);
    let k0 = k.square().padded_to(s, s);
    let b = blur_with_kernel(&sharp, &k0, 0.0, 0).unwrap();
    let r = alternate(&b, &k0, &p).unwrap();
    assert_eq!(r.energy_trace.len(), p.outer_iters);
    for pair in r.energy_trace.windows(2) {
        assert!(pair[1].energy <= pair[0].energy + 1e-12);
    }
}

/// The energy minimized here is not stationary at the true kernel on
/// noiseless data: refinement from the true kernel moves to a slightly
/// shorter, smoother one with lower energy. Kept as a tracked gap rather
/// than a loosened bound.
#[test]
#[ignore = "the true kernel is not a fixed point of the alternation; see README"]
fn ground_truth_start_is_a_fixed_point() {
    let p = synthetic_params();
    let sharp = test_pattern(PatternKind::Edges, 256, 1).unwrap();
    let k = synthesize_linear_kernel(20.0, 10.0).unwrap();
    let s = support_for(&k.square(), None);
    let k0 = k.square().padded_to(s, s);
    let b = blur_with_kernel(&sharp, &k0, 0.0, 3).unwrap();
    let r = alternate(&b, &k0, &p).unwrap();
    let l1 = r.kernel.l1_distance(&k0);
    assert!(l1 < 1e-3, "l1 distance {l1}");
}

#[test]
fn non_blind_beats_blurry_input() {
    let p = synthetic_params();
    let sharp = test_pattern(PatternKind::Edges, 128, 2).unwrap();
    let k = synthesize_linear_kernel(15.0, 30.0).unwrap();
    let b = blur_with_kernel(&sharp, &k, 0.0, 0).unwrap();
    let before = evaluate(&b, &sharp, 16).unwrap().psnr;
    let after = evaluate(&estimate_latent(&b, &k.square(), &p).unwrap(), &sharp, 16)
        .unwrap()
        .psnr;
    assert!(after >= before + 3.0, "{before} -> {after}");
}

#[test]
fn blind_runs_are_deterministic() {
    let sharp = test_pattern(PatternKind::Edges, 96, 4).unwrap();
    let b = blur_with_kernel(
        &sharp,
        &synthesize_linear_kernel(9.0, 60.0).unwrap(),
        0.005,
        1,
    )
    .unwrap();
    let p = DeblurParams::default();
    let a = deblur_multiscale(&b, &p, None).unwrap();
    let c = deblur_multiscale(&b, &p, None).unwrap();
    assert_eq!(a, c);
}

#[test]
fn color_observation_keeps_its_channels() {
    let gray = test_pattern(PatternKind::Edges, 96, 5).unwrap();
    let planes = [gray.clone(), gray.map(|v| 0.8 * v), gray.map(|v| 1.0 - v)];
    let sharp = Image::from_channels(&planes).unwrap();
    let b = blur_with_kernel(&sharp, &synthesize_linear_kernel(8.0, 0.0).unwrap(), 0.0, 0).unwrap();
    let r = deblur_multiscale(&b, &DeblurParams::default(), None).unwrap();
    assert_eq!(r.latent.channels(), 3);
    assert_eq!(r.latent.dims(), b.dims());
    assert!(r.latent.is_finite());
}

#[test]
fn oversized_kernel_is_rejected() {
    let b = random(16, 16, 0);
    let k = Kernel::delta(21);
    assert!(deblur_multiscale(&b, &DeblurParams::default(), Some(&k)).is_err());
}
