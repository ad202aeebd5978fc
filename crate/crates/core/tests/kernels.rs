use ntk_spectra::ntk_kernels::*;
use ntk_spectra::rng::substream;
use ntk_spectra::spectral_estimator::{sample, DistributionKind, SampleDistribution};
use proptest::prelude::*;
use rand::Rng;

fn cube(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    sample(&SampleDistribution::new(DistributionKind::UniformCube { lo: -1.0, hi: 1.0 }, d, seed), n).unwrap()
}

fn descending_eigenvalues<K: Kernel>(k: &K, points: &[Vec<f64>]) -> Vec<f64> {
    gram(k, points).unwrap().eigenvalues()
}

#[test]
fn gram_matrices_are_positive_definite() {
    for d in 1..=3 {
        for seed in 0..20 {
            for layers in [1, 2, 3] {
                let points = cube(d, 50, 1000 * d as u64 + seed);
                let mut g = gram(&NtkDescriptor::full(layers).unwrap(), &points).unwrap();
                let lmin = g.check_positive_definite().unwrap();
                assert!(lmin > 0.0, "d={d} seed={seed} L={layers}: {lmin}");
            }
        }
    }
}

#[test]
fn full_kernel_factors_through_the_lift() {
    let desc = NtkDescriptor::full(3).unwrap();
    let homog = desc.as_homogeneous();
    let points = cube(4, 30, 7);
    for a in &points {
        for b in &points {
            let (la, lb) = (LiftedPoint::new(a), LiftedPoint::new(b));
            let via_lift = la.norm_tilde * lb.norm_tilde * homog.eval(&la.y, &lb.y) + 1.0;
            let direct = ntk_eval(&desc, a, b).unwrap();
            assert!((direct - via_lift).abs() < 1e-12 * direct.abs());
            let profile = ntk_profile(&homog, la.cosine(&lb)).unwrap();
            assert!((desc.eval(a, b) - 1.0 - la.norm_tilde * lb.norm_tilde * profile).abs() < 1e-12 * direct);
        }
    }
}

#[test]
fn pullback_with_norm_scaling_reproduces_the_full_kernel() {
    let desc = NtkDescriptor::full(2).unwrap();
    let homog = desc.as_homogeneous();
    let k = scaled_kernel(pullback_kernel(homog, sphere_lift), |x: &[f64]| LiftedPoint::new(x).norm_tilde);
    let sum = SumKernel(k, ConstantKernel(1.0));
    let points = cube(3, 25, 3);
    let a = gram(&sum, &points).unwrap();
    let b = gram(&desc, &points).unwrap();
    assert!((a.entries() - b.entries()).abs().max() < 1e-12);
}

#[test]
fn unit_scaling_leaves_gram_unchanged() {
    let desc = NtkDescriptor::full(2).unwrap();
    let points = cube(2, 20, 5);
    let scaled = gram(&scaled_kernel(desc, |_: &[f64]| 1.0), &points).unwrap();
    assert_eq!(scaled.entries(), gram(&desc, &points).unwrap().entries());
}

#[test]
fn weyl_inequality_for_kernel_sums() {
    let k1 = NtkDescriptor::full(2).unwrap();
    let k2 = NtkDescriptor::full(4).unwrap();
    for seed in 0..5 {
        let points = cube(2, 15, seed);
        let (a, b) = (descending_eigenvalues(&k1, &points), descending_eigenvalues(&k2, &points));
        let s = descending_eigenvalues(&SumKernel(k1, k2), &points);
        for i in 0..15 {
            for j in 0..15 - i {
                assert!(s[i + j] <= a[i] + b[j] + 1e-10 * s[0]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scaled_spectrum_is_sandwiched(seed in any::<u64>(), c in 0.2f64..1.0, spread in 1.0f64..4.0) {
        let upper = c * spread;
        let points = cube(2, 30, seed);
        let mut rng = substream(seed, "rho", 0);
        let rho_values: Vec<f64> = (0..30).map(|_| rng.gen_range(c.sqrt()..=upper.sqrt())).collect();
        let index = |x: &[f64]| points.iter().position(|p| p.as_slice() == x).unwrap();
        let k = NtkDescriptor::full(2).unwrap();
        let base = descending_eigenvalues(&k, &points);
        let scaled = descending_eigenvalues(&scaled_kernel(k, |x: &[f64]| rho_values[index(x)]), &points);
        for (s, b) in scaled.iter().zip(&base) {
            prop_assert!(*s >= c * b - 1e-10 * base[0]);
            prop_assert!(*s <= upper * b + 1e-10 * base[0]);
        }
    }

    #[test]
    fn kernel_is_symmetric_and_diagonal_dominates(x in prop::collection::vec(-3.0f64..3.0, 3), y in prop::collection::vec(-3.0f64..3.0, 3), layers in 1usize..5) {
        let desc = NtkDescriptor::full(layers).unwrap();
        let kxy = ntk_eval(&desc, &x, &y).unwrap();
        prop_assert!((kxy - ntk_eval(&desc, &y, &x).unwrap()).abs() <= 1e-12 * kxy.abs());
        let (kxx, kyy) = (ntk_eval(&desc, &x, &x).unwrap(), ntk_eval(&desc, &y, &y).unwrap());
        prop_assert!(kxy * kxy <= kxx * kyy * (1.0 + 1e-12));
    }

    #[test]
    fn profile_at_one_is_layer_count_plus_one(layers in 1usize..8) {
        let desc = NtkDescriptor::homogeneous(layers).unwrap();
        prop_assert!((ntk_profile(&desc, 1.0).unwrap() - (layers + 1) as f64).abs() < 1e-12);
    }
}
