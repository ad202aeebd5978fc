use num_rational::Rational64;
use ntk_spectra::seq_calculus::*;
use proptest::prelude::*;

fn ints(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(-50i64..50, len)
}

fn as_f64(v: &[i64]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn as_ratio(v: &[i64]) -> Vec<Rational64> {
    v.iter().map(|&x| Rational64::from_integer(x)).collect()
}

/// A `p`-monotone prefix: `p`-fold tail sums of a nonnegative sequence, plus padding.
fn monotone_prefix(p: usize) -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(0i64..6, 8..16).prop_map(move |base| {
        let a = Seq::finite(base).unwrap();
        tail_sum(&a, p).unwrap().into_values()
    })
}

proptest! {
    #[test]
    fn tail_sum_inverts_differences(a in ints(1..14), p in 0usize..=6) {
        let seq = Seq::finite(as_f64(&a)).unwrap();
        let back = tail_sum(&forward_difference(&seq, p + 1).unwrap(), p + 1).unwrap();
        prop_assert_eq!(back.values(), seq.values());
        let other = forward_difference(&tail_sum(&seq, p + 1).unwrap(), p + 1).unwrap();
        prop_assert_eq!(other.values(), seq.values());
    }

    #[test]
    fn operators_are_linear(a in ints(6..7), b in ints(6..7), num in -9i64..9, den in 1i64..9, p in 0usize..4) {
        let c = Rational64::new(num, den);
        let (ra, rb) = (as_ratio(&a), as_ratio(&b));
        let combo: Vec<Rational64> = ra.iter().zip(&rb).map(|(x, y)| c * x + y).collect();
        let lhs = forward_difference(&Seq::finite(combo.clone()).unwrap(), p).unwrap();
        let da = forward_difference(&Seq::finite(ra.clone()).unwrap(), p).unwrap();
        let db = forward_difference(&Seq::finite(rb.clone()).unwrap(), p).unwrap();
        let rhs: Vec<Rational64> = da.values().iter().zip(db.values()).map(|(x, y)| c * x + y).collect();
        prop_assert_eq!(lhs.values(), &rhs[..]);

        let lhs = tail_sum(&Seq::finite(combo).unwrap(), p).unwrap();
        let sa = tail_sum(&Seq::finite(ra).unwrap(), p).unwrap();
        let sb = tail_sum(&Seq::finite(rb).unwrap(), p).unwrap();
        let rhs: Vec<Rational64> = sa.values().iter().zip(sb.values()).map(|(x, y)| c * x + y).collect();
        prop_assert_eq!(lhs.values(), &rhs[..]);
    }

    #[test]
    fn summation_by_parts_is_exact(a in ints(12..13), b in ints(1..12), p in 0usize..=4) {
        let seq_a = Seq::finite(as_ratio(&a)).unwrap();
        let seq_b = Seq::finite(as_ratio(&b)).unwrap();
        let direct: Rational64 = seq_a.values().iter().zip(seq_b.values()).map(|(x, y)| x * y).sum();
        prop_assert_eq!(summation_by_parts(&seq_a, &seq_b, p).unwrap(), direct);
    }

    #[test]
    fn left_extrapolation_invariants(p in 1usize..=3, mu in (1usize..=3).prop_flat_map(monotone_prefix), pivot in 0usize..6) {
        let seq = Seq::prefix(as_ratio(&mu)).unwrap();
        prop_assume!(pivot + p < seq.len());
        prop_assume!(forward_difference(&seq, p).unwrap().values().iter().all(|v| *v >= Rational64::from_integer(0)));
        let r = left_extrapolate(&seq, p, pivot).unwrap();
        let zero = Rational64::from_integer(0);
        for (k, (t, m)) in r.tilde_mu.values().iter().zip(seq.values()).enumerate() {
            if k >= pivot {
                prop_assert_eq!(t, m);
                prop_assert_eq!(r.residual.values()[k], zero);
            } else {
                prop_assert!(t <= m);
            }
        }
        prop_assert!(forward_difference(&r.tilde_mu, p).unwrap().values().iter().all(|v| *v >= zero));
        prop_assert!(forward_difference(&r.residual, p).unwrap().values().iter().all(|v| *v >= zero));
        prop_assert_eq!(r.leading, extrapolation_leading(&seq, p, pivot).unwrap());
    }
}

#[test]
fn hockey_stick_normalization() {
    for p in 0..=8 {
        for n in 0..=40 {
            let sum: u128 = (0..=n).map(|k| binomial_weight_exact(n - k, p).unwrap()).sum();
            assert_eq!(sum, binomial_weight_exact(n, p + 1).unwrap(), "n = {n}, p = {p}");
        }
    }
}

#[test]
fn constant_sequence_cesaro_means_follow_hockey_stick() {
    // s_n^p of the all-ones sequence is A_n^{p+1} / A_n^p = (n+p+1)/(p+1).
    let ones = Seq::prefix(vec![Rational64::from_integer(1); 30]).unwrap();
    for p in 0..=6 {
        for n in 0..30 {
            let expected = Rational64::new((n + p + 1) as i64, (p + 1) as i64);
            assert_eq!(cesaro_mean(&ones, p, n).unwrap(), expected);
        }
    }
}

#[test]
fn extrapolated_leading_term_matches_brute_force() {
    // mu_k = (k+1)^-4, p = 3, N = 5; below the pivot the extension is the
    // quadratic through mu_5, mu_6, mu_7.
    let mu: Vec<f64> = (0..20).map(|k| ((k + 1) as f64).powi(-4)).collect();
    let r = left_extrapolate(&Seq::prefix(mu.clone()).unwrap(), 3, 5).unwrap();
    let (a, b, c) = (mu[5], mu[6], mu[7]);
    let quad = |k: f64| {
        let s = k - 5.0;
        a + s * (b - a) + s * (s - 1.0) / 2.0 * (c - 2.0 * b + a)
    };
    assert!((r.leading - quad(0.0)).abs() < 1e-15);
    for k in 0..5 {
        assert!((r.tilde_mu.values()[k] - quad(k as f64)).abs() < 1e-15);
    }
}

#[test]
fn power_law_differences_obey_pochhammer_bound() {
    let beta = 3.5;
    let a: Vec<f64> = (0..60).map(|k| ((k + 1) as f64).powf(-beta)).collect();
    for p in 1..=4 {
        let poch: f64 = (0..p).map(|i| beta + i as f64).product();
        let dp = forward_difference(&Seq::prefix(a.clone()).unwrap(), p).unwrap();
        for (k, v) in dp.values().iter().enumerate() {
            assert!(*v > 0.0);
            assert!(*v <= poch * ((k + 1) as f64).powf(-(beta + p as f64)) * (1.0 + 1e-12));
        }
    }
}
