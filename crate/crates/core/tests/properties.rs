use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use t2max::globaltest::{hc_star, phi_dagger_stats, phi_star_stats, BlockStats, TableMap};
use t2max::hotelling::{two_sample_t2, univariate_t, BlockPair, SampleBlock};
use t2max::linalg::{cholesky, quad_form_inv, sym_sqrt, SymMatrix};
use t2max::nullcal::{build_null_table, g_threshold, NullTable};
use t2max::randdist::{chisq_isf, chisq_sf};

fn table() -> &'static Arc<NullTable> {
    static T: OnceLock<Arc<NullTable>> = OnceLock::new();
    T.get_or_init(|| Arc::new(build_null_table(6, 9, 2, 200_000, 3).unwrap()))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// `(n1, n2, d, x, y)` with well-spread data.
fn sample_pair(max_d: usize) -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1..=max_d).prop_flat_map(|d| {
        (d + 2..d + 12, d + 2..d + 12).prop_flat_map(move |(n1, n2)| {
            (
                Just(n1),
                Just(n2),
                Just(d),
                prop::collection::vec(-3.0..3.0f64, n1 * d),
                prop::collection::vec(-3.0..3.0f64, n2 * d),
            )
        })
    })
}

fn pair(n1: usize, n2: usize, d: usize, x: Vec<f64>, y: Vec<f64>) -> BlockPair {
    BlockPair::new(SampleBlock::new(n1, d, x).unwrap(), SampleBlock::new(n2, d, y).unwrap()).unwrap()
}

/// Positive definite `B·Bᵀ + εI`.
fn spd(max_d: usize) -> impl Strategy<Value = SymMatrix> {
    (1..=max_d).prop_flat_map(|d| {
        prop::collection::vec(-2.0..2.0f64, d * d).prop_map(move |b| {
            SymMatrix::from_fn(d, |i, j| {
                let dot: f64 = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum();
                dot + if i == j { 0.5 } else { 0.0 }
            })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn t2_is_affine_invariant(
        (n1, n2, d, x, y) in sample_pair(4),
        a in prop::collection::vec(-0.3..0.3f64, 16),
        shift in prop::collection::vec(-5.0..5.0f64, 4),
    ) {
        // A = I + small perturbation is comfortably invertible
        let amat = |i: usize, j: usize| a[i * 4 + j] + if i == j { 1.0 } else { 0.0 };
        let p = pair(n1, n2, d, x, y);
        let map = |row: &[f64]| (0..d).map(|i| (0..d).map(|j| amat(i, j) * row[j]).sum::<f64>() + shift[i]).collect();
        let q = BlockPair::new(p.x().map_rows(map).unwrap(), p.y().map_rows(map).unwrap()).unwrap();
        let (t, u) = (two_sample_t2(&p).unwrap(), two_sample_t2(&q).unwrap());
        prop_assert!(rel_close(t, u, 1e-8), "{t} vs {u}");
    }

    #[test]
    fn t2_is_symmetric_in_groups((n1, n2, d, x, y) in sample_pair(5)) {
        let p = pair(n1, n2, d, x, y);
        let (t, u) = (two_sample_t2(&p).unwrap(), two_sample_t2(&p.swapped()).unwrap());
        prop_assert!(rel_close(t, u, 1e-12));
        prop_assert!(t >= 0.0);
    }

    #[test]
    fn univariate_t2_is_squared_t((n1, n2, _, x, y) in sample_pair(1)) {
        let p = pair(n1, n2, 1, x, y);
        let t = univariate_t(&p).unwrap();
        prop_assert!(rel_close(two_sample_t2(&p).unwrap(), t * t, 1e-12));
    }

    #[test]
    fn cholesky_round_trip(s in spd(8)) {
        let l = cholesky(&s).unwrap();
        let back = l.gram();
        for (a, b) in s.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-10 * s.frobenius_norm());
        }
    }

    #[test]
    fn sqrt_squares_back(s in spd(8)) {
        let r = sym_sqrt(&s).unwrap();
        let back = r.square();
        for (a, b) in s.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * s.frobenius_norm());
        }
    }

    #[test]
    fn quad_form_is_even_and_quadratic(s in spd(6), v in prop::collection::vec(-4.0..4.0f64, 6), c in 0.1..10.0f64) {
        let v = &v[..s.dim()];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
        let q = quad_form_inv(&s, v).unwrap();
        prop_assert!(rel_close(q, quad_form_inv(&s, &neg).unwrap(), 1e-12));
        prop_assert!(rel_close(c * c * q, quad_form_inv(&s, &scaled).unwrap(), 1e-10));
    }

    #[test]
    fn hc_star_ignores_order(mut p in prop::collection::vec(1e-9..1.0f64, 1..60), seed in any::<u64>()) {
        let h = hc_star(&p);
        // deterministic shuffle
        let n = p.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            p.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(h.to_bits(), hc_star(&p).to_bits());
    }

    #[test]
    fn star_is_monotone_in_block_t2(
        t2 in prop::collection::vec(0.0..30.0f64, 3..20),
        k in any::<prop::sample::Index>(),
        bump in 0.0..30.0f64,
    ) {
        let m = t2.len();
        let stats = BlockStats { n1: 6, n2: 9, dims: vec![2; m], t2: t2.clone(), t: vec![] };
        let before = phi_star_stats(&stats, table(), 0.05).unwrap().reject;
        let mut raised = stats.clone();
        raised.t2[k.index(m)] += bump;
        let after = phi_star_stats(&raised, table(), 0.05).unwrap().reject;
        prop_assert!(!before || after);
    }

    #[test]
    fn dagger_matches_star_under_uniform_d(t2 in prop::collection::vec(0.0..30.0f64, 1..20), alpha in 0.01..0.2f64) {
        let m = t2.len();
        let stats = BlockStats { n1: 6, n2: 9, dims: vec![2; m], t2, t: vec![] };
        let tables: TableMap = [(2, Arc::clone(table()))].into_iter().collect();
        let star = phi_star_stats(&stats, table(), alpha).unwrap();
        let dagger = phi_dagger_stats(&stats, &tables, alpha).unwrap();
        prop_assert_eq!(star.reject, dagger.reject);
        prop_assert!((dagger.threshold - g_threshold(m, alpha)).abs() < 1e-15);
    }

    #[test]
    fn null_sf_is_a_nonincreasing_step(a in -1.0..40.0f64, b in -1.0..40.0f64) {
        let t = table();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(t.null_sf(lo) >= t.null_sf(hi));
        prop_assert!((0.0..=1.0).contains(&t.null_sf(a)));
    }

    #[test]
    fn y_alpha_calibrates_the_max(m in 1usize..20, alpha in 0.05..0.5f64) {
        let t = table();
        let y = t.y_alpha(m, alpha).unwrap();
        let sf = t.null_sf(y);
        prop_assert!((-(m as f64) * sf).exp() <= 1.0 - alpha + 1e-12);
        // one order statistic past y the tail drops below target
        let next = t.draws().partition_point(|&v| v <= y);
        if next < t.draws().len() {
            let above = t.null_sf(t.draws()[next]);
            prop_assert!(above < -(-alpha).ln_1p() / m as f64);
        }
    }

    #[test]
    fn y_alpha_is_monotone(m in 1usize..15, alpha in 0.05..0.4f64) {
        let t = table();
        prop_assert!(t.y_alpha(m + 1, alpha).unwrap() >= t.y_alpha(m, alpha).unwrap());
        prop_assert!(t.y_alpha(m, alpha + 0.05).unwrap() <= t.y_alpha(m, alpha).unwrap());
    }

    #[test]
    fn chisq_isf_inverts_sf(d in 1usize..12, lp in -12.0..-0.01f64) {
        let p = lp.exp();
        let x = chisq_isf(d, p).unwrap();
        prop_assert!(rel_close(chisq_sf(d, x).unwrap(), p, 1e-9));
    }
}
