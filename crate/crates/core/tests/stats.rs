use cmrfusion_core::stats::*;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

/// `P(F > f)` by Simpson integration of the F density, with `t = u²` to
/// tame the `d1 = 1` singularity at the origin.
fn survival_by_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    use statrs::function::gamma::ln_gamma as lg;
    let ln_norm = lg((d1 + d2) / 2.0) - lg(d1 / 2.0) - lg(d2 / 2.0) + (d1 / 2.0) * (d1 / d2).ln();
    let pdf = |t: f64| {
        if t <= 0.0 {
            return 0.0;
        }
        (ln_norm + (d1 / 2.0 - 1.0) * t.ln() - ((d1 + d2) / 2.0) * (1.0 + d1 * t / d2).ln()).exp()
    };
    let g = |u: f64| if u == 0.0 { if d1 == 1.0 { 2.0 * ln_norm.exp() } else { 0.0 } } else { pdf(u * u) * 2.0 * u };
    let n = 20_000;
    let b = f.sqrt();
    let h = b / n as f64;
    let mut acc = g(0.0) + g(b);
    for i in 1..n {
        acc += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - acc * h / 3.0
}

fn grid() -> Vec<(f64, f64, f64)> {
    let mut out = Vec::new();
    for &(d1, d2) in &[(1.0, 4.0), (1.0, 46.0), (2.0, 10.0), (3.0, 20.0), (5.0, 30.0)] {
        for &f in &[0.3, 1.5, 4.0, 12.0] {
            out.push((f, d1, d2));
        }
    }
    out
}

#[test]
fn textbook_anova() {
    let r = one_way_anova(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
    assert_eq!(r.f, 1.5);
    assert_eq!((r.df_between, r.df_within), (1, 4));
    assert_eq!(r.group_means, vec![2.0, 3.0]);
}

#[test]
fn survival_matches_reference_cdf() {
    let cases = grid();
    assert_eq!(cases.len(), 20);
    for (f, d1, d2) in cases {
        let ours = f_survival(f, d1, d2);
        let reference = 1.0 - FisherSnedecor::new(d1, d2).unwrap().cdf(f);
        assert!((ours - reference).abs() < 1e-9, "F({d1}, {d2}) at {f}: {ours} vs {reference}");
        let quad = survival_by_quadrature(f, d1, d2);
        assert!((ours - quad).abs() < 1e-6, "F({d1}, {d2}) at {f}: {ours} vs quadrature {quad}");
    }
}

#[test]
fn special_functions_match_statrs() {
    for x in [0.1, 0.5, 1.0, 2.5, 7.0, 30.5, 171.0] {
        assert!((ln_gamma(x) - statrs::function::gamma::ln_gamma(x)).abs() < 1e-10 * (1.0 + ln_gamma(x).abs()), "{x}");
    }
    for (a, b) in [(0.5, 0.5), (1.0, 3.0), (2.5, 7.0), (23.0, 0.5)] {
        for x in [0.0, 0.01, 0.3, 0.5, 0.9, 1.0] {
            let r = statrs::function::beta::beta_reg(a, b, x);
            assert!((inc_beta(a, b, x) - r).abs() < 1e-10, "I_{x}({a}, {b})");
        }
    }
}

#[test]
fn published_agreement_table() {
    let t = ConfusionTable {
        counts: [[761, 26, 12, 2, 4], [39, 6, 5, 1, 3], [27, 5, 25, 1, 7], [5, 3, 14, 1, 19], [7, 3, 20, 2, 46]],
    };
    assert_eq!(t.total(), 1044);
    assert_eq!(agreement(&t, 0).unwrap(), Agreement { numerator: 839, denominator: 1044 });
    assert_eq!(agreement(&t, 1).unwrap(), Agreement { numerator: 950, denominator: 1044 });
    assert_eq!(agreement(&t, 4).unwrap().numerator, 1044);
}

proptest! {
    #[test]
    fn anova_p_is_a_probability(groups in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..12), 2..5)) {
        let r = one_way_anova(&groups).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p));
        prop_assert!(r.f >= 0.0);
        // Shifting every value leaves F unchanged.
        let shifted: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v + 1000.0).collect()).collect();
        let s = one_way_anova(&shifted).unwrap();
        if r.f.is_finite() && r.f > 1e-6 {
            prop_assert!((s.f - r.f).abs() < 1e-6 * r.f.max(1.0));
        }
    }

    #[test]
    fn agreement_grows_with_tolerance(counts in prop::array::uniform5(prop::array::uniform5(0u64..50))) {
        let t = ConfusionTable { counts };
        prop_assume!(t.total() > 0);
        let mut last = 0;
        for tol in 0..5 {
            let a = agreement(&t, tol).unwrap();
            prop_assert!(a.numerator >= last);
            last = a.numerator;
        }
        prop_assert_eq!(last, t.total());
    }
}

#[test]
fn tier_comparisons_need_two_groups() {
    let values = [(1.0, Contraction::N), (1.2, Contraction::N), (0.5, Contraction::H), (0.6, Contraction::H), (0.4, Contraction::H)];
    let c = group_by_contraction(&values);
    assert_eq!(c.len(), 2);
    assert!(c[0].anova.is_none() && c[0].note.is_some());
    let hn = c[1].anova.as_ref().unwrap();
    assert!(hn.f > 0.0 && hn.p < 0.05);
}
