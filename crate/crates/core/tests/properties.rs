use dyncop::backtest::{coverage, dm_test, tick_loss, HitSeries};
use dyncop::copula::CopulaParams;
use dyncop::diagnostics::{gof_statistics, supf_break_test};
use dyncop::marketdata::{realized_correlation, realized_variance};
use dyncop::riskcast::cdb_from_draws;
use dyncop::udist::Univariate;
use dyncop::{SkewT, StdStudentT};
use proptest::prelude::*;

fn copula_strategy() -> impl Strategy<Value = CopulaParams<f64>> {
    prop_oneof![
        (-0.95..0.95f64).prop_map(|rho| CopulaParams::Normal { rho }),
        (-0.9..0.9f64, 2.5..30.0f64).prop_map(|(rho, eta)| CopulaParams::StudentT { rho, eta }),
        (0.05..8.0f64).prop_map(|theta| CopulaParams::Clayton { theta }),
        (1.0..5.0f64).prop_map(|delta| CopulaParams::RotatedGumbel { delta }),
        (0.01..0.9f64, 0.01..0.9f64).prop_map(|(tau_u, tau_l)| CopulaParams::Sjc { tau_u, tau_l }),
    ]
}

fn unit() -> impl Strategy<Value = f64> {
    0.001..0.999f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn realized_variance_is_sum_of_squares(x in prop::collection::vec(-0.05..0.05f64, 1..80)) {
        let direct: f64 = x.iter().map(|r| r * r).sum();
        prop_assert_eq!(realized_variance(&x).unwrap(), direct);
    }

    #[test]
    fn realized_correlation_of_scaled_copy(
        x in prop::collection::vec(-0.05..0.05f64, 3..80),
        a in 0.1..10.0f64,
    ) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
        let up: Vec<f64> = x.iter().map(|v| a * v).collect();
        let down: Vec<f64> = x.iter().map(|v| -a * v).collect();
        prop_assert!((realized_correlation(&x, &up).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((realized_correlation(&x, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn skewt_quantile_inverts_cdf(nu in 2.2..60.0f64, lambda in -0.9..0.9f64, p in 0.001..0.999f64) {
        let d = SkewT::new(nu, lambda).unwrap();
        let z = d.quantile(p).unwrap();
        prop_assert!((d.cdf(z) - p).abs() < 1e-8);
    }

    #[test]
    fn skewt_without_skew_is_standardized_t(nu in 2.2..60.0f64, z in -6.0..6.0f64) {
        let a = SkewT::new(nu, 0.0).unwrap();
        let b = StdStudentT::new(nu).unwrap();
        prop_assert!((a.pdf(z) - b.pdf(z)).abs() < 1e-10);
    }

    #[test]
    fn copula_cdf_within_frechet_bounds(c in copula_strategy(), u in unit(), v in unit()) {
        let x = c.cdf(u, v);
        prop_assert!(x >= (u + v - 1.0).max(0.0) - 1e-9, "{c:?} C({u},{v}) = {x}");
        prop_assert!(x <= u.min(v) + 1e-9, "{c:?} C({u},{v}) = {x}");
    }

    #[test]
    fn rotated_gumbel_reflects_gumbel_tail(delta in 1.0..5.0f64, u in unit(), v in unit()) {
        // survival form: the rotated copula is the Gumbel copula of (1-u, 1-v)
        let rot = CopulaParams::RotatedGumbel { delta };
        let gumbel = |a: f64, b: f64| (-((-a.ln()).powf(delta) + (-b.ln()).powf(delta)).powf(1.0 / delta)).exp();
        let expect = u + v - 1.0 + gumbel(1.0 - u, 1.0 - v);
        prop_assert!((rot.cdf(u, v) - expect).abs() < 1e-10);
    }

    #[test]
    fn gof_statistics_ignore_day_order(
        v in prop::collection::vec((unit(), unit()), 5..60),
        shift in 1usize..59,
    ) {
        let mut w = v.clone();
        w.rotate_left(shift % v.len());
        w.reverse();
        let a = gof_statistics(&v);
        let b = gof_statistics(&w);
        prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }

    #[test]
    fn cdb_lies_in_unit_interval(
        pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 400..600),
        w in 0.05..0.95f64,
    ) {
        let (x1, x2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(p) = cdb_from_draws(&x1, &x2, [w, 1.0 - w], 0.05) {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p.cdb), "{p:?}");
        }
    }

    #[test]
    fn dm_is_antisymmetric(
        pairs in prop::collection::vec((0.0..2.0f64, 0.0..2.0f64), 30..120),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = dm_test(&a, &b).unwrap();
        let ba = dm_test(&b, &a).unwrap();
        prop_assert_eq!(ab.stat, -ba.stat);
        prop_assert_eq!(ab.p_value, ba.p_value);
        prop_assert_eq!(dm_test(&a, &a).unwrap().stat, 0.0);
    }

    #[test]
    fn tick_loss_is_non_negative_and_hits_recompute(
        pairs in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..100),
        alpha in 0.01..0.99f64,
    ) {
        let (y, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(tick_loss(&y, &q, alpha).unwrap().iter().all(|l| *l >= 0.0));
        let h = HitSeries::new(&y, &q, alpha).unwrap();
        let again = HitSeries::new(&y, &q, alpha).unwrap();
        prop_assert_eq!(&h.hits, &again.hits);
        let manual = y.iter().zip(&q).filter(|(a, b)| a < b).count() as f64 / y.len() as f64;
        prop_assert_eq!(coverage(&h).unwrap(), manual);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn supf_is_affine_invariant(
        x in prop::collection::vec(-1.0..1.0f64, 80..140),
        a in 0.2..20.0f64,
        b in -5.0..5.0f64,
    ) {
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let rx = supf_break_test(&x, 0.15, 40, 0.05, 3).unwrap();
        let ry = supf_break_test(&y, 0.15, 40, 0.05, 3).unwrap();
        prop_assert_eq!(rx.breaks.len(), ry.breaks.len());
        for (p, q) in rx.breaks.iter().zip(&ry.breaks) {
            prop_assert_eq!(p.index, q.index);
            prop_assert!((p.stat - q.stat).abs() <= 1e-6 * p.stat.abs().max(1.0));
        }
    }
}
