use landmatch::theory::{
    kl_divergence, l_id_exact, optimal_discriminator, random_model, tv_distance, tv_distance_over_b,
    DiscreteJointModel,
};
use proptest::prelude::*;

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Two distributions on a common support of 2..=10 outcomes.
fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=10).prop_flat_map(|n| {
        (
            prop::collection::vec(1e-3f64..1.0, n).prop_map(normalized),
            prop::collection::vec(1e-3f64..1.0, n).prop_map(normalized),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn kl_is_nonnegative((p, q) in pair()) {
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn tv_formulas_agree((p, q) in pair()) {
        let half_l1 = tv_distance(&p, &q).unwrap();
        let over_b = tv_distance_over_b(&p, &q).unwrap();
        prop_assert!((half_l1 - over_b).abs() <= 1e-12, "{half_l1} vs {over_b}");
        prop_assert!((0.0..=1.0 + 1e-12).contains(&half_l1));
    }

    #[test]
    fn optimal_table_beats_any_table(
        (p, q) in pair(),
        prior in 0.05f64..0.95,
        raw in prop::collection::vec(1e-3f64..(1.0 - 1e-3), 10),
    ) {
        let model = DiscreteJointModel::new(p, q, prior).unwrap();
        let best = optimal_discriminator(&model);
        prop_assert!(best.excluded.is_empty());
        let d = &raw[..model.len()];
        let l_best = l_id_exact(&model, &best.table).unwrap();
        let l_other = l_id_exact(&model, d).unwrap();
        prop_assert!(l_best >= l_other - 1e-12, "{l_best} < {l_other}");
    }
}

/// Every sign pattern of a 1e-3 shift, including single-coordinate ones,
/// lowers L_ID at the optimal table of a 5-outcome model.
#[test]
fn optimal_table_is_a_local_maximum() {
    const EPS: f64 = 1e-3;
    for index in 0..100 {
        let model = random_model(17, index, (5, 5)).unwrap();
        let best = optimal_discriminator(&model).table;
        let l_best = l_id_exact(&model, &best).unwrap();
        // each coordinate shifted by -EPS, 0 or +EPS
        for code in 1..3usize.pow(5) {
            let mut d = best.clone();
            let mut c = code;
            for v in d.iter_mut() {
                *v += [0.0, EPS, -EPS][c % 3];
                c /= 3;
            }
            if d.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                continue;
            }
            let l = l_id_exact(&model, &d).unwrap();
            assert!(l < l_best, "model {index}, pattern {code}: {l} >= {l_best}");
        }
    }
}
