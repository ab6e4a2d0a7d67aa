//! Reward allocation, data selection, and the comparison measures reported
//! by experiments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Mask, UtilityOracle};
use crate::valuation::Valuation;

/// Floor for the denominator when normalizing utility declines.
const DECLINE_EPSILON: f64 = 1e-12;

/// How block values convert into rewards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardScheme {
    /// R_j = phi_j / sum(phi) * total. Shares a fixed budget.
    Proportional { total: f64 },
    /// R_j = n * phi_j - sum(phi). Zero-sum across blocks.
    Balanced,
}

/// Which blocks a consumer keeps, given their values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionStrategy {
    TopK { k: usize },
    AboveAverage,
    AboveMedian,
}

/// Per-block rewards under the scheme.
pub fn allocate_rewards(valuation: &Valuation, scheme: RewardScheme) -> Result<Vec<f64>> {
    let values = &valuation.block_values;
    let total_value: f64 = values.iter().sum();
    match scheme {
        RewardScheme::Proportional { total } => {
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::InvalidConfig(vec![format!(
                    "proportional reward budget must be positive and finite, got {total}"
                )]));
            }
            if total_value == 0.0 {
                return Err(Error::DegenerateAllocation);
            }
            Ok(values.iter().map(|v| v / total_value * total).collect())
        }
        RewardScheme::Balanced => {
            let n = values.len() as f64;
            Ok(values.iter().map(|v| n * v - total_value).collect())
        }
    }
}

/// Blocks chosen by the strategy, in ascending index order.
///
/// Top-k ranks by value descending with ties broken by ascending index;
/// above-average and above-median use strict inequality, so an all-equal
/// valuation selects nothing.
pub fn select_blocks(valuation: &Valuation, strategy: SelectionStrategy) -> Vec<usize> {
    let values = &valuation.block_values;
    let n = values.len();
    match strategy {
        SelectionStrategy::TopK { k } => {
            let k = k.min(n);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
            let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
            chosen.sort_unstable();
            chosen
        }
        SelectionStrategy::AboveAverage => {
            let mean = values.iter().sum::<f64>() / n as f64;
            (0..n).filter(|&j| values[j] > mean).collect()
        }
        SelectionStrategy::AboveMedian => {
            let median = median(values);
            (0..n).filter(|&j| values[j] > median).collect()
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// 200 (a - b) / (|a| + |b|), the percentage-change measure bounded in
/// [-200, 200]; defined as 0 when both inputs are 0.
pub fn symmetric_percentage_change(attacked: f64, truthful: f64) -> f64 {
    if attacked == 0.0 && truthful == 0.0 {
        return 0.0;
    }
    // Mathematically bounded by +-200; clamp away one-ulp rounding spills.
    (200.0 * (attacked - truthful) / (attacked.abs() + truthful.abs())).clamp(-200.0, 200.0)
}

/// Normalized mean absolute error between client-value vectors: mean over
/// clients of |phi_hat_i - phi_i| divided by mean over clients of |phi_i|.
/// Identical vectors give exactly 0; otherwise an all-zero truthful vector
/// leaves nothing to normalize by.
pub fn valuation_error(attacked: &Valuation, truthful: &Valuation) -> Result<f64> {
    if attacked.client_values.len() != truthful.client_values.len() {
        return Err(Error::InvalidTable(format!(
            "client counts differ: {} vs {}",
            attacked.client_values.len(),
            truthful.client_values.len()
        )));
    }
    let n = truthful.client_values.len() as f64;
    let mae: f64 = attacked
        .client_values
        .iter()
        .zip(&truthful.client_values)
        .map(|(a, t)| (a - t).abs())
        .sum::<f64>()
        / n;
    if mae == 0.0 {
        return Ok(0.0);
    }
    let scale: f64 = truthful.client_values.iter().map(|t| t.abs()).sum::<f64>() / n;
    if scale == 0.0 {
        return Err(Error::UndefinedNormalization);
    }
    Ok(mae / scale)
}

/// Signed decline, in percent, of true model utility when blocks are
/// selected by the attacked valuation instead of the honest one:
/// 100 (v(select(honest)) - v(select(attacked))) / max(|v(select(honest))|, eps).
/// The oracle must be honest; an empty selection is evaluated as the empty
/// coalition.
pub fn utility_decline(
    honest: &Valuation,
    attacked: &Valuation,
    strategy: SelectionStrategy,
    oracle: &dyn UtilityOracle,
) -> f64 {
    let mask_of = |selection: Vec<usize>| {
        selection
            .into_iter()
            .fold(Mask::EMPTY, |m, b| m.insert(b))
    };
    let honest_mask = mask_of(select_blocks(honest, strategy));
    let attacked_mask = mask_of(select_blocks(attacked, strategy));
    let v_honest = oracle.utility(honest_mask);
    let v_attacked = oracle.utility(attacked_mask);
    100.0 * (v_honest - v_attacked) / v_honest.abs().max(DECLINE_EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_utility_table, GameStructure, UtilityTable};
    use proptest::prelude::*;

    fn valuation(block_values: Vec<f64>) -> Valuation {
        Valuation {
            metric: "test".into(),
            client_values: block_values.clone(),
            block_values,
        }
    }

    #[test]
    fn proportional_rewards_follow_value_shares() {
        let v = valuation(vec![1.0, 1.0, 2.0]);
        let r = allocate_rewards(&v, RewardScheme::Proportional { total: 4.0 }).unwrap();
        assert_eq!(r, vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn balanced_rewards_sum_to_zero() {
        let v = valuation(vec![1.0, 1.0, 2.0]);
        let r = allocate_rewards(&v, RewardScheme::Balanced).unwrap();
        assert_eq!(r, vec![-1.0, -1.0, 2.0]);
        assert!(r.iter().sum::<f64>().abs() < 1e-9);

        let flat = valuation(vec![0.7, 0.7, 0.7]);
        let r = allocate_rewards(&flat, RewardScheme::Balanced).unwrap();
        assert!(r.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn degenerate_proportional_allocations_are_rejected() {
        let v = valuation(vec![1.0, -1.0]);
        let err = allocate_rewards(&v, RewardScheme::Proportional { total: 4.0 }).unwrap_err();
        assert!(matches!(err, Error::DegenerateAllocation));
        assert_eq!(err.exit_code(), 3);

        let v = valuation(vec![1.0, 1.0]);
        let err = allocate_rewards(&v, RewardScheme::Proportional { total: 0.0 }).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn balanced_reward_monotonicity() {
        let base = valuation(vec![0.4, -0.2, 0.9, 0.1]);
        let r0 = allocate_rewards(&base, RewardScheme::Balanced).unwrap();
        let mut bumped = base.clone();
        bumped.block_values[1] += 0.5;
        let r1 = allocate_rewards(&bumped, RewardScheme::Balanced).unwrap();
        assert!(r1[1] > r0[1], "own reward rises with own value");
        for j in [0, 2, 3] {
            assert!(r1[j] < r0[j], "other rewards fall");
        }
    }

    #[test]
    fn proportional_client_reward_monotonicity_on_positive_values() {
        // Client sums: raising one client's value raises its share and
        // lowers everyone else's.
        let base = vec![1.0, 2.0, 3.0];
        let total = 10.0;
        let r0 = allocate_rewards(&valuation(base.clone()), RewardScheme::Proportional { total })
            .unwrap();
        let mut bumped = base;
        bumped[0] += 1.0;
        let r1 =
            allocate_rewards(&valuation(bumped), RewardScheme::Proportional { total }).unwrap();
        assert!(r1[0] > r0[0]);
        assert!(r1[1] < r0[1]);
        assert!(r1[2] < r0[2]);
    }

    #[test]
    fn selection_examples() {
        assert_eq!(
            select_blocks(&valuation(vec![3.0, 1.0, 2.0]), SelectionStrategy::TopK { k: 2 }),
            vec![0, 2]
        );
        // Ties go to the lower index.
        assert_eq!(
            select_blocks(&valuation(vec![1.0, 1.0, 0.0]), SelectionStrategy::TopK { k: 1 }),
            vec![0]
        );
        assert_eq!(
            select_blocks(&valuation(vec![1.0, 1.0, 1.0]), SelectionStrategy::AboveAverage),
            Vec::<usize>::new()
        );
        assert_eq!(
            select_blocks(
                &valuation(vec![1.0, 2.0, 3.0, 4.0]),
                SelectionStrategy::AboveMedian
            ),
            vec![2, 3]
        );
        // Odd count: the median element itself is not selected.
        assert_eq!(
            select_blocks(&valuation(vec![5.0, 1.0, 3.0]), SelectionStrategy::AboveMedian),
            vec![0]
        );
        // k larger than the block count selects everything.
        assert_eq!(
            select_blocks(&valuation(vec![1.0, 2.0]), SelectionStrategy::TopK { k: 5 }),
            vec![0, 1]
        );
    }

    #[test]
    fn percentage_change_examples() {
        assert!((symmetric_percentage_change(2.0, 1.0) - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(symmetric_percentage_change(1.5, 1.5), 0.0);
        assert_eq!(symmetric_percentage_change(1.0, 0.0), 200.0);
        assert_eq!(symmetric_percentage_change(0.0, 1.0), -200.0);
        assert_eq!(symmetric_percentage_change(0.0, 0.0), 0.0);
    }

    #[test]
    fn valuation_error_examples() {
        let t = valuation(vec![1.0, 1.0, 1.0]);
        assert_eq!(valuation_error(&t, &t).unwrap(), 0.0);

        let a = valuation(vec![2.0, 2.0, 2.0]);
        assert!((valuation_error(&a, &t).unwrap() - 1.0).abs() < 1e-12);

        let z = valuation(vec![0.0, 0.0, 0.0]);
        assert_eq!(valuation_error(&z, &z).unwrap(), 0.0);
        assert!(matches!(
            valuation_error(&a, &z).unwrap_err(),
            Error::UndefinedNormalization
        ));
    }

    #[test]
    fn utility_decline_behaviour() {
        let s = GameStructure::new(vec![1, 1, 1]).unwrap();
        // Complementarity between blocks 0 and 1; block 2 is noise.
        let t = build_utility_table(
            &|m: Mask| {
                let mut v = 0.0;
                if m.contains(0) && m.contains(1) {
                    v += 1.0;
                }
                if m.contains(2) {
                    v += 0.1;
                }
                v
            },
            &s,
        )
        .unwrap();

        let honest = valuation(vec![0.5, 0.5, 0.1]);
        assert_eq!(
            utility_decline(&honest, &honest, SelectionStrategy::TopK { k: 2 }, &t),
            0.0
        );

        // Different values, same ranking: still zero.
        let rescaled = valuation(vec![5.0, 5.0, 1.0]);
        assert_eq!(
            utility_decline(&honest, &rescaled, SelectionStrategy::TopK { k: 2 }, &t),
            0.0
        );

        // Attack promotes the noise block over a synergistic one.
        let attacked = valuation(vec![0.5, 0.05, 0.6]);
        let d = utility_decline(&honest, &attacked, SelectionStrategy::TopK { k: 2 }, &t);
        // Honest picks {0,1} (v=1), attacked picks {0,2} (v=0.1).
        assert!((d - 90.0).abs() < 1e-9);

        // All-equal valuation selects nothing above average; empty set has
        // utility zero.
        let flat = valuation(vec![0.3, 0.3, 0.3]);
        let d = utility_decline(&honest, &flat, SelectionStrategy::AboveAverage, &t);
        let v_honest = t.get(Mask(0b011));
        assert!((d - 100.0 * (v_honest - 0.0) / v_honest).abs() < 1e-9);
    }

    #[test]
    fn decline_is_zero_for_tsv_under_exact_attack() {
        use crate::attack::{empirical_values, execute_attack, plan_attack, DeltaOracle};
        use crate::valuation::{extract_coefficients, Metric};
        let s = GameStructure::new(vec![2, 1]).unwrap();
        let mut values = vec![0.25; 8];
        values[0] = 0.0;
        values[7] = 1.0;
        values[3] = 0.6;
        let base = UtilityTable::new(3, values).unwrap();
        let coeffs = extract_coefficients(Metric::TruthShapley, &s).unwrap();
        let plan = plan_attack(&coeffs, 0, &s).unwrap();
        let aug = execute_attack(&plan, &DeltaOracle::new(&base, 0.2)).unwrap();
        let attacked = empirical_values(Metric::TruthShapley, &coeffs, &aug).unwrap();
        let truthful = Metric::TruthShapley.evaluate(&base, &s).unwrap();
        for strategy in [
            SelectionStrategy::TopK { k: 2 },
            SelectionStrategy::AboveAverage,
            SelectionStrategy::AboveMedian,
        ] {
            assert_eq!(utility_decline(&truthful, &attacked, strategy, &base), 0.0);
        }
        assert_eq!(valuation_error(&attacked, &truthful).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn percentage_change_stays_bounded(a in -1e12f64..1e12, b in -1e12f64..1e12) {
            let c = symmetric_percentage_change(a, b);
            prop_assert!((-200.0..=200.0).contains(&c), "{c}");
        }

        #[test]
        fn balanced_rewards_always_sum_to_zero(
            values in proptest::collection::vec(-100i32..100, 1..12)
        ) {
            let v = valuation(values.iter().map(|&x| x as f64 / 4.0).collect());
            let r = allocate_rewards(&v, RewardScheme::Balanced).unwrap();
            let total: f64 = r.iter().sum();
            prop_assert!(total.abs() < 1e-9, "{total}");
        }

        #[test]
        fn selection_is_scale_invariant(
            values in proptest::collection::vec(-64i32..64, 2..10),
            scale_pow in -3i32..10,
            k in 1usize..10,
        ) {
            // Grid values and power-of-two scales make the scaling exact in
            // floating point, isolating the order-invariance claim.
            let v = valuation(values.iter().map(|&x| x as f64 / 8.0).collect());
            let c = 2f64.powi(scale_pow);
            let scaled = valuation(v.block_values.iter().map(|x| x * c).collect());
            for strategy in [
                SelectionStrategy::TopK { k },
                SelectionStrategy::AboveAverage,
                SelectionStrategy::AboveMedian,
            ] {
                prop_assert_eq!(
                    select_blocks(&v, strategy),
                    select_blocks(&scaled, strategy)
                );
            }
        }
    }
}
