//! Planning and execution of the data-overvaluation attack.
//!
//! A strategic client i inspects the linear coefficients beta_i(S) and
//! beta_{-i}(S) of the target metric and manipulates its reported data for
//! each retraining subset S so the measured utility moves in its favor:
//! raise v(S) where the attacker's coefficient is positive and everyone
//! else's is not, lower it in the mirrored case, act honestly otherwise.
//! The grand coalition's model is never retrained, so v(D_N) stays honest.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::game::{GameStructure, Mask, UtilityTable};
use crate::valuation::{CoefficientTable, Metric, Valuation};

/// What the attacker does with its local data when one retraining subset is
/// scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackAction {
    Honest,
    PositiveAugment,
    NegativeAugment,
}

impl AttackAction {
    pub fn name(&self) -> &'static str {
        match self {
            AttackAction::Honest => "honest",
            AttackAction::PositiveAugment => "positive_augment",
            AttackAction::NegativeAugment => "negative_augment",
        }
    }
}

/// One action per proper subset of the grand coalition. The full mask is
/// deliberately absent: the deployed model is trained once on everyone's
/// honest data and never retrained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackPlan {
    attacker: usize,
    num_blocks: usize,
    /// Indexed by mask; length 2^num_blocks - 1.
    actions: Vec<AttackAction>,
}

impl AttackPlan {
    pub fn attacker(&self) -> usize {
        self.attacker
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    /// Action for a proper subset. The grand coalition has no action.
    pub fn action(&self, mask: Mask) -> AttackAction {
        assert!(
            mask.index() < self.actions.len(),
            "the grand coalition is never retrained"
        );
        self.actions[mask.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mask, AttackAction)> + '_ {
        self.actions
            .iter()
            .enumerate()
            .map(|(m, &a)| (Mask(m as u64), a))
    }

    pub fn is_all_honest(&self) -> bool {
        self.actions.iter().all(|&a| a == AttackAction::Honest)
    }

    pub fn num_non_honest(&self) -> usize {
        self.actions
            .iter()
            .filter(|&&a| a != AttackAction::Honest)
            .count()
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

#[derive(Serialize, Deserialize)]
struct PlanEntry {
    mask: u64,
    action: AttackAction,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    attacker: usize,
    actions: Vec<PlanEntry>,
}

impl Serialize for AttackPlan {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let file = PlanFile {
            attacker: self.attacker,
            actions: self
                .iter()
                .map(|(m, a)| PlanEntry { mask: m.0, action: a })
                .collect(),
        };
        file.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AttackPlan {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = PlanFile::deserialize(deserializer)?;
        let len = file.actions.len() + 1;
        if !len.is_power_of_two() || len < 2 {
            return Err(D::Error::custom(format!(
                "{} actions do not cover the proper subsets of a power-of-two game",
                file.actions.len()
            )));
        }
        let num_blocks = len.trailing_zeros() as usize;
        let mut actions = vec![None; len - 1];
        for e in &file.actions {
            let slot = actions
                .get_mut(e.mask as usize)
                .ok_or_else(|| D::Error::custom(format!("mask {} out of range", e.mask)))?;
            if slot.replace(e.action).is_some() {
                return Err(D::Error::custom(format!("duplicate mask {}", e.mask)));
            }
        }
        Ok(AttackPlan {
            attacker: file.attacker,
            num_blocks,
            actions: actions.into_iter().map(|a| a.unwrap()).collect(),
        })
    }
}

/// Exact-knowledge planner.
///
/// Decision rule per proper subset S that contains at least one attacker
/// block: positively augment iff beta_i(S) > 0 and beta_{-i}(S) <= 0,
/// negatively augment iff beta_i(S) < 0 and beta_{-i}(S) >= 0, act honestly
/// otherwise. Subsets without attacker blocks are honest by definition.
///
/// One refinement on top of the rule: positive augmentation means submitting
/// the whole local dataset, so on subsets that already include every
/// attacker block it cannot change the training data. Those subsets are
/// recorded as Honest, which is what actually happens to the trained model.
pub fn plan_attack(
    coeffs: &CoefficientTable,
    attacker: usize,
    structure: &GameStructure,
) -> Result<AttackPlan> {
    if structure != coeffs.structure() {
        return Err(Error::InvalidStructure(
            "coefficient table was extracted for a different structure".into(),
        ));
    }
    structure.check_client(attacker)?;
    let n = structure.total_blocks();
    let own = structure.client_mask(attacker);
    let actions = (0..structure.num_subsets() - 1)
        .map(|m| {
            let mask = Mask(m as u64);
            if mask.intersect(own).is_empty() {
                return AttackAction::Honest;
            }
            decide(
                coeffs.client_coeff(attacker, mask),
                coeffs.others_coeff(attacker, mask),
                mask.intersect(own) == own,
            )
        })
        .collect();
    Ok(AttackPlan {
        attacker,
        num_blocks: n,
        actions,
    })
}

fn decide(beta_i: f64, beta_others: f64, has_all_attacker_blocks: bool) -> AttackAction {
    if beta_i > 0.0 && beta_others <= 0.0 && !has_all_attacker_blocks {
        AttackAction::PositiveAugment
    } else if beta_i < 0.0 && beta_others >= 0.0 {
        AttackAction::NegativeAugment
    } else {
        AttackAction::Honest
    }
}

/// The attacker's belief about which subset is being retrained, conditioned
/// on the only thing it observes: which of its own blocks were requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubsetPrior {
    /// The attacker knows the scheduled subset exactly; incomplete-knowledge
    /// planning degenerates to the exact planner.
    PointMass,
    /// Uniform over all proper subsets consistent with the observation.
    UniformConsistent,
    /// Explicit conditional distribution: observed own-block mask to a list
    /// of (subset mask, probability) pairs.
    Explicit(BTreeMap<u64, Vec<(u64, f64)>>),
}

/// (E[beta_i | o], E[beta_{-i} | o]) under the prior, where o is the
/// attacker's observed own-block mask.
pub fn expected_coefficients(
    coeffs: &CoefficientTable,
    attacker: usize,
    observed: Mask,
    prior: &SubsetPrior,
) -> Result<(f64, f64)> {
    let structure = coeffs.structure();
    structure.check_client(attacker)?;
    let own = structure.client_mask(attacker);
    if !observed.is_subset_of(own) {
        return Err(Error::InvalidPrior(format!(
            "observed mask {observed:?} contains blocks not owned by client {attacker}"
        )));
    }
    let full = structure.full_mask();
    match prior {
        SubsetPrior::PointMass => Err(Error::InvalidPrior(
            "a point-mass prior identifies the subset itself; there is no expectation to take"
                .into(),
        )),
        SubsetPrior::UniformConsistent => {
            let mut count = 0usize;
            let mut sum_i = 0.0;
            let mut sum_o = 0.0;
            for mask in structure.enumerate_subsets() {
                if mask == full || mask.intersect(own) != observed {
                    continue;
                }
                count += 1;
                sum_i += coeffs.client_coeff(attacker, mask);
                sum_o += coeffs.others_coeff(attacker, mask);
            }
            if count == 0 {
                return Err(Error::EmptyPriorSupport { observed });
            }
            Ok((sum_i / count as f64, sum_o / count as f64))
        }
        SubsetPrior::Explicit(map) => {
            let rows = map.get(&observed.0).ok_or(Error::EmptyPriorSupport { observed })?;
            if rows.is_empty() {
                return Err(Error::EmptyPriorSupport { observed });
            }
            let mut total = 0.0;
            let mut sum_i = 0.0;
            let mut sum_o = 0.0;
            for &(m, p) in rows {
                let mask = Mask(m);
                if mask.index() >= structure.num_subsets() || mask == full {
                    return Err(Error::InvalidPrior(format!(
                        "prior support contains non-proper subset {m}"
                    )));
                }
                if mask.intersect(own) != observed {
                    return Err(Error::InvalidPrior(format!(
                        "subset {m} is inconsistent with observation {observed:?}"
                    )));
                }
                if !(p >= 0.0) || !p.is_finite() {
                    return Err(Error::InvalidPrior(format!("probability {p} for subset {m}")));
                }
                total += p;
                sum_i += p * coeffs.client_coeff(attacker, mask);
                sum_o += p * coeffs.others_coeff(attacker, mask);
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidPrior(format!(
                    "probabilities for observation {observed:?} sum to {total}"
                )));
            }
            Ok((sum_i, sum_o))
        }
    }
}

/// Incomplete-knowledge planner: the decision rule is applied to the
/// expected coefficients given the observation, so every subset sharing the
/// same observed own-block mask receives the same action.
pub fn plan_attack_incomplete(
    coeffs: &CoefficientTable,
    attacker: usize,
    structure: &GameStructure,
    prior: &SubsetPrior,
) -> Result<AttackPlan> {
    if let SubsetPrior::PointMass = prior {
        return plan_attack(coeffs, attacker, structure);
    }
    if structure != coeffs.structure() {
        return Err(Error::InvalidStructure(
            "coefficient table was extracted for a different structure".into(),
        ));
    }
    structure.check_client(attacker)?;
    let own = structure.client_mask(attacker);
    let own_blocks: Vec<usize> = own.blocks().collect();
    // One decision per nonempty observation mask o.
    let mut decisions: BTreeMap<u64, AttackAction> = BTreeMap::new();
    for bits in 1..1u64 << own_blocks.len() {
        let mut o = Mask::EMPTY;
        for (j, &b) in own_blocks.iter().enumerate() {
            if bits >> j & 1 == 1 {
                o = o.insert(b);
            }
        }
        let (ebi, ebo) = expected_coefficients(coeffs, attacker, o, prior)?;
        decisions.insert(o.0, decide(ebi, ebo, o == own));
    }
    let actions = (0..structure.num_subsets() - 1)
        .map(|m| {
            let mask = Mask(m as u64);
            let o = mask.intersect(own);
            if o.is_empty() {
                AttackAction::Honest
            } else {
                decisions[&o.0]
            }
        })
        .collect();
    Ok(AttackPlan {
        attacker,
        num_blocks: structure.total_blocks(),
        actions,
    })
}

/// A utility oracle that also hears what the attacker did to its data for
/// the scheduled subset.
pub trait ManipulableOracle: Sync {
    fn utility(&self, mask: Mask, action: AttackAction) -> f64;
}

impl<F: Fn(Mask, AttackAction) -> f64 + Sync> ManipulableOracle for F {
    fn utility(&self, mask: Mask, action: AttackAction) -> f64 {
        self(mask, action)
    }
}

/// Synthetic manipulable oracle over a fixed base table: positive
/// augmentation adds delta, negative subtracts it, honesty reproduces the
/// base value. Blind to the plan, so it is a valid probe of the direction
/// guarantee.
pub struct DeltaOracle<'a> {
    base: &'a UtilityTable,
    delta: f64,
}

impl<'a> DeltaOracle<'a> {
    pub fn new(base: &'a UtilityTable, delta: f64) -> Self {
        DeltaOracle { base, delta }
    }
}

impl ManipulableOracle for DeltaOracle<'_> {
    fn utility(&self, mask: Mask, action: AttackAction) -> f64 {
        match action {
            AttackAction::Honest => self.base.get(mask),
            AttackAction::PositiveAugment => self.base.get(mask) + self.delta,
            AttackAction::NegativeAugment => self.base.get(mask) - self.delta,
        }
    }
}

/// Utility table measured while the attack plan is in force. Proper subsets
/// hold manipulated utilities; the grand coalition entry is always honest.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedUtilityTable {
    table: UtilityTable,
}

impl AugmentedUtilityTable {
    /// Wraps a measured table. An unmanipulated table is the attack-free
    /// (all-Honest) case.
    pub fn new(table: UtilityTable) -> Self {
        AugmentedUtilityTable { table }
    }

    pub fn table(&self) -> &UtilityTable {
        &self.table
    }

    pub fn get(&self, mask: Mask) -> f64 {
        self.table.get(mask)
    }

    pub fn values(&self) -> &[f64] {
        self.table.values()
    }

    pub fn into_table(self) -> UtilityTable {
        self.table
    }
}

/// Retrains (queries) every proper subset under the planned action and the
/// grand coalition honestly.
pub fn execute_attack(
    plan: &AttackPlan,
    oracle: &dyn ManipulableOracle,
) -> Result<AugmentedUtilityTable> {
    let n = plan.num_blocks;
    let num_masks = 1usize << n;
    let values: Vec<f64> = (0..num_masks)
        .into_par_iter()
        .map(|m| {
            let mask = Mask(m as u64);
            let action = if m + 1 == num_masks {
                AttackAction::Honest
            } else {
                plan.action(mask)
            };
            oracle.utility(mask, action)
        })
        .collect();
    Ok(AugmentedUtilityTable {
        table: UtilityTable::new(n, values)?,
    })
}

/// Empirical values: the linear form applied to the manipulated table,
///   phi_hat = beta(D_N) v(D_N) + sum over proper S of beta(S) v_hat(S).
///
/// The same metric evaluated directly on the manipulated table must agree
/// within 1e-9; a disagreement means the coefficient extraction and the
/// metric implementation have diverged, which is reported as an error rather
/// than silently trusted.
pub fn empirical_values(
    metric: Metric,
    coeffs: &CoefficientTable,
    augmented: &AugmentedUtilityTable,
) -> Result<Valuation> {
    let structure = coeffs.structure();
    if coeffs.metric() != metric.id() {
        return Err(Error::InvalidTable(format!(
            "coefficients are for {}, not {}",
            coeffs.metric(),
            metric.id()
        )));
    }
    if augmented.table.num_blocks() != structure.total_blocks() {
        return Err(Error::InvalidTable(format!(
            "augmented table has {} blocks, structure has {}",
            augmented.table.num_blocks(),
            structure.total_blocks()
        )));
    }
    let n = structure.total_blocks();
    let block_values: Vec<f64> = (0..n)
        .map(|b| coeffs.linear_block_value(b, augmented.values()))
        .collect();
    // Client values as per-owner sums keeps them bit-identical whenever the
    // underlying block values are.
    let mut client_values = vec![0.0; structure.num_clients()];
    for (b, &v) in block_values.iter().enumerate() {
        client_values[structure.block_owner(b)] += v;
    }
    let direct = metric.evaluate(&augmented.table, structure)?;
    let mut residual: f64 = 0.0;
    for b in 0..n {
        residual = residual.max((block_values[b] - direct.block_values[b]).abs());
    }
    for i in 0..structure.num_clients() {
        residual = residual.max((client_values[i] - direct.client_values[i]).abs());
    }
    if residual > 1e-9 {
        return Err(Error::CrossCheckFailed {
            metric: metric.id().to_string(),
            residual,
            context: "linear-form empirical values vs direct metric evaluation".into(),
        });
    }
    Ok(Valuation {
        metric: metric.id().to_string(),
        block_values,
        client_values,
    })
}
