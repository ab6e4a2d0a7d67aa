//! Deterministic desk-scale federated-learning simulator.
//!
//! Supplies the realistic utility oracle: synthetic non-IID block data, a
//! multinomial logistic-regression model trained FedAvg-style, and the two
//! data augmentations an attacker can apply to its local data. Every piece
//! of randomness is drawn from a stream keyed by purpose, so any utility is
//! a pure function of (dataset seed, config seed, mask, action) and reruns
//! are byte-identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackAction, AttackPlan, ManipulableOracle};
use crate::error::{Error, Result};
use crate::game::{GameStructure, Mask, UtilityOracle};

/// Spread of the Gaussian class means relative to unit within-class noise.
const MEAN_SCALE: f64 = 2.0;

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent RNG stream for one purpose index under a master seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)))
}

/// Stream for one (round, client) pair of a training run. Independent of
/// which mask or augmentation is in force, so two runs that feed a client
/// identical data produce identical models.
fn training_stream(seed: u64, round: usize, client: usize) -> ChaCha8Rng {
    let key = splitmix64(seed)
        ^ splitmix64(0x5EED_0000 + round as u64)
        ^ splitmix64(0xC11E_0000 + client as u64);
    ChaCha8Rng::seed_from_u64(splitmix64(key))
}

pub type Sample = (Vec<f64>, usize);

/// Synthetic classification data split into federated blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    dim: usize,
    classes: usize,
    blocks: Vec<Vec<Sample>>,
    validation: Vec<Sample>,
    seed: u64,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, b: usize) -> &[Sample] {
        &self.blocks[b]
    }

    pub fn validation(&self) -> &[Sample] {
        &self.validation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Debug export: one row per sample, tagged with its origin.
    pub fn export_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
        let mut header = vec!["set".to_string(), "label".to_string()];
        for d in 0..self.dim {
            header.push(format!("x{d}"));
        }
        w.write_record(&header)?;
        let mut write = |tag: &str, samples: &[Sample]| -> Result<()> {
            for (x, y) in samples {
                let mut rec = vec![tag.to_string(), y.to_string()];
                for v in x {
                    rec.push(format!("{v}"));
                }
                w.write_record(&rec)?;
            }
            Ok(())
        };
        for (b, samples) in self.blocks.iter().enumerate() {
            write(&format!("block_{b}"), samples)?;
        }
        write("validation", &self.validation)?;
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}

/// Draws a Gaussian-mixture classification task whose per-block class
/// proportions are Dirichlet-skewed: skew 0 gives identical (uniform)
/// proportions everywhere, skew 1 collapses each block onto one class. The
/// validation set is drawn from the global mixture with uniform classes,
/// four times the size of one block.
pub fn generate_synthetic(
    structure: &GameStructure,
    dim: usize,
    classes: usize,
    samples_per_block: usize,
    skew: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if classes < 2 {
        return Err(Error::InvalidDataset(format!("need >= 2 classes, got {classes}")));
    }
    if dim < 2 {
        return Err(Error::InvalidDataset(format!("need dimension >= 2, got {dim}")));
    }
    if samples_per_block == 0 {
        return Err(Error::InvalidDataset("samples_per_block must be positive".into()));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::InvalidDataset(format!("skew {skew} outside [0, 1]")));
    }
    let num_blocks = structure.total_blocks();

    let mut mean_rng = stream(seed, 0);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| MEAN_SCALE * mean_rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let draw = |rng: &mut ChaCha8Rng, class: usize| -> Sample {
        let x = means[class]
            .iter()
            .map(|m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, class)
    };

    let blocks: Vec<Vec<Sample>> = (0..num_blocks)
        .map(|b| {
            let mut rng = stream(seed, 1 + b as u64);
            let props = block_proportions(&mut rng, classes, skew);
            (0..samples_per_block)
                .map(|_| {
                    let class = sample_class(&mut rng, &props);
                    draw(&mut rng, class)
                })
                .collect()
        })
        .collect();

    let mut val_rng = stream(seed, 1 + num_blocks as u64);
    let validation = (0..4 * samples_per_block)
        .map(|_| {
            let class = val_rng.random_range(0..classes);
            draw(&mut val_rng, class)
        })
        .collect();

    Ok(SyntheticDataset {
        dim,
        classes,
        blocks,
        validation,
        seed,
    })
}

fn block_proportions(rng: &mut ChaCha8Rng, classes: usize, skew: f64) -> Vec<f64> {
    if skew == 0.0 {
        return vec![1.0 / classes as f64; classes];
    }
    if skew >= 1.0 {
        let hot = rng.random_range(0..classes);
        let mut p = vec![0.0; classes];
        p[hot] = 1.0;
        return p;
    }
    // Dirichlet(alpha, ..., alpha) by normalized Gamma draws; small alpha
    // concentrates mass on few classes.
    let alpha = (1.0 - skew) / skew;
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|g| g / total).collect()
    } else {
        let hot = rng.random_range(0..classes);
        let mut p = vec![0.0; classes];
        p[hot] = 1.0;
        p
    }
}

fn sample_class(rng: &mut ChaCha8Rng, props: &[f64]) -> usize {
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (k, &p) in props.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    props.len() - 1
}

/// Multinomial logistic regression: per-class weight row plus bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearModel {
            weights: vec![vec![0.0; dim]; classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>())
            .collect()
    }

    /// Class probabilities via numerically stable softmax.
    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let logits = self.logits(x);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    /// Predicted class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|(x, y)| self.predict(x) == *y)
            .count();
        hits as f64 / samples.len() as f64
    }

    /// Negative mean cross-entropy (mean log-probability of the true label),
    /// clamped below at the uniform predictor's value -ln K so the utility
    /// stays in [-ln K, 0].
    pub fn negloss(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0;
        for (x, y) in samples {
            let logits = self.logits(x);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            acc += logits[*y] - lse;
        }
        (acc / samples.len() as f64).max(-(self.classes() as f64).ln())
    }

    /// Minibatch SGD on softmax cross-entropy, shuffling with the supplied
    /// stream each epoch.
    pub fn train_sgd(
        &mut self,
        data: &[Sample],
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) {
        if data.is_empty() || learning_rate == 0.0 {
            // Zero steps and zero-length steps both leave the model as-is,
            // but the shuffle stream must still advance identically.
            for _ in 0..epochs {
                let mut order: Vec<usize> = (0..data.len()).collect();
                order.shuffle(rng);
            }
            return;
        }
        let dim = self.weights[0].len();
        let classes = self.classes();
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(rng);
            for batch in order.chunks(batch_size) {
                let mut grad_w = vec![vec![0.0; dim]; classes];
                let mut grad_b = vec![0.0; classes];
                for &idx in batch {
                    let (x, y) = &data[idx];
                    let p = self.probabilities(x);
                    for k in 0..classes {
                        let g = p[k] - if k == *y { 1.0 } else { 0.0 };
                        for d in 0..dim {
                            grad_w[k][d] += g * x[d];
                        }
                        grad_b[k] += g;
                    }
                }
                let scale = learning_rate / batch.len() as f64;
                for k in 0..classes {
                    for d in 0..dim {
                        self.weights[k][d] -= scale * grad_w[k][d];
                    }
                    self.bias[k] -= scale * grad_b[k];
                }
            }
        }
    }
}

/// Federated training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            rounds: 3,
            local_epochs: 3,
            learning_rate: 0.001,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl FlConfig {
    /// Structural validity for running at all; strict positivity of the
    /// learning rate is a config-file concern, not a training one (rate 0 is
    /// a legitimate way to probe that training is the only source of change).
    fn check(&self) -> Result<()> {
        if self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidFlConfig(
                "rounds, local_epochs, and batch_size must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidFlConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Honest training data of one client for a retraining subset: its own
/// blocks that appear in the mask, in block order.
fn honest_data(dataset: &SyntheticDataset, structure: &GameStructure, client: usize, mask: Mask) -> Vec<Sample> {
    structure
        .client_mask(client)
        .intersect(mask)
        .blocks()
        .flat_map(|b| dataset.block(b).iter().cloned())
        .collect()
}

/// Positive augmentation: the attacker submits its whole local dataset
/// regardless of which of its blocks were requested.
pub fn positive_augment(
    dataset: &SyntheticDataset,
    structure: &GameStructure,
    attacker: usize,
    _mask: Mask,
) -> Vec<Sample> {
    structure
        .client_mask(attacker)
        .blocks()
        .flat_map(|b| dataset.block(b).iter().cloned())
        .collect()
}

/// Negative augmentation: the requested attacker blocks with every feature
/// vector negated; labels untouched. Applying it twice restores the data.
pub fn negative_augment(
    dataset: &SyntheticDataset,
    structure: &GameStructure,
    attacker: usize,
    mask: Mask,
) -> Vec<Sample> {
    honest_data(dataset, structure, attacker, mask)
        .into_iter()
        .map(|(x, y)| (x.iter().map(|v| -v).collect(), y))
        .collect()
}

/// FedAvg: `rounds` rounds in which every client owning blocks in the mask
/// locally trains the current global model and the results are averaged
/// weighted by reported sample count. The attacker's data (and hence its
/// weight) follows the supplied action.
pub fn fedavg_train(
    dataset: &SyntheticDataset,
    mask: Mask,
    structure: &GameStructure,
    config: &FlConfig,
    attack: Option<(usize, AttackAction)>,
) -> Result<LinearModel> {
    config.check()?;
    if mask.is_empty() {
        return Err(Error::EmptyTrainingMask);
    }
    if let Some((attacker, _)) = attack {
        structure.check_client(attacker)?;
    }
    let client_data: Vec<(usize, Vec<Sample>)> = (0..structure.num_clients())
        .filter(|&i| !structure.client_mask(i).intersect(mask).is_empty())
        .map(|i| {
            let data = match attack {
                Some((attacker, AttackAction::PositiveAugment)) if attacker == i => {
                    positive_augment(dataset, structure, i, mask)
                }
                Some((attacker, AttackAction::NegativeAugment)) if attacker == i => {
                    negative_augment(dataset, structure, i, mask)
                }
                _ => honest_data(dataset, structure, i, mask),
            };
            (i, data)
        })
        .collect();

    let mut global = LinearModel::zeros(dataset.classes(), dataset.dim());
    for round in 0..config.rounds {
        let mut locals: Vec<(f64, LinearModel)> = Vec::with_capacity(client_data.len());
        for (i, data) in &client_data {
            let mut local = global.clone();
            let mut rng = training_stream(config.seed, round, *i);
            local.train_sgd(
                data,
                config.local_epochs,
                config.learning_rate,
                config.batch_size,
                &mut rng,
            );
            locals.push((data.len() as f64, local));
        }
        global = average_models(&locals, dataset.classes(), dataset.dim());
    }
    Ok(global)
}

/// Sample-count-weighted parameter average; the arithmetic mean when all
/// weights are equal.
fn average_models(locals: &[(f64, LinearModel)], classes: usize, dim: usize) -> LinearModel {
    let total: f64 = locals.iter().map(|(w, _)| w).sum();
    let mut out = LinearModel::zeros(classes, dim);
    for (w, m) in locals {
        let f = w / total;
        for k in 0..classes {
            for d in 0..dim {
                out.weights[k][d] += f * m.weights[k][d];
            }
            out.bias[k] += f * m.bias[k];
        }
    }
    out
}

/// Which scalar the oracle reports about a trained model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Accuracy,
    NegLoss,
}

pub fn model_utility(model: &LinearModel, dataset: &SyntheticDataset, kind: UtilityKind) -> f64 {
    match kind {
        UtilityKind::Accuracy => model.accuracy(dataset.validation()),
        UtilityKind::NegLoss => model.negloss(dataset.validation()),
    }
}

/// The federated utility oracle. Empty mask yields 0 by convention; every
/// other mask trains a model and measures it on the validation set,
/// optionally subtracting the untrained baseline. When a plan is attached,
/// plain oracle queries apply its action for the queried subset (the grand
/// coalition always trains honestly).
pub struct FlOracle<'a> {
    dataset: &'a SyntheticDataset,
    structure: &'a GameStructure,
    config: FlConfig,
    kind: UtilityKind,
    plan: Option<&'a AttackPlan>,
    attacker: Option<usize>,
    baseline: f64,
}

impl<'a> FlOracle<'a> {
    pub fn new(
        dataset: &'a SyntheticDataset,
        structure: &'a GameStructure,
        config: FlConfig,
        kind: UtilityKind,
        plan: Option<&'a AttackPlan>,
        subtract_baseline: bool,
    ) -> Self {
        let baseline = if subtract_baseline {
            model_utility(
                &LinearModel::zeros(dataset.classes(), dataset.dim()),
                dataset,
                kind,
            )
        } else {
            0.0
        };
        FlOracle {
            dataset,
            structure,
            config,
            kind,
            plan,
            attacker: plan.map(AttackPlan::attacker),
            baseline,
        }
    }

    /// Declares which client manipulates when utilities are queried with an
    /// explicit action; implied by the plan when one is attached.
    pub fn for_attacker(mut self, client: usize) -> Self {
        self.attacker = Some(client);
        self
    }

    fn measure(&self, mask: Mask, action: AttackAction) -> f64 {
        if mask.is_empty() {
            return 0.0;
        }
        debug_assert!(
            action == AttackAction::Honest || self.attacker.is_some(),
            "non-honest action queried on an oracle with no attacker"
        );
        let attack = self
            .attacker
            .and_then(|client| (action != AttackAction::Honest).then_some((client, action)));
        let model = fedavg_train(self.dataset, mask, self.structure, &self.config, attack)
            .expect("nonempty mask and validated config");
        model_utility(&model, self.dataset, self.kind) - self.baseline
    }

    fn planned_action(&self, mask: Mask) -> AttackAction {
        match self.plan {
            Some(plan) if mask != self.structure.full_mask() && !mask.is_empty() => {
                plan.action(mask)
            }
            _ => AttackAction::Honest,
        }
    }
}

impl UtilityOracle for FlOracle<'_> {
    fn utility(&self, mask: Mask) -> f64 {
        self.measure(mask, self.planned_action(mask))
    }
}

impl ManipulableOracle for FlOracle<'_> {
    fn utility(&self, mask: Mask, action: AttackAction) -> f64 {
        self.measure(mask, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_dataset(counts: Vec<usize>, seed: u64) -> (GameStructure, SyntheticDataset) {
        let s = GameStructure::new(counts).unwrap();
        let d = generate_synthetic(&s, 4, 3, 60, 0.6, seed).unwrap();
        (s, d)
    }

    #[test]
    fn generation_is_deterministic_and_validated() {
        let s = GameStructure::new(vec![2, 1]).unwrap();
        let a = generate_synthetic(&s, 5, 3, 40, 0.5, 7).unwrap();
        let b = generate_synthetic(&s, 5, 3, 40, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_blocks(), 3);
        assert_eq!(a.block(0).len(), 40);
        assert_eq!(a.validation().len(), 160);
        assert!(a.block(0).iter().all(|(x, y)| x.len() == 5 && *y < 3));

        assert!(generate_synthetic(&s, 5, 1, 40, 0.5, 7).is_err());
        assert!(generate_synthetic(&s, 1, 3, 40, 0.5, 7).is_err());
        assert!(generate_synthetic(&s, 5, 3, 0, 0.5, 7).is_err());
        assert!(generate_synthetic(&s, 5, 3, 40, 1.5, 7).is_err());
    }

    fn class_histogram(samples: &[Sample], classes: usize) -> Vec<f64> {
        let mut h = vec![0.0; classes];
        for (_, y) in samples {
            h[*y] += 1.0;
        }
        let n = samples.len() as f64;
        h.iter().map(|c| c / n).collect()
    }

    #[test]
    fn zero_skew_blocks_share_class_proportions() {
        let s = GameStructure::new(vec![1, 1]).unwrap();
        let d = generate_synthetic(&s, 2, 2, 1000, 0.0, 42).unwrap();
        let h0 = class_histogram(d.block(0), 2);
        let h1 = class_histogram(d.block(1), 2);
        let tv: f64 = h0.iter().zip(&h1).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.1, "total variation {tv}");
    }

    #[test]
    fn high_skew_produces_a_dominant_class() {
        let s = GameStructure::new(vec![1, 1, 1]).unwrap();
        let d = generate_synthetic(&s, 2, 3, 200, 0.9, 42).unwrap();
        let dominant = (0..3).any(|b| {
            class_histogram(d.block(b), 3)
                .iter()
                .any(|&p| p > 0.6)
        });
        assert!(dominant);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (s, d) = default_dataset(vec![2, 1], 9);
        let cfg = FlConfig::default();
        let m1 = fedavg_train(&d, Mask(0b011), &s, &cfg, None).unwrap();
        let m2 = fedavg_train(&d, Mask(0b011), &s, &cfg, None).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn zero_learning_rate_returns_initialization() {
        let (s, d) = default_dataset(vec![2, 1], 10);
        let cfg = FlConfig {
            learning_rate: 0.0,
            ..FlConfig::default()
        };
        let m = fedavg_train(&d, s.full_mask(), &s, &cfg, None).unwrap();
        assert_eq!(m, LinearModel::zeros(3, 4));
    }

    #[test]
    fn single_client_fedavg_is_sequential_sgd() {
        let s = GameStructure::new(vec![1]).unwrap();
        let d = generate_synthetic(&s, 4, 2, 50, 0.0, 11).unwrap();
        let cfg = FlConfig {
            seed: 3,
            ..FlConfig::default()
        };
        let fed = fedavg_train(&d, Mask(0b1), &s, &cfg, None).unwrap();
        let mut manual = LinearModel::zeros(2, 4);
        for round in 0..cfg.rounds {
            let mut rng = training_stream(cfg.seed, round, 0);
            manual.train_sgd(
                d.block(0),
                cfg.local_epochs,
                cfg.learning_rate,
                cfg.batch_size,
                &mut rng,
            );
        }
        assert_eq!(fed, manual);
    }

    #[test]
    fn empty_mask_and_bad_config_are_rejected() {
        let (s, d) = default_dataset(vec![1, 1], 12);
        let cfg = FlConfig::default();
        assert!(matches!(
            fedavg_train(&d, Mask::EMPTY, &s, &cfg, None).unwrap_err(),
            Error::EmptyTrainingMask
        ));
        let bad = FlConfig {
            rounds: 0,
            ..FlConfig::default()
        };
        assert!(matches!(
            fedavg_train(&d, Mask(0b1), &s, &bad, None).unwrap_err(),
            Error::InvalidFlConfig(_)
        ));
    }

    #[test]
    fn untrained_model_utilities() {
        let s = GameStructure::new(vec![1]).unwrap();
        let d = generate_synthetic(&s, 3, 2, 1000, 0.0, 13).unwrap();
        let zero = LinearModel::zeros(2, 3);
        // Equal logits predict class 0; balanced validation makes that
        // roughly a coin flip.
        let acc = model_utility(&zero, &d, UtilityKind::Accuracy);
        assert!((acc - 0.5).abs() < 0.05, "accuracy {acc}");
        let nl = model_utility(&zero, &d, UtilityKind::NegLoss);
        assert!((nl - (-(2f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn perfect_separator_reaches_full_accuracy() {
        let d = SyntheticDataset {
            dim: 2,
            classes: 2,
            blocks: vec![vec![(vec![1.0, 0.0], 0), (vec![-1.0, 0.0], 1)]],
            validation: vec![
                (vec![2.0, 0.3], 0),
                (vec![1.5, -0.2], 0),
                (vec![-2.0, 0.1], 1),
                (vec![-0.5, 0.4], 1),
            ],
            seed: 0,
        };
        let model = LinearModel {
            weights: vec![vec![10.0, 0.0], vec![-10.0, 0.0]],
            bias: vec![0.0, 0.0],
        };
        assert_eq!(model_utility(&model, &d, UtilityKind::Accuracy), 1.0);
    }

    #[test]
    fn negative_augment_is_an_involution() {
        let (s, d) = default_dataset(vec![2, 1], 14);
        let mask = Mask(0b011);
        let once = negative_augment(&d, &s, 0, mask);
        let honest = honest_data(&d, &s, 0, mask);
        assert_eq!(once.len(), honest.len());
        let twice: Vec<Sample> = once
            .iter()
            .map(|(x, y)| (x.iter().map(|v| -v).collect(), *y))
            .collect();
        assert_eq!(twice, honest);
        // Zero features are fixed points.
        let z = vec![(vec![0.0, 0.0], 1usize)];
        let negated: Vec<Sample> = z
            .iter()
            .map(|(x, y)| (x.iter().map(|v| -v).collect(), *y))
            .collect();
        assert!(negated[0].0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_augment_supplies_the_whole_local_dataset() {
        let (s, d) = default_dataset(vec![3, 1], 15);
        let partial = Mask(0b0001);
        let data = positive_augment(&d, &s, 0, partial);
        assert_eq!(data.len(), 3 * 60);
        // Already-complete masks make it a no-op relative to honesty.
        let full_own = Mask(0b0111);
        assert_eq!(
            positive_augment(&d, &s, 0, full_own),
            honest_data(&d, &s, 0, full_own)
        );
    }

    #[test]
    fn augmentation_noops_leave_training_byte_identical() {
        let (s, d) = default_dataset(vec![2, 1], 16);
        let cfg = FlConfig::default();
        let own_full = Mask(0b011);
        let honest = fedavg_train(&d, own_full, &s, &cfg, None).unwrap();
        let pos = fedavg_train(
            &d,
            own_full,
            &s,
            &cfg,
            Some((0, AttackAction::PositiveAugment)),
        )
        .unwrap();
        assert_eq!(honest, pos);
    }

    #[test]
    fn oracle_without_plan_matches_all_honest_plan() {
        use crate::valuation::{extract_coefficients, Metric};
        let (s, d) = default_dataset(vec![1, 1], 17);
        let cfg = FlConfig::default();
        let coeffs = extract_coefficients(Metric::TruthShapley, &s).unwrap();
        let plan = crate::attack::plan_attack(&coeffs, 0, &s).unwrap();
        assert!(plan.is_all_honest());
        let bare = FlOracle::new(&d, &s, cfg, UtilityKind::Accuracy, None, false);
        let planned = FlOracle::new(&d, &s, cfg, UtilityKind::Accuracy, Some(&plan), false);
        for mask in s.enumerate_subsets() {
            let a = UtilityOracle::utility(&bare, mask);
            let b = UtilityOracle::utility(&planned, mask);
            assert_eq!(a.to_bits(), b.to_bits(), "{mask:?}");
        }
        assert_eq!(UtilityOracle::utility(&bare, Mask::EMPTY), 0.0);
    }

    #[test]
    fn explicit_actions_manipulate_without_a_plan() {
        use crate::valuation::{extract_coefficients, Metric};
        let (s, d) = default_dataset(vec![2, 1], 21);
        let cfg = FlConfig {
            learning_rate: 0.05,
            ..FlConfig::default()
        };
        let coeffs = extract_coefficients(Metric::Loo, &s).unwrap();
        let plan = crate::attack::plan_attack(&coeffs, 0, &s).unwrap();
        assert!(plan.num_non_honest() > 0);
        let bare =
            FlOracle::new(&d, &s, cfg, UtilityKind::NegLoss, None, false).for_attacker(0);
        let planned = FlOracle::new(&d, &s, cfg, UtilityKind::NegLoss, Some(&plan), false);
        let mut any_effect = false;
        for (mask, action) in plan.iter() {
            let explicit = ManipulableOracle::utility(&bare, mask, action);
            let via_plan = UtilityOracle::utility(&planned, mask);
            assert_eq!(explicit.to_bits(), via_plan.to_bits(), "{mask:?}");
            if action != AttackAction::Honest {
                let honest = UtilityOracle::utility(&bare, mask);
                any_effect |= explicit != honest;
            }
        }
        assert!(any_effect, "negative augmentation never moved the utility");
    }

    #[test]
    fn baseline_subtraction_shifts_by_untrained_utility() {
        let (s, d) = default_dataset(vec![1, 1], 18);
        let cfg = FlConfig::default();
        let raw = FlOracle::new(&d, &s, cfg, UtilityKind::NegLoss, None, false);
        let shifted = FlOracle::new(&d, &s, cfg, UtilityKind::NegLoss, None, true);
        let baseline = model_utility(&LinearModel::zeros(3, 4), &d, UtilityKind::NegLoss);
        let m = Mask(0b01);
        let a = UtilityOracle::utility(&raw, m);
        let b = UtilityOracle::utility(&shifted, m);
        assert!((a - baseline - b).abs() < 1e-15);
        assert_eq!(UtilityOracle::utility(&shifted, Mask::EMPTY), 0.0);
    }

    #[test]
    fn weighted_average_with_equal_weights_is_the_mean() {
        let m1 = LinearModel {
            weights: vec![vec![1.0, 3.0]],
            bias: vec![2.0],
        };
        let m2 = LinearModel {
            weights: vec![vec![3.0, 5.0]],
            bias: vec![4.0],
        };
        let avg = average_models(&[(10.0, m1), (10.0, m2)], 1, 2);
        assert_eq!(avg.weights[0], vec![2.0, 4.0]);
        assert_eq!(avg.bias[0], 3.0);
    }
}
