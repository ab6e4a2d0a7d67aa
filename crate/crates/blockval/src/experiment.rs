//! Config-driven experiment pipeline: synthetic federated data, honest and
//! attacked utility tables, all configured metrics, and the downstream
//! reward/selection measures, repeated over independent seeded runs and
//! aggregated with standard errors.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    empirical_values, plan_attack, plan_attack_incomplete, AttackAction, AttackPlan,
    AugmentedUtilityTable, SubsetPrior,
};
use crate::downstream::{
    allocate_rewards, select_blocks, symmetric_percentage_change, utility_decline, RewardScheme,
    SelectionStrategy,
};
use crate::error::{Error, Result};
use crate::flsim::{generate_synthetic, splitmix64, FlConfig, FlOracle, UtilityKind};
use crate::game::{build_utility_table, GameStructure, Mask, UtilityTable};
use crate::valuation::{
    closed_form_sv_client_coeffs, extract_coefficients, CoefficientTable, Metric, Valuation,
};

/// Per-run seed: independent of every other run and of run ordering.
pub fn derive_run_seed(master: u64, run: usize) -> u64 {
    splitmix64(master ^ splitmix64(0xD5EE_D000 + run as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSpec {
    pub blocks_per_client: Vec<usize>,
    pub enumeration_cap: Option<usize>,
}

impl Default for StructureSpec {
    fn default() -> Self {
        StructureSpec {
            blocks_per_client: vec![3, 3, 3],
            enumeration_cap: None,
        }
    }
}

impl StructureSpec {
    pub fn build(&self) -> Result<GameStructure> {
        match self.enumeration_cap {
            Some(cap) => GameStructure::with_cap(self.blocks_per_client.clone(), cap),
            None => GameStructure::new(self.blocks_per_client.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub dim: usize,
    pub classes: usize,
    pub samples_per_block: usize,
    pub skew: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            dim: 10,
            classes: 3,
            samples_per_block: 200,
            skew: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackerSelection {
    Fixed { client: usize },
    RandomPerRun,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knowledge {
    Exact,
    Incomplete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub enabled: bool,
    pub attacker: AttackerSelection,
    pub knowledge: Knowledge,
    /// Belief over scheduled subsets for incomplete knowledge.
    pub prior: SubsetPrior,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            enabled: true,
            attacker: AttackerSelection::RandomPerRun,
            knowledge: Knowledge::Exact,
            prior: SubsetPrior::UniformConsistent,
        }
    }
}

/// Selection strategies as configured; top-k with a per-run random k is the
/// experiment-level default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionSpec {
    TopKRandom,
    TopK { k: usize },
    AboveAverage,
    AboveMedian,
}

impl SelectionSpec {
    fn label(&self) -> String {
        match self {
            SelectionSpec::TopKRandom => "top_k".to_string(),
            SelectionSpec::TopK { k } => format!("top_{k}"),
            SelectionSpec::AboveAverage => "above_average".to_string(),
            SelectionSpec::AboveMedian => "above_median".to_string(),
        }
    }

    fn resolve(&self, random_k: usize) -> SelectionStrategy {
        match self {
            SelectionSpec::TopKRandom => SelectionStrategy::TopK { k: random_k },
            SelectionSpec::TopK { k } => SelectionStrategy::TopK { k: *k },
            SelectionSpec::AboveAverage => SelectionStrategy::AboveAverage,
            SelectionSpec::AboveMedian => SelectionStrategy::AboveMedian,
        }
    }
}

fn scheme_label(scheme: &RewardScheme) -> String {
    match scheme {
        RewardScheme::Proportional { total } => format!("proportional_{total}"),
        RewardScheme::Balanced => "balanced".to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub structure: StructureSpec,
    pub dataset: DatasetSpec,
    pub fl: FlConfig,
    /// Metric ids: sv, loo, bv, bsv, bsv(alpha,beta), tsv.
    pub metrics: Vec<String>,
    pub attack: AttackSpec,
    pub utility: UtilityKind,
    /// Subtract the untrained model's utility from every nonempty subset.
    pub subtract_baseline: bool,
    pub reward_schemes: Vec<RewardScheme>,
    pub selection_strategies: Vec<SelectionSpec>,
    pub runs: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            structure: StructureSpec::default(),
            dataset: DatasetSpec::default(),
            fl: FlConfig::default(),
            metrics: vec![
                "sv".into(),
                "loo".into(),
                "bv".into(),
                "bsv".into(),
                "tsv".into(),
            ],
            attack: AttackSpec::default(),
            utility: UtilityKind::Accuracy,
            subtract_baseline: false,
            reward_schemes: vec![RewardScheme::Proportional { total: 100.0 }, RewardScheme::Balanced],
            selection_strategies: vec![
                SelectionSpec::TopKRandom,
                SelectionSpec::AboveAverage,
                SelectionSpec::AboveMedian,
            ],
            runs: 15,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| {
            Error::InvalidConfig(vec![format!(
                "{}: {} (line {}, column {})",
                path.display(),
                e,
                e.line(),
                e.column()
            )])
        })
    }

    /// Every violated invariant, as one human-readable line each. Empty
    /// means the config is runnable.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        if self.runs == 0 {
            diags.push("runs: must be >= 1".to_string());
        }
        let structure = match self.structure.build() {
            Ok(s) => Some(s),
            Err(e) => {
                diags.push(format!("structure: {e}"));
                None
            }
        };
        if self.metrics.is_empty() {
            diags.push("metrics: list must be nonempty".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.metrics {
            match Metric::parse(id) {
                Ok(_) => {
                    if !seen.insert(id.trim().to_ascii_lowercase()) {
                        diags.push(format!("metrics: duplicate id \"{id}\""));
                    }
                }
                Err(e) => diags.push(format!("metrics: {e}")),
            }
        }
        let d = &self.dataset;
        if d.classes < 2 {
            diags.push(format!("dataset.classes: must be >= 2, got {}", d.classes));
        }
        if d.dim < 2 {
            diags.push(format!("dataset.dim: must be >= 2, got {}", d.dim));
        }
        if d.samples_per_block == 0 {
            diags.push("dataset.samples_per_block: must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&d.skew) {
            diags.push(format!("dataset.skew: must lie in [0, 1], got {}", d.skew));
        }
        if self.fl.rounds == 0 {
            diags.push("fl.rounds: must be >= 1".to_string());
        }
        if self.fl.local_epochs == 0 {
            diags.push("fl.local_epochs: must be >= 1".to_string());
        }
        if self.fl.batch_size == 0 {
            diags.push("fl.batch_size: must be >= 1".to_string());
        }
        if !(self.fl.learning_rate > 0.0) || !self.fl.learning_rate.is_finite() {
            diags.push(format!(
                "fl.learning_rate: must be positive and finite, got {}",
                self.fl.learning_rate
            ));
        }
        for scheme in &self.reward_schemes {
            if let RewardScheme::Proportional { total } = scheme {
                if !(*total > 0.0) || !total.is_finite() {
                    diags.push(format!(
                        "reward_schemes: proportional total must be positive and finite, got {total}"
                    ));
                }
            }
        }
        if let Some(s) = &structure {
            for spec in &self.selection_strategies {
                if let SelectionSpec::TopK { k } = spec {
                    if *k == 0 || *k > s.total_blocks() {
                        diags.push(format!(
                            "selection_strategies: top-k k={k} outside 1..={}",
                            s.total_blocks()
                        ));
                    }
                }
            }
            if self.selection_strategies.contains(&SelectionSpec::TopKRandom)
                && s.total_blocks() < 2
            {
                diags.push(
                    "selection_strategies: random top-k needs at least 2 blocks".to_string(),
                );
            }
            if let AttackerSelection::Fixed { client } = self.attack.attacker {
                if client >= s.num_clients() {
                    diags.push(format!(
                        "attack.attacker: client {client} out of range 0..{}",
                        s.num_clients()
                    ));
                }
            }
        }
        diags
    }

    fn parsed_metrics(&self) -> Result<Vec<(String, Metric)>> {
        self.metrics
            .iter()
            .map(|id| {
                Metric::parse(id)
                    .map(|m| (id.trim().to_ascii_lowercase(), m))
                    .map_err(|e| Error::InvalidConfig(vec![format!("metrics: {e}")]))
            })
            .collect()
    }
}

/// Reads and validates a config file; the diagnostics list is the result.
pub fn validate_config(path: &Path) -> Result<Vec<String>> {
    Ok(ExperimentConfig::load(path)?.validate())
}

/// Rewards are missing when the scheme is undefined for that run's values
/// (proportional allocation with a zero total); the run itself still counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRun {
    pub scheme: String,
    pub truthful_rewards: Option<Vec<f64>>,
    pub attacked_rewards: Option<Vec<f64>>,
    pub truthful_attacker_reward: Option<f64>,
    pub attacked_attacker_reward: Option<f64>,
    pub change_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRun {
    pub strategy: String,
    pub truthful_selection: Vec<usize>,
    pub attacked_selection: Vec<usize>,
    pub utility_decline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRun {
    pub metric: String,
    pub truthful_block_values: Vec<f64>,
    pub attacked_block_values: Vec<f64>,
    pub truthful_client_values: Vec<f64>,
    pub attacked_client_values: Vec<f64>,
    pub attacker_change_pct: f64,
    pub others_change_pct: f64,
    /// Missing when the truthful client values are all zero yet the vectors
    /// differ, which leaves the normalization undefined.
    pub valuation_error: Option<f64>,
    pub plan_non_honest: usize,
    pub rewards: Vec<RewardRun>,
    pub selections: Vec<SelectionRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub attacker: usize,
    /// k drawn for the random top-k strategy, when configured.
    pub top_k: Option<usize>,
    pub metrics: Vec<MetricRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub statistic: String,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

/// Runs the full pipeline: per run, generate data, measure the honest
/// utility table, compute every metric truthfully and under its planned
/// attack, then derive changes, errors, rewards, selections, and declines.
/// Coefficients are extracted once per metric; within a run, every distinct
/// (subset, action) retraining happens at most once across all metrics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let diags = config.validate();
    if !diags.is_empty() {
        return Err(Error::InvalidConfig(diags));
    }
    let structure = config.structure.build()?;
    let metrics = config.parsed_metrics()?;
    let n = structure.total_blocks();

    // Coefficients and plans depend only on (metric, structure, attacker),
    // so they are computed outside the run loop and plans are cached per
    // attacker (the attacker may vary by run).
    let coeff_tables: Vec<CoefficientTable> = metrics
        .iter()
        .map(|(_, m)| extract_coefficients(*m, &structure))
        .collect::<Result<Vec<_>>>()?;
    let mut plan_cache: HashMap<(usize, usize), AttackPlan> = HashMap::new();

    let mut runs = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let seed = derive_run_seed(config.seed, run);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let attacker = match config.attack.attacker {
            AttackerSelection::Fixed { client } => client,
            AttackerSelection::RandomPerRun => rng.random_range(0..structure.num_clients()),
        };
        let top_k = if config.selection_strategies.contains(&SelectionSpec::TopKRandom) {
            Some(rng.random_range(1..n))
        } else {
            None
        };

        let dataset = generate_synthetic(
            &structure,
            config.dataset.dim,
            config.dataset.classes,
            config.dataset.samples_per_block,
            config.dataset.skew,
            seed,
        )?;
        let fl = FlConfig {
            seed,
            ..config.fl
        };
        let oracle = FlOracle::new(
            &dataset,
            &structure,
            fl,
            config.utility,
            None,
            config.subtract_baseline,
        )
        .for_attacker(attacker);
        let honest = build_utility_table(&oracle, &structure)?;

        // Retraining cache for this run: distinct non-honest (mask, action)
        // pairs, shared across metrics.
        let mut retrained: HashMap<(u64, AttackAction), f64> = HashMap::new();

        let mut metric_rows = Vec::with_capacity(metrics.len());
        for ((label, metric), coeffs) in metrics.iter().zip(&coeff_tables) {
            let truthful =
                empirical_values(*metric, coeffs, &AugmentedUtilityTable::new(honest.clone()))
                    .map_err(|e| annotate(e, run, label))?;

            let (attacked, plan_non_honest) = if config.attack.enabled {
                let metric_idx = metrics.iter().position(|(l, _)| l == label).unwrap();
                let plan = match plan_cache.entry((metric_idx, attacker)) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        let plan = match config.attack.knowledge {
                            Knowledge::Exact => plan_attack(coeffs, attacker, &structure)?,
                            Knowledge::Incomplete => plan_attack_incomplete(
                                coeffs,
                                attacker,
                                &structure,
                                &config.attack.prior,
                            )?,
                        };
                        e.insert(plan)
                    }
                };
                let needed: Vec<(u64, AttackAction)> = plan
                    .iter()
                    .filter(|(_, a)| *a != AttackAction::Honest)
                    .map(|(m, a)| (m.0, a))
                    .filter(|key| !retrained.contains_key(key))
                    .collect();
                let fresh: Vec<((u64, AttackAction), f64)> = needed
                    .par_iter()
                    .map(|&(m, a)| {
                        let v = crate::attack::ManipulableOracle::utility(&oracle, Mask(m), a);
                        ((m, a), v)
                    })
                    .collect();
                retrained.extend(fresh);

                let mut values = honest.values().to_vec();
                for (mask, action) in plan.iter() {
                    if action != AttackAction::Honest {
                        values[mask.index()] = retrained[&(mask.0, action)];
                    }
                }
                let table = UtilityTable::new(n, values).map_err(|e| annotate(e, run, label))?;
                let attacked = empirical_values(*metric, coeffs, &AugmentedUtilityTable::new(table))
                    .map_err(|e| annotate(e, run, label))?;
                (attacked, plan.num_non_honest())
            } else {
                (truthful.clone(), 0)
            };

            metric_rows.push(build_metric_row(
                label, attacker, &structure, &truthful, &attacked, plan_non_honest, config, top_k,
                &honest,
            )?);
        }

        runs.push(RunRecord {
            run,
            seed,
            attacker,
            top_k,
            metrics: metric_rows,
        });
    }

    let aggregates = aggregate(&runs);
    Ok(ExperimentReport {
        config: config.clone(),
        runs,
        aggregates,
    })
}

fn annotate(e: Error, run: usize, metric: &str) -> Error {
    match e {
        Error::CrossCheckFailed {
            metric: m,
            residual,
            context,
        } => Error::CrossCheckFailed {
            metric: m,
            residual,
            context: format!("run {run}, metric {metric}: {context}"),
        },
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn build_metric_row(
    label: &str,
    attacker: usize,
    structure: &GameStructure,
    truthful: &Valuation,
    attacked: &Valuation,
    plan_non_honest: usize,
    config: &ExperimentConfig,
    top_k: Option<usize>,
    honest_table: &UtilityTable,
) -> Result<MetricRun> {
    let attacker_change_pct = symmetric_percentage_change(
        attacked.client_values[attacker],
        truthful.client_values[attacker],
    );
    let others_change_pct =
        symmetric_percentage_change(attacked.others(attacker), truthful.others(attacker));
    let valuation_error = match crate::downstream::valuation_error(attacked, truthful) {
        Ok(e) => Some(e),
        Err(Error::UndefinedNormalization) => None,
        Err(e) => return Err(e),
    };

    let own = structure.client_mask(attacker);
    let mut rewards = Vec::with_capacity(config.reward_schemes.len());
    for scheme in &config.reward_schemes {
        let defined = |v: &Valuation| match allocate_rewards(v, *scheme) {
            Ok(r) => Ok(Some(r)),
            Err(Error::DegenerateAllocation) => Ok(None),
            Err(e) => Err(e),
        };
        let truthful_rewards = defined(truthful)?;
        let attacked_rewards = defined(attacked)?;
        let sum_own =
            |r: &Option<Vec<f64>>| r.as_ref().map(|r| own.blocks().map(|b| r[b]).sum::<f64>());
        let truthful_attacker_reward = sum_own(&truthful_rewards);
        let attacked_attacker_reward = sum_own(&attacked_rewards);
        rewards.push(RewardRun {
            scheme: scheme_label(scheme),
            change_pct: attacked_attacker_reward
                .zip(truthful_attacker_reward)
                .map(|(a, t)| symmetric_percentage_change(a, t)),
            truthful_rewards,
            attacked_rewards,
            truthful_attacker_reward,
            attacked_attacker_reward,
        });
    }

    let mut selections = Vec::with_capacity(config.selection_strategies.len());
    for spec in &config.selection_strategies {
        let strategy = spec.resolve(top_k.unwrap_or(1));
        let truthful_selection = select_blocks(truthful, strategy);
        let attacked_selection = select_blocks(attacked, strategy);
        let decline = utility_decline(truthful, attacked, strategy, honest_table);
        selections.push(SelectionRun {
            strategy: spec.label(),
            truthful_selection,
            attacked_selection,
            utility_decline: decline,
        });
    }

    Ok(MetricRun {
        metric: label.to_string(),
        truthful_block_values: truthful.block_values.clone(),
        attacked_block_values: attacked.block_values.clone(),
        truthful_client_values: truthful.client_values.clone(),
        attacked_client_values: attacked.client_values.clone(),
        attacker_change_pct,
        others_change_pct,
        valuation_error,
        plan_non_honest,
        rewards,
        selections,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / (n as f64).sqrt())
}

/// Mean and standard error of every per-run statistic, per metric, in a
/// deterministic order. Runs where a statistic is undefined are left out of
/// that statistic's column (its n records how many runs contributed); a
/// statistic defined in no run is omitted entirely.
pub fn aggregate(runs: &[RunRecord]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    if runs.is_empty() {
        return rows;
    }
    let num_metrics = runs[0].metrics.len();
    for m in 0..num_metrics {
        let metric = runs[0].metrics[m].metric.clone();
        let mut push = |statistic: &str, values: Vec<Option<f64>>| {
            let present: Vec<f64> = values.into_iter().flatten().collect();
            if present.is_empty() {
                return;
            }
            let (mean, std_error) = mean_and_stderr(&present);
            rows.push(AggregateRow {
                metric: metric.clone(),
                statistic: statistic.to_string(),
                mean,
                std_error,
                n: present.len(),
            });
        };
        push(
            "attacker_change_pct",
            runs.iter().map(|r| Some(r.metrics[m].attacker_change_pct)).collect(),
        );
        push(
            "others_change_pct",
            runs.iter().map(|r| Some(r.metrics[m].others_change_pct)).collect(),
        );
        push(
            "valuation_error",
            runs.iter().map(|r| r.metrics[m].valuation_error).collect(),
        );
        for (s, reward) in runs[0].metrics[m].rewards.iter().enumerate() {
            push(
                &format!("reward_change_pct:{}", reward.scheme),
                runs.iter().map(|r| r.metrics[m].rewards[s].change_pct).collect(),
            );
        }
        for (s, sel) in runs[0].metrics[m].selections.iter().enumerate() {
            push(
                &format!("utility_decline:{}", sel.strategy),
                runs.iter()
                    .map(|r| Some(r.metrics[m].selections[s].utility_decline))
                    .collect(),
            );
        }
    }
    rows
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Both,
}

impl ReportFormat {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "both" => Ok(ReportFormat::Both),
            other => Err(format!("unknown format \"{other}\" (expected json, csv, or both)")),
        }
    }
}

/// Writes report.json and/or report.csv into the output directory and
/// returns the paths written.
pub fn write_report(
    report: &ExperimentReport,
    dir: &Path,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut written = Vec::new();
    if format != ReportFormat::Csv {
        let path = dir.join("report.json");
        let f = std::fs::File::create(&path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), report)?;
        written.push(path);
    }
    if format != ReportFormat::Json {
        let path = dir.join("report.csv");
        write_report_csv(report, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// One CSV row per (run, metric); columns are fixed by the config, so the
/// bytes are a pure function of config and seed.
fn write_report_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    let first = report.runs.first();
    let num_clients = first
        .map(|r| r.metrics[0].truthful_client_values.len())
        .unwrap_or(0);
    let mut header = vec![
        "run".to_string(),
        "seed".to_string(),
        "attacker".to_string(),
        "top_k".to_string(),
        "metric".to_string(),
        "attacker_change_pct".to_string(),
        "others_change_pct".to_string(),
        "valuation_error".to_string(),
        "plan_non_honest".to_string(),
    ];
    for i in 0..num_clients {
        header.push(format!("truthful_client_{i}"));
    }
    for i in 0..num_clients {
        header.push(format!("attacked_client_{i}"));
    }
    if let Some(r) = first {
        for reward in &r.metrics[0].rewards {
            header.push(format!("reward_truthful:{}", reward.scheme));
            header.push(format!("reward_attacked:{}", reward.scheme));
            header.push(format!("reward_change_pct:{}", reward.scheme));
        }
        for sel in &r.metrics[0].selections {
            header.push(format!("selection_truthful:{}", sel.strategy));
            header.push(format!("selection_attacked:{}", sel.strategy));
            header.push(format!("utility_decline:{}", sel.strategy));
        }
    }
    w.write_record(&header)?;

    let fmt = |v: f64| format!("{v}");
    let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    let set = |s: &[usize]| {
        s.iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join("|")
    };
    for run in &report.runs {
        for mr in &run.metrics {
            let mut rec = vec![
                run.run.to_string(),
                run.seed.to_string(),
                run.attacker.to_string(),
                run.top_k.map(|k| k.to_string()).unwrap_or_default(),
                mr.metric.clone(),
                fmt(mr.attacker_change_pct),
                fmt(mr.others_change_pct),
                opt(mr.valuation_error),
                mr.plan_non_honest.to_string(),
            ];
            for v in &mr.truthful_client_values {
                rec.push(fmt(*v));
            }
            for v in &mr.attacked_client_values {
                rec.push(fmt(*v));
            }
            for reward in &mr.rewards {
                rec.push(opt(reward.truthful_attacker_reward));
                rec.push(opt(reward.attacked_attacker_reward));
                rec.push(opt(reward.change_pct));
            }
            for sel in &mr.selections {
                rec.push(set(&sel.truthful_selection));
                rec.push(set(&sel.attacked_selection));
                rec.push(fmt(sel.utility_decline));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(())
}

/// Writes the coefficient table for one metric on the configured structure,
/// with the exact-knowledge attack action per subset, plus consistency
/// summaries (closed-form match for the Shapley metric, support structure
/// for the client-level two-stage metric).
pub fn dump_coefficients(
    config: &ExperimentConfig,
    metric_id: &str,
    dir: &Path,
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    let structure = config.structure.build()?;
    let metric =
        Metric::parse(metric_id).map_err(|e| Error::InvalidConfig(vec![format!("metric: {e}")]))?;
    let coeffs = extract_coefficients(metric, &structure)?;
    let attacker = match config.attack.attacker {
        AttackerSelection::Fixed { client } => client,
        AttackerSelection::RandomPerRun => 0,
    };
    let plan = plan_attack(&coeffs, attacker, &structure)?;

    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut written = Vec::new();
    let stem = format!("coeffs_{}", metric.id());
    if format != ReportFormat::Csv {
        let path = dir.join(format!("{stem}.json"));
        coeffs.write_json(&path)?;
        written.push(path);
    }
    if format != ReportFormat::Json {
        let path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(Error::Csv)?;
        let n = structure.total_blocks();
        let mut header = vec!["mask".to_string(), "size".to_string(), "action".to_string()];
        for b in 0..n {
            header.push(format!("block_{b}"));
        }
        for i in 0..structure.num_clients() {
            header.push(format!("client_{i}"));
        }
        w.write_record(&header)?;
        for mask in structure.enumerate_subsets() {
            let action = if mask == structure.full_mask() {
                "none".to_string()
            } else {
                plan.action(mask).name().to_string()
            };
            let mut rec = vec![mask.0.to_string(), mask.len().to_string(), action];
            for b in 0..n {
                rec.push(format!("{}", coeffs.block_coeff(b, mask)));
            }
            for i in 0..structure.num_clients() {
                rec.push(format!("{}", coeffs.client_coeff(i, mask)));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Cross-check summary for a dumped coefficient table; lines are printed by
/// the CLI next to the files.
pub fn coefficient_checks(config: &ExperimentConfig, metric_id: &str) -> Result<Vec<String>> {
    let structure = config.structure.build()?;
    let metric =
        Metric::parse(metric_id).map_err(|e| Error::InvalidConfig(vec![format!("metric: {e}")]))?;
    let coeffs = extract_coefficients(metric, &structure)?;
    let mut lines = Vec::new();
    match metric {
        Metric::Shapley => {
            let closed = closed_form_sv_client_coeffs(&structure);
            let mut worst: f64 = 0.0;
            for mask in structure.enumerate_subsets() {
                for i in 0..structure.num_clients() {
                    worst = worst
                        .max((coeffs.client_coeff(i, mask) - closed.client_coeff(i, mask)).abs());
                }
            }
            lines.push(format!(
                "closed-form client coefficients: max residual {worst:.3e} ({})",
                if worst < 1e-9 { "ok" } else { "MISMATCH" }
            ));
        }
        Metric::TruthShapley => {
            let mut worst: f64 = 0.0;
            for mask in structure.enumerate_subsets() {
                let is_union = (0..structure.num_clients()).all(|i| {
                    let inter = mask.intersect(structure.client_mask(i));
                    inter.is_empty() || inter == structure.client_mask(i)
                });
                if !is_union {
                    for i in 0..structure.num_clients() {
                        worst = worst.max(coeffs.client_coeff(i, mask).abs());
                    }
                }
            }
            lines.push(format!(
                "support restricted to full-client unions: max off-support coefficient {worst:.3e} ({})",
                if worst < 1e-12 { "ok" } else { "MISMATCH" }
            ));
        }
        Metric::Loo => {
            let full = structure.full_mask();
            let carriers = structure
                .enumerate_subsets()
                .filter(|&mask| {
                    (0..structure.total_blocks()).any(|b| coeffs.block_coeff(b, mask).abs() > 1e-12)
                })
                .count();
            let expected = structure.total_blocks() + 1;
            lines.push(format!(
                "masks with nonzero block coefficients: {carriers} (expected {expected}: the grand coalition and each leave-one-out set) ({})",
                if carriers == expected { "ok" } else { "MISMATCH" }
            ));
            let _ = full;
        }
        _ => {}
    }
    Ok(lines)
}
