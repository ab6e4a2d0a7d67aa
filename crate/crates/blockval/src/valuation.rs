//! Exact valuation metrics over complete utility tables.
//!
//! Every metric here is linear in the utility table, so each one can be
//! written as phi_{i,j}(v) = sum_S beta_{i,j}(S) v(S). The coefficients are
//! recovered by evaluating the metric on basis tables (1 on one subset, 0
//! elsewhere); the closed-form client-level Shapley coefficients act as an
//! independent cross-check of that extraction.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::game::{GameStructure, Mask, UtilityTable};

/// Identifier of a supported valuation metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Shapley,
    Loo,
    Banzhaf,
    BetaShapley { alpha: f64, beta: f64 },
    TruthShapley,
}

impl Metric {
    /// Short stable identifier used in reports and CLI arguments.
    pub fn id(&self) -> &'static str {
        match self {
            Metric::Shapley => "sv",
            Metric::Loo => "loo",
            Metric::Banzhaf => "bv",
            Metric::BetaShapley { .. } => "bsv",
            Metric::TruthShapley => "tsv",
        }
    }

    /// Parses a metric id as used in configs and on the command line:
    /// sv, loo, bv, tsv, bsv (defaulting to Beta(16, 1)), or bsv(alpha,beta).
    pub fn parse(id: &str) -> std::result::Result<Metric, String> {
        let t = id.trim().to_ascii_lowercase();
        match t.as_str() {
            "sv" | "shapley" => Ok(Metric::Shapley),
            "loo" | "leave_one_out" => Ok(Metric::Loo),
            "bv" | "banzhaf" => Ok(Metric::Banzhaf),
            "tsv" | "truth_shapley" => Ok(Metric::TruthShapley),
            "bsv" | "beta_shapley" => Ok(Metric::BetaShapley {
                alpha: 16.0,
                beta: 1.0,
            }),
            _ => {
                if let Some(args) = t
                    .strip_prefix("bsv(")
                    .and_then(|rest| rest.strip_suffix(')'))
                {
                    let parts: Vec<&str> = args.split(',').collect();
                    if parts.len() == 2 {
                        let alpha = parts[0].trim().parse::<f64>();
                        let beta = parts[1].trim().parse::<f64>();
                        if let (Ok(alpha), Ok(beta)) = (alpha, beta) {
                            if alpha > 0.0 && beta > 0.0 {
                                return Ok(Metric::BetaShapley { alpha, beta });
                            }
                        }
                    }
                }
                Err(format!(
                    "unknown metric id \"{id}\" (expected sv, loo, bv, tsv, bsv, or bsv(alpha,beta))"
                ))
            }
        }
    }

    /// Computes the metric on a complete utility table.
    pub fn evaluate(&self, table: &UtilityTable, structure: &GameStructure) -> Result<Valuation> {
        let n = structure.total_blocks();
        match self {
            Metric::Shapley => semivalue_tagged(table, structure, &shapley_weights(n), "sv"),
            Metric::Banzhaf => semivalue_tagged(table, structure, &banzhaf_weights(n), "bv"),
            Metric::BetaShapley { alpha, beta } => {
                semivalue_tagged(table, structure, &beta_weights(n, *alpha, *beta)?, "bsv")
            }
            Metric::Loo => loo(table, structure),
            Metric::TruthShapley => truth_shapley(table, structure),
        }
    }
}

/// Block-level values phi_{i,j} together with the per-client sums phi_i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Valuation {
    pub metric: String,
    pub block_values: Vec<f64>,
    pub client_values: Vec<f64>,
}

impl Valuation {
    /// Sum of all block values.
    pub fn total(&self) -> f64 {
        self.block_values.iter().sum()
    }

    /// Sum of every client's value except `client` (phi_{-i}).
    ///
    /// Summed term by term rather than as total minus phi_i so that two
    /// valuations with bit-identical components have bit-identical sums.
    pub fn others(&self, client: usize) -> f64 {
        self.client_values
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != client)
            .map(|(_, v)| v)
            .sum()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    /// CSV rows: (kind, index, value) with kind in {block, client}, preceded
    /// by a metric record.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(Error::Csv)?;
        w.write_record(["metric", &self.metric])?;
        w.write_record(["kind", "index", "value"])?;
        for (j, v) in self.block_values.iter().enumerate() {
            w.write_record(["block", &j.to_string(), &format!("{v}")])?;
        }
        for (i, v) in self.client_values.iter().enumerate() {
            w.write_record(["client", &i.to_string(), &format!("{v}")])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .has_headers(false)
            .from_path(path)
            .map_err(Error::Csv)?;
        let mut metric = String::new();
        let mut block_values = Vec::new();
        let mut client_values = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(Error::Csv)?;
            match (k, rec.get(0)) {
                (0, Some("metric")) => metric = rec.get(1).unwrap_or("").to_string(),
                (1, Some("kind")) => {}
                (_, Some("block")) => block_values.push(parse_f64(rec.get(2))?),
                (_, Some("client")) => client_values.push(parse_f64(rec.get(2))?),
                _ => return Err(Error::InvalidTable(format!("unexpected record {k}"))),
            }
        }
        Ok(Valuation {
            metric,
            block_values,
            client_values,
        })
    }
}

fn parse_f64(s: Option<&str>) -> Result<f64> {
    s.unwrap_or("")
        .parse()
        .map_err(|e| Error::InvalidTable(format!("bad float: {e}")))
}

/// Per-subset weights w(s) applied to each individual subset of size s in a
/// semivalue sum, for s = 0..n-1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemivalueWeights {
    weights: Vec<f64>,
}

impl SemivalueWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        for (s, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidWeights(format!("w({s}) = {w}")));
            }
        }
        Ok(SemivalueWeights { weights })
    }

    pub fn get(&self, size: usize) -> f64 {
        self.weights[size]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Shapley weights w(s) = s! (n-s-1)! / n!, built by incremental ratios so no
/// factorial is ever materialized.
pub fn shapley_weights(n: usize) -> SemivalueWeights {
    assert!(n >= 1);
    let mut w = Vec::with_capacity(n);
    let mut cur = 1.0 / n as f64; // w(0) = (n-1)!/n! = 1/n
    w.push(cur);
    for s in 1..n {
        cur *= s as f64 / (n - s) as f64; // w(s)/w(s-1) = s/(n-s)
        w.push(cur);
    }
    SemivalueWeights { weights: w }
}

/// Banzhaf weights: the constant 2^{-(n-1)} per subset.
pub fn banzhaf_weights(n: usize) -> SemivalueWeights {
    assert!(n >= 1);
    SemivalueWeights {
        weights: vec![2f64.powi(-(n as i32 - 1)); n],
    }
}

/// Beta Shapley weights: w(s) proportional to B(beta + s, alpha + n - 1 - s),
/// normalized so that sum_s C(n-1, s) w(s) = 1. Computed in log space.
///
/// The convention is pinned by the recovery identity: alpha = beta = 1 yields
/// exactly the Shapley weights.
pub fn beta_weights(n: usize, alpha: f64, beta: f64) -> Result<SemivalueWeights> {
    if n < 1 {
        return Err(Error::InvalidWeights("n must be >= 1".into()));
    }
    if !(alpha > 0.0) || !(beta > 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidBetaParams { alpha, beta });
    }
    let nf = n as f64;
    let ln_b: Vec<f64> = (0..n)
        .map(|s| ln_beta(beta + s as f64, alpha + nf - 1.0 - s as f64))
        .collect();
    // ln C(n-1, s) + ln B(...), combined with log-sum-exp for the normalizer.
    let terms: Vec<f64> = (0..n)
        .map(|s| {
            let ln_choose =
                ln_gamma(nf) - ln_gamma(s as f64 + 1.0) - ln_gamma(nf - s as f64);
            ln_choose + ln_b[s]
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    let weights: Vec<f64> = ln_b.iter().map(|t| (t - lse).exp()).collect();
    SemivalueWeights::new(weights)
}

fn check_table(table: &UtilityTable, structure: &GameStructure) -> Result<()> {
    if table.num_blocks() != structure.total_blocks() {
        return Err(Error::InvalidTable(format!(
            "table has {} blocks, structure has {}",
            table.num_blocks(),
            structure.total_blocks()
        )));
    }
    Ok(())
}

fn client_sums(block_values: &[f64], structure: &GameStructure) -> Vec<f64> {
    let mut client_values = vec![0.0; structure.num_clients()];
    for (b, &v) in block_values.iter().enumerate() {
        client_values[structure.block_owner(b)] += v;
    }
    client_values
}

/// Generic semivalue: phi_b = sum over S not containing b of
/// w(|S|) (v(S u {b}) - v(S)).
pub fn semivalue(
    table: &UtilityTable,
    structure: &GameStructure,
    weights: &SemivalueWeights,
) -> Result<Valuation> {
    semivalue_tagged(table, structure, weights, "semivalue")
}

fn semivalue_tagged(
    table: &UtilityTable,
    structure: &GameStructure,
    weights: &SemivalueWeights,
    metric: &str,
) -> Result<Valuation> {
    check_table(table, structure)?;
    let n = structure.total_blocks();
    if weights.len() != n {
        return Err(Error::InvalidWeights(format!(
            "expected {} weights, got {}",
            n,
            weights.len()
        )));
    }
    let values = table.values();
    let block_values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|b| {
            let bit = 1usize << b;
            let mut acc = 0.0;
            for m in 0..values.len() {
                if m & bit != 0 {
                    continue;
                }
                let s = m.count_ones() as usize;
                acc += weights.get(s) * (values[m | bit] - values[m]);
            }
            acc
        })
        .collect();
    let client_values = client_sums(&block_values, structure);
    Ok(Valuation {
        metric: metric.to_string(),
        block_values,
        client_values,
    })
}

/// Shapley value of every block.
pub fn shapley(table: &UtilityTable, structure: &GameStructure) -> Result<Valuation> {
    Metric::Shapley.evaluate(table, structure)
}

/// Leave-one-out value: phi_b = v(D_N) - v(D_N minus {b}).
pub fn loo(table: &UtilityTable, structure: &GameStructure) -> Result<Valuation> {
    check_table(table, structure)?;
    let full = structure.full_mask();
    let grand = table.get(full);
    let block_values: Vec<f64> = (0..structure.total_blocks())
        .map(|b| grand - table.get(full.remove(b)))
        .collect();
    let client_values = client_sums(&block_values, structure);
    Ok(Valuation {
        metric: "loo".to_string(),
        block_values,
        client_values,
    })
}

/// Two-stage metric: the client level is the Shapley value of the game played
/// by whole clients (coalition utility v of the union of their full block
/// sets); the block level splits each client's value by an inner Shapley
/// computation on the induced game
///   u_i(S) = sum over client coalitions C excluding i of
///            w(|C|) (v(S u D_C) - v(D_C)),
/// i.e. client i's stage-one value when it contributes only S while everyone
/// else contributes everything. client_values[i] = u_i(D_i), which equals the
/// stage-one value directly.
pub fn truth_shapley(table: &UtilityTable, structure: &GameStructure) -> Result<Valuation> {
    check_table(table, structure)?;
    let n = structure.total_blocks();
    let nc = structure.num_clients();
    let coalition_mask: Vec<Mask> = (0..1u64 << nc)
        .map(|c| {
            let mut m = Mask::EMPTY;
            for i in 0..nc {
                if c >> i & 1 == 1 {
                    m = m.union(structure.client_mask(i));
                }
            }
            m
        })
        .collect();
    let w_outer = shapley_weights(nc);
    let mut block_values = vec![0.0; n];
    let mut client_values = vec![0.0; nc];
    for i in 0..nc {
        let own: Vec<usize> = structure.client_mask(i).blocks().collect();
        let mi = own.len();
        let mut u = vec![0.0; 1usize << mi];
        for (sl, slot) in u.iter_mut().enumerate() {
            let mut s_glob = Mask::EMPTY;
            for (j, &b) in own.iter().enumerate() {
                if sl >> j & 1 == 1 {
                    s_glob = s_glob.insert(b);
                }
            }
            let mut acc = 0.0;
            for (c, &dc) in coalition_mask.iter().enumerate() {
                if c >> i & 1 == 1 {
                    continue;
                }
                acc += w_outer.get(c.count_ones() as usize)
                    * (table.get(s_glob.union(dc)) - table.get(dc));
            }
            *slot = acc;
        }
        let w_inner = shapley_weights(mi);
        for (j, &b) in own.iter().enumerate() {
            let bit = 1usize << j;
            let mut acc = 0.0;
            for (sl, &us) in u.iter().enumerate() {
                if sl & bit != 0 {
                    continue;
                }
                acc += w_inner.get(sl.count_ones() as usize) * (u[sl | bit] - us);
            }
            block_values[b] = acc;
        }
        client_values[i] = u[(1usize << mi) - 1];
    }
    Ok(Valuation {
        metric: "tsv".to_string(),
        block_values,
        client_values,
    })
}

/// Linear coefficients beta_{i,j}(S) and beta_i(S) of a metric on a fixed
/// structure: the sensitivity of each value to each subset's utility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    metric: String,
    structure: GameStructure,
    /// [block][mask]; empty for client-level-only tables.
    block_coeffs: Vec<Vec<f64>>,
    /// [client][mask]; always present, and always the per-owner sum of the
    /// block coefficients when those exist.
    client_coeffs: Vec<Vec<f64>>,
}

impl CoefficientTable {
    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn structure(&self) -> &GameStructure {
        &self.structure
    }

    pub fn num_masks(&self) -> usize {
        self.structure.num_subsets()
    }

    pub fn has_block_level(&self) -> bool {
        !self.block_coeffs.is_empty()
    }

    pub fn block_coeff(&self, block: usize, mask: Mask) -> f64 {
        self.block_coeffs[block][mask.index()]
    }

    pub fn client_coeff(&self, client: usize, mask: Mask) -> f64 {
        self.client_coeffs[client][mask.index()]
    }

    /// beta_{-i}(S): sum of every other client's coefficient. Derived, never
    /// stored.
    pub fn others_coeff(&self, client: usize, mask: Mask) -> f64 {
        self.client_coeffs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != client)
            .map(|(_, col)| col[mask.index()])
            .sum()
    }

    /// sum_S beta_{i,j}(S) v(S) for one block over a dense value vector.
    pub fn linear_block_value(&self, block: usize, values: &[f64]) -> f64 {
        dot(&self.block_coeffs[block], values)
    }

    pub fn linear_client_value(&self, client: usize, values: &[f64]) -> f64 {
        dot(&self.client_coeffs[client], values)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    /// CSV rows: mask, then one block coefficient column per block, then one
    /// client coefficient column per client.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(Error::Csv)?;
        w.write_record(["metric", &self.metric])?;
        let mut header = vec!["mask".to_string()];
        for b in 0..self.structure.total_blocks() {
            header.push(format!("block_{b}"));
        }
        for i in 0..self.structure.num_clients() {
            header.push(format!("client_{i}"));
        }
        w.write_record(&header)?;
        for m in 0..self.num_masks() {
            let mask = Mask(m as u64);
            let mut rec = vec![m.to_string()];
            if self.has_block_level() {
                for b in 0..self.structure.total_blocks() {
                    rec.push(format!("{}", self.block_coeff(b, mask)));
                }
            } else {
                for _ in 0..self.structure.total_blocks() {
                    rec.push(String::new());
                }
            }
            for i in 0..self.structure.num_clients() {
                rec.push(format!("{}", self.client_coeff(i, mask)));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Recovers the linear coefficients of a metric by evaluating it on every
/// basis table delta_S (utility 1 on S, 0 elsewhere): the block values of
/// phi(delta_S) are exactly beta_{i,j}(S).
///
/// This works uniformly for every linear metric; the closed-form Shapley
/// client coefficients are used as a cross-check in tests, not as the
/// implementation.
/// Coefficients below this magnitude are rounding residue of cancellations
/// that are zero in exact arithmetic (genuine nonzero coefficients of the
/// supported metrics are orders of magnitude larger). They are snapped to
/// exact zero so that sign-based consumers, the attack planner above all,
/// treat them as the zeros they are.
const COEFF_SNAP: f64 = 1e-12;

pub fn extract_coefficients(metric: Metric, structure: &GameStructure) -> Result<CoefficientTable> {
    let n = structure.total_blocks();
    let num_masks = structure.num_subsets();
    let per_mask: Vec<Valuation> = (0..num_masks)
        .into_par_iter()
        .map(|s| {
            let mut values = vec![0.0; num_masks];
            values[s] = 1.0;
            let basis = UtilityTable::raw(n, values)?;
            metric.evaluate(&basis, structure)
        })
        .collect::<Result<Vec<_>>>()?;
    let snap = |v: f64| if v.abs() < COEFF_SNAP { 0.0 } else { v };
    let block_coeffs: Vec<Vec<f64>> = (0..n)
        .map(|b| per_mask.iter().map(|v| snap(v.block_values[b])).collect())
        .collect();
    // Client coefficients are the sums of the owned (already snapped) block
    // coefficients, re-snapped because a sum of genuine values can itself be
    // a cancellation that exact arithmetic would make zero.
    let client_coeffs: Vec<Vec<f64>> = (0..structure.num_clients())
        .map(|i| {
            let own = structure.client_mask(i);
            (0..num_masks)
                .map(|m| snap(own.blocks().map(|b| block_coeffs[b][m]).sum()))
                .collect()
        })
        .collect();
    Ok(CoefficientTable {
        metric: metric.id().to_string(),
        structure: structure.clone(),
        block_coeffs,
        client_coeffs,
    })
}

/// Closed-form client-level Shapley coefficients:
///   beta_i(S) = (|D_i^S| n - |D_i| |S|) (|S|-1)! (n-|S|-1)! / n!   for proper
///   nonempty S, |D_i|/n at S = D_N, and -|D_i|/n at S = empty, with
///   n = |D_N|.
///
/// Returns a client-level-only table (no block coefficients).
pub fn closed_form_sv_client_coeffs(structure: &GameStructure) -> CoefficientTable {
    let n = structure.total_blocks();
    let nf = n as f64;
    let num_masks = structure.num_subsets();
    // g[s] = (s-1)! (n-s-1)! / n! for 1 <= s <= n-1, by incremental ratios.
    let mut g = vec![0.0; n.max(2)];
    if n >= 2 {
        g[1] = 1.0 / (nf * (nf - 1.0));
        for s in 2..n {
            g[s] = g[s - 1] * (s as f64 - 1.0) / (nf - s as f64);
        }
    }
    let client_coeffs: Vec<Vec<f64>> = (0..structure.num_clients())
        .map(|i| {
            let own = structure.client_mask(i);
            let mi = own.len() as f64;
            (0..num_masks)
                .map(|m| {
                    let mask = Mask(m as u64);
                    let s = mask.len();
                    if s == 0 {
                        -mi / nf
                    } else if s == n {
                        mi / nf
                    } else {
                        let own_in = mask.intersect(own).len() as f64;
                        (own_in * nf - mi * s as f64) * g[s]
                    }
                })
                .collect()
        })
        .collect();
    CoefficientTable {
        metric: "sv".to_string(),
        structure: structure.clone(),
        block_coeffs: Vec::new(),
        client_coeffs,
    }
}
