//! Axiom checkers for valuation metrics.
//!
//! Each axiom is verified constructively: from every supplied game we build a
//! witness game that satisfies the axiom's hypothesis by construction, then
//! check the metric's output satisfies the conclusion. A failure therefore
//! comes with a concrete counterexample (game index, the blocks or clients
//! involved, and the residual).
//!
//! Block-level axioms (EFF, LIN, DUM, SYM) quantify over individual blocks.
//! The client-level and in-block variants (DUM-C, SYM-C, DUM-IB, SYM-IB)
//! quantify over whole clients or over blocks within one client. The dummy
//! and symmetry hypotheses are imposed globally (over every subset of the
//! witness game), which is the strongest hypothesis and hence the weakest,
//! most defensible form of each axiom.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::game::{GameStructure, Mask, UtilityTable};
use crate::valuation::Metric;

pub const DEFAULT_AXIOM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxiomId {
    /// Block values sum to the grand-coalition utility.
    Eff,
    /// Values are additive across utility tables.
    Lin,
    /// A block with constant marginal contribution c is valued c.
    Dum,
    /// Interchangeable blocks receive equal values.
    Sym,
    /// A client whose dataset contributes a constant c to every client
    /// coalition is valued c.
    DumC,
    /// A dummy block is valued at its constant marginal, checked per block
    /// within its owning client.
    DumIb,
    /// Clients with interchangeable datasets receive equal values.
    SymC,
    /// Interchangeable blocks of the same client receive equal values.
    SymIb,
}

impl AxiomId {
    pub const ALL: [AxiomId; 8] = [
        AxiomId::Eff,
        AxiomId::Lin,
        AxiomId::Dum,
        AxiomId::Sym,
        AxiomId::DumC,
        AxiomId::DumIb,
        AxiomId::SymC,
        AxiomId::SymIb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AxiomId::Eff => "EFF",
            AxiomId::Lin => "LIN",
            AxiomId::Dum => "DUM",
            AxiomId::Sym => "SYM",
            AxiomId::DumC => "DUM-C",
            AxiomId::DumIb => "DUM-IB",
            AxiomId::SymC => "SYM-C",
            AxiomId::SymIb => "SYM-IB",
        }
    }
}

/// Outcome of one axiom over a whole list of games.
#[derive(Clone, Debug)]
pub struct AxiomReport {
    pub axiom: AxiomId,
    pub passed: bool,
    /// Number of individual witness checks performed.
    pub checks: usize,
    pub max_residual: f64,
    /// First failing check, if any.
    pub counterexample: Option<Counterexample>,
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub game: usize,
    pub detail: String,
    pub residual: f64,
}

struct Recorder {
    axiom: AxiomId,
    tol: f64,
    checks: usize,
    max_residual: f64,
    counterexample: Option<Counterexample>,
}

impl Recorder {
    fn new(axiom: AxiomId, tol: f64) -> Self {
        Recorder {
            axiom,
            tol,
            checks: 0,
            max_residual: 0.0,
            counterexample: None,
        }
    }

    fn record(&mut self, game: usize, residual: f64, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if residual > self.max_residual {
            self.max_residual = residual;
        }
        if residual > self.tol && self.counterexample.is_none() {
            self.counterexample = Some(Counterexample {
                game,
                detail: detail(),
                residual,
            });
        }
    }

    fn finish(self) -> AxiomReport {
        AxiomReport {
            axiom: self.axiom,
            passed: self.counterexample.is_none(),
            checks: self.checks,
            max_residual: self.max_residual,
            counterexample: self.counterexample,
        }
    }
}

/// Runs every axiom check against `metric` on the supplied games.
///
/// All eight axioms are always evaluated; callers decide which ones a given
/// metric is supposed to satisfy. Checks that need structure (a second
/// client, a client with two blocks) are skipped on games lacking it, which
/// shows up as a lower check count rather than a failure.
pub fn check_axioms(
    metric: Metric,
    games: &[(GameStructure, UtilityTable)],
    tol: f64,
) -> Result<Vec<AxiomReport>> {
    let mut eff = Recorder::new(AxiomId::Eff, tol);
    let mut lin = Recorder::new(AxiomId::Lin, tol);
    let mut dum = Recorder::new(AxiomId::Dum, tol);
    let mut sym = Recorder::new(AxiomId::Sym, tol);
    let mut dum_c = Recorder::new(AxiomId::DumC, tol);
    let mut dum_ib = Recorder::new(AxiomId::DumIb, tol);
    let mut sym_c = Recorder::new(AxiomId::SymC, tol);
    let mut sym_ib = Recorder::new(AxiomId::SymIb, tol);

    for (g, (structure, table)) in games.iter().enumerate() {
        let n = structure.total_blocks();
        let base = metric.evaluate(table, structure)?;

        eff.record(g, (base.total() - table.grand()).abs(), || {
            format!("sum {} vs grand {}", base.total(), table.grand())
        });

        // LIN: partner table derived deterministically from the game index.
        let partner = lin_partner(table, g as u64);
        let sum_table = add_tables(table, &partner)?;
        let vp = metric.evaluate(&partner, structure)?;
        let vs = metric.evaluate(&sum_table, structure)?;
        for b in 0..n {
            let r = (vs.block_values[b] - base.block_values[b] - vp.block_values[b]).abs();
            lin.record(g, r, || format!("block {b}"));
        }
        for i in 0..structure.num_clients() {
            let r = (vs.client_values[i] - base.client_values[i] - vp.client_values[i]).abs();
            lin.record(g, r, || format!("client {i}"));
        }

        // DUM and DUM-IB share the witness: make block b a global dummy with
        // marginal c, then its value must be c. DUM-IB reads the same check
        // through the owning client's block values.
        for b in 0..n {
            let (w, c) = dummy_block_witness(table, b);
            let v = metric.evaluate(&w, structure)?;
            let r = (v.block_values[b] - c).abs();
            dum.record(g, r, || format!("block {b}, marginal {c}"));
            dum_ib.record(g, r, || {
                format!("client {}, block {b}, marginal {c}", structure.block_owner(b))
            });
        }

        // SYM: every block pair; SYM-IB: pairs within one client.
        for b1 in 0..n {
            for b2 in b1 + 1..n {
                let w = symmetric_block_witness(table, b1, b2);
                let v = metric.evaluate(&w, structure)?;
                let r = (v.block_values[b1] - v.block_values[b2]).abs();
                sym.record(g, r, || format!("blocks {b1} and {b2}"));
                if structure.block_owner(b1) == structure.block_owner(b2) {
                    sym_ib.record(g, r, || {
                        format!("client {}, blocks {b1} and {b2}", structure.block_owner(b1))
                    });
                }
            }
        }

        // DUM-C: make client i's full dataset contribute a constant c to
        // every client coalition.
        for i in 0..structure.num_clients() {
            let (w, c) = dummy_client_witness(table, structure, i);
            let v = metric.evaluate(&w, structure)?;
            let r = (v.client_values[i] - c).abs();
            dum_c.record(g, r, || format!("client {i}, marginal {c}"));
        }

        // SYM-C: make two clients' full datasets interchangeable.
        for i1 in 0..structure.num_clients() {
            for i2 in i1 + 1..structure.num_clients() {
                let w = symmetric_client_witness(table, structure, i1, i2);
                let v = metric.evaluate(&w, structure)?;
                let r = (v.client_values[i1] - v.client_values[i2]).abs();
                sym_c.record(g, r, || format!("clients {i1} and {i2}"));
            }
        }
    }

    Ok(vec![
        eff.finish(),
        lin.finish(),
        dum.finish(),
        sym.finish(),
        dum_c.finish(),
        dum_ib.finish(),
        sym_c.finish(),
        sym_ib.finish(),
    ])
}

/// Deterministic partner table for linearity checks: pseudo-random utilities
/// keyed by the salt, with the empty set fixed at zero.
fn lin_partner(table: &UtilityTable, salt: u64) -> UtilityTable {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11AA_2200 ^ salt);
    let mut values: Vec<f64> = (0..table.values().len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    values[0] = 0.0;
    UtilityTable::new(table.num_blocks(), values).unwrap()
}

fn add_tables(a: &UtilityTable, b: &UtilityTable) -> Result<UtilityTable> {
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x + y)
        .collect();
    UtilityTable::new(a.num_blocks(), values)
}

/// Witness with block `b` a global dummy: w(S u {b}) = w(S) + c for every S,
/// with c = v({b}). Returns (witness, c).
pub fn dummy_block_witness(table: &UtilityTable, b: usize) -> (UtilityTable, f64) {
    let n = table.num_blocks();
    let bit = 1usize << b;
    let c = table.get(Mask::singleton(b));
    let values: Vec<f64> = (0..1usize << n)
        .map(|m| {
            if m & bit == 0 {
                table.values()[m]
            } else {
                table.values()[m & !bit] + c
            }
        })
        .collect();
    (UtilityTable::new(n, values).unwrap(), c)
}

/// Witness invariant under swapping blocks `b1` and `b2`: utilities of masks
/// containing exactly b2 are overwritten with the b1 counterpart.
pub fn symmetric_block_witness(table: &UtilityTable, b1: usize, b2: usize) -> UtilityTable {
    let n = table.num_blocks();
    let bit1 = 1usize << b1;
    let bit2 = 1usize << b2;
    let values: Vec<f64> = (0..1usize << n)
        .map(|m| {
            if m & bit2 != 0 && m & bit1 == 0 {
                table.values()[(m & !bit2) | bit1]
            } else {
                table.values()[m]
            }
        })
        .collect();
    UtilityTable::new(n, values).unwrap()
}

/// Witness with client `i` a dummy at the client-coalition level: for every
/// coalition C of other clients, w(D_C u D_i) = w(D_C) + c with c = v(D_i).
/// Only full-union masks are adjusted; nothing else moves.
pub fn dummy_client_witness(
    table: &UtilityTable,
    structure: &GameStructure,
    i: usize,
) -> (UtilityTable, f64) {
    let nc = structure.num_clients();
    let di = structure.client_mask(i);
    let c = table.get(di);
    let mut values = table.values().to_vec();
    for coalition in 0..1u64 << nc {
        if coalition >> i & 1 == 1 {
            continue;
        }
        let mut dc = Mask::EMPTY;
        for j in 0..nc {
            if coalition >> j & 1 == 1 {
                dc = dc.union(structure.client_mask(j));
            }
        }
        values[dc.union(di).index()] = values[dc.index()] + c;
    }
    (
        UtilityTable::new(structure.total_blocks(), values).unwrap(),
        c,
    )
}

/// Witness where clients `i1` and `i2` have interchangeable full datasets:
/// every coalition utility involving exactly one of them is equalized.
pub fn symmetric_client_witness(
    table: &UtilityTable,
    structure: &GameStructure,
    i1: usize,
    i2: usize,
) -> UtilityTable {
    let nc = structure.num_clients();
    let d1 = structure.client_mask(i1);
    let d2 = structure.client_mask(i2);
    let mut values = table.values().to_vec();
    for coalition in 0..1u64 << nc {
        if coalition >> i1 & 1 == 1 || coalition >> i2 & 1 == 1 {
            continue;
        }
        let mut dc = Mask::EMPTY;
        for j in 0..nc {
            if coalition >> j & 1 == 1 {
                dc = dc.union(structure.client_mask(j));
            }
        }
        values[dc.union(d2).index()] = values[dc.union(d1).index()];
    }
    UtilityTable::new(structure.total_blocks(), values).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::build_utility_table;

    fn random_game(counts: Vec<usize>, seed: u64) -> (GameStructure, UtilityTable) {
        let s = GameStructure::new(counts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..s.num_subsets())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        values[0] = 0.0;
        let t = UtilityTable::new(s.total_blocks(), values).unwrap();
        (s, t)
    }

    fn report_for(reports: &[AxiomReport], id: AxiomId) -> &AxiomReport {
        reports.iter().find(|r| r.axiom == id).unwrap()
    }

    #[test]
    fn shapley_passes_block_level_axioms() {
        let games: Vec<_> = (0..20)
            .map(|k| random_game(vec![1 + k % 2, 2, 1], 100 + k as u64))
            .collect();
        let reports = check_axioms(Metric::Shapley, &games, DEFAULT_AXIOM_TOL).unwrap();
        for id in [AxiomId::Eff, AxiomId::Lin, AxiomId::Dum, AxiomId::Sym] {
            let r = report_for(&reports, id);
            assert!(r.passed, "{}: {:?}", id.name(), r.counterexample);
            assert!(r.checks > 0);
        }
    }

    #[test]
    fn truth_shapley_passes_its_axioms() {
        let games: Vec<_> = (0..20)
            .map(|k| random_game(vec![2, 1 + k % 3, 1], 200 + k as u64))
            .collect();
        let reports = check_axioms(Metric::TruthShapley, &games, DEFAULT_AXIOM_TOL).unwrap();
        for id in [
            AxiomId::Eff,
            AxiomId::Lin,
            AxiomId::DumC,
            AxiomId::DumIb,
            AxiomId::SymC,
            AxiomId::SymIb,
        ] {
            let r = report_for(&reports, id);
            assert!(r.passed, "{}: {:?}", id.name(), r.counterexample);
            assert!(r.checks > 0, "{} never ran", id.name());
        }
    }

    #[test]
    fn banzhaf_fails_efficiency_with_witness() {
        // Unanimity over 3 blocks: each Banzhaf value is 1/4, summing to 3/4
        // against a grand utility of 1.
        let s = GameStructure::new(vec![1, 1, 1]).unwrap();
        let t = build_utility_table(
            &|m: Mask| if m == s.full_mask() { 1.0 } else { 0.0 },
            &s,
        )
        .unwrap();
        let reports = check_axioms(Metric::Banzhaf, &[(s, t)], DEFAULT_AXIOM_TOL).unwrap();
        let eff = report_for(&reports, AxiomId::Eff);
        assert!(!eff.passed);
        assert!((eff.max_residual - 0.25).abs() < 1e-12);

        // A violation also turns up by searching random games.
        let mut found = false;
        for seed in 0..50 {
            let (s, t) = random_game(vec![1, 1, 1], 300 + seed);
            let reports = check_axioms(Metric::Banzhaf, &[(s, t)], DEFAULT_AXIOM_TOL).unwrap();
            if !report_for(&reports, AxiomId::Eff).passed {
                found = true;
                break;
            }
        }
        assert!(found, "no EFF violation found in 50 random games");
    }

    #[test]
    fn loo_passes_dummy_and_symmetry_but_fails_efficiency() {
        let games: Vec<_> = (0..10).map(|k| random_game(vec![2, 1], 400 + k)).collect();
        let reports = check_axioms(Metric::Loo, &games, DEFAULT_AXIOM_TOL).unwrap();
        assert!(report_for(&reports, AxiomId::Lin).passed);
        assert!(report_for(&reports, AxiomId::Dum).passed);
        assert!(report_for(&reports, AxiomId::Sym).passed);

        // Unanimity over {0,1} with a third block: values (1,1,0) sum to 2
        // against a grand utility of 1.
        let s = GameStructure::new(vec![1, 1, 1]).unwrap();
        let t = build_utility_table(
            &|m: Mask| if m.contains(0) && m.contains(1) { 1.0 } else { 0.0 },
            &s,
        )
        .unwrap();
        let reports = check_axioms(Metric::Loo, &[(s, t)], DEFAULT_AXIOM_TOL).unwrap();
        assert!(!report_for(&reports, AxiomId::Eff).passed);
    }

    #[test]
    fn additive_game_returns_block_weights_for_all_metrics() {
        let s = GameStructure::new(vec![2, 2, 1]).unwrap();
        let weights = [0.3, -0.7, 1.1, 0.0, 2.5];
        let t = build_utility_table(
            &|m: Mask| m.blocks().map(|b| weights[b]).sum::<f64>(),
            &s,
        )
        .unwrap();
        for metric in [
            Metric::Shapley,
            Metric::Loo,
            Metric::Banzhaf,
            Metric::BetaShapley { alpha: 16.0, beta: 1.0 },
            Metric::TruthShapley,
        ] {
            let v = metric.evaluate(&t, &s).unwrap();
            for b in 0..5 {
                assert!(
                    (v.block_values[b] - weights[b]).abs() < 1e-9,
                    "{} block {b}: {} vs {}",
                    metric.id(),
                    v.block_values[b],
                    weights[b]
                );
            }
        }
    }

    #[test]
    fn symmetric_clients_game_gives_equal_client_values() {
        // Utility depends only on the unordered pair of per-client block
        // counts, so the two clients are interchangeable.
        let s = GameStructure::new(vec![2, 2]).unwrap();
        let lookup = |a: usize, b: usize| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            (lo * 3 + hi) as f64 * 0.37 + if lo + hi > 0 { 0.5 } else { 0.0 }
        };
        let t = build_utility_table(
            &|m: Mask| {
                let a = m.intersect(s.client_mask(0)).len();
                let b = m.intersect(s.client_mask(1)).len();
                lookup(a, b)
            },
            &s,
        )
        .unwrap();
        let v = Metric::TruthShapley.evaluate(&t, &s).unwrap();
        assert!((v.client_values[0] - v.client_values[1]).abs() < 1e-9);
        let v = Metric::Shapley.evaluate(&t, &s).unwrap();
        assert!((v.client_values[0] - v.client_values[1]).abs() < 1e-9);
    }

    #[test]
    fn positive_scaling_scales_values_linearly() {
        let (s, t) = random_game(vec![2, 2], 77);
        let scaled = UtilityTable::new(4, t.values().iter().map(|v| v * 3.5).collect()).unwrap();
        for metric in [
            Metric::Shapley,
            Metric::Loo,
            Metric::Banzhaf,
            Metric::BetaShapley { alpha: 16.0, beta: 1.0 },
            Metric::TruthShapley,
        ] {
            let a = metric.evaluate(&t, &s).unwrap();
            let b = metric.evaluate(&scaled, &s).unwrap();
            let mut order_a: Vec<usize> = (0..4).collect();
            let mut order_b: Vec<usize> = (0..4).collect();
            order_a.sort_by(|&x, &y| a.block_values[y].total_cmp(&a.block_values[x]).then(x.cmp(&y)));
            order_b.sort_by(|&x, &y| b.block_values[y].total_cmp(&b.block_values[x]).then(x.cmp(&y)));
            assert_eq!(order_a, order_b, "{}", metric.id());
            for j in 0..4 {
                assert!((b.block_values[j] - 3.5 * a.block_values[j]).abs() < 1e-9);
            }
        }
    }
}
