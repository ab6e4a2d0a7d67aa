//! Game structure, subset masks, utility tables, and utility oracles.
//!
//! A game is a set of data blocks partitioned among clients. Subsets of blocks
//! are represented as bitmasks over block indices, utilities live in a dense
//! table with one entry per subset, and oracles map subsets to utilities.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ceiling on the number of blocks whose 2^n subsets may be
/// materialized (2^20 subsets, about one million).
pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// A subset of data blocks, stored as a bitmask over block indices.
///
/// Bit j is set iff block j is in the subset. The integer value of the mask
/// doubles as its index into dense per-subset tables.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask(pub u64);

impl Mask {
    pub const EMPTY: Mask = Mask(0);

    /// The full set over `num_blocks` blocks.
    pub fn full(num_blocks: usize) -> Mask {
        debug_assert!(num_blocks < 64);
        Mask((1u64 << num_blocks) - 1)
    }

    pub fn singleton(block: usize) -> Mask {
        Mask(1u64 << block)
    }

    pub fn contains(self, block: usize) -> bool {
        self.0 >> block & 1 == 1
    }

    pub fn insert(self, block: usize) -> Mask {
        Mask(self.0 | 1u64 << block)
    }

    pub fn remove(self, block: usize) -> Mask {
        Mask(self.0 & !(1u64 << block))
    }

    pub fn union(self, other: Mask) -> Mask {
        Mask(self.0 | other.0)
    }

    pub fn intersect(self, other: Mask) -> Mask {
        Mask(self.0 & other.0)
    }

    pub fn minus(self, other: Mask) -> Mask {
        Mask(self.0 & !other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Number of blocks in the subset.
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Index into a dense per-subset table.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Iterates the block indices in the subset in ascending order.
    pub fn blocks(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(b)
            }
        })
    }

    pub fn is_subset_of(self, other: Mask) -> bool {
        self.0 & !other.0 == 0
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, b) in self.blocks().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{b}")?;
        }
        write!(f, "}}")
    }
}

/// The partition of data blocks among clients.
///
/// Block indices are contiguous: client 0 owns blocks `0..M_0`, client 1 owns
/// the next `M_1`, and so on. Every block has exactly one owner.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameStructure {
    blocks_per_client: Vec<usize>,
    block_owner: Vec<usize>,
    #[serde(default = "default_cap")]
    enumeration_cap: usize,
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

impl GameStructure {
    /// Builds a structure from per-client block counts with the default
    /// enumeration cap.
    pub fn new(blocks_per_client: Vec<usize>) -> Result<Self> {
        Self::with_cap(blocks_per_client, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(blocks_per_client: Vec<usize>, cap: usize) -> Result<Self> {
        if blocks_per_client.is_empty() {
            return Err(Error::InvalidStructure("no clients".into()));
        }
        if let Some(i) = blocks_per_client.iter().position(|&m| m == 0) {
            return Err(Error::InvalidStructure(format!("client {i} owns no blocks")));
        }
        let total: usize = blocks_per_client.iter().sum();
        if total > cap || total >= 64 {
            return Err(Error::EnumerationLimit { blocks: total, cap });
        }
        let mut block_owner = Vec::with_capacity(total);
        for (i, &m) in blocks_per_client.iter().enumerate() {
            block_owner.extend(std::iter::repeat(i).take(m));
        }
        Ok(GameStructure {
            blocks_per_client,
            block_owner,
            enumeration_cap: cap,
        })
    }

    /// Builds a structure from an explicit block -> owner map. Owners must be
    /// contiguous runs of contiguous client indices starting at 0.
    pub fn from_owners(block_owner: Vec<usize>, cap: usize) -> Result<Self> {
        if block_owner.is_empty() {
            return Err(Error::InvalidStructure("no blocks".into()));
        }
        let num_clients = block_owner.iter().max().unwrap() + 1;
        let mut counts = vec![0usize; num_clients];
        for &o in &block_owner {
            counts[o] += 1;
        }
        let rebuilt = Self::with_cap(counts, cap)?;
        if rebuilt.block_owner != block_owner {
            return Err(Error::InvalidStructure(
                "block owners must be contiguous runs of client indices".into(),
            ));
        }
        Ok(rebuilt)
    }

    pub fn num_clients(&self) -> usize {
        self.blocks_per_client.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.block_owner.len()
    }

    pub fn num_subsets(&self) -> usize {
        1usize << self.total_blocks()
    }

    pub fn blocks_per_client(&self) -> &[usize] {
        &self.blocks_per_client
    }

    pub fn block_owner(&self, block: usize) -> usize {
        self.block_owner[block]
    }

    pub fn block_owners(&self) -> &[usize] {
        &self.block_owner
    }

    pub fn enumeration_cap(&self) -> usize {
        self.enumeration_cap
    }

    pub fn full_mask(&self) -> Mask {
        Mask::full(self.total_blocks())
    }

    /// The complete block set of one client.
    pub fn client_mask(&self, client: usize) -> Mask {
        let start: usize = self.blocks_per_client[..client].iter().sum();
        let m = self.blocks_per_client[client];
        Mask(((1u64 << m) - 1) << start)
    }

    pub fn check_client(&self, client: usize) -> Result<()> {
        if client >= self.num_clients() {
            return Err(Error::ClientOutOfRange {
                client,
                num_clients: self.num_clients(),
            });
        }
        Ok(())
    }

    /// Blocks of `mask` owned by `client` (the mask of D_i within the subset).
    pub fn client_blocks(&self, mask: Mask, client: usize) -> Mask {
        mask.intersect(self.client_mask(client))
    }

    /// Blocks of `mask` owned by every client other than `client`.
    pub fn other_clients_blocks(&self, mask: Mask, client: usize) -> Mask {
        mask.minus(self.client_mask(client))
    }

    /// True iff the subset contains every block of `client`.
    pub fn is_full_client_subset(&self, mask: Mask, client: usize) -> bool {
        self.client_blocks(mask, client) == self.client_mask(client)
    }

    /// All 2^n subsets in ascending integer order of the mask.
    pub fn enumerate_subsets(&self) -> impl Iterator<Item = Mask> {
        (0..self.num_subsets() as u64).map(Mask)
    }
}

/// A deterministic map from subsets to utilities.
///
/// Implementations must return bit-identical values for repeated calls with
/// the same mask, must return 0 for the empty subset, and must allow
/// concurrent evaluation of distinct masks.
pub trait UtilityOracle: Sync {
    fn utility(&self, mask: Mask) -> f64;
}

impl<F: Fn(Mask) -> f64 + Sync> UtilityOracle for F {
    fn utility(&self, mask: Mask) -> f64 {
        self(mask)
    }
}

/// Dense map from every subset of the blocks to a model utility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    num_blocks: usize,
    values: Vec<f64>,
}

impl UtilityTable {
    /// Builds a table, enforcing length 2^num_blocks, v(empty) = 0, and
    /// finiteness of every entry.
    pub fn new(num_blocks: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != 1usize << num_blocks {
            return Err(Error::InvalidTable(format!(
                "expected {} entries for {} blocks, got {}",
                1usize << num_blocks,
                num_blocks,
                values.len()
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidTable(format!(
                "v(empty) must be 0, got {}",
                values[0]
            )));
        }
        Self::check_finite(num_blocks, values)
    }

    /// Builds a table without the v(empty) = 0 check. Basis games delta_S put
    /// mass 1 on an arbitrary subset, including the empty one; every metric
    /// evaluator reads the table as given.
    pub(crate) fn raw(num_blocks: usize, values: Vec<f64>) -> Result<Self> {
        assert_eq!(values.len(), 1usize << num_blocks);
        Self::check_finite(num_blocks, values)
    }

    fn check_finite(num_blocks: usize, values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteUtility {
                    mask: Mask(i as u64),
                    value: v,
                });
            }
        }
        Ok(UtilityTable { num_blocks, values })
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn get(&self, mask: Mask) -> f64 {
        self.values[mask.index()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Utility of the grand coalition.
    pub fn grand(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Tables are immutable once built and double as their own oracle.
impl UtilityOracle for UtilityTable {
    fn utility(&self, mask: Mask) -> f64 {
        self.get(mask)
    }
}

/// Evaluates the oracle on every subset of the structure, in parallel.
///
/// The oracle is invoked exactly once per mask, including the full mask, so
/// the grand-coalition utility is shared by everything downstream.
pub fn build_utility_table(
    oracle: &(impl UtilityOracle + ?Sized),
    structure: &GameStructure,
) -> Result<UtilityTable> {
    let n = structure.total_blocks();
    let values: Vec<f64> = (0..1u64 << n)
        .into_par_iter()
        .map(|m| oracle.utility(Mask(m)))
        .collect();
    UtilityTable::new(n, values)
}

/// Flat serialization of a utility table: per-subset rows plus a header that
/// records the structure. Round-trips bit-exactly (values are written in
/// shortest-round-trip decimal form).
#[derive(Serialize, Deserialize)]
pub struct UtilityTableFile {
    pub total_blocks: usize,
    pub block_owner: Vec<usize>,
    #[serde(default)]
    pub attacked: bool,
    /// (mask, utility) rows in ascending mask order.
    pub rows: Vec<(u64, f64)>,
}

impl UtilityTableFile {
    pub fn from_table(table: &UtilityTable, structure: &GameStructure, attacked: bool) -> Self {
        UtilityTableFile {
            total_blocks: table.num_blocks(),
            block_owner: structure.block_owners().to_vec(),
            attacked,
            rows: table
                .values()
                .iter()
                .enumerate()
                .map(|(m, &v)| (m as u64, v))
                .collect(),
        }
    }

    pub fn into_table(self) -> Result<(UtilityTable, Vec<usize>, bool)> {
        let mut values = vec![f64::NAN; 1usize << self.total_blocks];
        if self.rows.len() != values.len() {
            return Err(Error::InvalidTable(format!(
                "expected {} rows, got {}",
                values.len(),
                self.rows.len()
            )));
        }
        for (m, v) in self.rows {
            let i = m as usize;
            if i >= values.len() {
                return Err(Error::InvalidTable(format!("mask {m} out of range")));
            }
            values[i] = v;
        }
        // Attacked tables still satisfy v(empty) = 0: the empty subset is
        // always honestly empty.
        let table = UtilityTable::new(self.total_blocks, values)?;
        Ok((table, self.block_owner, self.attacked))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// CSV layout: three metadata records, then a column header, then rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(Error::Csv)?;
        let owners = self
            .block_owner
            .iter()
            .map(|o| o.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        w.write_record(["total_blocks", &self.total_blocks.to_string()])?;
        w.write_record(["block_owner", &owners])?;
        w.write_record(["attacked", &self.attacked.to_string()])?;
        w.write_record(["mask", "utility"])?;
        for (m, v) in &self.rows {
            w.write_record([m.to_string(), format!("{v}")])?;
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
        let mut records = r.records();
        let mut meta = |name: &str| -> Result<String> {
            let rec = records
                .next()
                .ok_or_else(|| Error::InvalidTable(format!("missing {name} record")))?
                .map_err(Error::Csv)?;
            if rec.get(0) != Some(name) {
                return Err(Error::InvalidTable(format!("expected {name} record")));
            }
            Ok(rec.get(1).unwrap_or("").to_string())
        };
        let total_blocks: usize = meta("total_blocks")?
            .parse()
            .map_err(|e| Error::InvalidTable(format!("total_blocks: {e}")))?;
        let owners = meta("block_owner")?;
        let attacked: bool = meta("attacked")?
            .parse()
            .map_err(|e| Error::InvalidTable(format!("attacked: {e}")))?;
        meta("mask")?; // column header
        let block_owner = owners
            .split_whitespace()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|e| Error::InvalidTable(format!("block_owner: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        for rec in records {
            let rec = rec.map_err(Error::Csv)?;
            let m: u64 = rec
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::InvalidTable(format!("mask: {e}")))?;
            let v: f64 = rec
                .get(1)
                .unwrap_or("")
                .parse()
                .map_err(|e| Error::InvalidTable(format!("utility: {e}")))?;
            rows.push((m, v));
        }
        Ok(UtilityTableFile {
            total_blocks,
            block_owner,
            attacked,
            rows,
        })
    }
}
