//! Transaction ingestion: address merging, long-term user filtering and
//! encoding of daily snapshots into an evolution matrix.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = usize;

/// Satoshis per bitcoin.
pub const SATOSHI_PER_BTC: f64 = 100_000_000.0;

/// One normalized ledger entry.
///
/// Outputs carry amounts in satoshis. An event without inputs is an external
/// inflow (coinbase-style) and has no sending user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionEvent {
    pub tx_id: String,
    pub day: i64,
    pub inputs: Vec<String>,
    pub outputs: Vec<(String, u64)>,
}

impl TransactionEvent {
    pub fn is_inflow(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Surjection from addresses onto dense user ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserMapping {
    users: HashMap<String, UserId>,
    n_users: usize,
}

impl UserMapping {
    pub fn user_of(&self, address: &str) -> Option<UserId> {
        self.users.get(address).copied()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_addresses(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// `(address, user)` pairs sorted by user id, then address.
    pub fn sorted_entries(&self) -> Vec<(&str, UserId)> {
        let mut entries: Vec<_> = self.users.iter().map(|(a, &u)| (a.as_str(), u)).collect();
        entries.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        entries
    }

    /// Partition of addresses into users, independent of id assignment.
    pub fn partition(&self) -> BTreeSet<BTreeSet<String>> {
        let mut groups: Vec<BTreeSet<String>> = vec![BTreeSet::new(); self.n_users];
        for (addr, &u) in &self.users {
            groups[u].insert(addr.clone());
        }
        groups.into_iter().collect()
    }

    fn require(&self, address: &str) -> Result<UserId> {
        self.user_of(address)
            .ok_or_else(|| Error::InvalidInput(format!("address {address:?} missing from user mapping")))
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new() -> Self {
        Self { parent: Vec::new(), rank: Vec::new() }
    }

    fn push(&mut self) -> usize {
        let id = self.parent.len();
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Merges addresses that ever co-occur as inputs of one transaction.
///
/// User ids are assigned in order of first appearance of any address of the
/// user, scanning events in order and inputs before outputs.
pub fn merge_addresses(events: &[TransactionEvent]) -> UserMapping {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    let mut uf = UnionFind::new();

    for ev in events {
        let mut first: Option<usize> = None;
        for addr in &ev.inputs {
            let id = match index.get(addr.as_str()) {
                Some(&id) => id,
                None => {
                    let id = uf.push();
                    index.insert(addr, id);
                    order.push(addr);
                    id
                }
            };
            match first {
                Some(f) => uf.union(f, id),
                None => first = Some(id),
            }
        }
        for (addr, _) in &ev.outputs {
            if !index.contains_key(addr.as_str()) {
                index.insert(addr, uf.push());
                order.push(addr);
            }
        }
    }

    let mut root_user: HashMap<usize, UserId> = HashMap::new();
    let mut users = HashMap::with_capacity(order.len());
    for addr in order {
        let root = uf.find(index[addr]);
        let next = root_user.len();
        let user = *root_user.entry(root).or_insert(next);
        users.insert(addr.to_string(), user);
    }
    UserMapping { n_users: root_user.len(), users }
}

/// Thresholds for the long-term user filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTermFilter {
    pub min_tx: usize,
    pub min_span: i64,
    /// First activity must fall strictly before this day, when set.
    pub active_before: Option<i64>,
}

impl Default for LongTermFilter {
    fn default() -> Self {
        Self { min_tx: 100, min_span: 600, active_before: None }
    }
}

#[derive(Debug, Clone, Copy)]
struct Activity {
    tx_count: usize,
    first_day: i64,
    last_day: i64,
}

/// Users involved (as sender or receiver) in at least `min_tx` transactions
/// whose first and last appearance are at least `min_span` days apart.
///
/// Statistics are computed over the whole event list.
pub fn filter_long_term_users(
    events: &[TransactionEvent],
    mapping: &UserMapping,
    filter: &LongTermFilter,
) -> Result<BTreeSet<UserId>> {
    let mut activity: HashMap<UserId, Activity> = HashMap::new();
    let mut involved: HashSet<UserId> = HashSet::new();
    for ev in events {
        involved.clear();
        for addr in &ev.inputs {
            involved.insert(mapping.require(addr)?);
        }
        for (addr, _) in &ev.outputs {
            involved.insert(mapping.require(addr)?);
        }
        for &u in &involved {
            let a = activity.entry(u).or_insert(Activity {
                tx_count: 0,
                first_day: ev.day,
                last_day: ev.day,
            });
            a.tx_count += 1;
            a.first_day = a.first_day.min(ev.day);
            a.last_day = a.last_day.max(ev.day);
        }
    }
    Ok(activity
        .into_iter()
        .filter(|(_, a)| {
            a.tx_count >= filter.min_tx
                && a.last_day - a.first_day >= filter.min_span
                && filter.active_before.is_none_or(|cut| a.first_day < cut)
        })
        .map(|(u, _)| u)
        .collect())
}

/// Snapshot encoding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    /// Row per user: bitcoins received from other users.
    Node,
    /// Row per ordered user pair: bitcoins sent along the pair.
    Edge,
}

impl FromStr for EncodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "node" => Ok(Self::Node),
            "edge" => Ok(Self::Edge),
            other => Err(Error::InvalidInput(format!("unknown encoding mode {other:?}"))),
        }
    }
}

impl fmt::Display for EncodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Node => "node",
            Self::Edge => "edge",
        })
    }
}

/// The entities indexed by matrix rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowUniverse {
    Users(Vec<UserId>),
    Pairs(Vec<(UserId, UserId)>),
}

impl RowUniverse {
    pub fn len(&self) -> usize {
        match self {
            Self::Users(u) => u.len(),
            Self::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Self::Users(u) => u.iter().map(|u| format!("u{u}")).collect(),
            Self::Pairs(p) => p.iter().map(|(a, b)| format!("u{a}>u{b}")).collect(),
        }
    }
}

/// Dense non-negative M×T matrix of encoded daily snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionMatrix {
    pub values: DMatrix<f64>,
    pub row_labels: Vec<String>,
    pub days: Vec<i64>,
}

impl EvolutionMatrix {
    pub fn new(values: DMatrix<f64>, row_labels: Vec<String>, days: Vec<i64>) -> Result<Self> {
        if values.nrows() != row_labels.len() || values.ncols() != days.len() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{} but index has {} rows and {} days",
                values.nrows(),
                values.ncols(),
                row_labels.len(),
                days.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("evolution matrix entries must be finite and >= 0".into()));
        }
        if days.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidInput("evolution matrix days must be consecutive".into()));
        }
        Ok(Self { values, row_labels, days })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn first_day(&self) -> Option<i64> {
        self.days.first().copied()
    }

    /// Column position of `day`, if present.
    pub fn column_of(&self, day: i64) -> Option<usize> {
        let first = self.first_day()?;
        let idx = usize::try_from(day - first).ok()?;
        (idx < self.days.len()).then_some(idx)
    }
}

/// Ordered pairs of distinct universe users that exchanged funds on days in
/// `days`, sorted.
pub fn observed_pairs(
    events: &[TransactionEvent],
    mapping: &UserMapping,
    users: &BTreeSet<UserId>,
    days: Range<i64>,
) -> Result<Vec<(UserId, UserId)>> {
    let mut pairs = BTreeSet::new();
    for ev in events.iter().filter(|e| days.contains(&e.day) && !e.is_inflow()) {
        let sender = mapping.require(&ev.inputs[0])?;
        if !users.contains(&sender) {
            continue;
        }
        for (addr, _) in &ev.outputs {
            let receiver = mapping.require(addr)?;
            if receiver != sender && users.contains(&receiver) {
                pairs.insert((sender, receiver));
            }
        }
    }
    Ok(pairs.into_iter().collect())
}

/// Encodes the events of `day_range` over the given row universe.
///
/// Only flows between two distinct users of the universe are counted; inflow
/// events and self-transfers are skipped, and in edge mode flows along pairs
/// outside the universe are dropped.
pub fn encode_with_universe(
    events: &[TransactionEvent],
    mapping: &UserMapping,
    universe: &RowUniverse,
    day_range: Range<i64>,
) -> Result<EvolutionMatrix> {
    if universe.is_empty() {
        return Err(Error::InvalidInput("row universe is empty".into()));
    }
    if day_range.is_empty() {
        return Err(Error::InvalidInput("day range is empty".into()));
    }
    let n_days = (day_range.end - day_range.start) as usize;
    let n_rows = universe.len();

    let (user_row, pair_row): (HashMap<UserId, usize>, HashMap<(UserId, UserId), usize>) = match universe {
        RowUniverse::Users(u) => (u.iter().enumerate().map(|(i, &u)| (u, i)).collect(), HashMap::new()),
        RowUniverse::Pairs(p) => {
            let members = p.iter().flat_map(|&(a, b)| [a, b]).map(|u| (u, usize::MAX)).collect();
            (members, p.iter().enumerate().map(|(i, &pr)| (pr, i)).collect())
        }
    };

    // Exact satoshi accumulation, column-major like the matrix.
    let mut acc = vec![0u128; n_rows * n_days];
    for ev in events.iter().filter(|e| day_range.contains(&e.day) && !e.is_inflow()) {
        let sender = mapping.require(&ev.inputs[0])?;
        let col = (ev.day - day_range.start) as usize;
        for (addr, amount) in &ev.outputs {
            let receiver = mapping.require(addr)?;
            if receiver == sender {
                continue;
            }
            let row = match universe {
                RowUniverse::Users(_) => {
                    if !user_row.contains_key(&sender) {
                        continue;
                    }
                    match user_row.get(&receiver) {
                        Some(&r) => r,
                        None => continue,
                    }
                }
                RowUniverse::Pairs(_) => match pair_row.get(&(sender, receiver)) {
                    Some(&r) => r,
                    None => continue,
                },
            };
            acc[col * n_rows + row] += u128::from(*amount);
        }
    }

    let values = DMatrix::from_iterator(n_rows, n_days, acc.into_iter().map(|sat| sat as f64 / SATOSHI_PER_BTC));
    EvolutionMatrix::new(values, universe.labels(), day_range.collect())
}

/// Encodes the filtered users' daily activity over `day_range`.
///
/// In edge mode the row universe is the set of pairs observed inside
/// `day_range` itself; use [`encode_with_universe`] to re-use a training
/// window's universe on later days.
pub fn encode_snapshots(
    events: &[TransactionEvent],
    mapping: &UserMapping,
    users: &BTreeSet<UserId>,
    mode: EncodingMode,
    day_range: Range<i64>,
) -> Result<EvolutionMatrix> {
    if users.is_empty() {
        return Err(Error::InvalidInput("user set is empty".into()));
    }
    let universe = match mode {
        EncodingMode::Node => RowUniverse::Users(users.iter().copied().collect()),
        EncodingMode::Edge => RowUniverse::Pairs(observed_pairs(events, mapping, users, day_range.clone())?),
    };
    encode_with_universe(events, mapping, &universe, day_range)
}

/// Column sums of the evolution matrix: total bitcoins moved per day.
pub fn daily_volume(x: &EvolutionMatrix) -> Vec<f64> {
    x.values.column_iter().map(|c| c.sum()).collect()
}
