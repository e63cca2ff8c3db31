//! Device graphs, consensus weights, and the simulated message fabric.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::vector::SparseDelta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Complete,
    Ring,
    /// Each pair is linked with this probability; resampled until connected.
    ErdosRenyi(f64),
}

/// Undirected graph over devices `0..devices`. Self-membership in a
/// neighborhood is implicit and never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceGraph {
    neighbors: Vec<Vec<usize>>,
}

const MAX_ER_ATTEMPTS: usize = 10_000;

impl DeviceGraph {
    /// Graph with the given undirected edges; duplicates collapse.
    pub fn from_edges(devices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if devices == 0 {
            return Err(Error::arg("a graph needs at least one device"));
        }
        let mut sets = vec![BTreeSet::new(); devices];
        for &(a, b) in edges {
            if a >= devices || b >= devices {
                return Err(Error::Index {
                    index: a.max(b),
                    dim: devices,
                });
            }
            if a == b {
                return Err(Error::arg(format!("self-loop on device {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Self {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    /// One isolated device; the centralized setting.
    pub fn single() -> Self {
        Self {
            neighbors: vec![Vec::new()],
        }
    }

    pub fn devices(&self) -> usize {
        self.neighbors.len()
    }

    /// Sorted neighbors of `k`, excluding `k`.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn degree(&self, k: usize) -> usize {
        self.neighbors[k].len()
    }

    /// Edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.devices();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut reached = 1;
        while let Some(k) = queue.pop_front() {
            for &j in &self.neighbors[k] {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            }
        }
        reached == n
    }
}

pub fn build_graph(topology: Topology, devices: usize, rng: &mut RngStream) -> Result<DeviceGraph> {
    if devices < 2 {
        return Err(Error::arg(format!("need at least 2 devices, got {devices}")));
    }
    match topology {
        Topology::Complete => {
            let edges: Vec<_> = (0..devices)
                .flat_map(|a| (a + 1..devices).map(move |b| (a, b)))
                .collect();
            DeviceGraph::from_edges(devices, &edges)
        }
        Topology::Ring => {
            let edges: Vec<_> = (0..devices).map(|a| (a, (a + 1) % devices)).collect();
            DeviceGraph::from_edges(devices, &edges)
        }
        Topology::ErdosRenyi(q) => {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::arg(format!("edge probability must lie in (0, 1], got {q}")));
            }
            for _ in 0..MAX_ER_ATTEMPTS {
                let mut edges = Vec::new();
                for a in 0..devices {
                    for b in a + 1..devices {
                        if rng.random::<f64>() < q {
                            edges.push((a, b));
                        }
                    }
                }
                let g = DeviceGraph::from_edges(devices, &edges)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::arg(format!(
                "no connected graph after {MAX_ER_ATTEMPTS} draws with q = {q}"
            )))
        }
    }
}

/// Dense `K x K` consensus weights, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingMatrix<S> {
    devices: usize,
    weights: Vec<S>,
}

impl<S: Scalar> MixingMatrix<S> {
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let devices = rows.len();
        if devices == 0 {
            return Err(Error::arg("empty mixing matrix"));
        }
        for r in rows {
            Error::check_dim(devices, r.len())?;
        }
        Ok(Self {
            devices,
            weights: rows.concat(),
        })
    }

    pub fn identity(devices: usize) -> Self {
        let mut weights = vec![S::zero(); devices * devices];
        for k in 0..devices {
            weights[k * devices + k] = S::one();
        }
        Self { devices, weights }
    }

    /// Every entry `1/K`.
    pub fn uniform(devices: usize) -> Self {
        Self {
            devices,
            weights: vec![S::one() / S::of_usize(devices); devices * devices],
        }
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    pub fn get(&self, k: usize, j: usize) -> S {
        self.weights[k * self.devices + j]
    }

    pub fn row(&self, k: usize) -> &[S] {
        &self.weights[k * self.devices..(k + 1) * self.devices]
    }
}

/// Metropolis–Hastings weights: `1 / (1 + max(deg k, deg j))` on edges, the
/// remainder on the diagonal.
pub fn metropolis_weights<S: Scalar>(graph: &DeviceGraph) -> Result<MixingMatrix<S>> {
    if !graph.is_connected() {
        return Err(Error::arg("metropolis weights need a connected graph"));
    }
    let n = graph.devices();
    let mut w = MixingMatrix {
        devices: n,
        weights: vec![S::zero(); n * n],
    };
    for k in 0..n {
        let mut off = S::zero();
        for &j in graph.neighbors(k) {
            let v = S::one() / S::of_usize(1 + graph.degree(k).max(graph.degree(j)));
            w.weights[k * n + j] = v;
            off += v;
        }
        w.weights[k * n + k] = S::one() - off;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingDiagnostics {
    pub symmetric: bool,
    pub max_row_deviation: f64,
    pub max_col_deviation: f64,
    pub min_entry: f64,
    /// Largest singular value of `Ω - (1/K) 1 1ᵀ`; equals the second-largest
    /// eigenvalue modulus for symmetric doubly-stochastic `Ω`.
    pub second_singular_value: f64,
}

impl MixingDiagnostics {
    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.second_singular_value
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.symmetric
            && self.max_row_deviation < tol
            && self.max_col_deviation < tol
            && self.min_entry >= 0.0
    }
}

const SYMMETRY_TOL: f64 = 1e-12;

pub fn validate_mixing<S: Scalar>(omega: &MixingMatrix<S>) -> MixingDiagnostics {
    let n = omega.devices();
    let w = |k: usize, j: usize| omega.get(k, j).as_f64();
    let mut symmetric = true;
    let mut max_row: f64 = 0.0;
    let mut max_col: f64 = 0.0;
    let mut min_entry = f64::INFINITY;
    for k in 0..n {
        let row: f64 = (0..n).map(|j| w(k, j)).sum();
        let col: f64 = (0..n).map(|j| w(j, k)).sum();
        max_row = max_row.max((row - 1.0).abs());
        max_col = max_col.max((col - 1.0).abs());
        for j in 0..n {
            min_entry = min_entry.min(w(k, j));
            if (w(k, j) - w(j, k)).abs() > SYMMETRY_TOL {
                symmetric = false;
            }
        }
    }
    let centered: Vec<f64> = (0..n * n)
        .map(|i| w(i / n, i % n) - 1.0 / n as f64)
        .collect();
    MixingDiagnostics {
        symmetric,
        max_row_deviation: max_row,
        max_col_deviation: max_col,
        min_entry,
        second_singular_value: top_singular_value(&centered, n),
    }
}

/// Power iteration on `AᵀA`.
fn top_singular_value(a: &[f64], n: usize) -> f64 {
    let matvec = |m: &dyn Fn(usize, usize) -> f64, v: &[f64]| -> Vec<f64> {
        (0..n).map(|i| (0..n).map(|j| m(i, j) * v[j]).sum()).collect()
    };
    let a_at = |i: usize, j: usize| a[i * n + j];
    let at_at = |i: usize, j: usize| a[j * n + i];
    // fixed, irregular start so no eigenvector is missed by symmetry
    let mut v: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract() + 0.1)
        .collect();
    let mut sigma_sq = 0.0;
    for _ in 0..100_000 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w = matvec(&at_at, &matvec(&a_at, &v));
        let next = v.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>();
        v = w;
        if (next - sigma_sq).abs() <= 1e-15 * next.abs().max(1e-300) {
            sigma_sq = next;
            break;
        }
        sigma_sq = next;
    }
    sigma_sq.max(0.0).sqrt()
}

/// Counts for one synchronous round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundComm {
    pub round: usize,
    /// Parameter values sent, counting every directed transmission.
    pub values_sent: u64,
    /// Coordinate indices sent alongside sparse values.
    pub index_overhead: u64,
    pub messages: u64,
    /// Values sent if each device broadcast once to all neighbors.
    pub broadcast_values: u64,
}

/// Cumulative communication accounting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub rounds: Vec<RoundComm>,
    pub per_device_values: Vec<u64>,
    pub per_device_indices: Vec<u64>,
    pub total_values: u64,
    pub total_indices: u64,
    pub total_messages: u64,
    pub total_broadcast_values: u64,
}

/// Bytes per transmitted value (`f64`).
pub const VALUE_BYTES: u64 = 8;
/// Bytes per transmitted coordinate index (`u32`).
pub const INDEX_BYTES: u64 = 4;

impl CommLedger {
    pub fn new(devices: usize) -> Self {
        Self {
            per_device_values: vec![0; devices],
            per_device_indices: vec![0; devices],
            ..Self::default()
        }
    }

    pub fn value_bytes(&self) -> u64 {
        self.total_values * VALUE_BYTES
    }

    pub fn index_bytes(&self) -> u64 {
        self.total_indices * INDEX_BYTES
    }

    pub fn total_bytes(&self) -> u64 {
        self.value_bytes() + self.index_bytes()
    }

    pub(crate) fn record(&mut self, round: RoundComm) {
        self.total_values += round.values_sent;
        self.total_indices += round.index_overhead;
        self.total_messages += round.messages;
        self.total_broadcast_values += round.broadcast_values;
        self.rounds.push(round);
    }
}

/// Per-round value count of uncompressed full-vector gossip.
pub fn uncompressed_round_values(graph: &DeviceGraph, dim: usize) -> u64 {
    (graph.directed_edge_count() * dim) as u64
}

/// Messages received by each device: `(sender, message)` in sender order.
pub type Delivery<'a, S> = Vec<Vec<(usize, &'a SparseDelta<S>)>>;

/// Delivers every device's message to all its neighbors and books the
/// traffic. `with_indices` marks messages that carry explicit coordinates.
pub fn exchange<'a, S: Scalar>(
    messages: &'a [SparseDelta<S>],
    graph: &DeviceGraph,
    ledger: &mut CommLedger,
    round: usize,
    with_indices: bool,
) -> Result<Delivery<'a, S>> {
    let n = graph.devices();
    Error::check_dim(n, messages.len())?;
    if ledger.per_device_values.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: ledger.per_device_values.len(),
        });
    }
    let mut stats = RoundComm {
        round,
        ..RoundComm::default()
    };
    for (k, msg) in messages.iter().enumerate() {
        let deg = graph.degree(k) as u64;
        let nnz = msg.nnz() as u64;
        let values = nnz * deg;
        let indices = if with_indices { values } else { 0 };
        stats.values_sent += values;
        stats.index_overhead += indices;
        stats.messages += deg;
        if deg > 0 {
            stats.broadcast_values += nnz;
        }
        ledger.per_device_values[k] += values;
        ledger.per_device_indices[k] += indices;
    }
    ledger.record(stats);
    Ok((0..n)
        .map(|k| graph.neighbors(k).iter().map(|&j| (j, &messages[j])).collect())
        .collect())
}
