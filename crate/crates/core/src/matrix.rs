//! Communication matrices and per-type call statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{
    decompose_copy, decompose_instance, decompose_p2p, DecomposeError, Decomposition, ModelConfig,
};
use crate::trace::{CollectiveInstance, CollectiveKind, Endpoint, EventKind, P2pPair, TraceEvent};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum MatrixError {
    #[error("endpoint {endpoint} does not fit a matrix over {gpus} GPUs")]
    EndpointOutOfRange { endpoint: Endpoint, gpus: u32 },
    #[error("byte counter overflow at ({row}, {col})")]
    CounterOverflow { row: usize, col: usize },
}

/// Communication types, in the row order of the statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommType {
    AllReduce,
    Broadcast,
    Reduce,
    ReduceScatter,
    AllGather,
    SendRecv,
    ExplicitTransfer,
    UnifiedMemory,
    ZeroCopy,
}

impl CommType {
    pub const ALL: [CommType; 9] = [
        CommType::AllReduce,
        CommType::Broadcast,
        CommType::Reduce,
        CommType::ReduceScatter,
        CommType::AllGather,
        CommType::SendRecv,
        CommType::ExplicitTransfer,
        CommType::UnifiedMemory,
        CommType::ZeroCopy,
    ];

    /// File-name friendly key.
    pub fn key(self) -> &'static str {
        match self {
            CommType::AllReduce => "allreduce",
            CommType::Broadcast => "broadcast",
            CommType::Reduce => "reduce",
            CommType::ReduceScatter => "reducescatter",
            CommType::AllGather => "allgather",
            CommType::SendRecv => "sendrecv",
            CommType::ExplicitTransfer => "explicit",
            CommType::UnifiedMemory => "unified_memory",
            CommType::ZeroCopy => "zerocopy",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CommType::AllReduce => "AllReduce",
            CommType::Broadcast => "Broadcast",
            CommType::Reduce => "Reduce",
            CommType::ReduceScatter => "ReduceScatter",
            CommType::AllGather => "AllGather",
            CommType::SendRecv => "Send/Recv",
            CommType::ExplicitTransfer => "Explicit Transfers",
            CommType::UnifiedMemory => "Unified Memory",
            CommType::ZeroCopy => "Zero Copy Memory",
        }
    }

    pub fn of_collective(kind: CollectiveKind) -> Self {
        match kind {
            CollectiveKind::AllReduce => CommType::AllReduce,
            CollectiveKind::Broadcast => CommType::Broadcast,
            CollectiveKind::Reduce => CommType::Reduce,
            CollectiveKind::ReduceScatter => CommType::ReduceScatter,
            CollectiveKind::AllGather => CommType::AllGather,
        }
    }

    pub fn of_copy(kind: EventKind) -> Option<Self> {
        match kind {
            EventKind::Memcpy => Some(CommType::ExplicitTransfer),
            EventKind::UnifiedMemory => Some(CommType::UnifiedMemory),
            EventKind::ZeroCopy => Some(CommType::ZeroCopy),
            _ => None,
        }
    }
}

impl fmt::Display for CommType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CommType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommType::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| format!("unknown communication type `{s}`"))
    }
}

/// Directed byte matrix: row = source, column = destination. Index 0 is the
/// host, GPU g is index g + 1, and the network aggregator (present only once
/// collnet traffic has been seen) is the last index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommMatrix {
    gpus: u32,
    aggregator: bool,
    cells: Vec<u64>,
}

impl CommMatrix {
    pub fn zeros(gpus: u32) -> Self {
        Self::with_shape(gpus, false)
    }

    fn with_shape(gpus: u32, aggregator: bool) -> Self {
        let dim = gpus as usize + 1 + usize::from(aggregator);
        CommMatrix {
            gpus,
            aggregator,
            cells: vec![0; dim * dim],
        }
    }

    /// Builds a matrix from explicit rows; fails unless the rows form a
    /// square of side d+1 or d+2 with a zero (0,0) cell and zero diagonal.
    pub fn from_rows(gpus: u32, aggregator: bool, rows: &[Vec<u64>]) -> Result<Self, String> {
        let mut m = Self::with_shape(gpus, aggregator);
        let dim = m.dim();
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(format!("expected a {dim}x{dim} matrix"));
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i == j && v != 0 {
                    return Err(format!("diagonal cell ({i},{i}) must be zero"));
                }
                m.cells[i * dim + j] = v;
            }
        }
        Ok(m)
    }

    pub fn gpus(&self) -> u32 {
        self.gpus
    }

    pub fn has_aggregator(&self) -> bool {
        self.aggregator
    }

    pub fn dim(&self) -> usize {
        self.gpus as usize + 1 + usize::from(self.aggregator)
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.cells[row * self.dim() + col]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.cells.chunks(self.dim()).map(<[u64]>::to_vec).collect()
    }

    pub fn max_cell(&self) -> u64 {
        self.cells.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        (0..self.dim()).map(|c| self.get(row, c)).sum()
    }

    pub fn col_sum(&self, col: usize) -> u64 {
        (0..self.dim()).map(|r| self.get(r, col)).sum()
    }

    pub fn nonzero_cells(&self) -> Vec<(usize, usize)> {
        let dim = self.dim();
        (0..dim * dim)
            .filter(|&i| self.cells[i] != 0)
            .map(|i| (i / dim, i % dim))
            .collect()
    }

    /// Axis labels: "0" for the host, "1".."d" for the GPUs, "net" for the aggregator.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = (0..=self.gpus).map(|i| i.to_string()).collect();
        if self.aggregator {
            labels.push("net".into());
        }
        labels
    }

    pub fn index_of(&self, ep: Endpoint) -> Option<usize> {
        match ep {
            Endpoint::Host => Some(0),
            Endpoint::Gpu(g) if g < self.gpus => Some(g as usize + 1),
            Endpoint::Gpu(_) => None,
            Endpoint::NetAggregator => self.aggregator.then_some(self.gpus as usize + 1),
        }
    }

    fn widened(&self, gpus: u32, aggregator: bool) -> CommMatrix {
        let mut out = Self::with_shape(gpus.max(self.gpus), aggregator || self.aggregator);
        let net_index = out.gpus as usize + 1;
        let remap = |i: usize| {
            if self.aggregator && i == self.gpus as usize + 1 {
                net_index
            } else {
                i
            }
        };
        let (src_dim, dst_dim) = (self.dim(), out.dim());
        for r in 0..src_dim {
            for c in 0..src_dim {
                out.cells[remap(r) * dst_dim + remap(c)] = self.cells[r * src_dim + c];
            }
        }
        out
    }

    /// Adds every transfer of `dec`. The aggregator row/column is added on
    /// first use. On error the matrix is left unchanged.
    pub fn accumulate(&mut self, dec: &Decomposition) -> Result<(), MatrixError> {
        let touches_net = dec
            .transfers
            .iter()
            .any(|t| t.src == Endpoint::NetAggregator || t.dst == Endpoint::NetAggregator);
        if touches_net && !self.aggregator {
            *self = self.widened(self.gpus, true);
        }
        let dim = self.dim();
        let mut slots = Vec::with_capacity(dec.transfers.len());
        for t in &dec.transfers {
            let idx = |ep| {
                self.index_of(ep).ok_or(MatrixError::EndpointOutOfRange {
                    endpoint: ep,
                    gpus: self.gpus,
                })
            };
            slots.push((idx(t.src)?, idx(t.dst)?, t.bytes));
        }
        for (k, &(r, c, bytes)) in slots.iter().enumerate() {
            match self.cells[r * dim + c].checked_add(bytes) {
                Some(v) => self.cells[r * dim + c] = v,
                None => {
                    for &(r, c, bytes) in &slots[..k] {
                        self.cells[r * dim + c] -= bytes;
                    }
                    return Err(MatrixError::CounterOverflow { row: r, col: c });
                }
            }
        }
        Ok(())
    }

    /// Cellwise sum, widening to the larger GPU count and to the aggregator
    /// column when either side has one.
    pub fn merge(&self, other: &CommMatrix) -> Result<CommMatrix, MatrixError> {
        let gpus = self.gpus.max(other.gpus);
        let aggregator = self.aggregator || other.aggregator;
        let mut out = self.widened(gpus, aggregator);
        let rhs = other.widened(gpus, aggregator);
        let dim = out.dim();
        for (i, (a, b)) in out.cells.iter_mut().zip(&rhs.cells).enumerate() {
            *a = a.checked_add(*b).ok_or(MatrixError::CounterOverflow {
                row: i / dim,
                col: i % dim,
            })?;
        }
        Ok(out)
    }

    /// M + Mᵀ.
    pub fn symmetrized(&self) -> Result<CommMatrix, MatrixError> {
        let dim = self.dim();
        let mut out = self.clone();
        for r in 0..dim {
            for c in 0..dim {
                out.cells[r * dim + c] = self
                    .get(r, c)
                    .checked_add(self.get(c, r))
                    .ok_or(MatrixError::CounterOverflow { row: r, col: c })?;
            }
        }
        Ok(out)
    }
}

/// One decomposed call, tagged with its type and logical payload size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contribution {
    pub comm_type: CommType,
    pub payload_bytes: u64,
    pub decomposition: Decomposition,
}

/// Decomposes every instance, matched send/recv pair and copy event, in
/// that order. Instances are decomposed in parallel; the output order does
/// not depend on scheduling.
pub fn collect_contributions(
    instances: &[CollectiveInstance],
    pairs: &[P2pPair],
    events: &[TraceEvent],
    config: &ModelConfig,
) -> Result<Vec<Contribution>, DecomposeError> {
    let mut out: Vec<Contribution> = instances
        .par_iter()
        .map(|inst| {
            Ok(Contribution {
                comm_type: CommType::of_collective(inst.collective),
                payload_bytes: inst.payload_bytes,
                decomposition: decompose_instance(inst, config)?,
            })
        })
        .collect::<Result<_, DecomposeError>>()?;
    out.extend(pairs.iter().map(|pair| Contribution {
        comm_type: CommType::SendRecv,
        payload_bytes: pair.bytes(),
        decomposition: decompose_p2p(pair),
    }));
    for ev in events {
        if let Some(comm_type) = CommType::of_copy(ev.kind) {
            out.push(Contribution {
                comm_type,
                payload_bytes: ev.bytes.unwrap_or(0),
                decomposition: decompose_copy(ev)?,
            });
        }
    }
    Ok(out)
}

/// Sums all contributions into one matrix over `gpus` GPUs.
pub fn combined_matrix(
    contributions: &[Contribution],
    gpus: u32,
) -> Result<CommMatrix, MatrixError> {
    let mut m = CommMatrix::zeros(gpus);
    for c in contributions {
        m.accumulate(&c.decomposition)?;
    }
    Ok(m)
}

/// One matrix per communication type present in `contributions`.
pub fn split_by_primitive(
    contributions: &[Contribution],
    gpus: u32,
) -> Result<BTreeMap<CommType, CommMatrix>, MatrixError> {
    let mut out: BTreeMap<CommType, CommMatrix> = BTreeMap::new();
    for c in contributions {
        out.entry(c.comm_type)
            .or_insert_with(|| CommMatrix::zeros(gpus))
            .accumulate(&c.decomposition)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeStats {
    pub calls: u64,
    /// Sum of the logical size S of every call.
    pub payload_bytes: u64,
    /// Sum of all bytes the model attributes to pairwise transfers.
    pub wire_bytes: u64,
}

/// Call counts and sizes for every communication type, zero rows included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub rows: BTreeMap<CommType, TypeStats>,
}

impl Default for StatsSummary {
    fn default() -> Self {
        StatsSummary {
            rows: CommType::ALL
                .into_iter()
                .map(|t| (t, TypeStats::default()))
                .collect(),
        }
    }
}

impl StatsSummary {
    pub fn get(&self, ty: CommType) -> TypeStats {
        self.rows.get(&ty).copied().unwrap_or_default()
    }

    pub fn total_calls(&self) -> u64 {
        self.rows.values().map(|s| s.calls).sum()
    }
}

pub fn summarize(contributions: &[Contribution]) -> StatsSummary {
    let mut summary = StatsSummary::default();
    for c in contributions {
        let row = summary.rows.entry(c.comm_type).or_default();
        row.calls += 1;
        row.payload_bytes = row.payload_bytes.saturating_add(c.payload_bytes);
        row.wire_bytes = row.wire_bytes.saturating_add(c.decomposition.total_bytes());
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::PairTransfer;
    use crate::trace::{AlgorithmChoice, CopyKind};

    fn transfer(src: Endpoint, dst: Endpoint, bytes: u64) -> PairTransfer {
        PairTransfer { src, dst, bytes }
    }

    #[test]
    fn empty_decomposition_is_noop() {
        let mut m = CommMatrix::zeros(4);
        m.accumulate(&Decomposition::empty()).unwrap();
        assert_eq!(m, CommMatrix::zeros(4));
    }

    #[test]
    fn ring_allreduce_cells() {
        let inst = CollectiveInstance::synthetic(
            CollectiveKind::AllReduce,
            AlgorithmChoice::Ring,
            4,
            4096,
            None,
        );
        let dec = decompose_instance(&inst, &ModelConfig::default()).unwrap();
        let mut m = CommMatrix::zeros(4);
        m.accumulate(&dec).unwrap();
        assert_eq!(m.nonzero_cells(), vec![(1, 2), (2, 3), (3, 4), (4, 1)]);
        for (r, c) in m.nonzero_cells() {
            assert_eq!(m.get(r, c), 6144);
        }
    }

    #[test]
    fn host_index_mapping() {
        let ev = TraceEvent::copy(
            EventKind::Memcpy,
            "c",
            1,
            0,
            2,
            CopyKind::H2D,
            Endpoint::Host,
            Endpoint::Gpu(2),
            4096,
        );
        let mut m = CommMatrix::zeros(4);
        m.accumulate(&decompose_copy(&ev).unwrap()).unwrap();
        assert_eq!(m.get(0, 3), 4096);
        assert_eq!(m.get(0, 0), 0);
    }

    #[test]
    fn out_of_range_leaves_matrix_unchanged() {
        let mut m = CommMatrix::zeros(2);
        let dec = Decomposition::from_transfers([
            transfer(Endpoint::Gpu(0), Endpoint::Gpu(1), 5),
            transfer(Endpoint::Gpu(1), Endpoint::Gpu(2), 5),
        ]);
        assert!(matches!(
            m.accumulate(&dec),
            Err(MatrixError::EndpointOutOfRange {
                endpoint: Endpoint::Gpu(2),
                gpus: 2
            })
        ));
        assert_eq!(m, CommMatrix::zeros(2));
    }

    #[test]
    fn overflow_is_error() {
        let mut m = CommMatrix::zeros(2);
        let big = Decomposition::from_transfers([
            transfer(Endpoint::Gpu(0), Endpoint::Gpu(1), 1),
            transfer(Endpoint::Gpu(1), Endpoint::Gpu(0), u64::MAX),
        ]);
        m.accumulate(&big).unwrap();
        let before = m.clone();
        assert!(matches!(
            m.accumulate(&big),
            Err(MatrixError::CounterOverflow { .. })
        ));
        assert_eq!(m, before);
    }

    #[test]
    fn aggregator_widening() {
        let mut m = CommMatrix::zeros(2);
        m.accumulate(&Decomposition::from_transfers([transfer(
            Endpoint::Host,
            Endpoint::Gpu(1),
            9,
        )]))
        .unwrap();
        m.accumulate(&Decomposition::from_transfers([transfer(
            Endpoint::Gpu(0),
            Endpoint::NetAggregator,
            4,
        )]))
        .unwrap();
        assert_eq!(m.dim(), 4);
        assert_eq!(m.get(0, 2), 9);
        assert_eq!(m.get(1, 3), 4);
        assert_eq!(m.labels(), vec!["0", "1", "2", "net"]);

        let merged = CommMatrix::zeros(3).merge(&m).unwrap();
        assert_eq!(merged.dim(), 5);
        assert_eq!(merged.get(0, 2), 9);
        assert_eq!(merged.get(1, 4), 4);
    }

    #[test]
    fn merge_identity_and_symmetry() {
        let m = CommMatrix::from_rows(2, false, &[vec![0, 1, 2], vec![3, 0, 4], vec![5, 6, 0]])
            .unwrap();
        assert_eq!(m.merge(&CommMatrix::zeros(2)).unwrap(), m);
        let s = m.symmetrized().unwrap();
        assert_eq!(s.get(1, 2), 10);
        assert_eq!(s.get(2, 1), 10);
        assert_eq!(s.get(0, 0), 0);
    }

    #[test]
    fn from_rows_rejects_diagonal() {
        assert!(CommMatrix::from_rows(1, false, &[vec![1, 0], vec![0, 0]]).is_err());
        assert!(CommMatrix::from_rows(1, false, &[vec![0, 0]]).is_err());
    }

    #[test]
    fn summary_of_broadcasts_and_allgathers() {
        let mut contribs = Vec::new();
        for _ in 0..5 {
            let inst = CollectiveInstance::synthetic(
                CollectiveKind::Broadcast,
                AlgorithmChoice::Ring,
                8,
                122_400_000,
                Some(0),
            );
            contribs.push(Contribution {
                comm_type: CommType::Broadcast,
                payload_bytes: inst.payload_bytes,
                decomposition: decompose_instance(&inst, &ModelConfig::default()).unwrap(),
            });
        }
        for _ in 0..3 {
            let inst = CollectiveInstance::synthetic(
                CollectiveKind::AllGather,
                AlgorithmChoice::Ring,
                8,
                1_000_000,
                None,
            );
            contribs.push(Contribution {
                comm_type: CommType::AllGather,
                payload_bytes: inst.payload_bytes,
                decomposition: decompose_instance(&inst, &ModelConfig::default()).unwrap(),
            });
        }
        let s = summarize(&contribs);
        assert_eq!(s.get(CommType::Broadcast).calls, 5);
        assert_eq!(s.get(CommType::Broadcast).payload_bytes, 612_000_000);
        assert_eq!(s.get(CommType::Broadcast).wire_bytes, 7 * 612_000_000);
        assert_eq!(s.get(CommType::AllGather).calls, 3);
        assert_eq!(s.get(CommType::AllGather).payload_bytes, 3_000_000);
        assert_eq!(s.get(CommType::AllReduce), TypeStats::default());
    }

    #[test]
    fn empty_summary_is_zero() {
        let s = summarize(&[]);
        assert_eq!(s.rows.len(), CommType::ALL.len());
        assert_eq!(s.total_calls(), 0);
        assert!(s
            .rows
            .values()
            .all(|r| r.wire_bytes == 0 && r.payload_bytes == 0));
    }

    #[test]
    fn comm_type_keys_round_trip() {
        for t in CommType::ALL {
            assert_eq!(t.key().parse::<CommType>().unwrap(), t);
        }
    }
}
