//! Chunk-level step simulator for the ring and double-binary-tree schedules.
//!
//! This is a second, independent route to the byte counts of the
//! decomposition models. It walks the schedule step by step, tracks which
//! ranks' contributions every buffer holds, and fails if the schedule does not
//! leave every rank with the data the collective promises. It shares no
//! arithmetic with `decompose` beyond the tree shape it is handed.

use std::collections::BTreeMap;

use crate::decompose::{Decomposition, DoubleBinaryTree, PairTransfer};
use crate::trace::{CollectiveKind, Endpoint};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("{0} requires a root rank")]
    MissingRoot(CollectiveKind),
    #[error("invalid ring order {0:?}")]
    BadRing(Vec<u32>),
    #[error("degenerate tree: {0}")]
    DegenerateTree(String),
    #[error("schedule did not complete: {0}")]
    Incomplete(String),
}

/// One chunk moved from `src` rank to `dst` rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSend {
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
}

/// Chunk sends grouped by synchronous step, in temporal order. Steps in which
/// only empty chunks would move are kept as empty steps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepLog {
    pub steps: Vec<Vec<ChunkSend>>,
}

impl StepLog {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn chunk_sends(&self) -> impl Iterator<Item = &ChunkSend> {
        self.steps.iter().flatten()
    }

    fn push_step(&mut self, sends: Vec<ChunkSend>) {
        self.steps
            .push(sends.into_iter().filter(|c| c.bytes > 0).collect());
    }
}

/// Set of ranks whose input has been folded into a buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Contributors(Vec<u64>);

impl Contributors {
    fn none(n: usize) -> Self {
        Contributors(vec![0; n.div_ceil(64)])
    }

    fn single(n: usize, rank: usize) -> Self {
        let mut c = Self::none(n);
        c.0[rank / 64] |= 1 << (rank % 64);
        c
    }

    fn all(n: usize) -> Self {
        let mut c = Self::none(n);
        for rank in 0..n {
            c.0[rank / 64] |= 1 << (rank % 64);
        }
        c
    }

    fn merge(&mut self, other: &Contributors) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= *b;
        }
    }
}

fn chunk_sizes(total: u64, n: usize) -> Vec<u64> {
    let per = if n == 0 { 0 } else { total.div_ceil(n as u64) };
    let mut left = total;
    (0..n)
        .map(|_| {
            let take = per.min(left);
            left -= take;
            take
        })
        .collect()
}

fn check_ring(ring: &[u32], n: usize) -> Result<(), OracleError> {
    let mut seen = vec![false; n];
    if ring.len() != n {
        return Err(OracleError::BadRing(ring.to_vec()));
    }
    for &r in ring {
        match seen.get_mut(r as usize) {
            Some(s) if !*s => *s = true,
            _ => return Err(OracleError::BadRing(ring.to_vec())),
        }
    }
    Ok(())
}

/// Simulates one of the five collectives on a ring.
///
/// AllReduce, AllGather and ReduceScatter cut S into N chunks of ceil(S/N)
/// (chunk i belongs to rank i); Broadcast and Reduce forward the whole buffer
/// hop by hop.
pub fn simulate_ring(
    collective: CollectiveKind,
    n_ranks: u32,
    payload_bytes: u64,
    root: Option<u32>,
    ring: &[u32],
) -> Result<StepLog, OracleError> {
    let n = n_ranks as usize;
    check_ring(ring, n)?;
    let mut log = StepLog::default();
    if n < 2 {
        if collective.is_rooted() && root.is_none() {
            return Err(OracleError::MissingRoot(collective));
        }
        return Ok(log);
    }
    let next = |i: usize| ring[(i + 1) % n] as usize;
    let chunks = chunk_sizes(payload_bytes, n);

    match collective {
        CollectiveKind::AllReduce => {
            reduce_scatter_steps(&mut log, ring, &chunks)?;
            all_gather_steps(&mut log, ring, &chunks)?;
        }
        CollectiveKind::ReduceScatter => reduce_scatter_steps(&mut log, ring, &chunks)?,
        CollectiveKind::AllGather => all_gather_steps(&mut log, ring, &chunks)?,
        CollectiveKind::Broadcast => {
            let root = root.ok_or(OracleError::MissingRoot(collective))? as usize;
            let start = ring
                .iter()
                .position(|&r| r as usize == root)
                .ok_or_else(|| OracleError::Incomplete(format!("root {root} not on the ring")))?;
            let mut holds = vec![false; n];
            holds[root] = true;
            for hop in 0..n - 1 {
                let i = (start + hop) % n;
                let (from, to) = (ring[i] as usize, next(i));
                if !holds[from] {
                    return Err(OracleError::Incomplete(format!(
                        "rank {from} forwards data it lacks"
                    )));
                }
                holds[to] = true;
                log.push_step(vec![ChunkSend {
                    src: from as u32,
                    dst: to as u32,
                    bytes: payload_bytes,
                }]);
            }
            if holds.iter().any(|h| !h) {
                return Err(OracleError::Incomplete("broadcast missed a rank".into()));
            }
        }
        CollectiveKind::Reduce => {
            let root = root.ok_or(OracleError::MissingRoot(collective))? as usize;
            let root_at = ring
                .iter()
                .position(|&r| r as usize == root)
                .ok_or_else(|| OracleError::Incomplete(format!("root {root} not on the ring")))?;
            let mut acc: Vec<Contributors> = (0..n).map(|r| Contributors::single(n, r)).collect();
            for hop in 0..n - 1 {
                let i = (root_at + 1 + hop) % n;
                let (from, to) = (ring[i] as usize, next(i));
                let carried = acc[from].clone();
                acc[to].merge(&carried);
                log.push_step(vec![ChunkSend {
                    src: from as u32,
                    dst: to as u32,
                    bytes: payload_bytes,
                }]);
            }
            if acc[root] != Contributors::all(n) {
                return Err(OracleError::Incomplete(
                    "root lacks some contributions".into(),
                ));
            }
        }
    }
    Ok(log)
}

/// N-1 steps; afterwards rank r holds the full reduction of chunk r.
fn reduce_scatter_steps(
    log: &mut StepLog,
    ring: &[u32],
    chunks: &[u64],
) -> Result<(), OracleError> {
    let n = ring.len();
    // partial[rank][chunk]
    let mut partial: Vec<Vec<Contributors>> = (0..n)
        .map(|r| (0..n).map(|_| Contributors::single(n, r)).collect())
        .collect();
    for step in 0..n - 1 {
        let mut sends = Vec::with_capacity(n);
        let mut updates = Vec::with_capacity(n);
        for i in 0..n {
            let from = ring[i] as usize;
            let to = ring[(i + 1) % n] as usize;
            // the chunk whose owner is still n-1-step hops ahead
            let chunk = ring[(i + n - 1 - step) % n] as usize;
            updates.push((to, chunk, partial[from][chunk].clone()));
            sends.push(ChunkSend {
                src: from as u32,
                dst: to as u32,
                bytes: chunks[chunk],
            });
        }
        for (to, chunk, carried) in updates {
            partial[to][chunk].merge(&carried);
        }
        log.push_step(sends);
    }
    let everyone = Contributors::all(n);
    if let Some(owner) = (0..n).find(|&r| partial[r][r] != everyone) {
        return Err(OracleError::Incomplete(format!(
            "rank {owner} lacks its reduced chunk"
        )));
    }
    Ok(())
}

/// N-1 steps starting from rank r holding chunk r; afterwards every rank
/// holds every chunk.
fn all_gather_steps(log: &mut StepLog, ring: &[u32], chunks: &[u64]) -> Result<(), OracleError> {
    let n = ring.len();
    let mut has: Vec<Vec<bool>> = (0..n).map(|r| (0..n).map(|c| c == r).collect()).collect();
    for step in 0..n - 1 {
        let mut sends = Vec::with_capacity(n);
        let mut updates = Vec::with_capacity(n);
        for i in 0..n {
            let from = ring[i] as usize;
            let to = ring[(i + 1) % n] as usize;
            // the chunk that originated `step` positions behind
            let chunk = ring[(i + n - step) % n] as usize;
            if !has[from][chunk] {
                return Err(OracleError::Incomplete(format!(
                    "rank {from} forwards chunk {chunk} it has not received"
                )));
            }
            updates.push((to, chunk));
            sends.push(ChunkSend {
                src: from as u32,
                dst: to as u32,
                bytes: chunks[chunk],
            });
        }
        for (to, chunk) in updates {
            has[to][chunk] = true;
        }
        log.push_step(sends);
    }
    if has.iter().flatten().any(|h| !h) {
        return Err(OracleError::Incomplete(
            "all-gather left a rank without a chunk".into(),
        ));
    }
    Ok(())
}

/// Depth of every rank in a tree given by parent links, rejecting forests,
/// cycles and ranks outside the tree.
fn depths(parent: &[Option<u32>], n: usize) -> Result<Vec<usize>, OracleError> {
    if parent.len() != n {
        return Err(OracleError::DegenerateTree(format!(
            "tree has {} ranks, expected {n}",
            parent.len()
        )));
    }
    let roots = parent.iter().filter(|p| p.is_none()).count();
    if roots != 1 {
        return Err(OracleError::DegenerateTree(format!("{roots} roots")));
    }
    let mut depth = vec![0; n];
    for (rank, slot) in depth.iter_mut().enumerate() {
        let mut cur = rank;
        let mut d = 0;
        while let Some(p) = parent[cur] {
            cur = p as usize;
            d += 1;
            if cur >= n || d > n {
                return Err(OracleError::DegenerateTree(format!(
                    "rank {rank} never reaches the root"
                )));
            }
        }
        *slot = d;
    }
    Ok(depth)
}

/// Simulates tree AllReduce: per tree, a reduce from the deepest level up to
/// the root followed by a broadcast back down, each tree moving half of S
/// (the first tree takes the odd byte).
pub fn simulate_tree(
    n_ranks: u32,
    payload_bytes: u64,
    dbt: &DoubleBinaryTree,
) -> Result<StepLog, OracleError> {
    let n = n_ranks as usize;
    let mut log = StepLog::default();
    let halves = [payload_bytes - payload_bytes / 2, payload_bytes / 2];
    for (tree, half) in dbt.trees.iter().zip(halves) {
        let depth = depths(&tree.parent, n)?;
        let max_depth = depth.iter().copied().max().unwrap_or(0);

        let mut acc: Vec<Contributors> = (0..n).map(|r| Contributors::single(n, r)).collect();
        for level in (1..=max_depth).rev() {
            let mut sends = Vec::new();
            for rank in (0..n).filter(|&r| depth[r] == level) {
                let up = tree.parent[rank].expect("non-root has a parent") as usize;
                let carried = acc[rank].clone();
                acc[up].merge(&carried);
                sends.push(ChunkSend {
                    src: rank as u32,
                    dst: up as u32,
                    bytes: half,
                });
            }
            log.push_step(sends);
        }
        let root = depth.iter().position(|&d| d == 0).expect("one root");
        if acc[root] != Contributors::all(n) {
            return Err(OracleError::Incomplete(
                "tree root lacks contributions".into(),
            ));
        }

        let mut has_result = vec![false; n];
        has_result[root] = true;
        for level in 0..max_depth {
            let mut sends = Vec::new();
            for child in (0..n).filter(|&r| depth[r] == level + 1) {
                let up = tree.parent[child].expect("non-root has a parent") as usize;
                if !has_result[up] {
                    return Err(OracleError::Incomplete(format!(
                        "rank {up} broadcasts too early"
                    )));
                }
                has_result[child] = true;
                sends.push(ChunkSend {
                    src: up as u32,
                    dst: child as u32,
                    bytes: half,
                });
            }
            log.push_step(sends);
        }
        if has_result.iter().any(|h| !h) {
            return Err(OracleError::Incomplete("broadcast missed a rank".into()));
        }
    }
    Ok(log)
}

/// Sums chunk sends per directed rank pair, with rank r on GPU r.
pub fn aggregate(log: &StepLog) -> Decomposition {
    let max_rank = log
        .chunk_sends()
        .map(|c| c.src.max(c.dst))
        .max()
        .unwrap_or(0);
    aggregate_on(log, &(0..=max_rank).collect::<Vec<_>>())
}

/// Sums chunk sends per directed rank pair, placing rank r on `devices[r]`.
pub fn aggregate_on(log: &StepLog, devices: &[u32]) -> Decomposition {
    let mut pairs: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for c in log.chunk_sends() {
        *pairs.entry((c.src, c.dst)).or_default() += c.bytes;
    }
    Decomposition::from_transfers(pairs.into_iter().map(|((src, dst), bytes)| PairTransfer {
        src: Endpoint::Gpu(devices[src as usize]),
        dst: Endpoint::Gpu(devices[dst as usize]),
        bytes,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::build_double_binary_tree;

    fn identity(n: u32) -> Vec<u32> {
        (0..n).collect()
    }

    #[test]
    fn allreduce_three_ranks_nine_bytes() {
        let log = simulate_ring(CollectiveKind::AllReduce, 3, 9, None, &identity(3)).unwrap();
        assert_eq!(log.num_steps(), 4);
        for step in &log.steps {
            assert_eq!(step.len(), 3);
            assert!(step.iter().all(|c| c.bytes == 3));
        }
        let dec = aggregate(&log);
        for r in 0..3 {
            assert_eq!(
                dec.bytes_between(Endpoint::Gpu(r), Endpoint::Gpu((r + 1) % 3)),
                12
            );
        }
    }

    #[test]
    fn broadcast_two_ranks() {
        let log = simulate_ring(CollectiveKind::Broadcast, 2, 5, Some(0), &identity(2)).unwrap();
        assert_eq!(
            log.steps,
            vec![vec![ChunkSend {
                src: 0,
                dst: 1,
                bytes: 5
            }]]
        );
    }

    #[test]
    fn single_rank_is_empty() {
        let log = simulate_ring(CollectiveKind::AllReduce, 1, 4096, None, &identity(1)).unwrap();
        assert_eq!(log.num_steps(), 0);
        assert!(aggregate(&log).is_empty());
        let log = simulate_tree(1, 64, &build_double_binary_tree(1)).unwrap();
        assert_eq!(log.chunk_sends().count(), 0);
    }

    #[test]
    fn rooted_needs_root() {
        assert_eq!(
            simulate_ring(CollectiveKind::Reduce, 4, 8, None, &identity(4)),
            Err(OracleError::MissingRoot(CollectiveKind::Reduce))
        );
    }

    #[test]
    fn bad_ring_rejected() {
        assert!(matches!(
            simulate_ring(CollectiveKind::AllGather, 3, 9, None, &[0, 1, 1]),
            Err(OracleError::BadRing(_))
        ));
    }

    #[test]
    fn tree_two_ranks() {
        let log = simulate_tree(2, 100, &build_double_binary_tree(2)).unwrap();
        let sends: Vec<_> = log.chunk_sends().collect();
        assert_eq!(sends.len(), 4);
        assert!(sends.iter().all(|c| c.bytes == 50));
    }

    #[test]
    fn tree_eight_ranks() {
        let log = simulate_tree(8, 1024, &build_double_binary_tree(8)).unwrap();
        let dec = aggregate(&log);
        for r in 0..8u32 {
            let expect = if r == 0 || r == 7 { 1024 } else { 2048 };
            assert_eq!(dec.traffic(Endpoint::Gpu(r)).sent, expect, "rank {r}");
        }
    }

    #[test]
    fn tree_cycle_detected() {
        let mut dbt = build_double_binary_tree(4);
        dbt.trees[0].parent[1] = Some(1);
        assert!(matches!(
            simulate_tree(4, 8, &dbt),
            Err(OracleError::DegenerateTree(_))
        ));
    }

    #[test]
    fn aggregate_single_step() {
        let log = StepLog {
            steps: vec![vec![ChunkSend {
                src: 1,
                dst: 0,
                bytes: 7,
            }]],
        };
        let dec = aggregate(&log);
        assert_eq!(dec.transfers.len(), 1);
        assert_eq!(dec.bytes_between(Endpoint::Gpu(1), Endpoint::Gpu(0)), 7);
        assert!(aggregate(&StepLog::default()).is_empty());
    }

    #[test]
    fn chunking() {
        assert_eq!(chunk_sizes(5, 4), vec![2, 2, 1, 0]);
        assert_eq!(chunk_sizes(0, 3), vec![0, 0, 0]);
    }
}
