use crate::trace::{AlgorithmKind, CollectiveInstance, CollectiveKind, Endpoint};

use super::{expect_algorithm, DecomposeError, Decomposition, PairTransfer};

/// A permutation of ranks: position p of the ring holds rank `order[p]`, and
/// each position sends to position p + 1 (mod N).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingOrder {
    order: Vec<u32>,
    position: Vec<usize>,
}

impl RingOrder {
    pub fn identity(n_ranks: u32) -> Self {
        RingOrder::new((0..n_ranks).collect()).expect("identity is a permutation")
    }

    pub fn new(order: Vec<u32>) -> Result<Self, DecomposeError> {
        let n = order.len();
        let mut position = vec![usize::MAX; n];
        for (p, &rank) in order.iter().enumerate() {
            let slot = position.get_mut(rank as usize).ok_or_else(|| {
                DecomposeError::InvalidRingOrder(format!("rank {rank} out of range for {n} ranks"))
            })?;
            if *slot != usize::MAX {
                return Err(DecomposeError::InvalidRingOrder(format!(
                    "rank {rank} repeated"
                )));
            }
            *slot = p;
        }
        Ok(RingOrder { order, position })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn ranks(&self) -> &[u32] {
        &self.order
    }

    pub fn rank_at(&self, position: usize) -> u32 {
        self.order[position % self.order.len()]
    }

    pub fn position_of(&self, rank: u32) -> usize {
        self.position[rank as usize]
    }

    pub fn successor(&self, rank: u32) -> u32 {
        self.rank_at(self.position_of(rank) + 1)
    }
}

/// Size of block `i` when S bytes are cut into N blocks of ceil(S/N), the
/// last non-empty block taking the remainder.
fn block_bytes(total: u64, n: u64, i: u64) -> u64 {
    let chunk = total.div_ceil(n);
    total.saturating_sub(i * chunk).min(chunk)
}

fn check_ring(inst: &CollectiveInstance, ring: &RingOrder) -> Result<(), DecomposeError> {
    if ring.len() != inst.n_ranks as usize {
        return Err(DecomposeError::InvalidRingOrder(format!(
            "ring has {} ranks, instance has {}",
            ring.len(),
            inst.n_ranks
        )));
    }
    Ok(())
}

fn root_of(inst: &CollectiveInstance) -> Result<u32, DecomposeError> {
    let root = inst
        .root
        .ok_or(DecomposeError::MissingRoot(inst.collective))?;
    if root >= inst.n_ranks {
        return Err(DecomposeError::RootOutOfRange {
            root,
            n_ranks: inst.n_ranks,
        });
    }
    Ok(root)
}

/// Bytes leaving every ring position, mapped onto successor edges.
fn successor_edges(
    inst: &CollectiveInstance,
    ring: &RingOrder,
    bytes_from_position: impl Fn(usize) -> u64,
) -> Decomposition {
    let n = ring.len();
    if n < 2 {
        return Decomposition::empty();
    }
    Decomposition::from_transfers((0..n).filter_map(|p| {
        let bytes = bytes_from_position(p);
        (bytes > 0).then(|| PairTransfer {
            src: Endpoint::Gpu(inst.device_of(ring.rank_at(p))),
            dst: Endpoint::Gpu(inst.device_of(ring.rank_at(p + 1))),
            bytes,
        })
    }))
}

// Over the N-1 gather steps a position forwards every block except the one
// owned by its successor; over the N-1 reduce-scatter steps every block
// except its own. Blocks are indexed by rank.
fn gather_bytes(inst: &CollectiveInstance, ring: &RingOrder, p: usize) -> u64 {
    let s = inst.payload_bytes;
    s - block_bytes(s, ring.len() as u64, u64::from(ring.rank_at(p + 1)))
}

fn scatter_bytes(inst: &CollectiveInstance, ring: &RingOrder, p: usize) -> u64 {
    let s = inst.payload_bytes;
    s - block_bytes(s, ring.len() as u64, u64::from(ring.rank_at(p)))
}

/// Ring AllReduce: a reduce-scatter phase followed by an all-gather phase,
/// 2(N-1) steps of one block per rank. With N | S every rank sends and
/// receives 2(N-1)S/N.
pub fn decompose_allreduce_ring(
    inst: &CollectiveInstance,
    ring: &RingOrder,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::AllReduce, AlgorithmKind::Ring)?;
    check_ring(inst, ring)?;
    Ok(successor_edges(inst, ring, |p| {
        scatter_bytes(inst, ring, p) + gather_bytes(inst, ring, p)
    }))
}

pub fn decompose_allgather_ring(
    inst: &CollectiveInstance,
    ring: &RingOrder,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::AllGather, AlgorithmKind::Ring)?;
    check_ring(inst, ring)?;
    Ok(successor_edges(inst, ring, |p| gather_bytes(inst, ring, p)))
}

pub fn decompose_reducescatter_ring(
    inst: &CollectiveInstance,
    ring: &RingOrder,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::ReduceScatter, AlgorithmKind::Ring)?;
    check_ring(inst, ring)?;
    Ok(successor_edges(inst, ring, |p| {
        scatter_bytes(inst, ring, p)
    }))
}

/// Broadcast pipelines the whole buffer from the root along the ring: every
/// edge except the one entering the root carries S.
pub fn decompose_broadcast_ring(
    inst: &CollectiveInstance,
    ring: &RingOrder,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::Broadcast, AlgorithmKind::Ring)?;
    check_ring(inst, ring)?;
    let root_pos = ring.position_of(root_of(inst)?);
    let n = ring.len();
    Ok(successor_edges(inst, ring, |p| {
        // the last position before the root wraps back to it and stays idle
        if (p + 1) % n == root_pos {
            0
        } else {
            inst.payload_bytes
        }
    }))
}

/// Reduce forwards the running reduction from the root's successor around the
/// ring into the root; the root itself never sends.
pub fn decompose_reduce_ring(
    inst: &CollectiveInstance,
    ring: &RingOrder,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::Reduce, AlgorithmKind::Ring)?;
    check_ring(inst, ring)?;
    let root_pos = ring.position_of(root_of(inst)?);
    Ok(successor_edges(inst, ring, |p| {
        if p == root_pos {
            0
        } else {
            inst.payload_bytes
        }
    }))
}
