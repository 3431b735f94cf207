//! Algorithm-aware byte models: each collective instance, matched send/recv
//! pair or copy event becomes a list of directed per-endpoint transfers.

mod direct;
mod ring;
mod tree;

pub use direct::{decompose_allreduce_collnet, decompose_copy, decompose_p2p};
pub use ring::{
    decompose_allgather_ring, decompose_allreduce_ring, decompose_broadcast_ring,
    decompose_reduce_ring, decompose_reducescatter_ring, RingOrder,
};
pub use tree::{build_double_binary_tree, decompose_allreduce_tree, BinaryTree, DoubleBinaryTree};

use std::collections::BTreeMap;

use crate::trace::{AlgorithmChoice, AlgorithmKind, CollectiveInstance, CollectiveKind, Endpoint};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum DecomposeError {
    #[error("{collective} instance uses algorithm {found}, expected {expected}")]
    WrongAlgorithm {
        collective: CollectiveKind,
        expected: AlgorithmKind,
        found: AlgorithmChoice,
    },
    #[error("wrong collective: expected {expected}, found {found}")]
    WrongCollective {
        expected: CollectiveKind,
        found: CollectiveKind,
    },
    #[error("{0} requires a root rank")]
    MissingRoot(CollectiveKind),
    #[error("root {root} out of range for {n_ranks} ranks")]
    RootOutOfRange { root: u32, n_ranks: u32 },
    #[error("double binary tree does not span the instance's ranks: {0}")]
    DegenerateTree(String),
    #[error("invalid ring order: {0}")]
    InvalidRingOrder(String),
    #[error("event is not a copy")]
    NotACopy,
}

/// One directed attribution of bytes between two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairTransfer {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub sent: u64,
    pub recv: u64,
}

/// Transfers of one call, merged per directed pair and sorted by
/// (src, dst), with per-endpoint sent/received totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decomposition {
    pub transfers: Vec<PairTransfer>,
    pub sent: BTreeMap<Endpoint, u64>,
    pub recv: BTreeMap<Endpoint, u64>,
}

impl Decomposition {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds the canonical form. Transfers on the same pair are merged;
    /// zero-byte transfers are kept.
    pub fn from_transfers<I: IntoIterator<Item = PairTransfer>>(transfers: I) -> Self {
        let mut pairs: BTreeMap<(Endpoint, Endpoint), u64> = BTreeMap::new();
        for t in transfers {
            debug_assert_ne!(t.src, t.dst, "self transfer");
            *pairs.entry((t.src, t.dst)).or_default() += t.bytes;
        }
        let mut sent = BTreeMap::new();
        let mut recv = BTreeMap::new();
        let transfers = pairs
            .into_iter()
            .map(|((src, dst), bytes)| {
                *sent.entry(src).or_default() += bytes;
                *recv.entry(dst).or_default() += bytes;
                PairTransfer { src, dst, bytes }
            })
            .collect();
        Decomposition {
            transfers,
            sent,
            recv,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.transfers.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.transfers.iter().map(|t| t.bytes).sum()
    }

    pub fn traffic(&self, ep: Endpoint) -> Traffic {
        Traffic {
            sent: self.sent.get(&ep).copied().unwrap_or(0),
            recv: self.recv.get(&ep).copied().unwrap_or(0),
        }
    }

    /// Sent/received bytes per rank, given each rank's device.
    pub fn per_rank(&self, devices: &[u32]) -> Vec<Traffic> {
        devices
            .iter()
            .map(|&d| self.traffic(Endpoint::Gpu(d)))
            .collect()
    }

    pub fn bytes_between(&self, src: Endpoint, dst: Endpoint) -> u64 {
        self.transfers
            .iter()
            .find(|t| t.src == src && t.dst == dst)
            .map_or(0, |t| t.bytes)
    }

    /// Drops zero-byte transfers (and the endpoints only they touched).
    pub fn without_zero_transfers(&self) -> Decomposition {
        Decomposition::from_transfers(self.transfers.iter().copied().filter(|t| t.bytes > 0))
    }
}

pub const DEFAULT_TREE_THRESHOLD: u64 = 1 << 20;

/// Settings the analyzer needs to turn instances into transfers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// AllReduce calls with `Auto` algorithm and S below this use Tree.
    pub tree_threshold: u64,
    /// Ring order used for every communicator whose size matches it.
    pub default_ring: Option<RingOrder>,
    /// Ring order per communicator id; takes precedence over `default_ring`.
    pub comm_rings: BTreeMap<String, RingOrder>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tree_threshold: DEFAULT_TREE_THRESHOLD,
            default_ring: None,
            comm_rings: BTreeMap::new(),
        }
    }
}

impl ModelConfig {
    pub fn ring_for(&self, inst: &CollectiveInstance) -> Result<RingOrder, DecomposeError> {
        if let Some(order) = self.comm_rings.get(&inst.comm_id) {
            if order.len() != inst.n_ranks as usize {
                return Err(DecomposeError::InvalidRingOrder(format!(
                    "ring order for {} has {} ranks, communicator has {}",
                    inst.comm_id,
                    order.len(),
                    inst.n_ranks
                )));
            }
            return Ok(order.clone());
        }
        match &self.default_ring {
            Some(order) if order.len() == inst.n_ranks as usize => Ok(order.clone()),
            _ => Ok(RingOrder::identity(inst.n_ranks)),
        }
    }
}

/// Picks the algorithm for an instance. Non-AllReduce collectives are always
/// ring; an explicit choice is kept; `Auto` AllReduce picks Tree below the
/// size threshold and Ring otherwise. Collnet is never chosen automatically.
pub fn select_algorithm(inst: &CollectiveInstance, tree_threshold: u64) -> AlgorithmKind {
    if inst.collective != CollectiveKind::AllReduce {
        return AlgorithmKind::Ring;
    }
    match inst.algorithm.explicit() {
        Some(kind) => kind,
        None if inst.payload_bytes < tree_threshold => AlgorithmKind::Tree,
        None => AlgorithmKind::Ring,
    }
}

fn expect_algorithm(
    inst: &CollectiveInstance,
    collective: CollectiveKind,
    algo: AlgorithmKind,
) -> Result<(), DecomposeError> {
    if inst.collective != collective {
        return Err(DecomposeError::WrongCollective {
            expected: collective,
            found: inst.collective,
        });
    }
    if inst.algorithm != AlgorithmChoice::from(algo) {
        return Err(DecomposeError::WrongAlgorithm {
            collective,
            expected: algo,
            found: inst.algorithm,
        });
    }
    Ok(())
}

/// Resolves the algorithm and dispatches to the matching model.
pub fn decompose_instance(
    inst: &CollectiveInstance,
    config: &ModelConfig,
) -> Result<Decomposition, DecomposeError> {
    let algo = select_algorithm(inst, config.tree_threshold);
    let resolved = CollectiveInstance {
        algorithm: algo.into(),
        ..inst.clone()
    };
    match (inst.collective, algo) {
        (CollectiveKind::AllReduce, AlgorithmKind::Ring) => {
            decompose_allreduce_ring(&resolved, &config.ring_for(inst)?)
        }
        (CollectiveKind::AllReduce, AlgorithmKind::Tree) => {
            decompose_allreduce_tree(&resolved, &build_double_binary_tree(inst.n_ranks))
        }
        (CollectiveKind::AllReduce, AlgorithmKind::Collnet) => {
            decompose_allreduce_collnet(&resolved)
        }
        (CollectiveKind::Broadcast, _) => {
            decompose_broadcast_ring(&resolved, &config.ring_for(inst)?)
        }
        (CollectiveKind::Reduce, _) => decompose_reduce_ring(&resolved, &config.ring_for(inst)?),
        (CollectiveKind::AllGather, _) => {
            decompose_allgather_ring(&resolved, &config.ring_for(inst)?)
        }
        (CollectiveKind::ReduceScatter, _) => {
            decompose_reducescatter_ring(&resolved, &config.ring_for(inst)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auto(collective: CollectiveKind, s: u64) -> CollectiveInstance {
        let root = collective.is_rooted().then_some(0);
        CollectiveInstance::synthetic(collective, AlgorithmChoice::Auto, 4, s, root)
    }

    #[test]
    fn auto_selection_threshold() {
        let t = DEFAULT_TREE_THRESHOLD;
        assert_eq!(
            select_algorithm(&auto(CollectiveKind::AllReduce, 4 << 10), t),
            AlgorithmKind::Tree
        );
        assert_eq!(
            select_algorithm(&auto(CollectiveKind::AllReduce, 64 << 20), t),
            AlgorithmKind::Ring
        );
        assert_eq!(
            select_algorithm(&auto(CollectiveKind::AllReduce, 1 << 20), t),
            AlgorithmKind::Ring
        );
        assert_eq!(
            select_algorithm(&auto(CollectiveKind::Broadcast, 16), t),
            AlgorithmKind::Ring
        );
        assert_eq!(
            select_algorithm(&auto(CollectiveKind::AllGather, 16), t),
            AlgorithmKind::Ring
        );
    }

    #[test]
    fn explicit_choice_kept() {
        let inst = CollectiveInstance::synthetic(
            CollectiveKind::AllReduce,
            AlgorithmChoice::Collnet,
            4,
            16,
            None,
        );
        assert_eq!(
            select_algorithm(&inst, DEFAULT_TREE_THRESHOLD),
            AlgorithmKind::Collnet
        );
    }

    #[test]
    fn dispatch_resolves_auto() {
        let inst = auto(CollectiveKind::AllReduce, 4096);
        let dec = decompose_instance(&inst, &ModelConfig::default()).unwrap();
        // tree: two roots at S, the rest at 2S
        let totals: Vec<u64> = dec.per_rank(&inst.devices).iter().map(|t| t.sent).collect();
        assert_eq!(totals, vec![4096, 8192, 8192, 4096]);
    }

    #[test]
    fn comm_ring_size_checked() {
        let mut config = ModelConfig::default();
        config
            .comm_rings
            .insert("synthetic".into(), RingOrder::new(vec![1, 0]).unwrap());
        let inst = auto(CollectiveKind::AllGather, 64);
        assert!(matches!(
            decompose_instance(&inst, &config),
            Err(DecomposeError::InvalidRingOrder(_))
        ));
    }

    #[test]
    fn merged_transfers() {
        let a = Endpoint::Gpu(0);
        let b = Endpoint::Gpu(1);
        let dec = Decomposition::from_transfers([
            PairTransfer {
                src: a,
                dst: b,
                bytes: 3,
            },
            PairTransfer {
                src: b,
                dst: a,
                bytes: 1,
            },
            PairTransfer {
                src: a,
                dst: b,
                bytes: 4,
            },
        ]);
        assert_eq!(dec.transfers.len(), 2);
        assert_eq!(dec.bytes_between(a, b), 7);
        assert_eq!(dec.traffic(a), Traffic { sent: 7, recv: 1 });
        assert_eq!(dec.total_bytes(), 8);
    }
}
