use crate::trace::{AlgorithmKind, CollectiveInstance, CollectiveKind, Endpoint};

use super::{expect_algorithm, DecomposeError, Decomposition, PairTransfer};

/// A rooted tree over ranks `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTree {
    pub root: u32,
    /// Parent of each rank, `None` for the root.
    pub parent: Vec<Option<u32>>,
    /// Children of each rank, left before right.
    pub children: Vec<Vec<u32>>,
}

impl BinaryTree {
    pub fn n_ranks(&self) -> u32 {
        self.parent.len() as u32
    }

    pub fn is_leaf(&self, rank: u32) -> bool {
        self.children[rank as usize].is_empty()
    }

    pub fn leaves(&self) -> Vec<u32> {
        (0..self.n_ranks()).filter(|&r| self.is_leaf(r)).collect()
    }

    /// Checks that this is a single spanning, acyclic tree over `n` ranks with
    /// consistent parent and child links.
    pub fn validate(&self, n: u32) -> Result<(), String> {
        let len = n as usize;
        if self.parent.len() != len || self.children.len() != len {
            return Err(format!(
                "tree covers {} ranks, expected {n}",
                self.parent.len()
            ));
        }
        if n == 0 {
            return Err("empty tree".into());
        }
        let roots: Vec<u32> = (0..n)
            .filter(|&r| self.parent[r as usize].is_none())
            .collect();
        if roots != [self.root] {
            return Err(format!("roots {roots:?}, declared root {}", self.root));
        }
        for rank in 0..n {
            if let Some(p) = self.parent[rank as usize] {
                if p >= n || !self.children[p as usize].contains(&rank) {
                    return Err(format!("rank {rank}: parent {p} does not list it as child"));
                }
            }
            for &c in &self.children[rank as usize] {
                if c >= n || self.parent[c as usize] != Some(rank) {
                    return Err(format!("rank {rank}: child {c} has another parent"));
                }
            }
        }
        // with one root and n-1 parent links, reaching the root from every rank rules out cycles
        for start in 0..n {
            let mut cur = start;
            for _ in 0..n {
                match self.parent[cur as usize] {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            if cur != self.root {
                return Err(format!("rank {start} does not reach the root"));
            }
        }
        Ok(())
    }
}

/// Two spanning trees over the same ranks, each carrying half of the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoubleBinaryTree {
    pub trees: [BinaryTree; 2],
}

impl DoubleBinaryTree {
    pub fn n_ranks(&self) -> u32 {
        self.trees[0].n_ranks()
    }

    /// Bytes carried by each tree: the first tree takes the odd byte.
    pub fn shares(payload_bytes: u64) -> [u64; 2] {
        [payload_bytes - payload_bytes / 2, payload_bytes / 2]
    }

    pub fn validate(&self, n: u32) -> Result<(), String> {
        for (i, tree) in self.trees.iter().enumerate() {
            tree.validate(n)
                .map_err(|e| format!("tree {}: {e}", i + 1))?;
        }
        Ok(())
    }
}

/// In-order layout of positions `lo..hi`: the subtree root sits right after a
/// perfect left subtree of 2^k - 1 nodes, with k maximal such that the left
/// subtree leaves room for the root. Returns the root position.
fn layout(lo: usize, hi: usize, parent: &mut [Option<usize>], up: Option<usize>) -> usize {
    let size = hi - lo;
    let mut left = 0;
    while 2 * left + 1 < size {
        left = 2 * left + 1;
    }
    let root = lo + left;
    parent[root] = up;
    if left > 0 {
        layout(lo, root, parent, Some(root));
    }
    if root + 1 < hi {
        layout(root + 1, hi, parent, Some(root));
    }
    root
}

fn tree_from_positions(parent_pos: &[Option<usize>], rank_at: impl Fn(usize) -> u32) -> BinaryTree {
    let n = parent_pos.len();
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut root = 0;
    // positions ascend, so children come out left before right
    for (pos, up) in parent_pos.iter().enumerate() {
        let rank = rank_at(pos);
        match up {
            Some(up) => {
                let p = rank_at(*up);
                parent[rank as usize] = Some(p);
                children[p as usize].push(rank);
            }
            None => root = rank,
        }
    }
    BinaryTree {
        root,
        parent,
        children,
    }
}

/// Builds the double binary tree for `n_ranks` ranks. The first tree places
/// rank p at in-order position p; the second uses the same shape with every
/// rank shifted by one, so for even N the leaves of one tree (the even
/// positions) are the inner nodes of the other.
pub fn build_double_binary_tree(n_ranks: u32) -> DoubleBinaryTree {
    let n = n_ranks.max(1) as usize;
    let mut parent_pos = vec![None; n];
    layout(0, n, &mut parent_pos, None);
    let first = tree_from_positions(&parent_pos, |p| p as u32);
    let second = tree_from_positions(&parent_pos, |p| ((p + 1) % n) as u32);
    DoubleBinaryTree {
        trees: [first, second],
    }
}

/// Tree AllReduce as a reduce up each tree followed by a broadcast down it:
/// every parent-child edge carries the tree's share once in each direction.
pub fn decompose_allreduce_tree(
    inst: &CollectiveInstance,
    dbt: &DoubleBinaryTree,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::AllReduce, AlgorithmKind::Tree)?;
    dbt.validate(inst.n_ranks)
        .map_err(DecomposeError::DegenerateTree)?;
    if inst.n_ranks < 2 {
        return Ok(Decomposition::empty());
    }
    let gpu = |rank: u32| Endpoint::Gpu(inst.device_of(rank));
    let mut transfers = Vec::new();
    for (tree, share) in dbt
        .trees
        .iter()
        .zip(DoubleBinaryTree::shares(inst.payload_bytes))
    {
        if share == 0 {
            continue;
        }
        for (rank, parent) in tree.parent.iter().enumerate() {
            if let Some(parent) = *parent {
                let (child, parent) = (gpu(rank as u32), gpu(parent));
                transfers.push(PairTransfer {
                    src: child,
                    dst: parent,
                    bytes: share,
                });
                transfers.push(PairTransfer {
                    src: parent,
                    dst: child,
                    bytes: share,
                });
            }
        }
    }
    Ok(Decomposition::from_transfers(transfers))
}
