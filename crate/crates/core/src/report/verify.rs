//! Side-by-side check of the byte model against the step simulator and the
//! closed-form per-rank totals for a single synthetic collective.

use std::fmt;

use crate::decompose::{
    build_double_binary_tree, decompose_instance, DecomposeError, Decomposition, ModelConfig,
    RingOrder, Traffic,
};
use crate::oracle::{aggregate, simulate_ring, simulate_tree, OracleError};
use crate::trace::{AlgorithmKind, CollectiveInstance, CollectiveKind, Endpoint};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("{0} does not support the {1} algorithm")]
    Unsupported(CollectiveKind, AlgorithmKind),
    #[error(transparent)]
    Model(#[from] DecomposeError),
    #[error("oracle: {0}")]
    Oracle(#[from] OracleError),
}

/// Closed-form per-rank totals, where one exists for the given parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub rule: &'static str,
    pub per_rank: Vec<Traffic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub collective: CollectiveKind,
    pub algorithm: AlgorithmKind,
    pub n_ranks: u32,
    pub payload_bytes: u64,
    pub model: Vec<Traffic>,
    /// None for collnet, which has no step schedule to simulate.
    pub oracle: Option<Vec<Traffic>>,
    pub oracle_steps: Option<usize>,
    pub expected: Option<Expected>,
    pub checks: Vec<(String, bool)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

fn uniform(n: u32, bytes: u64) -> Vec<Traffic> {
    vec![
        Traffic {
            sent: bytes,
            recv: bytes
        };
        n as usize
    ]
}

fn closed_form(
    collective: CollectiveKind,
    algo: AlgorithmKind,
    n: u32,
    s: u64,
    root: Option<u32>,
    ring: &RingOrder,
) -> Option<Expected> {
    if n < 2 {
        return None;
    }
    let n64 = u64::from(n);
    match (collective, algo) {
        (CollectiveKind::AllReduce, AlgorithmKind::Ring) if s.is_multiple_of(n64) => {
            Some(Expected {
                rule: "2(N-1)S/N",
                per_rank: uniform(n, 2 * (n64 - 1) * s / n64),
            })
        }
        (CollectiveKind::AllGather | CollectiveKind::ReduceScatter, _) if s.is_multiple_of(n64) => {
            Some(Expected {
                rule: "(N-1)S/N",
                per_rank: uniform(n, (n64 - 1) * s / n64),
            })
        }
        (CollectiveKind::Broadcast | CollectiveKind::Reduce, _) => {
            let root = root?;
            let mut per_rank = uniform(n, s);
            let pos = ring.position_of(root);
            let tail = ring.rank_at((pos + n as usize - 1) % n as usize);
            let head = ring.successor(root);
            if collective == CollectiveKind::Broadcast {
                per_rank[root as usize].recv = 0;
                per_rank[tail as usize].sent = 0;
            } else {
                per_rank[root as usize].sent = 0;
                per_rank[head as usize].recv = 0;
            }
            Some(Expected {
                rule: "S on each of N-1 ring hops",
                per_rank,
            })
        }
        (CollectiveKind::AllReduce, AlgorithmKind::Tree)
            if n.is_power_of_two() && s.is_multiple_of(2) =>
        {
            let dbt = build_double_binary_tree(n);
            let mut per_rank = uniform(n, 2 * s);
            for tree in &dbt.trees {
                per_rank[tree.root as usize] = Traffic { sent: s, recv: s };
            }
            Some(Expected {
                rule: "S at tree roots, 2S elsewhere",
                per_rank,
            })
        }
        (CollectiveKind::AllReduce, AlgorithmKind::Collnet) => Some(Expected {
            rule: "S to and from the aggregator",
            per_rank: uniform(n, s),
        }),
        _ => None,
    }
}

fn conserved(dec: &Decomposition) -> bool {
    dec.sent.values().sum::<u64>() == dec.recv.values().sum::<u64>()
}

fn successor_only(dec: &Decomposition, ring: &RingOrder) -> bool {
    dec.transfers.iter().all(|t| match (t.src, t.dst) {
        (Endpoint::Gpu(a), Endpoint::Gpu(b)) => ring.successor(a) == b,
        _ => false,
    })
}

/// Decomposes one synthetic instance (rank r on GPU r) and checks it.
pub fn verify(
    collective: CollectiveKind,
    algo: AlgorithmKind,
    n_ranks: u32,
    payload_bytes: u64,
    root: Option<u32>,
    ring: Option<RingOrder>,
) -> Result<VerifyReport, VerifyError> {
    if !collective.supports(algo) {
        return Err(VerifyError::Unsupported(collective, algo));
    }
    let ring = match ring {
        Some(r) if r.len() != n_ranks as usize => {
            return Err(DecomposeError::InvalidRingOrder(format!(
                "{} ranks given for a {n_ranks}-rank collective",
                r.len()
            ))
            .into())
        }
        Some(r) => r,
        None => RingOrder::identity(n_ranks),
    };
    let inst = CollectiveInstance::synthetic(collective, algo.into(), n_ranks, payload_bytes, root);
    let config = ModelConfig {
        default_ring: Some(ring.clone()),
        ..ModelConfig::default()
    };
    let model = decompose_instance(&inst, &config)?;
    let devices = &inst.devices;

    let log = match algo {
        AlgorithmKind::Ring => Some(simulate_ring(
            collective,
            n_ranks,
            payload_bytes,
            root,
            ring.ranks(),
        )?),
        AlgorithmKind::Tree => Some(simulate_tree(
            n_ranks,
            payload_bytes,
            &build_double_binary_tree(n_ranks),
        )?),
        AlgorithmKind::Collnet => None,
    };
    let oracle_dec = log.as_ref().map(aggregate);

    let mut checks = vec![(
        "bytes sent equal bytes received".to_string(),
        conserved(&model),
    )];
    if let Some(o) = &oracle_dec {
        checks.push((
            "model matches step simulation pairwise".to_string(),
            model.without_zero_transfers() == o.without_zero_transfers(),
        ));
    }
    if algo == AlgorithmKind::Ring {
        checks.push((
            "transfers follow ring successors".to_string(),
            successor_only(&model, &ring),
        ));
    }
    let expected = closed_form(collective, algo, n_ranks, payload_bytes, root, &ring);
    let model_ranks = model.per_rank(devices);
    if let Some(e) = &expected {
        checks.push((
            format!("per-rank totals equal {}", e.rule),
            model_ranks == e.per_rank,
        ));
    }

    Ok(VerifyReport {
        collective,
        algorithm: algo,
        n_ranks,
        payload_bytes,
        model: model_ranks,
        oracle: oracle_dec.map(|o| o.per_rank(devices)),
        oracle_steps: log.map(|l| l.num_steps()),
        expected,
        checks,
    })
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} / {}  N={}  S={} bytes",
            self.collective, self.algorithm, self.n_ranks, self.payload_bytes
        )?;
        if let Some(steps) = self.oracle_steps {
            writeln!(f, "simulated steps: {steps}")?;
        }
        writeln!(
            f,
            "{:>5} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14}",
            "rank",
            "model sent",
            "model recv",
            "oracle sent",
            "oracle recv",
            "formula sent",
            "formula recv"
        )?;
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        for (r, m) in self.model.iter().enumerate() {
            let o = self.oracle.as_ref().map(|o| o[r]);
            let e = self.expected.as_ref().map(|e| e.per_rank[r]);
            writeln!(
                f,
                "{:>5} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14}",
                r,
                m.sent,
                m.recv,
                opt(o.map(|t| t.sent)),
                opt(o.map(|t| t.recv)),
                opt(e.map(|t| t.sent)),
                opt(e.map(|t| t.recv)),
            )?;
        }
        for (name, ok) in &self.checks {
            writeln!(f, "{} {name}", if *ok { "PASS" } else { "FAIL" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_allreduce_n4() {
        let r = verify(
            CollectiveKind::AllReduce,
            AlgorithmKind::Ring,
            4,
            4096,
            None,
            None,
        )
        .unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(
            r.model[0],
            Traffic {
                sent: 6144,
                recv: 6144
            }
        );
        assert_eq!(r.oracle_steps, Some(6));
        assert_eq!(r.checks.len(), 4);
    }

    #[test]
    fn tree_n8() {
        let r = verify(
            CollectiveKind::AllReduce,
            AlgorithmKind::Tree,
            8,
            8192,
            None,
            None,
        )
        .unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(
            r.model[7],
            Traffic {
                sent: 8192,
                recv: 8192
            }
        );
        assert_eq!(
            r.model[0],
            Traffic {
                sent: 8192,
                recv: 8192
            }
        );
        assert_eq!(
            r.model[3],
            Traffic {
                sent: 16384,
                recv: 16384
            }
        );
    }

    #[test]
    fn broadcast_custom_ring() {
        let ring = RingOrder::new(vec![2, 0, 3, 1]).unwrap();
        let r = verify(
            CollectiveKind::Broadcast,
            AlgorithmKind::Ring,
            4,
            100,
            Some(0),
            Some(ring),
        )
        .unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.model[0], Traffic { sent: 100, recv: 0 });
        assert_eq!(r.model[2], Traffic { sent: 0, recv: 100 });
        let ring = RingOrder::new(vec![2, 0, 3, 1]).unwrap();
        let r = verify(
            CollectiveKind::Reduce,
            AlgorithmKind::Ring,
            4,
            100,
            Some(0),
            Some(ring),
        )
        .unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.model[3], Traffic { sent: 100, recv: 0 });
    }

    #[test]
    fn collnet_has_no_oracle() {
        let r = verify(
            CollectiveKind::AllReduce,
            AlgorithmKind::Collnet,
            3,
            10,
            None,
            None,
        )
        .unwrap();
        assert!(r.oracle.is_none());
        assert!(r.passed());
        assert!(r.to_string().contains("PASS per-rank totals"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            verify(
                CollectiveKind::Broadcast,
                AlgorithmKind::Tree,
                4,
                8,
                Some(0),
                None
            ),
            Err(VerifyError::Unsupported(..))
        ));
        assert!(verify(
            CollectiveKind::Broadcast,
            AlgorithmKind::Ring,
            4,
            8,
            None,
            None
        )
        .is_err());
        let ring = RingOrder::new(vec![0, 1]).unwrap();
        assert!(verify(
            CollectiveKind::AllReduce,
            AlgorithmKind::Ring,
            4,
            8,
            None,
            Some(ring)
        )
        .is_err());
    }
}
