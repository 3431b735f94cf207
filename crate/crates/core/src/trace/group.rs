use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{AlgorithmChoice, CollectiveKind, DataType, EventKind, TraceEvent};

/// One logical collective call: the k-th collective on a communicator,
/// contributed by every one of its ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectiveInstance {
    pub comm_id: String,
    pub ordinal: usize,
    pub collective: CollectiveKind,
    pub algorithm: AlgorithmChoice,
    pub n_ranks: u32,
    pub root: Option<u32>,
    pub count: u64,
    pub dtype: DataType,
    /// Logical data size S. For AllGather and ReduceScatter `count` is the
    /// per-rank block, so S covers all N blocks.
    pub payload_bytes: u64,
    /// GPU device of each rank, indexed by rank.
    pub devices: Vec<u32>,
}

impl CollectiveInstance {
    /// An instance not backed by a trace: rank r lives on GPU r and the
    /// payload is given directly in bytes.
    pub fn synthetic(
        collective: CollectiveKind,
        algorithm: AlgorithmChoice,
        n_ranks: u32,
        payload_bytes: u64,
        root: Option<u32>,
    ) -> Self {
        let count = match collective {
            CollectiveKind::AllGather | CollectiveKind::ReduceScatter => {
                payload_bytes / u64::from(n_ranks.max(1))
            }
            _ => payload_bytes,
        };
        CollectiveInstance {
            comm_id: "synthetic".to_string(),
            ordinal: 0,
            collective,
            algorithm,
            n_ranks,
            root,
            count,
            dtype: DataType::Uint8,
            payload_bytes,
            devices: (0..n_ranks).collect(),
        }
    }

    pub fn with_devices(mut self, devices: Vec<u32>) -> Self {
        self.devices = devices;
        self
    }

    pub fn device_of(&self, rank: u32) -> u32 {
        self.devices[rank as usize]
    }
}

/// Why a set of events could not be turned into an instance or pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    Incomplete {
        comm_id: String,
        ordinal: usize,
        missing_ranks: Vec<u32>,
    },
    IncompatibleArguments {
        comm_id: String,
        ordinal: usize,
    },
    DuplicateDevice {
        comm_id: String,
        ordinal: usize,
        device: u32,
    },
    RankCountMismatch {
        comm_id: String,
        rank: u32,
        expected: u32,
        found: u32,
    },
    NonMonotoneSeq {
        comm_id: String,
        rank: u32,
        seq: u64,
    },
    UnmatchedSend {
        comm_id: String,
        rank: u32,
        peer: u32,
        ordinal: usize,
    },
    UnmatchedRecv {
        comm_id: String,
        rank: u32,
        peer: u32,
        ordinal: usize,
    },
    P2pMismatch {
        comm_id: String,
        src_rank: u32,
        dst_rank: u32,
        ordinal: usize,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Incomplete { comm_id, ordinal, missing_ranks } => write!(
                f,
                "comm {comm_id} collective #{ordinal}: incomplete, missing ranks {missing_ranks:?}"
            ),
            Diagnostic::IncompatibleArguments { comm_id, ordinal } => write!(
                f,
                "comm {comm_id} collective #{ordinal}: ranks disagree on collective/algorithm/count/dtype/root"
            ),
            Diagnostic::DuplicateDevice { comm_id, ordinal, device } => write!(
                f,
                "comm {comm_id} collective #{ordinal}: several ranks on GPU {device}"
            ),
            Diagnostic::RankCountMismatch { comm_id, rank, expected, found } => write!(
                f,
                "comm {comm_id} rank {rank}: nranks {found}, communicator has {expected}"
            ),
            Diagnostic::NonMonotoneSeq { comm_id, rank, seq } => {
                write!(f, "comm {comm_id} rank {rank}: sequence number {seq} repeated")
            }
            Diagnostic::UnmatchedSend { comm_id, rank, peer, ordinal } => write!(
                f,
                "comm {comm_id}: send #{ordinal} from rank {rank} to {peer} has no matching recv"
            ),
            Diagnostic::UnmatchedRecv { comm_id, rank, peer, ordinal } => write!(
                f,
                "comm {comm_id}: recv #{ordinal} on rank {rank} from {peer} has no matching send"
            ),
            Diagnostic::P2pMismatch { comm_id, src_rank, dst_rank, ordinal } => write!(
                f,
                "comm {comm_id}: send/recv #{ordinal} {src_rank}->{dst_rank} disagree on count/dtype"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unmatched {
    pub events: Vec<TraceEvent>,
    pub diagnostic: Diagnostic,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupResult {
    pub instances: Vec<CollectiveInstance>,
    pub unmatched: Vec<Unmatched>,
    /// Non-fatal findings that did not drop any event (e.g. repeated seq).
    pub warnings: Vec<Diagnostic>,
}

type ArgsKey = (CollectiveKind, AlgorithmChoice, u64, DataType, Option<u32>);

fn args_key(ev: &TraceEvent) -> ArgsKey {
    (
        ev.collective.expect("validated collective event"),
        ev.algorithm.expect("validated collective event"),
        ev.count.expect("validated collective event"),
        ev.dtype.expect("validated collective event"),
        ev.root,
    )
}

/// Sorts one rank's events by `seq`, keeping file order among equal values,
/// and reports repeated sequence numbers.
pub(crate) fn order_rank_stream<'a>(
    comm_id: &str,
    rank: u32,
    mut stream: Vec<&'a TraceEvent>,
    warnings: &mut Vec<Diagnostic>,
) -> Vec<&'a TraceEvent> {
    stream.sort_by_key(|ev| ev.seq);
    for pair in stream.windows(2) {
        if pair[0].seq == pair[1].seq {
            warnings.push(Diagnostic::NonMonotoneSeq {
                comm_id: comm_id.to_string(),
                rank,
                seq: pair[1].seq,
            });
        }
    }
    stream
}

/// Matches the k-th collective of every rank of a communicator into
/// instance k. Incomplete or incompatible groups are returned as unmatched.
///
/// The result depends only on each rank's own event order, never on how the
/// rank streams are interleaved in the input.
pub fn group_collectives(events: &[TraceEvent]) -> GroupResult {
    let mut result = GroupResult::default();

    let mut by_comm: BTreeMap<&str, Vec<&TraceEvent>> = BTreeMap::new();
    for ev in events.iter().filter(|ev| ev.kind == EventKind::Collective) {
        by_comm.entry(ev.comm_id.as_str()).or_default().push(ev);
    }

    for (comm_id, comm_events) in by_comm {
        // The communicator size is taken from the lowest (rank, seq) event.
        let n_ranks = comm_events
            .iter()
            .min_by_key(|ev| (ev.rank, ev.seq))
            .map(|ev| ev.n_ranks)
            .expect("non-empty group");

        let mut per_rank: BTreeMap<u32, Vec<&TraceEvent>> = BTreeMap::new();
        let mut mismatched: BTreeMap<u32, Vec<&TraceEvent>> = BTreeMap::new();
        for ev in comm_events {
            if ev.n_ranks == n_ranks {
                per_rank.entry(ev.rank).or_default().push(ev);
            } else {
                mismatched.entry(ev.rank).or_default().push(ev);
            }
        }
        for (rank, evs) in mismatched {
            let found = evs[0].n_ranks;
            result.unmatched.push(Unmatched {
                events: evs.into_iter().cloned().collect(),
                diagnostic: Diagnostic::RankCountMismatch {
                    comm_id: comm_id.to_string(),
                    rank,
                    expected: n_ranks,
                    found,
                },
            });
        }

        let streams: BTreeMap<u32, Vec<&TraceEvent>> = per_rank
            .into_iter()
            .map(|(rank, stream)| {
                (
                    rank,
                    order_rank_stream(comm_id, rank, stream, &mut result.warnings),
                )
            })
            .collect();
        let depth = streams.values().map(Vec::len).max().unwrap_or(0);

        for ordinal in 0..depth {
            let slot: Vec<Option<&TraceEvent>> = (0..n_ranks)
                .map(|r| streams.get(&r).and_then(|s| s.get(ordinal)).copied())
                .collect();
            let present: Vec<TraceEvent> = slot.iter().flatten().map(|ev| (*ev).clone()).collect();

            let missing_ranks: Vec<u32> = (0..n_ranks)
                .filter(|&r| slot[r as usize].is_none())
                .collect();
            if !missing_ranks.is_empty() {
                result.unmatched.push(Unmatched {
                    events: present,
                    diagnostic: Diagnostic::Incomplete {
                        comm_id: comm_id.to_string(),
                        ordinal,
                        missing_ranks,
                    },
                });
                continue;
            }

            let key = args_key(&present[0]);
            if present.iter().any(|ev| args_key(ev) != key) {
                result.unmatched.push(Unmatched {
                    events: present,
                    diagnostic: Diagnostic::IncompatibleArguments {
                        comm_id: comm_id.to_string(),
                        ordinal,
                    },
                });
                continue;
            }

            let devices: Vec<u32> = present.iter().map(|ev| ev.device).collect();
            let mut seen = BTreeSet::new();
            if let Some(&dup) = devices.iter().find(|&&d| !seen.insert(d)) {
                result.unmatched.push(Unmatched {
                    events: present,
                    diagnostic: Diagnostic::DuplicateDevice {
                        comm_id: comm_id.to_string(),
                        ordinal,
                        device: dup,
                    },
                });
                continue;
            }

            let (collective, algorithm, count, dtype, root) = key;
            let elem = count.saturating_mul(dtype.width_bytes());
            let payload_bytes = match collective {
                CollectiveKind::AllGather | CollectiveKind::ReduceScatter => {
                    elem.saturating_mul(u64::from(n_ranks))
                }
                _ => elem,
            };
            result.instances.push(CollectiveInstance {
                comm_id: comm_id.to_string(),
                ordinal,
                collective,
                algorithm,
                n_ranks,
                root,
                count,
                dtype,
                payload_bytes,
                devices,
            });
        }
    }
    result
}
