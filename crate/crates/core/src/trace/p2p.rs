use std::collections::BTreeMap;

use super::group::order_rank_stream;
use super::{DataType, Diagnostic, EventKind, TraceEvent, Unmatched};

/// A send matched with the receive that consumed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct P2pPair {
    pub comm_id: String,
    /// Position among the sends from `src_rank` to `dst_rank` on this communicator.
    pub ordinal: usize,
    pub src_rank: u32,
    pub dst_rank: u32,
    pub src_device: u32,
    pub dst_device: u32,
    pub count: u64,
    pub dtype: DataType,
}

impl P2pPair {
    pub fn bytes(&self) -> u64 {
        self.count.saturating_mul(self.dtype.width_bytes())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct P2pResult {
    pub pairs: Vec<P2pPair>,
    pub unmatched: Vec<Unmatched>,
    pub warnings: Vec<Diagnostic>,
}

/// Pairs the k-th send from rank a to rank b with the k-th receive posted by
/// rank b from rank a, per communicator.
pub fn match_p2p(events: &[TraceEvent]) -> P2pResult {
    let mut result = P2pResult::default();

    // (comm, rank) -> that rank's send/recv stream
    let mut streams: BTreeMap<(&str, u32), Vec<&TraceEvent>> = BTreeMap::new();
    for ev in events.iter().filter(|ev| ev.kind.is_p2p()) {
        streams
            .entry((ev.comm_id.as_str(), ev.rank))
            .or_default()
            .push(ev);
    }

    // (comm, src, dst) -> (sends, recvs), each in per-rank seq order
    type Channel<'a> = (Vec<&'a TraceEvent>, Vec<&'a TraceEvent>);
    let mut channels: BTreeMap<(&str, u32, u32), Channel> = BTreeMap::new();
    for ((comm, rank), stream) in streams {
        for ev in order_rank_stream(comm, rank, stream, &mut result.warnings) {
            let peer = ev.peer.expect("validated p2p event");
            match ev.kind {
                EventKind::Send => channels.entry((comm, rank, peer)).or_default().0.push(ev),
                _ => channels.entry((comm, peer, rank)).or_default().1.push(ev),
            }
        }
    }

    for ((comm, src, dst), (sends, recvs)) in channels {
        for ordinal in 0..sends.len().max(recvs.len()) {
            match (sends.get(ordinal), recvs.get(ordinal)) {
                (Some(s), Some(r)) if s.count == r.count && s.dtype == r.dtype => {
                    result.pairs.push(P2pPair {
                        comm_id: comm.to_string(),
                        ordinal,
                        src_rank: src,
                        dst_rank: dst,
                        src_device: s.device,
                        dst_device: r.device,
                        count: s.count.expect("validated p2p event"),
                        dtype: s.dtype.expect("validated p2p event"),
                    });
                }
                (Some(s), Some(r)) => result.unmatched.push(Unmatched {
                    events: vec![(*s).clone(), (*r).clone()],
                    diagnostic: Diagnostic::P2pMismatch {
                        comm_id: comm.to_string(),
                        src_rank: src,
                        dst_rank: dst,
                        ordinal,
                    },
                }),
                (Some(s), None) => result.unmatched.push(Unmatched {
                    events: vec![(*s).clone()],
                    diagnostic: Diagnostic::UnmatchedSend {
                        comm_id: comm.to_string(),
                        rank: src,
                        peer: dst,
                        ordinal,
                    },
                }),
                (None, Some(r)) => result.unmatched.push(Unmatched {
                    events: vec![(*r).clone()],
                    diagnostic: Diagnostic::UnmatchedRecv {
                        comm_id: comm.to_string(),
                        rank: dst,
                        peer: src,
                        ordinal,
                    },
                }),
                (None, None) => unreachable!(),
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn send(rank: u32, peer: u32, count: u64, seq: u64) -> TraceEvent {
        TraceEvent::p2p(
            EventKind::Send,
            "c",
            4,
            rank,
            rank,
            peer,
            count,
            DataType::Float32,
        )
        .with_seq(seq, seq)
    }

    fn recv(rank: u32, peer: u32, count: u64, seq: u64) -> TraceEvent {
        TraceEvent::p2p(
            EventKind::Recv,
            "c",
            4,
            rank,
            rank,
            peer,
            count,
            DataType::Float32,
        )
        .with_seq(seq, seq)
    }

    #[test]
    fn send_recv_pair() {
        let res = match_p2p(&[recv(1, 0, 256, 0), send(0, 1, 256, 0)]);
        assert!(res.unmatched.is_empty());
        assert_eq!(res.pairs.len(), 1);
        assert_eq!(res.pairs[0].bytes(), 1024);
        assert_eq!((res.pairs[0].src_device, res.pairs[0].dst_device), (0, 1));
    }

    #[test]
    fn lone_send_is_diagnosed() {
        let res = match_p2p(&[send(0, 3, 16, 0)]);
        assert!(res.pairs.is_empty());
        assert!(matches!(
            res.unmatched[0].diagnostic,
            Diagnostic::UnmatchedSend {
                rank: 0,
                peer: 3,
                ..
            }
        ));
        let res = match_p2p(&[recv(2, 1, 16, 0)]);
        assert!(matches!(
            res.unmatched[0].diagnostic,
            Diagnostic::UnmatchedRecv {
                rank: 2,
                peer: 1,
                ..
            }
        ));
    }

    #[test]
    fn count_mismatch() {
        let res = match_p2p(&[send(0, 1, 8, 0), recv(1, 0, 4, 0)]);
        assert!(matches!(
            res.unmatched[0].diagnostic,
            Diagnostic::P2pMismatch { .. }
        ));
    }

    #[test]
    fn zero_count_kept() {
        let res = match_p2p(&[send(0, 1, 0, 0), recv(1, 0, 0, 0)]);
        assert_eq!(res.pairs.len(), 1);
        assert_eq!(res.pairs[0].bytes(), 0);
    }

    #[test]
    fn ordinals_follow_seq() {
        let res = match_p2p(&[
            send(0, 1, 2, 1),
            send(0, 1, 1, 0),
            recv(1, 0, 1, 0),
            recv(1, 0, 2, 1),
        ]);
        assert!(res.unmatched.is_empty());
        assert_eq!(
            res.pairs.iter().map(|p| p.count).collect::<Vec<_>>(),
            vec![1, 2]
        );
    }
}
