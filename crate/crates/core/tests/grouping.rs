use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use comscribe::report::{analyze_events, AnalyzeOptions};
use comscribe::trace::{
    group_collectives, match_p2p, AlgorithmChoice, CollectiveKind, DataType, Diagnostic, EventKind,
    TraceEvent,
};
use comscribe::workload::{generate_workload, gnmt_like_preset_scaled, AuxPlan, TrainingConfig};

fn small_trace(seed: u64) -> Vec<TraceEvent> {
    let cfg = TrainingConfig {
        n_gpus: 4,
        tensor_sizes_bytes: vec![4096, 2 << 20, 12, 700_000],
        iterations_per_epoch: 3,
        epochs: 2,
        bucket_cap_bytes: 1 << 20,
        broadcast_init: true,
        algorithm: AlgorithmChoice::Auto,
        explicit_h2d_per_iteration: None,
    };
    let aux = AuxPlan {
        setup_allgathers: 2,
        allgather_bytes: 1000,
        explicit_transfers_per_epoch: 5,
        explicit_bytes: 64,
    };
    generate_workload(&cfg, &aux, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouping_ignores_line_order(seed in any::<u64>()) {
        let events = small_trace(1);
        let reference = group_collectives(&events);
        prop_assert!(reference.unmatched.is_empty());

        let mut shuffled = events.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let grouped = group_collectives(&shuffled);
        prop_assert_eq!(&grouped, &reference);

        let a = analyze_events(&events, &AnalyzeOptions::default()).unwrap();
        let b = analyze_events(&shuffled, &AnalyzeOptions::default()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn generated_traces_group_completely() {
    for gpus in [1, 2, 3, 8] {
        let (cfg, aux) = gnmt_like_preset_scaled(gpus, 1.0 / 5000.0);
        let events = generate_workload(&cfg, &aux, u64::from(gpus)).unwrap();
        let grouped = group_collectives(&events);
        assert!(grouped.unmatched.is_empty() && grouped.warnings.is_empty());
        let collectives = events
            .iter()
            .filter(|e| e.kind == EventKind::Collective)
            .count();
        assert_eq!(grouped.instances.len() * gpus as usize, collectives);
    }
}

fn allreduce(rank: u32, seq: u64, count: u64) -> TraceEvent {
    TraceEvent::collective(
        "c",
        3,
        rank,
        rank,
        CollectiveKind::AllReduce,
        AlgorithmChoice::Ring,
        count,
        DataType::Float32,
        None,
    )
    .with_seq(seq, seq)
}

#[test]
fn missing_rank_is_reported_not_fatal() {
    let mut events: Vec<TraceEvent> = (0..3).map(|r| allreduce(r, 0, 16)).collect();
    events.push(allreduce(0, 1, 16));
    events.push(allreduce(1, 1, 16));
    let grouped = group_collectives(&events);
    assert_eq!(grouped.instances.len(), 1);
    assert_eq!(grouped.unmatched.len(), 1);
    assert_eq!(grouped.unmatched[0].events.len(), 2);
    assert!(matches!(
        &grouped.unmatched[0].diagnostic,
        Diagnostic::Incomplete { ordinal: 1, missing_ranks, .. } if missing_ranks == &[2]
    ));

    let a = analyze_events(&events, &AnalyzeOptions::default()).unwrap();
    assert_eq!(a.instances, 1);
    assert_eq!(a.unmatched_events, 2);
    assert_eq!(a.combined.total(), 2 * 2 * 64);
}

#[test]
fn disagreeing_counts_are_unmatched() {
    let events = vec![allreduce(0, 0, 16), allreduce(1, 0, 16), allreduce(2, 0, 8)];
    let grouped = group_collectives(&events);
    assert!(grouped.instances.is_empty());
    assert!(matches!(
        grouped.unmatched[0].diagnostic,
        Diagnostic::IncompatibleArguments { .. }
    ));
}

#[test]
fn send_recv_pairs_in_order() {
    let send = |seq, count| {
        TraceEvent::p2p(EventKind::Send, "p", 2, 0, 4, 1, count, DataType::Int32).with_seq(seq, seq)
    };
    let recv = |seq, count| {
        TraceEvent::p2p(EventKind::Recv, "p", 2, 1, 6, 0, count, DataType::Int32).with_seq(seq, seq)
    };
    let events = vec![
        recv(0, 10),
        send(0, 10),
        send(1, 20),
        recv(1, 20),
        send(2, 5),
    ];
    let p2p = match_p2p(&events);
    assert_eq!(p2p.pairs.len(), 2);
    assert_eq!(p2p.pairs[1].bytes(), 80);
    assert_eq!((p2p.pairs[0].src_device, p2p.pairs[0].dst_device), (4, 6));
    assert!(matches!(
        p2p.unmatched[0].diagnostic,
        Diagnostic::UnmatchedSend { ordinal: 2, .. }
    ));

    let a = analyze_events(&events, &AnalyzeOptions::default()).unwrap();
    assert_eq!(a.combined.get(5, 7), 120);
    assert_eq!(a.gpus, 7);
}
