use proptest::prelude::*;

use comscribe::trace::{
    parse_trace_str, validate_event, write_trace_string, AlgorithmChoice, CollectiveKind, CopyKind,
    DataType, Endpoint, EventKind, TraceError, TraceEvent,
};

fn dtype() -> impl Strategy<Value = DataType> {
    proptest::sample::select(DataType::ALL.to_vec())
}

fn collective_event() -> impl Strategy<Value = TraceEvent> {
    (
        1u32..=16,
        proptest::sample::select(CollectiveKind::ALL.to_vec()),
        any::<u64>(),
        dtype(),
        0u32..4,
    )
        .prop_flat_map(|(n, coll, count, dtype, algo_pick)| {
            let algo = match (coll, algo_pick) {
                (_, 0) => AlgorithmChoice::Auto,
                (CollectiveKind::AllReduce, 2) => AlgorithmChoice::Tree,
                (CollectiveKind::AllReduce, 3) => AlgorithmChoice::Collnet,
                _ => AlgorithmChoice::Ring,
            };
            (0..n, 0u32..64, 0..n).prop_map(move |(rank, dev, root)| {
                let root = coll.is_rooted().then_some(root);
                TraceEvent::collective("c0", n, rank, dev, coll, algo, count, dtype, root)
            })
        })
}

fn p2p_event() -> impl Strategy<Value = TraceEvent> {
    (2u32..=16, any::<bool>(), any::<u64>(), dtype()).prop_flat_map(|(n, send, count, dtype)| {
        (0..n, 1..n, 0u32..64).prop_map(move |(rank, offset, dev)| {
            let kind = if send {
                EventKind::Send
            } else {
                EventKind::Recv
            };
            TraceEvent::p2p(kind, "p2p", n, rank, dev, (rank + offset) % n, count, dtype)
        })
    })
}

fn copy_event() -> impl Strategy<Value = TraceEvent> {
    (
        proptest::sample::select(vec![
            EventKind::Memcpy,
            EventKind::UnifiedMemory,
            EventKind::ZeroCopy,
        ]),
        proptest::sample::select(vec![CopyKind::H2D, CopyKind::D2H, CopyKind::D2D]),
        0u32..16,
        1u32..16,
        any::<u64>(),
    )
        .prop_map(|(kind, ckind, g, offset, bytes)| {
            let (src, dst) = match ckind {
                CopyKind::H2D => (Endpoint::Host, Endpoint::Gpu(g)),
                CopyKind::D2H => (Endpoint::Gpu(g), Endpoint::Host),
                CopyKind::D2D => (Endpoint::Gpu(g), Endpoint::Gpu((g + offset) % 16)),
            };
            TraceEvent::copy(kind, "host", 1, 0, g, ckind, src, dst, bytes)
        })
}

fn any_event() -> impl Strategy<Value = TraceEvent> {
    (
        prop_oneof![collective_event(), p2p_event(), copy_event()],
        any::<u64>(),
        any::<u64>(),
        "[ -~]{1,12}",
    )
        .prop_map(|(ev, seq, ts, comm)| TraceEvent {
            comm_id: comm,
            ..ev.with_seq(seq, ts)
        })
}

proptest! {
    #[test]
    fn write_then_parse_is_identity(events in proptest::collection::vec(any_event(), 0..40)) {
        for ev in &events {
            prop_assert!(validate_event(ev).is_ok(), "{:?}", validate_event(ev));
        }
        let text = write_trace_string(&events).unwrap();
        prop_assert_eq!(text.lines().count(), events.len());
        let parsed = parse_trace_str(&text).unwrap();
        prop_assert_eq!(&parsed, &events);
        prop_assert_eq!(write_trace_string(&parsed).unwrap(), text);
    }
}

#[test]
fn canonical_line() {
    let ev = TraceEvent::collective(
        "a1",
        4,
        2,
        5,
        CollectiveKind::Broadcast,
        AlgorithmChoice::Ring,
        256,
        DataType::Float32,
        Some(1),
    )
    .with_seq(3, 1000);
    let text = write_trace_string(&[ev]).unwrap();
    assert_eq!(
        text,
        "{\"seq\":3,\"ts\":1000,\"kind\":\"collective\",\"comm\":\"a1\",\"nranks\":4,\"rank\":2,\"dev\":5,\
         \"coll\":\"broadcast\",\"algo\":\"ring\",\"root\":1,\"count\":256,\"dtype\":\"float32\"}\n"
    );
}

#[test]
fn errors_name_the_line() {
    let good = write_trace_string(&[TraceEvent::copy(
        EventKind::Memcpy,
        "h",
        1,
        0,
        0,
        CopyKind::H2D,
        Endpoint::Host,
        Endpoint::Gpu(0),
        8,
    )])
    .unwrap();

    let text = format!("{good}\n{good}not json\n");
    match parse_trace_str(&text) {
        Err(TraceError::MalformedLine { line }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }

    let missing = good.replace("\"bytes\":8", "\"bytes\":\"8\"");
    assert!(matches!(
        parse_trace_str(&missing),
        Err(TraceError::SchemaViolation {
            line: 1,
            field: "bytes"
        })
    ));

    let wrong_dir = good.replace("\"ckind\":\"h2d\"", "\"ckind\":\"d2h\"");
    assert!(matches!(
        parse_trace_str(&wrong_dir),
        Err(TraceError::InvariantViolation { line: 1, .. })
    ));
}

#[test]
fn writer_rejects_invalid_events() {
    let mut ev = TraceEvent::p2p(EventKind::Send, "c", 2, 0, 0, 1, 4, DataType::Int8);
    ev.peer = Some(0);
    let ok = TraceEvent::p2p(EventKind::Recv, "c", 2, 1, 1, 0, 4, DataType::Int8);
    match write_trace_string(&[ok, ev]) {
        Err(TraceError::InvariantViolation { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}
