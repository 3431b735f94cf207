use std::io::{BufRead, Write};

use serde::Serialize;
use serde_json::{Map, Value};

use super::{
    AlgorithmChoice, CollectiveKind, CopyKind, DataType, Endpoint, EventKind, TraceError,
    TraceEvent,
};

/// Reads a JSON Lines trace. Blank lines are skipped; unknown keys are ignored.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(parse_line(&line, idx + 1)?);
    }
    Ok(events)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace(text.as_bytes())
}

fn parse_line(line: &str, line_no: usize) -> Result<TraceEvent, TraceError> {
    let value: Value =
        serde_json::from_str(line).map_err(|_| TraceError::MalformedLine { line: line_no })?;
    let Value::Object(obj) = value else {
        return Err(TraceError::MalformedLine { line: line_no });
    };
    let fields = Fields {
        obj: &obj,
        line: line_no,
    };

    let kind: EventKind = fields.named("kind")?;
    let mut event = TraceEvent::base(
        kind,
        fields.str("comm")?,
        fields.u32("nranks")?,
        fields.u32("rank")?,
        fields.u32("dev")?,
    );
    event.seq = fields.u64("seq")?;
    event.timestamp_ns = fields.u64("ts")?;

    match kind {
        EventKind::Collective => {
            event.collective = Some(fields.named::<CollectiveKind>("coll")?);
            event.algorithm = Some(fields.named::<AlgorithmChoice>("algo")?);
            event.count = Some(fields.u64("count")?);
            event.dtype = Some(fields.named::<DataType>("dtype")?);
            event.root = fields.opt_u32("root")?;
        }
        EventKind::Send | EventKind::Recv => {
            event.peer = Some(fields.u32("peer")?);
            event.count = Some(fields.u64("count")?);
            event.dtype = Some(fields.named::<DataType>("dtype")?);
        }
        EventKind::Memcpy | EventKind::UnifiedMemory | EventKind::ZeroCopy => {
            event.copy_kind = Some(fields.named::<CopyKind>("ckind")?);
            event.copy_src = Some(fields.endpoint("src")?);
            event.copy_dst = Some(fields.endpoint("dst")?);
            event.bytes = Some(fields.u64("bytes")?);
        }
    }

    validate_event(&event).map_err(|reason| TraceError::InvariantViolation {
        line: line_no,
        reason,
    })?;
    Ok(event)
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
}

impl<'a> Fields<'a> {
    fn violation(&self, field: &'static str) -> TraceError {
        TraceError::SchemaViolation {
            line: self.line,
            field,
        }
    }

    fn get(&self, field: &'static str) -> Result<&'a Value, TraceError> {
        self.obj.get(field).ok_or_else(|| self.violation(field))
    }

    fn u64(&self, field: &'static str) -> Result<u64, TraceError> {
        self.get(field)?
            .as_u64()
            .ok_or_else(|| self.violation(field))
    }

    fn u32(&self, field: &'static str) -> Result<u32, TraceError> {
        u32::try_from(self.u64(field)?).map_err(|_| self.violation(field))
    }

    fn opt_u32(&self, field: &'static str) -> Result<Option<u32>, TraceError> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.u32(field).map(Some),
        }
    }

    fn str(&self, field: &'static str) -> Result<&'a str, TraceError> {
        self.get(field)?
            .as_str()
            .ok_or_else(|| self.violation(field))
    }

    fn named<T: std::str::FromStr>(&self, field: &'static str) -> Result<T, TraceError> {
        self.str(field)?.parse().map_err(|_| self.violation(field))
    }

    fn endpoint(&self, field: &'static str) -> Result<Endpoint, TraceError> {
        let obj = self
            .get(field)?
            .as_object()
            .ok_or_else(|| self.violation(field))?;
        let kind = obj.get("kind").and_then(Value::as_str);
        let idx = obj
            .get("idx")
            .and_then(Value::as_u64)
            .and_then(|i| u32::try_from(i).ok());
        match (kind, idx) {
            (Some(kind), Some(idx)) => {
                Endpoint::from_parts(kind, idx).ok_or_else(|| self.violation(field))
            }
            _ => Err(self.violation(field)),
        }
    }
}

/// Checks the per-event invariants: required fields for the event kind, no
/// fields belonging to another kind, rank/peer/root bounds and copy-direction
/// consistency. Sequence ordering is checked at grouping time instead.
pub fn validate_event(ev: &TraceEvent) -> Result<(), String> {
    if ev.n_ranks == 0 {
        return Err("nranks must be at least 1".into());
    }
    if ev.rank >= ev.n_ranks {
        return Err(format!("rank {} >= nranks {}", ev.rank, ev.n_ranks));
    }
    if ev.comm_id.is_empty() {
        return Err("empty communicator id".into());
    }

    let has_coll_fields = ev.collective.is_some() || ev.algorithm.is_some() || ev.root.is_some();
    let has_p2p_fields = ev.peer.is_some();
    let has_elem_fields = ev.count.is_some() || ev.dtype.is_some();
    let has_copy_fields = ev.copy_kind.is_some()
        || ev.copy_src.is_some()
        || ev.copy_dst.is_some()
        || ev.bytes.is_some();

    match ev.kind {
        EventKind::Collective => {
            if has_p2p_fields || has_copy_fields {
                return Err("collective event carries send/recv or copy fields".into());
            }
            let (Some(coll), Some(algo)) = (ev.collective, ev.algorithm) else {
                return Err("collective event without collective/algorithm".into());
            };
            if ev.count.is_none() || ev.dtype.is_none() {
                return Err("collective event without count/dtype".into());
            }
            if let Some(kind) = algo.explicit() {
                if !coll.supports(kind) {
                    return Err(format!("{coll} does not support the {kind} algorithm"));
                }
            }
            match (coll.is_rooted(), ev.root) {
                (true, None) => return Err(format!("{coll} requires a root")),
                (true, Some(root)) if root >= ev.n_ranks => {
                    return Err(format!("root {root} >= nranks {}", ev.n_ranks))
                }
                (false, Some(_)) => return Err(format!("{coll} takes no root")),
                _ => {}
            }
        }
        EventKind::Send | EventKind::Recv => {
            if has_coll_fields || has_copy_fields {
                return Err("send/recv event carries collective or copy fields".into());
            }
            let Some(peer) = ev.peer else {
                return Err("send/recv event without peer".into());
            };
            if ev.count.is_none() || ev.dtype.is_none() {
                return Err("send/recv event without count/dtype".into());
            }
            if peer == ev.rank {
                return Err(format!("peer {peer} equals own rank"));
            }
            if peer >= ev.n_ranks {
                return Err(format!("peer {peer} >= nranks {}", ev.n_ranks));
            }
        }
        EventKind::Memcpy | EventKind::UnifiedMemory | EventKind::ZeroCopy => {
            if has_coll_fields || has_p2p_fields || has_elem_fields {
                return Err("copy event carries collective or send/recv fields".into());
            }
            let (Some(ckind), Some(src), Some(dst), Some(_)) =
                (ev.copy_kind, ev.copy_src, ev.copy_dst, ev.bytes)
            else {
                return Err("copy event without ckind/src/dst/bytes".into());
            };
            let consistent = match ckind {
                CopyKind::H2D => src == Endpoint::Host && matches!(dst, Endpoint::Gpu(_)),
                CopyKind::D2H => matches!(src, Endpoint::Gpu(_)) && dst == Endpoint::Host,
                CopyKind::D2D => matches!(src, Endpoint::Gpu(_)) && matches!(dst, Endpoint::Gpu(_)),
            };
            if !consistent {
                return Err(format!("{ckind} copy from {src} to {dst}"));
            }
            if src == dst {
                return Err(format!("copy from {src} to itself"));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct WireEndpoint {
    kind: &'static str,
    idx: u32,
}

impl From<Endpoint> for WireEndpoint {
    fn from(ep: Endpoint) -> Self {
        WireEndpoint {
            kind: ep.kind_name(),
            idx: ep.index(),
        }
    }
}

/// Canonical field order of one trace line.
#[derive(Serialize)]
struct WireEvent<'a> {
    seq: u64,
    ts: u64,
    kind: &'static str,
    comm: &'a str,
    nranks: u32,
    rank: u32,
    dev: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    coll: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    algo: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    root: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    peer: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dtype: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ckind: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    src: Option<WireEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dst: Option<WireEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bytes: Option<u64>,
}

impl<'a> From<&'a TraceEvent> for WireEvent<'a> {
    fn from(ev: &'a TraceEvent) -> Self {
        WireEvent {
            seq: ev.seq,
            ts: ev.timestamp_ns,
            kind: ev.kind.name(),
            comm: &ev.comm_id,
            nranks: ev.n_ranks,
            rank: ev.rank,
            dev: ev.device,
            coll: ev.collective.map(CollectiveKind::name),
            algo: ev.algorithm.map(AlgorithmChoice::name),
            root: ev.root,
            peer: ev.peer,
            count: ev.count,
            dtype: ev.dtype.map(DataType::name),
            ckind: ev.copy_kind.map(CopyKind::name),
            src: ev.copy_src.map(WireEndpoint::from),
            dst: ev.copy_dst.map(WireEndpoint::from),
            bytes: ev.bytes,
        }
    }
}

/// Writes events one per line in canonical form. Every event is validated
/// first; `line` in the error is the 1-based position in `events`.
pub fn write_trace<W: Write>(events: &[TraceEvent], mut out: W) -> Result<(), TraceError> {
    for (idx, ev) in events.iter().enumerate() {
        validate_event(ev).map_err(|reason| TraceError::InvariantViolation {
            line: idx + 1,
            reason,
        })?;
        serde_json::to_writer(&mut out, &WireEvent::from(ev)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace_string(events: &[TraceEvent]) -> Result<String, TraceError> {
    let mut buf = Vec::new();
    write_trace(events, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}
