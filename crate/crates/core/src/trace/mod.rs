//! Communication event taxonomy, the JSON Lines trace format and grouping of
//! per-rank collective calls into logical collective instances.

mod codec;
mod group;
mod p2p;

pub use codec::{parse_trace, parse_trace_str, validate_event, write_trace, write_trace_string};
pub use group::{group_collectives, CollectiveInstance, Diagnostic, GroupResult, Unmatched};
pub use p2p::{match_p2p, P2pPair, P2pResult};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(thiserror::Error, Debug)]
pub enum TraceError {
    #[error("line {line}: malformed JSON")]
    MalformedLine { line: usize },
    #[error("line {line}: missing or ill-typed field `{field}`")]
    SchemaViolation { line: usize, field: &'static str },
    #[error("line {line}: invariant violated: {reason}")]
    InvariantViolation { line: usize, reason: String },
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl TraceError {
    /// Line number (1-based) the error refers to, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            TraceError::MalformedLine { line }
            | TraceError::SchemaViolation { line, .. }
            | TraceError::InvariantViolation { line, .. } => Some(*line),
            TraceError::Io(_) => None,
        }
    }
}

/// Error for string forms of the enums below.
#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
#[error("unknown {what} `{value}`")]
pub struct UnknownName {
    pub what: &'static str,
    pub value: String,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = UnknownName;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(UnknownName { what: $what, value: s.to_string() }),
                }
            }
        }
    };
}

/// One side of a transfer. The host and the network aggregator are singletons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Host,
    Gpu(u32),
    NetAggregator,
}

impl Endpoint {
    pub fn kind_name(self) -> &'static str {
        match self {
            Endpoint::Host => "host",
            Endpoint::Gpu(_) => "gpu",
            Endpoint::NetAggregator => "net",
        }
    }

    pub fn index(self) -> u32 {
        match self {
            Endpoint::Gpu(g) => g,
            Endpoint::Host | Endpoint::NetAggregator => 0,
        }
    }

    pub fn from_parts(kind: &str, idx: u32) -> Option<Endpoint> {
        match (kind, idx) {
            ("host", 0) => Some(Endpoint::Host),
            ("gpu", g) => Some(Endpoint::Gpu(g)),
            ("net", 0) => Some(Endpoint::NetAggregator),
            _ => None,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Host => f.write_str("host"),
            Endpoint::Gpu(g) => write!(f, "gpu{g}"),
            Endpoint::NetAggregator => f.write_str("net"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectiveKind {
    AllReduce,
    Broadcast,
    Reduce,
    ReduceScatter,
    AllGather,
}

named_enum!(CollectiveKind, "collective", {
    AllReduce => "allreduce",
    Broadcast => "broadcast",
    Reduce => "reduce",
    ReduceScatter => "reducescatter",
    AllGather => "allgather",
});

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 5] = [
        CollectiveKind::AllReduce,
        CollectiveKind::Broadcast,
        CollectiveKind::Reduce,
        CollectiveKind::ReduceScatter,
        CollectiveKind::AllGather,
    ];

    pub fn is_rooted(self) -> bool {
        matches!(self, CollectiveKind::Broadcast | CollectiveKind::Reduce)
    }

    /// Algorithms NCCL offers for this collective: everything but AllReduce is ring-only.
    pub fn supports(self, algo: AlgorithmKind) -> bool {
        algo == AlgorithmKind::Ring || self == CollectiveKind::AllReduce
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Ring,
    Tree,
    Collnet,
}

named_enum!(AlgorithmKind, "algorithm", {
    Ring => "ring",
    Tree => "tree",
    Collnet => "collnet",
});

/// Algorithm as logged: either chosen explicitly or left to the analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmChoice {
    #[default]
    Auto,
    Ring,
    Tree,
    Collnet,
}

named_enum!(AlgorithmChoice, "algorithm", {
    Auto => "auto",
    Ring => "ring",
    Tree => "tree",
    Collnet => "collnet",
});

impl AlgorithmChoice {
    pub fn explicit(self) -> Option<AlgorithmKind> {
        match self {
            AlgorithmChoice::Auto => None,
            AlgorithmChoice::Ring => Some(AlgorithmKind::Ring),
            AlgorithmChoice::Tree => Some(AlgorithmKind::Tree),
            AlgorithmChoice::Collnet => Some(AlgorithmKind::Collnet),
        }
    }
}

impl From<AlgorithmKind> for AlgorithmChoice {
    fn from(kind: AlgorithmKind) -> Self {
        match kind {
            AlgorithmKind::Ring => AlgorithmChoice::Ring,
            AlgorithmKind::Tree => AlgorithmChoice::Tree,
            AlgorithmKind::Collnet => AlgorithmChoice::Collnet,
        }
    }
}

/// NCCL element types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Int8,
    Uint8,
    Int32,
    Uint32,
    Int64,
    Uint64,
    Float16,
    Bfloat16,
    Float32,
    Float64,
}

named_enum!(DataType, "dtype", {
    Int8 => "int8",
    Uint8 => "uint8",
    Int32 => "int32",
    Uint32 => "uint32",
    Int64 => "int64",
    Uint64 => "uint64",
    Float16 => "float16",
    Bfloat16 => "bfloat16",
    Float32 => "float32",
    Float64 => "float64",
});

impl DataType {
    pub const ALL: [DataType; 10] = [
        DataType::Int8,
        DataType::Uint8,
        DataType::Int32,
        DataType::Uint32,
        DataType::Int64,
        DataType::Uint64,
        DataType::Float16,
        DataType::Bfloat16,
        DataType::Float32,
        DataType::Float64,
    ];

    pub fn width_bytes(self) -> u64 {
        match self {
            DataType::Int8 | DataType::Uint8 => 1,
            DataType::Float16 | DataType::Bfloat16 => 2,
            DataType::Int32 | DataType::Uint32 | DataType::Float32 => 4,
            DataType::Int64 | DataType::Uint64 | DataType::Float64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Collective,
    Send,
    Recv,
    Memcpy,
    UnifiedMemory,
    ZeroCopy,
}

named_enum!(EventKind, "event kind", {
    Collective => "collective",
    Send => "send",
    Recv => "recv",
    Memcpy => "memcpy",
    UnifiedMemory => "um",
    ZeroCopy => "zerocopy",
});

impl EventKind {
    pub fn is_copy(self) -> bool {
        matches!(
            self,
            EventKind::Memcpy | EventKind::UnifiedMemory | EventKind::ZeroCopy
        )
    }

    pub fn is_p2p(self) -> bool {
        matches!(self, EventKind::Send | EventKind::Recv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CopyKind {
    H2D,
    D2H,
    D2D,
}

named_enum!(CopyKind, "copy kind", {
    H2D => "h2d",
    D2H => "d2h",
    D2D => "d2d",
});

/// One logged communication action of one rank.
///
/// Which optional fields are populated depends on `kind`; see
/// [`validate_event`] for the exact rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub seq: u64,
    pub timestamp_ns: u64,
    pub kind: EventKind,
    pub comm_id: String,
    pub n_ranks: u32,
    pub rank: u32,
    pub device: u32,
    pub collective: Option<CollectiveKind>,
    pub algorithm: Option<AlgorithmChoice>,
    pub root: Option<u32>,
    pub peer: Option<u32>,
    pub count: Option<u64>,
    pub dtype: Option<DataType>,
    pub copy_kind: Option<CopyKind>,
    pub copy_src: Option<Endpoint>,
    pub copy_dst: Option<Endpoint>,
    pub bytes: Option<u64>,
}

impl TraceEvent {
    fn base(kind: EventKind, comm_id: &str, n_ranks: u32, rank: u32, device: u32) -> Self {
        TraceEvent {
            seq: 0,
            timestamp_ns: 0,
            kind,
            comm_id: comm_id.to_string(),
            n_ranks,
            rank,
            device,
            collective: None,
            algorithm: None,
            root: None,
            peer: None,
            count: None,
            dtype: None,
            copy_kind: None,
            copy_src: None,
            copy_dst: None,
            bytes: None,
        }
    }

    /// A collective call. `root` is only meaningful for Broadcast and Reduce.
    #[allow(clippy::too_many_arguments)]
    pub fn collective(
        comm_id: &str,
        n_ranks: u32,
        rank: u32,
        device: u32,
        collective: CollectiveKind,
        algorithm: AlgorithmChoice,
        count: u64,
        dtype: DataType,
        root: Option<u32>,
    ) -> Self {
        TraceEvent {
            collective: Some(collective),
            algorithm: Some(algorithm),
            count: Some(count),
            dtype: Some(dtype),
            root,
            ..Self::base(EventKind::Collective, comm_id, n_ranks, rank, device)
        }
    }

    /// A send or receive; `kind` must be [`EventKind::Send`] or [`EventKind::Recv`].
    #[allow(clippy::too_many_arguments)]
    pub fn p2p(
        kind: EventKind,
        comm_id: &str,
        n_ranks: u32,
        rank: u32,
        device: u32,
        peer: u32,
        count: u64,
        dtype: DataType,
    ) -> Self {
        TraceEvent {
            peer: Some(peer),
            count: Some(count),
            dtype: Some(dtype),
            ..Self::base(kind, comm_id, n_ranks, rank, device)
        }
    }

    /// An explicit or implicit copy; `kind` must be one of the copy kinds.
    #[allow(clippy::too_many_arguments)]
    pub fn copy(
        kind: EventKind,
        comm_id: &str,
        n_ranks: u32,
        rank: u32,
        device: u32,
        copy_kind: CopyKind,
        src: Endpoint,
        dst: Endpoint,
        bytes: u64,
    ) -> Self {
        TraceEvent {
            copy_kind: Some(copy_kind),
            copy_src: Some(src),
            copy_dst: Some(dst),
            bytes: Some(bytes),
            ..Self::base(kind, comm_id, n_ranks, rank, device)
        }
    }

    pub fn with_seq(mut self, seq: u64, timestamp_ns: u64) -> Self {
        self.seq = seq;
        self.timestamp_ns = timestamp_ns;
        self
    }

    /// `count × width` for collective and P2P events.
    pub fn element_bytes(&self) -> Option<u64> {
        self.count?.checked_mul(self.dtype?.width_bytes())
    }
}
