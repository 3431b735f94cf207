use crate::trace::{
    AlgorithmKind, CollectiveInstance, CollectiveKind, Endpoint, P2pPair, TraceEvent,
};

use super::{expect_algorithm, DecomposeError, Decomposition, PairTransfer};

/// In-network reduction: every rank pushes S to the aggregator and pulls the
/// reduced S back, independent of the number of ranks.
pub fn decompose_allreduce_collnet(
    inst: &CollectiveInstance,
) -> Result<Decomposition, DecomposeError> {
    expect_algorithm(inst, CollectiveKind::AllReduce, AlgorithmKind::Collnet)?;
    let s = inst.payload_bytes;
    if s == 0 {
        return Ok(Decomposition::empty());
    }
    Ok(Decomposition::from_transfers(inst.devices.iter().flat_map(
        |&d| {
            [
                PairTransfer {
                    src: Endpoint::Gpu(d),
                    dst: Endpoint::NetAggregator,
                    bytes: s,
                },
                PairTransfer {
                    src: Endpoint::NetAggregator,
                    dst: Endpoint::Gpu(d),
                    bytes: s,
                },
            ]
        },
    )))
}

/// A matched send/recv is a single device-to-device transfer; zero-byte
/// pairs are kept so they still count as calls.
pub fn decompose_p2p(pair: &P2pPair) -> Decomposition {
    if pair.src_device == pair.dst_device {
        return Decomposition::empty();
    }
    Decomposition::from_transfers([PairTransfer {
        src: Endpoint::Gpu(pair.src_device),
        dst: Endpoint::Gpu(pair.dst_device),
        bytes: pair.bytes(),
    }])
}

pub fn decompose_copy(event: &TraceEvent) -> Result<Decomposition, DecomposeError> {
    if !event.kind.is_copy() {
        return Err(DecomposeError::NotACopy);
    }
    let (Some(src), Some(dst), Some(bytes)) = (event.copy_src, event.copy_dst, event.bytes) else {
        return Err(DecomposeError::NotACopy);
    };
    Ok(Decomposition::from_transfers([PairTransfer {
        src,
        dst,
        bytes,
    }]))
}
