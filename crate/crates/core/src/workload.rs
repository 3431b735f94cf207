//! Synthetic traces of data-parallel training: gradient bucketing into
//! AllReduce calls, parameter broadcast at start-up, and input copies.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trace::{
    AlgorithmChoice, CollectiveKind, CopyKind, DataType, Endpoint, EventKind, TraceEvent,
};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
#[error("invalid workload config: {0}")]
pub struct InvalidConfig(pub String);

/// Host-to-device copies every rank issues at the start of each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct H2dPlan {
    pub count: u32,
    pub bytes: u64,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub n_gpus: u32,
    /// Gradient size of every parameter tensor, in forward order.
    pub tensor_sizes_bytes: Vec<u64>,
    pub iterations_per_epoch: u32,
    #[serde(default = "one")]
    pub epochs: u32,
    pub bucket_cap_bytes: u64,
    /// Broadcast every tensor from rank 0 before the first iteration.
    #[serde(default)]
    pub broadcast_init: bool,
    #[serde(default)]
    pub algorithm: AlgorithmChoice,
    #[serde(default)]
    pub explicit_h2d_per_iteration: Option<H2dPlan>,
}

/// Extra traffic beyond the gradient exchange.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxPlan {
    /// AllGather calls issued once, after the initial broadcasts.
    pub setup_allgathers: u32,
    /// Logical size of each setup AllGather (all blocks together).
    pub allgather_bytes: u64,
    /// Explicit copies per epoch, spread over the iterations and round-robin
    /// over the GPUs, alternating host-to-device and device-to-host.
    pub explicit_transfers_per_epoch: u64,
    pub explicit_bytes: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        if self.n_gpus == 0 {
            return Err(InvalidConfig("n_gpus must be at least 1".into()));
        }
        if self.tensor_sizes_bytes.is_empty() {
            return Err(InvalidConfig("at least one tensor is required".into()));
        }
        if let Some(i) = self.tensor_sizes_bytes.iter().position(|&s| s == 0) {
            return Err(InvalidConfig(format!("tensor {i} has size 0")));
        }
        if self.bucket_cap_bytes == 0 {
            return Err(InvalidConfig("bucket cap must be positive".into()));
        }
        if let Some(kind) = self.algorithm.explicit() {
            if !CollectiveKind::AllReduce.supports(kind) {
                return Err(InvalidConfig(format!("unsupported algorithm {kind}")));
            }
        }
        Ok(())
    }

    /// Gradient buckets as tensor indices, in the order they are reduced.
    pub fn buckets(&self) -> Vec<Vec<usize>> {
        bucket_tensors(&self.tensor_sizes_bytes, self.bucket_cap_bytes)
    }

    pub fn allreduce_calls_per_epoch(&self) -> u64 {
        self.buckets().len() as u64 * u64::from(self.iterations_per_epoch)
    }
}

/// Packs tensors into buckets walking from the last tensor to the first
/// (the order gradients become ready in the backward pass). A bucket is
/// closed when the next tensor would push it past `cap`; a tensor larger
/// than `cap` gets a bucket of its own.
pub fn bucket_tensors(sizes: &[u64], cap: u64) -> Vec<Vec<usize>> {
    let mut buckets = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut filled = 0u64;
    for (i, &size) in sizes.iter().enumerate().rev() {
        if !current.is_empty() && filled.saturating_add(size) > cap {
            buckets.push(std::mem::take(&mut current));
            filled = 0;
        }
        current.push(i);
        filled = filled.saturating_add(size);
    }
    if !current.is_empty() {
        buckets.push(current);
    }
    buckets
}

fn count_and_dtype(bytes: u64) -> (u64, DataType) {
    if bytes.is_multiple_of(4) {
        (bytes / 4, DataType::Float32)
    } else {
        (bytes, DataType::Uint8)
    }
}

/// Per-rank stream builder; sequence numbers and timestamps are assigned
/// when the streams are interleaved.
struct RankStreams {
    comm: String,
    n: u32,
    streams: Vec<Vec<TraceEvent>>,
}

impl RankStreams {
    fn collective_all(
        &mut self,
        kind: CollectiveKind,
        algo: AlgorithmChoice,
        count: u64,
        dtype: DataType,
        root: Option<u32>,
    ) {
        for rank in 0..self.n {
            self.streams[rank as usize].push(TraceEvent::collective(
                &self.comm, self.n, rank, rank, kind, algo, count, dtype, root,
            ));
        }
    }

    fn copy(&mut self, rank: u32, ckind: CopyKind, bytes: u64) {
        let (src, dst) = match ckind {
            CopyKind::D2H => (Endpoint::Gpu(rank), Endpoint::Host),
            _ => (Endpoint::Host, Endpoint::Gpu(rank)),
        };
        self.streams[rank as usize].push(TraceEvent::copy(
            EventKind::Memcpy,
            &self.comm,
            self.n,
            rank,
            rank,
            ckind,
            src,
            dst,
            bytes,
        ));
    }
}

pub fn generate_training_trace(
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<Vec<TraceEvent>, InvalidConfig> {
    generate_workload(cfg, &AuxPlan::default(), seed)
}

/// Generates the trace of `cfg.epochs` epochs on one communicator with rank r
/// on GPU r. Identical `(cfg, aux, seed)` give identical traces; the seed
/// picks the communicator id, timestamp jitter and how the rank streams are
/// interleaved in the file.
pub fn generate_workload(
    cfg: &TrainingConfig,
    aux: &AuxPlan,
    seed: u64,
) -> Result<Vec<TraceEvent>, InvalidConfig> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_gpus;
    let mut s = RankStreams {
        comm: format!("{:016x}", rng.next_u64()),
        n,
        streams: vec![Vec::new(); n as usize],
    };

    if cfg.broadcast_init {
        for &size in &cfg.tensor_sizes_bytes {
            let (count, dtype) = count_and_dtype(size);
            s.collective_all(
                CollectiveKind::Broadcast,
                AlgorithmChoice::Ring,
                count,
                dtype,
                Some(0),
            );
        }
    }
    if aux.setup_allgathers > 0 {
        let per_rank = aux.allgather_bytes.div_ceil(u64::from(n));
        let (count, dtype) = count_and_dtype(per_rank);
        for _ in 0..aux.setup_allgathers {
            s.collective_all(
                CollectiveKind::AllGather,
                AlgorithmChoice::Ring,
                count,
                dtype,
                None,
            );
        }
    }

    let buckets: Vec<u64> = cfg
        .buckets()
        .iter()
        .map(|b| b.iter().map(|&i| cfg.tensor_sizes_bytes[i]).sum())
        .collect();
    let iters = u64::from(cfg.iterations_per_epoch);
    for _epoch in 0..cfg.epochs {
        let mut explicit_issued = 0u64;
        for it in 0..iters {
            let due = aux.explicit_transfers_per_epoch * (it + 1) / iters;
            while explicit_issued < due {
                let rank = (explicit_issued % u64::from(n)) as u32;
                // With an even GPU count, shift the parity every round so
                // each GPU sees both directions.
                let shift = if n.is_multiple_of(2) {
                    explicit_issued / u64::from(n)
                } else {
                    0
                };
                let ckind = if (explicit_issued + shift).is_multiple_of(2) {
                    CopyKind::H2D
                } else {
                    CopyKind::D2H
                };
                s.copy(rank, ckind, aux.explicit_bytes);
                explicit_issued += 1;
            }
            if let Some(plan) = cfg.explicit_h2d_per_iteration {
                for rank in 0..n {
                    for _ in 0..plan.count {
                        s.copy(rank, CopyKind::H2D, plan.bytes);
                    }
                }
            }
            for &bytes in &buckets {
                let (count, dtype) = count_and_dtype(bytes);
                s.collective_all(CollectiveKind::AllReduce, cfg.algorithm, count, dtype, None);
            }
        }
    }

    for stream in &mut s.streams {
        for (seq, ev) in stream.iter_mut().enumerate() {
            ev.seq = seq as u64;
            ev.timestamp_ns = seq as u64 * 1_000 + rng.random_range(0..1_000);
        }
    }

    // Interleave rank streams in a seeded random order, keeping each rank's order.
    let mut picks: Vec<u32> = s
        .streams
        .iter()
        .enumerate()
        .flat_map(|(rank, stream)| std::iter::repeat_n(rank as u32, stream.len()))
        .collect();
    picks.shuffle(&mut rng);
    let mut cursors: Vec<std::vec::IntoIter<TraceEvent>> =
        s.streams.into_iter().map(Vec::into_iter).collect();
    Ok(picks
        .into_iter()
        .map(|rank| cursors[rank as usize].next().expect("one pick per event"))
        .collect())
}

/// ResNet-18 parameter tensors (fp32 gradients), forward order: conv weights
/// and batch-norm weight/bias pairs, then the classifier.
pub fn resnet18_tensor_sizes() -> Vec<u64> {
    let conv = |out: u64, inp: u64, k: u64| out * inp * k * k * 4;
    let bn = |c: u64| [c * 4, c * 4];
    let mut sizes = vec![conv(64, 3, 7)];
    sizes.extend(bn(64));
    let mut in_ch = 64;
    for (stage, out_ch) in [64u64, 128, 256, 512].into_iter().enumerate() {
        for block in 0..2 {
            let first_in = if block == 0 { in_ch } else { out_ch };
            sizes.push(conv(out_ch, first_in, 3));
            sizes.extend(bn(out_ch));
            sizes.push(conv(out_ch, out_ch, 3));
            sizes.extend(bn(out_ch));
            if block == 0 && stage > 0 {
                sizes.push(conv(out_ch, in_ch, 1));
                sizes.extend(bn(out_ch));
            }
        }
        in_ch = out_ch;
    }
    sizes.push(512 * 1000 * 4);
    sizes.push(1000 * 4);
    sizes
}

/// Data-parallel ResNet-18-like training: initial parameter broadcast, then
/// bucketed gradient AllReduce with a 25 MiB cap.
pub fn resnet_like_preset(n_gpus: u32) -> TrainingConfig {
    TrainingConfig {
        n_gpus,
        tensor_sizes_bytes: resnet18_tensor_sizes(),
        iterations_per_epoch: 100,
        epochs: 1,
        bucket_cap_bytes: 25 << 20,
        broadcast_init: true,
        algorithm: AlgorithmChoice::Auto,
        explicit_h2d_per_iteration: None,
    }
}

/// Full-scale call counts of the GNMT profile this preset mimics.
pub const GNMT_ALLREDUCE_CALLS: u64 = 30_739;
pub const GNMT_BROADCAST_CALLS: u32 = 5;
pub const GNMT_ALLGATHER_CALLS: u32 = 3;
pub const GNMT_EXPLICIT_CALLS: u64 = 778_694;
pub const GNMT_DEFAULT_SCALE: f64 = 1.0 / 1000.0;

fn scaled(count: u64, scale: f64) -> u64 {
    (count as f64 * scale).round() as u64
}

/// GNMT-like profile at `scale` of the full call counts: one gradient bucket
/// per iteration, five parameter broadcasts and three 1 MB AllGathers at
/// start-up (kept exact), and many small explicit copies.
pub fn gnmt_like_preset_scaled(n_gpus: u32, scale: f64) -> (TrainingConfig, AuxPlan) {
    let tensor = 23_820_000;
    let cfg = TrainingConfig {
        n_gpus,
        tensor_sizes_bytes: vec![tensor; GNMT_BROADCAST_CALLS as usize],
        iterations_per_epoch: scaled(GNMT_ALLREDUCE_CALLS, scale) as u32,
        epochs: 1,
        bucket_cap_bytes: tensor * u64::from(GNMT_BROADCAST_CALLS),
        broadcast_init: true,
        algorithm: AlgorithmChoice::Auto,
        explicit_h2d_per_iteration: None,
    };
    let aux = AuxPlan {
        setup_allgathers: GNMT_ALLGATHER_CALLS,
        allgather_bytes: 1_000_000,
        explicit_transfers_per_epoch: scaled(GNMT_EXPLICIT_CALLS, scale),
        explicit_bytes: 20_176,
    };
    (cfg, aux)
}

pub fn gnmt_like_preset(n_gpus: u32) -> (TrainingConfig, AuxPlan) {
    gnmt_like_preset_scaled(n_gpus, GNMT_DEFAULT_SCALE)
}
