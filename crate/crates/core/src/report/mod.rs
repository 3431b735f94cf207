//! End-to-end analysis (parse → group → decompose → accumulate) and the
//! machine-readable outputs: matrices, statistics, diagnostics and heatmaps.

mod heatmap;
mod output;
mod verify;

pub use heatmap::{render_heatmap, ColorStop, RenderSpec, RenderSpecError, Scale, DEFAULT_STOPS};
pub use output::{
    matrix_from_csv, matrix_from_json, matrix_to_csv, matrix_to_json, stats_table, stats_to_csv,
    stats_to_json, write_outputs, MatrixDocument, OutputFormat, OutputOptions,
};
pub use verify::{verify, Expected, VerifyError, VerifyReport};

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::decompose::{DecomposeError, ModelConfig};
use crate::matrix::{
    collect_contributions, combined_matrix, split_by_primitive, summarize, CommMatrix, CommType,
    MatrixError, StatsSummary,
};
use crate::trace::{group_collectives, match_p2p, Diagnostic, Endpoint, TraceError, TraceEvent};

#[derive(thiserror::Error, Debug)]
pub enum AnalyzeError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Render(#[from] RenderSpecError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl AnalyzeError {
    /// 1 for I/O failures, 2 for anything wrong with the trace or settings.
    pub fn exit_code(&self) -> u8 {
        match self {
            AnalyzeError::Io(_) | AnalyzeError::Trace(TraceError::Io(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub model: ModelConfig,
    /// Matrix size; defaults to one past the highest GPU id in the trace.
    pub gpus: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    pub gpus: u32,
    pub combined: CommMatrix,
    pub per_primitive: BTreeMap<CommType, CommMatrix>,
    pub stats: StatsSummary,
    pub instances: usize,
    pub p2p_pairs: usize,
    pub unmatched_events: usize,
    pub diagnostics: Vec<Diagnostic>,
}

fn highest_gpu(events: &[TraceEvent]) -> Option<u32> {
    events
        .iter()
        .flat_map(|ev| {
            let copy_gpus = [ev.copy_src, ev.copy_dst]
                .into_iter()
                .flatten()
                .filter_map(|ep| match ep {
                    Endpoint::Gpu(g) => Some(g),
                    _ => None,
                });
            std::iter::once(ev.device).chain(copy_gpus)
        })
        .max()
}

pub fn analyze_events(
    events: &[TraceEvent],
    opts: &AnalyzeOptions,
) -> Result<Analysis, AnalyzeError> {
    let grouped = group_collectives(events);
    let p2p = match_p2p(events);
    let gpus = opts
        .gpus
        .unwrap_or_else(|| highest_gpu(events).map_or(0, |g| g + 1));

    let contributions = collect_contributions(&grouped.instances, &p2p.pairs, events, &opts.model)?;
    let combined = combined_matrix(&contributions, gpus)?;
    let per_primitive = split_by_primitive(&contributions, gpus)?;
    let stats = summarize(&contributions);

    let unmatched_events = grouped
        .unmatched
        .iter()
        .chain(&p2p.unmatched)
        .map(|u| u.events.len())
        .sum();
    let diagnostics = grouped
        .unmatched
        .iter()
        .chain(&p2p.unmatched)
        .map(|u| u.diagnostic.clone())
        .chain(grouped.warnings)
        .chain(p2p.warnings)
        .collect();

    Ok(Analysis {
        gpus,
        combined,
        per_primitive,
        stats,
        instances: grouped.instances.len(),
        p2p_pairs: p2p.pairs.len(),
        unmatched_events,
        diagnostics,
    })
}

/// Parses and analyzes one or more trace texts as a single run. Lines are
/// numbered per input in errors.
pub fn analyze_texts<S: AsRef<str>>(
    texts: &[S],
    opts: &AnalyzeOptions,
) -> Result<Analysis, AnalyzeError> {
    let mut events = Vec::new();
    for text in texts {
        events.extend(crate::trace::parse_trace_str(text.as_ref())?);
    }
    analyze_events(&events, opts)
}

/// Hex SHA-256 over the given inputs, in order.
pub fn trace_digest<S: AsRef<[u8]>>(inputs: &[S]) -> String {
    let mut hasher = Sha256::new();
    for input in inputs {
        hasher.update(input.as_ref());
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate_workload, gnmt_like_preset};

    #[test]
    fn empty_trace() {
        let a = analyze_texts(&[""], &AnalyzeOptions::default()).unwrap();
        assert_eq!(a.gpus, 0);
        assert_eq!(a.combined, CommMatrix::zeros(0));
        assert_eq!(a.stats.total_calls(), 0);
        assert!(a.per_primitive.is_empty());
        assert!(a.diagnostics.is_empty());
    }

    #[test]
    fn gnmt_like_keys() {
        let (cfg, aux) = gnmt_like_preset(8);
        let events = generate_workload(&cfg, &aux, 11).unwrap();
        let a = analyze_events(&events, &AnalyzeOptions::default()).unwrap();
        let keys: Vec<CommType> = a.per_primitive.keys().copied().collect();
        assert_eq!(
            keys,
            vec![
                CommType::AllReduce,
                CommType::Broadcast,
                CommType::AllGather,
                CommType::ExplicitTransfer
            ]
        );
        assert_eq!(a.unmatched_events, 0);
    }

    #[test]
    fn too_few_gpus_is_error() {
        let (cfg, aux) = gnmt_like_preset(4);
        let events = generate_workload(&cfg, &aux, 1).unwrap();
        let opts = AnalyzeOptions {
            gpus: Some(2),
            ..AnalyzeOptions::default()
        };
        let err = analyze_events(&events, &opts).unwrap_err();
        assert!(matches!(
            err,
            AnalyzeError::Matrix(MatrixError::EndpointOutOfRange { .. })
        ));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            trace_digest(&["abc"]),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(trace_digest(&["a", "bc"]), trace_digest(&["abc"]));
    }
}
