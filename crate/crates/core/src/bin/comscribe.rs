use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use comscribe::decompose::{ModelConfig, RingOrder, DEFAULT_TREE_THRESHOLD};
use comscribe::report::{
    analyze_events, matrix_from_csv, matrix_from_json, render_heatmap, stats_table, trace_digest,
    verify, write_outputs, AnalyzeOptions, OutputFormat, OutputOptions, RenderSpec, Scale,
};
use comscribe::trace::{
    parse_trace_str, AlgorithmChoice, AlgorithmKind, CollectiveKind, TraceError,
};
use comscribe::workload::{
    generate_workload, gnmt_like_preset_scaled, resnet_like_preset, AuxPlan, TrainingConfig,
    GNMT_DEFAULT_SCALE,
};

#[derive(Parser)]
#[command(
    name = "comscribe",
    version,
    about = "Inter-GPU communication matrices from NCCL call traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build communication matrices and statistics from one or more traces.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic data-parallel training trace.
    Gen(GenArgs),
    /// Compare the byte model of one collective with the step simulator.
    Verify(VerifyArgs),
    /// Render a matrix file (CSV or JSON) as an SVG heatmap.
    Render(RenderArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace files; all are analyzed together as one run.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[arg(long, env = "COMSCRIBE_OUT", default_value = "comscribe_out")]
    out: PathBuf,
    /// Also write one matrix and heatmap per communication type.
    #[arg(long)]
    split: bool,
    /// Write M + Mᵀ instead of the directed matrix.
    #[arg(long)]
    symmetrize: bool,
    /// Ring order, `0,2,1,3` for every communicator of that size or
    /// `COMM=0,2,1,3` for one communicator. Repeatable.
    #[arg(long = "ring-perm", value_name = "SPEC")]
    ring_perm: Vec<String>,
    /// Auto AllReduce calls below this many bytes are modeled as tree.
    #[arg(long, default_value_t = DEFAULT_TREE_THRESHOLD)]
    tree_threshold: u64,
    #[arg(long, default_value = "both")]
    format: OutputFormat,
    /// Matrix size in GPUs (default: highest device id seen + 1).
    #[arg(long)]
    gpus: Option<u32>,
    #[arg(long, default_value = "log")]
    scale: Scale,
    /// Don't print the statistics table.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = ["resnet-like", "gnmt-like"], required_unless_present = "config")]
    preset: Option<String>,
    /// JSON training config; may carry an `aux` object for setup AllGathers
    /// and explicit copies.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// GPU count (presets default to 8).
    #[arg(long)]
    gpus: Option<u32>,
    #[arg(long)]
    bucket_bytes: Option<u64>,
    /// Iterations per epoch.
    #[arg(long)]
    iters: Option<u32>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    algo: Option<AlgorithmChoice>,
    /// Call-count scale of the gnmt-like preset.
    #[arg(long, default_value_t = GNMT_DEFAULT_SCALE)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    collective: CollectiveKind,
    algo: AlgorithmKind,
    ranks: u32,
    bytes: u64,
    #[arg(long)]
    root: Option<u32>,
    #[arg(long = "ring-perm", value_name = "RANKS")]
    ring_perm: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    matrix: PathBuf,
    #[arg(long, default_value = "heatmap.svg")]
    out: PathBuf,
    #[arg(long, default_value = "log")]
    scale: Scale,
    #[arg(long, default_value_t = 40)]
    cell_px: u32,
    /// Print byte counts inside non-zero cells.
    #[arg(long)]
    values: bool,
    #[arg(long)]
    symmetrize: bool,
}

/// An error plus the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn io_err(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        err: err.into(),
    }
}

fn invalid(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        err: err.into(),
    }
}

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Gen(g) => gen(g),
        Command::Verify(v) => run_verify(v),
        Command::Render(r) => render(r),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(io_err)
}

fn parse_ranks(list: &str) -> anyhow::Result<RingOrder> {
    let ranks = list
        .split(',')
        .map(|r| {
            r.trim()
                .parse::<u32>()
                .with_context(|| format!("bad rank `{r}`"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(RingOrder::new(ranks)?)
}

fn model_config(specs: &[String], tree_threshold: u64) -> anyhow::Result<ModelConfig> {
    let mut default_ring = None;
    let mut comm_rings = BTreeMap::new();
    for spec in specs {
        match spec.split_once('=') {
            Some((comm, list)) => {
                comm_rings.insert(comm.to_string(), parse_ranks(list)?);
            }
            None => default_ring = Some(parse_ranks(spec)?),
        }
    }
    Ok(ModelConfig {
        tree_threshold,
        default_ring,
        comm_rings,
    })
}

fn analyze(args: AnalyzeArgs) -> Outcome {
    let model = model_config(&args.ring_perm, args.tree_threshold)
        .context("--ring-perm")
        .map_err(invalid)?;
    let texts = args
        .traces
        .iter()
        .map(|p| read_file(p))
        .collect::<Result<Vec<_>, _>>()?;

    let mut events = Vec::new();
    for (path, text) in args.traces.iter().zip(&texts) {
        let parsed = parse_trace_str(text).map_err(|e| {
            let code = if matches!(e, TraceError::Io(_)) { 1 } else { 2 };
            Failure {
                code,
                err: anyhow!("{}: {e}", path.display()),
            }
        })?;
        events.extend(parsed);
    }

    let analysis = analyze_events(
        &events,
        &AnalyzeOptions {
            model,
            gpus: args.gpus,
        },
    )
    .map_err(|e| Failure {
        code: e.exit_code(),
        err: e.into(),
    })?;
    let opts = OutputOptions {
        format: args.format,
        split: args.split,
        symmetrize: args.symmetrize,
        render: RenderSpec {
            scale: args.scale,
            ..RenderSpec::default()
        },
        trace_digest: Some(trace_digest(&texts)),
    };
    write_outputs(&analysis, &args.out, &opts).map_err(|e| Failure {
        code: e.exit_code(),
        err: e.into(),
    })?;

    if !args.quiet {
        print!("{}", stats_table(&analysis.stats));
        println!(
            "{} instances, {} send/recv pairs, {} unmatched events -> {}",
            analysis.instances,
            analysis.p2p_pairs,
            analysis.unmatched_events,
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct GenConfig {
    #[serde(flatten)]
    training: TrainingConfig,
    #[serde(default)]
    aux: AuxPlan,
}

fn gen(args: GenArgs) -> Outcome {
    let (mut cfg, aux) = match (&args.preset, &args.config) {
        (_, Some(path)) => {
            let text = read_file(path)?;
            let doc: GenConfig = serde_json::from_str(&text)
                .with_context(|| format!("{}", path.display()))
                .map_err(invalid)?;
            (doc.training, doc.aux)
        }
        (Some(p), None) if p == "resnet-like" => (resnet_like_preset(8), AuxPlan::default()),
        (Some(_), None) => gnmt_like_preset_scaled(8, args.scale),
        (None, None) => return Err(invalid(anyhow!("need --preset or --config"))),
    };
    if let Some(g) = args.gpus {
        cfg.n_gpus = g;
    }
    if let Some(b) = args.bucket_bytes {
        cfg.bucket_cap_bytes = b;
    }
    if let Some(i) = args.iters {
        cfg.iterations_per_epoch = i;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(a) = args.algo {
        cfg.algorithm = a;
    }

    let events = generate_workload(&cfg, &aux, args.seed).map_err(invalid)?;
    let text = comscribe::trace::write_trace_string(&events).map_err(invalid)?;
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(io_err)?,
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(io_err)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn run_verify(args: VerifyArgs) -> Outcome {
    let ring = args
        .ring_perm
        .as_deref()
        .map(parse_ranks)
        .transpose()
        .context("--ring-perm")
        .map_err(invalid)?;
    let report = verify(
        args.collective,
        args.algo,
        args.ranks,
        args.bytes,
        args.root,
        ring,
    )
    .map_err(invalid)?;
    print!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn render(args: RenderArgs) -> Outcome {
    let text = read_file(&args.matrix)?;
    let is_json = args.matrix.extension().is_some_and(|e| e == "json");
    let parsed = if is_json {
        matrix_from_json(&text)
    } else {
        matrix_from_csv(&text)
    };
    let mut matrix = parsed
        .map_err(|e| anyhow!("{}: {e}", args.matrix.display()))
        .map_err(invalid)?;
    if args.symmetrize {
        matrix = matrix.symmetrized().map_err(invalid)?;
    }
    let spec = RenderSpec {
        scale: args.scale,
        cell_px: args.cell_px,
        show_values: args.values,
        ..RenderSpec::default()
    };
    let svg = render_heatmap(&matrix, &spec).map_err(invalid)?;
    std::fs::write(&args.out, svg)
        .with_context(|| format!("cannot write {}", args.out.display()))
        .map_err(io_err)?;
    Ok(ExitCode::SUCCESS)
}
