use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;

use mxlink::compressor::{Compressor, Packet};
use mxlink::formats::{ScaleFormat, SchemeDescriptor};
use mxlink::netbench::{self, BenchConfig, LinkModel, TransportKind};
use mxlink::search::{self, AblationDimension, MetricTable, SearchConfig, SelectionStatus, SqnrEvaluator};
use mxlink::tensor::Tensor;
use mxlink::tpsim::{self, ReductionReport, TpConfig};
use mxlink::{metrics, rtns, synth};

#[derive(Parser)]
#[command(name = "mxlink", version, about = "Microscaling compression for tensor-parallel partial sums")]
struct Cli {
    /// Seed for synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Compress an RTNS tensor into an MXC1 container.
    Compress {
        #[arg(long)]
        input: PathBuf,
        /// Codec, e.g. fp4_e2m1:32:e8m0, int4-channel or topk-3x.
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode an MXC1 container back into an RTNS tensor.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Error statistics of several codecs on one tensor.
    Analyze {
        /// RTNS tensor; synthetic data is used when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Comma-separated codecs. Defaults to none plus the FP3/FP4/FP5 grid with e5m0 scales.
        #[arg(long, value_delimiter = ',')]
        schemes: Vec<String>,
        #[command(flatten)]
        synthetic: SyntheticArgs,
    },
    /// Grid search and threshold selection.
    Search {
        /// CSV with columns dtype,block,metric_pct. The built-in metric is used when absent.
        #[arg(long)]
        metric_table: Option<PathBuf>,
        /// Scale format assumed for metric-table rows and the built-in grid.
        #[arg(long, default_value = "e5m0")]
        scale: String,
        #[arg(long, default_value_t = search::DEFAULT_THRESHOLD_PCT)]
        threshold: f64,
        /// Comma-separated schemes for the built-in metric.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<String>,
    },
    /// Vary one scheme dimension with the built-in metric.
    Ablate {
        #[arg(long)]
        dimension: String,
        #[arg(long, default_value = "fp4_e2m1:32:e5m0")]
        base: String,
    },
    /// Simulated row-wise tensor-parallel reduction.
    Tpsim {
        #[arg(long, value_delimiter = ',', default_values_t = tpsim::STANDARD_DEGREES)]
        degrees: Vec<usize>,
        #[arg(long, default_value = "fp4_e2m1:32:e8m0")]
        scheme: String,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        tokens: usize,
        #[arg(long, default_value_t = 1024)]
        d_in: usize,
        #[arg(long, default_value_t = 1024)]
        d_out: usize,
        /// Add each worker's own partial sum without quantizing it.
        #[arg(long)]
        exact_local: bool,
        /// RTNS input activations [rows, d_in]; requires --weights.
        #[arg(long, requires = "weights")]
        activations: Option<PathBuf>,
        /// RTNS weight [d_in, d_out]; requires --activations.
        #[arg(long, requires = "activations")]
        weights: Option<PathBuf>,
    },
    /// Throttled all-gather benchmark against the uncompressed baseline.
    Netbench {
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Size of each worker's tensor at 16 bits per value.
        #[arg(long, default_value_t = 16.0)]
        mib: f64,
        /// Bytes per second per worker; `inf` disables throttling.
        #[arg(long, default_value_t = 1e9)]
        bandwidth: f64,
        /// Seconds added per message.
        #[arg(long, default_value_t = 0.0)]
        latency: f64,
        #[arg(long, default_value = "fp4_e2m1:32:e8m0")]
        scheme: String,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value = "channel")]
        transport: String,
        /// Also calibrate codec throughput and report model predictions.
        #[arg(long)]
        predict: bool,
    },
    /// Measure codec throughput for the cost model.
    Calibrate {
        #[arg(long, default_value = "fp4_e2m1:32:e8m0")]
        scheme: String,
        #[arg(long, default_value_t = 4.0)]
        mib: f64,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Threads running the codec at once.
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
    },
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 256)]
    rows: usize,
    #[arg(long, default_value_t = 1024)]
    cols: usize,
    /// Inject outliers into the synthetic Gaussian tensor.
    #[arg(long)]
    outliers: bool,
}

/// Argument problems exit with 2, everything else with 3.
fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<mxlink::Error>(),
            Some(
                mxlink::Error::InvalidFormat(_)
                    | mxlink::Error::UnknownScheme { .. }
                    | mxlink::Error::InvalidArgument(_)
                    | mxlink::Error::MinimumDegreeTwo(_)
                    | mxlink::Error::CompressionFactorTooHigh { .. }
                    | mxlink::Error::EmptyGrid
            )
        )
    }) || err.downcast_ref::<Usage>().is_some();
    if validation {
        2
    } else {
        3
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

struct Report {
    out: Option<PathBuf>,
    format: Format,
}

impl Report {
    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
            None => Box::new(io::stdout().lock()),
        })
    }

    /// Emits rows as CSV (header from the serde field names) or a JSON array.
    fn rows<T: Serialize>(&self, rows: &[T]) -> Result<()> {
        let mut w = self.sink()?;
        match self.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, rows)?;
                writeln!(w)?;
            }
            Format::Csv => {
                let mut c = csv::Writer::from_writer(w);
                for r in rows {
                    c.serialize(r)?;
                }
                c.flush()?;
            }
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    let report = Report {
        out: cli.out,
        format: cli.format,
    };
    let seed = cli.seed;
    match cli.command {
        Command::Compress { input, scheme, output } => cmd_compress(&report, &input, &scheme, &output),
        Command::Decompress { input, output } => cmd_decompress(&report, &input, &output),
        Command::Analyze {
            input,
            schemes,
            synthetic,
        } => cmd_analyze(&report, input.as_deref(), &schemes, &synthetic, seed),
        Command::Search {
            metric_table,
            scale,
            threshold,
            grid,
        } => cmd_search(&report, metric_table.as_deref(), &scale, threshold, &grid, seed),
        Command::Ablate { dimension, base } => {
            let dimension: AblationDimension = dimension.parse()?;
            let base: SchemeDescriptor = base.parse()?;
            let rows = search::ablate(dimension, &base, &SqnrEvaluator::new(seed))?;
            match report.format {
                Format::Csv => search::write_ablation_csv(report.sink()?, &rows)?,
                Format::Json => report.rows(&rows.iter().map(AblationOut::from).collect::<Vec<_>>())?,
            }
            Ok(())
        }
        Command::Tpsim {
            degrees,
            scheme,
            batch,
            tokens,
            d_in,
            d_out,
            exact_local,
            activations,
            weights,
        } => {
            let cfg = TpConfig {
                seed,
                batch,
                tokens,
                d_in,
                d_out,
                quantize_local: !exact_local,
                ..TpConfig::new(2, scheme.parse()?)
            };
            let reports = match (activations, weights) {
                (Some(x), Some(w)) => tpsim_from_files(&cfg, &degrees, &x, &w)?,
                _ => tpsim::parallelism_sweep(&cfg, &degrees)?,
            };
            match report.format {
                Format::Csv => tpsim::write_csv(report.sink()?, &reports)?,
                Format::Json => report.rows(&reports.iter().map(TpsimOut::from).collect::<Vec<_>>())?,
            }
            Ok(())
        }
        Command::Netbench {
            workers,
            mib,
            bandwidth,
            latency,
            scheme,
            repetitions,
            transport,
            predict,
        } => {
            let compressor: Compressor = scheme.parse()?;
            let transport: TransportKind = transport.parse()?;
            let link = LinkModel::new(bandwidth, latency, f64::INFINITY, f64::INFINITY)?;
            let cfg = BenchConfig {
                workers,
                shape: BenchConfig::activation_shape(mib)?,
                compressor: Compressor::Passthrough16,
                link,
                repetitions,
                transport,
                seed,
            };
            let base = netbench::run_allgather_bench(&cfg)?;
            let mut results = vec![base.clone()];
            if compressor != Compressor::Passthrough16 {
                let r = netbench::run_allgather_bench(&BenchConfig { compressor, ..cfg.clone() })?;
                results.push(r.with_baseline(&base));
            }
            let mut out: Vec<NetbenchOut> = results.into_iter().map(|r| NetbenchOut { result: r, predicted_s: None }).collect();
            if predict {
                for o in &mut out {
                    let c: Compressor = o.result.scheme.parse()?;
                    let t = netbench::calibrate_codec_throughput(&c, &cfg.shape, 5, workers, seed)?;
                    o.predicted_s = Some(netbench::predict_comm_time(&cfg.shape, &c, workers, &link.with_codec(t)?)?);
                }
            }
            match report.format {
                Format::Json => {
                    let mut w = report.sink()?;
                    serde_json::to_writer_pretty(&mut w, &out)?;
                    writeln!(w)?;
                }
                Format::Csv => report.rows(&out.iter().map(NetbenchRow::from).collect::<Vec<_>>())?,
            }
            Ok(())
        }
        Command::Calibrate {
            scheme,
            mib,
            runs,
            concurrency,
        } => {
            let c: Compressor = scheme.parse()?;
            let shape = BenchConfig::activation_shape(mib)?;
            let t = netbench::calibrate_codec_throughput(&c, &shape, runs, concurrency, seed)?;
            report.rows(&[CalibrateOut {
                scheme: c.to_string(),
                elements: shape.iter().product(),
                concurrency,
                compress_values_per_s: t.compress,
                decompress_values_per_s: t.decompress,
            }])
        }
    }
}

#[derive(Serialize)]
struct FileOut {
    input: String,
    output: String,
    scheme: String,
    elements: u64,
    bytes: u64,
}

fn cmd_compress(report: &Report, input: &Path, scheme: &str, output: &Path) -> Result<()> {
    let compressor: Compressor = scheme.parse()?;
    if compressor == Compressor::Passthrough16 {
        bail!(usage("the 16-bit passthrough has no container format; pick a compressing scheme"));
    }
    let t = rtns::read(input)?;
    let packet = compressor.compress(&t).with_context(|| format!("compressing {}", input.display()))?;
    let bytes = packet.to_bytes()?;
    std::fs::write(output, &bytes).with_context(|| format!("writing {}", output.display()))?;
    report.rows(&[FileOut {
        input: input.display().to_string(),
        output: output.display().to_string(),
        scheme: compressor.to_string(),
        elements: t.len() as u64,
        bytes: bytes.len() as u64,
    }])
}

fn cmd_decompress(report: &Report, input: &Path, output: &Path) -> Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let packet = Packet::from_mxc1(&bytes).map_err(|e| e.at_path(input))?;
    let t = packet.decompress().map_err(|e| e.at_path(input))?;
    rtns::write(output, &t)?;
    let scheme = match &packet {
        Packet::Mx(ct) => ct.scheme().to_string(),
        Packet::ChannelInt(p) => format!("int{}-channel", p.bits()),
        Packet::TopK(p) => format!("topk k={}", p.k()),
        Packet::Raw16 { .. } => "none".into(),
    };
    report.rows(&[FileOut {
        input: input.display().to_string(),
        output: output.display().to_string(),
        scheme,
        elements: t.len() as u64,
        bytes: (t.len() * 4) as u64,
    }])
}

#[derive(Serialize)]
struct AnalyzeOut {
    scheme: String,
    eff_bits: Option<f64>,
    sqnr_db: f64,
    max_abs_err: f64,
    mse: f64,
    rel_frob_err: f64,
    bytes: u64,
}

fn cmd_analyze(report: &Report, input: Option<&Path>, schemes: &[String], syn: &SyntheticArgs, seed: u64) -> Result<()> {
    let t = match input {
        Some(p) => rtns::read(p)?,
        None => {
            let n = syn.rows.checked_mul(syn.cols).ok_or_else(|| usage("synthetic tensor too large"))?;
            let mut rng = synth::rng(seed);
            let data = if syn.outliers {
                synth::with_outliers(&mut rng, n)
            } else {
                synth::gaussian(&mut rng, n, 1.0)
            };
            Tensor::new(vec![syn.rows, syn.cols], data)?
        }
    };
    let codecs: Vec<Compressor> = if schemes.is_empty() {
        std::iter::once(Compressor::Passthrough16)
            .chain(search::default_grid(ScaleFormat::E5M0).into_iter().map(Compressor::Mx))
            .collect()
    } else {
        schemes.iter().map(|s| s.parse()).collect::<mxlink::Result<_>>()?
    };
    let mut rows = Vec::with_capacity(codecs.len());
    for c in codecs {
        let p = c.compress(&t)?;
        let d = p.decompress()?;
        let s = metrics::compare(t.data(), d.data());
        rows.push(AnalyzeOut {
            scheme: c.to_string(),
            eff_bits: c.effective_bits(),
            sqnr_db: s.sqnr_db,
            max_abs_err: s.max_abs_err,
            mse: s.mse,
            rel_frob_err: s.rel_frob_err,
            bytes: p.wire_len() as u64,
        });
    }
    report.rows(&rows)
}

fn cmd_search(
    report: &Report,
    table: Option<&Path>,
    scale: &str,
    threshold: f64,
    grid: &[String],
    seed: u64,
) -> Result<()> {
    let scale: ScaleFormat = scale.parse()?;
    let results = match table {
        Some(path) => {
            let table = MetricTable::from_path(path, scale)?;
            search::run_grid(&SearchConfig::new(table.candidates(), threshold)?, &table)?
        }
        None => {
            let grid = if grid.is_empty() {
                search::default_grid(scale)
            } else {
                grid.iter().map(|s| s.parse()).collect::<mxlink::Result<_>>()?
            };
            search::run_grid(&SearchConfig::new(grid, threshold)?, &SqnrEvaluator::new(seed))?
        }
    };
    let sel = search::select_scheme(&results, threshold)?;
    if sel.status == SelectionStatus::BelowThresholdEmpty {
        eprintln!("warning: no candidate is below {threshold}%; reporting the least degraded one");
    }
    println!("{sel}");
    if report.out.is_some() {
        match report.format {
            Format::Csv => search::write_results_csv(report.sink()?, &results)?,
            Format::Json => report.rows(
                &results
                    .iter()
                    .map(|r| SearchOut {
                        scheme: r.scheme.to_string(),
                        eff_bits: r.effective_bits_f64(),
                        metric_pct: r.metric_increase_pct,
                    })
                    .collect::<Vec<_>>(),
            )?,
        }
    }
    Ok(())
}

fn tpsim_from_files(cfg: &TpConfig, degrees: &[usize], x: &Path, w: &Path) -> Result<Vec<ReductionReport>> {
    let to_matrix = |path: &Path| -> Result<Array2<f32>> {
        let t = rtns::read(path)?;
        if t.shape().len() != 2 {
            bail!(usage(format!("{} must be a matrix, has shape {:?}", path.display(), t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        Ok(Array2::from_shape_vec((r, c), t.into_data())?)
    };
    let (x, w) = (to_matrix(x)?, to_matrix(w)?);
    degrees
        .iter()
        .map(|&degree| {
            if degree < 2 {
                return Err(mxlink::Error::MinimumDegreeTwo(degree).into());
            }
            let (partials, padding) = tpsim::partial_sums(&x, &w, degree)?;
            Ok(tpsim::reduce_partials(&TpConfig { degree, ..cfg.clone() }, &partials, padding)?)
        })
        .collect()
}

#[derive(Serialize)]
struct SearchOut {
    scheme: String,
    eff_bits: f64,
    metric_pct: f64,
}

#[derive(Serialize)]
struct AblationOut {
    dimension: String,
    parameter: String,
    scheme: String,
    metric_pct: f64,
}

impl From<&search::AblationRow> for AblationOut {
    fn from(r: &search::AblationRow) -> Self {
        Self {
            dimension: r.dimension.to_string(),
            parameter: r.parameter.clone(),
            scheme: r.scheme.to_string(),
            metric_pct: r.metric_increase_pct,
        }
    }
}

#[derive(Serialize)]
struct TpsimOut {
    degree: usize,
    scheme: String,
    rel_frob_err: f64,
    max_abs_err: f64,
    sqnr_db: f64,
    bytes_compressed: u64,
    bytes_uncompressed: u64,
    bound_violations: u64,
}

impl From<&ReductionReport> for TpsimOut {
    fn from(r: &ReductionReport) -> Self {
        Self {
            degree: r.degree,
            scheme: r.scheme.clone(),
            rel_frob_err: r.rel_frob_err,
            max_abs_err: r.max_abs_err,
            sqnr_db: r.sqnr_db,
            bytes_compressed: r.bytes_compressed,
            bytes_uncompressed: r.bytes_uncompressed,
            bound_violations: r.bound_violations,
        }
    }
}

#[derive(Serialize)]
struct NetbenchOut {
    #[serde(flatten)]
    result: netbench::BenchResult,
    predicted_s: Option<f64>,
}

#[derive(Serialize)]
struct NetbenchRow {
    scheme: String,
    workers: usize,
    transport: TransportKind,
    elements: u64,
    bandwidth: f64,
    repetitions: usize,
    median_s: f64,
    stddev_s: f64,
    bytes_per_worker: u64,
    speedup: Option<f64>,
    predicted_s: Option<f64>,
}

impl From<&NetbenchOut> for NetbenchRow {
    fn from(o: &NetbenchOut) -> Self {
        let r = &o.result;
        Self {
            scheme: r.scheme.clone(),
            workers: r.workers,
            transport: r.transport,
            elements: r.elements,
            bandwidth: r.bandwidth,
            repetitions: r.repetitions,
            median_s: r.median_s,
            stddev_s: r.stddev_s,
            bytes_per_worker: r.bytes_per_worker,
            speedup: r.speedup,
            predicted_s: o.predicted_s,
        }
    }
}

#[derive(Serialize)]
struct CalibrateOut {
    scheme: String,
    elements: usize,
    concurrency: usize,
    compress_values_per_s: f64,
    decompress_values_per_s: f64,
}
