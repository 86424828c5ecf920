//! Row-wise tensor-parallel linear layer with compressed partial sums.
//!
//! Worker `i` holds rows `[i*d_in/N, (i+1)*d_in/N)` of the weight and the
//! matching input columns, so its output `Y_i = X_i W_i` is a partial sum.
//! Every worker compresses `Y_i`, the packets are gathered by all workers, and
//! each worker decompresses and sums them. The result is compared against
//! `sum_i Y_i` accumulated in f64.
//!
//! Partial sums are computed in f32 and then held as f16, the activation type
//! of the uncompressed 16-bit baseline, so the passthrough codec is exact.

use std::io::Write;

use half::f16;
use ndarray::{s, Array2};

use crate::compressor::Compressor;
use crate::error::{Error, Result};
use crate::metrics;
use crate::synth;
use crate::tensor::Tensor;

pub const STANDARD_DEGREES: [usize; 5] = [2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct TpConfig {
    pub degree: usize,
    pub compressor: Compressor,
    pub seed: u64,
    pub batch: usize,
    pub tokens: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// When false, a worker adds its own partial sum without quantizing it.
    pub quantize_local: bool,
}

impl TpConfig {
    pub fn new(degree: usize, compressor: Compressor) -> Self {
        Self {
            degree,
            compressor,
            seed: 0,
            batch: 2,
            tokens: 64,
            d_in: 1024,
            d_out: 1024,
            quantize_local: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport {
    pub degree: usize,
    pub scheme: String,
    pub max_abs_err: f64,
    pub rel_frob_err: f64,
    pub sqnr_db: f64,
    /// Bytes each worker sends to its N-1 peers.
    pub bytes_compressed: u64,
    /// The same traffic at 16 bits per value.
    pub bytes_uncompressed: u64,
    /// Elements where the reduced error exceeded the summed per-worker bound.
    pub bound_violations: u64,
    /// Zero rows appended to the weight so that `d_in` divides evenly.
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct Sharding {
    pub shards: Vec<Array2<f32>>,
    pub padding: usize,
}

/// Splits `weight` (d_in x d_out) into `n` row blocks, zero-padding d_in up to
/// a multiple of `n`.
pub fn shard_rowwise(weight: &Array2<f32>, n: usize) -> Result<Sharding> {
    if n == 0 {
        return Err(Error::ShapeMismatch("cannot shard across zero workers".into()));
    }
    let (d_in, d_out) = weight.dim();
    let padded = d_in.div_ceil(n) * n;
    let rows = padded / n;
    let shards = (0..n)
        .map(|i| {
            let mut shard = Array2::<f32>::zeros((rows, d_out));
            let lo = (i * rows).min(d_in);
            let hi = ((i + 1) * rows).min(d_in);
            shard
                .slice_mut(s![..hi - lo, ..])
                .assign(&weight.slice(s![lo..hi, ..]));
            shard
        })
        .collect();
    Ok(Sharding {
        shards,
        padding: padded - d_in,
    })
}

fn f16_round(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}

/// Deterministic input activations and weights for a configuration.
pub fn synthetic_layer(cfg: &TpConfig) -> (Array2<f32>, Array2<f32>) {
    let mut rng = synth::rng(cfg.seed);
    let x = synth::with_outliers(&mut rng, cfg.rows() * cfg.d_in);
    let w = synth::gaussian(&mut rng, cfg.d_in * cfg.d_out, 1.0 / (cfg.d_in as f32).sqrt());
    (
        Array2::from_shape_vec((cfg.rows(), cfg.d_in), x).expect("sizes match"),
        Array2::from_shape_vec((cfg.d_in, cfg.d_out), w).expect("sizes match"),
    )
}

/// Per-worker partial sums `Y_i`, rounded to f16.
pub fn partial_sums(x: &Array2<f32>, w: &Array2<f32>, degree: usize) -> Result<(Vec<Tensor>, usize)> {
    if x.ncols() != w.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} columns, weight {} rows",
            x.ncols(),
            w.nrows()
        )));
    }
    let sharding = shard_rowwise(w, degree)?;
    let rows = sharding.shards[0].nrows();
    let d_in = x.ncols();
    let partials = sharding
        .shards
        .iter()
        .enumerate()
        .map(|(i, shard)| {
            let lo = (i * rows).min(d_in);
            let hi = ((i + 1) * rows).min(d_in);
            let y = x.slice(s![.., lo..hi]).dot(&shard.slice(s![..hi - lo, ..]));
            let data = y.iter().map(|&v| f16_round(v)).collect();
            Tensor::new(vec![y.nrows(), y.ncols()], data).expect("sizes match")
        })
        .collect();
    Ok((partials, sharding.padding))
}

pub fn simulate_reduction(cfg: &TpConfig) -> Result<ReductionReport> {
    if cfg.degree < 2 {
        return Err(Error::MinimumDegreeTwo(cfg.degree));
    }
    let (x, w) = synthetic_layer(cfg);
    let (partials, padding) = partial_sums(&x, &w, cfg.degree)?;
    reduce_partials(cfg, &partials, padding)
}

/// Compresses, exchanges and reduces precomputed partial sums.
pub fn reduce_partials(cfg: &TpConfig, partials: &[Tensor], padding: usize) -> Result<ReductionReport> {
    let n = partials.len();
    if n < 2 {
        return Err(Error::MinimumDegreeTwo(n));
    }
    let len = partials[0].len();
    if partials.iter().any(|p| p.shape() != partials[0].shape()) {
        return Err(Error::ShapeMismatch("partial sums differ in shape".into()));
    }

    let mut packets = Vec::with_capacity(n);
    let mut decoded = Vec::with_capacity(n);
    for (i, y) in partials.iter().enumerate() {
        let p = cfg.compressor.compress(y).map_err(|e| e.in_worker(i))?;
        decoded.push(p.decompress().map_err(|e| e.in_worker(i))?);
        packets.push(p);
    }

    let mut reference = vec![0.0f64; len];
    for y in partials {
        for (r, &v) in reference.iter_mut().zip(y.data()) {
            *r += v as f64;
        }
    }
    let mut bound_sum = vec![0.0f64; len];
    for p in &packets {
        for (b, v) in bound_sum.iter_mut().zip(p.elementwise_bound()) {
            *b += v;
        }
    }

    // Symmetric mode: every worker reduces the same N decoded tensors. Without
    // local quantization, worker j uses its exact partial sum in slot j.
    let workers: Vec<Option<usize>> = if cfg.quantize_local { vec![None] } else { (0..n).map(Some).collect() };
    let mut worst: Option<metrics::ErrorStats> = None;
    let mut violations = 0u64;
    for local in workers {
        let mut reduced = vec![0.0f64; len];
        for (i, d) in decoded.iter().enumerate() {
            let src = if local == Some(i) { &partials[i] } else { d };
            for (r, &v) in reduced.iter_mut().zip(src.data()) {
                *r += v as f64;
            }
        }
        let stats = metrics::compare(&reference, &reduced);
        violations = violations.max(
            reduced
                .iter()
                .zip(&reference)
                .zip(&bound_sum)
                // Relative slack covers rounding in the f64 sums themselves.
                .filter(|((&r, &e), &b)| (r - e).abs() > b * (1.0 + 1e-9))
                .count() as u64,
        );
        if worst.map_or(true, |w| stats.rel_frob_err > w.rel_frob_err) {
            worst = Some(stats);
        }
    }
    let stats = worst.expect("at least one worker");

    let peers = (n - 1) as u64;
    let sent = packets.iter().map(|p| p.wire_len() as u64).max().unwrap_or(0);
    Ok(ReductionReport {
        degree: n,
        scheme: cfg.compressor.to_string(),
        max_abs_err: stats.max_abs_err,
        rel_frob_err: stats.rel_frob_err,
        sqnr_db: stats.sqnr_db,
        bytes_compressed: peers * sent,
        bytes_uncompressed: peers * len as u64 * 2,
        bound_violations: violations,
        padding,
    })
}

/// One reduction per degree with a shared seed.
pub fn parallelism_sweep(base: &TpConfig, degrees: &[usize]) -> Result<Vec<ReductionReport>> {
    if let Some(&d) = degrees.iter().find(|&&d| d < 2) {
        return Err(Error::MinimumDegreeTwo(d));
    }
    let (x, w) = synthetic_layer(base);
    degrees
        .iter()
        .map(|&degree| {
            let cfg = TpConfig { degree, ..base.clone() };
            let (partials, padding) = partial_sums(&x, &w, degree)?;
            reduce_partials(&cfg, &partials, padding)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 7] = [
    "degree",
    "scheme",
    "rel_frob_err",
    "max_abs_err",
    "sqnr_db",
    "bytes_compressed",
    "bytes_uncompressed",
];

pub fn write_csv(out: impl Write, reports: &[ReductionReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.degree.to_string(),
            r.scheme.clone(),
            r.rel_frob_err.to_string(),
            r.max_abs_err.to_string(),
            r.sqnr_db.to_string(),
            r.bytes_compressed.to_string(),
            r.bytes_uncompressed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(degree: usize, codec: &str) -> TpConfig {
        TpConfig {
            tokens: 8,
            d_in: 128,
            d_out: 96,
            seed: 11,
            ..TpConfig::new(degree, codec.parse().unwrap())
        }
    }

    #[test]
    fn identity_shards_reconstruct_input() {
        let eye = Array2::<f32>::eye(4);
        let sh = shard_rowwise(&eye, 2).unwrap();
        assert_eq!(sh.padding, 0);
        assert_eq!(sh.shards.len(), 2);
        assert_eq!(sh.shards[0].dim(), (2, 4));
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f32 - 5.5);
        let mut sum = Array2::<f32>::zeros((3, 4));
        for (i, w) in sh.shards.iter().enumerate() {
            sum += &x.slice(s![.., 2 * i..2 * i + 2]).dot(w);
        }
        assert_eq!(sum, x);
    }

    #[test]
    fn padding_recorded() {
        let w = Array2::<f32>::ones((6, 3));
        let sh = shard_rowwise(&w, 4).unwrap();
        assert_eq!(sh.padding, 2);
        assert!(sh.shards.iter().all(|s| s.dim() == (2, 3)));
        assert_eq!(sh.shards[3], Array2::<f32>::zeros((2, 3)));
    }

    #[test]
    fn concatenation_reconstructs_weight() {
        for n in [2, 4] {
            let mut rng = synth::rng(n as u64);
            let w = Array2::from_shape_vec((8, 5), synth::gaussian(&mut rng, 40, 1.0)).unwrap();
            let sh = shard_rowwise(&w, n).unwrap();
            let views: Vec<_> = sh.shards.iter().map(|s| s.view()).collect();
            assert_eq!(ndarray::concatenate(ndarray::Axis(0), &views).unwrap(), w);
        }
    }

    #[test]
    fn passthrough_has_zero_error() {
        for quantize_local in [true, false] {
            let cfg = TpConfig { quantize_local, ..small(4, "none") };
            let r = simulate_reduction(&cfg).unwrap();
            assert_eq!(r.rel_frob_err, 0.0);
            assert_eq!(r.max_abs_err, 0.0);
            assert_eq!(r.bytes_compressed, r.bytes_uncompressed);
        }
    }

    #[test]
    fn representable_partials_are_exact() {
        let cfg = small(2, "fp4_e2m1:4:e8m0");
        let a = Tensor::new(vec![2, 4], vec![1.0, -6.0, 0.5, 3.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::new(vec![2, 4], vec![4.0, 2.0, 1.5, -0.5, 12.0, 8.0, -2.0, 1.0]).unwrap();
        let r = reduce_partials(&cfg, &[a, b], 0).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn compressed_error_within_bound_and_deterministic() {
        let cfg = small(4, "fp4_e2m1:32:e8m0");
        let a = simulate_reduction(&cfg).unwrap();
        let b = simulate_reduction(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bound_violations, 0);
        assert!(a.rel_frob_err > 0.0);
        assert!(a.bytes_compressed < a.bytes_uncompressed);
    }

    #[test]
    fn asymmetric_mode_reports() {
        let cfg = TpConfig { quantize_local: false, ..small(4, "fp4_e2m1:32:e8m0") };
        let r = simulate_reduction(&cfg).unwrap();
        assert_eq!(r.bound_violations, 0);
        assert!(r.rel_frob_err > 0.0);
    }

    #[test]
    fn sweep_accounting() {
        let base = small(2, "fp4_e2m1:32:e8m0");
        let rows = parallelism_sweep(&base, &STANDARD_DEGREES).unwrap();
        assert_eq!(rows.len(), 5);
        let len = (base.rows() * base.d_out) as u64;
        for r in &rows {
            assert_eq!(r.bytes_uncompressed, (r.degree as u64 - 1) * len * 2);
            assert_eq!(r.bound_violations, 0);
        }
        assert!(rows.windows(2).all(|w| w[0].bytes_compressed < w[1].bytes_compressed));
        assert!(matches!(parallelism_sweep(&base, &[1]), Err(Error::MinimumDegreeTwo(1))));
        let mut csv = Vec::new();
        write_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("degree,scheme,rel_frob_err,max_abs_err,sqnr_db,bytes_compressed,bytes_uncompressed"));
    }

    #[test]
    fn passthrough_sweep_is_exact() {
        let rows = parallelism_sweep(&small(2, "none"), &STANDARD_DEGREES).unwrap();
        assert!(rows.iter().all(|r| r.rel_frob_err == 0.0));
    }

    #[test]
    fn baselines_run_through_the_simulator() {
        for c in ["int4-channel", "topk-3x"] {
            let r = simulate_reduction(&small(2, c)).unwrap();
            assert_eq!(r.bound_violations, 0, "{c}");
            assert!(r.bytes_compressed < r.bytes_uncompressed);
        }
    }
}
