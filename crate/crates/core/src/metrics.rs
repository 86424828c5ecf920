//! Error statistics between a reference and a reconstruction.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mse: f64,
    pub max_abs_err: f64,
    pub rel_frob_err: f64,
    pub sqnr_db: f64,
}

/// Compares `approx` against `reference`; both must have equal length.
pub fn compare<A, B>(reference: &[A], approx: &[B]) -> ErrorStats
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    assert_eq!(reference.len(), approx.len(), "length mismatch");
    let mut signal = 0.0f64;
    let mut noise = 0.0f64;
    let mut max_abs_err = 0.0f64;
    for (&r, &a) in reference.iter().zip(approx) {
        let (r, a) = (r.into(), a.into());
        let d = a - r;
        signal += r * r;
        noise += d * d;
        max_abs_err = max_abs_err.max(d.abs());
    }
    let n = reference.len().max(1) as f64;
    ErrorStats {
        mse: noise / n,
        max_abs_err,
        rel_frob_err: relative(noise.sqrt(), signal.sqrt()),
        sqnr_db: sqnr_db(signal, noise),
    }
}

/// `10 log10(signal / noise)`; infinite for an exact reconstruction.
pub fn sqnr_db(signal_power: f64, noise_power: f64) -> f64 {
    if noise_power == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal_power / noise_power).log10()
    }
}

fn relative(err: f64, norm: f64) -> f64 {
    if err == 0.0 {
        0.0
    } else if norm == 0.0 {
        f64::INFINITY
    } else {
        err / norm
    }
}

pub fn mse<A, B>(reference: &[A], approx: &[B]) -> f64
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    compare(reference, approx).mse
}
