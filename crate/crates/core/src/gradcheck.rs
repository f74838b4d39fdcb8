//! Central finite-difference gradient checking.
//!
//! Kept independent of the tape: the numeric side only ever evaluates the
//! forward function.

use crate::tensor::Mat;

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &Mat, h: f64, mut f: impl FnMut(&Mat) -> f64) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = f(&probe);
        probe.data[i] = orig - h;
        let fm = f(&probe);
        probe.data[i] = orig;
        out.data[i] = (fp - fm) / (2.0 * h);
    }
    out
}

/// Gradient blocks with norm below this are compared in absolute terms; an
/// exactly-zero gradient (e.g. key biases, which softmax ignores) has no
/// meaningful relative error.
pub const NORM_FLOOR: f64 = 1e-5;

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖, NORM_FLOOR)`, measured over the
/// whole gradient block.
pub fn relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff: f64 = analytic.data.iter().zip(&numeric.data).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.data.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.data.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

pub fn assert_grad_close(analytic: &Mat, numeric: &Mat, tol: f64) {
    let err = relative_error(analytic, numeric);
    assert!(err <= tol, "gradient mismatch: rel err {err:.3e} > {tol:.1e}\nanalytic {analytic:?}\nnumeric {numeric:?}");
}
