//! Central finite-difference gradient checking.

use super::Tensor2D;

/// Denominator floor for relative errors, so that entries whose true
/// gradient is numerically zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(mut f: impl FnMut(&Tensor2D) -> f64, x: &Tensor2D, h: f64) -> Tensor2D {
    let mut probe = x.clone();
    let mut out = Tensor2D::zeros(x.rows(), x.cols());
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    out
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn compare(analytic: &Tensor2D, numeric: &Tensor2D) -> GradCheckReport {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes");
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_index: 0, checked: 0 };
    for (i, (a, n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = relative_error(*a, *n);
        report.checked += 1;
        if e > report.max_rel_err || e.is_nan() {
            report.max_rel_err = e;
            report.worst_index = i;
        }
    }
    report
}
