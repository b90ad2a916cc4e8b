use crate::autodiff::ParamSet;

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Central finite-difference check of `analytic` against `loss` over every
/// scalar of every parameter. Returns the maximum relative error.
///
/// `loss` must be a pure function of the parameters.
pub fn finite_diff_check(
    params: &ParamSet<f64>,
    analytic: &ParamSet<f64>,
    eps: f64,
    mut loss: impl FnMut(&ParamSet<f64>) -> f64,
) -> f64 {
    assert!((1e-6..=1e-3).contains(&eps), "eps must lie in [1e-6, 1e-3]");
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for i in 0..params.get(p).numel() {
            let orig = params.get(p).data()[i];
            probe.get_mut(p).data_mut()[i] = orig + eps;
            let up = loss(&probe);
            probe.get_mut(p).data_mut()[i] = orig - eps;
            let down = loss(&probe);
            probe.get_mut(p).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.get(p).data()[i], numeric));
        }
    }
    worst
}
