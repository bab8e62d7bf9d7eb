//! Central finite differences against an analytic gradient.

/// Outcome of [`check_gradient`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the
    /// coordinates that were not excluded.
    pub rel_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink within `h`.
    pub kinks: usize,
}

/// Curvature above which a coordinate is treated as crossing a kink
/// (relu, max) rather than a smooth region.
pub const KINK_CURVATURE: f64 = 1e3;

/// Compares `analytic` with central differences of `f` at `x`.
///
/// A coordinate is excluded when the second difference implies a curvature
/// above [`KINK_CURVATURE`], which happens when a relu input changes sign
/// inside `[x - h, x + h]`.
pub fn check_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len());
    let f0 = f(x);
    let mut p = x.to_vec();
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let (mut checked, mut kinks) = (0, 0);
    for j in 0..x.len() {
        p[j] = x[j] + h;
        let fp = f(&p);
        p[j] = x[j] - h;
        let fm = f(&p);
        p[j] = x[j];
        let second = (fp - 2.0 * f0 + fm).abs();
        if second > KINK_CURVATURE * h * h + 1e-12 * f0.abs().max(1.0) {
            kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        diff += (analytic[j] - numeric).powi(2);
        na += analytic[j].powi(2);
        nn += numeric.powi(2);
        checked += 1;
    }
    let denom = na.sqrt().max(nn.sqrt());
    let rel_err = if denom == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / denom
    };
    GradCheck {
        rel_err,
        checked,
        kinks,
    }
}
