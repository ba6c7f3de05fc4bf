//! Central finite differences, used as an independent oracle for the
//! analytic gradients recorded by [`crate::Graph`].

use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Norms below this are treated as zero when forming a relative error.
pub const NORM_FLOOR: f64 = 1e-6;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn numeric_grad<F>(x: &Tensor, step: f64, mut f: F) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    let mut out = vec![0.0; x.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        *o = (up - down) / (2.0 * step);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape as input")
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, NORM_FLOOR)`
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    diff / norm(analytic).max(norm(numeric)).max(NORM_FLOOR)
}
