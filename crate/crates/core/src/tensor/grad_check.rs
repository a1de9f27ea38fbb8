//! Finite-difference gradient checker.

use super::Tensor;

/// Compares the analytic gradient of a scalar-valued `f` at `x` against
/// central differences with half-width `eps`, returning the maximum over
/// coordinates of `|analytic - numeric| / max(1, |analytic|)`.
///
/// `x` must be a `requires_grad` leaf; its values are restored on return.
/// Panics if `f` evaluates non-finite at a perturbed point, naming the
/// coordinate.
pub fn grad_check(f: impl Fn(&Tensor) -> Tensor, x: &Tensor, eps: f64) -> f64 {
    assert!(x.requires_grad(), "grad_check: x must require gradients");
    assert!((1e-7..=1e-3).contains(&eps), "grad_check: eps {eps} outside [1e-7, 1e-3]");

    x.zero_grad();
    let out = f(x);
    assert!(out.is_scalar(), "grad_check: f must be scalar-valued, got shape {:?}", out.shape());
    out.backward();
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.len()]);

    let base = x.to_vec();
    let mut worst: f64 = 0.0;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + eps;
        x.set_values(&probe);
        let hi = f(x).value();
        probe[i] = base[i] - eps;
        x.set_values(&probe);
        let lo = f(x).value();
        probe[i] = base[i];
        assert!(
            hi.is_finite() && lo.is_finite(),
            "grad_check: non-finite f(x +/- eps) at coordinate {i}"
        );
        let numeric = (hi - lo) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    x.set_values(&base);
    worst
}
