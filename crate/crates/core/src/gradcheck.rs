//! Central-difference gradient checking.
//!
//! Compares an analytic gradient against `(f(x+h) - f(x-h)) / 2h` per
//! coordinate and reports the worst relative discrepancy. Layers in this
//! crate are expected to pass at a relative error below 1e-4 with h = 1e-5
//! in 64-bit precision.

/// Returns `max_i |num_i - ana_i| / max(1e-8, |ana_i| + |num_i|)`.
pub fn grad_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> f64 {
    assert_eq!(
        point.len(),
        analytic.len(),
        "gradient length must match point length"
    );
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x);
        x[i] = orig - h;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max((numeric - analytic[i]).abs() / denom);
    }
    worst
}
