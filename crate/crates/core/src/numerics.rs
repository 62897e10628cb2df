//! Small numerical helpers shared across modules.

/// `∫ y dx` over sorted abscissae using piecewise quadratic interpolation
/// (Simpson's rule generalized to uneven spacing). Pairs of gaps differing
/// by more than a factor of two would get negative weights, so the first gap
/// of such a pair is integrated by the trapezoid rule instead.
pub fn integrate_samples(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let trapezoid = |i: usize| 0.5 * (x[i + 1] - x[i]) * (y[i] + y[i + 1]);
    let even = |i: usize| {
        let r = (x[i + 2] - x[i + 1]) / (x[i + 1] - x[i]);
        (0.5..=2.0).contains(&r)
    };
    let mut total = 0.0;
    let mut i = 0;
    while i + 2 < n {
        if even(i) {
            total += quadratic_piece(&x[i..i + 3], &y[i..i + 3], x[i], x[i + 2]);
            i += 2;
        } else {
            total += trapezoid(i);
            i += 1;
        }
    }
    if i + 1 < n {
        // One interval left over: the last parabola if its gaps are even.
        total += if n >= 3 && even(n - 3) {
            quadratic_piece(&x[n - 3..], &y[n - 3..], x[n - 2], x[n - 1])
        } else {
            trapezoid(n - 2)
        };
    }
    total
}

/// Integral over `[a, b]` of the parabola through three points.
fn quadratic_piece(x: &[f64], y: &[f64], a: f64, b: f64) -> f64 {
    let (x0, x1, x2) = (x[0], x[1], x[2]);
    let l0 = |t: f64| basis_integral(t, x1, x2) / ((x0 - x1) * (x0 - x2));
    let l1 = |t: f64| basis_integral(t, x0, x2) / ((x1 - x0) * (x1 - x2));
    let l2 = |t: f64| basis_integral(t, x0, x1) / ((x2 - x0) * (x2 - x1));
    y[0] * (l0(b) - l0(a)) + y[1] * (l1(b) - l1(a)) + y[2] * (l2(b) - l2(a))
}

/// Antiderivative of `(t - p)(t - q)`.
fn basis_integral(t: f64, p: f64, q: f64) -> f64 {
    t * t * t / 3.0 - (p + q) * t * t / 2.0 + p * q * t
}

/// `log Σ exp(v_i) w_i` computed stably; `w_i ≥ 0`.
pub fn log_sum_exp_weighted(values: &[f64], weights: &[f64]) -> f64 {
    let max = values
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * (v - max).exp())
        .sum();
    max + s.ln()
}

/// Geometric sequence `start, start·ratio, …` with `count` terms.
pub fn geometric(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| start * ratio.powi(j as i32)).collect()
}
