//! Central finite differences, used as an independent oracle for every
//! analytic gradient in the crate.

use crate::linalg::Matrix;

/// Entries whose magnitudes are both below this are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// `(f(θ + h·eᵢ) − f(θ − h·eᵢ)) / 2h` for every entry `i`.
pub fn central_difference(theta: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = theta.clone();
    let mut out = theta.map(|_| 0.0);
    for i in 0..theta.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `max |a − b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

pub fn max_abs_error(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_derivative() {
        let x = Matrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let g = central_difference(&x, 1e-5, |t| t.as_slice().iter().map(|v| v * v * v).sum());
        assert!((g.as_slice()[0] - 0.75).abs() < 1e-9);
        assert!((g.as_slice()[1] - 12.0).abs() < 1e-8);
        assert_eq!(x.as_slice(), &[0.5, -2.0]);
    }

    #[test]
    fn relative_error_uses_floor() {
        let a = Matrix::from_rows(&[vec![1e-9, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0, 2.0 + 2e-6]]).unwrap();
        let e = max_relative_error(&a, &b);
        // 1e-9 / floor dominates the 1e-6 relative error of the second entry
        assert!((e - 1e-5).abs() < 1e-12, "{e}");
    }
}
