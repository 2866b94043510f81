//! Exact optimization of quadratics over small axis-aligned boxes.
//!
//! Every extremum of a quadratic on a box is a stationary point of its
//! restriction to some face. Faces are enumerated by fixing each coordinate
//! to its lower bound, its upper bound, or leaving it free (3^D faces); the
//! restricted stationarity condition is a small linear system.

use crate::error::{Error, Result};

/// Largest dimension handled by face enumeration.
pub const MAX_BOX_DIM: usize = 3;

/// Relative pivot size below which a face system is treated as singular.
const PIVOT_TOL: f64 = 1e-13;

/// Solves `a x = b` (row-major `n x n`) by Gaussian elimination with partial pivoting.
/// Returns `None` if the system is numerically singular.
fn solve_small(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[piv * n + col].abs() <= PIVOT_TOL * scale {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Some(x)
}

/// All vertices of the box plus every in-face stationary point of
/// `u -> g^T u + u^T H u / 2` (`h` row-major, symmetric).
pub fn box_critical_points(g: &[f64], h: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<Vec<f64>>> {
    let d = g.len();
    if d > MAX_BOX_DIM {
        return Err(Error::UnsupportedDimension {
            dim: d,
            max: MAX_BOX_DIM,
        });
    }
    let faces = 3usize.pow(d as u32);
    let mut out = Vec::with_capacity(faces);
    // state per axis: 0 = lower, 1 = upper, 2 = free
    for face in 0..faces {
        let mut state = [0u8; MAX_BOX_DIM];
        let mut f = face;
        for s in state.iter_mut().take(d) {
            *s = (f % 3) as u8;
            f /= 3;
        }
        let mut u = vec![0.0; d];
        let mut free = Vec::with_capacity(d);
        for i in 0..d {
            match state[i] {
                0 => u[i] = lo[i],
                1 => u[i] = hi[i],
                _ => free.push(i),
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let mut a = vec![0.0; k * k];
            let mut b = vec![0.0; k];
            for (r, &i) in free.iter().enumerate() {
                for (c, &j) in free.iter().enumerate() {
                    a[r * k + c] = h[i * d + j];
                }
                let fixed: f64 = (0..d)
                    .filter(|j| state[*j] != 2)
                    .map(|j| h[i * d + j] * u[j])
                    .sum();
                b[r] = -(g[i] + fixed);
            }
            let Some(sol) = solve_small(a, b, k) else {
                continue;
            };
            let inside = free.iter().zip(&sol).all(|(&i, &s)| {
                let slack = 1e-12 * (hi[i] - lo[i]).abs().max(f64::MIN_POSITIVE);
                s >= lo[i] - slack && s <= hi[i] + slack
            });
            if !inside {
                continue;
            }
            for (&i, &s) in free.iter().zip(&sol) {
                u[i] = s.clamp(lo[i], hi[i]);
            }
        }
        out.push(u);
    }
    Ok(out)
}

fn quad(c: f64, g: &[f64], h: &[f64], u: &[f64]) -> f64 {
    let d = g.len();
    let mut v = c;
    for i in 0..d {
        v += g[i] * u[i];
        for j in 0..d {
            v += 0.5 * u[i] * h[i * d + j] * u[j];
        }
    }
    v
}

/// Exact `max_{u in [lo, hi]} |c + g^T u + u^T H u / 2|` for `D <= 3`.
pub fn max_abs_quadratic_on_box(c: f64, g: &[f64], h: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    Ok(box_critical_points(g, h, lo, hi)?
        .iter()
        .map(|u| quad(c, g, h, u).abs())
        .fold(0.0, f64::max))
}

/// Exact `min_{u in [lo, hi]} |g + H u|_2` for `D <= 3` (`h` row-major, need not be symmetric).
pub fn min_affine_norm_on_box(g: &[f64], h: &[f64], lo: &[f64], hi: &[f64]) -> Result<f64> {
    let d = g.len();
    // |g + H u|^2 / 2 = |g|^2 / 2 + (H^T g)^T u + u^T (H^T H) u / 2
    let mut b = vec![0.0; d];
    let mut q = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            b[i] += h[k * d + i] * g[k];
            for j in 0..d {
                q[i * d + j] += h[k * d + i] * h[k * d + j];
            }
        }
    }
    let norm = |u: &[f64]| {
        (0..d)
            .map(|k| {
                let v = g[k] + (0..d).map(|j| h[k * d + j] * u[j]).sum::<f64>();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    };
    Ok(box_critical_points(&b, &q, lo, hi)?
        .iter()
        .map(|u| norm(u))
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_on_unit_interval() {
        // p(u) = u^2 = 0 + 0 u + 2 u^2 / 2
        let v = max_abs_quadratic_on_box(0.0, &[0.0], &[2.0], &[0.0], &[1.0]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn interior_maximum() {
        // -(u - 0.5)^2 + 1 = 0.75 + u - u^2
        let v = max_abs_quadratic_on_box(0.75, &[1.0], &[-2.0], &[0.0], &[1.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_limit() {
        let g = [0.0; 4];
        let h = [0.0; 16];
        assert!(matches!(
            max_abs_quadratic_on_box(0.0, &g, &h, &[0.0; 4], &[1.0; 4]),
            Err(Error::UnsupportedDimension { dim: 4, .. })
        ));
    }

    #[test]
    fn singular_face_falls_back_to_subfaces() {
        // H = 0 in 2D: pure affine function, extremes at vertices
        let v = max_abs_quadratic_on_box(1.0, &[2.0, -3.0], &[0.0; 4], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v, 3.0);
        // rank-one H with a valley along (1, -1)
        let v = max_abs_quadratic_on_box(0.0, &[0.0, 0.0], &[1.0, 1.0, 1.0, 1.0], &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
    }

    #[test]
    fn affine_norm_minimum() {
        // g + H u with H = I: minimum distance from -g to box
        let g = [-0.5, 3.0];
        let h = [1.0, 0.0, 0.0, 1.0];
        let v = min_affine_norm_on_box(&g, &h, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-14);
        // H = 0 reduces to |g|
        let v = min_affine_norm_on_box(&[3.0, 4.0], &[0.0; 4], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(v, 5.0);
    }
}
