//! Small dense 3×3 helpers: linear solve, characteristic polynomial, cubic roots.

use num_complex::Complex64;

use crate::model::Matrix3;

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot is negligible relative to the matrix scale.
pub fn solve3(a: &Matrix3, b: &[f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut m = [[0.0; 4]; 3];
    for r in 0..3 {
        m[r][..3].copy_from_slice(&a[r]);
        m[r][3] = b[r];
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        if m[pivot][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, pivot);
        for r in col + 1..3 {
            let factor = m[r][col] / m[col][col];
            for c in col..4 {
                m[r][c] -= factor * m[col][c];
            }
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut acc = m[r][3];
        for c in r + 1..3 {
            acc -= m[r][c] * x[c];
        }
        x[r] = acc / m[r][r];
    }
    Some(x)
}

/// Coefficients `[c2, c1, c0]` of det(λI − J) = λ³ + c2λ² + c1λ + c0.
pub fn characteristic_polynomial(j: &Matrix3) -> [f64; 3] {
    let trace = j[0][0] + j[1][1] + j[2][2];
    let minors = j[0][0] * j[1][1] - j[0][1] * j[1][0] + j[0][0] * j[2][2] - j[0][2] * j[2][0]
        + j[1][1] * j[2][2]
        - j[1][2] * j[2][1];
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    [-trace, minors, -det]
}

fn eval_cubic(c: &[f64; 3], z: Complex64) -> (Complex64, Complex64) {
    let p = ((z + c[0]) * z + c[1]) * z + c[2];
    let dp = (3.0 * z + 2.0 * c[0]) * z + c[1];
    (p, dp)
}

/// |p(λ)| divided by Σ|c_k||λ|^k (leading coefficient 1).
pub fn cubic_relative_residual(c: &[f64; 3], z: Complex64) -> f64 {
    let a = z.norm();
    let scale = a * a * a + c[0].abs() * a * a + c[1].abs() * a + c[2].abs();
    let (p, _) = eval_cubic(c, z);
    if scale == 0.0 {
        p.norm()
    } else {
        p.norm() / scale
    }
}

/// A few Newton steps, kept only while they reduce the residual.
fn polish(c: &[f64; 3], mut z: Complex64) -> Complex64 {
    let mut best = cubic_relative_residual(c, z);
    for _ in 0..8 {
        let (p, dp) = eval_cubic(c, z);
        if dp.norm() == 0.0 || best == 0.0 {
            break;
        }
        let next = z - p / dp;
        let r = cubic_relative_residual(c, next);
        if !(r < best) {
            break;
        }
        z = next;
        best = r;
    }
    z
}

/// Roots of λ³ + c2λ² + c1λ + c0 through the depressed cubic: Cardano's
/// formula when there is one real root, the trigonometric form when there
/// are three; all roots are Newton-polished on the original polynomial.
pub fn cubic_roots(c: &[f64; 3]) -> [Complex64; 3] {
    let [a, b, c0] = *c;
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c0;
    let half_q = q / 2.0;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;

    if disc >= 0.0 {
        // One real root; sign choice avoids cancellation.
        let big = -(half_q.signum()) * (half_q.abs() + disc.sqrt()).cbrt();
        let t = if big != 0.0 { big - third_p / big } else { 0.0 };
        let real = polish(c, Complex64::new(t - shift, 0.0)).re;
        // Deflate: λ³ + aλ² + bλ + c0 = (λ − r)(λ² + d1λ + d0).
        let d1 = a + real;
        let d0 = b + real * d1;
        let [q1, q2] = quadratic_roots(d1, d0);
        let mut roots = [Complex64::new(real, 0.0), polish(c, q1), polish(c, q2)];
        // Keep a conjugate pair exactly conjugate.
        if roots[1].im != 0.0 && roots[2].im != 0.0 && roots[1].im.signum() != roots[2].im.signum()
        {
            let re = 0.5 * (roots[1].re + roots[2].re);
            let im = 0.5 * (roots[1].im.abs() + roots[2].im.abs());
            roots[1] = Complex64::new(re, im);
            roots[2] = Complex64::new(re, -im);
        }
        roots
    } else {
        let r = 2.0 * (-third_p).sqrt();
        let arg = (half_q / third_p) / (-third_p).sqrt();
        let theta = arg.clamp(-1.0, 1.0).acos() / 3.0;
        let tau = 2.0 * std::f64::consts::PI / 3.0;
        [0.0, 1.0, 2.0].map(|k| {
            let t = r * (theta - k * tau).cos();
            Complex64::new(polish(c, Complex64::new(t - shift, 0.0)).re, 0.0)
        })
    }
}

/// Roots of λ² + d1λ + d0.
fn quadratic_roots(d1: f64, d0: f64) -> [Complex64; 2] {
    let disc = d1 * d1 / 4.0 - d0;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let big = -d1 / 2.0 - d1.signum() * s;
        let small = if big != 0.0 { d0 / big } else { 0.0 };
        [Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [
            Complex64::new(-d1 / 2.0, im),
            Complex64::new(-d1 / 2.0, -im),
        ]
    }
}
