//! Small dense 3x3 matrix arithmetic for pose covariances and information
//! matrices. Row-major, f64.

use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const fn zeros() -> Self {
        Mat3 { m: [[0.0; 3]; 3] }
    }

    pub const fn identity() -> Self {
        let mut m = [[0.0; 3]; 3];
        m[0][0] = 1.0;
        m[1][1] = 1.0;
        m[2][2] = 1.0;
        Mat3 { m }
    }

    pub fn diag(d0: f64, d1: f64, d2: f64) -> Self {
        let mut m = [[0.0; 3]; 3];
        m[0][0] = d0;
        m[1][1] = d1;
        m[2][2] = d2;
        Mat3 { m }
    }

    /// Build from the upper triangle `(c00, c01, c02, c11, c12, c22)`.
    pub fn from_upper_triangle(u: &[f64; 6]) -> Self {
        Mat3 {
            m: [
                [u[0], u[1], u[2]],
                [u[1], u[3], u[4]],
                [u[2], u[4], u[5]],
            ],
        }
    }

    pub fn upper_triangle(&self) -> [f64; 6] {
        [
            self.m[0][0],
            self.m[0][1],
            self.m[0][2],
            self.m[1][1],
            self.m[1][2],
            self.m[2][2],
        ]
    }

    pub fn transpose(&self) -> Mat3 {
        let mut t = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                t.m[c][r] = self.m[r][c];
            }
        }
        t
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.m[r][k] * other.m[k][c];
                }
                out.m[r][c] = acc;
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for r in 0..3 {
            out[r] = self.m[r][0] * v[0] + self.m[r][1] * v[1] + self.m[r][2] * v[2];
        }
        out
    }

    pub fn add(&self, other: &Mat3) -> Mat3 {
        let mut out = *self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] += other.m[r][c];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] *= s;
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.m[0][1] - self.m[1][0]).abs() <= tol
            && (self.m[0][2] - self.m[2][0]).abs() <= tol
            && (self.m[1][2] - self.m[2][1]).abs() <= tol
    }

    fn char_poly_coeffs(&self) -> (f64, f64, f64) {
        // For symmetric M: trace, sum of principal 2x2 minors, determinant.
        let m = &self.m;
        let tr = m[0][0] + m[1][1] + m[2][2];
        let minors = m[0][0] * m[1][1] - m[0][1] * m[1][0]
            + m[0][0] * m[2][2]
            - m[0][2] * m[2][0]
            + m[1][1] * m[2][2]
            - m[1][2] * m[2][1];
        (tr, minors, self.det())
    }

    /// Positive semi-definiteness test for symmetric matrices: all
    /// characteristic polynomial coefficients non-negative.
    pub fn is_spsd(&self, tol: f64) -> bool {
        if !self.is_symmetric(tol) {
            return false;
        }
        let (tr, minors, det) = self.char_poly_coeffs();
        tr >= -tol && minors >= -tol && det >= -tol
    }

    /// Strict positive definiteness via leading principal minors.
    pub fn is_spd(&self, tol: f64) -> bool {
        if !self.is_symmetric(tol) {
            return false;
        }
        let m = &self.m;
        let d1 = m[0][0];
        let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let d3 = self.det();
        d1 > tol && d2 > tol && d3 > tol
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Mat3> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let m = &self.m;
        let inv_det = 1.0 / d;
        let mut out = Mat3::zeros();
        out.m[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        out.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        out.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        out.m[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        out.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        out.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        out.m[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        out.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        out.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        Some(out)
    }

    /// Lower Cholesky factor `L` with `L L^T = self`. None if not SPD.
    pub fn cholesky(&self) -> Option<Mat3> {
        let mut l = Mat3::zeros();
        for j in 0..3 {
            let mut diag = self.m[j][j];
            for k in 0..j {
                diag -= l.m[j][k] * l.m[j][k];
            }
            if diag <= 0.0 || !diag.is_finite() {
                return None;
            }
            l.m[j][j] = libm::sqrt(diag);
            for i in (j + 1)..3 {
                let mut v = self.m[i][j];
                for k in 0..j {
                    v -= l.m[i][k] * l.m[j][k];
                }
                l.m[i][j] = v / l.m[j][j];
            }
        }
        Some(l)
    }

    /// `L^T v` for a lower-triangular `self`; whitens a residual when `self`
    /// is the Cholesky factor of an information matrix.
    pub fn lt_mul_vec(&self, v: &[f64; 3]) -> [f64; 3] {
        [
            self.m[0][0] * v[0] + self.m[1][0] * v[1] + self.m[2][0] * v[2],
            self.m[1][1] * v[1] + self.m[2][1] * v[2],
            self.m[2][2] * v[2],
        ]
    }
}

impl fmt::Display for Mat3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..3 {
            writeln!(f, "[{} {} {}]", self.m[r][0], self.m[r][1], self.m[r][2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_recovers_identity() {
        let a = Mat3 {
            m: [[4.0, 1.0, 0.2], [1.0, 3.0, -0.5], [0.2, -0.5, 2.0]],
        };
        let inv = a.inverse().unwrap();
        let prod = a.mul(&inv);
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert!((prod.m[r][c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Mat3 {
            m: [[4.0, 1.0, 0.2], [1.0, 3.0, -0.5], [0.2, -0.5, 2.0]],
        };
        let l = a.cholesky().unwrap();
        let back = l.mul(&l.transpose());
        for r in 0..3 {
            for c in 0..3 {
                assert!((back.m[r][c] - a.m[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spd_and_spsd_checks() {
        let spd = Mat3::diag(1.0, 2.0, 3.0);
        assert!(spd.is_spd(1e-12));
        assert!(spd.is_spsd(1e-12));

        let singular = Mat3::diag(1.0, 0.0, 3.0);
        assert!(!singular.is_spd(1e-12));
        assert!(singular.is_spsd(1e-12));

        let indefinite = Mat3::diag(1.0, -0.1, 3.0);
        assert!(!indefinite.is_spsd(1e-12));

        let asym = Mat3 {
            m: [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        };
        assert!(!asym.is_spsd(1e-12));
    }

    #[test]
    fn whitening_matches_quadratic_form() {
        let info = Mat3 {
            m: [[4.0, 1.0, 0.2], [1.0, 3.0, -0.5], [0.2, -0.5, 2.0]],
        };
        let l = info.cholesky().unwrap();
        let e = [0.3, -1.1, 0.7];
        let w = l.lt_mul_vec(&e);
        let quad_w = w.iter().map(|v| v * v).sum::<f64>();
        let ie = info.mul_vec(&e);
        let quad = e[0] * ie[0] + e[1] * ie[1] + e[2] * ie[2];
        assert!((quad_w - quad).abs() < 1e-12);
    }
}
