//! Rotation encodings: 3x3 matrices, the continuous 6D representation
//! (first two matrix columns) and unit quaternions for geodesic blending.

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-6;
const DEGENERATE_TOL: f64 = 1e-6;

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_columns(c0: [f64; 3], c1: [f64; 3], c2: [f64; 3]) -> Self {
        Mat3([
            [c0[0], c1[0], c2[0]],
            [c0[1], c1[1], c2[1]],
            [c0[2], c1[2], c2[2]],
        ])
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul(&self, other: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest absolute entry of `R^T R - I`.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.transpose().mul(self);
        let mut worst = 0.0_f64;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr.0[i][j] - target).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Mat3) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.0[i][j] - other.0[i][j]).abs());
            }
        }
        worst
    }

    /// Rotation by `angle` radians about the z axis.
    pub fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Mat3 {
        Quat::from_axis_angle(axis, angle).to_matrix()
    }
}

/// Encodes a rotation matrix as its first two columns, `[c0; c1]`.
pub fn rotmatrix_to_6d(r: &Mat3) -> Result<[f64; 6]> {
    let ortho = r.orthonormality_error();
    let det = r.determinant();
    if !ortho.is_finite() || ortho > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::InvalidRotation(format!(
            "orthonormality error {ortho:.3e}, determinant {det:.6}"
        )));
    }
    let c0 = r.column(0);
    let c1 = r.column(1);
    Ok([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]])
}

/// Recovers a rotation matrix from a 6D vector by Gram-Schmidt.
pub fn sixd_to_rotmatrix(v: &[f64; 6]) -> Result<Mat3> {
    let a = [v[0], v[1], v[2]];
    let b = [v[3], v[4], v[5]];
    let na = norm(a);
    if !na.is_finite() || na < DEGENERATE_TOL {
        return Err(Error::Degenerate6d(format!("first column norm {na:.3e}")));
    }
    let e0 = scale(a, 1.0 / na);
    let proj = dot(e0, b);
    let resid = [b[0] - proj * e0[0], b[1] - proj * e0[1], b[2] - proj * e0[2]];
    let nr = norm(resid);
    if !nr.is_finite() || nr < DEGENERATE_TOL {
        return Err(Error::Degenerate6d(format!(
            "second column residual norm {nr:.3e}"
        )));
    }
    let e1 = scale(resid, 1.0 / nr);
    let e2 = cross(e0, e1);
    Ok(Mat3::from_columns(e0, e1, e2))
}

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quat {
        let n = norm(axis);
        let (s, c) = (0.5 * angle).sin_cos();
        let k = if n > 0.0 { s / n } else { 0.0 };
        Quat {
            w: c,
            x: axis[0] * k,
            y: axis[1] * k,
            z: axis[2] * k,
        }
        .canonical()
    }

    /// Shepperd's method; the result is canonicalized to `w >= 0`.
    pub fn from_matrix(r: &Mat3) -> Quat {
        let m = &r.0;
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat {
                w: 0.25 * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat {
                w: (m[2][1] - m[1][2]) / s,
                x: 0.25 * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: 0.25 * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: 0.25 * s,
            }
        };
        q.normalized().canonical()
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Quat { w, x, y, z } = *self;
        Mat3([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn neg(&self) -> Quat {
        Quat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn normalized(&self) -> Quat {
        let n = self.dot(self).sqrt();
        Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    /// Sign convention: non-negative scalar part.
    pub fn canonical(&self) -> Quat {
        if self.w < 0.0 {
            self.neg()
        } else {
            *self
        }
    }

    pub fn mul(&self, o: &Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    /// Shortest-arc spherical interpolation. `u` may leave `[0, 1]`, in which
    /// case the geodesic is extrapolated. Endpoints are returned exactly.
    pub fn slerp(&self, other: &Quat, u: f64) -> Quat {
        if u == 0.0 {
            return *self;
        }
        let mut b = *other;
        let mut cos = self.dot(&b);
        if cos < 0.0 {
            b = b.neg();
            cos = -cos;
        }
        if u == 1.0 {
            return b;
        }
        let cos = cos.min(1.0);
        let theta = cos.acos();
        if theta < 1e-12 {
            return Quat {
                w: self.w + u * (b.w - self.w),
                x: self.x + u * (b.x - self.x),
                y: self.y + u * (b.y - self.y),
                z: self.z + u * (b.z - self.z),
            }
            .normalized();
        }
        let sin = theta.sin();
        let ka = ((1.0 - u) * theta).sin() / sin;
        let kb = (u * theta).sin() / sin;
        Quat {
            w: ka * self.w + kb * b.w,
            x: ka * self.x + kb * b.x,
            y: ka * self.y + kb * b.y,
            z: ka * self.z + kb * b.z,
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
