use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::domain("CameraIntrinsics", format!("{self:?}")))
        }
    }

    /// Centered camera with horizontal field of view set by `fx = fy = focal`.
    pub fn centered(width: usize, height: usize, focal: f64) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Pose from an axis-angle rotation (radians) and a translation (meters).
    pub fn from_params(axis_angle: [f64; 3], translation: [f64; 3]) -> Self {
        Self {
            rotation: rotation_from_axis_angle(axis_angle),
            translation: Vector3::from(translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::Format(format!("pose needs 16 values, got {}", v.len())));
        }
        let rotation = Matrix3::from_fn(|r, c| v[r * 4 + c]);
        let translation = Vector3::new(v[3], v[7], v[11]);
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Orthonormality and handedness residuals: (‖RᵀR − I‖∞, |det R − 1|).
    pub fn rotation_residuals(&self) -> (f64, f64) {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        (e.amax(), (self.rotation.determinant() - 1.0).abs())
    }
}

/// Coefficients `A = sin θ/θ`, `B = (1 − cos θ)/θ²` of the Rodrigues formula
/// and their derivatives with respect to `s = θ²`.
pub(crate) fn rodrigues_coefficients(s: f64) -> (f64, f64, f64, f64) {
    if s < 1e-2 {
        // Truncated power series in s; the closed form cancels badly here.
        let (mut a, mut b, mut da, mut db) = (0.0, 0.0, 0.0, 0.0);
        let mut fact = 1.0; // (2k+1)!
        let mut pow = 1.0; // (-s)^k
        let mut prev = 0.0; // (-s)^(k-1)
        for k in 0..6 {
            let kf = k as f64;
            if k > 0 {
                fact *= (2.0 * kf) * (2.0 * kf + 1.0);
            }
            a += pow / fact;
            b += pow / (fact * (2.0 * kf + 2.0));
            if k > 0 {
                // d/ds (-s)^k = -k (-s)^(k-1)
                let dpow = -kf * prev;
                da += dpow / fact;
                db += dpow / (fact * (2.0 * kf + 2.0));
            }
            prev = pow;
            pow *= -s;
        }
        (a, b, da, db)
    } else {
        let t = s.sqrt();
        let (sin, cos) = t.sin_cos();
        let a = sin / t;
        let b = (1.0 - cos) / s;
        let da = (t * cos - sin) / (2.0 * s * t);
        let db = (t * sin - 2.0 * (1.0 - cos)) / (2.0 * s * s);
        (a, b, da, db)
    }
}

pub(crate) fn skew(w: [f64; 3]) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Rodrigues exponential `R = I + A [w]× + B [w]×²`.
pub fn rotation_from_axis_angle(w: [f64; 3]) -> Matrix3<f64> {
    let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b, _, _) = rodrigues_coefficients(s);
    let k = skew(w);
    Matrix3::identity() + k * a + (k * k) * b
}
