//! SO(3) machinery for the three-stage picture of chirp excitation.
//!
//! Generators follow the right-handed convention `Ω_n v = n × v`, so
//! `exp(θ Ω_x)` carries `+z` towards `-y` and `exp(θ Ω_y)` carries `+z`
//! towards `+x`. Rotations are explicit 3×3 matrices.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Tolerance on `‖axis‖ = 1` accepted by [`axis_rotation`].
pub const UNIT_AXIS_TOL: f64 = 1e-9;

/// Coordinate axis selector for the rotation generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> MagVector {
        match self {
            Axis::X => MagVector::X,
            Axis::Y => MagVector::Y,
            Axis::Z => MagVector::Z,
        }
    }
}

/// Magnetization vector `(Mx, My, Mz)`, dimensionless.
///
/// Physical states have unit norm; the type itself also serves as a plain
/// 3-vector (field directions, rotation axes) so norm is not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MagVector {
    pub mx: f64,
    pub my: f64,
    pub mz: f64,
}

impl MagVector {
    pub const X: MagVector = MagVector::new(1.0, 0.0, 0.0);
    pub const Y: MagVector = MagVector::new(0.0, 1.0, 0.0);
    pub const Z: MagVector = MagVector::new(0.0, 0.0, 1.0);

    pub const fn new(mx: f64, my: f64, mz: f64) -> Self {
        Self { mx, my, mz }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.mx * other.mx + self.my * other.my + self.mz * other.mz
    }

    pub fn cross(self, other: Self) -> Self {
        Self::new(
            self.my * other.mz - self.mz * other.my,
            self.mz * other.mx - self.mx * other.mz,
            self.mx * other.my - self.my * other.mx,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.mx * k, self.my * k, self.mz * k)
    }

    /// `√(Mx² + My²)`.
    pub fn transverse(self) -> f64 {
        self.mx.hypot(self.my)
    }

    /// Transverse phase `atan2(My, Mx)` in radians.
    pub fn transverse_phase(self) -> f64 {
        self.my.atan2(self.mx)
    }

    /// Angle to `other` in radians, robust near 0 and π.
    pub fn angle_to(self, other: Self) -> f64 {
        self.cross(other).norm().atan2(self.dot(other))
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.mx, self.my, self.mz]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn max_abs_diff(self, other: Self) -> f64 {
        (self.mx - other.mx)
            .abs()
            .max((self.my - other.my).abs())
            .max((self.mz - other.mz).abs())
    }
}

impl Add for MagVector {
    type Output = MagVector;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.mx + rhs.mx, self.my + rhs.my, self.mz + rhs.mz)
    }
}

impl Sub for MagVector {
    type Output = MagVector;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.mx - rhs.mx, self.my - rhs.my, self.mz - rhs.mz)
    }
}

impl Neg for MagVector {
    type Output = MagVector;
    fn neg(self) -> Self {
        Self::new(-self.mx, -self.my, -self.mz)
    }
}

impl fmt::Display for MagVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.mx, self.my, self.mz)
    }
}

pub type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn mat_vec(m: &Mat3, v: MagVector) -> MagVector {
    let v = v.to_array();
    let row = |r: &[f64; 3]| r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
    MagVector::new(row(&m[0]), row(&m[1]), row(&m[2]))
}

/// Skew-symmetric generator of rotations, an element of so(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Generator(pub Mat3);

impl Generator {
    /// Generator of rotations about `axis` (not necessarily unit): the
    /// cross-product matrix `[axis]×`.
    pub fn hat(axis: MagVector) -> Self {
        let MagVector { mx: x, my: y, mz: z } = axis;
        Generator([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn apply(&self, v: MagVector) -> MagVector {
        mat_vec(&self.0, v)
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut m = self.0;
        m.iter_mut().flatten().for_each(|c| *c *= k);
        Generator(m)
    }
}

/// The displayed generator `Ω_x`, `Ω_y` or `Ω_z`.
pub fn generator(axis: Axis) -> Generator {
    match axis {
        Axis::X => Generator([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
        Axis::Y => Generator([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
        Axis::Z => Generator([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
    }
}

/// Proper orthogonal 3×3 matrix acting on [`MagVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Mat3);

impl Rotation3 {
    pub const IDENTITY: Rotation3 = Rotation3(IDENTITY);

    /// Wraps a matrix without checking orthogonality; see [`Rotation3::is_proper`].
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation3(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn apply(&self, v: MagVector) -> MagVector {
        mat_vec(&self.0, v)
    }

    /// `self · rhs`: `rhs` acts first.
    pub fn compose(&self, rhs: &Rotation3) -> Rotation3 {
        Rotation3(mat_mul(&self.0, &rhs.0))
    }

    pub fn transpose(&self) -> Rotation3 {
        let m = &self.0;
        Rotation3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entrywise deviation of `RᵀR` from the identity.
    pub fn orthogonality_error(&self) -> f64 {
        let rtr = mat_mul(&self.transpose().0, &self.0);
        rtr.iter()
            .flatten()
            .zip(IDENTITY.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        self.orthogonality_error() <= tol && (self.determinant() - 1.0).abs() <= tol
    }

    pub fn max_abs_diff(&self, other: &Rotation3) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, rhs: Rotation3) -> Rotation3 {
        self.compose(&rhs)
    }
}

impl Mul<MagVector> for Rotation3 {
    type Output = MagVector;
    fn mul(self, rhs: MagVector) -> MagVector {
        self.apply(rhs)
    }
}

/// Rotates `v` by `angle` about the unit vector `axis` (Rodrigues).
///
/// This is the hot path of the propagator; no validation is done here.
#[inline]
pub fn rotate_about(v: MagVector, axis: MagVector, angle: f64) -> MagVector {
    let (s, c) = angle.sin_cos();
    let along = axis.dot(v) * (1.0 - c);
    let w = axis.cross(v);
    MagVector::new(
        v.mx * c + w.mx * s + axis.mx * along,
        v.my * c + w.my * s + axis.my * along,
        v.mz * c + w.mz * s + axis.mz * along,
    )
}

/// `exp(angle · Ω_axis)` via the Rodrigues formula.
pub fn axis_rotation(axis: MagVector, angle: f64) -> Result<Rotation3> {
    let n = axis.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_AXIS_TOL {
        return Err(Error::Precondition(format!(
            "rotation axis must be unit length, got norm {n}"
        )));
    }
    if !angle.is_finite() {
        return Err(Error::Precondition(format!("rotation angle must be finite, got {angle}")));
    }
    let k = Generator::hat(axis).0;
    let k2 = mat_mul(&k, &k);
    let (s, c) = angle.sin_cos();
    let mut m = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
        }
    }
    Ok(Rotation3(m))
}

/// Rotation about a coordinate axis; cannot fail.
pub fn coordinate_rotation(axis: Axis, angle: f64) -> Rotation3 {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Rotation3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]),
        Axis::Y => Rotation3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]),
        Axis::Z => Rotation3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]),
    }
}

/// Stage II angle `α` solving `tan²θ₀ = cos α`.
///
/// Valid for `θ₀ ∈ (0, π/4]`; beyond π/4 there is no real solution.
pub fn solve_alpha(theta0: f64) -> Result<f64> {
    if !(theta0 > 0.0) {
        return Err(Error::Domain(format!("theta0 must be positive, got {theta0}")));
    }
    let mut t2 = theta0.tan().powi(2);
    if (t2 - 1.0).abs() < 1e-12 {
        t2 = 1.0;
    }
    if theta0 > std::f64::consts::FRAC_PI_2 || t2 > 1.0 {
        return Err(Error::Domain(format!(
            "no real stage II angle for theta0 = {theta0} (tan^2 theta0 = {t2} > 1)"
        )));
    }
    Ok(t2.acos())
}

/// Inverse of [`solve_alpha`]: the `θ₀ ∈ (0, π/4]` with `tan²θ₀ = cos α`.
pub fn theta0_for_alpha(alpha: f64) -> f64 {
    alpha.cos().max(0.0).sqrt().atan()
}

/// `θ₀` for a given `cot²θ₀`, the parametrization used when quoting presets.
pub fn theta0_from_cot_squared(cot2: f64) -> f64 {
    (1.0 / cot2.sqrt()).atan()
}

/// Stages I and II only: `exp(α Ω_x) · exp(θ₀ Ω_y)`.
pub fn stages_one_two(theta0: f64, alpha: f64) -> Rotation3 {
    coordinate_rotation(Axis::X, alpha) * coordinate_rotation(Axis::Y, theta0)
}

/// `exp(θ₀ Ω_y) · exp(α Ω_x) · exp(θ₀ Ω_y)`, rightmost factor applied first.
pub fn three_stage_propagator(theta0: f64, alpha: f64) -> Rotation3 {
    coordinate_rotation(Axis::Y, theta0) * stages_one_two(theta0, alpha)
}
