//! Pointwise 3x3 plasma tensor algebra: the rotation/damping matrix `M_s`,
//! its shifted inverses, the `D` matrices and `B_alpha = i alpha I + D_alpha`.

use num_complex::Complex64;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::medium::{MediumFields, MediumPoint};

pub type Vec3 = [f64; 3];

/// Singularity threshold on the determinant of a shifted matrix.
pub const SINGULAR_DET: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Matrix3<T> {
    pub m: [[T; 3]; 3],
}

pub type RMatrix3 = Matrix3<f64>;
pub type CMatrix3 = Matrix3<Complex64>;

impl<T: Scalar> Matrix3<T> {
    pub fn zero() -> Self {
        Matrix3 { m: [[T::zero(); 3]; 3] }
    }

    pub fn identity() -> Self {
        Self::diag(T::from_f64(1.0))
    }

    pub fn diag(d: T) -> Self {
        let mut a = Self::zero();
        for i in 0..3 {
            a.m[i][i] = d;
        }
        a
    }

    pub fn scale(&self, s: T) -> Self {
        let mut a = *self;
        a.m.iter_mut().flatten().for_each(|x| *x = *x * s);
        a
    }

    pub fn adjoint(&self) -> Self {
        let mut a = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] = self.m[j][i].conj();
            }
        }
        a
    }

    pub fn transpose(&self) -> Self {
        let mut a = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] = self.m[j][i];
            }
        }
        a
    }

    pub fn mul_vec(&self, v: &[T; 3]) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.m[i][0] * v[0] + self.m[i][1] * v[1] + self.m[i][2] * v[2];
        }
        out
    }

    pub fn norm_fro(&self) -> f64 {
        self.m.iter().flatten().map(|x| x.abs2()).sum::<f64>().sqrt()
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }

    /// Spectral norm: the largest eigenvalue of the Hermitian `A* A` by the
    /// trigonometric closed form for 3x3 matrices.
    pub fn op_norm(&self) -> f64 {
        let h = self.adjoint() * *self;
        let q = (h.m[0][0].re() + h.m[1][1].re() + h.m[2][2].re()) / 3.0;
        let off = h.m[0][1].abs2() + h.m[0][2].abs2() + h.m[1][2].abs2();
        let p2 = (0..3).map(|i| (h.m[i][i].re() - q).powi(2)).sum::<f64>() + 2.0 * off;
        if p2 == 0.0 {
            return q.max(0.0).sqrt();
        }
        let p = (p2 / 6.0).sqrt();
        let b = (h - Self::identity().scale(T::from_f64(q))).scale(T::from_f64(1.0 / p));
        let r = (0.5 * b.det().re()).clamp(-1.0, 1.0);
        (q + 2.0 * p * (r.acos() / 3.0).cos()).max(0.0).sqrt()
    }
}

impl RMatrix3 {
    /// Real matrix acting on a real or complex vector.
    pub fn apply<V: Scalar>(&self, v: &[V; 3]) -> [V; 3] {
        let mut out = [V::zero(); 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = v[0] * self.m[i][0] + v[1] * self.m[i][1] + v[2] * self.m[i][2];
        }
        out
    }

    pub fn to_complex(&self) -> CMatrix3 {
        let mut a = CMatrix3::zero();
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] = Complex64::new(self.m[i][j], 0.0);
            }
        }
        a
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(c: [Vec3; 3]) -> RMatrix3 {
        let mut a = RMatrix3::zero();
        for (j, col) in c.iter().enumerate() {
            for i in 0..3 {
                a.m[i][j] = col[i];
            }
        }
        a
    }
}

impl CMatrix3 {
    pub fn re(&self) -> RMatrix3 {
        let mut a = RMatrix3::zero();
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] = self.m[i][j].re;
            }
        }
        a
    }
}

impl<T: Scalar> Mul for Matrix3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut a = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        a
    }
}

impl<T: Scalar> Add for Matrix3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut a = self;
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] += o.m[i][j];
            }
        }
        a
    }
}

impl<T: Scalar> Sub for Matrix3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut a = self;
        for i in 0..3 {
            for j in 0..3 {
                a.m[i][j] -= o.m[i][j];
            }
        }
        a
    }
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StixFrame {
    pub e1: Vec3,
    pub e2: Vec3,
    pub e3: Vec3,
}

impl StixFrame {
    /// Rotation `Q = [e1 e2 e3]` taking frame coordinates to canonical ones.
    pub fn rotation(&self) -> RMatrix3 {
        RMatrix3::from_columns([self.e1, self.e2, self.e3])
    }

    /// `Q X Q^T` for a matrix `X` written in the frame.
    pub fn to_canonical(&self, x: &CMatrix3) -> CMatrix3 {
        let q = self.rotation().to_complex();
        q * *x * q.transpose()
    }
}

pub fn stix_frame(b: Vec3) -> Result<StixFrame> {
    let n = dot(b, b).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(Error::DegenerateDirection { norm: n });
    }
    let e3 = [b[0] / n, b[1] / n, b[2] / n];
    let mut k = 0;
    for i in 1..3 {
        if e3[i].abs() < e3[k].abs() {
            k = i;
        }
    }
    let mut e1 = [0.0; 3];
    e1[k] = 1.0;
    let p = e3[k];
    for i in 0..3 {
        e1[i] -= p * e3[i];
    }
    let l = dot(e1, e1).sqrt();
    e1 = [e1[0] / l, e1[1] / l, e1[2] / l];
    let e2 = cross(e3, e1);
    Ok(StixFrame { e1, e2, e3 })
}

/// `M v = omega_c (b x v) + nu v`.
pub fn assemble_m(nu: f64, omega_c: f64, b: Vec3) -> RMatrix3 {
    let mut a = RMatrix3::diag(nu);
    a.m[0][1] = -omega_c * b[2];
    a.m[0][2] = omega_c * b[1];
    a.m[1][0] = omega_c * b[2];
    a.m[1][2] = -omega_c * b[0];
    a.m[2][0] = -omega_c * b[1];
    a.m[2][1] = omega_c * b[0];
    a
}

/// `(p I + q M)^{-1}` through the frame cofactor formula. Returns the matrix
/// and the determinant `a (a^2 + w^2)` with `a = p + q nu`, `w = q omega_c`.
pub fn inv_affine(p: Complex64, q: f64, nu: f64, omega_c: f64, frame: &StixFrame) -> (CMatrix3, Complex64) {
    let a = p + q * nu;
    let w = Complex64::new(q * omega_c, 0.0);
    let a2 = a * a;
    let det = a * (a2 + w * w);
    let inv = Complex64::new(1.0, 0.0) / det;
    let z = Complex64::new(0.0, 0.0);
    let x = CMatrix3 {
        m: [
            [a2 * inv, w * a * inv, z],
            [-w * a * inv, a2 * inv, z],
            [z, z, (a2 + w * w) * inv],
        ],
    };
    (frame.to_canonical(&x), det)
}

/// `(i alpha I + M)^{-1}`.
pub fn inv_shifted_m(alpha: f64, nu: f64, omega_c: f64, b: Vec3) -> Result<CMatrix3> {
    let frame = stix_frame(b)?;
    let (x, det) = inv_affine(Complex64::new(0.0, alpha), 1.0, nu, omega_c, &frame);
    if det.norm() <= SINGULAR_DET {
        return Err(Error::SingularShift { det: det.norm() });
    }
    Ok(x)
}

/// `(I + lambda M)^{-1}`, real.
pub fn inv_resolvent_m(lambda: f64, nu: f64, omega_c: f64, b: Vec3) -> Result<RMatrix3> {
    let frame = stix_frame(b)?;
    let (x, det) = inv_affine(Complex64::new(1.0, 0.0), lambda, nu, omega_c, &frame);
    if det.norm() <= SINGULAR_DET {
        return Err(Error::SingularShift { det: det.norm() });
    }
    Ok(x.re())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shift {
    /// Resolvent regime `I + lambda M`.
    Lambda(f64),
    /// Imaginary-axis regime `i alpha I + M`.
    Alpha(f64),
}

/// Per-species inverse for the given shift.
pub fn species_inverse(shift: Shift, nu: f64, omega_c: f64, b: Vec3) -> Result<CMatrix3> {
    match shift {
        Shift::Lambda(l) => Ok(inv_resolvent_m(l, nu, omega_c, b)?.to_complex()),
        Shift::Alpha(a) => inv_shifted_m(a, nu, omega_c, b),
    }
}

/// `D = sum_s omega_ps^2 (shifted M_s)^{-1}`.
pub fn assemble_d(shift: Shift, pt: &MediumPoint) -> Result<CMatrix3> {
    let mut d = CMatrix3::zero();
    for &(wp, nu, wc) in &pt.species {
        d = d + species_inverse(shift, nu, wc, pt.b)?.scale(Complex64::new(wp * wp, 0.0));
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenTriple {
    pub lambda1: Complex64,
    pub lambda2: Complex64,
    pub lambda3: Complex64,
}

impl EigenTriple {
    pub fn as_array(&self) -> [Complex64; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    pub fn min_re(&self) -> f64 {
        self.lambda1.re.min(self.lambda2.re).min(self.lambda3.re)
    }

    pub fn max_abs(&self) -> f64 {
        self.lambda1.norm().max(self.lambda2.norm()).max(self.lambda3.norm())
    }
}

/// The frame functions `(P, Q, R)` with `B_alpha = [[P, Q, 0], [-Q, P, 0], [0, 0, R]]`
/// in the Stix frame.
pub fn pqr(alpha: f64, pt: &MediumPoint) -> Result<(Complex64, Complex64, Complex64)> {
    let ia = Complex64::new(0.0, alpha);
    let (mut p, mut q, mut r) = (ia, Complex64::new(0.0, 0.0), ia);
    for &(wp, nu, wc) in &pt.species {
        let a = ia + nu;
        let den = a * a + wc * wc;
        if (a * den).norm() <= SINGULAR_DET {
            return Err(Error::SingularShift { det: (a * den).norm() });
        }
        let w2 = wp * wp;
        p += w2 * a / den;
        q += w2 * wc / den;
        r += w2 / a;
    }
    Ok((p, q, r))
}

pub fn b_alpha(alpha: f64, pt: &MediumPoint) -> Result<(CMatrix3, EigenTriple)> {
    let d = assemble_d(Shift::Alpha(alpha), pt)?;
    let b = d + CMatrix3::diag(Complex64::new(0.0, alpha));
    let (p, q, r) = pqr(alpha, pt)?;
    let i = Complex64::new(0.0, 1.0);
    Ok((b, EigenTriple { lambda1: p + i * q, lambda2: p - i * q, lambda3: r }))
}

/// `(zeta_alpha, eta_alpha)`: minimum real part and maximum modulus of the
/// eigenvalues of `B_alpha` over all samples (the matrix is normal, so the
/// modulus bound is the operator norm).
pub fn zeta_eta(alpha: f64, m: &MediumFields) -> Result<(f64, f64)> {
    let mut zeta = f64::INFINITY;
    let mut eta: f64 = 0.0;
    for site in 0..m.len() {
        let pt = m.point(site);
        let (p, q, r) = pqr(alpha, &pt)?;
        let i = Complex64::new(0.0, 1.0);
        for l in [p + i * q, p - i * q, r] {
            zeta = zeta.min(l.re);
            eta = eta.max(l.norm());
        }
    }
    if zeta <= 0.0 || !zeta.is_finite() {
        return Err(Error::NonPositiveZeta { zeta });
    }
    Ok((zeta, eta))
}

/// Step parameter for the implicit update, small enough that `|lambda M_s| < 1`.
pub fn admissible_lambda(dt: f64, nu_star: f64, omega_c_star: f64) -> f64 {
    let s = nu_star + omega_c_star;
    if s > 0.0 {
        dt.min(0.5 / s)
    } else {
        dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt1(wp: f64, nu: f64, wc: f64, b: Vec3) -> MediumPoint {
        MediumPoint { species: vec![(wp, nu, wc)], b }
    }

    #[test]
    fn frame_for_z_axis_is_canonical() {
        let f = stix_frame([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.e1, [1.0, 0.0, 0.0]);
        assert_eq!(f.e2, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn frame_for_x_axis_is_right_handed() {
        let f = stix_frame([1.0, 0.0, 0.0]).unwrap();
        let c = cross(f.e1, f.e2);
        for i in 0..3 {
            assert!((c[i] - f.e3[i]).abs() < 1e-15);
        }
        assert!(dot(f.e1, f.e2).abs() < 1e-15);
    }

    #[test]
    fn frame_rejects_non_unit() {
        assert!(matches!(stix_frame([0.0, 0.0, 1.1]), Err(Error::DegenerateDirection { .. })));
    }

    #[test]
    fn m_in_aligned_frame() {
        let m = assemble_m(1.0, 2.0, [0.0, 0.0, 1.0]);
        assert_eq!(m.m, [[1.0, -2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(assemble_m(0.7, 0.0, [0.6, 0.8, 0.0]).m, RMatrix3::diag(0.7).m);
    }

    #[test]
    fn shifted_inverse_at_zero_is_identity() {
        let x = inv_shifted_m(0.0, 1.0, 0.0, [0.0, 0.0, 1.0]).unwrap();
        assert!((x - CMatrix3::identity()).norm_fro() < 1e-15);
    }

    #[test]
    fn singular_shift_without_collisions() {
        assert!(matches!(inv_shifted_m(2.0, 0.0, 2.0, [0.0, 0.0, 1.0]), Err(Error::SingularShift { .. })));
        assert!(matches!(inv_shifted_m(0.0, 0.0, 1.0, [0.0, 0.0, 1.0]), Err(Error::SingularShift { .. })));
    }

    #[test]
    fn unmagnetized_d_lambda_is_scalar() {
        let pt = MediumPoint { species: vec![(1.0, 0.5, 0.0), (0.3, 0.5, 0.0)], b: [0.0, 0.0, 1.0] };
        let d = assemble_d(Shift::Lambda(0.2), &pt).unwrap();
        let expect = (1.0 + 0.09) / (1.0 + 0.2 * 0.5);
        assert!((d - CMatrix3::diag(Complex64::new(expect, 0.0))).norm_fro() < 1e-15);
    }

    #[test]
    fn b_alpha_collisional_real_part() {
        let (_, e) = b_alpha(0.0, &pt1(1.0, 1.0, 0.0, [0.0, 0.0, 1.0])).unwrap();
        assert!((e.lambda3 - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn lambda_rule() {
        assert_eq!(admissible_lambda(0.1, 1.0, 2.0), 0.1);
        assert!((admissible_lambda(1.0, 1.0, 2.0) - 0.5 / 3.0).abs() < 1e-16);
    }
}
