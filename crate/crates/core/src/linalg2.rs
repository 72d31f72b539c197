//! Exact complex 2×2 linear algebra for a single qubit.
//!
//! Everything here is closed form: Pauli algebra, the Hermitian matrix
//! exponential through the Pauli decomposition `H = a·I + b·σ`, a 2×2
//! eigensolver and the gate fidelity `|tr(U†V)|²/4`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I_UNIT: C64 = C64::new(0.0, 1.0);

/// Tolerance used when a caller does not supply one for the Hermitian check.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// Below this value of `|b|·dt` the exponential uses the series form of `sin(x)/x`.
const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NonHermitianInput { deviation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
    I,
}

impl Axis {
    pub const PAULIS: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
            Axis::I => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
            Axis::I => "I",
        }
    }
}

/// Complex 2×2 matrix, row-major.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Operator2 {
    pub m: [C64; 4],
}

impl fmt::Debug for Operator2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{:.6}, {:.6}], [{:.6}, {:.6}]]",
            self.m[0], self.m[1], self.m[2], self.m[3]
        )
    }
}

impl Operator2 {
    pub const fn new(a: C64, b: C64, c: C64, d: C64) -> Self {
        Operator2 { m: [a, b, c, d] }
    }

    pub const fn zero() -> Self {
        Operator2 { m: [ZERO; 4] }
    }

    pub const fn identity() -> Self {
        Operator2::new(ONE, ZERO, ZERO, ONE)
    }

    pub fn diag(a: C64, d: C64) -> Self {
        Operator2::new(a, ZERO, ZERO, d)
    }

    pub fn from_real(a: f64, b: f64, c: f64, d: f64) -> Self {
        Operator2::new(a.into(), b.into(), c.into(), d.into())
    }

    /// `a·I + bx·σx + by·σy + bz·σz`.
    pub fn from_pauli_components(a: f64, b: [f64; 3]) -> Self {
        Operator2::new(
            C64::new(a + b[2], 0.0),
            C64::new(b[0], -b[1]),
            C64::new(b[0], b[1]),
            C64::new(a - b[2], 0.0),
        )
    }

    /// Real coefficients `(a, b)` with `self = a·I + b·σ`, assuming Hermiticity.
    pub fn pauli_components(&self) -> (f64, [f64; 3]) {
        let a = 0.5 * (self.m[0].re + self.m[3].re);
        let bz = 0.5 * (self.m[0].re - self.m[3].re);
        let bx = self.m[1].re;
        let by = -self.m[1].im;
        (a, [bx, by, bz])
    }

    pub fn dagger(&self) -> Self {
        Operator2::new(
            self.m[0].conj(),
            self.m[2].conj(),
            self.m[1].conj(),
            self.m[3].conj(),
        )
    }

    pub fn trace(&self) -> C64 {
        self.m[0] + self.m[3]
    }

    pub fn scale(&self, s: C64) -> Self {
        Operator2::new(self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Operator2::new(self.m[0] * s, self.m[1] * s, self.m[2] * s, self.m[3] * s)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Operator2) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn hermitian_deviation(&self) -> f64 {
        self.max_abs_diff(&self.dagger())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_deviation() <= tol
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        (self.dagger() * *self - Operator2::identity()).frobenius_norm() <= tol
    }

    pub fn is_traceless(&self, tol: f64) -> bool {
        self.trace().norm() <= tol
    }

    /// Inverse of a non-singular matrix. Returns `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let det = self.m[0] * self.m[3] - self.m[1] * self.m[2];
        if det.norm() < 1e-300 {
            return None;
        }
        let inv = det.inv();
        Some(Operator2::new(
            self.m[3] * inv,
            -self.m[1] * inv,
            -self.m[2] * inv,
            self.m[0] * inv,
        ))
    }
}

impl Mul for Operator2 {
    type Output = Operator2;

    #[inline]
    fn mul(self, rhs: Operator2) -> Operator2 {
        let a = &self.m;
        let b = &rhs.m;
        Operator2::new(
            a[0] * b[0] + a[1] * b[2],
            a[0] * b[1] + a[1] * b[3],
            a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3],
        )
    }
}

impl Add for Operator2 {
    type Output = Operator2;

    fn add(self, rhs: Operator2) -> Operator2 {
        Operator2::new(
            self.m[0] + rhs.m[0],
            self.m[1] + rhs.m[1],
            self.m[2] + rhs.m[2],
            self.m[3] + rhs.m[3],
        )
    }
}

impl Sub for Operator2 {
    type Output = Operator2;

    fn sub(self, rhs: Operator2) -> Operator2 {
        Operator2::new(
            self.m[0] - rhs.m[0],
            self.m[1] - rhs.m[1],
            self.m[2] - rhs.m[2],
            self.m[3] - rhs.m[3],
        )
    }
}

impl Neg for Operator2 {
    type Output = Operator2;

    fn neg(self) -> Operator2 {
        self.scale_re(-1.0)
    }
}

/// Standard Pauli matrix (or identity).
pub fn pauli(axis: Axis) -> Operator2 {
    match axis {
        Axis::X => Operator2::new(ZERO, ONE, ONE, ZERO),
        Axis::Y => Operator2::new(ZERO, -I_UNIT, I_UNIT, ZERO),
        Axis::Z => Operator2::new(ONE, ZERO, ZERO, -ONE),
        Axis::I => Operator2::identity(),
    }
}

/// `sin(s·dt)/s`, continuous through `s = 0`.
#[inline]
fn sinc_dt(s: f64, dt: f64) -> f64 {
    let x = s * dt;
    if x.abs() < SMALL_ANGLE {
        dt * (1.0 - x * x / 6.0)
    } else {
        x.sin() / s
    }
}

/// `exp(-i·dt·(a·I + b·σ))` from its closed form.
///
/// This is the single propagator kernel used by both the Monte Carlo simulator
/// and the differentiable whitebox, so the two agree bit for bit.
#[inline]
pub fn expm_pauli(a: f64, b: [f64; 3], dt: f64) -> Operator2 {
    let s = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let c = (s * dt).cos();
    let k = sinc_dt(s, dt);
    // cos·I − i·(sin/s)·(b·σ)
    let m00 = C64::new(c, -k * b[2]);
    let m11 = C64::new(c, k * b[2]);
    // −i·k·(bx − i·by) = −k·by − i·k·bx
    let m01 = C64::new(-k * b[1], -k * b[0]);
    // −i·k·(bx + i·by) = k·by − i·k·bx
    let m10 = C64::new(k * b[1], -k * b[0]);
    let u = Operator2::new(m00, m01, m10, m11);
    if a == 0.0 {
        u
    } else {
        u.scale(C64::from_polar(1.0, -a * dt))
    }
}

/// Partial derivatives of [`expm_pauli`] with respect to `a` and the three
/// components of `b`.
pub fn expm_pauli_partials(a: f64, b: [f64; 3], dt: f64) -> (Operator2, [Operator2; 3]) {
    let s2 = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
    let s = s2.sqrt();
    let x = s * dt;
    let k = sinc_dt(s, dt);
    // (dk/ds)/s
    let dk_over_s = if x.abs() < 1e-3 {
        let dt3 = dt * dt * dt;
        -dt3 / 3.0 + dt3 * x * x / 30.0
    } else {
        (dt * s * x.cos() - x.sin()) / (s2 * s)
    };
    let phase = C64::from_polar(1.0, -a * dt);
    let u = expm_pauli(a, b, dt);
    let d_a = u.scale(C64::new(0.0, -dt));
    let bsig = Operator2::from_pauli_components(0.0, b);
    let mut d_b = [Operator2::zero(); 3];
    for (l, axis) in Axis::PAULIS.iter().enumerate() {
        // d cos(s dt)/d b_l = −dt·k·b_l
        let dc = -dt * k * b[l];
        let dk = dk_over_s * b[l];
        let term = Operator2::identity().scale_re(dc)
            + bsig.scale(C64::new(0.0, -dk))
            + pauli(*axis).scale(C64::new(0.0, -k));
        d_b[l] = term.scale(phase);
    }
    (d_a, d_b)
}

/// `exp(-i·H·dt)` for Hermitian `H`.
pub fn expm_hermitian(h: &Operator2, dt: f64) -> Result<Operator2, LinalgError> {
    let deviation = h.hermitian_deviation();
    if !(deviation <= HERMITIAN_TOL) {
        return Err(LinalgError::NonHermitianInput { deviation });
    }
    let (a, b) = h.pauli_components();
    Ok(expm_pauli(a, b, dt))
}

/// Eigen-decomposition of a Hermitian 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenDecomp2 {
    /// Descending.
    pub values: [f64; 2],
    /// Column eigenvectors, `vectors[i]` belongs to `values[i]`.
    pub vectors: [[C64; 2]; 2],
}

impl EigenDecomp2 {
    /// `Q·diag(λ)·Q†`.
    pub fn reconstruct(&self) -> Operator2 {
        let mut out = Operator2::zero();
        for i in 0..2 {
            let v = self.vectors[i];
            let l = self.values[i];
            out.m[0] += v[0] * v[0].conj() * l;
            out.m[1] += v[0] * v[1].conj() * l;
            out.m[2] += v[1] * v[0].conj() * l;
            out.m[3] += v[1] * v[1].conj() * l;
        }
        out
    }
}

/// Rotate the vector so that its first non-negligible component is real-positive.
fn fix_phase(v: [C64; 2]) -> [C64; 2] {
    let pivot = if v[0].norm() > 1e-14 { v[0] } else { v[1] };
    let rot = pivot.conj() / pivot.norm();
    [v[0] * rot, v[1] * rot]
}

pub fn eig_hermitian(a: &Operator2) -> Result<EigenDecomp2, LinalgError> {
    let deviation = a.hermitian_deviation();
    if !(deviation <= HERMITIAN_TOL) {
        return Err(LinalgError::NonHermitianInput { deviation });
    }
    let (mean, b) = a.pauli_components();
    let s = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let scale = a.frobenius_norm().max(1.0);
    if s <= 1e-15 * scale {
        return Ok(EigenDecomp2 {
            values: [mean, mean],
            vectors: [[ONE, ZERO], [ZERO, ONE]],
        });
    }
    let n = [b[0] / s, b[1] / s, b[2] / s];
    // Eigenvectors of n·σ. Pick the better-conditioned of the two textbook forms.
    let up = if n[2] >= 0.0 {
        [C64::new(1.0 + n[2], 0.0), C64::new(n[0], n[1])]
    } else {
        [C64::new(n[0], -n[1]), C64::new(1.0 - n[2], 0.0)]
    };
    let down = [-up[1].conj(), up[0].conj()];
    let normalize = |v: [C64; 2]| {
        let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        fix_phase([v[0] / norm, v[1] / norm])
    };
    Ok(EigenDecomp2 {
        values: [mean + s, mean - s],
        vectors: [normalize(up), normalize(down)],
    })
}

/// Gate fidelity `|tr(U†V)|²/d²` with `d = 2`.
pub fn fidelity(u: &Operator2, v: &Operator2) -> f64 {
    if log::log_enabled!(log::Level::Warn) && (!u.is_unitary(1e-6) || !v.is_unitary(1e-6)) {
        log::warn!("fidelity evaluated on non-unitary input");
    }
    let t = (u.dagger() * *v).trace();
    (t.norm_sqr() / 4.0).min(1.0)
}

/// Fidelity without the unitarity warning; used inside optimisation loops.
pub(crate) fn fidelity_raw(u: &Operator2, v: &Operator2) -> f64 {
    (u.dagger() * *v).trace().norm_sqr() / 4.0
}

/// Single-qubit rotation `exp(-i·angle/2·σ_axis)`.
pub fn rotation(axis: Axis, angle: f64) -> Operator2 {
    let mut b = [0.0; 3];
    if axis != Axis::I {
        b[axis.index()] = 0.5 * angle;
    }
    expm_pauli(0.0, b, 1.0)
}

/// Hadamard gate.
pub fn hadamard() -> Operator2 {
    (pauli(Axis::X) + pauli(Axis::Z)).scale_re(std::f64::consts::FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &Operator2, b: &Operator2, tol: f64) -> bool {
        a.max_abs_diff(b) <= tol
    }

    #[test]
    fn pauli_basics() {
        assert_eq!(
            pauli(Axis::Z),
            Operator2::diag(C64::new(1.0, 0.0), C64::new(-1.0, 0.0))
        );
        assert_eq!(pauli(Axis::X) * pauli(Axis::X), Operator2::identity());
        assert_eq!((pauli(Axis::X) * pauli(Axis::Y)).trace(), ZERO);
        for ax in Axis::PAULIS {
            let p = pauli(ax);
            assert!(p.is_hermitian(0.0));
            assert!(p.is_unitary(0.0));
            assert!(p.is_traceless(0.0));
        }
        // σxσy = iσz
        assert!(close(
            &(pauli(Axis::X) * pauli(Axis::Y)),
            &pauli(Axis::Z).scale(I_UNIT),
            0.0
        ));
    }

    #[test]
    fn expm_zero_generator_is_identity() {
        let u = expm_hermitian(&Operator2::zero(), 1.0).unwrap();
        assert_eq!(u, Operator2::identity());
    }

    #[test]
    fn expm_diagonal_case() {
        let h = pauli(Axis::Z).scale_re(5.0);
        let u = expm_hermitian(&h, 0.1).unwrap();
        let expected = Operator2::diag(C64::from_polar(1.0, -0.5), C64::from_polar(1.0, 0.5));
        assert!(close(&u, &expected, 1e-15));
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let h = Operator2::new(ZERO, ONE, ZERO, ZERO);
        assert!(matches!(
            expm_hermitian(&h, 1.0),
            Err(LinalgError::NonHermitianInput { .. })
        ));
    }

    #[test]
    fn expm_small_angle_branch_is_continuous() {
        let b = [3e-8, -1e-8, 2e-8];
        let u_small = expm_pauli(0.2, b, 1.0);
        // Taylor: (1 - i b·σ) e^{-i a}
        let approx = (Operator2::identity()
            - Operator2::from_pauli_components(0.0, b).scale(I_UNIT))
        .scale(C64::from_polar(1.0, -0.2));
        assert!(close(&u_small, &approx, 1e-14));
    }

    #[test]
    fn expm_partials_match_finite_differences() {
        let a = 0.3;
        let b = [0.7, -1.1, 2.3];
        let dt = 0.37;
        let (da, db) = expm_pauli_partials(a, b, dt);
        let h = 1e-6;
        let fd_a = (expm_pauli(a + h, b, dt) - expm_pauli(a - h, b, dt)).scale_re(0.5 / h);
        assert!(close(&da, &fd_a, 1e-8));
        for l in 0..3 {
            let mut bp = b;
            let mut bm = b;
            bp[l] += h;
            bm[l] -= h;
            let fd = (expm_pauli(a, bp, dt) - expm_pauli(a, bm, dt)).scale_re(0.5 / h);
            assert!(close(&db[l], &fd, 1e-8), "component {l}");
        }
        // Near-zero b uses the series branch.
        let b0 = [1e-5, 0.0, -2e-5];
        let (_, db0) = expm_pauli_partials(0.0, b0, dt);
        for l in 0..3 {
            let mut bp = b0;
            let mut bm = b0;
            bp[l] += 1e-7;
            bm[l] -= 1e-7;
            let fd = (expm_pauli(0.0, bp, dt) - expm_pauli(0.0, bm, dt)).scale_re(0.5 / 1e-7);
            assert!(close(&db0[l], &fd, 1e-7), "component {l}");
        }
    }

    #[test]
    fn eig_textbook_cases() {
        let e = eig_hermitian(&pauli(Axis::X)).unwrap();
        assert_eq!(e.values, [1.0, -1.0]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[0][0] - C64::new(r, 0.0)).norm() < 1e-15);
        assert!((e.vectors[0][1] - C64::new(r, 0.0)).norm() < 1e-15);
        assert!((e.vectors[1][0] - C64::new(r, 0.0)).norm() < 1e-15);
        assert!((e.vectors[1][1] - C64::new(-r, 0.0)).norm() < 1e-15);

        let e = eig_hermitian(&pauli(Axis::Z).scale_re(0.3)).unwrap();
        assert!((e.values[0] - 0.3).abs() < 1e-15 && (e.values[1] + 0.3).abs() < 1e-15);

        let e = eig_hermitian(&Operator2::identity()).unwrap();
        assert_eq!(e.values, [1.0, 1.0]);
        assert_eq!(e.vectors, [[ONE, ZERO], [ZERO, ONE]]);
    }

    #[test]
    fn fidelity_cases() {
        let id = Operator2::identity();
        assert_eq!(fidelity(&id, &id), 1.0);
        assert_eq!(fidelity(&pauli(Axis::X), &pauli(Axis::Y)), 0.0);
        let u = rotation(Axis::Y, 0.7) * rotation(Axis::Z, 1.3);
        let v = u.scale(C64::from_polar(1.0, 2.1));
        assert!((fidelity(&u, &v) - 1.0).abs() < 1e-14);
    }

    fn hermitian_strategy() -> impl Strategy<Value = (f64, [f64; 3])> {
        (
            -20.0..20.0f64,
            prop::array::uniform3(-20.0..20.0f64),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn expm_unitary((a, b) in hermitian_strategy(), dt in 0.0..2.0f64) {
            let h = Operator2::from_pauli_components(a, b);
            let u = expm_hermitian(&h, dt).unwrap();
            prop_assert!((u.dagger() * u - Operator2::identity()).frobenius_norm() < 1e-12);
        }

        #[test]
        fn expm_composes((a, b) in hermitian_strategy(), s in 0.0..1.0f64, t in 0.0..1.0f64) {
            let h = Operator2::from_pauli_components(a, b);
            let lhs = expm_hermitian(&h, s).unwrap() * expm_hermitian(&h, t).unwrap();
            let rhs = expm_hermitian(&h, s + t).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }

        #[test]
        fn eig_reconstructs((a, b) in hermitian_strategy()) {
            let h = Operator2::from_pauli_components(a, b);
            let e = eig_hermitian(&h).unwrap();
            prop_assert!(e.values[0] >= e.values[1]);
            prop_assert!(e.reconstruct().max_abs_diff(&h) < 1e-12 * h.frobenius_norm().max(1.0));
            for i in 0..2 {
                let v = e.vectors[i];
                let hv0 = h.m[0] * v[0] + h.m[1] * v[1];
                let hv1 = h.m[2] * v[0] + h.m[3] * v[1];
                prop_assert!((hv0 - v[0] * e.values[i]).norm() < 1e-11);
                prop_assert!((hv1 - v[1] * e.values[i]).norm() < 1e-11);
            }
            let overlap = e.vectors[0][0].conj() * e.vectors[1][0] + e.vectors[0][1].conj() * e.vectors[1][1];
            prop_assert!(overlap.norm() < 1e-12);
        }

        #[test]
        fn fidelity_symmetric_and_phase_invariant(
            (a, b) in hermitian_strategy(),
            (c, d) in hermitian_strategy(),
            phi in -3.0..3.0f64,
        ) {
            let u = expm_pauli(a, b, 0.3);
            let v = expm_pauli(c, d, 0.7);
            let f = fidelity_raw(&u, &v);
            prop_assert!((f - fidelity_raw(&v, &u)).abs() < 1e-14);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
            let vp = v.scale(C64::from_polar(1.0, phi));
            prop_assert!((f - fidelity_raw(&u, &vp)).abs() < 1e-13);
            prop_assert!((fidelity_raw(&u, &u.scale(C64::from_polar(1.0, phi))) - 1.0).abs() < 1e-13);
        }
    }
}
