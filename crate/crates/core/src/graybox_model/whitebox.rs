//! Physics layers: Hamiltonian assembly, time-ordered evolution, the noise
//! operator built from head outputs and the measurement rule.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::linalg2::{eig_hermitian, expm_pauli, pauli, Axis, Operator2};
use crate::mc_simulator::step_components;
use crate::pulse_lib::Waveform;

/// Head outputs for one observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoParams {
    pub psi: f64,
    pub theta: f64,
    pub delta: f64,
    pub mu: f64,
}

impl VoParams {
    /// Parameters whose operator is `O` itself, so `V_O = I`.
    pub fn identity_for(obs: Axis) -> Self {
        use std::f64::consts::FRAC_PI_4;
        match obs {
            Axis::X => VoParams {
                psi: 0.0,
                theta: -FRAC_PI_4,
                delta: 0.0,
                mu: 1.0,
            },
            Axis::Y => VoParams {
                psi: FRAC_PI_4,
                theta: FRAC_PI_4,
                delta: 0.0,
                mu: 1.0,
            },
            Axis::Z | Axis::I => VoParams {
                psi: 0.0,
                theta: 0.0,
                delta: 0.0,
                mu: 1.0,
            },
        }
    }

    /// Unit vector `n` with `Q·diag(1,−1)·Q† = n·σ`. `Δ` drops out.
    pub fn axis(&self) -> [f64; 3] {
        let (s2t, c2t) = (2.0 * self.theta).sin_cos();
        let (s2p, c2p) = (2.0 * self.psi).sin_cos();
        [-s2t * c2p, s2t * s2p, c2t]
    }

    /// `(∂n/∂θ, ∂n/∂ψ)`.
    pub fn axis_partials(&self) -> ([f64; 3], [f64; 3]) {
        let (s2t, c2t) = (2.0 * self.theta).sin_cos();
        let (s2p, c2p) = (2.0 * self.psi).sin_cos();
        (
            [-2.0 * c2t * c2p, 2.0 * c2t * s2p, -2.0 * s2t],
            [2.0 * s2t * s2p, 2.0 * s2t * c2p, 0.0],
        )
    }

    /// `Q = diag(e^{iψ}, e^{−iψ})·[[cos θ, sin θ], [−sin θ, cos θ]]·diag(e^{iΔ}, e^{−iΔ})`.
    pub fn q(&self) -> Operator2 {
        let p = Operator2::diag(C64::from_polar(1.0, self.psi), C64::from_polar(1.0, -self.psi));
        let (s, c) = self.theta.sin_cos();
        let r = Operator2::from_real(c, s, -s, c);
        let d = Operator2::diag(C64::from_polar(1.0, self.delta), C64::from_polar(1.0, -self.delta));
        p * r * d
    }

    /// `Q·diag(μ, −μ)·Q†`: Hermitian, traceless, eigenvalues `±μ`.
    pub fn hermitian_part(&self) -> Operator2 {
        let q = self.q();
        let d = Operator2::diag(C64::new(self.mu, 0.0), C64::new(-self.mu, 0.0));
        q * d * q.dagger()
    }
}

/// `V_O = O⁻¹·Q·D·Q†`.
pub fn construct_vo(p: &VoParams, obs: Axis) -> Result<Operator2, ModelError> {
    if !(0.0..=1.0).contains(&p.mu) {
        return Err(ModelError::MuOutOfRange(p.mu));
    }
    // Pauli matrices are their own inverses.
    Ok(pauli(obs) * p.hermitian_part())
}

/// Recover `(ψ, θ, Δ = 0, μ)` from a Hermitian traceless `H_V`.
pub fn vo_params_from_hermitian(h: &Operator2) -> Result<VoParams, ModelError> {
    let e = eig_hermitian(h).map_err(|e| ModelError::Numerical(e.to_string()))?;
    let (_, b) = h.pauli_components();
    let mu = e.values[0].max(0.0).min(1.0);
    let norm = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if norm == 0.0 {
        return Ok(VoParams {
            psi: 0.0,
            theta: 0.0,
            delta: 0.0,
            mu,
        });
    }
    let n = [b[0] / norm, b[1] / norm, b[2] / norm];
    let theta = 0.5 * n[2].clamp(-1.0, 1.0).acos();
    let psi = 0.5 * n[1].atan2(-n[0]);
    Ok(VoParams {
        psi,
        theta,
        delta: 0.0,
        mu,
    })
}

/// `Re tr(V·U·ρ·U†·O)`.
pub fn measure(v: &Operator2, u: &Operator2, rho: &Operator2, obs: &Operator2) -> Result<f64, ModelError> {
    check_state(rho)?;
    let t = (*v * *u * *rho * u.dagger() * *obs).trace();
    debug_assert!(t.im.abs() < 1e-9 || !v.is_hermitian(1e-9), "imaginary residue {}", t.im);
    Ok(t.re)
}

fn check_state(rho: &Operator2) -> Result<(), ModelError> {
    if !rho.is_hermitian(1e-9) {
        return Err(ModelError::NonPhysicalState("not Hermitian".into()));
    }
    if (rho.trace() - C64::new(1.0, 0.0)).norm() > 1e-9 {
        return Err(ModelError::NonPhysicalState("trace is not 1".into()));
    }
    let e = eig_hermitian(rho).map_err(|e| ModelError::NonPhysicalState(e.to_string()))?;
    if e.values[1] < -1e-9 {
        return Err(ModelError::NonPhysicalState("negative eigenvalue".into()));
    }
    Ok(())
}

/// Pauli components of `H_ctrl(t_j) = ½(Ω + f_z)σ_z + ½f_xσ_x + ½f_yσ_y`.
pub fn control_components(w: &Waveform, omega: f64, j: usize) -> [f64; 3] {
    step_components(
        omega,
        w.sample(Axis::X, j),
        w.sample(Axis::Y, j),
        w.sample(Axis::Z, j),
        0.0,
        0.0,
        0.0,
    )
}

pub fn whitebox_hamiltonian(w: &Waveform, omega: f64, m: usize) -> Vec<Operator2> {
    (0..m)
        .map(|j| Operator2::from_pauli_components(0.0, control_components(w, omega, j)))
        .collect()
}

/// Control propagator on the model grid; identical kernel to the simulator.
pub fn whitebox_evolution(w: &Waveform, omega: f64, m: usize, dt: f64) -> Operator2 {
    let mut u = Operator2::identity();
    for j in 0..m {
        u = expm_pauli(0.0, control_components(w, omega, j), dt) * u;
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc_simulator::{evolve, initial_state};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn approx(a: &Operator2, b: &Operator2, tol: f64) -> bool {
        a.max_abs_diff(b) < tol
    }

    #[test]
    fn vo_examples() {
        let z = Axis::Z;
        let p = VoParams {
            psi: 0.0,
            theta: 0.0,
            delta: 0.0,
            mu: 1.0,
        };
        assert!(approx(&construct_vo(&p, z).unwrap(), &Operator2::identity(), 1e-15));
        let p = VoParams { mu: 0.3, ..p };
        assert!(approx(&construct_vo(&p, z).unwrap(), &Operator2::identity().scale_re(0.3), 1e-15));
        let p = VoParams { theta: FRAC_PI_2, ..p };
        assert!(approx(&construct_vo(&p, z).unwrap(), &Operator2::identity().scale_re(-0.3), 1e-15));
        assert!(matches!(construct_vo(&VoParams { mu: 1.5, ..p }, z), Err(ModelError::MuOutOfRange(_))));
    }

    #[test]
    fn identity_params_give_identity() {
        for o in [Axis::X, Axis::Y, Axis::Z] {
            let v = construct_vo(&VoParams::identity_for(o), o).unwrap();
            assert!(approx(&v, &Operator2::identity(), 1e-15), "{o:?}: {v:?}");
        }
    }

    #[test]
    fn measure_examples() {
        let id = Operator2::identity();
        let zp = initial_state(4);
        let xp = initial_state(0);
        assert_eq!(measure(&id, &id, &zp, &pauli(Axis::Z)).unwrap(), 1.0);
        assert_eq!(measure(&id, &id, &zp, &pauli(Axis::X)).unwrap(), 0.0);
        let v = id.scale_re(0.4);
        assert!((measure(&v, &id, &xp, &pauli(Axis::X)).unwrap() - 0.4).abs() < 1e-15);
        let bad = Operator2::from_real(1.0, 0.0, 0.0, 1.0);
        assert!(matches!(measure(&id, &id, &bad, &id), Err(ModelError::NonPhysicalState(_))));
    }

    #[test]
    fn hamiltonian_examples() {
        let mut w = Waveform::zeros();
        let hs = whitebox_hamiltonian(&w, 10.0, 4);
        assert!(hs.iter().all(|h| *h == pauli(Axis::Z).scale_re(5.0)));
        w.x = vec![0.0, 3.0, 0.0, 0.0];
        let hs = whitebox_hamiltonian(&w, 10.0, 4);
        assert_eq!(hs[1], pauli(Axis::Z).scale_re(5.0) + pauli(Axis::X).scale_re(1.5));
        assert!(hs.iter().all(|h| h.is_hermitian(0.0)));
    }

    #[test]
    fn whitebox_evolution_matches_evolve_bitwise() {
        let m = 256;
        let w = Waveform {
            x: (0..m).map(|j| (j as f64 * 0.1).sin() * 30.0).collect(),
            y: (0..m).map(|j| (j as f64 * 0.07).cos() * 10.0).collect(),
            z: Vec::new(),
        };
        let dt = 1.0 / m as f64;
        let a = whitebox_evolution(&w, 10.0, m, dt);
        let b = evolve(&whitebox_hamiltonian(&w, 10.0, m), dt).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn params_round_trip_through_hermitian_part() {
        let p = VoParams {
            psi: 0.3,
            theta: 0.4,
            delta: 1.1,
            mu: 0.8,
        };
        let back = vo_params_from_hermitian(&p.hermitian_part()).unwrap();
        assert!(approx(&back.hermitian_part(), &p.hermitian_part(), 1e-12));
    }

    proptest! {
        #[test]
        fn closed_form_axis_matches_matrix_product(
            psi in -7.0f64..7.0, theta in -7.0f64..7.0, delta in -7.0f64..7.0, mu in 0.0f64..=1.0
        ) {
            let p = VoParams { psi, theta, delta, mu };
            let n = p.axis();
            let h = p.hermitian_part();
            let direct = Operator2::from_pauli_components(0.0, [mu * n[0], mu * n[1], mu * n[2]]);
            prop_assert!(approx(&h, &direct, 1e-12));
        }

        #[test]
        fn model_measurement_is_bounded(
            psi in -7.0f64..7.0, theta in -7.0f64..7.0, mu in 0.0f64..=1.0, a in -3.0f64..3.0, prep in 0usize..6
        ) {
            let p = VoParams { psi, theta, delta: 0.0, mu };
            let u = crate::linalg2::rotation(Axis::Y, a) * crate::linalg2::rotation(Axis::X, 2.0 * a);
            for o in [Axis::X, Axis::Y, Axis::Z] {
                let v = construct_vo(&p, o).unwrap();
                let y = measure(&v, &u, &initial_state(prep), &pauli(o)).unwrap();
                prop_assert!(y.abs() <= 1.0 + 1e-12);
            }
        }
    }
}
