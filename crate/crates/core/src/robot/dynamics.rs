//! Joint-space dynamics `M(q) q̈ + C(q, q̇) q̇ + g(q) = τ`.
//!
//! `M` is assembled from link Jacobians. Its partial derivatives are exact:
//! `∂M/∂q_k` is the rate of `M` along the unit velocity `e_k`, and the rate
//! itself comes from the analytic Jacobian derivatives. `C` is built from
//! Christoffel symbols of the first kind, so `Ṁ = C + Cᵀ` holds up to rounding.

use nalgebra::{DMatrix, DVector, Matrix3};

use super::chain::{skew, ChainKinematics, RobotState, SerialChain};
use super::RobotError;
use crate::scalar::Scalar;

impl<T: Scalar> SerialChain<T> {
    fn mass_matrix_from(&self, kin: &ChainKinematics<T>) -> DMatrix<T> {
        let n = self.dof();
        let mut m = DMatrix::zeros(n, n);
        for (i, link) in self.links.iter().enumerate() {
            let (jv, jw) = self.point_jacobian(kin, i, &kin.coms[i]);
            let rot = kin.frames[i].rotation.to_rotation_matrix().into_inner();
            let inertia = rot * link.inertia * rot.transpose();
            m += jv.tr_mul(&jv) * link.mass;
            m += jw.tr_mul(&(dense3(&inertia) * &jw));
        }
        m
    }

    fn mass_matrix_rate_from(&self, kin: &ChainKinematics<T>, dq: &DVector<T>) -> DMatrix<T> {
        let n = self.dof();
        let rates = self.rates(kin, dq);
        let mut dm = DMatrix::zeros(n, n);
        for (i, link) in self.links.iter().enumerate() {
            let c = kin.coms[i];
            let (jv, jw) = self.point_jacobian(kin, i, &c);
            let (djv, djw) = self.point_jacobian_rate(kin, &rates, i, &c, &rates.com_velocities[i]);
            let rot = kin.frames[i].rotation.to_rotation_matrix().into_inner();
            let inertia = rot * link.inertia * rot.transpose();
            let w = skew(&rates.omegas[i]);
            let dinertia = w * inertia - inertia * w;
            let lin = djv.tr_mul(&jv) * link.mass;
            let ang = djw.tr_mul(&(dense3(&inertia) * &jw));
            dm += &lin + lin.transpose() + &ang + ang.transpose();
            dm += jw.tr_mul(&(dense3(&dinertia) * &jw));
        }
        dm
    }

    pub fn mass_matrix(&self, q: &DVector<T>) -> Result<DMatrix<T>, RobotError> {
        Ok(self.mass_matrix_from(&self.kinematics(q)?))
    }

    /// `Ṁ` along the velocity of `state`.
    pub fn mass_matrix_rate(&self, state: &RobotState<T>) -> Result<DMatrix<T>, RobotError> {
        self.check_velocity(state)?;
        let kin = self.kinematics(&state.q)?;
        Ok(self.mass_matrix_rate_from(&kin, &state.dq))
    }

    /// `∂M/∂q_k` for every joint `k`.
    pub fn mass_matrix_partials(&self, q: &DVector<T>) -> Result<Vec<DMatrix<T>>, RobotError> {
        let kin = self.kinematics(q)?;
        let n = self.dof();
        Ok((0..n)
            .map(|k| {
                let mut e = DVector::zeros(n);
                e[k] = T::one();
                self.mass_matrix_rate_from(&kin, &e)
            })
            .collect())
    }

    /// Coriolis matrix from Christoffel symbols of the first kind:
    /// `C_ij = ½ Σ_k (∂_k M_ij + ∂_j M_ik − ∂_i M_jk) q̇_k`.
    pub fn coriolis_matrix(&self, state: &RobotState<T>) -> Result<DMatrix<T>, RobotError> {
        self.check_velocity(state)?;
        let partials = self.mass_matrix_partials(&state.q)?;
        Ok(christoffel_coriolis(&partials, &state.dq))
    }

    /// Gradient of the potential energy.
    pub fn gravity(&self, q: &DVector<T>) -> Result<DVector<T>, RobotError> {
        let kin = self.kinematics(q)?;
        let mut g = DVector::zeros(self.dof());
        for (i, link) in self.links.iter().enumerate() {
            let (jv, _) = self.point_jacobian(&kin, i, &kin.coms[i]);
            g -= jv.tr_mul(&DVector::from_column_slice(self.gravity.as_slice())) * link.mass;
        }
        Ok(g)
    }

    pub fn potential_energy(&self, q: &DVector<T>) -> Result<T, RobotError> {
        let kin = self.kinematics(q)?;
        Ok(self
            .links
            .iter()
            .zip(&kin.coms)
            .fold(T::zero(), |acc, (link, c)| {
                acc - self.gravity.dot(c) * link.mass
            }))
    }

    pub fn kinetic_energy(&self, state: &RobotState<T>) -> Result<T, RobotError> {
        self.check_velocity(state)?;
        let m = self.mass_matrix(&state.q)?;
        Ok(state.dq.dot(&(m * &state.dq)) * T::lit(0.5))
    }

    /// Joint accelerations `M⁻¹ (τ − C q̇ − g)`.
    pub fn forward_dynamics(
        &self,
        state: &RobotState<T>,
        tau: &DVector<T>,
    ) -> Result<DVector<T>, RobotError> {
        self.check_velocity(state)?;
        if tau.len() != self.dof() {
            return Err(RobotError::DimensionMismatch(format!(
                "expected {} torques, got {}",
                self.dof(),
                tau.len()
            )));
        }
        let m = self.mass_matrix(&state.q)?;
        let c = self.coriolis_matrix(state)?;
        let g = self.gravity(&state.q)?;
        let rhs = tau - c * &state.dq - g;
        let chol = m.cholesky().ok_or(RobotError::SingularInertia)?;
        Ok(chol.solve(&rhs))
    }

    pub(crate) fn check_velocity(&self, state: &RobotState<T>) -> Result<(), RobotError> {
        if state.q.len() != self.dof() || state.dq.len() != self.dof() {
            return Err(RobotError::DimensionMismatch(format!(
                "state has {} positions and {} velocities for {} joints",
                state.q.len(),
                state.dq.len(),
                self.dof()
            )));
        }
        Ok(())
    }
}

fn dense3<T: Scalar>(m: &Matrix3<T>) -> DMatrix<T> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// Christoffel-symbol Coriolis matrix from the partials `∂M/∂q_k`.
pub fn christoffel_coriolis<T: Scalar>(partials: &[DMatrix<T>], dq: &DVector<T>) -> DMatrix<T> {
    let n = dq.len();
    let half = T::lit(0.5);
    DMatrix::from_fn(n, n, |i, j| {
        (0..n).fold(T::zero(), |acc, k| {
            acc + (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]) * dq[k]
        }) * half
    })
}
