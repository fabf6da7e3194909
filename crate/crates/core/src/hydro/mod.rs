//! Equations of motion of a 6-DOF underwater vehicle.
//!
//! Pose `eta = [x, y, z, phi, theta, psi]` lives in a north-east-down fixed
//! frame, velocity `nu = [u, v, w, p, q, r]` in the body frame. The dynamics
//! are
//!
//! ```text
//! eta_dot = J(eta) nu
//! M nu_dot + C(nu) nu + d(nu) + g(eta) = tau
//! d(nu)   = (sum_i |nu_i| D_i) nu
//! ```
//!
//! with a quadratic, fully coupled damping model and a Coriolis matrix
//! derived from the total (rigid + added) mass matrix.

mod params_file;

use nalgebra::{Cholesky, Matrix3, Matrix6, Matrix6xX, SVector, Vector3, Vector6};

pub use params_file::{ParamsFile, PARAMS_FILE_VERSION};

use crate::error::{Error, Result};

/// Pitch angles closer than this to +-pi/2 are rejected.
pub const GIMBAL_MARGIN: f64 = 1e-3;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Degrees of freedom, in state-vector order.
pub const DOF_NAMES: [&str; 6] = ["surge", "sway", "heave", "roll", "pitch", "yaw"];

/// Pose and body velocity of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub eta: Vector6<f64>,
    pub nu: Vector6<f64>,
}

impl VehicleState {
    pub fn new(eta: Vector6<f64>, nu: Vector6<f64>) -> Result<Self> {
        let state = VehicleState { eta, nu }.wrapped();
        state.check_finite()?;
        Ok(state)
    }

    pub fn zero() -> Self {
        VehicleState {
            eta: Vector6::zeros(),
            nu: Vector6::zeros(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.eta.iter().chain(self.nu.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("vehicle state"))
        }
    }

    /// Returns the state with Euler angles wrapped to (-pi, pi].
    pub fn wrapped(mut self) -> Self {
        for i in 3..6 {
            self.eta[i] = wrap_angle(self.eta[i]);
        }
        self
    }

    pub fn to_vector(&self) -> SVector<f64, 12> {
        let mut x = SVector::<f64, 12>::zeros();
        x.fixed_rows_mut::<6>(0).copy_from(&self.eta);
        x.fixed_rows_mut::<6>(6).copy_from(&self.nu);
        x
    }

    pub fn from_vector(x: &SVector<f64, 12>) -> Self {
        VehicleState {
            eta: x.fixed_rows::<6>(0).into(),
            nu: x.fixed_rows::<6>(6).into(),
        }
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Commanded rotor angular velocities (rad/s), one per thruster.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub speeds: Vec<f64>,
}

impl ControlInput {
    pub fn new(speeds: Vec<f64>) -> Self {
        ControlInput { speeds }
    }

    pub fn zeros(m: usize) -> Self {
        ControlInput {
            speeds: vec![0.0; m],
        }
    }

    /// Checks finiteness and the speed limit.
    pub fn validate(&self, max_speed: f64) -> Result<()> {
        for &n in &self.speeds {
            if !n.is_finite() {
                return Err(Error::NonFinite("thruster command"));
            }
            if n.abs() > max_speed {
                return Err(Error::InvalidParams(format!(
                    "thruster speed {n} exceeds limit {max_speed}"
                )));
            }
        }
        Ok(())
    }
}

/// The hydrodynamic parameter set defining one model context.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    /// Total mass matrix (rigid body + added mass).
    pub mass: Matrix6<f64>,
    /// Quadratic damping matrices; `damping[i]` is weighted by `|nu_i|`.
    pub damping: [Matrix6<f64>; 6],
    /// Weight (N).
    pub weight: f64,
    /// Buoyancy (N).
    pub buoyancy: f64,
    /// Center of gravity in the body frame (m).
    pub cg: Vector3<f64>,
    /// Center of buoyancy in the body frame (m).
    pub cb: Vector3<f64>,
    /// Per-thruster coefficient k in f = k |n| n (N s^2 / rad^2).
    pub thruster_coeffs: Vec<f64>,
    /// 6 x m map from thruster forces to body forces and moments.
    pub allocation: Matrix6xX<f64>,
    /// Largest admissible rotor speed (rad/s).
    pub max_speed: f64,
    /// DOFs integrated freely; clamped DOFs keep zero acceleration.
    pub free_dofs: [bool; 6],
}

impl VehicleParams {
    pub fn n_thrusters(&self) -> usize {
        self.thruster_coeffs.len()
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..6).filter(|&i| self.free_dofs[i]).collect()
    }

    /// Checks every structural invariant: shapes, finiteness, symmetric
    /// positive-definite mass, positive semi-definite damping, non-negative
    /// thruster coefficients.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_thrusters();
        if m == 0 {
            return Err(Error::InvalidParams("no thrusters".into()));
        }
        if self.allocation.ncols() != m {
            return Err(Error::InvalidParams(format!(
                "allocation has {} columns for {m} thrusters",
                self.allocation.ncols()
            )));
        }
        let finite = self.mass.iter().all(|v| v.is_finite())
            && self.damping.iter().all(|d| d.iter().all(|v| v.is_finite()))
            && self.allocation.iter().all(|v| v.is_finite())
            && self.cg.iter().chain(self.cb.iter()).all(|v| v.is_finite())
            && self.weight.is_finite()
            && self.buoyancy.is_finite()
            && self.max_speed.is_finite();
        if !finite {
            return Err(Error::InvalidParams("non-finite coefficient".into()));
        }
        let asym = (self.mass - self.mass.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidParams(format!(
                "mass matrix asymmetric by {asym:e}"
            )));
        }
        if Cholesky::new(self.mass).is_none() {
            return Err(Error::SingularMass);
        }
        for (i, d) in self.damping.iter().enumerate() {
            let min_eig = min_symmetric_eigenvalue(d);
            if min_eig < -PSD_TOL {
                return Err(Error::InvalidParams(format!(
                    "damping matrix D{} has eigenvalue {min_eig:e}",
                    i + 1
                )));
            }
        }
        if let Some(k) = self
            .thruster_coeffs
            .iter()
            .find(|k| !(**k >= 0.0 && k.is_finite()))
        {
            return Err(Error::InvalidParams(format!(
                "thruster coefficient {k} is negative"
            )));
        }
        if !(self.max_speed > 0.0) {
            return Err(Error::InvalidParams("max_speed must be positive".into()));
        }
        if !self.free_dofs.iter().any(|&f| f) {
            return Err(Error::InvalidParams("no free degree of freedom".into()));
        }
        Ok(())
    }

    /// Nominal parameters of a small hovering AUV moving in the horizontal
    /// plane: roughly 70 kg dry mass, neutral buoyancy with the center of
    /// buoyancy 2 cm above the center of gravity, two surge thrusters at
    /// y = +-0.25 m and one sway thruster at x = 0.35 m.
    pub fn nominal() -> Self {
        let mut mass = Matrix6::from_diagonal(&Vector6::new(85.0, 115.0, 120.0, 2.5, 7.0, 7.5));
        set_sym(&mut mass, 1, 5, 2.0);
        set_sym(&mut mass, 0, 4, 1.5);
        set_sym(&mut mass, 2, 4, -1.0);

        let mut damping = [Matrix6::zeros(); 6];
        // |u|-weighted
        damping[0][(0, 0)] = 30.0;
        damping[0][(1, 1)] = 4.0;
        damping[0][(5, 5)] = 0.5;
        set_sym(&mut damping[0], 1, 5, 0.3);
        // |v|-weighted
        damping[1][(1, 1)] = 80.0;
        damping[1][(0, 0)] = 4.0;
        damping[1][(5, 5)] = 2.0;
        set_sym(&mut damping[1], 1, 5, 1.5);
        damping[2][(2, 2)] = 90.0;
        damping[3][(3, 3)] = 2.0;
        damping[4][(4, 4)] = 8.0;
        // |r|-weighted
        damping[5][(5, 5)] = 10.0;
        damping[5][(1, 1)] = 3.0;
        damping[5][(0, 0)] = 1.0;
        set_sym(&mut damping[5], 1, 5, 1.0);

        let weight = 70.0 * 9.81;
        #[rustfmt::skip]
        let allocation = Matrix6xX::from_row_slice(&[
            1.0,   1.0,  0.0,
            0.0,   0.0,  1.0,
            0.0,   0.0,  0.0,
            0.0,   0.0,  0.0,
            0.0,   0.0,  0.0,
            -0.25, 0.25, 0.35,
        ]);
        VehicleParams {
            mass,
            damping,
            weight,
            buoyancy: weight,
            cg: Vector3::zeros(),
            cb: Vector3::new(0.0, 0.0, -0.02),
            thruster_coeffs: vec![1e-3; 3],
            allocation,
            max_speed: 200.0,
            free_dofs: [true, true, false, false, false, true],
        }
    }

    /// Same vehicle with all six DOFs free.
    pub fn nominal_6dof() -> Self {
        VehicleParams {
            free_dofs: [true; 6],
            ..Self::nominal()
        }
    }
}

fn set_sym(m: &mut Matrix6<f64>, i: usize, j: usize, v: f64) {
    m[(i, j)] = v;
    m[(j, i)] = v;
}

/// Smallest eigenvalue of the symmetric part of `d`; a matrix is positive
/// semi-definite as a quadratic form iff this is non-negative.
pub fn min_symmetric_eigenvalue(d: &Matrix6<f64>) -> f64 {
    let sym = (d + d.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rotation from body to fixed frame for zyx Euler angles.
pub fn rotation(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(
        cp * ct,
        -sp * cf + cp * st * sf,
        sp * sf + cp * cf * st,
        sp * ct,
        cp * cf + sf * st * sp,
        -cp * sf + st * sp * cf,
        -st,
        ct * sf,
        ct * cf,
    )
}

/// The 6x6 kinematic transform J(eta): rotation for the linear velocities,
/// Euler-rate transform for the angular ones.
pub fn euler_transform(eta: &Vector6<f64>) -> Result<Matrix6<f64>> {
    let (phi, theta, psi) = (eta[3], eta[4], eta[5]);
    if !(theta.abs() < std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN) {
        return Err(Error::GimbalLock { pitch: theta });
    }
    let (sf, cf) = phi.sin_cos();
    let ct = theta.cos();
    let tt = theta.tan();
    let t = Matrix3::new(1.0, sf * tt, cf * tt, 0.0, cf, -sf, 0.0, sf / ct, cf / ct);
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&rotation(phi, theta, psi));
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&t);
    Ok(j)
}

/// Coriolis and centripetal matrix built from the mass matrix blocks. The
/// result is skew-symmetric for any `nu`.
pub fn coriolis(mass: &Matrix6<f64>, nu: &Vector6<f64>) -> Matrix6<f64> {
    let nu1: Vector3<f64> = nu.fixed_rows::<3>(0).into();
    let nu2: Vector3<f64> = nu.fixed_rows::<3>(3).into();
    let a = mass.fixed_view::<3, 3>(0, 0) * nu1 + mass.fixed_view::<3, 3>(0, 3) * nu2;
    let b = mass.fixed_view::<3, 3>(3, 0) * nu1 + mass.fixed_view::<3, 3>(3, 3) * nu2;
    let sa = -skew(&a);
    let sb = -skew(&b);
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(0, 3).copy_from(&sa);
    c.fixed_view_mut::<3, 3>(3, 0).copy_from(&sa);
    c.fixed_view_mut::<3, 3>(3, 3).copy_from(&sb);
    c
}

/// Quadratic damping `(sum_i |nu_i| D_i) nu`.
pub fn damping_force(damping: &[Matrix6<f64>; 6], nu: &Vector6<f64>) -> Vector6<f64> {
    let mut total = Matrix6::zeros();
    for (d, v) in damping.iter().zip(nu.iter()) {
        if *v != 0.0 {
            total += d * v.abs();
        }
    }
    total * nu
}

/// Gravity and buoyancy wrench g(eta). Appears on the left-hand side of the
/// dynamics, so with z pointing down an overweight vehicle at zero attitude
/// has a negative heave component (it sinks).
pub fn restoring_force(params: &VehicleParams, eta: &Vector6<f64>) -> Vector6<f64> {
    let (w, b) = (params.weight, params.buoyancy);
    let (cg, cb) = (&params.cg, &params.cb);
    let (sf, cf) = eta[3].sin_cos();
    let (st, ct) = eta[4].sin_cos();
    let wb = w - b;
    let mx = cg.x * w - cb.x * b;
    let my = cg.y * w - cb.y * b;
    let mz = cg.z * w - cb.z * b;
    Vector6::new(
        wb * st,
        -wb * ct * sf,
        -wb * ct * cf,
        -my * ct * cf + mz * ct * sf,
        mz * st + mx * ct * cf,
        -mx * ct * sf - my * st,
    )
}

/// Per-thruster force `k |n| n`.
pub fn thrust(coeff: f64, speed: f64) -> f64 {
    coeff * speed.abs() * speed
}

/// Body wrench produced by the thrusters.
pub fn thruster_forces(params: &VehicleParams, input: &ControlInput) -> Vector6<f64> {
    let mut tau = Vector6::zeros();
    for (j, (&k, &n)) in params.thruster_coeffs.iter().zip(&input.speeds).enumerate() {
        let f = thrust(k, n);
        if f != 0.0 {
            tau += params.allocation.column(j) * f;
        }
    }
    tau
}

/// Generalized forces acting on the vehicle other than inertia:
/// `tau - C(nu) nu - d(nu) - g(eta)`.
pub fn net_force(params: &VehicleParams, state: &VehicleState, tau: &Vector6<f64>) -> Vector6<f64> {
    let c = coriolis(&params.mass, &state.nu);
    tau - c * state.nu
        - damping_force(&params.damping, &state.nu)
        - restoring_force(params, &state.eta)
}

/// Solves `M nu_dot = tau - C(nu) nu - d(nu) - g(eta)` over all six DOFs.
pub fn forward_dynamics(
    params: &VehicleParams,
    state: &VehicleState,
    tau: &Vector6<f64>,
) -> Result<Vector6<f64>> {
    let chol = Cholesky::new(params.mass).ok_or(Error::SingularMass)?;
    Ok(chol.solve(&net_force(params, state, tau)))
}

/// Forward dynamics restricted to the free DOFs: clamped DOFs have zero
/// acceleration and the constraint absorbs their equations. Equals
/// [`forward_dynamics`] when every DOF is free.
pub fn constrained_dynamics(
    params: &VehicleParams,
    state: &VehicleState,
    tau: &Vector6<f64>,
) -> Result<Vector6<f64>> {
    if params.free_dofs.iter().all(|&f| f) {
        return forward_dynamics(params, state, tau);
    }
    let free = params.free_indices();
    let n = free.len();
    let rhs_full = net_force(params, state, tau);
    let reduced = nalgebra::DMatrix::from_fn(n, n, |i, j| params.mass[(free[i], free[j])]);
    let rhs = nalgebra::DVector::from_fn(n, |i, _| rhs_full[free[i]]);
    let chol = Cholesky::new(reduced).ok_or(Error::SingularMass)?;
    let sol = chol.solve(&rhs);
    let mut nu_dot = Vector6::zeros();
    for (i, &dof) in free.iter().enumerate() {
        nu_dot[dof] = sol[i];
    }
    Ok(nu_dot)
}

/// Time derivative of the full state `[eta_dot, nu_dot]` under the given
/// thruster command, honoring the clamped DOFs.
pub fn state_derivative(
    params: &VehicleParams,
    state: &VehicleState,
    input: &ControlInput,
) -> Result<SVector<f64, 12>> {
    let j = euler_transform(&state.eta)?;
    let tau = thruster_forces(params, input);
    let nu_dot = constrained_dynamics(params, state, &tau)?;
    let eta_dot = j * state.nu;
    let mut x = SVector::<f64, 12>::zeros();
    x.fixed_rows_mut::<6>(0).copy_from(&eta_dot);
    x.fixed_rows_mut::<6>(6).copy_from(&nu_dot);
    Ok(x)
}

/// Kinetic energy `0.5 nu^T M nu`.
pub fn kinetic_energy(params: &VehicleParams, nu: &Vector6<f64>) -> f64 {
    0.5 * nu.dot(&(params.mass * nu))
}
