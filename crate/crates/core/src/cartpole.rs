//! Cart-pole plant with an unknown weight on the cart.
//!
//! The machine balances the pole by forcing the angle to decay as
//! `θ(t+1) = η θ(t)` under a model that ignores the weight; the human
//! removes the weight (`u_H = -m_c`) when it sees it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EstimationError, PlantError};
use crate::simkernel::{Case, Plant, StepRecord};
use crate::stability::LyapunovGains;

/// Force applied by the machine when `|cos θ|` is too small for the policy
/// to be evaluated (N).
pub const FORCE_LIMIT: f64 = 1e4;

/// Angles below this do not count in the Lyapunov-like function.
pub const V_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    /// Cart position (m).
    pub x: f64,
    /// Cart velocity (m/s).
    pub x_dot: f64,
    /// Pole angle from upright (rad).
    pub theta: f64,
    /// Pole angular velocity (rad/s).
    pub theta_dot: f64,
    /// Unknown weight on the cart (kg).
    pub m_c: f64,
}

impl CartPoleState {
    /// `(0, 0, π/6, 0, 5)`: tilted pole with the weight on the cart.
    pub fn case_study() -> Self {
        Self {
            theta: std::f64::consts::FRAC_PI_6,
            m_c: 5.0,
            ..Self::default()
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.x, self.x_dot, self.theta, self.theta_dot, self.m_c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    /// Pole mass (kg), concentrated at the end.
    pub pole_mass_kg: f64,
    /// Cart mass (kg).
    pub cart_mass_kg: f64,
    pub gravity_m_s2: f64,
    pub pole_length_m: f64,
    /// Pole damping `c`.
    pub pole_damping: f64,
    /// Cart damping `b_d`.
    pub cart_damping: f64,
    pub sample_period_s: f64,
    /// Angle decay factor targeted by the machine.
    pub eta: f64,
    /// Mass of the weight that reappears on the cart (kg).
    pub weight_kg: f64,
    /// Per-slot probability that a removed weight reappears.
    pub reappear_prob: f64,
    pub initial: CartPoleState,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            pole_mass_kg: 2.0,
            cart_mass_kg: 10.0,
            gravity_m_s2: 9.8,
            pole_length_m: 6.0,
            pole_damping: 0.1,
            cart_damping: 0.1,
            sample_period_s: 0.05,
            eta: 0.7,
            weight_kg: 5.0,
            reappear_prob: 0.02,
            initial: CartPoleState::case_study(),
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("pole_mass_kg", self.pole_mass_kg),
            ("cart_mass_kg", self.cart_mass_kg),
            ("gravity_m_s2", self.gravity_m_s2),
            ("pole_length_m", self.pole_length_m),
            ("sample_period_s", self.sample_period_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("pole_damping", self.pole_damping),
            ("cart_damping", self.cart_damping),
            ("weight_kg", self.weight_kg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(PlantError::InvalidParams(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.reappear_prob) {
            return Err(PlantError::InvalidParams(format!(
                "reappear_prob must lie in [0, 1], got {}",
                self.reappear_prob
            )));
        }
        Ok(())
    }

    /// Pole moment of inertia `I = M_p L_p² / 4`.
    pub fn inertia(&self) -> f64 {
        self.pole_mass_kg * self.pole_length_m.powi(2) / 4.0
    }
}

/// The cart-pole plant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self, PlantError> {
        params.validate()?;
        Ok(Self { params })
    }

    /// Angular and cart accelerations `(θ̈, ẍ)` from the two equations of
    /// motion, with the given weight on the cart.
    pub fn accelerations(&self, s: &CartPoleState, u_m: f64, m_c: f64) -> Result<(f64, f64), PlantError> {
        let p = &self.params;
        let ml = p.pole_mass_kg * p.pole_length_m;
        let (sin, cos) = s.theta.sin_cos();
        // [a11 a12; a21 a22] (θ̈, ẍ) = (r1, r2)
        let a11 = 2.0 * self.params.inertia() + ml * p.pole_length_m;
        let a12 = ml * cos;
        let a22 = p.cart_mass_kg + p.pole_mass_kg + m_c;
        let r1 = 2.0 * ml * p.gravity_m_s2 * sin - 2.0 * p.pole_damping * s.theta_dot;
        let r2 = ml * sin * s.theta_dot.powi(2) - p.cart_damping * s.x_dot + u_m;
        let det = a11 * a22 - a12 * a12;
        if !(det > 0.0) {
            return Err(PlantError::Singular(det));
        }
        Ok(((r1 * a22 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det))
    }

    /// One sampling period: explicit Euler on the velocities, then the
    /// positions advance with the updated velocities.
    pub fn step_dynamics<R: Rng + ?Sized>(
        &self,
        s: &CartPoleState,
        u_m: f64,
        u_h: f64,
        disturbance: &mut R,
    ) -> Result<CartPoleState, PlantError> {
        let p = &self.params;
        let ts = p.sample_period_s;
        let (theta_dd, x_dd) = self.accelerations(s, u_m, s.m_c)?;
        let theta_dot = s.theta_dot + ts * theta_dd;
        let x_dot = s.x_dot + ts * x_dd;
        // One draw per slot keeps the disturbance stream aligned across runs.
        let reappears = disturbance.gen::<f64>() < p.reappear_prob;
        let m_c = if s.m_c != 0.0 {
            // A stale removal command cannot make the mass negative.
            (s.m_c + u_h).clamp(0.0, p.weight_kg.max(s.m_c))
        } else if reappears {
            p.weight_kg
        } else {
            0.0
        };
        let next = CartPoleState {
            x: s.x + ts * x_dot,
            x_dot,
            theta: s.theta + ts * theta_dot,
            theta_dot,
            m_c,
        };
        if next.as_array().iter().any(|v| !v.is_finite()) {
            return Err(PlantError::NonFinite);
        }
        Ok(next)
    }

    /// `Γ = (M_c + M_p)(2I + M_p L_p²) - (M_p L_p cos θ)²`.
    pub fn gamma(&self, theta: f64) -> f64 {
        let p = &self.params;
        let ml = p.pole_mass_kg * p.pole_length_m;
        (p.cart_mass_kg + p.pole_mass_kg) * (2.0 * p.inertia() + ml * p.pole_length_m) - (ml * theta.cos()).powi(2)
    }

    /// Force that makes `θ(t+1) = η θ(t)` under the weight-free model.
    ///
    /// Unbounded in the operating envelope; within `1e-6` of `cos θ = 0` the
    /// policy is singular and a saturated push of [`FORCE_LIMIT`] is used.
    pub fn machine_force(&self, s: &CartPoleState) -> f64 {
        let p = &self.params;
        let ml = p.pole_mass_kg * p.pole_length_m;
        let (sin, cos) = s.theta.sin_cos();
        let mass = p.cart_mass_kg + p.pole_mass_kg;
        let ts = p.sample_period_s;
        if cos.abs() < 1e-6 {
            log::warn!("machine policy at cos(theta) = {cos:e}; saturating");
            return (-FORCE_LIMIT * s.theta.signum() * cos.signum()).clamp(-FORCE_LIMIT, FORCE_LIMIT);
        }
        let mlc = ml * cos;
        let gamma = self.gamma(s.theta);
        let u = 2.0 * ml * p.gravity_m_s2 * sin * mass / mlc - 2.0 * p.pole_damping * s.theta_dot * mass / mlc
            + p.cart_damping * s.x_dot
            - ml * s.theta_dot.powi(2) * sin
            - (p.eta - 1.0) * s.theta * gamma / (ts * ts * mlc)
            + s.theta_dot * gamma / (ts * mlc);
        u
    }
}

impl Plant for CartPole {
    type State = CartPoleState;

    fn initial_state(&self) -> CartPoleState {
        self.params.initial
    }

    fn step<R: Rng + ?Sized>(
        &self,
        state: &CartPoleState,
        u_h: f64,
        u_m: f64,
        disturbance: &mut R,
    ) -> Result<CartPoleState, PlantError> {
        self.step_dynamics(state, u_m, u_h, disturbance)
    }

    fn machine_policy(&self, state: &CartPoleState) -> f64 {
        self.machine_force(state)
    }

    fn human_policy(&self, observed: &CartPoleState) -> f64 {
        human_policy(observed)
    }

    fn norm(&self, state: &CartPoleState) -> f64 {
        state.as_array().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Remove whatever weight was seen.
pub fn human_policy(observed: &CartPoleState) -> f64 {
    -observed.m_c
}

/// Diagonal quadratic cost weights over `(x, ẋ, θ, θ̇, m_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights(pub [f64; 5]);

impl CostWeights {
    /// Only the pole angle is penalized: `J = θ²`.
    pub fn angle_only() -> Self {
        Self([0.0, 0.0, 1.0, 0.0, 0.0])
    }

    pub fn new(diag: [f64; 5]) -> Result<Self, PlantError> {
        if diag.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || diag.iter().all(|w| *w == 0.0) {
            return Err(PlantError::InvalidParams(
                "cost weights must be non-negative and not all zero".into(),
            ));
        }
        Ok(Self(diag))
    }
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::angle_only()
    }
}

/// `xᵀ P x` with diagonal `P`.
pub fn cost(state: &CartPoleState, weights: &CostWeights) -> f64 {
    state.as_array().iter().zip(weights.0).map(|(x, w)| w * x * x).sum()
}

/// `V(θ) = |θ|` for `|θ| ≥ 0.05`, else 0.
pub fn lyapunov_v(state: &CartPoleState) -> f64 {
    let a = state.theta.abs();
    if a >= V_THRESHOLD {
        a
    } else {
        0.0
    }
}

/// One labelled transition `V(t) → V(t+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSample {
    pub case: Case,
    pub v_now: f64,
    pub v_next: f64,
}

/// Transition samples from consecutive step records.
pub fn gain_samples(records: &[StepRecord<CartPoleState>]) -> Vec<GainSample> {
    records
        .windows(2)
        .map(|w| GainSample {
            case: w[0].case,
            v_now: lyapunov_v(&w[0].state),
            v_next: lyapunov_v(&w[1].state),
        })
        .collect()
}

/// Per-case maximum of `V(t+1) / V(t)` over samples with `V(t) > 0`.
pub fn estimate_gains(samples: &[GainSample]) -> Result<LyapunovGains, EstimationError> {
    let mut best = [f64::NEG_INFINITY; 4];
    for s in samples.iter().filter(|s| s.v_now > 0.0) {
        let i = Case::ALL.iter().position(|c| *c == s.case).expect("known case");
        best[i] = best[i].max(s.v_next / s.v_now);
    }
    for (i, case) in Case::ALL.iter().enumerate() {
        if best[i] == f64::NEG_INFINITY {
            return Err(EstimationError::InsufficientData { case: case.name() });
        }
    }
    Ok(LyapunovGains {
        alpha_hm: best[0],
        alpha_m: best[1],
        alpha_h: best[2],
        alpha: best[3],
    })
}
