//! Finite-time minimum-energy transport.
//!
//! A linear pair `(A, B)` is driven from `chi0` to `chi_star` in exactly `tau`
//! seconds by the open-loop input of least `L2` energy. Unicycle agents reach
//! the linear setting through the change of variables
//! `chi = (x, v cos(theta), y, v sin(theta))` and a dynamic compensator, which
//! together turn the unicycle into two decoupled double integrators.

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::divergence::Pose;
use crate::linalg::{wrap_two_pi, Vec2};
use crate::{Error, Result};

/// Smallest speed the compensator accepts; its turn rate divides by `v`.
pub const V_MIN: f64 = 0.05;

const DIVERGENCE_LIMIT: f64 = 1e12;
const GRAMIAN_REL_TOL: f64 = 1e-10;
const GRAMIAN_MAX_PANELS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                found: b.nrows(),
            });
        }
        if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("system matrices must be finite".into()));
        }
        Ok(LinearSystem { a, b })
    }

    /// `axes` decoupled double integrators with state
    /// `(p_1, v_1, p_2, v_2, ...)` and one acceleration input per axis.
    pub fn double_integrator(axes: usize) -> Self {
        let n = 2 * axes;
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, axes);
        for k in 0..axes {
            a[(2 * k, 2 * k + 1)] = 1.0;
            b[(2 * k + 1, k)] = 1.0;
        }
        LinearSystem { a, b }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn squares_to_zero(&self) -> bool {
        (&self.a * &self.a).iter().all(|&x| x == 0.0)
    }
}

/// `e^{A t}`. Exact `I + A t` when `A^2 = 0`, scaling and squaring otherwise.
pub fn state_transition(sys: &LinearSystem, t: f64) -> DMatrix<f64> {
    let n = sys.state_dim();
    if sys.squares_to_zero() {
        DMatrix::identity(n, n) + &sys.a * t
    } else {
        (&sys.a * t).exp()
    }
}

/// Controllability Gramian `int_0^tau e^{As} B B^T e^{A^T s} ds` by composite
/// Simpson with panel doubling.
pub fn gramian(sys: &LinearSystem, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {tau}")));
    }
    let bbt = &sys.b * sys.b.transpose();
    let integrand = |s: f64| {
        let e = state_transition(sys, s);
        &e * &bbt * e.transpose()
    };
    let simpson = |panels: usize| {
        let h = tau / panels as f64;
        let mut acc = integrand(0.0) + integrand(tau);
        for j in 1..panels {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            acc += integrand(j as f64 * h) * w;
        }
        acc * (h / 3.0)
    };

    let mut panels = 2;
    let mut current = simpson(panels);
    loop {
        panels *= 2;
        let next = simpson(panels);
        let scale = next.amax().max(f64::MIN_POSITIVE);
        let change = (&next - &current).amax();
        current = next;
        if change <= GRAMIAN_REL_TOL * scale || panels >= GRAMIAN_MAX_PANELS {
            break;
        }
    }
    let g = (&current + current.transpose()) * 0.5;

    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Uncontrollable { tau });
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportTask {
    pub chi0: DVector<f64>,
    pub chi_star: DVector<f64>,
    pub tau: f64,
    pub t0: f64,
}

impl TransportTask {
    pub fn new(chi0: DVector<f64>, chi_star: DVector<f64>, tau: f64, t0: f64) -> Result<Self> {
        if chi0.len() != chi_star.len() {
            return Err(Error::DimensionMismatch {
                expected: chi0.len(),
                found: chi_star.len(),
            });
        }
        if !(tau > 0.0 && tau.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidInput(format!(
                "transport window needs tau > 0 and finite t0, got tau = {tau}, t0 = {t0}"
            )));
        }
        Ok(TransportTask {
            chi0,
            chi_star,
            tau,
            t0,
        })
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.tau
    }
}

/// Precomputed minimum-energy law for one task.
#[derive(Debug, Clone)]
pub struct MinEnergyController {
    sys: LinearSystem,
    task: TransportTask,
    /// `G^{-1} (chi_star - e^{A tau} chi0)`.
    gain: DVector<f64>,
    energy: f64,
}

impl MinEnergyController {
    pub fn new(sys: &LinearSystem, task: &TransportTask) -> Result<Self> {
        if task.chi0.len() != sys.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.state_dim(),
                found: task.chi0.len(),
            });
        }
        let g = gramian(sys, task.tau)?;
        let gap = &task.chi_star - state_transition(sys, task.tau) * &task.chi0;
        let chol = g.cholesky().ok_or(Error::Uncontrollable { tau: task.tau })?;
        let gain = chol.solve(&gap);
        let energy = gap.dot(&gain);
        Ok(MinEnergyController {
            sys: sys.clone(),
            task: task.clone(),
            gain,
            energy,
        })
    }

    pub fn task(&self) -> &TransportTask {
        &self.task
    }

    /// `u(t) = B^T e^{A^T (t0 + tau - t)} gain`.
    pub fn input(&self, t: f64) -> Result<DVector<f64>> {
        let (start, end) = (self.task.t0, self.task.end());
        let slack = 1e-12 * (1.0 + end.abs());
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::OutsideWindow { t, start, end });
        }
        let e = state_transition(&self.sys, end - t);
        Ok(self.sys.b.transpose() * e.transpose() * &self.gain)
    }

    /// Minimum control energy, the Gramian quadratic form of the gap.
    pub fn energy(&self) -> f64 {
        self.energy
    }
}

/// One-shot evaluation of the minimum-energy input.
pub fn min_energy_input(sys: &LinearSystem, task: &TransportTask, t: f64) -> Result<DVector<f64>> {
    MinEnergyController::new(sys, task)?.input(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<S> {
    pub t: f64,
    pub state: S,
    pub input: DVector<f64>,
}

/// Uniformly sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<S> {
    pub dt: f64,
    pub samples: Vec<Sample<S>>,
}

impl<S> Trajectory<S> {
    pub fn last(&self) -> &Sample<S> {
        self.samples.last().expect("trajectories hold at least two samples")
    }

    /// `int |u|^2 dt` from the sampled inputs: Simpson, with a 3/8 panel at
    /// the end when the step count is odd.
    pub fn energy(&self) -> f64 {
        let f: Vec<f64> = self.samples.iter().map(|s| s.input.norm_squared()).collect();
        let steps = f.len() - 1;
        let h = self.dt;
        let (simpson_steps, tail) = match steps {
            1 => return 0.5 * h * (f[0] + f[1]),
            s if s % 2 == 0 => (s, 0.0),
            s => {
                let j = s - 3;
                (j, 3.0 * h / 8.0 * (f[j] + 3.0 * f[j + 1] + 3.0 * f[j + 2] + f[j + 3]))
            }
        };
        let mut acc = 0.0;
        for j in (0..simpson_steps).step_by(2) {
            acc += f[j] + 4.0 * f[j + 1] + f[j + 2];
        }
        acc * h / 3.0 + tail
    }
}

fn step_count(tau: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || dt > tau / 100.0 * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(format!(
            "time step {dt} must be positive and at most tau/100 = {}",
            tau / 100.0
        )));
    }
    Ok((tau / dt - 1e-9).ceil() as usize)
}

/// RK4 integration of `chi' = A chi + B u(t)` under the minimum-energy input.
/// The step is shrunk slightly if needed so that it divides `tau`.
pub fn simulate_linear(sys: &LinearSystem, task: &TransportTask, dt: f64) -> Result<Trajectory<DVector<f64>>> {
    let ctrl = MinEnergyController::new(sys, task)?;
    let steps = step_count(task.tau, dt)?;
    let h = task.tau / steps as f64;
    let f = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> { Ok(&sys.a * x + &sys.b * ctrl.input(t)?) };

    let mut x = task.chi0.clone();
    let mut samples = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let t = task.t0 + j as f64 * h;
        samples.push(Sample {
            t,
            state: x.clone(),
            input: ctrl.input(t)?,
        });
        if j == steps {
            break;
        }
        let k1 = f(t, &x)?;
        let k2 = f(t + h / 2.0, &(&x + &k1 * (h / 2.0)))?;
        let k3 = f(t + h / 2.0, &(&x + &k2 * (h / 2.0)))?;
        let k4 = f(t + h, &(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !(x.amax() <= DIVERGENCE_LIMIT) {
            return Err(Error::IntegrationDiverged { t: t + h });
        }
    }
    Ok(Trajectory { dt: h, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicycleState {
    pub position: Vec2,
    /// Radians.
    pub heading: f64,
    pub speed: f64,
}

impl UnicycleState {
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Self {
        UnicycleState {
            position,
            heading,
            speed,
        }
    }
}

/// `(x, v cos(theta), y, v sin(theta))`.
pub fn linearize_unicycle(s: &UnicycleState) -> Vector4<f64> {
    Vector4::new(
        s.position.x,
        s.speed * s.heading.cos(),
        s.position.y,
        s.speed * s.heading.sin(),
    )
}

/// Inverse of [`linearize_unicycle`] for speeds of at least `v_min`. The
/// heading comes back in `[0, 2 pi)` and the speed is non-negative.
pub fn delinearize_unicycle(chi: &Vector4<f64>, v_min: f64) -> Result<UnicycleState> {
    let speed = chi[1].hypot(chi[3]);
    if speed < v_min {
        return Err(Error::Singularity {
            t: f64::NAN,
            speed,
            v_min,
        });
    }
    Ok(UnicycleState {
        position: Vec2::new(chi[0], chi[2]),
        heading: wrap_two_pi(chi[3].atan2(chi[1])),
        speed,
    })
}

type UnicycleVec = Vector4<f64>; // (x, y, theta, v)

fn unicycle_rhs(s: &UnicycleVec, u: &Vec2, t: f64, v_min: f64) -> Result<UnicycleVec> {
    let (theta, v) = (s[2], s[3]);
    if v.abs() < v_min || !v.is_finite() {
        return Err(Error::Singularity { t, speed: v, v_min });
    }
    let (sin, cos) = theta.sin_cos();
    Ok(Vector4::new(
        v * cos,
        v * sin,
        (u.y * cos - u.x * sin) / v,
        u.x * cos + u.y * sin,
    ))
}

fn compensated_rk4<F>(s: &UnicycleState, t: f64, dt: f64, v_min: f64, u: F) -> Result<UnicycleState>
where
    F: Fn(f64) -> Result<Vec2>,
{
    let x = Vector4::new(s.position.x, s.position.y, s.heading, s.speed);
    let k1 = unicycle_rhs(&x, &u(t)?, t, v_min)?;
    let k2 = unicycle_rhs(&(x + k1 * (dt / 2.0)), &u(t + dt / 2.0)?, t + dt / 2.0, v_min)?;
    let k3 = unicycle_rhs(&(x + k2 * (dt / 2.0)), &u(t + dt / 2.0)?, t + dt / 2.0, v_min)?;
    let k4 = unicycle_rhs(&(x + k3 * dt), &u(t + dt)?, t + dt, v_min)?;
    let n = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if n.iter().any(|c| !c.is_finite()) || n.amax() > DIVERGENCE_LIMIT {
        return Err(Error::IntegrationDiverged { t: t + dt });
    }
    if n[3].abs() < v_min {
        return Err(Error::Singularity {
            t: t + dt,
            speed: n[3],
            v_min,
        });
    }
    Ok(UnicycleState::new(Vec2::new(n[0], n[1]), n[2], n[3]))
}

/// One RK4 step of the unicycle under the compensator with a constant
/// linear-coordinate input `u`:
/// `v' = u1 cos(theta) + u2 sin(theta)`, `omega = (u2 cos(theta) - u1 sin(theta)) / v`.
pub fn compensator_step(s: &UnicycleState, u: &Vec2, dt: f64) -> Result<UnicycleState> {
    compensated_rk4(s, 0.0, dt, V_MIN, |_| Ok(*u))
}

/// Unicycle trajectory plus the smallest speed met on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub trajectory: Trajectory<UnicycleState>,
    pub min_speed: f64,
    pub energy: f64,
}

/// Drives a unicycle from `agent` to `target` in `tau` seconds, arriving with
/// speed `v_star` along the target heading. The minimum-energy input of the
/// linearized double integrator is applied through the compensator.
pub fn plan_transport(agent: &UnicycleState, target: &Pose, v_star: f64, tau: f64, dt: f64) -> Result<TransportPlan> {
    if !(v_star > 0.0 && v_star.is_finite()) {
        return Err(Error::InvalidInput(format!("arrival speed must be positive, got {v_star}")));
    }
    if agent.speed.abs() < V_MIN {
        return Err(Error::Singularity {
            t: 0.0,
            speed: agent.speed,
            v_min: V_MIN,
        });
    }
    let sys = LinearSystem::double_integrator(2);
    let goal = UnicycleState::new(target.position, target.heading, v_star);
    let chi0 = linearize_unicycle(agent);
    let chi_star = linearize_unicycle(&goal);
    let task = TransportTask::new(
        DVector::from_column_slice(chi0.as_slice()),
        DVector::from_column_slice(chi_star.as_slice()),
        tau,
        0.0,
    )?;
    let ctrl = MinEnergyController::new(&sys, &task)?;
    let steps = step_count(tau, dt)?;
    let h = tau / steps as f64;
    let u = |t: f64| ctrl.input(t).map(|u| Vec2::new(u[0], u[1]));

    let mut s = *agent;
    let mut min_speed = s.speed.abs();
    let mut samples = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let t = j as f64 * h;
        samples.push(Sample {
            t,
            state: UnicycleState {
                heading: wrap_two_pi(s.heading),
                ..s
            },
            input: ctrl.input(t)?,
        });
        if j == steps {
            break;
        }
        s = compensated_rk4(&s, t, h, V_MIN, u)?;
        min_speed = min_speed.min(s.speed.abs());
    }
    Ok(TransportPlan {
        trajectory: Trajectory { dt: h, samples },
        min_speed,
        energy: ctrl.energy(),
    })
}
