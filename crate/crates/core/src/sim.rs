//! Fixed-step RK4 integration of the governing equations, with energy
//! monitoring, trajectory comparison, and CSV export.
//!
//! Jets are lowered to floating-point polynomial evaluators once, before
//! integration; the truncated series are the dynamics being integrated, so
//! trajectory agreement between the fed-back open loop and the closed loop
//! degrades exactly with the truncation order.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::geometry::{christoffel_of, MechanicalSystem};
use crate::jet::Jet;
use crate::jetmat::JetMatrix;
use crate::shaping::{FeedbackLaw, ShapingSolution};

/// Which metric/potential pair the energy column reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyReference {
    Open,
    Closed,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub initial_position: Vec<f64>,
    pub initial_velocity: Vec<f64>,
    pub energy_reference: EnergyReference,
}

impl SimConfig {
    pub fn new(initial_position: Vec<f64>, initial_velocity: Vec<f64>, horizon: f64) -> Self {
        Self {
            step: 1e-3,
            horizon,
            initial_position,
            initial_velocity,
            energy_reference: EnergyReference::Open,
        }
    }

    fn validate(&self, n: usize) -> Result<usize> {
        if !(self.step > 0.0) {
            return Err(Error::Simulator("step must be positive".into()));
        }
        if self.horizon < self.step {
            return Err(Error::Simulator("horizon must be at least one step".into()));
        }
        if self.initial_position.len() != n || self.initial_velocity.len() != n {
            return Err(Error::Simulator(format!(
                "initial state must have {n} positions and {n} velocities"
            )));
        }
        Ok((self.horizon / self.step).round() as usize)
    }
}

/// Time-sampled states with energy readings.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `[q1..qn, v1..vn]` per sample.
    pub states: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub diverged: bool,
}

const DIVERGENCE_CUTOFF: f64 = 1e6;

#[derive(Debug, Clone)]
struct PolyF64 {
    terms: Vec<(Vec<u32>, f64)>,
}

impl PolyF64 {
    fn from_jet(jet: &Jet) -> Self {
        use num::{ToPrimitive, Zero};
        let terms = jet
            .terms()
            .filter(|(_, c)| !c.is_zero())
            .map(|(alpha, c)| (alpha.exps().to_vec(), c.to_f64().expect("coefficient in f64 range")))
            .collect();
        Self { terms }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (exps, c) in &self.terms {
            let mut t = *c;
            for (xi, &e) in x.iter().zip(exps) {
                for _ in 0..e {
                    t *= xi;
                }
            }
            acc += t;
        }
        acc
    }
}

struct LoweredFeedback {
    n: usize,
    kin: Vec<PolyF64>,
    pot: Vec<PolyF64>,
}

impl LoweredFeedback {
    fn from_law(law: &FeedbackLaw) -> Self {
        Self {
            n: law.dim(),
            kin: law.u_kin().iter().map(PolyF64::from_jet).collect(),
            pot: law.u_pot().iter().map(PolyF64::from_jet).collect(),
        }
    }

    fn covector(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for m in 0..n {
            let mut acc = self.pot[m].eval(q);
            for j in 0..n {
                for k in 0..n {
                    acc += self.kin[(m * n + j) * n + k].eval(q) * v[j] * v[k];
                }
            }
            out[m] = -acc;
        }
    }
}

struct LoweredDynamics {
    n: usize,
    gamma: Vec<PolyF64>,
    sharp_grad: Vec<PolyF64>,
    ginv: Vec<PolyF64>,
    feedback: Option<LoweredFeedback>,
}

impl LoweredDynamics {
    fn from_pair(metric: &JetMatrix, potential: &Jet) -> Result<Self> {
        let n = metric.nrows();
        let gamma_field = christoffel_of(metric)
            .map_err(|_| Error::Simulator("metric singular at the origin".into()))?;
        let ginv_jets = metric
            .inverse()
            .map_err(|_| Error::Simulator("metric singular at the origin".into()))?;
        let grad = potential.gradient();
        let mut gamma = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    gamma.push(PolyF64::from_jet(gamma_field.get(i, j, k)));
                }
            }
        }
        let mut sharp_grad = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = Jet::zero(metric.dim(), grad[0].order());
            for j in 0..n {
                acc = acc.add(&ginv_jets.get(i, j).mul(&grad[j]));
            }
            sharp_grad.push(PolyF64::from_jet(&acc));
        }
        let mut ginv = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                ginv.push(PolyF64::from_jet(ginv_jets.get(i, j)));
            }
        }
        Ok(Self {
            n,
            gamma,
            sharp_grad,
            ginv,
            feedback: None,
        })
    }

    fn acceleration(&self, q: &[f64], v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut force = vec![0.0; n];
        if let Some(fb) = &self.feedback {
            fb.covector(q, v, &mut force);
        }
        for i in 0..n {
            let mut a = 0.0;
            for j in 0..n {
                for k in 0..n {
                    a -= self.gamma[(i * n + j) * n + k].eval(q) * v[j] * v[k];
                }
            }
            a -= self.sharp_grad[i].eval(q);
            if self.feedback.is_some() {
                for j in 0..n {
                    a += self.ginv[i * n + j].eval(q) * force[j];
                }
            }
            out[i] = a;
        }
    }
}

struct EnergyEvaluator {
    n: usize,
    metric: Vec<PolyF64>,
    potential: PolyF64,
}

impl EnergyEvaluator {
    fn from_pair(metric: &JetMatrix, potential: &Jet) -> Self {
        let n = metric.nrows();
        let entries = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| PolyF64::from_jet(metric.get(i, j)))
            .collect();
        Self {
            n,
            metric: entries,
            potential: PolyF64::from_jet(potential),
        }
    }

    fn energy(&self, q: &[f64], v: &[f64]) -> f64 {
        let n = self.n;
        let mut kinetic = 0.0;
        for i in 0..n {
            for j in 0..n {
                kinetic += self.metric[i * n + j].eval(q) * v[i] * v[j];
            }
        }
        0.5 * kinetic + self.potential.eval(q)
    }
}

fn integrate(
    dynamics: &LoweredDynamics,
    energy: &EnergyEvaluator,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = dynamics.n;
    let steps = cfg.validate(n)?;
    let h = cfg.step;
    let mut state = vec![0.0; 2 * n];
    state[..n].copy_from_slice(&cfg.initial_position);
    state[n..].copy_from_slice(&cfg.initial_velocity);

    let deriv = |s: &[f64], out: &mut [f64]| {
        out[..n].copy_from_slice(&s[n..]);
        let (q, v) = s.split_at(n);
        let mut acc = vec![0.0; n];
        dynamics.acceleration(q, v, &mut acc);
        out[n..].copy_from_slice(&acc);
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    let mut diverged = false;

    let mut k1 = vec![0.0; 2 * n];
    let mut k2 = vec![0.0; 2 * n];
    let mut k3 = vec![0.0; 2 * n];
    let mut k4 = vec![0.0; 2 * n];
    let mut tmp = vec![0.0; 2 * n];

    for step in 0..=steps {
        times.push(step as f64 * h);
        states.push(state.clone());
        energies.push(energy.energy(&state[..n], &state[n..]));
        if step == steps {
            break;
        }
        deriv(&state, &mut k1);
        for i in 0..2 * n {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        deriv(&tmp, &mut k2);
        for i in 0..2 * n {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        deriv(&tmp, &mut k3);
        for i in 0..2 * n {
            tmp[i] = state[i] + h * k3[i];
        }
        deriv(&tmp, &mut k4);
        for i in 0..2 * n {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if state.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_CUTOFF) {
            diverged = true;
            break;
        }
    }

    Ok(Trajectory {
        times,
        states,
        energies,
        diverged,
    })
}

/// Integrates the open loop `nabla^ol gamma' gamma' = -G# dV_ol + G# u_shp`
/// with the solution's feedback (or unforced when absent). The energy column
/// follows `cfg.energy_reference`.
pub fn simulate_open_with_feedback(
    sys: &MechanicalSystem,
    solution: Option<&ShapingSolution>,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let mut dynamics = LoweredDynamics::from_pair(sys.metric(), sys.potential())?;
    if let Some(sol) = solution {
        dynamics.feedback = Some(LoweredFeedback::from_law(&crate::shaping::assemble_feedback(
            sys, sol,
        )));
    }
    let energy = match cfg.energy_reference {
        EnergyReference::Open => EnergyEvaluator::from_pair(sys.metric(), sys.potential()),
        EnergyReference::Closed => {
            let sol = solution.ok_or_else(|| {
                Error::Simulator("closed energy reference needs a solution".into())
            })?;
            EnergyEvaluator::from_pair(&sol.g_cl, &sol.v_cl)
        }
    };
    integrate(&dynamics, &energy, cfg)
}

/// Integrates the unforced closed loop for the solution's pair.
pub fn simulate_closed(solution: &ShapingSolution, cfg: &SimConfig) -> Result<Trajectory> {
    simulate_closed_pair(&solution.g_cl, &solution.v_cl, cfg)
}

/// Closed-loop integration for an explicit metric/potential pair.
pub fn simulate_closed_pair(
    metric: &JetMatrix,
    potential: &Jet,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let dynamics = LoweredDynamics::from_pair(metric, potential)?;
    let energy = EnergyEvaluator::from_pair(metric, potential);
    integrate(&dynamics, &energy, cfg)
}

/// Sup-norm deviation over samples; the time grids must agree exactly.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| x != y)
    {
        return Err(Error::Simulator("trajectory time grids differ".into()));
    }
    let mut worst: f64 = 0.0;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for (x, y) in sa.iter().zip(sb) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// `max_t |E(t) - E(0)|` for the energy of the given pair along the samples.
pub fn energy_drift(traj: &Trajectory, metric: &JetMatrix, potential: &Jet) -> f64 {
    let n = metric.nrows();
    let eval = EnergyEvaluator::from_pair(metric, potential);
    let e0 = eval.energy(&traj.states[0][..n], &traj.states[0][n..]);
    traj.states
        .iter()
        .map(|s| (eval.energy(&s[..n], &s[n..]) - e0).abs())
        .fold(0.0, f64::max)
}

/// CSV export: header `t,q1..qn,v1..vn,E`, 17 significant digits.
pub fn write_csv(traj: &Trajectory, n: usize, out: &mut dyn Write) -> io::Result<()> {
    write!(out, "t")?;
    for i in 1..=n {
        write!(out, ",q{i}")?;
    }
    for i in 1..=n {
        write!(out, ",v{i}")?;
    }
    writeln!(out, ",E")?;
    for (idx, t) in traj.times.iter().enumerate() {
        write!(out, "{}", fmt17(*t))?;
        for x in &traj.states[idx] {
            write!(out, ",{}", fmt17(*x))?;
        }
        writeln!(out, ",{}", fmt17(traj.energies[idx]))?;
    }
    Ok(())
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{rat, ratio};
    use crate::jetmat::JetMatrix;

    fn flat_free() -> MechanicalSystem {
        MechanicalSystem::new(JetMatrix::identity(2, 2, 3), Jet::zero(2, 3)).unwrap()
    }

    fn harmonic() -> MechanicalSystem {
        let half = ratio(1, 2);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        MechanicalSystem::new(
            JetMatrix::identity(2, 2, 3),
            q1.mul(&q1).add(&q2.mul(&q2)).scale(&half),
        )
        .unwrap()
    }

    #[test]
    fn free_particle_goes_straight() {
        let cfg = SimConfig::new(vec![0.0, 0.0], vec![1.0, 0.0], 1.0);
        let traj = simulate_open_with_feedback(&flat_free(), None, &cfg).unwrap();
        assert!(!traj.diverged);
        assert_eq!(traj.states.len(), 1001);
        let last = traj.states.last().unwrap();
        assert!((last[0] - 1.0).abs() < 1e-10);
        assert!(last[1].abs() < 1e-10);
    }

    #[test]
    fn harmonic_period() {
        let mut cfg = SimConfig::new(vec![1.0, 0.0], vec![0.0, 0.0], 2.0 * std::f64::consts::PI);
        cfg.step = 2.0 * std::f64::consts::PI / 6284.0;
        let traj = simulate_open_with_feedback(&harmonic(), None, &cfg).unwrap();
        let last = traj.states.last().unwrap();
        assert!((last[0] - 1.0).abs() < 1e-6, "period mismatch {}", last[0]);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // halving the step cuts the endpoint error by about 16
        let run = |step: f64| {
            let mut cfg = SimConfig::new(vec![1.0, 0.0], vec![0.0, 0.0], 1.0);
            cfg.step = step;
            let traj = simulate_open_with_feedback(&harmonic(), None, &cfg).unwrap();
            let last = traj.states.last().unwrap();
            (last[0] - 1.0f64.cos()).abs()
        };
        let e1 = run(1e-2);
        let e2 = run(5e-3);
        let ratio = e1 / e2;
        assert!(
            (8.0..32.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio}"
        );
    }

    #[test]
    fn equilibrium_stays_fixed() {
        let cfg = SimConfig::new(vec![0.0, 0.0], vec![0.0, 0.0], 1.0);
        let traj = simulate_open_with_feedback(&harmonic(), None, &cfg).unwrap();
        for s in &traj.states {
            assert!(s.iter().all(|x| x.abs() < 1e-15));
        }
    }

    #[test]
    fn time_reversal_retraces() {
        let mut cfg = SimConfig::new(vec![0.4, -0.2], vec![0.1, 0.3], 1.0);
        cfg.step = 1e-3;
        let fwd = simulate_open_with_feedback(&harmonic(), None, &cfg).unwrap();
        let end = fwd.states.last().unwrap().clone();
        let mut back_cfg = cfg.clone();
        back_cfg.initial_position = end[..2].to_vec();
        back_cfg.initial_velocity = end[2..].iter().map(|v| -v).collect();
        let back = simulate_open_with_feedback(&harmonic(), None, &back_cfg).unwrap();
        let final_back = back.states.last().unwrap();
        assert!((final_back[0] - 0.4).abs() < 1e-9);
        assert!((final_back[1] + 0.2).abs() < 1e-9);
    }

    #[test]
    fn energy_drift_small_and_zero_at_rest() {
        let mut cfg = SimConfig::new(vec![0.1, 0.1], vec![0.0, 0.0], 10.0);
        cfg.step = 1e-3;
        let sys = harmonic();
        let traj = simulate_open_with_feedback(&sys, None, &cfg).unwrap();
        assert!(energy_drift(&traj, sys.metric(), sys.potential()) < 1e-8);

        let rest = SimConfig::new(vec![0.0, 0.0], vec![0.0, 0.0], 1.0);
        let traj0 = simulate_open_with_feedback(&sys, None, &rest).unwrap();
        assert_eq!(energy_drift(&traj0, sys.metric(), sys.potential()), 0.0);
    }

    #[test]
    fn closed_matches_linear_oracle() {
        // constant metric diag(1,2), quadratic potential: decoupled modes
        let g = JetMatrix::from_rat(&crate::ratmat::RatMatrix::from_i64(&[&[1, 0], &[0, 2]]), 2, 3);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let v = q1
            .mul(&q1)
            .scale(&rat(2))
            .add(&q2.mul(&q2).scale(&rat(3)));
        let mut cfg = SimConfig::new(vec![0.3, -0.2], vec![0.0, 0.0], 2.0);
        cfg.step = 1e-3;
        let traj = simulate_closed_pair(&g, &v, &cfg).unwrap();
        // q1'' = -4 q1, q2'' = -3 q2
        let w1 = 2.0f64;
        let w2 = 3.0f64.sqrt();
        let last = traj.states.last().unwrap();
        assert!((last[0] - 0.3 * (w1 * 2.0).cos()).abs() < 1e-6);
        assert!((last[1] + 0.2 * (w2 * 2.0).cos()).abs() < 1e-6);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let cfg1 = SimConfig::new(vec![0.0, 0.0], vec![0.0, 0.0], 1.0);
        let mut cfg2 = cfg1.clone();
        cfg2.horizon = 0.5;
        let a = simulate_open_with_feedback(&harmonic(), None, &cfg1).unwrap();
        let b = simulate_open_with_feedback(&harmonic(), None, &cfg2).unwrap();
        assert!(compare_trajectories(&a, &b).is_err());
        assert_eq!(compare_trajectories(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn divergence_flagged() {
        // inverted potential blows up from a large kick
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let v = q1.mul(&q1).neg().sub(&q2.mul(&q2)).scale(&rat(50));
        let sys = MechanicalSystem::new(JetMatrix::identity(2, 2, 3), v);
        // dV(0) = 0, Hessian negative: valid geometry input
        let sys = sys.unwrap();
        let mut cfg = SimConfig::new(vec![1.0, 1.0], vec![10.0, 10.0], 20.0);
        cfg.step = 1e-2;
        let traj = simulate_open_with_feedback(&sys, None, &cfg).unwrap();
        assert!(traj.diverged);
        assert!(traj.states.len() < 2001);
    }

    #[test]
    fn csv_format() {
        let cfg = SimConfig::new(vec![0.0, 0.0], vec![0.0, 0.0], 0.002);
        let traj = simulate_open_with_feedback(&harmonic(), None, &cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&traj, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,q1,q2,v1,v2,E");
        let row = lines.next().unwrap();
        assert!(row.starts_with("0.0000000000000000e0,"));
        assert_eq!(row.split(',').count(), 6);
    }
}
