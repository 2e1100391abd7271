//! Open-loop simple mechanical control systems in adapted coordinates, and
//! their Riemannian data as jets.
//!
//! Convention (fixed, not configurable): coordinates are adapted, meaning the
//! actuated codistribution is span{dq2, ..., dqn}, the single unactuated
//! direction is dq1, and the equilibrium of interest is the origin. Systems
//! not in this form are rejected at validation.

use num::Zero;

use crate::error::{Error, Result};
use crate::jet::{rat, Jet, Rat};
use crate::jetmat::JetMatrix;
use crate::ratmat::RatMatrix;

/// Open-loop system: polynomial metric and potential around the equilibrium.
#[derive(Debug, Clone)]
pub struct MechanicalSystem {
    n: usize,
    order: usize,
    metric: JetMatrix,
    potential: Jet,
}

/// Outcome of the adapted-coordinate validation. `actuated_gradient` lists
/// nonzero dq^j components (j >= 2) of dV at the origin; these are legal
/// (feedback cancels them) but worth surfacing.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub warnings: Vec<String>,
    pub actuated_gradient: Vec<(usize, Rat)>,
}

impl MechanicalSystem {
    pub fn new(metric: JetMatrix, potential: Jet) -> Result<Self> {
        Self::with_validation(metric, potential).map(|(sys, _)| sys)
    }

    pub fn with_validation(
        metric: JetMatrix,
        potential: Jet,
    ) -> Result<(Self, ValidationReport)> {
        let n = metric.nrows();
        if n < 2 {
            return Err(Error::Geometry(format!(
                "dimension {n} < 2: one degree of underactuation needs at least one actuator"
            )));
        }
        if metric.ncols() != n {
            return Err(Error::Geometry("metric matrix is not square".into()));
        }
        if metric.dim() != n || potential.dim() != n {
            return Err(Error::Geometry(
                "jet dimension does not match the system dimension".into(),
            ));
        }
        let order = metric.order().min(potential.order());
        if order < 2 {
            return Err(Error::Geometry(format!(
                "truncation order {order} < 2: Hessian data would be lost"
            )));
        }
        if !metric.is_symmetric() {
            return Err(Error::Geometry(
                "metric is not symmetric entry-wise as jets".into(),
            ));
        }
        let g0 = metric.at_origin();
        if !g0.is_positive_definite() {
            return Err(Error::Geometry(
                "metric constant term is not positive-definite".into(),
            ));
        }
        let grad0: Vec<Rat> = (0..n)
            .map(|k| potential.diff(k).constant_term())
            .collect();
        if !grad0[0].is_zero() {
            return Err(Error::Geometry(format!(
                "dV has dq1-component {} at the origin: not a controlled equilibrium",
                grad0[0]
            )));
        }
        let mut report = ValidationReport::default();
        for (j, g) in grad0.iter().enumerate().skip(1) {
            if !g.is_zero() {
                report.actuated_gradient.push((j, g.clone()));
                report.warnings.push(format!(
                    "dV has dq{}-component {} at the origin (cancelable by feedback)",
                    j + 1,
                    g
                ));
            }
        }
        let metric = JetMatrix::from_entries(
            n,
            n,
            metric.entries().iter().map(|e| e.truncated(order)).collect(),
        );
        let potential = potential.truncated(order);
        Ok((
            Self {
                n,
                order,
                metric,
                potential,
            },
            report,
        ))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn metric(&self) -> &JetMatrix {
        &self.metric
    }

    pub fn potential(&self) -> &Jet {
        &self.potential
    }

    /// `G^{-1}` as jets; `G * G^{-1} = I` to the truncation order.
    pub fn metric_inverse(&self) -> JetMatrix {
        self.metric
            .inverse()
            .expect("validated metric has invertible constant term")
    }

    pub fn christoffel(&self) -> ChristoffelField {
        christoffel_of(&self.metric).expect("validated metric has invertible constant term")
    }
}

/// Levi-Civita connection coefficients `S^i_{jk}` as jets, symmetric in the
/// lower pair.
#[derive(Debug, Clone)]
pub struct ChristoffelField {
    n: usize,
    coeffs: Vec<Jet>,
}

impl ChristoffelField {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> &Jet {
        &self.coeffs[(i * self.n + j) * self.n + k]
    }

    pub fn order(&self) -> usize {
        self.coeffs[0].order()
    }
}

/// Christoffel symbols of an arbitrary jet metric (used both for the open
/// metric and for closed-loop candidates, which may be indefinite).
pub fn christoffel_of(metric: &JetMatrix) -> Result<ChristoffelField> {
    let n = metric.nrows();
    let inv = metric
        .inverse()
        .map_err(|_| Error::Geometry("metric constant term is singular".into()))?;
    let half = num::BigRational::new(1.into(), 2.into());
    // partials[k][(l,j)] = d G_lj / d q^k
    let order = metric.order().saturating_sub(1);
    let mut coeffs = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut acc = Jet::zero(metric.dim(), order);
                for l in 0..n {
                    let bracket = metric
                        .get(l, j)
                        .diff(k)
                        .add(&metric.get(l, k).diff(j))
                        .sub(&metric.get(j, k).diff(l));
                    acc = acc.add(&inv.get(i, l).mul(&bracket));
                }
                coeffs.push(acc.scale(&half));
            }
        }
    }
    Ok(ChristoffelField { n, coeffs })
}

/// Hessian of a jet at the origin: symmetric rational matrix of second
/// partials.
pub fn hessian_at_origin(f: &Jet) -> RatMatrix {
    let n = f.dim();
    let mut h = RatMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut exps = vec![0u32; n];
            exps[i] += 1;
            exps[j] += 1;
            let c = f.coeff(&exps);
            h[(i, j)] = if i == j { c * rat(2) } else { c };
        }
    }
    h
}

/// Acceleration of the governing equation at a floating-point state, with an
/// optional feedback covector `F_e`:
/// `a^i = -S^i_{jk} v^j v^k - (G# dV)^i + (G# F_e)^i`.
///
/// Reference implementation lowered from jets on every call; the simulator
/// precompiles the same data for integration loops.
pub fn geodesic_spray_rhs(
    sys: &MechanicalSystem,
    q: &[f64],
    v: &[f64],
    force: Option<&[f64]>,
) -> Vec<f64> {
    let n = sys.dim();
    assert_eq!(q.len(), n);
    assert_eq!(v.len(), n);
    let gamma = sys.christoffel();
    let ginv = sys.metric_inverse();
    let grad: Vec<Jet> = sys.potential().gradient();
    let mut acc = vec![0.0; n];
    for i in 0..n {
        let mut a = 0.0;
        for j in 0..n {
            for k in 0..n {
                a -= gamma.get(i, j, k).eval_f64(q) * v[j] * v[k];
            }
        }
        for j in 0..n {
            let w = ginv.get(i, j).eval_f64(q);
            a -= w * grad[j].eval_f64(q);
            if let Some(f) = force {
                a += w * f[j];
            }
        }
        acc[i] = a;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::ratio;

    pub fn section5_system(order: usize) -> MechanicalSystem {
        let q1 = Jet::variable(2, order, 0);
        let q2 = Jet::variable(2, order, 1);
        let mut metric = JetMatrix::zeros(2, 2, 2, order);
        *metric.get_mut(0, 0) = Jet::one(2, order).add(&q2.mul(&q2));
        *metric.get_mut(1, 1) = Jet::one(2, order).add(&q1.mul(&q1));
        let potential = q1
            .mul(&q1)
            .neg()
            .add(&q1.mul(&q2).scale(&rat(2)))
            .add(&q2.mul(&q2));
        MechanicalSystem::new(metric, potential).unwrap()
    }

    #[test]
    fn inverse_examples() {
        let sys = section5_system(4);
        let inv = sys.metric_inverse();
        let one_over = sys.metric().get(0, 0).invert().unwrap();
        assert_eq!(inv.get(0, 0), &one_over);
        assert!(inv.get(0, 1).is_zero());

        let constant = JetMatrix::from_rat(&RatMatrix::from_i64(&[&[2, 0], &[0, 3]]), 2, 3);
        let sys2 = MechanicalSystem::new(constant, Jet::zero(2, 3)).unwrap();
        let inv2 = sys2.metric_inverse();
        assert_eq!(inv2.get(0, 0).constant_term(), ratio(1, 2));
        assert_eq!(inv2.get(1, 1).constant_term(), ratio(1, 3));
    }

    #[test]
    fn christoffel_flat_vanishes() {
        let sys = MechanicalSystem::new(
            JetMatrix::identity(2, 2, 4),
            Jet::variable(2, 4, 0).mul(&Jet::variable(2, 4, 0)),
        )
        .unwrap();
        let gamma = sys.christoffel();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!(gamma.get(i, j, k).is_zero());
                }
            }
        }
    }

    #[test]
    fn christoffel_section5_matches_hand_series() {
        // The nonzero symbols are rational functions; freeze their series.
        let sys = section5_system(5);
        let gamma = sys.christoffel();
        let inv_a = sys.metric().get(0, 0).invert().unwrap(); // 1/(1+q2^2)
        let inv_b = sys.metric().get(1, 1).invert().unwrap(); // 1/(1+q1^2)
        let q1 = Jet::variable(2, 5, 0);
        let q2 = Jet::variable(2, 5, 1);
        assert!(gamma.get(0, 0, 1).agrees_with(&q2.mul(&inv_a)));
        assert!(gamma.get(0, 1, 0).agrees_with(&q2.mul(&inv_a)));
        assert!(gamma.get(0, 1, 1).agrees_with(&q1.neg().mul(&inv_a)));
        assert!(gamma.get(1, 0, 0).agrees_with(&q2.neg().mul(&inv_b)));
        assert!(gamma.get(1, 0, 1).agrees_with(&q1.mul(&inv_b)));
        assert!(gamma.get(1, 1, 0).agrees_with(&q1.mul(&inv_b)));
        assert!(gamma.get(0, 0, 0).is_zero());
        assert!(gamma.get(1, 1, 1).is_zero());
    }

    #[test]
    fn metricity_residual_vanishes() {
        // nabla G = 0: d_k G_ij = S^l_{ki} G_lj + S^l_{kj} G_il
        let sys = section5_system(4);
        let gamma = sys.christoffel();
        let g = sys.metric();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut res = g.get(i, j).diff(k);
                    for l in 0..2 {
                        res = res
                            .sub(&gamma.get(l, k, i).mul(g.get(l, j)))
                            .sub(&gamma.get(l, k, j).mul(g.get(i, l)));
                    }
                    assert!(res.is_zero(), "metricity fails at k={k} i={i} j={j}");
                }
            }
        }
    }

    #[test]
    fn hessian_examples() {
        let sys = section5_system(4);
        let h = hessian_at_origin(sys.potential());
        assert_eq!(h, RatMatrix::from_i64(&[&[-2, 2], &[2, 2]]));
        assert!(h.is_symmetric());

        let linear = Jet::variable(2, 3, 0).scale(&rat(5));
        assert_eq!(hessian_at_origin(&linear), RatMatrix::zeros(2, 2));

        let half = ratio(1, 2);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let quad = q1.mul(&q1).add(&q2.mul(&q2)).scale(&half);
        assert_eq!(hessian_at_origin(&quad), RatMatrix::identity(2));
    }

    #[test]
    fn spray_trivial_cases() {
        let flat = MechanicalSystem::new(JetMatrix::identity(2, 2, 3), Jet::zero(2, 3)).unwrap();
        let a = geodesic_spray_rhs(&flat, &[0.3, -0.1], &[1.0, 0.0], None);
        assert_eq!(a, vec![0.0, 0.0]);

        let half = ratio(1, 2);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let osc = MechanicalSystem::new(
            JetMatrix::identity(2, 2, 3),
            q1.mul(&q1).add(&q2.mul(&q2)).scale(&half),
        )
        .unwrap();
        let a = geodesic_spray_rhs(&osc, &[1.0, 0.0], &[0.0, 0.0], None);
        assert!((a[0] + 1.0).abs() < 1e-15 && a[1].abs() < 1e-15);

        let sys = section5_system(4);
        let a = geodesic_spray_rhs(&sys, &[0.0, 0.0], &[0.0, 0.0], Some(&[0.0, 0.0]));
        assert_eq!(a, vec![0.0, 0.0]);
    }

    #[test]
    fn validation_rejects_bad_systems() {
        // nonsymmetric metric
        let mut m = JetMatrix::identity(2, 2, 3);
        *m.get_mut(0, 1) = Jet::variable(2, 3, 0);
        assert!(MechanicalSystem::new(m, Jet::zero(2, 3)).is_err());

        // indefinite constant term
        let ind = JetMatrix::from_rat(&RatMatrix::from_i64(&[&[1, 0], &[0, -1]]), 2, 3);
        assert!(MechanicalSystem::new(ind, Jet::zero(2, 3)).is_err());

        // uncontrolled equilibrium: dV has a dq1 component at 0
        let v = Jet::variable(2, 3, 0);
        assert!(MechanicalSystem::new(JetMatrix::identity(2, 2, 3), v).is_err());

        // actuated gradient component is a warning, not an error
        let v2 = Jet::variable(2, 3, 1);
        let (_, report) =
            MechanicalSystem::with_validation(JetMatrix::identity(2, 2, 3), v2).unwrap();
        assert_eq!(report.actuated_gradient.len(), 1);
    }
}
