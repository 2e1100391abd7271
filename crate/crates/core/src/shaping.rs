//! Energy-shaping synthesis: compatibility check, formal potential solve,
//! origin-level design of the closed-loop pair, order-by-order extension of
//! the closed-loop metric, and feedback assembly.
//!
//! Route selection, in order:
//! 1. potential-only when `Hess(V_ol)(q0)_{11} > 0` (no kinetic shaping),
//! 2. a positive-definite closed-loop pair whenever some achievable
//!    `lambda_1(q0)` pairs positively with both the metric column and the
//!    Hessian row of the unactuated direction,
//! 3. otherwise the indefinite-metric scan against a designed target, with
//!    the positive-definiteness obstruction emitted explicitly.
//! User pins bypass the scan and build the origin data directly.

use std::collections::BTreeMap;

use num::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::formal::{solve_affine, VarKey};
use crate::geometry::{christoffel_of, MechanicalSystem};
use crate::jet::{rat, Jet, MultiIndex, Rat};
use crate::jetmat::JetMatrix;
use crate::lambda::{
    closed_loop_metric_from_lambda, formal_lambda_solve, LambdaField, LambdaSolve, Pins,
    SolutionSpaceReport,
};
use crate::linear::{design_target, kalman_controllable, linearize, Linearization, TargetMatrix};
use crate::ratmat::{dot, pd_mapping, RatMatrix};

/// Residual two-forms of the potential-shaping compatibility conditions.
/// For one degree of underactuation (m = 1) the index set {i < j <= m} is
/// empty, so the report is structurally compatible.
#[derive(Debug, Clone)]
pub struct CompatibilityReport {
    pub m: usize,
    pub residuals: Vec<((usize, usize), Jet)>,
    pub compatible: bool,
    /// `alpha = Lambda_cl^{-1} dV_ol` as covector-component jets.
    pub alpha: Vec<Jet>,
}

pub fn compatibility_check(
    sys: &MechanicalSystem,
    lambda: &LambdaField,
) -> Result<CompatibilityReport> {
    let n = sys.dim();
    let g_cl = closed_loop_metric_from_lambda(sys, lambda)?;
    let g_inv = sys.metric_inverse();
    let lam_cl_inv = g_cl.mul(&g_inv);
    let grad: Vec<Jet> = sys.potential().gradient();
    let alpha: Vec<Jet> = (0..n)
        .map(|j| {
            let mut acc = Jet::zero(n, grad[0].order());
            for i in 0..n {
                acc = acc.add(&lam_cl_inv.get(j, i).mul(&grad[i]));
            }
            acc
        })
        .collect();
    let m = 1;
    let mut residuals = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            residuals.push(((i, j), alpha[j].diff(i).sub(&alpha[i].diff(j))));
        }
    }
    let compatible = residuals.iter().all(|(_, r)| r.is_zero());
    Ok(CompatibilityReport {
        m,
        residuals,
        compatible,
        alpha,
    })
}

/// Solves the scalar potential-shaping condition
/// `[G_ol^b G_cl# dV_cl - dV_ol]_1 = 0` order by order for `V_cl`, with
/// `dV_cl(q0) = 0` and `V_cl(q0) = 0` pinned. When a Hessian is pinned, its
/// entries fix the degree-2 coefficients; pins that contradict the forced
/// first-row relation are reported as errors.
pub fn formal_potential_solve(
    sys: &MechanicalSystem,
    g_cl: &JetMatrix,
    pinned_hessian: Option<&RatMatrix>,
) -> Result<Jet> {
    let n = sys.dim();
    let order = sys.order().min(g_cl.order());
    let g_cl_inv = g_cl
        .inverse()
        .map_err(|_| Error::Shaping("closed-loop metric singular at the origin".into()))?;
    // w_k = (G_ol G_cl^{-1}) first row: the lambda first column
    let lam_t = sys.metric().mul(&g_cl_inv);
    let w: Vec<Jet> = (0..n).map(|k| lam_t.get(0, k).clone()).collect();
    let dv1 = sys.potential().diff(0);

    let names = vec!["V_cl".to_string()];
    let solved = solve_affine(n, order, &names, "shaping_synthesis", |fields| {
        let v = &fields[0];
        let mut acc = Jet::zero(n, order.saturating_sub(1));
        for k in 0..n {
            acc = acc.add(&w[k].mul(&v.diff(k)));
        }
        vec![("potential-eq".to_string(), acc.sub(&dv1))]
    })?;

    let mut pins: Pins = BTreeMap::new();
    pins.insert(
        VarKey {
            field: 0,
            index: MultiIndex::new(vec![0; n]),
        },
        Rat::zero(),
    );
    for i in 0..n {
        let mut exps = vec![0u32; n];
        exps[i] = 1;
        pins.insert(
            VarKey {
                field: 0,
                index: MultiIndex::new(exps),
            },
            Rat::zero(),
        );
    }
    if let Some(h) = pinned_hessian {
        if !h.is_symmetric() {
            return Err(Error::Shaping("pinned Hessian must be symmetric".into()));
        }
        for i in 0..n {
            for j in i..n {
                let mut exps = vec![0u32; n];
                exps[i] += 1;
                exps[j] += 1;
                let value = if i == j {
                    &h[(i, j)] / rat(2)
                } else {
                    h[(i, j)].clone()
                };
                pins.insert(
                    VarKey {
                        field: 0,
                        index: MultiIndex::new(exps),
                    },
                    value,
                );
            }
        }
    }
    let assignment = solved.assign(&pins, |_| Rat::zero(), "shaping_synthesis")?;
    Ok(assignment.jet_of_field(0))
}

/// Extension of the closed-loop metric: the algebraic column relation
/// `G_cl * lambda_1 = G_ol e_1` together with the directional derivative
/// equations of condition 2(b), solved order by order with the origin
/// pinned.
fn extend_metric(
    sys: &MechanicalSystem,
    order: usize,
    lambda_col: &[Jet],
    g_cl_origin: &RatMatrix,
) -> Result<JetMatrix> {
    let n = sys.dim();
    let gamma = sys.christoffel();
    let g = sys.metric();
    let u = lambda_col;
    let du: Vec<Vec<Jet>> = (0..n)
        .map(|m| (0..n).map(|k| u[m].diff(k)).collect())
        .collect();

    // field index of the (i, j) upper-triangle entry
    let mut field_of = vec![vec![0usize; n]; n];
    let mut names = Vec::new();
    for i in 0..n {
        for j in i..n {
            field_of[i][j] = names.len();
            field_of[j][i] = names.len();
            names.push(format!("Gcl_{}{}", i + 1, j + 1));
        }
    }

    let entry = |fields: &[Jet], i: usize, j: usize| fields[field_of[i][j]].clone();

    let solved = solve_affine(n, order, &names, "shaping_synthesis", |fields| {
        let mut residuals = Vec::new();
        for i in 0..n {
            let mut acc = Jet::zero(n, order);
            for j in 0..n {
                acc = acc.add(&entry(fields, i, j).mul(&u[j]));
            }
            residuals.push((format!("metric-column i={}", i + 1), acc.sub(g.get(i, 0))));
        }
        for k in 0..n {
            for l in 0..=k {
                let mut acc = Jet::zero(n, order.saturating_sub(1));
                for s in 0..n {
                    let mut term = entry(fields, k, l).diff(s);
                    for m in 0..n {
                        term = term
                            .sub(&gamma.get(m, s, k).mul(&entry(fields, m, l)))
                            .sub(&gamma.get(m, s, l).mul(&entry(fields, k, m)));
                    }
                    acc = acc.add(&u[s].mul(&term));
                }
                for m in 0..n {
                    let mut cov_k = du[m][k].clone();
                    let mut cov_l = du[m][l].clone();
                    for s in 0..n {
                        cov_k = cov_k.add(&gamma.get(m, k, s).mul(&u[s]));
                        cov_l = cov_l.add(&gamma.get(m, l, s).mul(&u[s]));
                    }
                    acc = acc
                        .add(&entry(fields, m, l).mul(&cov_k))
                        .add(&entry(fields, k, m).mul(&cov_l));
                }
                for m in 0..n {
                    acc = acc
                        .sub(&gamma.get(m, k, 0).mul(g.get(m, l)))
                        .sub(&gamma.get(m, l, 0).mul(g.get(k, m)));
                }
                residuals.push((format!("metric-2b k={} l={}", k + 1, l + 1), acc));
            }
        }
        residuals
    })?;

    let mut pins: Pins = BTreeMap::new();
    for i in 0..n {
        for j in i..n {
            pins.insert(
                VarKey {
                    field: field_of[i][j],
                    index: MultiIndex::new(vec![0; n]),
                },
                g_cl_origin[(i, j)].clone(),
            );
        }
    }
    let assignment = solved.assign(&pins, |_| Rat::zero(), "shaping_synthesis")?;
    let mut m = JetMatrix::zeros(n, n, n, order);
    for i in 0..n {
        for j in 0..n {
            *m.get_mut(i, j) = assignment.jet_of_field(field_of[i][j]);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    PotentialOnly,
    PdPair,
    IndefiniteScan,
    Pinned,
}

impl Route {
    pub fn as_str(&self) -> &'static str {
        match self {
            Route::PotentialOnly => "potential-only",
            Route::PdPair => "pd-pair",
            Route::IndefiniteScan => "indefinite-scan",
            Route::Pinned => "pinned",
        }
    }
}

/// Origin-level spectral certificate of the synthesized pair.
#[derive(Debug, Clone)]
pub struct SpectralCertificate {
    /// `A = G_cl#(q0) Hess(V_cl)(q0)`, exact.
    pub product: RatMatrix,
    /// `(re, im)` pairs, descending real part. Reporting only.
    pub eigenvalues: Vec<(f64, f64)>,
    pub positive_real_spectrum: bool,
    pub diagonalizable: bool,
    /// How the spectrum facts were certified.
    pub method: &'static str,
    pub metric_pd: bool,
    pub hessian_pd: bool,
}

fn certify(product: &RatMatrix, n0: &RatMatrix, h: &RatMatrix) -> SpectralCertificate {
    let n = product.nrows();
    let metric_pd = n0.is_positive_definite();
    let hessian_pd = h.is_positive_definite();
    let eigenvalues = float_eigenvalues(product);
    if metric_pd && hessian_pd {
        // product of PD symmetric factors: similar to a symmetric PD matrix
        return SpectralCertificate {
            product: product.clone(),
            eigenvalues,
            positive_real_spectrum: true,
            diagonalizable: true,
            method: "pd-product-structural",
            metric_pd,
            hessian_pd,
        };
    }
    if n == 2 {
        let trace = &product[(0, 0)] + &product[(1, 1)];
        let det = &(&product[(0, 0)] * &product[(1, 1)])
            - &(&product[(0, 1)] * &product[(1, 0)]);
        let disc = &(&trace * &trace) - &(rat(4) * &det);
        let positive = trace.is_positive() && det.is_positive() && !disc.is_negative();
        let scalar = product[(0, 1)].is_zero()
            && product[(1, 0)].is_zero()
            && product[(0, 0)] == product[(1, 1)];
        let diagonalizable = disc.is_positive() || scalar;
        return SpectralCertificate {
            product: product.clone(),
            eigenvalues,
            positive_real_spectrum: positive,
            diagonalizable,
            method: "exact-2x2",
            metric_pd,
            hessian_pd,
        };
    }
    let positive = eigenvalues
        .iter()
        .all(|(re, im)| *re > 0.0 && im.abs() < 1e-9);
    let mut diagonalizable = true;
    for (i, a) in eigenvalues.iter().enumerate() {
        for b in eigenvalues.iter().skip(i + 1) {
            if (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9 {
                diagonalizable = false;
            }
        }
    }
    SpectralCertificate {
        product: product.clone(),
        eigenvalues,
        positive_real_spectrum: positive,
        diagonalizable,
        method: "float-schur",
        metric_pd,
        hessian_pd,
    }
}

fn float_eigenvalues(m: &RatMatrix) -> Vec<(f64, f64)> {
    let n = m.nrows();
    let mut eigs: Vec<(f64, f64)> = if n == 2 {
        let a = m.to_f64();
        let trace = a[(0, 0)] + a[(1, 1)];
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = trace * trace - 4.0 * det;
        if disc >= 0.0 {
            let r = disc.sqrt();
            vec![((trace + r) / 2.0, 0.0), ((trace - r) / 2.0, 0.0)]
        } else {
            let r = (-disc).sqrt() / 2.0;
            vec![(trace / 2.0, r), (trace / 2.0, -r)]
        }
    } else {
        m.to_f64()
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect()
    };
    eigs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eigs
}

/// Explicit record of why no positive-definite closed-loop metric exists.
#[derive(Debug, Clone)]
pub struct PdObstruction {
    pub kind: &'static str,
    pub lines: Vec<String>,
    /// `(k, beta, g11)` backing the two-dof trace/determinant derivation.
    pub two_dof_data: Option<(Rat, Rat, Rat)>,
}

/// Feasibility of a PD closed-loop pair: looks for an achievable
/// `lambda_1(q0)` with positive pairing against both `G(q0) e_1` and the
/// first Hessian row.
fn pd_feasibility(origin_map: &RatMatrix, g1: &[Rat], h1: &[Rat]) -> Option<Vec<Rat>> {
    let f_dim = origin_map.ncols();
    let mut p = RatMatrix::zeros(2, f_dim);
    for c in 0..f_dim {
        let col = origin_map.col(c);
        p[(0, c)] = dot(g1, &col);
        p[(1, c)] = dot(h1, &col);
    }
    match p.rank() {
        2 => {
            let x = p.solve(&[Rat::one(), Rat::one()])?;
            Some(origin_map.mul_vec(&x))
        }
        1 => {
            for c in 0..f_dim {
                let w0 = &p[(0, c)];
                let w1 = &p[(1, c)];
                if w0.is_zero() && w1.is_zero() {
                    continue;
                }
                if (w0 * w1).is_positive() {
                    let mut x = vec![Rat::zero(); f_dim];
                    x[c] = if w0.is_positive() {
                        Rat::one()
                    } else {
                        -Rat::one()
                    };
                    return Some(origin_map.mul_vec(&x));
                }
                return None;
            }
            None
        }
        _ => None,
    }
}

fn build_obstruction(
    sys: &MechanicalSystem,
    lin: &Linearization,
    origin_map: &RatMatrix,
) -> PdObstruction {
    let n = sys.dim();
    let _g1 = lin.mass.col(0);
    let h1: Vec<Rat> = lin.stiffness.row(0).to_vec();
    let mut lines = vec![
        "no achievable lambda_1(q0) has <G(q0) e1, l> > 0 and <HessV(q0) e1, l> > 0 \
         simultaneously;"
            .to_string(),
        "every closed-loop pair with G_cl(q0) and Hess(V_cl)(q0) both positive-definite \
         is therefore excluded."
            .to_string(),
    ];
    let mass_inv = lin.mass.inverse().expect("mass invertible");
    let b_zero = (1..n).all(|j| mass_inv[(0, j)].is_zero());
    let e1_only = {
        // achievable origin values confined to multiples of e1
        let mut confined = true;
        for c in 0..origin_map.ncols() {
            for r in 1..n {
                if !origin_map[(r, c)].is_zero() {
                    confined = false;
                }
            }
        }
        confined
    };
    let k = h1[0].clone();
    let beta = if n == 2 { h1[1].clone() } else { Rat::zero() };
    let g11 = lin.mass[(0, 0)].clone();
    let two_dof = n == 2 && b_zero && e1_only && !k.is_positive() && !beta.is_zero();
    if two_dof {
        let neg_k_over_g11 = -(&k / &g11);
        lines.push(format!(
            "two-dof derivation: achievable origin data are G_cl#(q0) = diag(a/{g11}, c), \
             Hess(V_cl)(q0) = [[{k}/a, {beta}/a], [{beta}/a, kappa]] with a = lambda_1^1(q0) \
             and c, kappa free,"
        ));
        lines.push(format!(
            "so A = G_cl#(q0) Hess(V_cl)(q0) = [[{}, {}], [c*{beta}/a, c*kappa]].",
            &k / &g11,
            &beta / &g11
        ));
        lines.push(format!(
            "trace(A) > 0 requires c*kappa > {neg_k_over_g11} >= 0,"
        ));
        lines.push(format!(
            "det(A) > 0 requires {k}*(c*kappa) > c*{beta}^2/a; the left side is <= 0, \
             so c/a < 0,"
        ));
        lines.push(
            "hence G_cl#(q0) = diag(a/g11, c) has opposite-sign diagonal entries: \
             every achievable closed-loop metric is indefinite."
                .to_string(),
        );
    }
    PdObstruction {
        kind: "pd-metric-infeasible",
        lines,
        two_dof_data: two_dof.then_some((k, beta, g11)),
    }
}

#[derive(Debug, Clone)]
struct OriginDesign {
    route: Route,
    ell: Vec<Rat>,
    n0: RatMatrix,
    h_cl: RatMatrix,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesisOptions {
    /// Truncation order of the formal solves; defaults to the system order.
    pub order: Option<usize>,
    /// Pin for `lambda_1^1(q0)` (must be nonzero).
    pub pin_lambda11: Option<Rat>,
    /// Pins for the free block of `G_cl#(q0)` (zero-based indices, both >= 1).
    pub pin_gcl_sharp: BTreeMap<(usize, usize), Rat>,
    /// Pins for the free block of `Hess(V_cl)(q0)` (zero-based, both >= 1).
    pub pin_hessian: BTreeMap<(usize, usize), Rat>,
    /// Requested positive spectrum for the designed target.
    pub spectrum: Option<Vec<Rat>>,
    /// Exact target to realize; skips the route selection.
    pub target: Option<TargetMatrix>,
}

impl SynthesisOptions {
    fn has_pins(&self) -> bool {
        self.pin_lambda11.is_some()
            || !self.pin_gcl_sharp.is_empty()
            || !self.pin_hessian.is_empty()
    }
}

/// A synthesized energy-shaping solution: closed-loop pair as jets, feedback
/// pieces, and the origin-level certificate.
#[derive(Debug, Clone)]
pub struct ShapingSolution {
    pub route: Route,
    pub lambda: LambdaField,
    pub g_cl: JetMatrix,
    pub v_cl: Jet,
    /// `u_kin` covector coefficients: index `[m][j][k]` flattened, so that
    /// `u_kin_m(q, v) = sum_{jk} K[m][j][k](q) v^j v^k`.
    pub u_kin: Vec<Jet>,
    /// `u_pot` covector components.
    pub u_pot: Vec<Jet>,
    pub lambda11: Rat,
    pub lambda_origin: Vec<Rat>,
    pub gcl_sharp_origin: RatMatrix,
    pub hessian_origin: RatMatrix,
    pub certificate: SpectralCertificate,
    pub obstruction: Option<PdObstruction>,
    pub lambda_report: SolutionSpaceReport,
}

impl ShapingSolution {
    /// The dq1 components of both feedback pieces, which must vanish to the
    /// stored order for a valid solution.
    pub fn membership_residuals(&self) -> Vec<&Jet> {
        let n = self.u_pot.len();
        let mut out = vec![&self.u_pot[0]];
        for j in 0..n {
            for k in 0..n {
                out.push(&self.u_kin[(0 * n + j) * n + k]);
            }
        }
        out
    }
}

pub fn synthesize(sys: &MechanicalSystem, opts: &SynthesisOptions) -> Result<ShapingSolution> {
    let n = sys.dim();
    let order = opts.order.unwrap_or(sys.order());
    if order < 2 || order > sys.order() {
        return Err(Error::Shaping(format!(
            "synthesis order {order} outside [2, {}]",
            sys.order()
        )));
    }
    let lin = linearize(sys);
    let (controllable, rank) = kalman_controllable(&lin);
    if !controllable {
        return Err(Error::Shaping(format!(
            "system is not linearly controllable (Kalman rank {rank} of {})",
            2 * n
        )));
    }
    let solve = formal_lambda_solve(sys, order)?;
    let (_, origin_map) = solve.origin_freedom();
    let g1 = lin.mass.col(0);
    let h1: Vec<Rat> = lin.stiffness.row(0).to_vec();
    let pd_ell = pd_feasibility(&origin_map, &g1, &h1);
    let obstruction = if pd_ell.is_none() {
        Some(build_obstruction(sys, &lin, &origin_map))
    } else {
        None
    };

    let design = if opts.has_pins() {
        pinned_design(&lin, opts)?
    } else if opts.target.is_some() {
        let target = opts.target.clone().unwrap();
        scan_design(&lin, &solve, &target)?
    } else if lin.stiffness[(0, 0)].is_positive() {
        return potential_only_with_context(sys, &lin, opts.spectrum.as_deref(), solve);
    } else if let Some(ell) = pd_ell {
        pd_pair_design(&lin, ell)?
    } else {
        let target = design_target(&lin, opts.spectrum.as_deref())?;
        scan_design(&lin, &solve, &target)?
    };

    extend_design(sys, order, solve, design, obstruction)
}

fn pinned_design(lin: &Linearization, opts: &SynthesisOptions) -> Result<OriginDesign> {
    let n = lin.mass.nrows();
    let lambda11 = opts.pin_lambda11.clone().unwrap_or_else(Rat::one);
    if lambda11.is_zero() {
        return Err(Error::Shaping("pinned lambda_1^1(q0) must be nonzero".into()));
    }
    for key in opts.pin_gcl_sharp.keys().chain(opts.pin_hessian.keys()) {
        if key.0 == 0 || key.1 == 0 {
            return Err(Error::Shaping(
                "row/column 1 of the origin blocks is forced by the shaping relations; \
                 only the actuated block may be pinned"
                    .into(),
            ));
        }
        if key.0 >= n || key.1 >= n {
            return Err(Error::Shaping(format!(
                "pin index ({}, {}) out of range",
                key.0 + 1,
                key.1 + 1
            )));
        }
    }
    let mass_inv = lin.mass.inverse().expect("mass invertible");
    let mut n0 = RatMatrix::zeros(n, n);
    for j in 0..n {
        n0[(0, j)] = &lambda11 * &mass_inv[(0, j)];
        n0[(j, 0)] = n0[(0, j)].clone();
    }
    for i in 1..n {
        for j in 1..n {
            let pin = opts
                .pin_gcl_sharp
                .get(&(i, j))
                .or_else(|| opts.pin_gcl_sharp.get(&(j, i)));
            n0[(i, j)] = match pin {
                Some(v) => v.clone(),
                None => {
                    if i == j {
                        Rat::one()
                    } else {
                        Rat::zero()
                    }
                }
            };
        }
    }
    let h1: Vec<Rat> = lin.stiffness.row(0).to_vec();
    let mut h_cl = RatMatrix::zeros(n, n);
    for j in 0..n {
        h_cl[(0, j)] = &h1[j] / &lambda11;
        h_cl[(j, 0)] = h_cl[(0, j)].clone();
    }
    for i in 1..n {
        for j in 1..n {
            let pin = opts
                .pin_hessian
                .get(&(i, j))
                .or_else(|| opts.pin_hessian.get(&(j, i)));
            h_cl[(i, j)] = match pin {
                Some(v) => v.clone(),
                None => {
                    if i == j {
                        Rat::one()
                    } else {
                        Rat::zero()
                    }
                }
            };
        }
    }
    if n0.det().is_zero() {
        return Err(Error::Shaping("pinned G_cl#(q0) block is degenerate".into()));
    }
    let ell = n0.mul_vec(&lin.mass.col(0));
    Ok(OriginDesign {
        route: Route::Pinned,
        ell,
        n0,
        h_cl,
    })
}

fn pd_pair_design(lin: &Linearization, ell: Vec<Rat>) -> Result<OriginDesign> {
    let g1 = lin.mass.col(0);
    let h1: Vec<Rat> = lin.stiffness.row(0).to_vec();
    let n0 = pd_mapping(&g1, &ell)
        .ok_or_else(|| Error::Shaping("internal: pd pairing lost for the metric".into()))?;
    let h_cl = pd_mapping(&ell, &h1)
        .ok_or_else(|| Error::Shaping("internal: pd pairing lost for the Hessian".into()))?;
    Ok(OriginDesign {
        route: Route::PdPair,
        ell,
        n0,
        h_cl,
    })
}

/// Realizes a designed target exactly through the constant-solution blocks:
/// `lambda_1^1 = +-1`, `C = sigma t I` solved exactly, then the Hessian
/// block by a direct linear solve. Scan order over the signs is fixed.
fn scan_design(
    lin: &Linearization,
    solve: &LambdaSolve,
    target: &TargetMatrix,
) -> Result<OriginDesign> {
    let n = lin.mass.nrows();
    let a = &target.a;
    let mass_inv = lin.mass.inverse().expect("mass invertible");
    let h1: Vec<Rat> = lin.stiffness.row(0).to_vec();
    let k_ol = h1[0].clone();
    let b_row: Vec<Rat> = (1..n).map(|j| mass_inv[(0, j)].clone()).collect();
    let beta: Vec<Rat> = (1..n).map(|j| h1[j].clone()).collect();
    let (_, origin_map) = solve.origin_freedom();

    // rhs_i = A[i][0] - k_ol * B^T_i, i >= 1: must be parallel to beta
    let rhs: Vec<Rat> = (1..n)
        .map(|i| &a[(i, 0)] - &(&k_ol * &b_row[i - 1]))
        .collect();
    let ratio = match beta.iter().position(|b| !b.is_zero()) {
        Some(p) => {
            let rho = &rhs[p] / &beta[p];
            for i in 0..n - 1 {
                if &beta[i] * &rho != rhs[i] {
                    return Err(Error::Shaping(
                        "target rows are incompatible with the forced column \
                         k B^T + C beta^T / lambda_1^1 (no C = sigma t I realizes them)"
                            .into(),
                    ));
                }
            }
            Some(rho)
        }
        None => {
            if rhs.iter().any(|r| !r.is_zero()) {
                return Err(Error::Shaping(
                    "target first-column rows unreachable: Hessian row beta vanishes".into(),
                ));
            }
            None
        }
    };

    let mut failures = Vec::new();
    for (s, sigma) in [(1i64, 1i64), (1, -1), (-1, 1), (-1, -1)] {
        let lambda11 = rat(s);
        let sigma_t = match &ratio {
            Some(rho) => {
                let st = &lambda11 * rho;
                if st.is_zero() {
                    failures.push(format!(
                        "branch (lambda11={s}, sigma={sigma}): degenerate C block (t = 0)"
                    ));
                    continue;
                }
                if (sigma > 0) != st.is_positive() {
                    failures.push(format!(
                        "branch (lambda11={s}, sigma={sigma}): sign of C is {}",
                        if st.is_positive() { "+" } else { "-" }
                    ));
                    continue;
                }
                st
            }
            None => rat(sigma),
        };
        let mut n0 = RatMatrix::zeros(n, n);
        for j in 0..n {
            n0[(0, j)] = &lambda11 * &mass_inv[(0, j)];
            n0[(j, 0)] = n0[(0, j)].clone();
        }
        for i in 1..n {
            n0[(i, i)] = sigma_t.clone();
        }
        // Hessian block from A[1.., 1..] = B^T beta + C * Chess
        let mut h_cl = RatMatrix::zeros(n, n);
        for j in 0..n {
            h_cl[(0, j)] = &h1[j] / &lambda11;
            h_cl[(j, 0)] = h_cl[(0, j)].clone();
        }
        for i in 1..n {
            for j in 1..n {
                let outer = &b_row[i - 1] * &beta[j - 1];
                h_cl[(i, j)] = &(&a[(i, j)] - &outer) / &sigma_t;
            }
        }
        if !h_cl.is_symmetric() {
            failures.push(format!(
                "branch (lambda11={s}, sigma={sigma}): induced Hessian block not symmetric"
            ));
            continue;
        }
        if n0.mul(&h_cl) != *a {
            failures.push(format!(
                "branch (lambda11={s}, sigma={sigma}): product does not reproduce the target \
                 (row-1 coupling)"
            ));
            continue;
        }
        let ell = n0.mul_vec(&lin.mass.col(0));
        if solve_ell_achievable(&origin_map, &ell).is_none() {
            failures.push(format!(
                "branch (lambda11={s}, sigma={sigma}): lambda_1(q0) = induced value is not an \
                 achievable solution of the lambda equation"
            ));
            continue;
        }
        return Ok(OriginDesign {
            route: Route::IndefiniteScan,
            ell,
            n0,
            h_cl,
        });
    }
    Err(Error::Shaping(format!(
        "no lambda_1^1 sign admits the target with the forced rows: {}",
        failures.join("; ")
    )))
}

fn solve_ell_achievable(origin_map: &RatMatrix, ell: &[Rat]) -> Option<Vec<Rat>> {
    origin_map.solve(ell)
}

fn potential_only_with_context(
    sys: &MechanicalSystem,
    lin: &Linearization,
    schur: Option<&[Rat]>,
    solve: LambdaSolve,
) -> Result<ShapingSolution> {
    let n = sys.dim();
    let h_ol = lin.stiffness.clone();
    let h11 = h_ol[(0, 0)].clone();
    if !h11.is_positive() {
        return Err(Error::Shaping(format!(
            "Hess(V_ol)(q0)_11 = {h11} <= 0: potential shaping alone cannot stabilize; \
             full kinetic synthesis required"
        )));
    }
    let h_cl = if h_ol.is_positive_definite() && schur.is_none() {
        h_ol.clone()
    } else {
        // keep row/column 1, rebuild the actuated block with a prescribed
        // Schur complement
        let mut h = RatMatrix::zeros(n, n);
        for j in 0..n {
            h[(0, j)] = h_ol[(0, j)].clone();
            h[(j, 0)] = h_ol[(j, 0)].clone();
        }
        for i in 1..n {
            for j in 1..n {
                let outer = &(&h_ol[(0, i)] * &h_ol[(0, j)]) / &h11;
                h[(i, j)] = outer;
            }
        }
        for (idx, i) in (1..n).enumerate() {
            let slack = schur
                .and_then(|s| s.get(idx).cloned())
                .unwrap_or_else(Rat::one);
            if !slack.is_positive() {
                return Err(Error::Shaping(
                    "requested Schur spectrum must be positive".into(),
                ));
            }
            h[(i, i)] = &h[(i, i)] + &slack;
        }
        h
    };
    let minors = h_cl.leading_principal_minors();
    if !minors.iter().all(Rat::is_positive) {
        return Err(Error::Shaping(
            "internal: potential-only Hessian failed the minor check".into(),
        ));
    }

    let order = sys.order();
    let lambda = LambdaField::identity(n, n, order);
    let g_cl = sys.metric().clone();
    // quadratic correction supported on the actuated block
    let delta = h_cl.sub(&h_ol);
    let mut correction = Jet::zero(n, order);
    for i in 0..n {
        for j in i..n {
            if delta[(i, j)].is_zero() {
                continue;
            }
            let mut exps = vec![0u32; n];
            exps[i] += 1;
            exps[j] += 1;
            let c = if i == j {
                &delta[(i, j)] / rat(2)
            } else {
                delta[(i, j)].clone()
            };
            correction.set_coeff(&exps, c);
        }
    }
    let v_cl = sys.potential().add(&correction);

    let (u_kin, u_pot) = feedback_jets(sys, &g_cl, &v_cl)?;
    let n0 = sys.metric_inverse().at_origin();
    let product = n0.mul(&h_cl);
    let certificate = certify(&product, &n0, &h_cl);
    let mut ell = vec![Rat::zero(); n];
    ell[0] = Rat::one();
    let pins = solve.origin_pins(&ell);
    let lambda_report = solve.report(&pins)?;
    let solution = ShapingSolution {
        route: Route::PotentialOnly,
        lambda,
        g_cl,
        v_cl,
        u_kin,
        u_pot,
        lambda11: Rat::one(),
        lambda_origin: ell,
        gcl_sharp_origin: n0,
        hessian_origin: h_cl,
        certificate,
        obstruction: None,
        lambda_report,
    };
    validate_membership(&solution)?;
    Ok(solution)
}

/// Potential-only path: `G_cl = G_ol`, Hessian made PD by actuated-block
/// completion. Requires `Hess(V_ol)(q0)_11 > 0`.
pub fn potential_only_synthesize(
    sys: &MechanicalSystem,
    schur: Option<&[Rat]>,
) -> Result<ShapingSolution> {
    let lin = linearize(sys);
    let (controllable, rank) = kalman_controllable(&lin);
    if !controllable {
        return Err(Error::Shaping(format!(
            "system is not linearly controllable (Kalman rank {rank})"
        )));
    }
    let solve = formal_lambda_solve(sys, sys.order())?;
    potential_only_with_context(sys, &lin, schur, solve)
}

fn extend_design(
    sys: &MechanicalSystem,
    order: usize,
    solve: LambdaSolve,
    design: OriginDesign,
    obstruction: Option<PdObstruction>,
) -> Result<ShapingSolution> {
    let pins = solve.origin_pins(&design.ell);
    let lambda_col = solve.first_column_jets(&pins)?;
    let lambda_report = solve.report(&pins)?;
    let g_cl_origin = design
        .n0
        .inverse()
        .ok_or_else(|| Error::Shaping("degenerate G_cl#(q0)".into()))?;
    let g_cl = extend_metric(sys, order, &lambda_col, &g_cl_origin)?;
    let lambda_matrix = g_cl
        .inverse()
        .map_err(|_| Error::Shaping("degenerate G_cl(q0)".into()))?
        .mul(sys.metric());
    let lambda = LambdaField::from_matrix(lambda_matrix);
    let v_cl = formal_potential_solve(sys, &g_cl, Some(&design.h_cl))?;
    let (u_kin, u_pot) = feedback_jets(sys, &g_cl, &v_cl)?;
    let product = design.n0.mul(&design.h_cl);
    let certificate = certify(&product, &design.n0, &design.h_cl);
    let solution = ShapingSolution {
        route: design.route,
        lambda,
        g_cl,
        v_cl,
        u_kin,
        u_pot,
        lambda11: design.ell[0].clone(),
        lambda_origin: design.ell,
        gcl_sharp_origin: design.n0,
        hessian_origin: design.h_cl,
        certificate,
        obstruction,
        lambda_report,
    };
    validate_membership(&solution)?;
    Ok(solution)
}

fn validate_membership(solution: &ShapingSolution) -> Result<()> {
    if solution.membership_residuals().iter().all(|j| j.is_zero()) {
        Ok(())
    } else {
        Err(Error::Shaping(
            "internal: feedback escaped the actuated codistribution (dq1 component nonzero)"
                .into(),
        ))
    }
}

/// The two feedback pieces as jets: `u_kin[m][j][k]` quadratic-in-velocity
/// coefficients and `u_pot[m]` covector components.
fn feedback_jets(
    sys: &MechanicalSystem,
    g_cl: &JetMatrix,
    v_cl: &Jet,
) -> Result<(Vec<Jet>, Vec<Jet>)> {
    let n = sys.dim();
    let gamma_ol = sys.christoffel();
    let gamma_cl = christoffel_of(g_cl)
        .map_err(|_| Error::Shaping("degenerate closed-loop metric".into()))?;
    let g = sys.metric();
    let mut u_kin = Vec::with_capacity(n * n * n);
    for m in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut acc = Jet::zero(n, gamma_cl.order());
                for i in 0..n {
                    acc = acc.add(
                        &g.get(m, i)
                            .mul(&gamma_cl.get(i, j, k).sub(gamma_ol.get(i, j, k))),
                    );
                }
                u_kin.push(acc);
            }
        }
    }
    let g_cl_inv = g_cl
        .inverse()
        .map_err(|_| Error::Shaping("degenerate closed-loop metric".into()))?;
    let lam_cl = g.mul(&g_cl_inv);
    let grad_cl = v_cl.gradient();
    let grad_ol = sys.potential().gradient();
    let mut u_pot = Vec::with_capacity(n);
    for m in 0..n {
        let mut acc = Jet::zero(n, grad_cl[0].order());
        for i in 0..n {
            acc = acc.add(&lam_cl.get(m, i).mul(&grad_cl[i]));
        }
        u_pot.push(acc.sub(&grad_ol[m]));
    }
    Ok((u_kin, u_pot))
}

/// Polynomial evaluator for the assembled feedback covector
/// `u_shp = -u_kin - u_pot`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    n: usize,
    u_kin: Vec<Jet>,
    u_pot: Vec<Jet>,
}

impl FeedbackLaw {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn u_kin(&self) -> &[Jet] {
        &self.u_kin
    }

    pub fn u_pot(&self) -> &[Jet] {
        &self.u_pot
    }

    /// Covector value of `u_shp` at a floating-point state.
    pub fn u_shp(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|m| {
                let mut acc = self.u_pot[m].eval_f64(q);
                for j in 0..n {
                    for k in 0..n {
                        acc += self.u_kin[(m * n + j) * n + k].eval_f64(q) * v[j] * v[k];
                    }
                }
                -acc
            })
            .collect()
    }
}

/// Wraps the solution's feedback jets as an evaluator.
pub fn assemble_feedback(sys: &MechanicalSystem, solution: &ShapingSolution) -> FeedbackLaw {
    FeedbackLaw {
        n: sys.dim(),
        u_kin: solution.u_kin.clone(),
        u_pot: solution.u_pot.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::ratio;
    use crate::lambda::lambda_method_residuals;
    use crate::testutil::{two_dof_cross_term, two_dof_indefinite};

    fn pinned_opts() -> SynthesisOptions {
        SynthesisOptions {
            pin_lambda11: Some(ratio(-191, 100)),
            pin_gcl_sharp: BTreeMap::from([((1, 1), ratio(43, 10))]),
            pin_hessian: BTreeMap::from([((1, 1), rat(1))]),
            ..Default::default()
        }
    }

    #[test]
    fn compatibility_trivial_for_one_dof() {
        let sys = two_dof_indefinite(4);
        let report = compatibility_check(&sys, &LambdaField::identity(2, 2, 4)).unwrap();
        assert!(report.compatible);
        assert!(report.residuals.is_empty());
        // alpha = dV_ol when lambda = id, and d(alpha) = 0 exactly
        let full_curl = report.alpha[1].diff(0).sub(&report.alpha[0].diff(1));
        assert!(full_curl.is_zero());
    }

    #[test]
    fn potential_solve_identity_lambda() {
        let sys = two_dof_indefinite(4);
        let v_cl = formal_potential_solve(&sys, &sys.metric().clone(), None).unwrap();
        // condition reduces to d1 V_cl = d1 V_ol
        assert!(v_cl.diff(0).agrees_with(&sys.potential().diff(0)));
    }

    #[test]
    fn pinned_synthesis_reproduces_worked_example() {
        let sys = two_dof_indefinite(4);
        let sol = synthesize(&sys, &pinned_opts()).unwrap();
        assert_eq!(sol.route, Route::Pinned);
        let a = ratio(-191, 100);
        let c = ratio(43, 10);
        assert_eq!(sol.gcl_sharp_origin, {
            let mut m = RatMatrix::zeros(2, 2);
            m[(0, 0)] = a.clone();
            m[(1, 1)] = c.clone();
            m
        });
        // Hess(V_cl)(q0) = [[-2/a, 2/a], [2/a, 1]]
        assert_eq!(sol.hessian_origin[(0, 0)], rat(-2) / &a);
        assert_eq!(sol.hessian_origin[(0, 1)], rat(2) / &a);
        assert_eq!(sol.hessian_origin[(1, 1)], rat(1));
        // product [[-2, 2], [2c/a, c]]
        assert_eq!(sol.certificate.product[(0, 0)], rat(-2));
        assert_eq!(sol.certificate.product[(0, 1)], rat(2));
        assert_eq!(sol.certificate.product[(1, 0)], rat(2) * &c / &a);
        assert_eq!(sol.certificate.product[(1, 1)], c.clone());
        assert!(sol.certificate.positive_real_spectrum);
        assert!(!sol.certificate.metric_pd);
        // G_cl(q0) = diag(1/a, 1/c)
        assert_eq!(sol.g_cl.at_origin()[(0, 0)], a.recip());
        assert_eq!(sol.g_cl.at_origin()[(1, 1)], c.recip());
    }

    #[test]
    fn pinned_solution_satisfies_all_residuals() {
        let sys = two_dof_indefinite(4);
        let sol = synthesize(&sys, &pinned_opts()).unwrap();
        let res = lambda_method_residuals(&sys, &sol.g_cl, &sol.lambda).unwrap();
        assert!(res.two_a_vanishes());
        assert!(res.two_b_vanishes());
        assert!(res.kinetic_vanishes());
        // potential PDE holds to order
        let g_cl_inv = sol.g_cl.inverse().unwrap();
        let lam_t = sys.metric().mul(&g_cl_inv);
        let mut pde = Jet::zero(2, 3);
        for k in 0..2 {
            pde = pde.add(&lam_t.get(0, k).mul(&sol.v_cl.diff(k)));
        }
        assert!(pde.sub(&sys.potential().diff(0)).is_zero());
    }

    #[test]
    fn default_synthesis_hits_obstruction_and_scan() {
        let sys = two_dof_indefinite(4);
        let sol = synthesize(&sys, &SynthesisOptions::default()).unwrap();
        assert_eq!(sol.route, Route::IndefiniteScan);
        assert!(!sol.certificate.metric_pd);
        assert!(sol.certificate.positive_real_spectrum);
        assert!(sol.certificate.diagonalizable);
        let obs = sol.obstruction.as_ref().expect("obstruction emitted");
        assert_eq!(obs.kind, "pd-metric-infeasible");
        let (k, beta, g11) = obs.two_dof_data.clone().unwrap();
        assert_eq!(k, rat(-2));
        assert_eq!(beta, rat(2));
        assert_eq!(g11, rat(1));
    }

    #[test]
    fn cross_term_metric_gets_pd_pair() {
        let sys = two_dof_cross_term(4);
        let sol = synthesize(&sys, &SynthesisOptions::default()).unwrap();
        assert_eq!(sol.route, Route::PdPair);
        assert!(sol.certificate.metric_pd);
        assert!(sol.certificate.hessian_pd);
        assert!(sol.obstruction.is_none());
        let res = lambda_method_residuals(&sys, &sol.g_cl, &sol.lambda).unwrap();
        assert!(res.kinetic_vanishes());
    }

    #[test]
    fn potential_only_examples() {
        // Hess = [[1,5],[5,1]]: completion picks the 26 entry
        let q1 = Jet::variable(2, 4, 0);
        let q2 = Jet::variable(2, 4, 1);
        let v = q1
            .mul(&q1)
            .scale(&ratio(1, 2))
            .add(&q1.mul(&q2).scale(&rat(5)))
            .add(&q2.mul(&q2).scale(&ratio(1, 2)));
        let sys =
            MechanicalSystem::new(JetMatrix::identity(2, 2, 4), v).unwrap();
        let sol = potential_only_synthesize(&sys, None).unwrap();
        assert_eq!(
            sol.hessian_origin,
            RatMatrix::from_i64(&[&[1, 5], &[5, 26]])
        );
        assert!(sol.certificate.metric_pd && sol.certificate.hessian_pd);
        // feedback supported on actuated components, linear in q
        assert!(sol.u_kin.iter().all(Jet::is_zero));
        assert!(sol.u_pot[0].is_zero());
        assert!(!sol.u_pot[1].is_zero());

        // already PD: u may be zero
        let half = ratio(1, 2);
        let vpd = q1.mul(&q1).add(&q2.mul(&q2)).scale(&half).add(&q1.mul(&q2).scale(&ratio(1, 4)));
        let sys_pd = MechanicalSystem::new(JetMatrix::identity(2, 2, 4), vpd).unwrap();
        let sol_pd = potential_only_synthesize(&sys_pd, None).unwrap();
        assert!(sol_pd.u_pot.iter().all(Jet::is_zero));

        // the indefinite worked example requires kinetic shaping
        let sys5 = two_dof_indefinite(4);
        assert!(potential_only_synthesize(&sys5, None).is_err());
    }

    #[test]
    fn synthesize_routes_to_potential_only() {
        // V_ol = q1^2 + q1 q2 has Hess_11 = 2 > 0
        let q1 = Jet::variable(2, 4, 0);
        let q2 = Jet::variable(2, 4, 1);
        let v = q1.mul(&q1).add(&q1.mul(&q2));
        let sys = MechanicalSystem::new(JetMatrix::identity(2, 2, 4), v).unwrap();
        let sol = synthesize(&sys, &SynthesisOptions::default()).unwrap();
        assert_eq!(sol.route, Route::PotentialOnly);
        assert_eq!(&sol.g_cl, sys.metric());
        assert!(sol.hessian_origin.is_positive_definite());
        // row/column 1 unchanged
        assert_eq!(sol.hessian_origin[(0, 0)], rat(2));
        assert_eq!(sol.hessian_origin[(0, 1)], rat(1));
    }

    #[test]
    fn lambda11_scaling_leaves_product_first_row_invariant() {
        let sys = two_dof_indefinite(4);
        let mut opts_a = pinned_opts();
        let mut opts_b = pinned_opts();
        opts_a.pin_lambda11 = Some(rat(-1));
        opts_b.pin_lambda11 = Some(rat(-3));
        let sol_a = synthesize(&sys, &opts_a).unwrap();
        let sol_b = synthesize(&sys, &opts_b).unwrap();
        // Hessian first row scales by 1/s, G_cl# first row by s
        assert_eq!(
            sol_a.hessian_origin[(0, 1)],
            &sol_b.hessian_origin[(0, 1)] * rat(3)
        );
        assert_eq!(
            &sol_a.gcl_sharp_origin[(0, 0)] * rat(3),
            sol_b.gcl_sharp_origin[(0, 0)]
        );
        assert_eq!(
            sol_a.certificate.product.row(0),
            sol_b.certificate.product.row(0)
        );
    }

    #[test]
    fn feedback_zero_for_identity_solution() {
        // lambda = id, V_cl = V_ol: u_shp = 0
        let q1 = Jet::variable(2, 4, 0);
        let q2 = Jet::variable(2, 4, 1);
        let half = ratio(1, 2);
        let v = q1.mul(&q1).add(&q2.mul(&q2)).scale(&half).add(&q1.mul(&q2).scale(&ratio(1, 4)));
        let sys = MechanicalSystem::new(JetMatrix::identity(2, 2, 4), v).unwrap();
        let sol = potential_only_synthesize(&sys, None).unwrap();
        let law = assemble_feedback(&sys, &sol);
        let u = law.u_shp(&[0.1, -0.2], &[0.3, 0.4]);
        assert_eq!(u, vec![0.0, 0.0]);
    }

    #[test]
    fn scan_rejects_unreachable_exact_target(){
        // beta = Hess(V_ol) row 1 actuated part is zero, so the target's
        // free first-column entry cannot be realized
        let q1 = Jet::variable(2, 4, 0);
        let q2 = Jet::variable(2, 4, 1);
        let v = q1.mul(&q1).neg().add(&q2.mul(&q2));
        let sys = MechanicalSystem::new(JetMatrix::identity(2, 2, 4), v).unwrap();
        // not linearly controllable (decoupled), synthesize refuses upfront
        assert!(synthesize(&sys, &SynthesisOptions::default()).is_err());
    }
}
