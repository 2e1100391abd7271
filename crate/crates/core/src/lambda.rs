//! The lambda equation for one degree of underactuation: constant-solution
//! space, order-by-order formal solutions, and the residual evaluators that
//! certify the kinetic-shaping equivalence.
//!
//! Conventions. The lambda field relates the metrics through
//! `G_ol^b = G_cl^b o lambda`; as a matrix acting on vector components this
//! is `L = G_cl^{-1} G_ol`, with entry `L[j][i] = lambda_i^j`. The entries
//! constrained by the lambda equation are `lambda_1^j`, the first column of
//! `L`. In coordinates the equation (with its derivative term, valid for
//! nonconstant candidates) reads, for every k:
//!
//! ```text
//! sum_i G_{1i} d(lambda_1^i)/dq^k
//!   + sum_i sum_{j>=2} (S^i_{kj} G_{i1} - S^i_{k1} G_{ij}) lambda_1^j = 0
//! ```
//!
//! Every Taylor coefficient of every residual is an exact linear constraint
//! on the coefficients of `lambda_1^1 .. lambda_1^n`; the solve reports the
//! forced/free split per order.

use std::collections::BTreeMap;

use num::{One, Zero};

use crate::error::{Error, Result};
use crate::formal::{solve_affine, Solved, VarKey};
use crate::geometry::{christoffel_of, MechanicalSystem};
use crate::jet::{monomials, Jet, MultiIndex, Rat};
use crate::jetmat::JetMatrix;
use crate::ratmat::RatMatrix;

/// A (1,1)-tensor field candidate: matrix of jets acting on vector
/// components, `matrix[j][i] = lambda_i^j`.
#[derive(Debug, Clone)]
pub struct LambdaField {
    matrix: JetMatrix,
}

impl LambdaField {
    pub fn from_matrix(matrix: JetMatrix) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols());
        Self { matrix }
    }

    pub fn identity(n: usize, dim: usize, order: usize) -> Self {
        Self {
            matrix: JetMatrix::identity(n, dim, order),
        }
    }

    pub fn matrix(&self) -> &JetMatrix {
        &self.matrix
    }

    pub fn origin(&self) -> RatMatrix {
        self.matrix.at_origin()
    }

    /// `lambda_1^j` jets (the column constrained by the lambda equation).
    pub fn first_column(&self) -> Vec<Jet> {
        (0..self.matrix.nrows())
            .map(|j| self.matrix.get(j, 0).clone())
            .collect()
    }
}

/// Basis of constant-candidate matrices `A` with `A_1^j = 0` for j >= 2 such
/// that `A o G#` is symmetric. Dimension is n(n-1)/2 + 1 for nondegenerate
/// `G0` (one more than the nondegenerate-solution count quoted alongside the
/// construction, since nondegeneracy is an open condition, not a subspace).
pub fn phi_g_kernel_basis(g0: &RatMatrix) -> Result<Vec<RatMatrix>> {
    let n = g0.nrows();
    let g0_inv = g0
        .inverse()
        .ok_or_else(|| Error::Lambda("degenerate G0: kernel of Phi_G undefined".into()))?;
    // variables: M[0][0], then M[j][i] for i >= 1 (column-major over i)
    let mut positions = vec![(0usize, 0usize)];
    for i in 1..n {
        for j in 0..n {
            positions.push((j, i));
        }
    }
    // symmetry of M * g0^{-1}: one row per pair p < q
    let mut rows = Vec::new();
    for p in 0..n {
        for q in (p + 1)..n {
            let mut row = vec![Rat::zero(); positions.len()];
            for (v, &(j, i)) in positions.iter().enumerate() {
                let mut c = Rat::zero();
                if j == p {
                    c = &c + &g0_inv[(i, q)];
                }
                if j == q {
                    c = &c - &g0_inv[(i, p)];
                }
                row[v] = c;
            }
            rows.push(row);
        }
    }
    let constraints = RatMatrix::from_rows(rows);
    let basis = constraints
        .nullspace()
        .into_iter()
        .map(|v| {
            let mut m = RatMatrix::zeros(n, n);
            for (idx, &(j, i)) in positions.iter().enumerate() {
                m[(j, i)] = v[idx].clone();
            }
            m
        })
        .collect();
    Ok(basis)
}

/// Derivative-free part of the lambda equation evaluated on a constant
/// candidate: `sum_i sum_{j>=2} (S^i_{kj} G_{i1} - S^i_{k1} G_{ij}) lambda_1^j`,
/// one jet per k. All-zero output certifies the candidate.
pub fn constant_lambda_residual(sys: &MechanicalSystem, lambda0: &RatMatrix) -> Vec<Jet> {
    let n = sys.dim();
    let w = lambda_weight_jets(sys);
    (0..n)
        .map(|k| {
            let mut acc = Jet::zero(n, sys.order().saturating_sub(1));
            for j in 1..n {
                acc = acc.add(&w[k][j - 1].scale(&lambda0[(j, 0)]));
            }
            acc
        })
        .collect()
}

/// `W[k][j-1] = sum_i (S^i_{kj} G_{i1} - S^i_{k1} G_{ij})` for j >= 1
/// (zero-based; the unactuated index is 0).
fn lambda_weight_jets(sys: &MechanicalSystem) -> Vec<Vec<Jet>> {
    let n = sys.dim();
    let gamma = sys.christoffel();
    let g = sys.metric();
    (0..n)
        .map(|k| {
            (1..n)
                .map(|j| {
                    let mut acc = Jet::zero(n, sys.order().saturating_sub(1));
                    for i in 0..n {
                        acc = acc
                            .add(&gamma.get(i, k, j).mul(g.get(i, 0)))
                            .sub(&gamma.get(i, k, 0).mul(g.get(i, j)));
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Order-by-order classification of the lambda-equation coefficients.
#[derive(Debug, Clone)]
pub struct LambdaSolve {
    n: usize,
    order: usize,
    solved: Solved,
    g0: RatMatrix,
}

/// Per-coefficient line of the report.
#[derive(Debug, Clone)]
pub struct CoeffReport {
    pub name: String,
    pub field: usize,
    pub index: MultiIndex,
    pub forced: bool,
    /// Forced with no dependence on free coefficients.
    pub identically_forced: bool,
    pub pinned: bool,
    pub value: Rat,
}

#[derive(Debug, Clone)]
pub struct DegreeReport {
    pub degree: usize,
    pub entries: Vec<CoeffReport>,
}

/// Forced/free ledger per total degree, plus the constant solution basis at
/// the origin.
#[derive(Debug, Clone)]
pub struct SolutionSpaceReport {
    pub order: usize,
    pub degrees: Vec<DegreeReport>,
    pub constant_basis: Vec<RatMatrix>,
}

impl SolutionSpaceReport {
    pub fn find(&self, name: &str) -> Option<&CoeffReport> {
        self.degrees
            .iter()
            .flat_map(|d| d.entries.iter())
            .find(|e| e.name == name)
    }
}

/// Taylor-coefficient name in the worked-example style: field letters
/// C, D, E, ... with concatenated exponents (tuple form past 9).
pub fn coefficient_name(field: usize, index: &MultiIndex) -> String {
    let letter = char::from(b'C' + field as u8);
    if index.exps().iter().all(|&e| e <= 9) {
        let digits: String = index.exps().iter().map(|e| e.to_string()).collect();
        format!("{letter}{digits}")
    } else {
        format!("{letter}{index}")
    }
}

/// Pins for the coefficient solves, keyed by (field, monomial).
pub type Pins = BTreeMap<VarKey, Rat>;

pub fn pin(field: usize, exps: Vec<u32>, value: Rat) -> (VarKey, Rat) {
    (
        VarKey {
            field,
            index: MultiIndex::new(exps),
        },
        value,
    )
}

/// Solves the lambda equation order by order for the Taylor coefficients of
/// `lambda_1^1 .. lambda_1^n` up to total degree `order`.
pub fn formal_lambda_solve(sys: &MechanicalSystem, order: usize) -> Result<LambdaSolve> {
    let n = sys.dim();
    if order > sys.order() {
        return Err(Error::Lambda(format!(
            "solve order {order} exceeds the system truncation order {}",
            sys.order()
        )));
    }
    let g_row: Vec<Jet> = (0..n)
        .map(|i| sys.metric().get(0, i).truncated(order))
        .collect();
    let w: Vec<Vec<Jet>> = lambda_weight_jets(sys)
        .into_iter()
        .map(|row| row.into_iter().map(|jet| jet.truncated(order.saturating_sub(1))).collect())
        .collect();
    let names: Vec<String> = (0..n).map(|i| format!("lambda_1^{}", i + 1)).collect();
    let solved = solve_affine(n, order, &names, "lambda_solver", |fields| {
        (0..n)
            .map(|k| {
                let mut acc = Jet::zero(n, order.saturating_sub(1));
                for i in 0..n {
                    acc = acc.add(&g_row[i].mul(&fields[i].diff(k)));
                }
                for j in 1..n {
                    acc = acc.add(&w[k][j - 1].mul(&fields[j]));
                }
                (format!("lambda-eq k={}", k + 1), acc)
            })
            .collect()
    })?;
    Ok(LambdaSolve {
        n,
        order,
        solved,
        g0: sys.metric().at_origin(),
    })
}

impl LambdaSolve {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn solved(&self) -> &Solved {
        &self.solved
    }

    fn default_value(key: &VarKey) -> Rat {
        if key.field == 0 && key.index.degree() == 0 {
            Rat::one()
        } else {
            Rat::zero()
        }
    }

    /// Jets of `lambda_1^1 .. lambda_1^n` under the given pins; free
    /// coefficients default to zero except `lambda_1^1(q0) = 1`.
    pub fn first_column_jets(&self, pins: &Pins) -> Result<Vec<Jet>> {
        let assignment = self
            .solved
            .assign(pins, Self::default_value, "lambda_solver")?;
        Ok((0..self.n).map(|f| assignment.jet_of_field(f)).collect())
    }

    /// Ledger of every coefficient per degree, with values resolved under
    /// the pins and defaults.
    pub fn report(&self, pins: &Pins) -> Result<SolutionSpaceReport> {
        let assignment = self
            .solved
            .assign(pins, Self::default_value, "lambda_solver")?;
        let mut degrees = Vec::new();
        for d in 0..=self.order {
            let mut entries = Vec::new();
            for field in 0..self.n {
                for alpha in monomials(self.n, d).iter() {
                    let col = self.solved.columns.col_of(field, alpha.exps());
                    let forced = self.solved.is_forced(col);
                    let identically_forced = self
                        .solved
                        .forced_expr(col)
                        .map(|e| e.free_terms.is_empty())
                        .unwrap_or(false);
                    let key = VarKey {
                        field,
                        index: alpha.clone(),
                    };
                    entries.push(CoeffReport {
                        name: coefficient_name(field, alpha),
                        field,
                        index: alpha.clone(),
                        forced,
                        identically_forced,
                        pinned: pins.contains_key(&key),
                        value: assignment.value(field, alpha.exps()),
                    });
                }
            }
            degrees.push(DegreeReport { degree: d, entries });
        }
        Ok(SolutionSpaceReport {
            order: self.order,
            degrees,
            constant_basis: phi_g_kernel_basis(&self.g0)?,
        })
    }

    /// Linear map from the relevant free coefficients to the achievable
    /// origin values `lambda_1(q0)`: returns the free columns and the
    /// `n x F` matrix of their contributions.
    pub fn origin_freedom(&self) -> (Vec<usize>, RatMatrix) {
        let zeros = vec![0u32; self.n];
        let mut free_cols: Vec<usize> = Vec::new();
        let mut contributions: Vec<(usize, Vec<(usize, Rat)>)> = Vec::new();
        for f in 0..self.n {
            let col = self.solved.columns.col_of(f, &zeros);
            match self.solved.forced_expr(col) {
                None => {
                    contributions.push((f, vec![(col, Rat::one())]));
                    if !free_cols.contains(&col) {
                        free_cols.push(col);
                    }
                }
                Some(expr) => {
                    debug_assert!(expr.constant.is_zero(), "lambda system is homogeneous");
                    let mut terms = Vec::new();
                    for (c, w) in expr.free_terms {
                        if !free_cols.contains(&c) {
                            free_cols.push(c);
                        }
                        terms.push((c, w));
                    }
                    contributions.push((f, terms));
                }
            }
        }
        free_cols.sort_unstable();
        let mut map = RatMatrix::zeros(self.n, free_cols.len());
        for (f, terms) in contributions {
            for (c, w) in terms {
                let idx = free_cols.binary_search(&c).unwrap();
                map[(f, idx)] = &map[(f, idx)] + &w;
            }
        }
        (free_cols, map)
    }

    /// Pins fixing the full origin vector `lambda_1(q0) = ell`.
    pub fn origin_pins(&self, ell: &[Rat]) -> Pins {
        assert_eq!(ell.len(), self.n);
        let mut pins = Pins::new();
        for (f, v) in ell.iter().enumerate() {
            pins.insert(
                VarKey {
                    field: f,
                    index: MultiIndex::new(vec![0; self.n]),
                },
                v.clone(),
            );
        }
        pins
    }
}

/// The three residual collections of the kinetic-shaping equivalence, all
/// evaluated on coordinate frame fields as jets.
#[derive(Debug)]
pub struct MethodResiduals {
    /// `(nabla_Z (G_ol lambda))(PX, PY)` for Z, X, Y frame fields
    /// (index `[k][i][j]`, flattened).
    pub two_a: Vec<Jet>,
    /// Polarized condition 2(b) residuals (index `[i][k][l]`, k <= l).
    pub two_b: Vec<Jet>,
    /// Projected Christoffel-difference residual of the kinetic PDE
    /// (index `[j][k]`, j <= k).
    pub kinetic: Vec<Jet>,
}

impl MethodResiduals {
    pub fn two_a_vanishes(&self) -> bool {
        self.two_a.iter().all(Jet::is_zero)
    }

    pub fn two_b_vanishes(&self) -> bool {
        self.two_b.iter().all(Jet::is_zero)
    }

    pub fn kinetic_vanishes(&self) -> bool {
        self.kinetic.iter().all(Jet::is_zero)
    }
}

/// Evaluates conditions 2(a), 2(b) and the kinetic PDE residual for a
/// candidate pair. Requires the factorization `G_ol = G_cl * lambda` to hold
/// coefficient-wise (that hypothesis links the two sides of the
/// equivalence).
pub fn lambda_method_residuals(
    sys: &MechanicalSystem,
    g_cl: &JetMatrix,
    lambda: &LambdaField,
) -> Result<MethodResiduals> {
    let n = sys.dim();
    let g = sys.metric();
    let lam = lambda.matrix();
    let product = g_cl.mul(lam);
    for i in 0..n {
        for j in 0..n {
            if !product.get(i, j).agrees_with(g.get(i, j)) {
                return Err(Error::Lambda(
                    "factorization precondition violated: G_ol != G_cl * lambda".into(),
                ));
            }
        }
    }

    let gamma = sys.christoffel();
    let g11_inv = g.get(0, 0).invert().expect("G_11(0) > 0 for a valid metric");
    // projector weights P d_i = p_i d_1
    let p: Vec<Jet> = (0..n).map(|i| g.get(0, i).mul(&g11_inv)).collect();
    let dp: Vec<Vec<Jet>> = (0..n)
        .map(|i| (0..n).map(|k| p[i].diff(k)).collect())
        .collect();

    // T = G_ol^b o lambda, T[i][j] = sum_l lambda[l][i] G[l][j]
    let t = lam.transpose().mul(g);
    let mut two_a = Vec::with_capacity(n * n * n);
    let mut core_2a = Vec::with_capacity(n);
    for k in 0..n {
        let mut c = t.get(0, 0).diff(k);
        for s in 0..n {
            c = c.sub(&gamma.get(s, k, 0).mul(&t.get(s, 0).add(t.get(0, s))));
        }
        core_2a.push(c);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                two_a.push(p[i].mul(&p[j]).mul(&core_2a[k]));
            }
        }
    }

    // u = lambda(d_1): first column of the lambda matrix
    let u: Vec<Jet> = lambda.first_column();
    let du: Vec<Vec<Jet>> = (0..n)
        .map(|m| (0..n).map(|k| u[m].diff(k)).collect())
        .collect();

    // base[k][l]: the i-independent part of polarized 2(b)
    let cl_order = g_cl.order().saturating_sub(1);
    let mut base = vec![vec![Jet::zero(n, cl_order); n]; n];
    for k in 0..n {
        for l in 0..=k {
            let mut acc = Jet::zero(n, cl_order);
            // (nabla_u G_cl)(k,l)
            for s in 0..n {
                let mut term = g_cl.get(k, l).diff(s);
                for m in 0..n {
                    term = term
                        .sub(&gamma.get(m, s, k).mul(g_cl.get(m, l)))
                        .sub(&gamma.get(m, s, l).mul(g_cl.get(k, m)));
                }
                acc = acc.add(&u[s].mul(&term));
            }
            // G_cl(nabla_k u, d_l) + G_cl(nabla_l u, d_k)
            for m in 0..n {
                let mut cov_k = du[m][k].clone();
                let mut cov_l = du[m][l].clone();
                for s in 0..n {
                    cov_k = cov_k.add(&gamma.get(m, k, s).mul(&u[s]));
                    cov_l = cov_l.add(&gamma.get(m, l, s).mul(&u[s]));
                }
                acc = acc
                    .add(&g_cl.get(m, l).mul(&cov_k))
                    .add(&g_cl.get(k, m).mul(&cov_l));
            }
            // - G_ol(nabla_k d_1, d_l) - G_ol(nabla_l d_1, d_k)
            for m in 0..n {
                acc = acc
                    .sub(&gamma.get(m, k, 0).mul(g.get(m, l)))
                    .sub(&gamma.get(m, l, 0).mul(g.get(k, m)));
            }
            base[k][l] = acc;
        }
    }
    // mismatch[l] = G_cl(u, d_l) - G_ol(d_1, d_l); multiplies the projector
    // derivative terms
    let mismatch: Vec<Jet> = (0..n)
        .map(|l| {
            let mut acc = Jet::zero(n, g_cl.order());
            for m in 0..n {
                acc = acc.add(&g_cl.get(m, l).mul(&u[m]));
            }
            acc.sub(g.get(0, l))
        })
        .collect();
    let mut two_b = Vec::new();
    for i in 0..n {
        for k in 0..n {
            for l in 0..=k {
                let r = p[i]
                    .mul(&base[k][l])
                    .add(&dp[i][k].mul(&mismatch[l]))
                    .add(&dp[i][l].mul(&mismatch[k]));
                two_b.push(r);
            }
        }
    }

    // kinetic PDE residual: projected Christoffel difference
    let gamma_cl = christoffel_of(g_cl)
        .map_err(|_| Error::Lambda("degenerate candidate: G_cl(q0) singular".into()))?;
    let mut kinetic = Vec::new();
    for j in 0..n {
        for k in 0..=j {
            let mut acc = Jet::zero(n, cl_order);
            for r in 0..n {
                acc = acc.add(
                    &g.get(0, r)
                        .mul(&gamma_cl.get(r, j, k).sub(gamma.get(r, j, k))),
                );
            }
            kinetic.push(acc.mul(&g11_inv));
        }
    }

    Ok(MethodResiduals {
        two_a,
        two_b,
        kinetic,
    })
}

/// `G_cl` from a candidate lambda: `G_cl^b = G_ol^b o lambda^{-1}`.
pub fn closed_loop_metric_from_lambda(
    sys: &MechanicalSystem,
    lambda: &LambdaField,
) -> Result<JetMatrix> {
    let inv = lambda
        .matrix()
        .inverse()
        .map_err(|_| Error::Lambda("degenerate candidate: lambda(q0) singular".into()))?;
    Ok(sys.metric().mul(&inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{rat, ratio};
    use crate::testutil::{two_dof_cross_term, two_dof_indefinite};

    #[test]
    fn phi_kernel_identity_n2() {
        let basis = phi_g_kernel_basis(&RatMatrix::identity(2)).unwrap();
        assert_eq!(basis.len(), 2);
        assert_eq!(basis[0], RatMatrix::from_i64(&[&[1, 0], &[0, 0]]));
        assert_eq!(basis[1], RatMatrix::from_i64(&[&[0, 0], &[0, 1]]));
    }

    #[test]
    fn phi_kernel_identity_n3() {
        let basis = phi_g_kernel_basis(&RatMatrix::identity(3)).unwrap();
        assert_eq!(basis.len(), 4);
    }

    #[test]
    fn phi_kernel_diag23() {
        let basis = phi_g_kernel_basis(&RatMatrix::from_i64(&[&[2, 0], &[0, 3]])).unwrap();
        assert_eq!(basis.len(), 2);
        for b in &basis {
            // A o G# symmetric and the restricted pattern hold exactly
            let g_inv = RatMatrix::from_rows(vec![
                vec![ratio(1, 2), rat(0)],
                vec![rat(0), ratio(1, 3)],
            ]);
            assert!(b.mul(&g_inv).is_symmetric());
            assert!(b[(1, 0)].is_zero());
        }
    }

    #[test]
    fn phi_kernel_degenerate_rejected() {
        assert!(phi_g_kernel_basis(&RatMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn constant_residual_examples() {
        // constant metric: all Christoffels vanish, any pattern passes
        let flat = crate::geometry::MechanicalSystem::new(
            JetMatrix::identity(2, 2, 3),
            Jet::zero(2, 3),
        )
        .unwrap();
        let any = RatMatrix::from_i64(&[&[3, 1], &[7, 2]]);
        assert!(constant_lambda_residual(&flat, &any)
            .iter()
            .all(Jet::is_zero));

        let sys = two_dof_indefinite(4);
        let diag = RatMatrix::from_i64(&[&[5, 0], &[0, 2]]);
        assert!(constant_lambda_residual(&sys, &diag)
            .iter()
            .all(Jet::is_zero));

        // lambda_1^2 = 1 violates the pattern: the 2 q2 term survives
        let bad = RatMatrix::from_i64(&[&[1, 0], &[1, 1]]);
        let res = constant_lambda_residual(&sys, &bad);
        assert!(!res[0].is_zero());
        assert_eq!(res[0].coeff(&[0, 1]), rat(2));
        assert_eq!(res[1].coeff(&[1, 0]), rat(-2));
    }

    #[test]
    fn formal_solve_two_dof_forces_c11_d00() {
        let sys = two_dof_indefinite(4);
        let solve = formal_lambda_solve(&sys, 3).unwrap();
        let report = solve.report(&Pins::new()).unwrap();

        let c11 = report.find("C11").unwrap();
        assert!(c11.forced && c11.identically_forced);
        assert!(c11.value.is_zero());

        let d00 = report.find("D00").unwrap();
        assert!(d00.forced && d00.identically_forced);
        assert!(d00.value.is_zero());

        let c00 = report.find("C00").unwrap();
        assert!(!c00.forced);
        assert_eq!(c00.value, rat(1));

        // defaults give the constant candidate (1, 0)
        let jets = solve.first_column_jets(&Pins::new()).unwrap();
        assert!(jets[0].agrees_with(&Jet::one(2, 3)));
        assert!(jets[1].is_zero());
    }

    #[test]
    fn formal_solve_constant_metric_all_free() {
        let flat = crate::geometry::MechanicalSystem::new(
            JetMatrix::identity(2, 2, 4),
            Jet::zero(2, 4),
        )
        .unwrap();
        let solve = formal_lambda_solve(&flat, 3).unwrap();
        let report = solve.report(&Pins::new()).unwrap();
        for d in &report.degrees {
            for e in &d.entries {
                assert!(!e.forced, "{} unexpectedly forced", e.name);
            }
        }
    }

    #[test]
    fn formal_solve_cross_term_frees_d00() {
        let sys = two_dof_cross_term(4);
        let solve = formal_lambda_solve(&sys, 3).unwrap();
        let report = solve.report(&Pins::new()).unwrap();
        let d00 = report.find("D00").unwrap();
        assert!(!d00.forced, "cross-term metric leaves lambda_1^2(q0) free");
    }

    #[test]
    fn identity_lambda_residuals_vanish() {
        let sys = two_dof_indefinite(4);
        let lambda = LambdaField::identity(2, 2, 4);
        let g_cl = sys.metric().clone();
        let res = lambda_method_residuals(&sys, &g_cl, &lambda).unwrap();
        assert!(res.two_a_vanishes());
        assert!(res.two_b_vanishes());
        assert!(res.kinetic_vanishes());
    }

    #[test]
    fn closed_loop_metric_examples() {
        let sys = two_dof_indefinite(4);
        let identity = LambdaField::identity(2, 2, 4);
        let g_cl = closed_loop_metric_from_lambda(&sys, &identity).unwrap();
        assert_eq!(&g_cl, sys.metric());

        let mut singular = JetMatrix::zeros(2, 2, 2, 4);
        *singular.get_mut(0, 0) = Jet::variable(2, 4, 0);
        *singular.get_mut(1, 1) = Jet::one(2, 4);
        let bad = LambdaField::from_matrix(singular);
        assert!(closed_loop_metric_from_lambda(&sys, &bad).is_err());
    }

    #[test]
    fn origin_freedom_two_dof() {
        let sys = two_dof_indefinite(4);
        let solve = formal_lambda_solve(&sys, 3).unwrap();
        let (free_cols, map) = solve.origin_freedom();
        // only lambda_1^1(q0) contributes: the image is span{e1}
        assert_eq!(map.nrows(), 2);
        assert_eq!(free_cols.len(), map.ncols());
        assert_eq!(map.rank(), 1);
        let cross = two_dof_cross_term(4);
        let solve2 = formal_lambda_solve(&cross, 3).unwrap();
        let (_, map2) = solve2.origin_freedom();
        assert_eq!(map2.rank(), 2, "cross-term metric frees the origin value");
    }
}
