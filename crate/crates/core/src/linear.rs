//! Linearization at the equilibrium, exact Kalman controllability, and the
//! design of the origin-level target matrix for the shaping equations.

use num::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::geometry::{hessian_at_origin, MechanicalSystem};
use crate::jet::{ratio, Rat};
use crate::ratmat::RatMatrix;

/// Exact first-order data at the equilibrium.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// `G(q0)`.
    pub mass: RatMatrix,
    /// `Hess(V_ol)(q0)`.
    pub stiffness: RatMatrix,
    /// Basis covectors of the actuated codistribution, as columns `e2..en`.
    pub input_map: RatMatrix,
    /// First-order form `[[0, I], [-mass^{-1} stiffness, 0]]`.
    pub state_matrix: RatMatrix,
    /// `[[0], [mass^{-1} input_map]]`, one column per actuator.
    pub input_matrix: RatMatrix,
}

pub fn linearize(sys: &MechanicalSystem) -> Linearization {
    let n = sys.dim();
    let mass = sys.metric().at_origin();
    let stiffness = hessian_at_origin(sys.potential());
    let mass_inv = mass.inverse().expect("validated mass matrix is invertible");

    let mut input_map = RatMatrix::zeros(n, n - 1);
    for j in 1..n {
        input_map[(j, j - 1)] = Rat::one();
    }

    let minus_a = mass_inv.mul(&stiffness);
    let mut state_matrix = RatMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        state_matrix[(i, n + i)] = Rat::one();
        for j in 0..n {
            state_matrix[(n + i, j)] = -minus_a[(i, j)].clone();
        }
    }

    let forced = mass_inv.mul(&input_map);
    let mut input_matrix = RatMatrix::zeros(2 * n, n - 1);
    for i in 0..n {
        for j in 0..n - 1 {
            input_matrix[(n + i, j)] = forced[(i, j)].clone();
        }
    }

    Linearization {
        mass,
        stiffness,
        input_map,
        state_matrix,
        input_matrix,
    }
}

/// Rank of `[B, AB, ..., A^{2n-1} B]` over the rationals; controllable iff
/// the rank is `2n`.
pub fn kalman_controllable(lin: &Linearization) -> (bool, usize) {
    let dim = lin.state_matrix.nrows();
    let n_inputs = lin.input_matrix.ncols();
    if n_inputs == 0 {
        return (false, 0);
    }
    let mut blocks = Vec::with_capacity(dim);
    let mut current = lin.input_matrix.clone();
    for _ in 0..dim {
        blocks.push(current.clone());
        current = lin.state_matrix.mul(&current);
    }
    let mut kalman = RatMatrix::zeros(dim, dim * n_inputs);
    for (b, block) in blocks.iter().enumerate() {
        for i in 0..dim {
            for j in 0..n_inputs {
                kalman[(i, b * n_inputs + j)] = block[(i, j)].clone();
            }
        }
    }
    let rank = kalman.rank();
    (rank == dim, rank)
}

/// The origin-level design target: `A` with its first row forced to the
/// unactuated row of `G#(q0) HessV(q0)`, remaining rows realizing a positive
/// real spectrum, plus the covector-valued correction realizing it.
#[derive(Debug, Clone)]
pub struct TargetMatrix {
    pub a: RatMatrix,
    pub spectrum: Vec<Rat>,
    /// `G(q0) A - Hess(V_ol)(q0)`: the origin-level feedback contribution;
    /// its first row is exactly zero.
    pub u_at_origin: RatMatrix,
    /// Floating-point condition number of the eigenvector matrix.
    pub eig_cond: f64,
}

/// Eigenvector-matrix condition numbers above this refuse the certificate.
pub const EIG_COND_LIMIT: f64 = 1e8;

/// Designs `A` for the requested positive spectrum (default: distinct values
/// spread over [1/2, 3/2]). The first row is untouchable; infeasible
/// requests are reported, not approximated.
pub fn design_target(lin: &Linearization, request: Option<&[Rat]>) -> Result<TargetMatrix> {
    let n = lin.mass.nrows();
    let (controllable, rank) = kalman_controllable(lin);
    if !controllable {
        return Err(Error::Linear(format!(
            "system is not linearly controllable (Kalman rank {rank} of {})",
            2 * n
        )));
    }
    let mass_inv = lin.mass.inverse().expect("mass invertible");
    let product = mass_inv.mul(&lin.stiffness);
    let first_row: Vec<Rat> = product.row(0).to_vec();
    let row_pinned = first_row.iter().skip(1).all(Rat::is_zero);

    let spectrum: Vec<Rat> = match request {
        Some(s) => {
            validate_spectrum(s)?;
            if row_pinned && !s.contains(&first_row[0]) {
                return Err(Error::Linear(format!(
                    "first-row constraint incompatible with requested spectrum: \
                     {} is an eigenvalue forced by the unactuated row",
                    first_row[0]
                )));
            }
            s.to_vec()
        }
        None => {
            if row_pinned {
                if !first_row[0].is_positive() {
                    return Err(Error::Linear(format!(
                        "unactuated row forces eigenvalue {} <= 0; no positive spectrum \
                         is achievable",
                        first_row[0]
                    )));
                }
                let mut s = vec![first_row[0].clone()];
                s.extend(default_spectrum(n).into_iter().filter(|m| *m != first_row[0]));
                s.truncate(n);
                ensure_distinct(&mut s);
                s
            } else {
                default_spectrum(n)
            }
        }
    };

    let a = if row_pinned {
        build_block_target(&first_row[0], &spectrum)
    } else {
        build_krylov_target(&first_row, &spectrum)?
    };

    // exact verification: characteristic polynomial equals prod (x - mu)
    let charpoly = a.charpoly();
    let expected = poly_from_roots(&spectrum);
    if charpoly != expected {
        return Err(Error::Linear(
            "internal: constructed target has wrong characteristic polynomial".into(),
        ));
    }

    // eigenvector matrix from exact nullspaces; condition number gates the
    // diagonalizability certificate
    let mut eigvecs = RatMatrix::zeros(n, n);
    for (c, mu) in spectrum.iter().enumerate() {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] = &shifted[(i, i)] - mu;
        }
        let ns = shifted.nullspace();
        if ns.is_empty() {
            return Err(Error::Linear(format!("no eigenvector for {mu}")));
        }
        for i in 0..n {
            eigvecs[(i, c)] = ns[0][i].clone();
        }
    }
    let svd = eigvecs.to_f64().svd(false, false);
    let eig_cond = svd.singular_values.max() / svd.singular_values.min();
    if !eig_cond.is_finite() || eig_cond >= EIG_COND_LIMIT {
        return Err(Error::Linear(format!(
            "eigenvector matrix condition number {eig_cond:e} refuses the certificate"
        )));
    }

    let u_at_origin = lin.mass.mul(&a).sub(&lin.stiffness);
    debug_assert!(u_at_origin.row(0).iter().all(Rat::is_zero));

    Ok(TargetMatrix {
        a,
        spectrum,
        u_at_origin,
        eig_cond,
    })
}

fn validate_spectrum(s: &[Rat]) -> Result<()> {
    if s.iter().any(|m| !m.is_positive()) {
        return Err(Error::Linear("requested spectrum must be positive".into()));
    }
    for i in 0..s.len() {
        for j in 0..i {
            if s[i] == s[j] {
                return Err(Error::Linear(
                    "requested spectrum must be distinct (diagonalizability gate)".into(),
                ));
            }
        }
    }
    Ok(())
}

/// `n` distinct rationals spread over [1/2, 3/2].
pub fn default_spectrum(n: usize) -> Vec<Rat> {
    if n == 1 {
        return vec![Rat::one()];
    }
    (0..n)
        .map(|i| ratio(1, 2) + ratio(i as i64, n as i64 - 1))
        .collect()
}

fn ensure_distinct(s: &mut Vec<Rat>) {
    let mut i = 1;
    while i < s.len() {
        if s[..i].contains(&s[i]) {
            s[i] += ratio(1, 7); // deterministic nudge, re-checked
            continue;
        }
        i += 1;
    }
}

/// Monic polynomial with the given roots; constant term first.
fn poly_from_roots(roots: &[Rat]) -> Vec<Rat> {
    let mut coeffs = vec![Rat::one()];
    for r in roots {
        let mut next = vec![Rat::zero(); coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            next[k + 1] = &next[k + 1] + c;
            next[k] = &next[k] - &(c * r);
        }
        coeffs = next;
    }
    coeffs
}

/// Target when the forced first row is `r1 e1`: block-diagonal with a lower
/// companion block carrying the remaining spectrum.
fn build_block_target(r1: &Rat, spectrum: &[Rat]) -> RatMatrix {
    let n = spectrum.len();
    let rest: Vec<Rat> = spectrum.iter().filter(|m| *m != r1).cloned().collect();
    let p = poly_from_roots(&rest);
    let m = rest.len();
    let mut a = RatMatrix::zeros(n, n);
    a[(0, 0)] = r1.clone();
    for i in 0..m {
        if i + 1 < m {
            a[(1 + i + 1, 1 + i)] = Rat::one();
        }
        a[(1 + i, 1 + m - 1)] = -p[i].clone();
    }
    a
}

/// General construction: the transpose acts as a companion matrix on the
/// Krylov-style basis `{e1, r, extensions}`, which pins the first row to `r`
/// while realizing the requested characteristic polynomial.
fn build_krylov_target(first_row: &[Rat], spectrum: &[Rat]) -> Result<RatMatrix> {
    let n = first_row.len();
    let mut basis: Vec<Vec<Rat>> = Vec::with_capacity(n);
    let mut e1 = vec![Rat::zero(); n];
    e1[0] = Rat::one();
    basis.push(e1);
    basis.push(first_row.to_vec());
    for cand in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = vec![Rat::zero(); n];
        v[cand] = Rat::one();
        let mut trial = basis.clone();
        trial.push(v.clone());
        let m = RatMatrix::from_rows(trial.clone());
        if m.rank() == trial.len() {
            basis.push(v);
        }
    }
    if basis.len() != n {
        return Err(Error::Linear(
            "could not extend {e1, first row} to a basis".into(),
        ));
    }
    let mut u = RatMatrix::zeros(n, n);
    for (c, v) in basis.iter().enumerate() {
        for i in 0..n {
            u[(i, c)] = v[i].clone();
        }
    }
    let p = poly_from_roots(spectrum);
    let mut companion = RatMatrix::zeros(n, n);
    for i in 0..n {
        if i + 1 < n {
            companion[(i + 1, i)] = Rat::one();
        }
        companion[(i, n - 1)] = -p[i].clone();
    }
    let u_inv = u
        .inverse()
        .ok_or_else(|| Error::Linear("basis matrix singular".into()))?;
    Ok(u.mul(&companion).mul(&u_inv).transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{rat, Jet};
    use crate::jetmat::JetMatrix;
    use crate::testutil::two_dof_indefinite;

    #[test]
    fn linearize_two_dof() {
        let sys = two_dof_indefinite(4);
        let lin = linearize(&sys);
        assert_eq!(lin.mass, RatMatrix::identity(2));
        assert_eq!(lin.stiffness, RatMatrix::from_i64(&[&[-2, 2], &[2, 2]]));
        // state matrix block structure
        assert_eq!(lin.state_matrix[(0, 2)], rat(1));
        assert_eq!(lin.state_matrix[(2, 0)], rat(2));
        assert_eq!(lin.state_matrix[(2, 1)], rat(-2));
    }

    #[test]
    fn linearize_oscillator_blocks() {
        let half = ratio(1, 2);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let sys = MechanicalSystem::new(
            JetMatrix::identity(2, 2, 3),
            q1.mul(&q1).add(&q2.mul(&q2)).scale(&half),
        )
        .unwrap();
        let lin = linearize(&sys);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { rat(-1) } else { rat(0) };
                assert_eq!(lin.state_matrix[(2 + i, j)], expect);
            }
        }

        let zero_pot =
            MechanicalSystem::new(JetMatrix::identity(2, 2, 3), Jet::zero(2, 3)).unwrap();
        assert_eq!(linearize(&zero_pot).stiffness, RatMatrix::zeros(2, 2));
    }

    #[test]
    fn kalman_two_dof_controllable() {
        let sys = two_dof_indefinite(4);
        let (ok, rank) = kalman_controllable(&linearize(&sys));
        assert!(ok);
        assert_eq!(rank, 4);
    }

    #[test]
    fn kalman_decoupled_oscillator_uncontrollable() {
        let half = ratio(1, 2);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let sys = MechanicalSystem::new(
            JetMatrix::identity(2, 2, 3),
            q1.mul(&q1).add(&q2.mul(&q2)).scale(&half),
        )
        .unwrap();
        let (ok, rank) = kalman_controllable(&linearize(&sys));
        assert!(!ok);
        assert_eq!(rank, 2);
    }

    #[test]
    fn kalman_no_inputs() {
        let lin = Linearization {
            mass: RatMatrix::identity(1),
            stiffness: RatMatrix::identity(1),
            input_map: RatMatrix::zeros(1, 0),
            state_matrix: RatMatrix::from_i64(&[&[0, 1], &[-1, 0]]),
            input_matrix: RatMatrix::zeros(2, 0),
        };
        assert_eq!(kalman_controllable(&lin), (false, 0));
    }

    #[test]
    fn design_target_two_dof() {
        let sys = two_dof_indefinite(4);
        let lin = linearize(&sys);
        let target = design_target(&lin, None).unwrap();
        // forced first row of G#(q0) HessV(q0)
        assert_eq!(target.a[(0, 0)], rat(-2));
        assert_eq!(target.a[(0, 1)], rat(2));
        // positive spectrum conditions on the free row: y > 2 and x < -y
        let y = target.a[(1, 1)].clone();
        let x = target.a[(1, 0)].clone();
        assert!(y > rat(2));
        assert!(x < -y);
        // the forced correction never touches the unactuated row
        assert!(target.u_at_origin.row(0).iter().all(Rat::is_zero));
        assert!(target.eig_cond < EIG_COND_LIMIT);
    }

    #[test]
    fn design_target_uncontrollable_rejected() {
        let half = ratio(1, 2);
        let q1 = Jet::variable(2, 3, 0);
        let q2 = Jet::variable(2, 3, 1);
        let sys = MechanicalSystem::new(
            JetMatrix::identity(2, 2, 3),
            q1.mul(&q1).add(&q2.mul(&q2)).scale(&half),
        )
        .unwrap();
        assert!(design_target(&linearize(&sys), None).is_err());
    }

    #[test]
    fn design_target_honors_request() {
        let sys = two_dof_indefinite(4);
        let lin = linearize(&sys);
        let req = vec![rat(1), rat(2)];
        let target = design_target(&lin, Some(&req)).unwrap();
        assert_eq!(target.spectrum, req);
        // trace and determinant match the requested spectrum exactly
        let tr = &target.a[(0, 0)] + &target.a[(1, 1)];
        let det = &target.a[(0, 0)] * &target.a[(1, 1)]
            - &(&target.a[(0, 1)] * &target.a[(1, 0)]);
        assert_eq!(tr, rat(3));
        assert_eq!(det, rat(2));
    }
}
