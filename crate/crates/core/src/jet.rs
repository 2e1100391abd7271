//! Exact arithmetic on truncated multivariate Taylor series (jets).
//!
//! A [`Jet`] stores every coefficient of total degree `<= order` of a power
//! series around the origin, as exact rationals. Jets are the carrier for
//! metrics, potentials, lambda fields and residuals throughout the crate:
//! every formal statement ("this residual vanishes to order K") is a
//! statement about stored coefficients, with no tolerances involved.
//!
//! Storage is dense by total degree: one coefficient table per degree, with
//! monomials of a given degree enumerated in a fixed order. This makes
//! iteration (and hence every report) deterministic.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Exact rational scalar used everywhere in the formal layer.
pub type Rat = BigRational;

/// Rational from an integer.
pub fn rat(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

/// Rational `p/q`. Panics if `q == 0`.
pub fn ratio(p: i64, q: i64) -> Rat {
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Number of monomials of total degree `degree` in `n_vars` variables.
pub fn monomial_count(n_vars: usize, degree: usize) -> usize {
    // C(degree + n_vars - 1, n_vars - 1)
    binomial(degree + n_vars - 1, n_vars - 1)
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    usize::try_from(acc).expect("binomial overflow")
}

/// Exponent tuple of a monomial, with its total degree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex {
    exps: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Self {
        Self { exps }
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn degree(&self) -> usize {
        self.exps.iter().map(|&e| e as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.exps.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// All exponent tuples of total degree `degree` in `n_vars` variables, in the
/// canonical enumeration order (first exponent descending, then recursively).
pub fn monomials(n_vars: usize, degree: usize) -> Arc<Vec<MultiIndex>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<MultiIndex>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((n_vars, degree))
        .or_insert_with(|| {
            let mut out = Vec::with_capacity(monomial_count(n_vars, degree));
            let mut cur = vec![0u32; n_vars];
            gen_monomials(n_vars, degree, 0, &mut cur, &mut out);
            Arc::new(out)
        })
        .clone()
}

fn gen_monomials(
    n_vars: usize,
    degree: usize,
    pos: usize,
    cur: &mut Vec<u32>,
    out: &mut Vec<MultiIndex>,
) {
    if pos + 1 == n_vars {
        cur[pos] = degree as u32;
        out.push(MultiIndex::new(cur.clone()));
        return;
    }
    for e in (0..=degree).rev() {
        cur[pos] = e as u32;
        gen_monomials(n_vars, degree - e, pos + 1, cur, out);
    }
}

/// Rank of an exponent tuple within the canonical enumeration of its degree.
pub fn monomial_rank(exps: &[u32]) -> usize {
    let n = exps.len();
    let mut degree: usize = exps.iter().map(|&e| e as usize).sum();
    let mut rank = 0usize;
    for (pos, &e) in exps.iter().enumerate() {
        if pos + 1 == n {
            break;
        }
        let rest = n - pos - 1;
        // tuples whose exponent at `pos` exceeds `e` come first
        for higher in (e as usize + 1)..=degree {
            rank += monomial_count(rest, degree - higher);
        }
        degree -= e as usize;
    }
    rank
}

/// Truncated multivariate Taylor series with exact rational coefficients.
///
/// All coefficients of total degree `<= order` are stored; a lookup beyond
/// the truncation order is exactly zero by convention. Arithmetic follows
/// the min-order rule: the result of a binary operation carries the smaller
/// of the two operand orders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Jet {
    dim: usize,
    order: usize,
    /// `coeffs[d][r]` = coefficient of the rank-`r` monomial of degree `d`.
    coeffs: Vec<Vec<Rat>>,
}

impl Jet {
    pub fn zero(dim: usize, order: usize) -> Self {
        assert!(dim >= 1, "jet dimension must be at least 1");
        let coeffs = (0..=order)
            .map(|d| vec![Rat::zero(); monomial_count(dim, d)])
            .collect();
        Self { dim, order, coeffs }
    }

    pub fn constant(dim: usize, order: usize, value: Rat) -> Self {
        let mut jet = Self::zero(dim, order);
        jet.coeffs[0][0] = value;
        jet
    }

    pub fn one(dim: usize, order: usize) -> Self {
        Self::constant(dim, order, Rat::one())
    }

    /// The coordinate function `q^(var+1)` (zero-based `var`).
    pub fn variable(dim: usize, order: usize, var: usize) -> Self {
        assert!(var < dim, "variable index {var} out of range for dim {dim}");
        assert!(order >= 1, "order 0 jet cannot carry a variable");
        let mut jet = Self::zero(dim, order);
        let mut exps = vec![0u32; dim];
        exps[var] = 1;
        jet.coeffs[1][monomial_rank(&exps)] = Rat::one();
        jet
    }

    /// Single monomial `value * q^exps`. Monomials beyond the truncation
    /// order are dropped (resulting in the zero jet).
    pub fn monomial(dim: usize, order: usize, exps: &[u32], value: Rat) -> Self {
        assert_eq!(exps.len(), dim, "exponent tuple length must match dim");
        let mut jet = Self::zero(dim, order);
        let d: usize = exps.iter().map(|&e| e as usize).sum();
        if d <= order {
            jet.coeffs[d][monomial_rank(exps)] = value;
        }
        jet
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Coefficient of the monomial with the given exponents; exactly zero
    /// beyond the truncation order.
    pub fn coeff(&self, exps: &[u32]) -> Rat {
        assert_eq!(exps.len(), self.dim, "exponent tuple length must match dim");
        let d: usize = exps.iter().map(|&e| e as usize).sum();
        if d > self.order {
            return Rat::zero();
        }
        self.coeffs[d][monomial_rank(exps)].clone()
    }

    pub fn set_coeff(&mut self, exps: &[u32], value: Rat) {
        assert_eq!(exps.len(), self.dim);
        let d: usize = exps.iter().map(|&e| e as usize).sum();
        assert!(d <= self.order, "coefficient degree exceeds truncation order");
        self.coeffs[d][monomial_rank(exps)] = value;
    }

    pub fn constant_term(&self) -> Rat {
        self.coeffs[0][0].clone()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|row| row.iter().all(|c| c.is_zero()))
    }

    /// Same series truncated (or zero-extended is not allowed) to `order`.
    pub fn truncated(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet {
            dim: self.dim,
            order,
            coeffs: self.coeffs[..=order].to_vec(),
        }
    }

    /// True when every stored coefficient of `self` equals the corresponding
    /// coefficient of `other` up to the smaller of the two orders.
    pub fn agrees_with(&self, other: &Jet) -> bool {
        assert_eq!(self.dim, other.dim);
        let k = self.order.min(other.order);
        (0..=k).all(|d| self.coeffs[d] == other.coeffs[d])
    }

    pub fn add(&self, other: &Jet) -> Jet {
        assert_eq!(self.dim, other.dim, "jet dimension mismatch");
        let order = self.order.min(other.order);
        let mut out = Jet::zero(self.dim, order);
        for d in 0..=order {
            for r in 0..out.coeffs[d].len() {
                out.coeffs[d][r] = &self.coeffs[d][r] + &other.coeffs[d][r];
            }
        }
        out
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Jet {
        let mut out = self.clone();
        for row in &mut out.coeffs {
            for c in row.iter_mut() {
                *c = -c.clone();
            }
        }
        out
    }

    pub fn scale(&self, factor: &Rat) -> Jet {
        let mut out = self.clone();
        for row in &mut out.coeffs {
            for c in row.iter_mut() {
                *c = &*c * factor;
            }
        }
        out
    }

    /// Cauchy product truncated to the smaller operand order.
    pub fn mul(&self, other: &Jet) -> Jet {
        assert_eq!(self.dim, other.dim, "jet dimension mismatch");
        let order = self.order.min(other.order);
        let mut out = Jet::zero(self.dim, order);
        for da in 0..=order {
            let mons_a = monomials(self.dim, da);
            for (ra, alpha) in mons_a.iter().enumerate() {
                let ca = &self.coeffs[da][ra];
                if ca.is_zero() {
                    continue;
                }
                for db in 0..=(order - da) {
                    let mons_b = monomials(self.dim, db);
                    for (rb, beta) in mons_b.iter().enumerate() {
                        let cb = &other.coeffs[db][rb];
                        if cb.is_zero() {
                            continue;
                        }
                        let gamma: Vec<u32> = alpha
                            .exps()
                            .iter()
                            .zip(beta.exps())
                            .map(|(a, b)| a + b)
                            .collect();
                        let rg = monomial_rank(&gamma);
                        out.coeffs[da + db][rg] = &out.coeffs[da + db][rg] + &(ca * cb);
                    }
                }
            }
        }
        out
    }

    /// Formal partial derivative with respect to variable `var` (zero-based).
    /// The order drops by one (clamped at zero).
    pub fn diff(&self, var: usize) -> Jet {
        assert!(var < self.dim, "variable index {var} out of range");
        let order = self.order.saturating_sub(1);
        let mut out = Jet::zero(self.dim, order);
        for d in 1..=self.order.min(order + 1) {
            let mons = monomials(self.dim, d);
            for (r, alpha) in mons.iter().enumerate() {
                let e = alpha.exps()[var];
                if e == 0 {
                    continue;
                }
                let c = &self.coeffs[d][r];
                if c.is_zero() {
                    continue;
                }
                let mut exps = alpha.exps().to_vec();
                exps[var] -= 1;
                let rg = monomial_rank(&exps);
                out.coeffs[d - 1][rg] = &out.coeffs[d - 1][rg] + &(c * rat(e as i64));
            }
        }
        out
    }

    /// Multiplicative inverse to the truncation order. Requires a nonzero
    /// constant term.
    pub fn invert(&self) -> Result<Jet> {
        if self.constant_term().is_zero() {
            return Err(Error::Jet("not invertible at origin".into()));
        }
        let a0_inv = self.constant_term().recip();
        let mut out = Jet::zero(self.dim, self.order);
        out.coeffs[0][0] = a0_inv.clone();
        for d in 1..=self.order {
            // b_d solves sum_{e<=d} a_e * b_{d-e} = 0 for the degree-d slot
            let mons = monomials(self.dim, d);
            for (rg, gamma) in mons.iter().enumerate() {
                let mut acc = Rat::zero();
                for da in 1..=d {
                    let mons_a = monomials(self.dim, da);
                    for (ra, alpha) in mons_a.iter().enumerate() {
                        let ca = &self.coeffs[da][ra];
                        if ca.is_zero() {
                            continue;
                        }
                        if alpha.exps().iter().zip(gamma.exps()).any(|(a, g)| a > g) {
                            continue;
                        }
                        let beta: Vec<u32> = gamma
                            .exps()
                            .iter()
                            .zip(alpha.exps())
                            .map(|(g, a)| g - a)
                            .collect();
                        let rb = monomial_rank(&beta);
                        acc += ca * &out.coeffs[d - da][rb];
                    }
                }
                out.coeffs[d][rg] = -(&a0_inv * acc);
            }
        }
        Ok(out)
    }

    /// Evaluate the stored polynomial at an exact rational point.
    pub fn eval(&self, point: &[Rat]) -> Rat {
        assert_eq!(point.len(), self.dim, "evaluation point length mismatch");
        let mut acc = Rat::zero();
        for d in 0..=self.order {
            let mons = monomials(self.dim, d);
            for (r, alpha) in mons.iter().enumerate() {
                let c = &self.coeffs[d][r];
                if c.is_zero() {
                    continue;
                }
                let mut term = c.clone();
                for (x, &e) in point.iter().zip(alpha.exps()) {
                    for _ in 0..e {
                        term *= x;
                    }
                }
                acc += term;
            }
        }
        acc
    }

    /// Evaluate the stored polynomial in floating point.
    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.dim);
        let mut acc = 0.0;
        for d in 0..=self.order {
            let mons = monomials(self.dim, d);
            for (r, alpha) in mons.iter().enumerate() {
                let c = &self.coeffs[d][r];
                if c.is_zero() {
                    continue;
                }
                let mut term = c.to_f64().expect("rational out of f64 range");
                for (x, &e) in point.iter().zip(alpha.exps()) {
                    for _ in 0..e {
                        term *= x;
                    }
                }
                acc += term;
            }
        }
        acc
    }

    pub fn gradient(&self) -> Vec<Jet> {
        (0..self.dim).map(|k| self.diff(k)).collect()
    }

    /// Iterate stored `(MultiIndex, coefficient)` pairs in canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (MultiIndex, &Rat)> + '_ {
        (0..=self.order).flat_map(move |d| {
            let mons = monomials(self.dim, d);
            (0..self.coeffs[d].len()).map(move |r| (mons[r].clone(), &self.coeffs[d][r]))
        })
    }
}

impl fmt::Display for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (alpha, c) in self.terms() {
            if c.is_zero() {
                continue;
            }
            let mag = c.abs();
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
                first = false;
            } else if c.is_negative() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let is_const = alpha.degree() == 0;
            if !mag.is_one() || is_const {
                write!(f, "{mag}")?;
                if !is_const {
                    write!(f, "*")?;
                }
            }
            let mut sep = false;
            for (v, &e) in alpha.exps().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if sep {
                    write!(f, "*")?;
                }
                sep = true;
                write!(f, "q{}", v + 1)?;
                if e > 1 {
                    write!(f, "^{e}")?;
                }
            }
            let _ = sep;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}
