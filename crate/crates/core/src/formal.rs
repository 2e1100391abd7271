//! Order-by-order solver for linear systems over jet coefficients.
//!
//! Several solves in this crate share one shape: a handful of unknown scalar
//! fields (jets), a residual expression that is affine in those fields, and
//! the requirement that every Taylor coefficient of the residual vanish.
//! This module turns that into exact linear algebra:
//!
//! 1. The residual operator is probed once with all fields zero and once per
//!    unit coefficient, which recovers the full affine system (the operator
//!    must be affine; a debug assertion spot-checks this).
//! 2. Equations are processed in batches of increasing residual degree, with
//!    incremental Gauss-Jordan elimination over exact rationals.
//! 3. Pivot columns are *forced* coefficients, the rest are *free*. Forced
//!    values are affine in the free ones; an [`Assignment`] resolves them
//!    against user pins and defaults.
//!
//! An unsatisfiable row aborts with the offending residual order and row tag
//! rather than any least-squares compromise.

use std::collections::BTreeMap;

use num::Zero;

use crate::error::{Error, Result};
use crate::jet::{monomial_count, monomial_rank, monomials, Jet, MultiIndex, Rat};

/// Identifies one unknown Taylor coefficient: field index plus monomial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct VarKey {
    pub field: usize,
    pub index: MultiIndex,
}

/// Column layout: degree-major, then field, then monomial rank. Low-degree
/// coefficients are eliminated preferentially, matching the order-by-order
/// narrative of the solves.
#[derive(Debug, Clone)]
pub struct Columns {
    n_vars: usize,
    order: usize,
    degree_offsets: Vec<usize>,
}

impl Columns {
    fn new(n_vars: usize, order: usize, n_fields: usize) -> Self {
        let mut degree_offsets = Vec::with_capacity(order + 2);
        let mut acc = 0;
        for d in 0..=order {
            degree_offsets.push(acc);
            acc += n_fields * monomial_count(n_vars, d);
        }
        degree_offsets.push(acc);
        Self {
            n_vars,
            order,
            degree_offsets,
        }
    }

    pub fn total(&self) -> usize {
        *self.degree_offsets.last().unwrap()
    }

    pub fn col_of(&self, field: usize, exps: &[u32]) -> usize {
        let d: usize = exps.iter().map(|&e| e as usize).sum();
        self.degree_offsets[d] + field * monomial_count(self.n_vars, d) + monomial_rank(exps)
    }

    pub fn key_of(&self, col: usize) -> VarKey {
        debug_assert!(col < self.total());
        let d = self.degree_offsets.partition_point(|&off| off <= col) - 1;
        let d = d.min(self.order);
        let per = monomial_count(self.n_vars, d);
        let within = col - self.degree_offsets[d];
        let field = within / per;
        let rank = within % per;
        VarKey {
            field,
            index: monomials(self.n_vars, d)[rank].clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Row {
    coef: Vec<Rat>,
    rhs: Rat,
    tag: String,
    degree: usize,
}

#[derive(Debug, Clone)]
struct PivotRow {
    coef: Vec<Rat>,
    rhs: Rat,
    pivot: usize,
    forced_in_batch: usize,
}

/// Result of the elimination: classification plus enough structure to
/// resolve concrete values under pins and defaults.
#[derive(Debug, Clone)]
pub struct Solved {
    pub columns: Columns,
    pub field_names: Vec<String>,
    pivots: Vec<PivotRow>,
    pivot_of_col: Vec<Option<usize>>,
}

/// One forced coefficient expressed affinely over the free ones.
#[derive(Debug, Clone)]
pub struct ForcedExpr {
    pub constant: Rat,
    /// `(free column, weight)` pairs; empty means identically forced.
    pub free_terms: Vec<(usize, Rat)>,
}

impl Solved {
    pub fn n_fields(&self) -> usize {
        self.field_names.len()
    }

    pub fn is_forced(&self, col: usize) -> bool {
        self.pivot_of_col[col].is_some()
    }

    /// Residual-degree batch in which this column became a pivot.
    pub fn forced_in_batch(&self, col: usize) -> Option<usize> {
        self.pivot_of_col[col].map(|r| self.pivots[r].forced_in_batch)
    }

    pub fn forced_expr(&self, col: usize) -> Option<ForcedExpr> {
        let r = self.pivot_of_col[col]?;
        let row = &self.pivots[r];
        let free_terms = row
            .coef
            .iter()
            .enumerate()
            .filter(|&(j, c)| j != col && !c.is_zero())
            .map(|(j, c)| (j, -c.clone()))
            .collect();
        Some(ForcedExpr {
            constant: row.rhs.clone(),
            free_terms,
        })
    }

    /// Resolve concrete values. Pins may target free or forced coefficients;
    /// a pin that contradicts the system is an error. Unpinned free
    /// coefficients take `default`.
    pub fn assign(
        &self,
        pins: &BTreeMap<VarKey, Rat>,
        default: impl Fn(&VarKey) -> Rat,
        module: &'static str,
    ) -> Result<Assignment> {
        let ncols = self.columns.total();
        let mut rows: Vec<(Vec<Rat>, Rat, String)> = self
            .pivots
            .iter()
            .map(|p| (p.coef.clone(), p.rhs.clone(), String::from("solve row")))
            .collect();
        for (key, value) in pins {
            let col = self.columns.col_of(key.field, key.index.exps());
            let mut coef = vec![Rat::zero(); ncols];
            coef[col] = num::One::one();
            rows.push((
                coef,
                value.clone(),
                format!("pin {}{} = {}", self.field_names[key.field], key.index, value),
            ));
        }
        // full re-reduction of solve rows plus pin rows
        let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row, col)
        let mut reduced: Vec<(Vec<Rat>, Rat)> = Vec::new();
        for (mut coef, mut rhs, tag) in rows {
            for &(r, c) in &pivots {
                if !coef[c].is_zero() {
                    let f = coef[c].clone();
                    let (rc, rr) = &reduced[r];
                    for j in 0..ncols {
                        if !rc[j].is_zero() {
                            let t = &f * &rc[j];
                            coef[j] = &coef[j] - &t;
                        }
                    }
                    let t = &f * rr;
                    rhs = &rhs - &t;
                }
            }
            let Some(lead) = coef.iter().position(|c| !c.is_zero()) else {
                if !rhs.is_zero() {
                    return Err(Error::Tagged {
                        module,
                        msg: format!("{tag} contradicts the solved system"),
                    });
                }
                continue;
            };
            let inv = coef[lead].clone().recip();
            for c in coef.iter_mut() {
                *c = &*c * &inv;
            }
            rhs = &rhs * &inv;
            for &(r, _) in &pivots {
                let f = reduced[r].0[lead].clone();
                if f.is_zero() {
                    continue;
                }
                for j in 0..ncols {
                    let t = &f * &coef[j];
                    reduced[r].0[j] = &reduced[r].0[j] - &t;
                }
                let t = &f * &rhs;
                reduced[r].1 = &reduced[r].1 - &t;
            }
            pivots.push((reduced.len(), lead));
            reduced.push((coef, rhs));
        }
        let mut pivot_col = vec![None; ncols];
        for &(r, c) in &pivots {
            pivot_col[c] = Some(r);
        }
        let mut values = vec![Rat::zero(); ncols];
        for col in 0..ncols {
            if pivot_col[col].is_none() {
                values[col] = default(&self.columns.key_of(col));
            }
        }
        for &(r, c) in &pivots {
            let (coef, rhs) = &reduced[r];
            let mut v = rhs.clone();
            for j in 0..ncols {
                if j != c && !coef[j].is_zero() {
                    let t = &coef[j] * &values[j];
                    v = &v - &t;
                }
            }
            values[c] = v;
        }
        Ok(Assignment {
            columns: self.columns.clone(),
            values,
        })
    }
}

/// Concrete rational values for every unknown coefficient.
#[derive(Debug, Clone)]
pub struct Assignment {
    columns: Columns,
    values: Vec<Rat>,
}

impl Assignment {
    pub fn value(&self, field: usize, exps: &[u32]) -> Rat {
        self.values[self.columns.col_of(field, exps)].clone()
    }

    pub fn jet_of_field(&self, field: usize) -> Jet {
        let mut jet = Jet::zero(self.columns.n_vars, self.columns.order);
        for d in 0..=self.columns.order {
            for alpha in monomials(self.columns.n_vars, d).iter() {
                let v = self.value(field, alpha.exps());
                if !v.is_zero() {
                    jet.set_coeff(alpha.exps(), v);
                }
            }
        }
        jet
    }
}

/// Probes the affine residual operator and eliminates, batch by batch of
/// residual degree. `residual` maps candidate field jets (all of dimension
/// `n_vars` and order `order`) to tagged residual jets.
pub fn solve_affine(
    n_vars: usize,
    order: usize,
    field_names: &[String],
    module: &'static str,
    residual: impl Fn(&[Jet]) -> Vec<(String, Jet)>,
) -> Result<Solved> {
    let n_fields = field_names.len();
    let columns = Columns::new(n_vars, order, n_fields);
    let zero_fields: Vec<Jet> = (0..n_fields).map(|_| Jet::zero(n_vars, order)).collect();
    let base = residual(&zero_fields);

    // column probes
    let mut contributions: Vec<Vec<Jet>> = Vec::with_capacity(columns.total());
    for col in 0..columns.total() {
        let key = columns.key_of(col);
        let mut fields = zero_fields.clone();
        fields[key.field] = Jet::monomial(n_vars, order, key.index.exps(), num::One::one());
        let probed = residual(&fields);
        let delta: Vec<Jet> = probed
            .iter()
            .zip(&base)
            .map(|((_, p), (_, b))| p.sub(b))
            .collect();
        #[cfg(debug_assertions)]
        if col == 0 {
            let mut twice = zero_fields.clone();
            twice[key.field] =
                Jet::monomial(n_vars, order, key.index.exps(), crate::jet::rat(2));
            let probed2 = residual(&twice);
            for (i, ((_, p2), (_, b))) in probed2.iter().zip(&base).enumerate() {
                debug_assert!(
                    p2.sub(b).agrees_with(&delta[i].scale(&crate::jet::rat(2))),
                    "residual operator is not affine"
                );
            }
        }
        contributions.push(delta);
    }

    // rows grouped by residual degree
    let mut rows: Vec<Row> = Vec::new();
    for (ri, (tag, base_jet)) in base.iter().enumerate() {
        for d in 0..=base_jet.order() {
            for alpha in monomials(n_vars, d).iter() {
                let mut coef = vec![Rat::zero(); columns.total()];
                let mut any = false;
                for (col, delta) in contributions.iter().enumerate() {
                    let c = delta[ri].coeff(alpha.exps());
                    if !c.is_zero() {
                        any = true;
                        coef[col] = c;
                    }
                }
                let rhs = -base_jet.coeff(alpha.exps());
                if !any && rhs.is_zero() {
                    continue;
                }
                rows.push(Row {
                    coef,
                    rhs,
                    tag: format!("{tag} @ {alpha}"),
                    degree: d,
                });
            }
        }
    }
    rows.sort_by_key(|r| r.degree);

    let mut pivots: Vec<PivotRow> = Vec::new();
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; columns.total()];
    for row in rows {
        let Row {
            mut coef,
            mut rhs,
            tag,
            degree,
        } = row;
        for p in &pivots {
            if !coef[p.pivot].is_zero() {
                let f = coef[p.pivot].clone();
                for j in 0..columns.total() {
                    if !p.coef[j].is_zero() {
                        let t = &f * &p.coef[j];
                        coef[j] = &coef[j] - &t;
                    }
                }
                let t = &f * &p.rhs;
                rhs = &rhs - &t;
            }
        }
        let Some(lead) = coef.iter().position(|c| !c.is_zero()) else {
            if rhs.is_zero() {
                continue;
            }
            return Err(Error::Inconsistent {
                module,
                order: degree,
                row: tag,
            });
        };
        let inv = coef[lead].clone().recip();
        for c in coef.iter_mut() {
            *c = &*c * &inv;
        }
        rhs = &rhs * &inv;
        for p in pivots.iter_mut() {
            if p.coef[lead].is_zero() {
                continue;
            }
            let f = p.coef[lead].clone();
            for j in 0..columns.total() {
                let t = &f * &coef[j];
                p.coef[j] = &p.coef[j] - &t;
            }
            let t = &f * &rhs;
            p.rhs = &p.rhs - &t;
        }
        pivot_of_col[lead] = Some(pivots.len());
        pivots.push(PivotRow {
            coef,
            rhs,
            pivot: lead,
            forced_in_batch: degree,
        });
    }

    Ok(Solved {
        columns,
        field_names: field_names.to_vec(),
        pivots,
        pivot_of_col,
    })
}
