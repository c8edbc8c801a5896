//! Constrained factor graphs over cart, pendulum and control variables.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RowWeight};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VariableKind {
    Cart,
    Pendulum,
    Control,
}

impl VariableKind {
    pub fn dim(self) -> usize {
        match self {
            VariableKind::Cart | VariableKind::Pendulum => 2,
            VariableKind::Control => 1,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            VariableKind::Cart => "X",
            VariableKind::Pendulum => "th",
            VariableKind::Control => "U",
        }
    }
}

/// One node of the graph. Controls are indexed by actuator, not by cart.
///
/// Keys order by time (latest first), then kind, then body index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariableKey {
    pub kind: VariableKind,
    pub body: usize,
    pub time: usize,
}

impl VariableKey {
    pub fn new(kind: VariableKind, body: usize, time: usize) -> Self {
        Self { kind, body, time }
    }

    pub fn cart(body: usize, time: usize) -> Self {
        Self::new(VariableKind::Cart, body, time)
    }

    pub fn pendulum(body: usize, time: usize) -> Self {
        Self::new(VariableKind::Pendulum, body, time)
    }

    pub fn control(actuator: usize, time: usize) -> Self {
        Self::new(VariableKind::Control, actuator, time)
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }
}

impl Ord for VariableKey {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other
            .time
            .cmp(&self.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.body.cmp(&other.body))
    }
}

impl PartialOrd for VariableKey {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for VariableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}^{}", self.kind.symbol(), self.body, self.time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableInfo {
    pub key: VariableKey,
    pub dim: usize,
}

/// Affine residual `sum_k blocks[k] * value(keys[k]) - rhs` with one weight
/// shared by all rows. Cost factors fold their square-root weights into the
/// blocks and use `Finite(1.0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    keys: Vec<VariableKey>,
    blocks: Vec<Matrix>,
    rhs: Vec<f64>,
    weight: RowWeight,
}

impl Factor {
    pub fn new(
        keys: Vec<VariableKey>,
        blocks: Vec<Matrix>,
        rhs: Vec<f64>,
        weight: RowWeight,
    ) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::DimensionMismatch("factor without variables".into()));
        }
        if keys.len() != blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} keys but {} blocks",
                keys.len(),
                blocks.len()
            )));
        }
        weight.validate()?;
        for (i, (k, b)) in keys.iter().zip(&blocks).enumerate() {
            if keys[..i].contains(k) {
                return Err(Error::DimensionMismatch(format!("key {k} repeated in factor")));
            }
            if b.rows() != rhs.len() || b.cols() != k.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "block for {k} is {}x{}, expected {}x{}",
                    b.rows(),
                    b.cols(),
                    rhs.len(),
                    k.dim()
                )));
            }
            if !b.is_finite() {
                return Err(Error::DimensionMismatch(format!("non-finite block for {k}")));
            }
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite rhs".into()));
        }
        Ok(Self {
            keys,
            blocks,
            rhs,
            weight,
        })
    }

    /// Unit-weight cost factor.
    pub fn cost(keys: Vec<VariableKey>, blocks: Vec<Matrix>, rhs: Vec<f64>) -> Result<Self> {
        Self::new(keys, blocks, rhs, RowWeight::Finite(1.0))
    }

    pub fn constraint(keys: Vec<VariableKey>, blocks: Vec<Matrix>, rhs: Vec<f64>) -> Result<Self> {
        Self::new(keys, blocks, rhs, RowWeight::Constraint)
    }

    pub fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn weight(&self) -> RowWeight {
        self.weight
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_constraint(&self) -> bool {
        self.weight.is_constraint()
    }

    /// Residual `A v - b` for the given variable values.
    pub fn residual(&self, values: &BTreeMap<VariableKey, Vec<f64>>) -> Result<Vec<f64>> {
        let mut r: Vec<f64> = self.rhs.iter().map(|v| -v).collect();
        for (k, b) in self.keys.iter().zip(&self.blocks) {
            let v = values.get(k).ok_or(Error::UnknownVariable(*k))?;
            for (ri, bi) in r.iter_mut().zip(b.mul_vec(v)) {
                *ri += bi;
            }
        }
        Ok(r)
    }
}

/// Immutable-after-build constrained factor graph. Factors can only be appended.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    variables: Vec<VariableInfo>,
    index: HashMap<VariableKey, usize>,
    factors: Vec<Factor>,
    adjacency: HashMap<VariableKey, Vec<usize>>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, key: VariableKey) -> Result<()> {
        if self.index.contains_key(&key) {
            return Err(Error::DuplicateVariable(key));
        }
        self.index.insert(key, self.variables.len());
        self.variables.push(VariableInfo {
            key,
            dim: key.dim(),
        });
        self.adjacency.insert(key, Vec::new());
        Ok(())
    }

    pub fn add_factor(&mut self, factor: Factor) -> Result<usize> {
        for k in factor.keys() {
            if !self.index.contains_key(k) {
                return Err(Error::UnknownVariable(*k));
            }
        }
        let id = self.factors.len();
        for k in factor.keys() {
            self.adjacency.get_mut(k).expect("checked above").push(id);
        }
        self.factors.push(factor);
        Ok(id)
    }

    pub fn variables(&self) -> &[VariableInfo] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn contains(&self, key: &VariableKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn dim_of(&self, key: &VariableKey) -> Result<usize> {
        self.index
            .get(key)
            .map(|&i| self.variables[i].dim)
            .ok_or(Error::UnknownVariable(*key))
    }

    pub fn total_dim(&self) -> usize {
        self.variables.iter().map(|v| v.dim).sum()
    }

    pub fn total_rows(&self) -> usize {
        self.factors.iter().map(Factor::rows).sum()
    }

    /// Indices of the factors touching `key`, in insertion order.
    pub fn factors_of(&self, key: &VariableKey) -> Result<&[usize]> {
        self.adjacency
            .get(key)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownVariable(*key))
    }

    /// Variables sharing at least one factor with `key`.
    pub fn neighbors(&self, key: &VariableKey) -> Result<BTreeSet<VariableKey>> {
        let mut out = BTreeSet::new();
        for &f in self.factors_of(key)? {
            out.extend(self.factors[f].keys().iter().filter(|k| *k != key));
        }
        Ok(out)
    }

    /// Recomputes adjacency from the factor list and compares it with the
    /// incrementally maintained map.
    pub fn audit_adjacency(&self) -> bool {
        let mut rebuilt: HashMap<VariableKey, Vec<usize>> =
            self.variables.iter().map(|v| (v.key, Vec::new())).collect();
        for (id, f) in self.factors.iter().enumerate() {
            for k in f.keys() {
                match rebuilt.get_mut(k) {
                    Some(list) => list.push(id),
                    None => return false,
                }
            }
        }
        rebuilt == self.adjacency
    }

    /// Stacks all factor rows into `[F | g]` with columns laid out in
    /// `column_order`. Rows follow factor insertion order.
    pub fn assemble_dense(
        &self,
        column_order: &[VariableKey],
    ) -> Result<(Matrix, Vec<f64>, Vec<RowWeight>)> {
        if column_order.len() != self.variables.len() {
            return Err(Error::InvalidOrdering(format!(
                "column order has {} keys, graph has {} variables",
                column_order.len(),
                self.variables.len()
            )));
        }
        let mut offsets = HashMap::with_capacity(column_order.len());
        let mut col = 0;
        for k in column_order {
            let dim = self.dim_of(k)?;
            if offsets.insert(*k, col).is_some() {
                return Err(Error::InvalidOrdering(format!("{k} appears twice")));
            }
            col += dim;
        }
        let mut f = Matrix::zeros(self.total_rows(), col);
        let mut g = Vec::with_capacity(self.total_rows());
        let mut w = Vec::with_capacity(self.total_rows());
        let mut row = 0;
        for factor in &self.factors {
            for (k, b) in factor.keys().iter().zip(factor.blocks()) {
                let off = offsets[k];
                for i in 0..b.rows() {
                    for j in 0..b.cols() {
                        f[(row + i, off + j)] = b[(i, j)];
                    }
                }
            }
            g.extend_from_slice(factor.rhs());
            w.extend(std::iter::repeat_n(factor.weight(), factor.rows()));
            row += factor.rows();
        }
        Ok((f, g, w))
    }

    /// Weighted cost over finite factors and the largest constraint violation
    /// (infinity norm over constraint rows).
    pub fn residual_cost(&self, values: &BTreeMap<VariableKey, Vec<f64>>) -> Result<(f64, f64)> {
        for v in &self.variables {
            match values.get(&v.key) {
                Some(x) if x.len() == v.dim => {}
                Some(x) => {
                    return Err(Error::DimensionMismatch(format!(
                        "value for {} has length {}, expected {}",
                        v.key,
                        x.len(),
                        v.dim
                    )))
                }
                None => return Err(Error::UnknownVariable(v.key)),
            }
        }
        let mut cost = 0.0;
        let mut violation = 0.0f64;
        for factor in &self.factors {
            let r = factor.residual(values)?;
            match factor.weight() {
                RowWeight::Finite(w) => cost += w * r.iter().map(|x| x * x).sum::<f64>(),
                RowWeight::Constraint => {
                    violation = r.iter().fold(violation, |m, x| m.max(x.abs()));
                }
            }
        }
        Ok((cost, violation))
    }

    /// Plain-text debug dump: one line per variable, then one per factor.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in &self.variables {
            let _ = writeln!(out, "var {} dim={}", v.key, v.dim);
        }
        for (id, f) in self.factors.iter().enumerate() {
            let kind = match f.weight() {
                RowWeight::Constraint => "constraint".to_string(),
                RowWeight::Finite(w) => format!("finite({w})"),
            };
            let _ = write!(out, "factor {id} {kind} rows={}", f.rows());
            for (k, b) in f.keys().iter().zip(f.blocks()) {
                let _ = write!(out, " {k}=[");
                for i in 0..b.rows() {
                    if i > 0 {
                        out.push(';');
                    }
                    let row: Vec<String> = b.row(i).iter().map(|v| format!("{v}")).collect();
                    out.push_str(&row.join(","));
                }
                out.push(']');
            }
            let rhs: Vec<String> = f.rhs().iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, " rhs=[{}]", rhs.join(","));
        }
        out
    }
}

/// Variable values plus the cost they achieve on the graph they solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Solution {
    pub values: BTreeMap<VariableKey, Vec<f64>>,
    pub total_cost: f64,
    pub max_constraint_violation: f64,
}

impl Solution {
    pub fn get(&self, key: &VariableKey) -> Option<&[f64]> {
        self.values.get(key).map(Vec::as_slice)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[&[v]])
    }

    fn u(i: usize) -> VariableKey {
        VariableKey::control(i, 0)
    }

    fn chain() -> FactorGraph {
        let mut g = FactorGraph::new();
        for i in 0..3 {
            g.add_variable(u(i)).unwrap();
        }
        g.add_factor(Factor::cost(vec![u(0), u(1)], vec![scalar(1.0), scalar(-1.0)], vec![0.0]).unwrap())
            .unwrap();
        g.add_factor(Factor::cost(vec![u(1), u(2)], vec![scalar(1.0), scalar(-1.0)], vec![0.0]).unwrap())
            .unwrap();
        g
    }

    #[test]
    fn key_order_is_time_descending_then_kind_then_body() {
        let mut keys = vec![
            VariableKey::control(0, 1),
            VariableKey::cart(1, 2),
            VariableKey::pendulum(0, 2),
            VariableKey::cart(0, 2),
            VariableKey::cart(0, 1),
        ];
        keys.sort();
        assert_eq!(
            keys,
            vec![
                VariableKey::cart(0, 2),
                VariableKey::cart(1, 2),
                VariableKey::pendulum(0, 2),
                VariableKey::cart(0, 1),
                VariableKey::control(0, 1),
            ]
        );
    }

    #[test]
    fn neighbors_follow_shared_factors() {
        let g = chain();
        assert_eq!(g.neighbors(&u(1)).unwrap(), [u(0), u(2)].into_iter().collect());
        assert_eq!(g.neighbors(&u(0)).unwrap(), [u(1)].into_iter().collect());
        assert!(matches!(
            g.neighbors(&u(7)),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn isolated_variable_has_no_neighbors() {
        let mut g = FactorGraph::new();
        g.add_variable(u(0)).unwrap();
        g.add_factor(Factor::cost(vec![u(0)], vec![scalar(2.0)], vec![0.0]).unwrap())
            .unwrap();
        assert!(g.neighbors(&u(0)).unwrap().is_empty());
        let (f, rhs, w) = g.assemble_dense(&[u(0)]).unwrap();
        assert_eq!(f, scalar(2.0));
        assert_eq!(rhs, vec![0.0]);
        assert_eq!(w, vec![RowWeight::Finite(1.0)]);
    }

    #[test]
    fn residual_cost_examples() {
        let mut g = FactorGraph::new();
        g.add_variable(u(0)).unwrap();
        g.add_factor(Factor::cost(vec![u(0)], vec![scalar(1.0)], vec![2.0]).unwrap())
            .unwrap();
        let at = |x: f64| BTreeMap::from([(u(0), vec![x])]);
        assert_eq!(g.residual_cost(&at(2.0)).unwrap(), (0.0, 0.0));
        assert_eq!(g.residual_cost(&at(3.0)).unwrap(), (1.0, 0.0));

        let mut c = FactorGraph::new();
        c.add_variable(u(0)).unwrap();
        c.add_factor(Factor::constraint(vec![u(0)], vec![scalar(1.0)], vec![2.0]).unwrap())
            .unwrap();
        assert_eq!(c.residual_cost(&at(2.5)).unwrap(), (0.0, 0.5));
        assert!(matches!(
            c.residual_cost(&BTreeMap::new()),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn factor_validation() {
        assert!(Factor::cost(vec![u(0)], vec![Matrix::zeros(2, 1)], vec![0.0]).is_err());
        assert!(Factor::cost(vec![u(0), u(0)], vec![scalar(1.0), scalar(1.0)], vec![0.0]).is_err());
        let mut g = FactorGraph::new();
        assert!(g
            .add_factor(Factor::cost(vec![u(0)], vec![scalar(1.0)], vec![0.0]).unwrap())
            .is_err());
        g.add_variable(u(0)).unwrap();
        assert_eq!(g.add_variable(u(0)), Err(Error::DuplicateVariable(u(0))));
    }

    #[test]
    fn dump_lists_variables_and_factors() {
        let g = chain();
        let dump = g.dump();
        assert_eq!(dump.lines().count(), 5);
        assert!(dump.contains("factor 1 finite(1) rows=1 U1^0=[1] U2^0=[-1] rhs=[0]"));
    }

    proptest! {
        #[test]
        fn adjacency_survives_random_edits(edits in proptest::collection::vec((0usize..6, 0usize..6, any::<bool>()), 1..40)) {
            let mut g = FactorGraph::new();
            for (a, b, constrained) in edits {
                for k in [u(a), u(b)] {
                    if !g.contains(&k) {
                        g.add_variable(k).unwrap();
                    }
                }
                let (keys, blocks) = if a == b {
                    (vec![u(a)], vec![scalar(1.0)])
                } else {
                    (vec![u(a), u(b)], vec![scalar(1.0), scalar(2.0)])
                };
                let f = if constrained {
                    Factor::constraint(keys, blocks, vec![1.0]).unwrap()
                } else {
                    Factor::cost(keys, blocks, vec![1.0]).unwrap()
                };
                g.add_factor(f).unwrap();
                prop_assert!(g.audit_adjacency());
            }
        }

        #[test]
        fn residual_cost_ignores_column_order(vals in proptest::collection::vec(-3.0f64..3.0, 3), rev in any::<bool>()) {
            let g = chain();
            let mut order: Vec<VariableKey> = (0..3).map(u).collect();
            if rev {
                order.reverse();
            }
            let (f, rhs, _) = g.assemble_dense(&order).unwrap();
            let x: Vec<f64> = order.iter().map(|k| vals[k.body]).collect();
            let dense: f64 = f.mul_vec(&x).iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum();
            let values: BTreeMap<_, _> = (0..3).map(|i| (u(i), vec![vals[i]])).collect();
            let (cost, _) = g.residual_cost(&values).unwrap();
            prop_assert!((dense - cost).abs() < 1e-12);
        }
    }
}
