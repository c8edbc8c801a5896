//! Variable elimination on constrained factor graphs.
//!
//! Each variable in the ordering is removed by gathering its adjacent factors
//! into a small dense system over `[frontal | separator | rhs]`, eliminating
//! the frontal columns, and putting the leftover rows back into the graph as
//! a marginal factor on the separator. The conditionals form a Bayes net that
//! back-substitution solves in reverse order.

mod ordering;

pub use ordering::{min_degree_ordering, structured_ordering, Ordering};

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::graph::{Factor, FactorGraph, Solution, VariableKey, VariableKind};
use crate::linalg::{constrained_eliminate, solve_triangular, Matrix, RowWeight};

/// `R x_frontal + sum_i S_i x_sep_i = d`
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub frontal: VariableKey,
    pub separator: Vec<VariableKey>,
    pub r: Matrix,
    pub s_blocks: Vec<Matrix>,
    pub d: Vec<f64>,
    pub is_constrained: bool,
}

impl GaussianConditional {
    /// Solves for the frontal variable given separator values.
    pub fn solve(&self, separator_values: &[&[f64]]) -> Result<Vec<f64>> {
        if separator_values.len() != self.separator.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} separator values for {} separator variables",
                separator_values.len(),
                self.separator.len()
            )));
        }
        let mut rhs = self.d.clone();
        for (s, v) in self.s_blocks.iter().zip(separator_values) {
            for (r, sv) in rhs.iter_mut().zip(s.mul_vec(v)) {
                *r -= sv;
            }
        }
        solve_triangular(&self.r, &rhs)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BayesNet {
    pub conditionals: Vec<GaussianConditional>,
    /// Cost that no variable can reduce (rows left with no unknowns).
    pub constant_cost: f64,
}

impl BayesNet {
    pub fn len(&self) -> usize {
        self.conditionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditionals.is_empty()
    }

    pub fn conditional(&self, key: &VariableKey) -> Option<&GaussianConditional> {
        self.conditionals.iter().find(|c| &c.frontal == key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub frontal: VariableKey,
    /// Factors touching the frontal variable.
    pub p1: usize,
    /// Separator variable count.
    pub p2: usize,
    pub flops_estimate: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EliminationStats {
    pub per_step: Vec<StepStats>,
    pub wall_time: Duration,
}

impl EliminationStats {
    pub fn max_p1(&self) -> usize {
        self.per_step.iter().map(|s| s.p1).max().unwrap_or(0)
    }

    pub fn max_p2(&self) -> usize {
        self.per_step.iter().map(|s| s.p2).max().unwrap_or(0)
    }

    pub fn total_flops(&self) -> u64 {
        self.per_step.iter().map(|s| s.flops_estimate).sum()
    }
}

/// Linear policy `u = K * separator + offset` read off a control conditional.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    pub control_key: VariableKey,
    pub separator: Vec<VariableKey>,
    pub k: Matrix,
    pub offset: Vec<f64>,
}

impl FeedbackGain {
    pub fn apply(&self, separator_values: &[&[f64]]) -> Vec<f64> {
        let stacked: Vec<f64> = separator_values.iter().flat_map(|v| v.iter().copied()).collect();
        self.k
            .mul_vec(&stacked)
            .iter()
            .zip(&self.offset)
            .map(|(a, b)| a + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct WorkFactor {
    vars: Vec<usize>,
    blocks: Vec<Matrix>,
    rhs: Vec<f64>,
    weight: RowWeight,
}

/// Mutable copy of a graph that elimination consumes.
#[derive(Debug, Clone)]
pub struct WorkingGraph {
    keys: Vec<VariableKey>,
    index: HashMap<VariableKey, usize>,
    factors: Vec<Option<WorkFactor>>,
    adjacency: Vec<Vec<usize>>,
    alive: Vec<bool>,
    constant_cost: f64,
}

impl WorkingGraph {
    pub fn new(graph: &FactorGraph) -> Self {
        let keys: Vec<VariableKey> = graph.variables().iter().map(|v| v.key).collect();
        let index: HashMap<VariableKey, usize> =
            keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let mut adjacency = vec![Vec::new(); keys.len()];
        let factors = graph
            .factors()
            .iter()
            .enumerate()
            .map(|(id, f)| {
                let vars: Vec<usize> = f.keys().iter().map(|k| index[k]).collect();
                for &v in &vars {
                    adjacency[v].push(id);
                }
                Some(WorkFactor {
                    vars,
                    blocks: f.blocks().to_vec(),
                    rhs: f.rhs().to_vec(),
                    weight: f.weight(),
                })
            })
            .collect();
        Self {
            alive: vec![true; keys.len()],
            keys,
            index,
            factors,
            adjacency,
            constant_cost: 0.0,
        }
    }

    pub fn remaining_variables(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub fn remaining_factors(&self) -> usize {
        self.factors.iter().filter(|f| f.is_some()).count()
    }

    /// Keys referenced by live factors.
    pub fn referenced_keys(&self) -> Vec<VariableKey> {
        let mut out: Vec<VariableKey> = self
            .factors
            .iter()
            .flatten()
            .flat_map(|f| f.vars.iter().map(|&v| self.keys[v]))
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn constant_cost(&self) -> f64 {
        self.constant_cost
    }

    fn insert(&mut self, factor: WorkFactor) {
        let id = self.factors.len();
        for &v in &factor.vars {
            self.adjacency[v].push(id);
        }
        self.factors.push(Some(factor));
    }

    fn to_factor(&self, f: &WorkFactor) -> Factor {
        Factor::new(
            f.vars.iter().map(|&v| self.keys[v]).collect(),
            f.blocks.clone(),
            f.rhs.clone(),
            f.weight,
        )
        .expect("marginal factors are well formed")
    }
}

/// Removes `key` from the working graph.
///
/// Returns the conditional for `key`, the marginal factors placed on its
/// separator (zero, one or two: constraint rows and finite rows are kept
/// apart), and the step statistics.
pub fn eliminate_variable(
    working: &mut WorkingGraph,
    key: VariableKey,
) -> Result<(GaussianConditional, Vec<Factor>, StepStats)> {
    let v = *working.index.get(&key).ok_or(Error::UnknownVariable(key))?;
    if !working.alive[v] {
        return Err(Error::InvalidOrdering(format!("{key} was already eliminated")));
    }
    let factor_ids: Vec<usize> = std::mem::take(&mut working.adjacency[v])
        .into_iter()
        .filter(|&f| working.factors[f].is_some())
        .collect();
    if factor_ids.is_empty() {
        return Err(Error::UnconstrainedUnboundedVariable(key));
    }
    let consumed: Vec<WorkFactor> = factor_ids
        .iter()
        .map(|&f| working.factors[f].take().expect("filtered above"))
        .collect();

    let mut separator: Vec<usize> = consumed
        .iter()
        .flat_map(|f| f.vars.iter().copied())
        .filter(|&x| x != v)
        .collect();
    separator.sort_by_key(|&x| working.keys[x]);
    separator.dedup();

    for &s in &separator {
        working.adjacency[s].retain(|f| !factor_ids.contains(f));
    }
    working.alive[v] = false;

    let frontal_dim = key.dim();
    let mut col_of = HashMap::with_capacity(separator.len() + 1);
    col_of.insert(v, 0);
    let mut width = frontal_dim;
    let mut sep_offsets = Vec::with_capacity(separator.len());
    for &s in &separator {
        col_of.insert(s, width);
        sep_offsets.push(width);
        width += working.keys[s].dim();
    }
    let sep_width = width - frontal_dim;
    let rhs_col = width;
    width += 1;

    let nrows: usize = consumed.iter().map(|f| f.rhs.len()).sum();
    let mut local = Matrix::zeros(nrows, width);
    let mut weights = Vec::with_capacity(nrows);
    let mut row = 0;
    for f in &consumed {
        for (var, block) in f.vars.iter().zip(&f.blocks) {
            let c0 = col_of[var];
            for i in 0..block.rows() {
                let dst = &mut local.row_mut(row + i)[c0..c0 + block.cols()];
                dst.copy_from_slice(block.row(i));
            }
        }
        for (i, r) in f.rhs.iter().enumerate() {
            local[(row + i, rhs_col)] = *r;
        }
        weights.extend(std::iter::repeat_n(f.weight, f.rhs.len()));
        row += f.rhs.len();
    }

    let result = constrained_eliminate(&local, &weights, frontal_dim)?;
    working.constant_cost += result.constant_cost;

    let cond = &result.conditional_rows;
    let conditional = GaussianConditional {
        frontal: key,
        separator: separator.iter().map(|&s| working.keys[s]).collect(),
        r: cond.columns(0, frontal_dim),
        s_blocks: separator
            .iter()
            .zip(&sep_offsets)
            .map(|(&s, &off)| cond.columns(off, working.keys[s].dim()))
            .collect(),
        d: cond.column(rhs_col),
        is_constrained: result.is_constrained(),
    };

    // Marginal rows live in separator coordinates: [sep | rhs].
    let mut marginals = Vec::new();
    for want_constraint in [true, false] {
        let rows: Vec<usize> = (0..result.marginal_rows.rows())
            .filter(|&i| result.marginal_weights[i].is_constraint() == want_constraint)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let mut vars = Vec::new();
        let mut blocks = Vec::new();
        for (&s, &off) in separator.iter().zip(&sep_offsets) {
            let dim = working.keys[s].dim();
            let c0 = off - frontal_dim;
            let mut b = Matrix::zeros(rows.len(), dim);
            for (bi, &ri) in rows.iter().enumerate() {
                b.row_mut(bi)
                    .copy_from_slice(&result.marginal_rows.row(ri)[c0..c0 + dim]);
            }
            if !b.is_zero() {
                vars.push(s);
                blocks.push(b);
            }
        }
        let rhs: Vec<f64> = rows.iter().map(|&ri| result.marginal_rows[(ri, sep_width)]).collect();
        if vars.is_empty() {
            continue;
        }
        let weight = if want_constraint {
            RowWeight::Constraint
        } else {
            RowWeight::Finite(1.0)
        };
        let wf = WorkFactor {
            vars,
            blocks,
            rhs,
            weight,
        };
        marginals.push(working.to_factor(&wf));
        working.insert(wf);
    }

    let p1 = consumed.len();
    let p2 = separator.len();
    let n = frontal_dim as u64;
    let stats = StepStats {
        frontal: key,
        p1,
        p2,
        flops_estimate: p1 as u64 * n * (p2 as u64 * n).pow(2),
    };
    Ok((conditional, marginals, stats))
}

/// Eliminates every variable of `graph` in `ordering`.
pub fn eliminate_graph(graph: &FactorGraph, ordering: &Ordering) -> Result<(BayesNet, EliminationStats)> {
    ordering.validate(graph)?;
    let start = Instant::now();
    let mut working = WorkingGraph::new(graph);
    let mut conditionals = Vec::with_capacity(ordering.len());
    let mut per_step = Vec::with_capacity(ordering.len());
    for &key in ordering.sequence() {
        let (c, _, s) = eliminate_variable(&mut working, key)?;
        conditionals.push(c);
        per_step.push(s);
    }
    debug_assert_eq!(working.remaining_factors(), 0);
    let net = BayesNet {
        conditionals,
        constant_cost: working.constant_cost,
    };
    Ok((
        net,
        EliminationStats {
            per_step,
            wall_time: start.elapsed(),
        },
    ))
}

/// Solves the Bayes net in reverse elimination order, then scores the result
/// against the original graph.
pub fn back_substitute(graph: &FactorGraph, net: &BayesNet) -> Result<Solution> {
    let mut values: BTreeMap<VariableKey, Vec<f64>> = BTreeMap::new();
    for c in net.conditionals.iter().rev() {
        let sep: Vec<&[f64]> = c
            .separator
            .iter()
            .map(|k| {
                values
                    .get(k)
                    .map(Vec::as_slice)
                    .ok_or_else(|| Error::InvalidOrdering(format!("{k} is not solved before {}", c.frontal)))
            })
            .collect::<Result<_>>()?;
        let x = c.solve(&sep)?;
        values.insert(c.frontal, x);
    }
    let (total_cost, max_constraint_violation) = graph.residual_cost(&values)?;
    Ok(Solution {
        values,
        total_cost,
        max_constraint_violation,
    })
}

/// Eliminate, then back-substitute.
pub fn solve(graph: &FactorGraph, ordering: &Ordering) -> Result<(Solution, EliminationStats)> {
    let (net, mut stats) = eliminate_graph(graph, ordering)?;
    let start = Instant::now();
    let solution = back_substitute(graph, &net)?;
    stats.wall_time += start.elapsed();
    Ok((solution, stats))
}

/// Same as [`solve`] but also returns the Bayes net.
pub fn solve_with_net(
    graph: &FactorGraph,
    ordering: &Ordering,
) -> Result<(Solution, BayesNet, EliminationStats)> {
    let (net, stats) = eliminate_graph(graph, ordering)?;
    let solution = back_substitute(graph, &net)?;
    Ok((solution, net, stats))
}

/// `K = -R^{-1} [S_1 .. S_p]`, `offset = R^{-1} d`, so that
/// `u = K * separator + offset` satisfies the conditional.
pub fn extract_feedback_gain(conditional: &GaussianConditional) -> Result<FeedbackGain> {
    if conditional.frontal.kind != VariableKind::Control || conditional.is_constrained {
        return Err(Error::DimensionMismatch(format!(
            "feedback gains need an unconstrained control conditional, got {}",
            conditional.frontal
        )));
    }
    let rows = conditional.r.rows();
    let total: usize = conditional.s_blocks.iter().map(Matrix::cols).sum();
    let mut k = Matrix::zeros(rows, total);
    let mut col = 0;
    for s in &conditional.s_blocks {
        for j in 0..s.cols() {
            let x = solve_triangular(&conditional.r, &s.column(j))?;
            for (i, xi) in x.iter().enumerate() {
                k[(i, col)] = -xi;
            }
            col += 1;
        }
    }
    Ok(FeedbackGain {
        control_key: conditional.frontal,
        separator: conditional.separator.clone(),
        k,
        offset: solve_triangular(&conditional.r, &conditional.d)?,
    })
}
