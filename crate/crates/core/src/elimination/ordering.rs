use std::collections::{BTreeSet, HashMap, HashSet};

use crate::cartpole::ProblemConfig;
use crate::error::{Error, Result};
use crate::graph::{FactorGraph, VariableKey};

/// Elimination order: a permutation of the graph variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    sequence: Vec<VariableKey>,
}

impl Ordering {
    pub fn new(sequence: Vec<VariableKey>) -> Self {
        Self { sequence }
    }

    pub fn sequence(&self) -> &[VariableKey] {
        &self.sequence
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }

    /// Checks that every graph variable appears exactly once.
    pub fn validate(&self, graph: &FactorGraph) -> Result<()> {
        if self.sequence.len() != graph.variables().len() {
            return Err(Error::InvalidOrdering(format!(
                "ordering has {} keys, graph has {} variables",
                self.sequence.len(),
                graph.variables().len()
            )));
        }
        let mut seen = HashSet::with_capacity(self.sequence.len());
        for k in &self.sequence {
            if !graph.contains(k) {
                return Err(Error::UnknownVariable(*k));
            }
            if !seen.insert(*k) {
                return Err(Error::InvalidOrdering(format!("{k} appears twice")));
            }
        }
        Ok(())
    }
}

/// Carts, then pendulums, then the controls of the previous step, sweeping
/// backwards from the last time step.
pub fn structured_ordering(config: &ProblemConfig) -> Ordering {
    let n = config.n;
    let m = config.actuators().len();
    let mut seq = Vec::with_capacity(config.variable_count());
    for t in (0..config.horizon).rev() {
        seq.extend((0..n).map(|j| VariableKey::cart(j, t)));
        seq.extend((0..n).map(|j| VariableKey::pendulum(j, t)));
        if t > 0 {
            seq.extend((0..m).map(|a| VariableKey::control(a, t - 1)));
        }
    }
    Ordering::new(seq)
}

/// Greedy minimum-degree ordering with symbolic elimination.
///
/// Each step eliminates the variable with the fewest neighbors, merging all
/// of its factors into one factor over those neighbors (the clique fill).
/// Ties go to the variable touching fewer factors, then to key order.
pub fn min_degree_ordering(graph: &FactorGraph) -> Ordering {
    let mut keys: Vec<VariableKey> = graph.variables().iter().map(|v| v.key).collect();
    keys.sort();
    let rank: HashMap<VariableKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut factors: Vec<Option<Vec<usize>>> = graph
        .factors()
        .iter()
        .map(|f| {
            let mut vars: Vec<usize> = f.keys().iter().map(|k| rank[k]).collect();
            vars.sort_unstable();
            Some(vars)
        })
        .collect();
    let mut var_factors: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    for (id, f) in factors.iter().enumerate() {
        for &v in f.as_ref().expect("fresh") {
            var_factors[v].push(id);
        }
    }

    let neighborhood = |v: usize, factors: &[Option<Vec<usize>>], vf: &[usize]| -> Vec<usize> {
        let mut set = BTreeSet::new();
        for &f in vf {
            if let Some(vars) = &factors[f] {
                set.extend(vars.iter().copied().filter(|&x| x != v));
            }
        }
        set.into_iter().collect()
    };

    let mut score: Vec<(usize, usize)> = (0..keys.len())
        .map(|v| (neighborhood(v, &factors, &var_factors[v]).len(), var_factors[v].len()))
        .collect();
    let mut queue: BTreeSet<(usize, usize, usize)> =
        score.iter().enumerate().map(|(v, &(d, f))| (d, f, v)).collect();

    let mut sequence = Vec::with_capacity(keys.len());
    while let Some((_, _, v)) = queue.pop_first() {
        sequence.push(keys[v]);
        let nbrs = neighborhood(v, &factors, &var_factors[v]);
        for f in std::mem::take(&mut var_factors[v]) {
            if let Some(vars) = factors[f].take() {
                for x in vars {
                    if x != v {
                        var_factors[x].retain(|&g| g != f);
                    }
                }
            }
        }
        if !nbrs.is_empty() {
            let id = factors.len();
            for &x in &nbrs {
                var_factors[x].push(id);
            }
            factors.push(Some(nbrs.clone()));
        }
        for &x in &nbrs {
            let (d, f) = score[x];
            queue.remove(&(d, f, x));
            let updated = (neighborhood(x, &factors, &var_factors[x]).len(), var_factors[x].len());
            score[x] = updated;
            queue.insert((updated.0, updated.1, x));
        }
    }
    Ordering::new(sequence)
}
