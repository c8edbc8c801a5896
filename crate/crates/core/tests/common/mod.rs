//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgopt::cartpole::{nonlinear_step, step_jacobian, CartPoleParams, ChainLayout};
use sgopt::elimination::{min_degree_ordering, solve, Ordering};
use sgopt::graph::VariableKind;
use sgopt::solvers::kkt_solve_oracle;
use sgopt::{Factor, FactorGraph, Matrix, VariableKey};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_row_slice(rows, cols, &data)
}

fn pick_keys(rng: &mut ChaCha8Rng, keys: &[VariableKey], max: usize) -> Vec<VariableKey> {
    let count = rng.gen_range(1..=max.min(keys.len()));
    let mut chosen: Vec<VariableKey> = Vec::with_capacity(count);
    while chosen.len() < count {
        let k = keys[rng.gen_range(0..keys.len())];
        if !chosen.contains(&k) {
            chosen.push(k);
        }
    }
    chosen
}

/// A random graph with a known feasible point: every variable carries a
/// well-conditioned unary cost, extra costs couple random subsets, and
/// constraints are consistent by construction (sometimes redundantly).
pub fn random_feasible_graph(seed: u64, max_vars: usize) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nvars = rng.gen_range(1..=max_vars);
    let kinds = [VariableKind::Cart, VariableKind::Pendulum, VariableKind::Control];
    let keys: Vec<VariableKey> = (0..nvars)
        .map(|i| VariableKey::new(kinds[rng.gen_range(0..3)], i, 0))
        .collect();
    let truth: Vec<Vec<f64>> = keys
        .iter()
        .map(|k| (0..k.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let value_of = |k: &VariableKey| &truth[keys.iter().position(|x| x == k).expect("known key")];

    let mut graph = FactorGraph::new();
    for k in &keys {
        graph.add_variable(*k).unwrap();
    }
    for k in &keys {
        let d = k.dim();
        let mut block = random_matrix(&mut rng, d, d).scaled(0.3);
        for i in 0..d {
            block[(i, i)] += rng.gen_range(1.0..2.0);
        }
        let rhs: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        graph.add_factor(Factor::cost(vec![*k], vec![block], rhs).unwrap()).unwrap();
    }
    for _ in 0..rng.gen_range(0..=nvars) {
        let fk = pick_keys(&mut rng, &keys, 3);
        let rows = rng.gen_range(1..=3);
        let blocks: Vec<Matrix> = fk.iter().map(|k| random_matrix(&mut rng, rows, k.dim())).collect();
        let rhs: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weight = sgopt::RowWeight::Finite(rng.gen_range(0.1..10.0));
        graph.add_factor(Factor::new(fk, blocks, rhs, weight).unwrap()).unwrap();
    }
    let mut constraints: Vec<Factor> = Vec::new();
    for _ in 0..rng.gen_range(0..=nvars.div_ceil(2)) {
        let fk = pick_keys(&mut rng, &keys, 3);
        let dim: usize = fk.iter().map(VariableKey::dim).sum();
        let rows = rng.gen_range(1..=dim.min(2));
        let blocks: Vec<Matrix> = fk.iter().map(|k| random_matrix(&mut rng, rows, k.dim())).collect();
        let mut rhs = vec![0.0; rows];
        for (k, b) in fk.iter().zip(&blocks) {
            for (r, v) in b.mul_vec(value_of(k)).iter().enumerate() {
                rhs[r] += v;
            }
        }
        constraints.push(Factor::constraint(fk, blocks, rhs).unwrap());
    }
    if !constraints.is_empty() && rng.gen_bool(0.2) {
        // a scaled copy: redundant but consistent
        let c = &constraints[0];
        let s = rng.gen_range(0.5..2.0);
        let blocks = c.blocks().iter().map(|b| b.scaled(s)).collect();
        let rhs = c.rhs().iter().map(|v| v * s).collect();
        constraints.push(Factor::constraint(c.keys().to_vec(), blocks, rhs).unwrap());
    }
    for c in constraints {
        graph.add_factor(c).unwrap();
    }
    graph
}

/// Largest per-entry deviation between elimination and the KKT oracle, and
/// the elimination's constraint violation.
pub fn compare_with_oracle(graph: &FactorGraph, ordering: &Ordering) -> Result<(f64, f64), String> {
    let keys: Vec<VariableKey> = graph.variables().iter().map(|v| v.key).collect();
    let (f, g, w) = graph.assemble_dense(&keys).map_err(|e| e.to_string())?;
    let oracle = kkt_solve_oracle(&f, &g, &w).map_err(|e| format!("oracle: {e}"))?;
    let (sol, _) = solve(graph, ordering).map_err(|e| format!("elimination: {e}"))?;
    let mut worst = 0.0f64;
    let mut at = 0;
    for k in &keys {
        let got = sol.get(k).ok_or(format!("{k} missing"))?;
        for v in got {
            worst = worst.max((v - oracle[at]).abs());
            at += 1;
        }
    }
    Ok((worst, sol.max_constraint_violation))
}

/// The orderings exercised on random graphs: insertion order, its reverse
/// and min-degree.
pub fn test_orderings(graph: &FactorGraph) -> Vec<(&'static str, Ordering)> {
    let keys: Vec<VariableKey> = graph.variables().iter().map(|v| v.key).collect();
    let reversed: Vec<VariableKey> = keys.iter().rev().copied().collect();
    vec![
        ("insertion", Ordering::new(keys)),
        ("reverse", Ordering::new(reversed)),
        ("mindegree", min_degree_ordering(graph)),
    ]
}

/// Random state, control and chain for Jacobian checks.
pub fn random_chain_point(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>, ChainLayout) {
    let n = rng.gen_range(1..=5);
    let m = rng.gen_range(1..=n);
    let layout = ChainLayout::new(n, (0..m).map(|j| j * n / m).collect());
    let mut x = Vec::with_capacity(4 * n);
    for _ in 0..n {
        x.push(rng.gen_range(-1.0..1.0));
        x.push(rng.gen_range(-2.0..2.0));
        x.push(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        x.push(rng.gen_range(-3.0..3.0));
    }
    let u = (0..m).map(|_| rng.gen_range(-20.0..20.0)).collect();
    (x, u, layout)
}

/// Central differences of `nonlinear_step` with step `h`: (A, B).
pub fn fd_jacobian(x: &[f64], u: &[f64], layout: &ChainLayout, p: &CartPoleParams, h: f64) -> (Matrix, Matrix) {
    let ns = x.len();
    let mut a = Matrix::zeros(ns, ns);
    let mut b = Matrix::zeros(ns, u.len());
    for j in 0..ns {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (nonlinear_step(&xp, u, layout, p), nonlinear_step(&xm, u, layout, p));
        for i in 0..ns {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    for j in 0..u.len() {
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        up[j] += h;
        um[j] -= h;
        let (fp, fm) = (nonlinear_step(x, &up, layout, p), nonlinear_step(x, &um, layout, p));
        for i in 0..ns {
            b[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    (a, b)
}

/// Relative max-entry error of the block Jacobian against central differences.
pub fn jacobian_rel_error(x: &[f64], u: &[f64], layout: &ChainLayout, p: &CartPoleParams) -> f64 {
    let (a, b, _) = step_jacobian(x, u, layout, p).to_dense(layout.m());
    let (fa, fb) = fd_jacobian(x, u, layout, p, 1e-6);
    let err = a.sub(&fa).max_abs().max(b.sub(&fb).max_abs());
    err / fa.max_abs().max(fb.max_abs()).max(1.0)
}
