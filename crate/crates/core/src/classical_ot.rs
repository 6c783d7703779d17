//! Exact discrete optimal transport with quadratic phase-space cost.
//!
//! The transportation LP is solved by network-simplex pivoting on spanning
//! trees of the bipartite support graph, starting from the north-west
//! corner rule.

use std::collections::VecDeque;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::oscillator::PhaseSpacePoint;
use crate::phase_space::{Atom, DiscreteMeasure, FieldKind, PhaseSpaceField};

pub const MAX_ATOMS: usize = 1024;

#[derive(Clone, Debug)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, data }
    }

    pub fn squared_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Self {
        Self::from_fn(mu.len(), nu.len(), |i, j| {
            mu.atoms[i].point.distance_sq(&nu.atoms[j].point)
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Debug)]
pub struct TransportSolution {
    pub value: f64,
    /// rows × cols plan.
    pub mass: DMatrix<f64>,
    pub pivots: usize,
}

#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub mass: DMatrix<f64>,
}

impl TransportPlan {
    /// `i,j,mass` rows for the nonzero entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,mass\n");
        for i in 0..self.mass.nrows() {
            for j in 0..self.mass.ncols() {
                let m = self.mass[(i, j)];
                if m > 0.0 {
                    let _ = writeln!(out, "{i},{j},{m:.16e}");
                }
            }
        }
        out
    }

    /// Largest violation of the marginal constraints.
    pub fn feasibility_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.source.atoms.iter().enumerate() {
            worst = worst.max((self.mass.row(i).sum() - a.weight).abs());
        }
        for (j, b) in self.target.atoms.iter().enumerate() {
            worst = worst.max((self.mass.column(j).sum() - b.weight).abs());
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct W2Result {
    pub value_sq: f64,
    pub plan: TransportPlan,
}

/// Exact optimal transport between two nonnegative weight vectors of equal
/// total mass.
pub fn transport_general(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<TransportSolution> {
    let (m, n) = (a.len(), b.len());
    if cost.shape() != (m, n) {
        return Err(Error::dimension(format!(
            "cost is {:?}, weights are {m} × {n}",
            cost.shape()
        )));
    }
    if m == 0 || n == 0 {
        return Err(Error::validation("empty marginal"));
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::validation("weights must be nonnegative and finite"));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-10 * sa.max(1.0) {
        return Err(Error::validation(format!("total masses differ: {sa} vs {sb}")));
    }
    let mut simplex = Simplex::new(a, b, cost);
    simplex.run()?;
    let mut mass = DMatrix::zeros(m, n);
    let mut value = 0.0;
    for (cell, &f) in simplex.flow.iter().enumerate() {
        if simplex.in_basis[cell] && f > 0.0 {
            let (i, j) = (cell / n, cell % n);
            mass[(i, j)] = f;
            value += f * cost.get(i, j);
        }
    }
    Ok(TransportSolution {
        value,
        mass,
        pivots: simplex.pivots,
    })
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a CostMatrix,
    flow: Vec<f64>,
    in_basis: Vec<bool>,
    /// Tree adjacency; rows are nodes 0..m, columns m..m+n.
    adj: Vec<Vec<usize>>,
    potential: Vec<f64>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    pivots: usize,
    cursor: usize,
}

impl<'a> Simplex<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a CostMatrix) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut s = Simplex {
            m,
            n,
            cost,
            flow: vec![0.0; m * n],
            in_basis: vec![false; m * n],
            adj: vec![Vec::new(); m + n],
            potential: vec![0.0; m + n],
            parent: vec![usize::MAX; m + n],
            depth: vec![0; m + n],
            pivots: 0,
            cursor: 0,
        };
        // North-west corner; ties advance the row so that the tree stays
        // spanning with a degenerate zero cell.
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]);
            s.add_cell(i, j, x);
            ra[i] -= x;
            rb[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        s
    }

    fn add_cell(&mut self, i: usize, j: usize, x: f64) {
        let cell = i * self.n + j;
        self.flow[cell] = x;
        self.in_basis[cell] = true;
        self.adj[i].push(self.m + j);
        self.adj[self.m + j].push(i);
    }

    fn remove_cell(&mut self, i: usize, j: usize) {
        let cell = i * self.n + j;
        self.flow[cell] = 0.0;
        self.in_basis[cell] = false;
        let cj = self.m + j;
        let pos = self.adj[i].iter().position(|&v| v == cj).expect("cell in tree");
        self.adj[i].swap_remove(pos);
        let pos = self.adj[cj].iter().position(|&v| v == i).expect("cell in tree");
        self.adj[cj].swap_remove(pos);
    }

    /// Potentials u_i + v_j = c_ij on tree cells, rooted at row 0.
    fn refresh_tree(&mut self) {
        let total = self.m + self.n;
        self.parent.iter_mut().for_each(|p| *p = usize::MAX);
        let mut queue = VecDeque::with_capacity(total);
        self.parent[0] = 0;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        queue.push_back(0);
        while let Some(u) = queue.pop_front() {
            for k in 0..self.adj[u].len() {
                let v = self.adj[u][k];
                if self.parent[v] != usize::MAX {
                    continue;
                }
                self.parent[v] = u;
                self.depth[v] = self.depth[u] + 1;
                let c = if u < self.m {
                    self.cost.get(u, v - self.m)
                } else {
                    self.cost.get(v, u - self.m)
                };
                self.potential[v] = c - self.potential[u];
                queue.push_back(v);
            }
        }
    }

    fn reduced_cost(&self, cell: usize) -> f64 {
        let (i, j) = (cell / self.n, cell % self.n);
        self.cost.get(i, j) - self.potential[i] - self.potential[self.m + j]
    }

    /// Block search for the most negative reduced cost; lowest index wins
    /// ties within a block.
    fn entering(&mut self, tol: f64) -> Option<usize> {
        let total = self.m * self.n;
        let block = ((total as f64).sqrt().ceil() as usize).max(32).min(total);
        let mut scanned = 0;
        while scanned < total {
            let mut best = None;
            let mut best_rc = -tol;
            for _ in 0..block.min(total - scanned) {
                let cell = self.cursor;
                self.cursor = (self.cursor + 1) % total;
                scanned += 1;
                if self.in_basis[cell] {
                    continue;
                }
                let rc = self.reduced_cost(cell);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(cell);
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }

    fn edge_cell(&self, a: usize, b: usize) -> usize {
        if a < self.m {
            a * self.n + (b - self.m)
        } else {
            b * self.n + (a - self.m)
        }
    }

    fn run(&mut self) -> Result<()> {
        let scale = self.cost.data.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1.0);
        let tol = 1e-12 * scale;
        let max_pivots = 50 * (self.m * self.n).max(1000);
        loop {
            self.refresh_tree();
            let Some(cell) = self.entering(tol) else {
                return Ok(());
            };
            let (i, j) = (cell / self.n, cell % self.n);
            // Cycle: entering (+), then tree path from column j back to row i,
            // alternating −, +, ...
            let mut u = i;
            let mut v = self.m + j;
            let mut side_u = Vec::new();
            let mut side_v = Vec::new();
            while u != v {
                if self.depth[u] >= self.depth[v] {
                    let p = self.parent[u];
                    side_u.push(self.edge_cell(u, p));
                    u = p;
                } else {
                    let p = self.parent[v];
                    side_v.push(self.edge_cell(v, p));
                    v = p;
                }
            }
            // Path from column j to row i: side_v in order, then side_u reversed.
            let path: Vec<usize> = side_v.iter().cloned().chain(side_u.iter().rev().cloned()).collect();
            // Leaving cell: among the minimum-flow "−" cells, the last one met
            // when walking the cycle from its apex, which keeps the tree
            // strongly feasible and avoids cycling.
            let apex_split = side_v.len();
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            let order = (0..apex_split).rev().chain((apex_split..path.len()).rev());
            for k in order {
                if k % 2 == 0 {
                    let f = self.flow[path[k]];
                    if f < theta {
                        theta = f;
                        leave = k;
                    }
                }
            }
            for (k, &c) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[c] -= theta;
                } else {
                    self.flow[c] += theta;
                }
            }
            let lc = path[leave];
            self.remove_cell(lc / self.n, lc % self.n);
            self.add_cell(i, j, theta);
            self.pivots += 1;
            if self.pivots > max_pivots {
                return Err(Error::NonConvergence {
                    iterations: self.pivots,
                    primal_residual: 0.0,
                    gap: f64::NAN,
                    history: Vec::new(),
                });
            }
        }
    }
}

/// Merge coincident atoms, keeping first-appearance order.
pub fn merge_coincident(mu: &DiscreteMeasure) -> DiscreteMeasure {
    let mut atoms: Vec<Atom> = Vec::with_capacity(mu.len());
    for a in &mu.atoms {
        if let Some(existing) = atoms.iter_mut().find(|b| b.point == a.point) {
            existing.weight += a.weight;
        } else {
            atoms.push(a.clone());
        }
    }
    DiscreteMeasure { atoms }
}

/// Quadratic Monge-Kantorovich distance squared between two probability
/// measures on phase space.
pub fn w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<W2Result> {
    if mu.len() > MAX_ATOMS || nu.len() > MAX_ATOMS {
        return Err(Error::Size(format!(
            "supports of {} and {} atoms exceed {MAX_ATOMS}",
            mu.len(),
            nu.len()
        )));
    }
    if mu.d() != nu.d() {
        return Err(Error::dimension("measures live in different dimensions"));
    }
    for (name, m) in [("source", mu), ("target", nu)] {
        let total: f64 = m.atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::validation(format!("{name} has total mass {total}, expected 1")));
        }
    }
    let mu = merge_coincident(mu);
    let nu = merge_coincident(nu);
    let a: Vec<f64> = mu.atoms.iter().map(|x| x.weight).collect();
    let b: Vec<f64> = nu.atoms.iter().map(|x| x.weight).collect();
    let cost = CostMatrix::squared_distance(&mu, &nu);
    let sol = transport_general(&a, &b, &cost)?;
    Ok(W2Result {
        value_sq: sol.value,
        plan: TransportPlan {
            source: mu,
            target: nu,
            mass: sol.mass,
        },
    })
}

/// Entropic approximation (Sinkhorn). Biased; never used for bounds.
pub fn w2_entropic(mu: &DiscreteMeasure, nu: &DiscreteMeasure, epsilon: f64, iters: usize) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon must be positive"));
    }
    let cost = CostMatrix::squared_distance(mu, nu);
    let (m, n) = cost.shape();
    let a: Vec<f64> = mu.atoms.iter().map(|x| x.weight).collect();
    let b: Vec<f64> = nu.atoms.iter().map(|x| x.weight).collect();
    // Log-domain updates.
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let lse = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = vals.collect();
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    for _ in 0..iters {
        for i in 0..m {
            f[i] = epsilon * a[i].ln() - epsilon * lse(&mut (0..n).map(|j| (g[j] - cost.get(i, j)) / epsilon));
        }
        for j in 0..n {
            g[j] = epsilon * b[j].ln() - epsilon * lse(&mut (0..m).map(|i| (f[i] - cost.get(i, j)) / epsilon));
        }
    }
    let mut value = 0.0;
    for i in 0..m {
        for j in 0..n {
            value += ((f[i] + g[j] - cost.get(i, j)) / epsilon).exp() * cost.get(i, j);
        }
    }
    Ok(value)
}

/// Minimum over all permutations of Σ_i c[i][σ(i)]/n. Tiny n only.
pub fn assignment_brute_force(cost: &CostMatrix) -> f64 {
    let (n, m) = cost.shape();
    assert_eq!(n, m, "assignment needs a square cost");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let v: f64 = p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        best = best.min(v);
    });
    best / n as f64
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}

#[derive(Clone, Debug)]
pub struct FieldMeasure {
    pub measure: DiscreteMeasure,
    /// Fraction of the field's grid mass carried by the kept atoms.
    pub retained_mass: f64,
    /// Total grid mass of the field before discretization.
    pub field_mass: f64,
    /// Block side length in grid cells.
    pub block: usize,
}

/// Cell masses as atoms at cell centers, keeping the heaviest cells up to
/// 1 − `mass_floor` of the total; 2× block coarsening until the atom
/// count fits `max_atoms`.
pub fn field_to_measure(f: &PhaseSpaceField, max_atoms: usize, mass_floor: f64) -> Result<FieldMeasure> {
    if f.kind == FieldKind::Wigner {
        return Err(Error::validation("field_to_measure needs a nonnegative (Husimi) field"));
    }
    let min = f.min();
    if min < -1e-10 {
        return Err(Error::validation(format!("field has negative value {min:.3e}")));
    }
    if max_atoms == 0 || !(0.0..1.0).contains(&mass_floor) {
        return Err(Error::validation("max_atoms must be positive and mass_floor in [0, 1)"));
    }
    let g = &f.grid;
    let xs = g.x_points();
    let xis = g.xi_points();
    let area = g.cell_area();
    let mut block = 1;
    loop {
        if block > g.n_x.max(g.n_xi) {
            return Err(Error::validation("field cannot be coarsened to fit max_atoms"));
        }
        let (bx, bxi) = (g.n_x.div_ceil(block), g.n_xi.div_ceil(block));
        let mut cells: Vec<(f64, f64, f64)> = Vec::with_capacity(bx * bxi);
        for ib in 0..bx {
            for jb in 0..bxi {
                let (i0, i1) = (ib * block, ((ib + 1) * block).min(g.n_x));
                let (j0, j1) = (jb * block, ((jb + 1) * block).min(g.n_xi));
                let mut m = 0.0;
                for i in i0..i1 {
                    for j in j0..j1 {
                        m += f.values[i * g.n_xi + j].max(0.0);
                    }
                }
                let cx = 0.5 * (xs[i0] + xs[i1 - 1]);
                let cxi = 0.5 * (xis[j0] + xis[j1 - 1]);
                cells.push((m * area, cx, cxi));
            }
        }
        let total: f64 = cells.iter().map(|c| c.0).sum();
        if !(total > 0.0) {
            return Err(Error::validation("field has zero mass"));
        }
        let mut order: Vec<usize> = (0..cells.len()).filter(|&k| cells[k].0 > 0.0).collect();
        order.sort_by(|&a, &b| cells[b].0.total_cmp(&cells[a].0).then(a.cmp(&b)));
        let mut kept = 0.0;
        let mut count = 0;
        for &k in &order {
            if kept >= (1.0 - mass_floor) * total {
                break;
            }
            kept += cells[k].0;
            count += 1;
        }
        if count <= max_atoms {
            let mut chosen: Vec<usize> = order[..count].to_vec();
            chosen.sort_unstable();
            let atoms = chosen
                .iter()
                .map(|&k| Atom {
                    weight: cells[k].0 / kept,
                    point: PhaseSpacePoint::d1(cells[k].1, cells[k].2),
                })
                .collect();
            return Ok(FieldMeasure {
                measure: DiscreteMeasure { atoms },
                retained_mass: kept / total,
                field_mass: total,
                block,
            });
        }
        block *= 2;
    }
}
