//! The coupling semidefinite program MK_λ(K, K')² = min trace(Q·C_λ) over
//! density operators Q on the doubled space with partial traces K and K'.
//!
//! The splitting solver works on the support of the marginals. A coupling
//! of K and K' is supported on supp(K) ⊗ supp(K'), so the program is posed
//! on that subspace; when either marginal is pure the coupling is forced to
//! be the product and no iteration is needed.

use crate::error::{Error, Result};
use crate::linalg::{
    eigh, frobenius, hermitize, kron, project_psd_raw, re, trace, trace_product, BasisTag,
    CMatrix, DensityOperator, C64,
};
use crate::oscillator::{
    annihilation_1, cost_operator, momentum_operator, number_operator, position_operator,
    CostOperator, OscillatorRep, PhaseSpacePoint,
};
use crate::special::gauss_hermite;
use crate::special::scaled_hermite_functions_into;
use crate::testkit;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMode {
    Splitting,
    /// Log-barrier interior point; only for doubled dimension ≤ 9.
    Barrier,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Frobenius tolerance on the coupling's marginals.
    pub feas_tol: f64,
    /// Absolute objective tolerance for the stall test.
    pub obj_tol: f64,
    /// Relative certified gap at which the solver stops early.
    pub gap_tol: f64,
    /// Initial augmented-Lagrangian penalty (on the normalized cost).
    pub rho: f64,
    /// Iterations between certificate evaluations.
    pub check_every: usize,
    /// Window (in iterations) of the objective stall test.
    pub stall_window: usize,
    /// Marginal eigenvalues at or below this are treated as outside the support.
    pub support_tol: f64,
    pub oracle_mode: OracleMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 20_000,
            feas_tol: 1e-7,
            obj_tol: 1e-9,
            gap_tol: 1e-7,
            rho: 1.0,
            check_every: 10,
            stall_window: 50,
            support_tol: 1e-9,
            oracle_mode: OracleMode::Splitting,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol >= 1e-9) {
            return Err(Error::Config(format!("feas_tol must be at least 1e-9, got {}", self.feas_tol)));
        }
        if self.max_iters == 0 || self.check_every == 0 {
            return Err(Error::Config("max_iters and check_every must be positive".into()));
        }
        if !(self.rho > 0.0) || !(self.obj_tol > 0.0) || !(self.gap_tol > 0.0) {
            return Err(Error::Config("rho, obj_tol and gap_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Coupling {
    pub q: DensityOperator,
    pub marginal_first: DensityOperator,
    pub marginal_second: DensityOperator,
    pub residuals: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct MKResult {
    pub value_sq: f64,
    pub coupling: Coupling,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective_gap: f64,
    pub lambda: f64,
    /// Certified lower bound on the optimum.
    pub lower_bound: f64,
    /// trace(Q·C) with Q zero-padded into a basis 4 levels larger per mode.
    pub padded_value_sq: f64,
    /// Best feasible objective at each certificate check.
    pub history: Vec<f64>,
}

/// Raw solution of the coupling program for an arbitrary cost.
#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub q: CMatrix,
    pub value: f64,
    pub lower: f64,
    pub iterations: usize,
    pub admm_residual: f64,
    pub dual_residual: f64,
    pub history: Vec<f64>,
}

pub fn solve_mk(
    k: &DensityOperator,
    kp: &DensityOperator,
    rep: &OscillatorRep,
    cfg: &SolverConfig,
) -> Result<MKResult> {
    let cost = cost_operator(rep, rep)?;
    solve_mk_with_cost(k, kp, &cost, cfg)
}

pub fn solve_mk_with_cost(
    k: &DensityOperator,
    kp: &DensityOperator,
    cost: &CostOperator,
    cfg: &SolverConfig,
) -> Result<MKResult> {
    cfg.validate()?;
    let rep = cost.rep;
    rep.check_density(k)?;
    rep.check_density(kp)?;
    let n = rep.dim();
    let sol = match cfg.oracle_mode {
        OracleMode::Splitting => solve_coupling_sdp(k.matrix(), kp.matrix(), cost.matrix.matrix(), cfg)?,
        OracleMode::Barrier => {
            let b = testkit::brute_force_sdp(k, kp, cost.matrix.matrix(), 1e-9)?;
            SdpSolution {
                q: b.q,
                value: b.value,
                lower: b.value - b.gap,
                iterations: 0,
                admm_residual: 0.0,
                dual_residual: 0.0,
                history: vec![b.value],
            }
        }
    };
    // Both oracles return Q as a congruence of a PSD matrix.
    let q = DensityOperator::from_congruence(&sol.q, BasisTag::Tensor(vec![rep.tag(), rep.tag()]))?;
    let m1 = crate::linalg::partial_trace(q.matrix(), (n, n), crate::linalg::Subsystem::Second)?;
    let m2 = crate::linalg::partial_trace(q.matrix(), (n, n), crate::linalg::Subsystem::First)?;
    let r1 = frobenius(&(&m1 - k.matrix()));
    let r2 = frobenius(&(&m2 - kp.matrix()));
    let value_sq = trace_product(q.matrix(), cost.matrix.matrix()).re;
    let padded_value_sq = padded_cost_expectation(&rep, q.matrix(), 4);
    Ok(MKResult {
        value_sq,
        iterations: sol.iterations,
        primal_residual: r1.max(r2),
        dual_residual: sol.dual_residual,
        objective_gap: (value_sq - sol.lower).max(0.0),
        lambda: rep.lambda,
        lower_bound: sol.lower,
        padded_value_sq,
        history: sol.history,
        coupling: Coupling {
            q,
            marginal_first: k.clone(),
            marginal_second: kp.clone(),
            residuals: (r1, r2),
        },
    })
}

struct Support {
    /// Orthonormal basis of the kept eigenvectors, as columns.
    basis: CMatrix,
    weights: Vec<f64>,
}

fn support(m: &CMatrix, tol: f64) -> Support {
    let e = eigh(m);
    let keep: Vec<usize> = (0..e.eigenvalues.len()).filter(|&i| e.eigenvalues[i] > tol).collect();
    let mut basis = CMatrix::zeros(m.nrows(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        basis.set_column(dst, &e.eigenvectors.column(src));
    }
    let total: f64 = keep.iter().map(|&i| e.eigenvalues[i]).sum();
    Support {
        basis,
        weights: keep.iter().map(|&i| e.eigenvalues[i] / total).collect(),
    }
}

fn diag(w: &[f64]) -> CMatrix {
    CMatrix::from_fn(w.len(), w.len(), |i, j| if i == j { re(w[i]) } else { C64::new(0.0, 0.0) })
}

/// Tr over the second factor of an (a·b)-dimensional matrix.
fn ptrace_second(q: &CMatrix, a: usize, b: usize) -> CMatrix {
    CMatrix::from_fn(a, a, |i, j| (0..b).map(|k| q[(i * b + k, j * b + k)]).sum())
}

fn ptrace_first(q: &CMatrix, a: usize, b: usize) -> CMatrix {
    CMatrix::from_fn(b, b, |i, j| (0..a).map(|k| q[(k * b + i, k * b + j)]).sum())
}

/// A†(Y1, Y2) = Y1⊗I + I⊗Y2.
fn adjoint_marginals(y1: &CMatrix, y2: &CMatrix) -> CMatrix {
    let (a, b) = (y1.nrows(), y2.nrows());
    kron(y1, &CMatrix::identity(b, b)) + kron(&CMatrix::identity(a, a), y2)
}

/// Solves A A† (Y1, Y2) = (E1, E2) for trace-consistent right-hand sides.
fn solve_normal_equations(e1: &CMatrix, e2: &CMatrix) -> (CMatrix, CMatrix) {
    let (a, b) = (e1.nrows(), e2.nrows());
    let s = trace(e1).re;
    let t1 = s / (2.0 * b as f64);
    let t2 = s / (2.0 * a as f64);
    let y1 = (e1 - CMatrix::identity(a, a) * re(t2)) / re(b as f64);
    let y2 = (e2 - CMatrix::identity(b, b) * re(t1)) / re(a as f64);
    (y1, y2)
}

/// Rescales a PSD matrix by local congruences until both partial traces
/// equal diag(w1) and diag(w2). Preserves positivity exactly.
fn sinkhorn_repair(z: &CMatrix, w1: &[f64], w2: &[f64]) -> CMatrix {
    let (a, b) = (w1.len(), w2.len());
    let target = kron(&diag(w1), &diag(w2));
    let mut q = hermitize(&(project_psd_raw(z) * re(1.0 - 1e-10) + &target * re(1e-10)));
    let s1 = diag(&w1.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
    let s2 = diag(&w2.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
    let d1 = diag(w1);
    let d2 = diag(w2);
    for _ in 0..200 {
        let m1 = ptrace_second(&q, a, b);
        let m2 = ptrace_first(&q, a, b);
        if frobenius(&(&m1 - &d1)) < 1e-14 && frobenius(&(&m2 - &d2)) < 1e-14 {
            break;
        }
        let inv = eigh(&m1).reconstruct_with(|w| 1.0 / w.max(1e-300).sqrt());
        q = hermitize(&congruence_first(&(&s1 * inv), &q, a, b));
        let m2 = ptrace_first(&q, a, b);
        let inv = eigh(&m2).reconstruct_with(|w| 1.0 / w.max(1e-300).sqrt());
        q = hermitize(&congruence_second(&(&s2 * inv), &q, a, b));
    }
    q
}

/// (G⊗I)·Q·(G⊗I)† for Q on C^a ⊗ C^b, without forming the Kronecker product.
fn congruence_first(g: &CMatrix, q: &CMatrix, a: usize, b: usize) -> CMatrix {
    let n = a * b;
    let zero = C64::new(0.0, 0.0);
    // Left factor: rows (i, j) ← Σ_m g[i, m] rows (m, j).
    let mut left = CMatrix::from_element(n, n, zero);
    for col in 0..n {
        for i in 0..a {
            for m in 0..a {
                let gim = g[(i, m)];
                if gim == zero {
                    continue;
                }
                for j in 0..b {
                    left[(i * b + j, col)] += gim * q[(m * b + j, col)];
                }
            }
        }
    }
    // Right factor: columns (k, l) ← Σ_m conj(g[k, m]) columns (m, l).
    let mut out = CMatrix::from_element(n, n, zero);
    for k in 0..a {
        for m in 0..a {
            let gkm = g[(k, m)].conj();
            if gkm == zero {
                continue;
            }
            for l in 0..b {
                let src = left.column(m * b + l).clone_owned();
                let mut dst = out.column_mut(k * b + l);
                dst.axpy(gkm, &src, re(1.0));
            }
        }
    }
    out
}

/// (I⊗H)·Q·(I⊗H)† for Q on C^a ⊗ C^b.
fn congruence_second(h: &CMatrix, q: &CMatrix, a: usize, b: usize) -> CMatrix {
    let n = a * b;
    let zero = C64::new(0.0, 0.0);
    let mut left = CMatrix::from_element(n, n, zero);
    for col in 0..n {
        for i in 0..a {
            for j in 0..b {
                let mut acc = zero;
                for m in 0..b {
                    acc += h[(j, m)] * q[(i * b + m, col)];
                }
                left[(i * b + j, col)] = acc;
            }
        }
    }
    let mut out = CMatrix::from_element(n, n, zero);
    for k in 0..a {
        for l in 0..b {
            for m in 0..b {
                let hlm = h[(l, m)].conj();
                if hlm == zero {
                    continue;
                }
                let src = left.column(k * b + m).clone_owned();
                let mut dst = out.column_mut(k * b + l);
                dst.axpy(hlm, &src, re(1.0));
            }
        }
    }
    out
}

/// Splitting residual below which a long stall of the feasible objective
/// counts as convergence.
const LONG_STALL_RESIDUAL: f64 = 1e-4;

/// Minimizes trace(Q·C) over PSD Q with Tr₂Q = K and Tr₁Q = K'.
/// Over-relaxation factor for the splitting iteration.
const RELAXATION: f64 = 1.6;

pub fn solve_coupling_sdp(k: &CMatrix, kp: &CMatrix, cost: &CMatrix, cfg: &SolverConfig) -> Result<SdpSolution> {
    let (n1, n2) = (k.nrows(), kp.nrows());
    if cost.nrows() != n1 * n2 {
        return Err(Error::dimension(format!(
            "cost has dimension {}, marginals {n1} and {n2}",
            cost.nrows()
        )));
    }
    let s1 = support(k, cfg.support_tol);
    let s2 = support(kp, cfg.support_tol);
    let (r1, r2) = (s1.weights.len(), s2.weights.len());
    if r1 == 0 || r2 == 0 {
        return Err(Error::validation("marginal has empty support"));
    }
    let v = kron(&s1.basis, &s2.basis);
    let c_red = hermitize(&(v.adjoint() * cost * &v));
    let lift = |q: &CMatrix| hermitize(&(&v * q * v.adjoint()));

    if r1 == 1 || r2 == 1 {
        let q = kron(&diag(&s1.weights), &diag(&s2.weights));
        let value = trace_product(&q, &c_red).re;
        return Ok(SdpSolution {
            q: lift(&q),
            value,
            lower: value,
            iterations: 0,
            admm_residual: 0.0,
            dual_residual: 0.0,
            history: vec![value],
        });
    }

    let r = r1 * r2;
    let scale = (trace(&c_red).re / r as f64).abs().max(1e-300);
    let c_s = &c_red / re(scale);
    let d1 = diag(&s1.weights);
    let d2 = diag(&s2.weights);

    let project_affine = |w: &CMatrix| -> CMatrix {
        let e1 = &d1 - ptrace_second(w, r1, r2);
        let e2 = &d2 - ptrace_first(w, r1, r2);
        let (y1, y2) = solve_normal_equations(&e1, &e2);
        w + adjoint_marginals(&y1, &y2)
    };
    let dual_bound = |u: &CMatrix, rho: f64| -> f64 {
        // S = -ρU approximates the PSD-cone multiplier; y fits A†y ≈ C - S.
        let m = &c_s + u * re(rho);
        let (y1, y2) = solve_normal_equations(&ptrace_second(&m, r1, r2), &ptrace_first(&m, r1, r2));
        let slack = hermitize(&(&c_s - adjoint_marginals(&y1, &y2)));
        let by = trace_product(&d1, &y1).re + trace_product(&d2, &y2).re;
        // trace Q = 1 on the feasible set, so any λmin certifies.
        by + eigh(&slack).min()
    };

    let mut z = kron(&d1, &d2);
    let mut u = CMatrix::zeros(r, r);
    let mut rho = cfg.rho;
    let mut best_upper = trace_product(&z, &c_red).re;
    let mut best_q = z.clone();
    let mut best_lower = f64::NEG_INFINITY;
    let mut history = vec![best_upper];
    let mut prim = f64::INFINITY;
    let mut checked_at = vec![0usize];
    let mut next_check = cfg.check_every;

    for it in 1..=cfg.max_iters {
        let w = &z - &u - &c_s * re(1.0 / rho);
        let x = project_affine(&w);
        let x_hat = &x * re(RELAXATION) + &z * re(1.0 - RELAXATION);
        let z_old = std::mem::replace(&mut z, project_psd_raw(&(&x_hat + &u)));
        u += &x_hat - &z;
        prim = frobenius(&(&x - &z));
        let dual = rho * frobenius(&(&z - &z_old));

        if it < next_check {
            continue;
        }
        // Checks cost a Sinkhorn repair and an eigendecomposition; long runs
        // space them out, up to eight times the configured interval.
        let spacing = cfg.check_every * (it / (25 * cfg.check_every)).clamp(1, 8);
        next_check = it + spacing;
        let q = sinkhorn_repair(&z, &s1.weights, &s2.weights);
        let upper = trace_product(&q, &c_red).re;
        if upper < best_upper {
            best_upper = upper;
            best_q = q;
        }
        best_lower = best_lower.max(scale * dual_bound(&u, rho));
        history.push(best_upper);
        checked_at.push(it);
        let gap = best_upper - best_lower;
        let certified = gap <= cfg.gap_tol * best_upper.abs().max(1.0);
        // Best upper bound at least `w` iterations ago, compared with now.
        let stalled_over = |w: usize| {
            let Some(then) = it.checked_sub(w) else { return false };
            let idx = checked_at.partition_point(|&c| c <= then);
            idx > 0 && (history[idx - 1] - best_upper).abs() <= cfg.obj_tol
        };
        // The feasible objective usually settles long before the dual
        // estimate does when a marginal has eigenvalues near support_tol.
        let settled = stalled_over(10 * cfg.stall_window) && prim <= LONG_STALL_RESIDUAL;
        if certified || (prim <= cfg.feas_tol && stalled_over(cfg.stall_window)) || settled {
            return Ok(SdpSolution {
                q: lift(&best_q),
                value: best_upper,
                lower: best_lower.min(best_upper),
                iterations: it,
                admm_residual: prim,
                dual_residual: dual,
                history,
            });
        }

        // Residual balancing.
        if prim > 10.0 * dual {
            rho *= 2.0;
            u /= re(2.0);
        } else if dual > 10.0 * prim {
            rho /= 2.0;
            u *= re(2.0);
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        primal_residual: prim,
        gap: best_upper - best_lower,
        history,
    })
}

/// trace(Q·C_λ) evaluated with both factors zero-padded by `extra` levels
/// per mode, using ladder matrices of the padded size.
pub fn padded_cost_expectation(rep: &OscillatorRep, q: &CMatrix, extra: usize) -> f64 {
    let big = OscillatorRep {
        n_basis: rep.n_basis + extra,
        ..*rep
    };
    let (n, nb) = (rep.dim(), big.dim());
    let embed: Vec<usize> = (0..n)
        .map(|k| {
            let mut rem = k;
            let mut levels = vec![0; rep.d];
            for j in (0..rep.d).rev() {
                levels[j] = rem % rep.n_basis;
                rem /= rep.n_basis;
            }
            levels.iter().fold(0, |acc, &l| acc * big.n_basis + l)
        })
        .collect();
    // Padded entries of Q are zero, so the padded contraction only reads Q
    // through the embedding; `small` inverts it.
    let mut small = vec![None; nb];
    for (k, &b) in embed.iter().enumerate() {
        small[b] = Some(k);
    }
    let m1 = ptrace_second(q, n, n);
    let m2 = ptrace_first(q, n, n);
    let mut total = 2.0 * rep.d as f64 * trace(q).re;
    for j in 0..rep.d {
        let num = number_operator(&big, j);
        for k in 0..n {
            let level = num[(embed[k], embed[k])].re;
            total += 2.0 * level * (m1[(k, k)].re + m2[(k, k)].re);
        }
        let a = big.embed(&annihilation_1(big.n_basis), j);
        // trace(Q·(a†⊗a)) by direct contraction; the other term is its conjugate.
        let mut cross = C64::new(0.0, 0.0);
        let nz = nonzeros(&a);
        for &(r, col, val) in &nz {
            // (a†)[col, r] = conj(a[r, col]) = val (real ladder entries).
            for &(r2, col2, val2) in &nz {
                if let (Some(i1), Some(i2), Some(j1), Some(j2)) = (small[r], small[col2], small[col], small[r2]) {
                    cross += q[(i1 * n + i2, j1 * n + j2)] * re(val * val2);
                }
            }
        }
        total -= 4.0 * cross.re;
    }
    rep.lambda * total
}

fn nonzeros(m: &CMatrix) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)].norm() != 0.0 {
                out.push((i, j, m[(i, j)].re));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstMoments {
    pub mean_position: Vec<f64>,
    /// trace(R·(-iλ∇)) at the representation's scale.
    pub mean_momentum: Vec<f64>,
}

pub fn first_moments(r: &DensityOperator, rep: &OscillatorRep) -> Result<FirstMoments> {
    rep.check_density(r)?;
    let mut mean_position = Vec::with_capacity(rep.d);
    let mut mean_momentum = Vec::with_capacity(rep.d);
    for j in 0..rep.d {
        mean_position.push(r.expectation(position_operator(rep, j).matrix()).re);
        mean_momentum.push(r.expectation(momentum_operator(rep, j).matrix()).re);
    }
    Ok(FirstMoments {
        mean_position,
        mean_momentum,
    })
}

/// Closed-form MK_λ(R^λ_{q,p}, R'^λ_{q',p'})² from the scale-1 value
/// `mk1_sq` = MK₁(R,R')² and the scale-1 first moments of R - R'.
pub fn mk_translation_formula(
    r: &DensityOperator,
    rp: &DensityOperator,
    rep1: &OscillatorRep,
    lambda: f64,
    a: &PhaseSpacePoint,
    b: &PhaseSpacePoint,
    mk1_sq: f64,
) -> Result<f64> {
    if (rep1.lambda - 1.0).abs() > 0.0 {
        return Err(Error::validation("moments must be taken in the scale-1 representation"));
    }
    let m = first_moments(r, rep1)?;
    let mp = first_moments(rp, rep1)?;
    let sl = lambda.sqrt();
    let mut total = a.distance_sq(b) + lambda * mk1_sq;
    for j in 0..rep1.d {
        total += 2.0 * sl * (m.mean_position[j] - mp.mean_position[j]) * (a.q[j] - b.q[j]);
        total += 2.0 * sl * (m.mean_momentum[j] - mp.mean_momentum[j]) * (a.p[j] - b.p[j]);
    }
    Ok(total)
}

/// |q-q'|² + |p-p'|² + 2dλ for two coherent states.
pub fn coherent_closed_form(a: &PhaseSpacePoint, b: &PhaseSpacePoint, lambda: f64) -> f64 {
    a.distance_sq(b) + 2.0 * a.d() as f64 * lambda
}

#[derive(Clone, Debug)]
pub struct ScalingRow {
    pub lambda: f64,
    pub mk_lambda_sq: f64,
    pub lambda_times_mk1_sq: f64,
    pub rel_err: f64,
}

/// Solves at scale 1 and at each λ, with R and R' kept as scale-1 matrices
/// (the dilation is a change of basis tag).
pub fn mk_scaling_check(
    r: &DensityOperator,
    rp: &DensityOperator,
    rep1: &OscillatorRep,
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<ScalingRow>> {
    let base = solve_mk(r, rp, &rep1.at_scale(1.0)?, cfg)?.value_sq;
    lambdas
        .iter()
        .map(|&lambda| {
            let rep = rep1.at_scale(lambda)?;
            let a = r.clone().with_basis(rep.tag())?;
            let b = rp.clone().with_basis(rep.tag())?;
            let v = solve_mk(&a, &b, &rep, cfg)?.value_sq;
            Ok(ScalingRow {
                lambda,
                mk_lambda_sq: v,
                lambda_times_mk1_sq: lambda * base,
                rel_err: (v - lambda * base).abs() / v,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TensorBound {
    pub lhs: f64,
    pub rhs: f64,
    pub single: f64,
}

/// MK₁(R₁⊗R₁, R₂⊗R₂)² against 2·MK₁(R₁,R₂)², using the two-mode basis.
pub fn tensor_power_bound(
    r1: &DensityOperator,
    r2: &DensityOperator,
    rep: &OscillatorRep,
    cfg: &SolverConfig,
) -> Result<TensorBound> {
    if rep.d != 1 {
        return Err(Error::validation("tensor powers are formed from d = 1 factors"));
    }
    if rep.n_basis > 6 {
        return Err(Error::Size(format!(
            "tensor powers support at most 6 levels per factor, got {}",
            rep.n_basis
        )));
    }
    let single = solve_mk(r1, r2, rep, cfg)?.value_sq;
    let rep2 = OscillatorRep::new(rep.n_basis, 2, rep.lambda)?;
    let a = DensityOperator::from_computed(&kron(r1.matrix(), r1.matrix()), rep2.tag())?;
    let b = DensityOperator::from_computed(&kron(r2.matrix(), r2.matrix()), rep2.tag())?;
    let lhs = solve_mk(&a, &b, &rep2, cfg)?.value_sq;
    Ok(TensorBound {
        lhs,
        rhs: 2.0 * single,
        single,
    })
}

/// Uniform cell-centered grid on [-half_width, half_width].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialGrid {
    pub n: usize,
    pub half_width: f64,
}

impl SpatialGrid {
    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        if n < 16 || !(half_width > 0.0) {
            return Err(Error::validation(format!(
                "spatial grid needs n ≥ 16 and positive half-width, got {n}, {half_width}"
            )));
        }
        Ok(SpatialGrid { n, half_width })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n).map(|i| -self.half_width + (i as f64 + 0.5) * h).collect()
    }
}

/// Builds R from a kernel ρ via
/// r(x,x') = ∫ exp(-((x-z)² + (x'-z)²)/4) ρ((x+z)/2, (x'+z)/2) dz,
/// normalizes it and expands it in the representation's Hermite basis.
pub fn self_minimizer_from_kernel(
    rho: &dyn Fn(f64, f64) -> C64,
    grid: &SpatialGrid,
    rep: &OscillatorRep,
) -> Result<DensityOperator> {
    if rep.d != 1 {
        return Err(Error::validation("kernel construction is implemented for d = 1"));
    }
    let xs = grid.points();
    let h = grid.spacing();
    let n = grid.n;

    let sampled = CMatrix::from_fn(n, n, |i, j| rho(xs[i], xs[j]));
    if crate::linalg::hermiticity_defect(&sampled) > 1e-10 * frobenius(&sampled).max(1.0) {
        return Err(Error::validation("kernel is not Hermitian on the grid"));
    }
    let smin = eigh(&sampled).min();
    if smin < -1e-10 * frobenius(&sampled).max(1.0) {
        return Err(Error::validation(format!("kernel is not positive (eigenvalue {smin:.3e})")));
    }

    let mut r = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = C64::new(0.0, 0.0);
            for &z in &xs {
                let g = (-((xs[i] - z).powi(2) + (xs[j] - z).powi(2)) / 4.0).exp();
                if g < 1e-300 {
                    continue;
                }
                acc += rho((xs[i] + z) / 2.0, (xs[j] + z) / 2.0) * re(g);
            }
            r[(i, j)] = acc * re(h);
            r[(j, i)] = (acc * re(h)).conj();
        }
    }
    let grid_mass: f64 = (0..n).map(|i| r[(i, i)].re).sum::<f64>() * h;
    if !(grid_mass > 0.0) {
        return Err(Error::validation("kernel has zero mass"));
    }

    let nb = rep.n_basis;
    let mut phi = CMatrix::zeros(nb, n);
    let mut buf = vec![0.0; nb];
    for (j, &x) in xs.iter().enumerate() {
        scaled_hermite_functions_into(x, rep.lambda, &mut buf);
        for m in 0..nb {
            phi[(m, j)] = re(buf[m]);
        }
    }
    let projected = &phi * &r * phi.transpose() * re(h * h);
    let kept = trace(&projected).re;
    let deficit = 1.0 - kept / grid_mass;
    if deficit > 0.005 {
        return Err(Error::Truncation {
            what: "kernel projection onto the oscillator basis".into(),
            deficit,
            limit: 0.005,
        });
    }
    let psd = project_psd_raw(&projected);
    DensityOperator::normalized(hermitize(&psd), rep.tag())
}

#[derive(Clone, Debug)]
pub struct SeparationReport {
    pub value_sq: f64,
    pub floor: f64,
    pub excess: f64,
    pub holds: bool,
}

pub fn separation_check(
    r: &DensityOperator,
    rp: &DensityOperator,
    rep: &OscillatorRep,
    cfg: &SolverConfig,
) -> Result<SeparationReport> {
    let diff = frobenius(&(r.matrix() - rp.matrix()));
    if diff < 0.1 {
        return Err(Error::validation(format!(
            "separation needs ‖R - R'‖_F ≥ 0.1, got {diff:.3e}"
        )));
    }
    let res = solve_mk(r, rp, rep, cfg)?;
    let floor = 2.0 * rep.d as f64 * rep.lambda;
    let excess = res.value_sq - floor;
    Ok(SeparationReport {
        value_sq: res.value_sq,
        floor,
        excess,
        holds: excess > 10.0 * cfg.feas_tol,
    })
}

/// Node positions and weights (including the Gaussian factor) of an
/// m-point Gauss-Hermite rule for ∫ f(x) dx at scale λ.
pub(crate) fn scaled_quadrature(m: usize, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(m);
    let s = lambda.sqrt();
    let nodes = x.iter().map(|v| v * s).collect();
    let weights = x.iter().zip(&w).map(|(v, wk)| wk * (v * v).exp() * s).collect();
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::{coherent_density, fock_density, translated_scaled_density};
    use crate::testkit::random_density;

    fn rep(n: usize, lambda: f64) -> OscillatorRep {
        OscillatorRep::new(n, 1, lambda).unwrap()
    }

    fn tagged(d: DensityOperator, rep: &OscillatorRep) -> DensityOperator {
        d.with_basis(rep.tag()).unwrap()
    }

    #[test]
    fn gaussian_self_distance_is_two() {
        let r = rep(24, 1.0);
        let g = fock_density(&r, &[0]).unwrap();
        let res = solve_mk(&g, &g, &r, &SolverConfig::default()).unwrap();
        assert!((res.value_sq - 2.0).abs() < 1e-12);
        assert!((res.padded_value_sq - res.value_sq).abs() < 1e-9);
    }

    #[test]
    fn coherent_pairs_match_closed_form() {
        let r = rep(24, 1.0);
        let cfg = SolverConfig::default();
        for (a, b, want) in [((0.0, 0.0), (1.0, 0.0), 3.0), ((0.0, 0.0), (0.0, 2.0), 6.0)] {
            let pa = PhaseSpacePoint::d1(a.0, a.1);
            let pb = PhaseSpacePoint::d1(b.0, b.1);
            let ka = coherent_density(&r, &pa).unwrap();
            let kb = coherent_density(&r, &pb).unwrap();
            let v = solve_mk(&ka, &kb, &r, &cfg).unwrap().value_sq;
            assert!((v - want).abs() < 1e-6, "{v} vs {want}");
            assert!((coherent_closed_form(&pa, &pb, 1.0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_pair_converges_with_certificates() {
        let r = rep(4, 1.0);
        let a = tagged(random_density(4, 4, 1), &r);
        let b = tagged(random_density(4, 3, 2), &r);
        let res = solve_mk(&a, &b, &r, &SolverConfig::default()).unwrap();
        assert!(res.primal_residual <= 1e-7);
        assert!(res.value_sq >= 2.0 - 1e-6);
        assert!(res.objective_gap <= 1e-5, "gap {}", res.objective_gap);
        assert!(res.lower_bound <= res.value_sq + 1e-12);
        assert!((res.padded_value_sq - res.value_sq).abs() < 1e-9);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        let swapped = solve_mk(&b, &a, &r, &SolverConfig::default()).unwrap();
        assert!((swapped.value_sq - res.value_sq).abs() < 1e-6);
    }

    #[test]
    fn solver_rejects_mismatched_dimensions() {
        let r = rep(4, 1.0);
        let a = random_density(3, 3, 1);
        let b = tagged(random_density(4, 3, 2), &r);
        assert!(matches!(solve_mk(&a, &b, &r, &SolverConfig::default()), Err(Error::Dimension(_))));
    }

    #[test]
    fn config_validation() {
        let cfg = SolverConfig {
            feas_tol: 1e-12,
            ..SolverConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn sinkhorn_repair_restores_marginals() {
        let w1 = [0.5, 0.3, 0.2];
        let w2 = [0.6, 0.4];
        let g = crate::testkit::random_density(6, 6, 9);
        let q = sinkhorn_repair(g.matrix(), &w1, &w2);
        assert!(frobenius(&(ptrace_second(&q, 3, 2) - diag(&w1))) < 1e-12);
        assert!(frobenius(&(ptrace_first(&q, 3, 2) - diag(&w2))) < 1e-12);
        assert!(eigh(&q).min() >= -1e-14);
    }

    #[test]
    fn structured_congruences_match_kronecker_products() {
        let (a, b) = (3, 2);
        let mut g = crate::testkit::rng(5, 0);
        let q = crate::testkit::ginibre(&mut g, a * b, a * b);
        let x = crate::testkit::ginibre(&mut g, a, a);
        let y = crate::testkit::ginibre(&mut g, b, b);
        let gx = kron(&x, &CMatrix::identity(b, b));
        let gy = kron(&CMatrix::identity(a, a), &y);
        assert!(frobenius(&(congruence_first(&x, &q, a, b) - &gx * &q * gx.adjoint())) < 1e-12);
        assert!(frobenius(&(congruence_second(&y, &q, a, b) - &gy * &q * gy.adjoint())) < 1e-12);
    }

    #[test]
    fn affine_projection_hits_marginals() {
        let (a, b) = (3, 4);
        let w1 = [0.2, 0.3, 0.5];
        let w2 = [0.1, 0.2, 0.3, 0.4];
        let w = crate::testkit::random_density(12, 12, 4).matrix() * re(1.7);
        let e1 = diag(&w1) - ptrace_second(&w, a, b);
        let e2 = diag(&w2) - ptrace_first(&w, a, b);
        let (y1, y2) = solve_normal_equations(&e1, &e2);
        let x = &w + adjoint_marginals(&y1, &y2);
        assert!(frobenius(&(ptrace_second(&x, a, b) - diag(&w1))) < 1e-12);
        assert!(frobenius(&(ptrace_first(&x, a, b) - diag(&w2))) < 1e-12);
    }

    #[test]
    fn first_moments_of_coherent_and_fock_states() {
        for lambda in [1.0, 0.5] {
            let r = rep(24, lambda);
            for (q, p) in [(0.3, -0.2), (1.0, 0.5), (-0.7, 0.0)] {
                let k = coherent_density(&r, &PhaseSpacePoint::d1(q, p)).unwrap();
                let m = first_moments(&k, &r).unwrap();
                assert!((m.mean_position[0] - q).abs() < 1e-10);
                assert!((m.mean_momentum[0] - p).abs() < 1e-10);
            }
            let f = fock_density(&r, &[3]).unwrap();
            let m = first_moments(&f, &r).unwrap();
            assert!(m.mean_position[0].abs() < 1e-15 && m.mean_momentum[0].abs() < 1e-15);
        }
    }

    #[test]
    fn translation_formula_reduces_to_scaled_value() {
        let r1 = rep(24, 1.0);
        let g = fock_density(&r1, &[0]).unwrap();
        let o = PhaseSpacePoint::d1(0.0, 0.0);
        let v = mk_translation_formula(&g, &g, &r1, 0.5, &o, &o, 2.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let a = PhaseSpacePoint::d1(1.0, 0.5);
        let v = mk_translation_formula(&g, &g, &r1, 1.0, &a, &o, 2.0).unwrap();
        assert!((v - 3.25).abs() < 1e-12);
    }

    #[test]
    fn translation_formula_matches_solver_on_translated_pair() {
        let r1 = rep(24, 1.0);
        let g = fock_density(&r1, &[0]).unwrap();
        let f1 = fock_density(&r1, &[1]).unwrap();
        let cfg = SolverConfig::default();
        let mk1 = solve_mk(&g, &f1, &r1, &cfg).unwrap().value_sq;
        let a = PhaseSpacePoint::d1(1.0, 0.0);
        let b = PhaseSpacePoint::d1(0.0, 0.0);
        let ga = translated_scaled_density(&r1, &g, &a).unwrap();
        let fb = translated_scaled_density(&r1, &f1, &b).unwrap();
        let direct = solve_mk(&ga, &fb, &r1, &cfg).unwrap().value_sq;
        let formula = mk_translation_formula(&g, &f1, &r1, 1.0, &a, &b, mk1).unwrap();
        assert!((direct - formula).abs() / direct < 1e-6, "{direct} vs {formula}");
    }

    #[test]
    fn scaling_law_for_gaussian() {
        let r1 = rep(24, 1.0);
        let g = fock_density(&r1, &[0]).unwrap();
        let rows = mk_scaling_check(&g, &g, &r1, &[1.0, 0.5], &SolverConfig::default()).unwrap();
        assert!(rows[0].rel_err < 1e-12);
        assert!((rows[1].mk_lambda_sq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tensor_power_of_vacua() {
        let r = rep(6, 1.0);
        let g = fock_density(&r, &[0]).unwrap();
        let t = tensor_power_bound(&g, &g, &r, &SolverConfig::default()).unwrap();
        assert!((t.lhs - 4.0).abs() < 1e-10 && (t.rhs - 4.0).abs() < 1e-10);
        let f = fock_density(&r, &[1]).unwrap();
        let t = tensor_power_bound(&g, &f, &r, &SolverConfig::default()).unwrap();
        assert!(t.lhs <= t.rhs * (1.0 + 1e-6));
        assert!(tensor_power_bound(&g, &f, &rep(8, 1.0), &SolverConfig::default()).is_err());
    }

    #[test]
    fn separation_needs_distinct_states() {
        let r = rep(8, 1.0);
        let g = fock_density(&r, &[0]).unwrap();
        assert!(matches!(separation_check(&g, &g, &r, &SolverConfig::default()), Err(Error::Validation(_))));
        let f = fock_density(&r, &[1]).unwrap();
        let s = separation_check(&g, &f, &r, &SolverConfig::default()).unwrap();
        assert!(s.holds && s.value_sq > 2.05, "{s:?}");
    }

    #[test]
    fn gaussian_kernel_gives_a_self_minimizer() {
        let r = rep(24, 1.0);
        let grid = SpatialGrid::new(128, 9.0).unwrap();
        let phi = |x: f64| std::f64::consts::PI.powf(-0.25) * (-x * x / 2.0).exp();
        let rho = move |x: f64, y: f64| re(phi(x) * phi(y));
        let d = self_minimizer_from_kernel(&rho, &grid, &r).unwrap();
        assert!((trace(d.matrix()).re - 1.0).abs() < 1e-12);
        let v = solve_mk(&d, &d, &r, &SolverConfig::default()).unwrap().value_sq;
        assert!((v - 2.0).abs() < 0.04, "{v}");
    }

    #[test]
    fn padded_expectation_matches_cost_trace() {
        let r = rep(5, 0.7);
        let cost = cost_operator(&r, &r).unwrap();
        let q = crate::testkit::random_density(25, 25, 3);
        let direct = trace_product(q.matrix(), cost.matrix.matrix()).re;
        assert!((padded_cost_expectation(&r, q.matrix(), 4) - direct).abs() < 1e-10);
        let r2 = OscillatorRep::new(3, 2, 1.2).unwrap();
        let cost = cost_operator(&r2, &r2).unwrap();
        let q = crate::testkit::random_density(81, 81, 5);
        let direct = trace_product(q.matrix(), cost.matrix.matrix()).re;
        assert!((padded_cost_expectation(&r2, q.matrix(), 2) - direct).abs() < 1e-10);
    }
}
