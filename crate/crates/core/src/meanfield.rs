//! Hartree and two-body von Neumann dynamics in the ħ-scaled oscillator
//! basis, marginals, and the mean-field convergence inequality.

use std::sync::Arc;

use crate::bounds::mk1_sq;
use crate::classical_ot::{field_to_measure, w2, MAX_ATOMS};
use crate::error::{Error, Result};
use crate::linalg::{
    eigh, frobenius, hermiticity_defect, hermitize, kron, partial_trace, re, trace, BasisTag, CMatrix,
    DensityOperator, EigenDecomposition, Subsystem, C64,
};
use crate::oscillator::{annihilation_1, OscillatorRep};
use crate::phase_space::{husimi_trace, low_rank_factors, toeplitz_quantize, DiscreteMeasure, PhaseSpaceGrid};
use crate::quantum_ot::{scaled_quadrature, SolverConfig};
use crate::special::scaled_hermite_functions_into;

/// Gauss-Hermite nodes used to project multiplication operators.
pub const QUADRATURE_NODES: usize = 64;

/// Even pair potential with its supplied regularity constants.
#[derive(Clone)]
pub struct PairPotential {
    func: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Sample points, symmetric about 0.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Lip(∇V).
    pub lip_grad: f64,
    /// ‖∇V‖_∞.
    pub grad_sup: f64,
}

impl std::fmt::Debug for PairPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairPotential")
            .field("lip_grad", &self.lip_grad)
            .field("grad_sup", &self.grad_sup)
            .finish_non_exhaustive()
    }
}

impl PairPotential {
    /// Samples `v` on 201 points of [-10, 10] and checks evenness there.
    pub fn new(v: impl Fn(f64) -> f64 + Send + Sync + 'static, lip_grad: f64, grad_sup: f64) -> Result<Self> {
        if !(lip_grad >= 0.0 && lip_grad.is_finite() && grad_sup >= 0.0 && grad_sup.is_finite()) {
            return Err(Error::validation("lip_grad and grad_sup must be finite and nonnegative"));
        }
        let grid: Vec<f64> = (0..201).map(|i| -10.0 + 0.1 * i as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&y| v(y)).collect();
        for (i, &y) in grid.iter().enumerate() {
            let mirror = values[grid.len() - 1 - i];
            if (values[i] - mirror).abs() > 1e-12 {
                return Err(Error::validation(format!("potential is not even at y = {y}")));
            }
            if !values[i].is_finite() {
                return Err(Error::validation(format!("potential is not finite at y = {y}")));
            }
        }
        Ok(PairPotential {
            func: Arc::new(v),
            grid,
            values,
            lip_grad,
            grad_sup,
        })
    }

    /// V(y) = √(1 + y²) - 1 with Lip(∇V) = ‖∇V‖_∞ = 1.
    pub fn softened() -> Self {
        PairPotential::new(|y| (1.0 + y * y).sqrt() - 1.0, 1.0, 1.0).expect("softened potential is even")
    }

    pub fn zero() -> Self {
        PairPotential::new(|_| 0.0, 0.0, 0.0).expect("zero potential is even")
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.func)(y)
    }

    /// Λ = 3 + 4 Lip(∇V)².
    pub fn rate(&self) -> f64 {
        3.0 + 4.0 * self.lip_grad * self.lip_grad
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub hbar: f64,
    pub n_basis: usize,
    /// Store every k-th step (the final step is always stored).
    pub record_every: usize,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_final: f64, hbar: f64, n_basis: usize) -> Self {
        EvolutionConfig {
            dt,
            t_final,
            hbar,
            n_basis,
            record_every: 1,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final >= 0.0 && self.hbar > 0.0) || self.record_every == 0 {
            return Err(Error::Config("dt, ħ and record_every must be positive, t_final nonnegative".into()));
        }
        let ratio = self.t_final / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "t_final {} is not a multiple of dt {}",
                self.t_final, self.dt
            )));
        }
        Ok(())
    }

    fn check_stability(&self, h_norm: f64) -> Result<()> {
        let limit = self.hbar / (10.0 * h_norm);
        if self.dt > limit {
            return Err(Error::Config(format!(
                "dt = {} exceeds ħ/(10‖H‖) = {limit:.3e}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// One-body operators in the ħ-scaled Hermite basis, with the quadrature
/// used for multiplication operators.
#[derive(Clone, Debug)]
pub struct OneBody {
    pub rep: OscillatorRep,
    /// -½ħ²Δ, compressed exactly from ladder operators.
    pub kinetic: CMatrix,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// phi[(m, k)] = φ_m(x_k).
    phi: nalgebra::DMatrix<f64>,
}

impl OneBody {
    pub fn new(n_basis: usize, hbar: f64) -> Result<Self> {
        let rep = OscillatorRep::new(n_basis, 1, hbar)?;
        let a = annihilation_1(n_basis);
        let ad = a.adjoint();
        let number = &ad * &a;
        // P² = (ħ/2)(2N + 1 - a² - a†²); each entry is exact under truncation.
        let p2 = (number * re(2.0) + CMatrix::identity(n_basis, n_basis) - &a * &a - &ad * &ad) * re(hbar / 2.0);
        let kinetic = hermitize(&(p2 * re(0.5)));
        let (nodes, weights) = scaled_quadrature(QUADRATURE_NODES, hbar);
        let mut phi = nalgebra::DMatrix::<f64>::zeros(n_basis, nodes.len());
        let mut buf = vec![0.0; n_basis];
        for (k, &x) in nodes.iter().enumerate() {
            scaled_hermite_functions_into(x, hbar, &mut buf);
            for m in 0..n_basis {
                phi[(m, k)] = buf[m];
            }
        }
        Ok(OneBody {
            rep,
            kinetic,
            nodes,
            weights,
            phi,
        })
    }

    pub fn dim(&self) -> usize {
        self.rep.n_basis
    }

    /// Position density r(x_k, x_k) at the quadrature nodes.
    pub fn density_at_nodes(&self, rho: &CMatrix) -> Vec<f64> {
        let n = self.dim();
        (0..self.nodes.len())
            .map(|k| {
                let mut acc = 0.0;
                for m in 0..n {
                    for l in 0..n {
                        acc += rho[(m, l)].re * self.phi[(m, k)] * self.phi[(l, k)];
                    }
                }
                acc
            })
            .collect()
    }

    /// Compression of multiplication by f, given f at the nodes.
    pub fn multiplication(&self, f: &[f64]) -> CMatrix {
        let n = self.dim();
        let mut out = CMatrix::zeros(n, n);
        for m in 0..n {
            for l in m..n {
                let v: f64 = (0..self.nodes.len())
                    .map(|k| self.weights[k] * f[k] * self.phi[(m, k)] * self.phi[(l, k)])
                    .sum();
                out[(m, l)] = re(v);
                out[(l, m)] = re(v);
            }
        }
        out
    }

    /// V_ρ = V * r, the Hartree potential as a multiplication operator.
    pub fn hartree_potential(&self, rho: &CMatrix, v: &PairPotential) -> CMatrix {
        let r = self.density_at_nodes(rho);
        let f: Vec<f64> = self
            .nodes
            .iter()
            .map(|&x| {
                self.nodes
                    .iter()
                    .zip(&self.weights)
                    .zip(&r)
                    .map(|((&z, &w), &rz)| w * v.eval(x - z) * rz)
                    .sum()
            })
            .collect();
        self.multiplication(&f)
    }

    /// ⟨m1 m2|V(x1 - x2)|n1 n2⟩ on the two-particle product basis.
    pub fn pair_interaction(&self, v: &PairPotential) -> CMatrix {
        let n = self.dim();
        let nk = self.nodes.len();
        // a[(m·n + l), k] = w_k φ_m(x_k) φ_l(x_k)
        let a = nalgebra::DMatrix::<f64>::from_fn(n * n, nk, |ml, k| {
            self.weights[k] * self.phi[(ml / n, k)] * self.phi[(ml % n, k)]
        });
        let vm = nalgebra::DMatrix::<f64>::from_fn(nk, nk, |k, l| v.eval(self.nodes[k] - self.nodes[l]));
        let b = &a * vm * a.transpose();
        // b[(m1 n1), (m2 n2)] → out[(m1 m2), (n1 n2)]
        CMatrix::from_fn(n * n, n * n, |row, col| {
            let (m1, m2) = (row / n, row % n);
            let (n1, n2) = (col / n, col % n);
            re(b[(m1 * n + n1, m2 * n + n2)])
        })
    }

    /// tr(Kρ) + ½ tr(V_ρ ρ).
    pub fn hartree_energy(&self, rho: &CMatrix, v: &PairPotential) -> f64 {
        let vr = self.hartree_potential(rho, v);
        (trace(&(&self.kinetic * rho)).re) + 0.5 * trace(&(vr * rho)).re
    }
}

fn spectral_norm(m: &CMatrix) -> f64 {
    let e = eigh(&hermitize(m));
    e.max().abs().max(e.min().abs())
}

/// exp(-iHτ/ħ) from a precomputed eigendecomposition.
fn propagator(e: &EigenDecomposition, tau: f64, hbar: f64) -> CMatrix {
    let v = &e.eigenvectors;
    let mut scaled = v.clone();
    for (k, &w) in e.eigenvalues.iter().enumerate() {
        let phase = C64::from_polar(1.0, -w * tau / hbar);
        for r in 0..scaled.nrows() {
            scaled[(r, k)] *= phase;
        }
    }
    scaled * v.adjoint()
}

/// U ρ U*, with rounding drift of the trace and Hermiticity removed.
fn conjugate(u: &CMatrix, rho: &CMatrix) -> CMatrix {
    let m = hermitize(&(u * rho * u.adjoint()));
    let tr = trace(&m).re;
    m / re(tr)
}

/// Stored states of a unitary flow. Each state is a unitary conjugate of
/// the validated initial density, so steps are not re-validated.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CMatrix>,
    pub basis: BasisTag,
}

impl Trajectory {
    fn start(rho: &DensityOperator) -> Self {
        Trajectory {
            times: vec![0.0],
            states: vec![rho.matrix().clone()],
            basis: rho.basis().clone(),
        }
    }

    fn record(&mut self, step: usize, cfg: &EvolutionConfig, rho: &CMatrix) {
        if step.is_multiple_of(cfg.record_every) || step == cfg.steps() {
            self.times.push(step as f64 * cfg.dt);
            self.states.push(rho.clone());
        }
    }

    pub fn last(&self) -> &CMatrix {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn density_at(&self, t: f64) -> Result<DensityOperator> {
        DensityOperator::from_computed(self.at(t), self.basis.clone())
    }

    /// State at time `t` (nearest stored step).
    pub fn at(&self, t: f64) -> &CMatrix {
        let idx = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.states[idx]
    }
}

/// Hartree flow by Strang splitting. The mean-field potential of each step
/// is taken at a predicted midpoint state (a half step with the potential
/// of the current state), which keeps the scheme second order.
pub fn evolve_hartree(rho_in: &DensityOperator, v: &PairPotential, cfg: &EvolutionConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let ob = OneBody::new(cfg.n_basis, cfg.hbar)?;
    ob.rep.check_density(rho_in)?;
    let h_norm = spectral_norm(&ob.kinetic) + spectral_norm(&ob.hartree_potential(rho_in.matrix(), v));
    cfg.check_stability(h_norm)?;

    let ek = eigh(&ob.kinetic);
    let (hb, dt) = (cfg.hbar, cfg.dt);
    let uk_half = propagator(&ek, dt / 2.0, hb);
    let uk_quarter = propagator(&ek, dt / 4.0, hb);

    let mut traj = Trajectory::start(rho_in);
    let mut rho = rho_in.matrix().clone();
    for step in 1..=cfg.steps() {
        let v_now = eigh(&ob.hartree_potential(&rho, v));
        let mut mid = conjugate(&uk_quarter, &rho);
        mid = conjugate(&propagator(&v_now, dt / 2.0, hb), &mid);
        mid = conjugate(&uk_quarter, &mid);
        let v_mid = eigh(&ob.hartree_potential(&mid, v));

        rho = conjugate(&uk_half, &rho);
        rho = conjugate(&propagator(&v_mid, dt, hb), &rho);
        rho = conjugate(&uk_half, &rho);
        traj.record(step, cfg, &rho);
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NBodyScheme {
    /// exp(-iH_N dt/ħ) from one eigendecomposition of H_N.
    Exact,
    /// Strang splitting between kinetic and interaction parts.
    Strang,
}

/// H_2 = K⊗I + I⊗K + ½V₁₂ on the two-particle product basis.
pub fn two_body_hamiltonian(ob: &OneBody, v: &PairPotential) -> (CMatrix, CMatrix) {
    let n = ob.dim();
    let id = CMatrix::identity(n, n);
    let kinetic = kron(&ob.kinetic, &id) + kron(&id, &ob.kinetic);
    let interaction = ob.pair_interaction(v) * re(0.5);
    (hermitize(&kinetic), hermitize(&interaction))
}

/// Swap of the two tensor factors.
pub fn swap_operator(n: usize) -> CMatrix {
    let mut s = CMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            s[(i * n + j, j * n + i)] = re(1.0);
        }
    }
    s
}

pub fn symmetry_defect(rho_n: &CMatrix, n: usize) -> f64 {
    let s = swap_operator(n);
    frobenius(&(&s * rho_n * &s - rho_n))
}

pub fn two_body_tag(n_basis: usize, hbar: f64) -> Result<BasisTag> {
    let one = OscillatorRep::new(n_basis, 1, hbar)?.tag();
    Ok(BasisTag::Tensor(vec![one.clone(), one]))
}

/// Two-body von Neumann flow (N = 2) with the 1/N-scaled pair interaction.
pub fn evolve_nbody(
    rho_n_in: &DensityOperator,
    v: &PairPotential,
    cfg: &EvolutionConfig,
    scheme: NBodyScheme,
) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.n_basis > 16 {
        return Err(Error::Size(format!("two-body flow supports at most 16 levels per particle, got {}", cfg.n_basis)));
    }
    let ob = OneBody::new(cfg.n_basis, cfg.hbar)?;
    let n = ob.dim();
    if rho_n_in.dim() != n * n {
        return Err(Error::dimension(format!("two-body state has dimension {}, expected {}", rho_n_in.dim(), n * n)));
    }
    let defect = symmetry_defect(rho_n_in.matrix(), n);
    if defect > 1e-10 {
        return Err(Error::validation(format!("initial two-body state is not symmetric (defect {defect:.3e})")));
    }
    let (kin, inter) = two_body_hamiltonian(&ob, v);
    let h = &kin + &inter;
    let eh = eigh(&h);
    cfg.check_stability(eh.max().abs().max(eh.min().abs()))?;

    let (hb, dt) = (cfg.hbar, cfg.dt);
    let u = match scheme {
        NBodyScheme::Exact => propagator(&eh, dt, hb),
        NBodyScheme::Strang => {
            let half = propagator(&eigh(&kin), dt / 2.0, hb);
            let full = propagator(&eigh(&inter), dt, hb);
            &half * full * &half
        }
    };
    // ρ = F F*, so each step costs one product with the rank-r factor.
    let factors = low_rank_factors(rho_n_in.matrix());
    let mut f = CMatrix::from_columns(&factors);
    let mut traj = Trajectory::start(rho_n_in);
    for step in 1..=cfg.steps() {
        f = &u * f;
        if step % cfg.record_every == 0 || step == cfg.steps() {
            let rho = hermitize(&(&f * f.adjoint()));
            let tr = trace(&rho).re;
            traj.record(step, cfg, &(rho / re(tr)));
        }
    }
    Ok(traj)
}

/// The n-body marginal of a two-body state: n = 2 returns the state, n = 1
/// traces out the second particle.
pub fn marginal(rho_n: &DensityOperator, n: usize, n_basis: usize) -> Result<CMatrix> {
    let dim = n_basis * n_basis;
    if rho_n.dim() != dim {
        return Err(Error::dimension(format!("two-body state has dimension {}, expected {dim}", rho_n.dim())));
    }
    match n {
        1 => partial_trace(rho_n.matrix(), (n_basis, n_basis), Subsystem::Second),
        2 => Ok(rho_n.matrix().clone()),
        _ => Err(Error::validation(format!("marginal order must be 1 or 2 for N = 2, got {n}"))),
    }
}

#[derive(Clone, Debug)]
pub struct RateRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl RateRow {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Clone, Debug)]
pub struct RateReport {
    pub hbar: f64,
    pub rows: Vec<RateRow>,
    pub mk1_r_sq: f64,
    pub mk1_rp_sq: f64,
}

impl RateReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.lhs <= r.rhs)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,lhs,rhs,slack\n");
        for r in &self.rows {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", r.t, r.lhs, r.rhs, r.slack()));
        }
        out
    }
}

/// (8/N)‖∇V‖_∞(e^{Λt} - 1)/Λ + ħ(MK₁(R',R')² + e^{Λt}MK₁(R,R)²), the
/// right-hand side when the N-body initial data is a tensor power.
pub fn rate_rhs(v: &PairPotential, n_particles: usize, hbar: f64, t: f64, mk1_rp_sq: f64, mk1_r_sq: f64) -> f64 {
    let lam = v.rate();
    let growth = (lam * t).exp();
    8.0 / n_particles as f64 * v.grad_sup * (growth - 1.0) / lam + hbar * (mk1_rp_sq + growth * mk1_r_sq)
}

/// Runs Hartree and two-body dynamics from Op^R[μ] and its tensor square,
/// and compares W2² between the Husimi (reference R') transforms of the
/// Hartree state and the one-body marginal with the closed-form bound.
pub fn convergence_rate_check(
    mu_in: &DiscreteMeasure,
    r: &DensityOperator,
    rp: &DensityOperator,
    v: &PairPotential,
    cfg: &EvolutionConfig,
    t_list: &[f64],
    solver: &SolverConfig,
) -> Result<RateReport> {
    let ob = OneBody::new(cfg.n_basis, cfg.hbar)?;
    let rep = ob.rep;
    let r = r.clone().with_basis(rep.tag())?;
    let rp = rp.clone().with_basis(rep.tag())?;
    let rho_in = toeplitz_quantize(&r, &rep, mu_in)?;
    let rho_n_in = DensityOperator::from_computed(
        &kron(rho_in.matrix(), rho_in.matrix()),
        two_body_tag(cfg.n_basis, cfg.hbar)?,
    )?;
    let t_max = t_list.iter().cloned().fold(0.0, f64::max);
    let record_every = t_list
        .iter()
        .map(|t| (t / cfg.dt).round() as usize)
        .filter(|&k| k > 0)
        .fold(0, gcd)
        .max(1);
    let run = EvolutionConfig {
        t_final: t_max,
        record_every,
        ..*cfg
    };
    let hartree = evolve_hartree(&rho_in, v, &run)?;
    let nbody = evolve_nbody(&rho_n_in, v, &run, NBodyScheme::Exact)?;

    let mk1_r_sq = mk1_sq(&r, &r, &rep, solver)?;
    let mk1_rp_sq = mk1_sq(&rp, &rp, &rep, solver)?;
    let grid = PhaseSpaceGrid::default_for(cfg.hbar, mu_in.max_displacement());

    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let one = hartree.density_at(t)?;
        let marg = DensityOperator::from_computed(&marginal(&nbody.density_at(t)?, 1, cfg.n_basis)?, rep.tag())?;
        let a = field_to_measure(&husimi_trace(&one, &rp, &rep, &grid)?, MAX_ATOMS, 1e-3)?;
        let b = field_to_measure(&husimi_trace(&marg, &rp, &rep, &grid)?, MAX_ATOMS, 1e-3)?;
        let lhs = w2(&a.measure, &b.measure)?.value_sq;
        rows.push(RateRow {
            t,
            lhs,
            rhs: rate_rhs(v, 2, cfg.hbar, t, mk1_rp_sq, mk1_r_sq),
        });
    }
    Ok(RateReport {
        hbar: cfg.hbar,
        rows,
        mk1_r_sq,
        mk1_rp_sq,
    })
}

/// Frobenius distances for the dt-halving oracle: ‖ρ_dt - ρ_{dt/2}‖ and
/// ‖ρ_{dt/2} - ρ_{dt/4}‖ at t_final, and their ratio.
pub fn self_convergence_ratio(finals: [&CMatrix; 3]) -> (f64, f64, f64) {
    let a = frobenius(&(finals[0] - finals[1]));
    let b = frobenius(&(finals[1] - finals[2]));
    (a, b, a / b)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Conservation {
    /// Largest |trace - 1| over stored states.
    pub trace: f64,
    pub hermiticity: f64,
    /// Most negative eigenvalue of the final state, as a positive number.
    pub negativity: f64,
    /// Largest |trace(ρ²) - trace(ρ₀²)|.
    pub purity_drift: f64,
}

pub fn conservation_defects(traj: &Trajectory) -> Conservation {
    let purity = |m: &CMatrix| frobenius(m).powi(2);
    let p0 = purity(&traj.states[0]);
    let mut out = Conservation {
        trace: 0.0,
        hermiticity: 0.0,
        negativity: (-eigh(traj.last()).min()).max(0.0),
        purity_drift: 0.0,
    };
    for s in &traj.states {
        out.trace = out.trace.max((trace(s).re - 1.0).abs());
        out.hermiticity = out.hermiticity.max(hermiticity_defect(s));
        out.purity_drift = out.purity_drift.max((purity(s) - p0).abs());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::{coherent_density, fock_density, PhaseSpacePoint};
    use crate::testkit;

    fn cfg(hbar: f64, dt: f64, t_final: f64) -> EvolutionConfig {
        EvolutionConfig::new(dt, t_final, hbar, 16)
    }

    fn displaced(hbar: f64) -> DensityOperator {
        let rep = OscillatorRep::new(16, 1, hbar).unwrap();
        coherent_density(&rep, &PhaseSpacePoint::d1(0.5, 0.3)).unwrap()
    }

    #[test]
    fn softened_potential_constants() {
        let v = PairPotential::softened();
        assert_eq!(v.rate(), 7.0);
        assert!(v.values.iter().all(|&x| x >= 0.0));
        assert!(PairPotential::new(|y| y, 1.0, 1.0).is_err());
    }

    #[test]
    fn free_motion_preserves_purity() {
        let rep = OscillatorRep::new(16, 1, 1.0).unwrap();
        let g = fock_density(&rep, &[0]).unwrap();
        let traj = evolve_hartree(&g, &PairPotential::zero(), &cfg(1.0, 0.0025, 0.5)).unwrap();
        assert!((frobenius(&traj.states[0]).powi(2) - 1.0).abs() < 1e-12);
        assert!(conservation_defects(&traj).purity_drift < 1e-10);
    }

    #[test]
    fn hartree_conserves_trace_and_energy() {
        let v = PairPotential::softened();
        for hbar in [1.0, 0.5] {
            let rho = displaced(hbar);
            let traj = evolve_hartree(&rho, &v, &cfg(hbar, 0.0025, 0.5)).unwrap();
            let c = conservation_defects(&traj);
            assert!(c.trace < 1e-12 && c.hermiticity < 1e-12 && c.negativity < 1e-12, "{c:?}");
            let ob = OneBody::new(16, hbar).unwrap();
            let e0 = ob.hartree_energy(rho.matrix(), &v);
            let drift = traj
                .states
                .iter()
                .map(|s| (ob.hartree_energy(s, &v) - e0).abs())
                .fold(0.0, f64::max);
            assert!(drift <= 1e-4, "energy drift {drift:.3e} at ħ = {hbar}");
        }
    }

    #[test]
    fn hartree_is_second_order() {
        let v = PairPotential::softened();
        let rho = displaced(0.5);
        let finals: Vec<CMatrix> = [0.004, 0.002, 0.001]
            .iter()
            .map(|&dt| evolve_hartree(&rho, &v, &cfg(0.5, dt, 0.5)).unwrap().last().clone())
            .collect();
        let (a, b, ratio) = self_convergence_ratio([&finals[0], &finals[1], &finals[2]]);
        assert!((3.5..=4.5).contains(&ratio), "{a:.3e} {b:.3e} ratio {ratio}");
    }

    #[test]
    fn unstable_step_is_a_config_error() {
        let rho = displaced(1.0);
        let err = evolve_hartree(&rho, &PairPotential::softened(), &cfg(1.0, 0.1, 0.5)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn product(k: &DensityOperator, hbar: f64) -> DensityOperator {
        DensityOperator::from_computed(&kron(k.matrix(), k.matrix()), two_body_tag(16, hbar).unwrap()).unwrap()
    }

    #[test]
    fn free_two_body_flow_stays_product() {
        let k = displaced(1.0);
        let c = cfg(1.0, 0.0025, 0.25);
        let two = evolve_nbody(&product(&k, 1.0), &PairPotential::zero(), &c, NBodyScheme::Exact).unwrap();
        let one = evolve_hartree(&k, &PairPotential::zero(), &c).unwrap();
        let expected = kron(one.last(), one.last());
        assert!(frobenius(&(two.last() - expected)) <= 1e-8);
    }

    #[test]
    fn two_body_flow_conserves_symmetry_and_purity() {
        let v = PairPotential::softened();
        let k = displaced(0.5);
        let c = EvolutionConfig {
            record_every: 20,
            ..cfg(0.5, 0.0025, 0.5)
        };
        let traj = evolve_nbody(&product(&k, 0.5), &v, &c, NBodyScheme::Exact).unwrap();
        assert_eq!(traj.states.len(), 11);
        let d = conservation_defects(&traj);
        assert!(d.trace < 1e-12 && d.hermiticity < 1e-12 && d.purity_drift < 1e-8, "{d:?}");
        for s in &traj.states {
            assert!(symmetry_defect(s, 16) < 1e-10);
        }
    }

    #[test]
    fn asymmetric_two_body_input_is_rejected() {
        let rep = OscillatorRep::new(16, 1, 1.0).unwrap();
        let a = fock_density(&rep, &[0]).unwrap();
        let b = fock_density(&rep, &[1]).unwrap();
        let rho = DensityOperator::from_computed(&kron(a.matrix(), b.matrix()), two_body_tag(16, 1.0).unwrap()).unwrap();
        let err = evolve_nbody(&rho, &PairPotential::zero(), &cfg(1.0, 0.0025, 0.01), NBodyScheme::Exact).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn split_two_body_flow_is_second_order() {
        let v = PairPotential::softened();
        let rho = product(&displaced(0.5), 0.5);
        let finals: Vec<CMatrix> = [0.004, 0.002, 0.001]
            .iter()
            .map(|&dt| {
                evolve_nbody(&rho, &v, &cfg(0.5, dt, 0.5), NBodyScheme::Strang)
                    .unwrap()
                    .last()
                    .clone()
            })
            .collect();
        let (_, _, ratio) = self_convergence_ratio([&finals[0], &finals[1], &finals[2]]);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn marginals_of_products_and_symmetric_states() {
        let k = displaced(1.0);
        let m = marginal(&product(&k, 1.0), 1, 16).unwrap();
        assert!(frobenius(&(m - k.matrix())) < 1e-12);

        let raw = testkit::random_density(256, 4, 3);
        let s = swap_operator(16);
        let sym = (raw.matrix() + &s * raw.matrix() * &s) * re(0.5);
        let rho = DensityOperator::from_computed(&sym, two_body_tag(16, 1.0).unwrap()).unwrap();
        let first = marginal(&rho, 1, 16).unwrap();
        let second = partial_trace(rho.matrix(), (16, 16), Subsystem::First).unwrap();
        assert!(frobenius(&(&first - second)) < 1e-10);
        assert!((trace(&first).re - 1.0).abs() < 1e-12);
        assert!(marginal(&rho, 3, 16).is_err());
    }

    #[test]
    fn rate_inequality_for_a_displaced_gaussian() {
        let v = PairPotential::softened();
        let rep = OscillatorRep::new(16, 1, 1.0).unwrap();
        let g = fock_density(&rep, &[0]).unwrap();
        let mu = DiscreteMeasure::dirac(PhaseSpacePoint::d1(0.5, 0.0));
        let report = convergence_rate_check(&mu, &g, &g, &v, &cfg(0.5, 0.0025, 0.5), &[0.0, 0.25, 0.5], &SolverConfig::default())
            .unwrap();
        assert!(report.rows[0].lhs.abs() < 1e-12);
        assert!((report.mk1_r_sq - 2.0).abs() < 1e-9);
        let floor = 8.0 * ((3.5f64).exp() - 1.0) / 7.0 / 2.0 + 0.5 * (2.0 + (3.5f64).exp() * 2.0);
        assert!((report.rows[2].rhs - floor).abs() < 1e-9 * floor);
        assert!(report.holds(), "{report:?}");
        assert!(report.to_csv().starts_with("t,lhs,rhs,slack\n"));
    }
}
