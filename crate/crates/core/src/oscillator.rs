//! Truncated λ-scaled Fock representation: ladder, position and momentum
//! operators, phase-space translations, coherent states and the quadratic
//! cost operator on the doubled space.
//!
//! Mode index convention: a basis state |n_0, ..., n_{d-1}⟩ sits at
//! Σ_j n_j·N^{d-1-j}, so mode 0 is the most significant factor.

use crate::error::{Error, Result};
use crate::linalg::{
    c, eigh, expm_i, kron, polar_unitary, re, BasisTag, CMatrix, CVector, DensityOperator,
    HermitianMatrix, C64,
};
use crate::special::{laguerre, ln_factorial, poisson_tail};

/// Hard limit on the norm a coherent state may lose to truncation.
pub const MAX_TRUNCATION_DEFICIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscillatorRep {
    pub n_basis: usize,
    pub d: usize,
    pub lambda: f64,
}

impl OscillatorRep {
    pub fn new(n_basis: usize, d: usize, lambda: f64) -> Result<Self> {
        if n_basis < 2 {
            return Err(Error::validation(format!("n_basis must be at least 2, got {n_basis}")));
        }
        if !(d == 1 || d == 2) {
            return Err(Error::validation(format!("spatial dimension must be 1 or 2, got {d}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::validation(format!("lambda must be positive, got {lambda}")));
        }
        if d == 2 && n_basis > 12 {
            return Err(Error::Size(format!(
                "d = 2 supports at most 12 levels per mode, got {n_basis}"
            )));
        }
        Ok(OscillatorRep { n_basis, d, lambda })
    }

    pub fn dim(&self) -> usize {
        self.n_basis.pow(self.d as u32)
    }

    pub fn tag(&self) -> BasisTag {
        BasisTag::Oscillator {
            n_basis: self.n_basis,
            d: self.d,
            lambda: self.lambda,
        }
    }

    pub fn at_scale(&self, lambda: f64) -> Result<Self> {
        OscillatorRep::new(self.n_basis, self.d, lambda)
    }

    pub fn with_basis(&self, n_basis: usize) -> Result<Self> {
        OscillatorRep::new(n_basis, self.d, self.lambda)
    }

    fn check_mode(&self, j: usize) {
        assert!(j < self.d, "mode {j} out of range for d = {}", self.d);
    }

    /// Lifts a single-mode operator to mode `j`.
    pub fn embed(&self, op: &CMatrix, j: usize) -> CMatrix {
        self.check_mode(j);
        let n = self.n_basis;
        let mut out = CMatrix::identity(1, 1);
        for k in 0..self.d {
            out = if k == j {
                kron(&out, op)
            } else {
                kron(&out, &CMatrix::identity(n, n))
            };
        }
        out
    }

    /// Checks that `density` is written in this representation's dimension.
    pub fn check_density(&self, density: &DensityOperator) -> Result<()> {
        if density.dim() != self.dim() {
            return Err(Error::dimension(format!(
                "density has dimension {}, representation has {}",
                density.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpacePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseSpacePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::dimension(format!(
                "position has {} components, momentum {}",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(&p).any(|v| !v.is_finite()) {
            return Err(Error::validation("phase-space point has non-finite entries"));
        }
        Ok(PhaseSpacePoint { q, p })
    }

    pub fn d1(q: f64, p: f64) -> Self {
        PhaseSpacePoint { q: vec![q], p: vec![p] }
    }

    pub fn origin(d: usize) -> Self {
        PhaseSpacePoint {
            q: vec![0.0; d],
            p: vec![0.0; d],
        }
    }

    pub fn d(&self) -> usize {
        self.q.len()
    }

    pub fn scaled_momentum(&self, factor: f64) -> Self {
        PhaseSpacePoint {
            q: self.q.clone(),
            p: self.p.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn distance_sq(&self, other: &PhaseSpacePoint) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub fn annihilation_1(n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |i, j| if j == i + 1 { re((j as f64).sqrt()) } else { C64::new(0.0, 0.0) })
}

pub fn annihilation(rep: &OscillatorRep, j: usize) -> CMatrix {
    rep.embed(&annihilation_1(rep.n_basis), j)
}

pub fn number_operator(rep: &OscillatorRep, j: usize) -> CMatrix {
    let n = rep.n_basis;
    let op = CMatrix::from_fn(n, n, |a, b| if a == b { re(a as f64) } else { C64::new(0.0, 0.0) });
    rep.embed(&op, j)
}

/// X_j = √(λ/2)(a_j + a_j†).
pub fn position_operator(rep: &OscillatorRep, j: usize) -> HermitianMatrix {
    let a = annihilation(rep, j);
    HermitianMatrix::from_hermitized(&((&a + a.adjoint()) * re((rep.lambda / 2.0).sqrt())))
}

/// P_j = -iλ∂_j = -i√(λ/2)(a_j - a_j†).
pub fn momentum_operator(rep: &OscillatorRep, j: usize) -> HermitianMatrix {
    let a = annihilation(rep, j);
    HermitianMatrix::from_hermitized(&((&a - a.adjoint()) * c(0.0, -(rep.lambda / 2.0).sqrt())))
}

pub fn fock_state(rep: &OscillatorRep, levels: &[usize]) -> Result<CVector> {
    if levels.len() != rep.d || levels.iter().any(|&n| n >= rep.n_basis) {
        return Err(Error::validation(format!(
            "Fock levels {levels:?} do not fit a {}-mode basis with {} levels",
            rep.d, rep.n_basis
        )));
    }
    let idx = levels.iter().fold(0, |acc, &n| acc * rep.n_basis + n);
    let mut v = CVector::zeros(rep.dim());
    v[idx] = re(1.0);
    Ok(v)
}

pub fn ground_state(rep: &OscillatorRep) -> CVector {
    fock_state(rep, &vec![0; rep.d]).expect("vacuum always fits")
}

/// Coherent amplitudes α_j of the literal translation T_{q,p} at scale λ.
pub fn weyl_alphas(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Vec<C64> {
    let l = rep.lambda;
    point
        .q
        .iter()
        .zip(&point.p)
        .map(|(&q, &p)| c(q / (2.0 * l).sqrt(), p * (l / 2.0).sqrt()))
        .collect()
}

/// Coherent amplitudes for a point with physical momentum p, that is for
/// T_{q,p/λ}: α_j = (q_j + i p_j)/√(2λ).
pub fn phase_space_alphas(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Vec<C64> {
    let s = (2.0 * rep.lambda).sqrt();
    point.q.iter().zip(&point.p).map(|(&q, &p)| c(q / s, p / s)).collect()
}

/// Norm lost to truncation by the vacuum displaced by the given amplitudes.
pub fn coherent_deficit(n_basis: usize, alphas: &[C64]) -> f64 {
    let kept: f64 = alphas
        .iter()
        .map(|a| 1.0 - poisson_tail(a.norm_sqr(), n_basis))
        .product();
    (1.0 - kept).max(0.0)
}

/// Tolerance for unitarity and composition checks at a given deficit.
pub fn trunc_tol(deficit: f64) -> f64 {
    (10.0 * deficit).max(1e-10)
}

fn check_budget(rep: &OscillatorRep, alphas: &[C64], what: &str) -> Result<f64> {
    let deficit = coherent_deficit(rep.n_basis, alphas);
    if deficit > MAX_TRUNCATION_DEFICIT {
        return Err(Error::Truncation {
            what: what.to_string(),
            deficit,
            limit: MAX_TRUNCATION_DEFICIT,
        });
    }
    Ok(deficit)
}

fn check_point(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Result<()> {
    if point.d() != rep.d {
        return Err(Error::dimension(format!(
            "point has {} components, representation has d = {}",
            point.d(),
            rep.d
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct WeylOptions {
    pub reunitarize: bool,
}

impl Default for WeylOptions {
    fn default() -> Self {
        WeylOptions { reunitarize: true }
    }
}

/// exp(i(p·x - q·(-i∇))) written in the λ-scaled basis, where x = X and
/// -i∇ = P/λ.
pub fn weyl_translate(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Result<CMatrix> {
    weyl_translate_with(rep, point, WeylOptions::default())
}

pub fn weyl_translate_with(
    rep: &OscillatorRep,
    point: &PhaseSpacePoint,
    opts: WeylOptions,
) -> Result<CMatrix> {
    check_point(rep, point)?;
    check_budget(rep, &weyl_alphas(rep, point), "translation")?;
    Ok(translation_matrix(rep, point, 1.0, opts))
}

fn translation_matrix(
    rep: &OscillatorRep,
    point: &PhaseSpacePoint,
    momentum_factor: f64,
    opts: WeylOptions,
) -> CMatrix {
    let dim = rep.dim();
    let mut g = CMatrix::zeros(dim, dim);
    for j in 0..rep.d {
        let p = point.p[j] * momentum_factor;
        let q = point.q[j];
        if p != 0.0 {
            g += position_operator(rep, j).matrix() * re(p);
        }
        if q != 0.0 {
            g -= momentum_operator(rep, j).matrix() * re(q / rep.lambda);
        }
    }
    if g.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return CMatrix::identity(dim, dim);
    }
    let u = expm_i(&g, 1.0);
    if opts.reunitarize {
        polar_unitary(&u)
    } else {
        u
    }
}

/// T_{q,p/λ}: the translation that moves a state at scale λ to the
/// phase-space point (q, p) with p the physical momentum.
pub fn phase_space_translation(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Result<CMatrix> {
    check_point(rep, point)?;
    check_budget(rep, &phase_space_alphas(rep, point), "translation")?;
    Ok(translation_matrix(rep, point, 1.0 / rep.lambda, WeylOptions::default()))
}

/// Coherent state centered at (q, p), with p the physical momentum:
/// T_{q,p/λ} applied to the scale-λ vacuum. At λ = 1 this is T_{q,p}a.
pub fn coherent_state(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Result<CVector> {
    let t = phase_space_translation(rep, point)?;
    Ok(t * ground_state(rep))
}

pub fn coherent_density(rep: &OscillatorRep, point: &PhaseSpacePoint) -> Result<DensityOperator> {
    DensityOperator::pure(&coherent_state(rep, point)?, rep.tag())
}

pub fn fock_density(rep: &OscillatorRep, levels: &[usize]) -> Result<DensityOperator> {
    DensityOperator::pure(&fock_state(rep, levels)?, rep.tag())
}

/// R^λ_{q,p} = T_{q,p/λ} S_λ R S_λ* T_{q,p/λ}*. `r` holds the scale-1
/// matrix; dilation is a change of basis tag, so only the translation acts.
pub fn translated_scaled_density(
    rep: &OscillatorRep,
    r: &DensityOperator,
    point: &PhaseSpacePoint,
) -> Result<DensityOperator> {
    rep.check_density(r)?;
    let t = phase_space_translation(rep, point)?;
    DensityOperator::from_computed(&(&t * r.matrix() * t.adjoint()), rep.tag())
}

/// Compression of the exact displacement operator D(α) onto the first
/// `n` Fock levels, from the Laguerre closed form. Unlike the exponential
/// of the truncated generator, each entry is exact for any α.
pub fn displacement_exact_1(n: usize, alpha: C64) -> CMatrix {
    let x = alpha.norm_sqr();
    if x == 0.0 {
        return CMatrix::identity(n, n);
    }
    let r = alpha.norm();
    let theta = alpha.arg();
    let ln_r = r.ln();
    let lnf: Vec<f64> = (0..n).map(ln_factorial).collect();
    let mut out = CMatrix::zeros(n, n);
    for k in 0..n {
        // L_j^{(k)}(x) for j = 0..n-k-1 covers both triangles at offset k.
        let lag = laguerre(n - k, k as f64, x);
        for j in 0..n - k {
            let (lo, hi) = (j, j + k);
            let mag = (0.5 * (lnf[lo] - lnf[hi]) + k as f64 * ln_r - 0.5 * x).exp() * lag[j];
            // ⟨hi|D|lo⟩ = √(lo!/hi!) α^k e^{-x/2} L_lo^{(k)}(x)
            out[(hi, lo)] = C64::from_polar(mag, k as f64 * theta);
            if k > 0 {
                // ⟨lo|D|hi⟩ uses (-α*)^k.
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                out[(lo, hi)] = C64::from_polar(sign * mag, -(k as f64) * theta);
            }
        }
    }
    out
}

/// Exact compressed displacement for a point with physical momentum, i.e.
/// the compression of T_{q,p/λ}.
pub fn displacement_exact(rep: &OscillatorRep, point: &PhaseSpacePoint) -> CMatrix {
    let alphas = phase_space_alphas(rep, point);
    let mut out = CMatrix::identity(1, 1);
    for a in alphas {
        out = kron(&out, &displacement_exact_1(rep.n_basis, a));
    }
    out
}

#[derive(Clone, Debug)]
pub struct CostOperator {
    pub lambda: f64,
    pub rep: OscillatorRep,
    pub matrix: HermitianMatrix,
}

impl CostOperator {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }
}

/// C_λ = Σ_j (X_j⊗I - I⊗X_j)² + (P_j⊗I - I⊗P_j)², compressed exactly onto
/// the truncated doubled space. Written in normal order,
/// C_λ = λ Σ_j [2(n_j⊗I + I⊗n_j) + 2 - 2(a_j†⊗a_j + a_j⊗a_j†)],
/// which involves no product that leaves the truncated space.
pub fn cost_operator(rep_a: &OscillatorRep, rep_b: &OscillatorRep) -> Result<CostOperator> {
    if rep_a != rep_b {
        return Err(Error::validation(format!(
            "cost operator needs matching representations, got {rep_a:?} and {rep_b:?}"
        )));
    }
    let rep = *rep_a;
    let dim = rep.dim();
    let id = CMatrix::identity(dim, dim);
    let mut m = CMatrix::identity(dim * dim, dim * dim) * re(2.0 * rep.d as f64);
    for j in 0..rep.d {
        let a = annihilation(&rep, j);
        let n = number_operator(&rep, j);
        m += (kron(&n, &id) + kron(&id, &n)) * re(2.0);
        m -= (kron(&a.adjoint(), &a) + kron(&a, &a.adjoint())) * re(2.0);
    }
    m *= re(rep.lambda);
    Ok(CostOperator {
        lambda: rep.lambda,
        rep,
        matrix: HermitianMatrix::from_hermitized(&m),
    })
}

/// The literal sum of squares of truncated X and P matrices. Differs from
/// `cost_operator` only on states touching the top Fock level.
pub fn cost_operator_sum_of_squares(rep: &OscillatorRep) -> CMatrix {
    let dim = rep.dim();
    let id = CMatrix::identity(dim, dim);
    let mut m = CMatrix::zeros(dim * dim, dim * dim);
    for j in 0..rep.d {
        for op in [position_operator(rep, j), momentum_operator(rep, j)] {
            let diff = kron(op.matrix(), &id) - kron(&id, op.matrix());
            m += &diff * &diff;
        }
    }
    m
}

/// Smallest eigenvalue of a Hermitian matrix, used for cost floors.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh(m).min()
}

/// Number of Fock levels needed so that a coherent state with |α|² = `mean`
/// loses less than `deficit` of its norm.
pub fn levels_for_deficit(mean: f64, deficit: f64) -> usize {
    let mut n = 4;
    while poisson_tail(mean, n) >= deficit {
        n += 1;
    }
    n
}
