//! Upper and lower bounds on MK_λ from phase-space quantities, Schatten
//! distances between coherent states, and the fixed sandwich suite.

use crate::classical_ot::{field_to_measure, w2, MAX_ATOMS};
use crate::error::{Error, Result};
use crate::linalg::{eigh, hermitize, trace_product, CMatrix, CVector, DensityOperator, C64};
use crate::oscillator::{
    fock_density, levels_for_deficit, momentum_operator, phase_space_translation,
    position_operator, OscillatorRep, PhaseSpacePoint,
};
use crate::phase_space::{
    husimi, husimi_trace, toeplitz_quantize, toeplitz_quantize_field, wigner, Atom, DiscreteMeasure,
    PhaseSpaceField, PhaseSpaceGrid,
};
use crate::quantum_ot::{first_moments, solve_mk, SolverConfig};
use crate::special::ln_factorial;
use crate::testkit::{self, quadrature_moment};

/// MK₁(R, R')², solved in the scale-1 representation.
pub fn mk1_sq(r: &DensityOperator, rp: &DensityOperator, rep: &OscillatorRep, cfg: &SolverConfig) -> Result<f64> {
    let rep1 = rep.at_scale(1.0)?;
    let a = r.clone().with_basis(rep1.tag())?;
    let b = rp.clone().with_basis(rep1.tag())?;
    Ok(solve_mk(&a, &b, &rep1, cfg)?.value_sq)
}

#[derive(Clone, Debug)]
pub struct ToeplitzUpper {
    /// W2(μ, μ')².
    pub dist_sq: f64,
    pub mk1_sq: f64,
    /// 2√λ (⟨z⟩_R - ⟨z⟩_R')·(mean μ - mean μ').
    pub cross: f64,
    pub value: f64,
}

/// Upper bound on MK_λ(Op^R[μ], Op^{R'}[μ'])². R and R' are scale-1
/// matrices; the moments of R - R' are taken at scale 1.
pub fn upper_bound_toeplitz(
    r: &DensityOperator,
    rp: &DensityOperator,
    mu: &DiscreteMeasure,
    mup: &DiscreteMeasure,
    rep: &OscillatorRep,
    cfg: &SolverConfig,
) -> Result<ToeplitzUpper> {
    let rep1 = rep.at_scale(1.0)?;
    let m1 = mk1_sq(r, rp, rep, cfg)?;
    let dist_sq = w2(mu, mup)?.value_sq;
    let fr = first_moments(&r.clone().with_basis(rep1.tag())?, &rep1)?;
    let frp = first_moments(&rp.clone().with_basis(rep1.tag())?, &rep1)?;
    let (a, b) = (mu.mean(), mup.mean());
    let sl = rep.lambda.sqrt();
    let mut cross = 0.0;
    for j in 0..rep.d {
        cross += 2.0 * sl * (fr.mean_position[j] - frp.mean_position[j]) * (a.q[j] - b.q[j]);
        cross += 2.0 * sl * (fr.mean_momentum[j] - frp.mean_momentum[j]) * (a.p[j] - b.p[j]);
    }
    Ok(ToeplitzUpper {
        dist_sq,
        mk1_sq: m1,
        cross,
        value: dist_sq + rep.lambda * m1 + cross,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DiscretizeConfig {
    pub max_atoms: usize,
    pub mass_floor: f64,
}

impl Default for DiscretizeConfig {
    fn default() -> Self {
        DiscretizeConfig {
            max_atoms: MAX_ATOMS,
            mass_floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HusimiLower {
    /// W2² between the discretized Husimi fields.
    pub dist_sq: f64,
    pub mk1_sq: f64,
    /// Position and momentum cross terms combined.
    pub cross: f64,
    pub value: f64,
    /// Retained mass of the two discretizations.
    pub retained_mass: (f64, f64),
}

/// Lower bound on MK_λ(K, K')² from the W2 distance between the
/// generalized Husimi transforms W̃^R[K] and W̃^{R'}[K'].
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_husimi(
    k: &DensityOperator,
    kp: &DensityOperator,
    r: &DensityOperator,
    rp: &DensityOperator,
    rep: &OscillatorRep,
    grid: &PhaseSpaceGrid,
    disc: &DiscretizeConfig,
    cfg: &SolverConfig,
) -> Result<HusimiLower> {
    let h = husimi_trace(k, r, rep, grid)?;
    let hp = husimi_trace(kp, rp, rep, grid)?;
    let fm = field_to_measure(&h, disc.max_atoms, disc.mass_floor)?;
    let fmp = field_to_measure(&hp, disc.max_atoms, disc.mass_floor)?;
    let dist_sq = w2(&fm.measure, &fmp.measure)?.value_sq;
    let m1 = mk1_sq(r, rp, rep, cfg)?;

    let rep1 = rep.at_scale(1.0)?;
    let fr = first_moments(&r.clone().with_basis(rep1.tag())?, &rep1)?;
    let frp = first_moments(&rp.clone().with_basis(rep1.tag())?, &rep1)?;
    let sl = rep.lambda.sqrt();
    let mut cross = 0.0;
    for j in 0..rep.d {
        let x = position_operator(rep, j);
        let p = momentum_operator(rep, j);
        let dx = k.expectation(x.matrix()).re - kp.expectation(x.matrix()).re;
        let dp = k.expectation(p.matrix()).re - kp.expectation(p.matrix()).re;
        cross += 2.0 * sl * (fr.mean_position[j] - frp.mean_position[j]) * dx;
        cross += 2.0 * sl * (fr.mean_momentum[j] - frp.mean_momentum[j]) * dp;
    }
    Ok(HusimiLower {
        dist_sq,
        mk1_sq: m1,
        cross,
        value: dist_sq - rep.lambda * m1 + cross,
        retained_mass: (fm.retained_mass, fmp.retained_mass),
    })
}

#[derive(Clone, Debug)]
pub struct PairingCheck {
    /// trace(Op^R[f]* K) for each sample.
    pub operator_side: Vec<C64>,
    /// ∬ f̄ W̃^R[K] for each sample.
    pub field_side: Vec<C64>,
    pub max_deviation: f64,
}

/// Compares trace(Op^R[f]* K) with ∬ f̄ W̃^R[K] for real fields `f`. The
/// operator side quantizes f's grid quadrature; the field side uses the
/// convolution-path Husimi transform on each sample's grid.
pub fn husimi_pairing_check(
    k: &DensityOperator,
    r: &DensityOperator,
    rep: &OscillatorRep,
    samples: &[PhaseSpaceField],
) -> Result<PairingCheck> {
    let mut operator_side = Vec::with_capacity(samples.len());
    let mut field_side = Vec::with_capacity(samples.len());
    let mut max_deviation = 0.0f64;
    for f in samples {
        let op = toeplitz_quantize_field(r, rep, f)?;
        let lhs = trace_product(&op.adjoint(), k.matrix());
        let w = husimi(k, r, rep, &f.grid)?;
        let rhs: f64 = f.values.iter().zip(&w.values).map(|(a, b)| a * b).sum::<f64>() * f.grid.cell_area();
        let rhs = C64::new(rhs, 0.0);
        max_deviation = max_deviation.max((lhs - rhs).norm());
        operator_side.push(lhs);
        field_side.push(rhs);
    }
    Ok(PairingCheck {
        operator_side,
        field_side,
        max_deviation,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct FieldMoments {
    pub mass: f64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub var_q: f64,
    pub var_p: f64,
}

pub fn field_moments(f: &PhaseSpaceField) -> FieldMoments {
    let mass = quadrature_moment(f, (0, 0));
    let mean_q = quadrature_moment(f, (1, 0)) / mass;
    let mean_p = quadrature_moment(f, (0, 1)) / mass;
    FieldMoments {
        mass,
        mean_q,
        mean_p,
        var_q: quadrature_moment(f, (2, 0)) / mass - mean_q * mean_q,
        var_p: quadrature_moment(f, (0, 2)) / mass - mean_p * mean_p,
    }
}

/// ∬∬ (|q-q'|² + |p-p'|²) W[ρ](q,p) W[ρ'](q',p') by moment decomposition.
pub fn wigner_product_upper_bound(
    rho: &DensityOperator,
    rhop: &DensityOperator,
    rep: &OscillatorRep,
    grid: &PhaseSpaceGrid,
) -> Result<f64> {
    let a = field_moments(&wigner(rho, rep, grid)?);
    let b = field_moments(&wigner(rhop, rep, grid)?);
    Ok(a.var_q + b.var_q + (a.mean_q - b.mean_q).powi(2) + a.var_p + b.var_p + (a.mean_p - b.mean_p).powi(2))
}

/// Schatten p-norm of R1 - R2 (p = ∞ gives the largest singular value).
pub fn schatten_distance(r1: &DensityOperator, r2: &DensityOperator, p: f64) -> Result<f64> {
    if r1.dim() != r2.dim() {
        return Err(Error::dimension(format!("{} vs {}", r1.dim(), r2.dim())));
    }
    schatten_norm_hermitian(&(r1.matrix() - r2.matrix()), p)
}

fn schatten_norm_hermitian(m: &CMatrix, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::validation(format!("Schatten exponent must be in [1, ∞], got {p}")));
    }
    let sv: Vec<f64> = eigh(&hermitize(m)).eigenvalues.iter().map(|w| w.abs()).collect();
    if p.is_infinite() {
        return Ok(sv.iter().cloned().fold(0.0, f64::max));
    }
    Ok(sv.iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p))
}

/// 2^{1/p} √(1 - e^{-(|Δq|² + |Δp|²)/2ħ}).
pub fn coherent_schatten_formula(q1: f64, p1: f64, q2: f64, p2: f64, hbar: f64, p: f64) -> f64 {
    let overlap_sq = (-((q1 - q2).powi(2) + (p1 - p2).powi(2)) / (2.0 * hbar)).exp();
    let factor = if p.is_infinite() { 1.0 } else { 2f64.powf(1.0 / p) };
    factor * (1.0 - overlap_sq).max(0.0).sqrt()
}

/// Fock coefficients e^{-|α|²/2} α^k/√k! for k < n.
fn coherent_coefficients(alpha: C64, n: usize) -> CVector {
    let x = alpha.norm_sqr();
    let (r, theta) = (alpha.norm(), alpha.arg());
    CVector::from_iterator(
        n,
        (0..n).map(|k| {
            if r == 0.0 {
                return C64::new(if k == 0 { 1.0 } else { 0.0 }, 0.0);
            }
            let mag = (-0.5 * x + k as f64 * r.ln() - 0.5 * ln_factorial(k)).exp();
            C64::from_polar(mag, k as f64 * theta)
        }),
    )
}

/// Schatten norm of |u⟩⟨u| - |v⟩⟨v| for unit vectors, computed on span{u, v}.
fn pure_difference_norm(u: &CVector, v: &CVector, p: f64) -> Result<f64> {
    let s = u.dotc(v);
    let w = v - u * s;
    let t = w.norm();
    // v = s u + t ŵ in the orthonormal pair (u, ŵ).
    let m = CMatrix::from_row_slice(
        2,
        2,
        &[
            C64::new(1.0 - s.norm_sqr(), 0.0),
            -s * t,
            -s.conj() * t,
            C64::new(-t * t, 0.0),
        ],
    );
    schatten_norm_hermitian(&m, p)
}

#[derive(Clone, Debug)]
pub struct ContrastRow {
    pub delta: f64,
    pub hbar: f64,
    /// ‖R₁ - R₂‖₂ for coherent states at ±Δ/2 along q, computed spectrally.
    pub schatten2: f64,
    /// √(Δ² + 2ħ).
    pub mk: f64,
}

/// Schatten-2 distance and MK_ħ between coherent states separated by Δ
/// along q, for every (Δ, ħ) pair.
pub fn semiclassical_contrast_report(displacements: &[f64], hbar_list: &[f64]) -> Result<Vec<ContrastRow>> {
    let mut rows = Vec::new();
    for &delta in displacements {
        for &hbar in hbar_list {
            if !(hbar > 0.0) {
                return Err(Error::validation(format!("ħ must be positive, got {hbar}")));
            }
            let alpha = C64::new(0.5 * delta / (2.0 * hbar).sqrt(), 0.0);
            let n = levels_for_deficit(alpha.norm_sqr(), 1e-15);
            let u = coherent_coefficients(-alpha, n);
            let v = coherent_coefficients(alpha, n);
            let u = &u / C64::new(u.norm(), 0.0);
            let v = &v / C64::new(v.norm(), 0.0);
            rows.push(ContrastRow {
                delta,
                hbar,
                schatten2: pure_difference_norm(&u, &v, 2.0)?,
                mk: (delta * delta + 2.0 * hbar).sqrt(),
            });
        }
    }
    Ok(rows)
}

pub fn contrast_csv(rows: &[ContrastRow]) -> String {
    let mut out = String::from("delta,hbar,schatten2,mk\n");
    for r in rows {
        out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", r.delta, r.hbar, r.schatten2, r.mk));
    }
    out
}

/// One pair of states for the sandwich suite. When `toeplitz` is set, K
/// and K' are Op^R[μ] and Op^{R'}[μ'] for the stored measures.
#[derive(Clone, Debug)]
pub struct SandwichCase {
    pub name: String,
    pub rep: OscillatorRep,
    pub k: DensityOperator,
    pub kp: DensityOperator,
    pub r: DensityOperator,
    pub rp: DensityOperator,
    pub toeplitz: Option<(DiscreteMeasure, DiscreteMeasure)>,
}

impl SandwichCase {
    fn quantized(
        name: &str,
        rep: OscillatorRep,
        r: DensityOperator,
        rp: DensityOperator,
        mu: DiscreteMeasure,
        mup: DiscreteMeasure,
    ) -> Result<Self> {
        Ok(SandwichCase {
            name: name.to_string(),
            k: toeplitz_quantize(&r, &rep, &mu)?,
            kp: toeplitz_quantize(&rp, &rep, &mup)?,
            rep,
            r,
            rp,
            toeplitz: Some((mu, mup)),
        })
    }

    /// Applies the same phase-space translation to both states (and to the
    /// measures).
    pub fn translated(&self, z: &PhaseSpacePoint) -> Result<Self> {
        let t = phase_space_translation(&self.rep, z)?;
        let shift = |m: &DensityOperator| DensityOperator::from_computed(&(&t * m.matrix() * t.adjoint()), self.rep.tag());
        let shift_measure = |mu: &DiscreteMeasure| DiscreteMeasure {
            atoms: mu
                .atoms
                .iter()
                .map(|a| Atom {
                    weight: a.weight,
                    point: PhaseSpacePoint::d1(a.point.q[0] + z.q[0], a.point.p[0] + z.p[0]),
                })
                .collect(),
        };
        Ok(SandwichCase {
            name: self.name.clone(),
            rep: self.rep,
            k: shift(&self.k)?,
            kp: shift(&self.kp)?,
            r: self.r.clone(),
            rp: self.rp.clone(),
            toeplitz: self.toeplitz.as_ref().map(|(a, b)| (shift_measure(a), shift_measure(b))),
        })
    }

    fn max_displacement(&self) -> f64 {
        match &self.toeplitz {
            Some((a, b)) => a.max_displacement().max(b.max_displacement()),
            None => 1.0,
        }
    }
}

fn pt(q: f64, p: f64) -> PhaseSpacePoint {
    PhaseSpacePoint::d1(q, p)
}

fn two_atoms(a: (f64, f64), b: (f64, f64)) -> Result<DiscreteMeasure> {
    DiscreteMeasure::weighted(vec![(0.5, pt(a.0, a.1)), (0.5, pt(b.0, b.1))])
}

fn diagonal_density(rep: &OscillatorRep, diag: &[f64]) -> Result<DensityOperator> {
    let n = rep.dim();
    let m = CMatrix::from_fn(n, n, |i, j| {
        C64::new(if i == j && i < diag.len() { diag[i] } else { 0.0 }, 0.0)
    });
    DensityOperator::normalized(m, rep.tag())
}

/// Seeded weights in [0.2, 1) for a diagonal (parity-symmetric) density.
fn random_weights(seed: u64, n: usize) -> Vec<f64> {
    use rand::Rng;
    let mut g = testkit::rng(seed, 3);
    (0..n).map(|_| g.gen_range(0.2..1.0)).collect()
}

/// The fixed ten-case suite: coherent pairs, Fock states, Töplitz
/// mixtures and seeded random low-level states.
pub fn sandwich_cases() -> Result<Vec<SandwichCase>> {
    let rep = OscillatorRep::new(24, 1, 1.0)?;
    let ground = fock_density(&rep, &[0])?;
    let fock1 = fock_density(&rep, &[1])?;
    let fock2 = fock_density(&rep, &[2])?;
    let origin = DiscreteMeasure::dirac(pt(0.0, 0.0));
    let mut cases = vec![
        SandwichCase::quantized(
            "coherent-shift-q",
            rep,
            ground.clone(),
            ground.clone(),
            origin.clone(),
            DiscreteMeasure::dirac(pt(1.0, 0.0)),
        )?,
        SandwichCase::quantized(
            "coherent-shift-p",
            rep,
            ground.clone(),
            ground.clone(),
            origin.clone(),
            DiscreteMeasure::dirac(pt(0.0, 1.5)),
        )?,
        SandwichCase::quantized(
            "ground-vs-fock1",
            rep,
            ground.clone(),
            fock1.clone(),
            origin.clone(),
            origin.clone(),
        )?,
        SandwichCase::quantized(
            "fock1-vs-fock2",
            rep,
            fock1.clone(),
            fock2.clone(),
            origin.clone(),
            origin.clone(),
        )?,
        SandwichCase::quantized(
            "toeplitz-two-atom",
            rep,
            ground.clone(),
            ground.clone(),
            two_atoms((-0.5, 0.0), (0.5, 0.0))?,
            two_atoms((0.0, -0.5), (0.0, 0.5))?,
        )?,
        SandwichCase::quantized(
            "parity-symmetric",
            rep,
            diagonal_density(&rep, &random_weights(21, 2))?,
            diagonal_density(&rep, &random_weights(22, 2))?,
            two_atoms((-0.4, 0.2), (0.3, 0.0))?,
            two_atoms((0.0, -0.3), (0.6, 0.4))?,
        )?,
        SandwichCase::quantized(
            "coherent-vs-fock1",
            rep,
            ground.clone(),
            fock1.clone(),
            DiscreteMeasure::dirac(pt(0.8, 0.4)),
            origin.clone(),
        )?,
    ];

    let half = OscillatorRep::new(24, 1, 0.5)?;
    let g_half = fock_density(&half, &[0])?;
    cases.push(SandwichCase::quantized(
        "coherent-lambda-half",
        half,
        g_half.clone(),
        g_half,
        DiscreteMeasure::dirac(pt(0.0, 0.0)),
        DiscreteMeasure::dirac(pt(1.0, 0.5)),
    )?);

    for (name, seed) in [("random-low-a", 11u64), ("random-low-b", 12)] {
        let mut g = testkit::rng(seed, 7);
        let mut mix = CMatrix::zeros(rep.dim(), rep.dim());
        let mut mixp = CMatrix::zeros(rep.dim(), rep.dim());
        for w in [0.7, 0.3] {
            let u = testkit::random_low_state(&mut g, rep.dim(), 4);
            let v = testkit::random_low_state(&mut g, rep.dim(), 4);
            mix += &u * u.adjoint() * C64::new(w, 0.0);
            mixp += &v * v.adjoint() * C64::new(w, 0.0);
        }
        cases.push(SandwichCase {
            name: name.to_string(),
            rep,
            k: DensityOperator::normalized(hermitize(&mix), rep.tag())?,
            kp: DensityOperator::normalized(hermitize(&mixp), rep.tag())?,
            r: ground.clone(),
            rp: ground.clone(),
            toeplitz: None,
        });
    }
    Ok(cases)
}

/// Relative slack allowed on each side of the sandwich.
pub const SANDWICH_SLACK: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct SandwichRow {
    pub case: String,
    pub lower: f64,
    /// Feasible coupling value and its certified gap.
    pub mk: f64,
    pub mk_gap: f64,
    pub upper_toeplitz: Option<f64>,
    pub upper_wigner: f64,
    /// Retained mass of the Husimi discretizations.
    pub retained_mass: (f64, f64),
}

impl SandwichRow {
    /// Empty when every inequality holds within `SANDWICH_SLACK`.
    pub fn slack_flags(&self) -> Vec<&'static str> {
        let tol = SANDWICH_SLACK * self.mk.abs().max(1.0);
        let mut flags = Vec::new();
        if self.lower > self.mk + tol {
            flags.push("lower");
        }
        if let Some(u) = self.upper_toeplitz {
            if self.mk > u + tol {
                flags.push("toeplitz");
            }
        }
        if self.mk > self.upper_wigner + tol {
            flags.push("wigner");
        }
        flags
    }

    pub fn holds(&self) -> bool {
        self.slack_flags().is_empty()
    }
}

/// Largest relative certified gap at which an unconverged solve still
/// supplies the sandwich's middle value.
pub const SANDWICH_GAP: f64 = 1e-3;

/// Best feasible value and certified gap. A solve that hits the iteration
/// limit is accepted when its gap is within `SANDWICH_GAP`.
fn certified_value(k: &DensityOperator, kp: &DensityOperator, rep: &OscillatorRep, cfg: &SolverConfig) -> Result<(f64, f64)> {
    match solve_mk(k, kp, rep, cfg) {
        Ok(res) => Ok((res.value_sq, res.objective_gap)),
        Err(Error::NonConvergence { gap, history, .. })
            if history.last().is_some_and(|&v| gap <= SANDWICH_GAP * v.abs().max(1.0)) =>
        {
            Ok((*history.last().unwrap(), gap))
        }
        Err(e) => Err(e),
    }
}

pub fn sandwich_row(case: &SandwichCase, cfg: &SolverConfig) -> Result<SandwichRow> {
    let rep = &case.rep;
    let grid = PhaseSpaceGrid::default_for(rep.lambda, case.max_displacement());
    let (mk, mk_gap) = certified_value(&case.k, &case.kp, rep, cfg)?;
    let lower = lower_bound_husimi(
        &case.k,
        &case.kp,
        &case.r,
        &case.rp,
        rep,
        &grid,
        &DiscretizeConfig::default(),
        cfg,
    )?;
    let upper_toeplitz = match &case.toeplitz {
        Some((mu, mup)) => Some(upper_bound_toeplitz(&case.r, &case.rp, mu, mup, rep, cfg)?.value),
        None => None,
    };
    let upper_wigner = wigner_product_upper_bound(&case.k, &case.kp, rep, &grid)?;
    Ok(SandwichRow {
        case: case.name.clone(),
        lower: lower.value,
        mk,
        mk_gap,
        upper_toeplitz,
        upper_wigner,
        retained_mass: lower.retained_mass,
    })
}

pub fn sandwich_csv(rows: &[SandwichRow]) -> String {
    let mut out = String::from("case,lower,mk,upper_toeplitz,upper_wigner,slack_flags\n");
    for r in rows {
        let flags = r.slack_flags();
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{},{:.16e},{}\n",
            r.case,
            r.lower,
            r.mk,
            r.upper_toeplitz.map(|u| format!("{u:.16e}")).unwrap_or_default(),
            r.upper_wigner,
            if flags.is_empty() { "ok".to_string() } else { flags.join("|") }
        ));
    }
    out
}
