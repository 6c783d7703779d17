//! Dense complex linear algebra shared by every other module.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub mod tol {
    /// Per-entry absolute Hermiticity tolerance.
    pub const HERMITIAN: f64 = 1e-12;
    pub const PSD_SLACK: f64 = 1e-10;
    pub const TRACE_SLACK: f64 = 1e-10;
}

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// (M + M†)/2.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * re(0.5)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().sum()
}

/// trace(A·B) without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let defect = hermiticity_defect(&m);
        if defect > tol::HERMITIAN {
            return Err(Error::validation(format!(
                "matrix is not Hermitian (entry defect {defect:.3e})"
            )));
        }
        Ok(HermitianMatrix(hermitize(&m)))
    }

    /// Symmetrizes `m` instead of validating it. For matrices that are
    /// Hermitian by construction up to rounding.
    pub fn from_hermitized(m: &CMatrix) -> Self {
        HermitianMatrix(hermitize(m))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        HermitianMatrix(CMatrix::from_fn(n, n, |i, j| {
            if i == j {
                re(d[i])
            } else {
                C64::new(0.0, 0.0)
            }
        }))
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix(CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: CMatrix,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        self.reconstruct_with(|w| w)
    }

    /// V·diag(f(w))·V†.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (k, &w) in self.eigenvalues.iter().enumerate() {
            let s = f(w);
            scaled.column_mut(k).scale_mut(s);
        }
        scaled * v.adjoint()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

pub fn eig_hermitian(a: &HermitianMatrix) -> EigenDecomposition {
    eigh(a.matrix())
}

/// Eigendecomposition of a matrix assumed Hermitian up to rounding.
/// Only the Hermitian part is decomposed.
pub fn eigh(a: &CMatrix) -> EigenDecomposition {
    let n = a.nrows();
    let eig = hermitize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Frobenius-nearest PSD matrix (negative eigenvalues clipped to zero).
pub fn project_psd(a: &HermitianMatrix) -> HermitianMatrix {
    HermitianMatrix::from_hermitized(&project_psd_raw(a.matrix()))
}

pub(crate) fn project_psd_raw(a: &CMatrix) -> CMatrix {
    let e = eigh(a);
    if e.min() >= 0.0 {
        return hermitize(a);
    }
    hermitize(&e.reconstruct_with(|w| w.max(0.0)))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

/// Which tensor factor a partial trace removes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsystem {
    First,
    Second,
}

/// Partial trace of `q` on C^{dim_a} ⊗ C^{dim_b} over the named factor.
pub fn partial_trace(q: &CMatrix, dims: (usize, usize), which: Subsystem) -> Result<CMatrix> {
    let (da, db) = dims;
    if q.nrows() != da * db || q.ncols() != da * db {
        return Err(Error::dimension(format!(
            "partial trace of a {}x{} matrix with declared split {da}x{db}",
            q.nrows(),
            q.ncols()
        )));
    }
    Ok(match which {
        Subsystem::Second => CMatrix::from_fn(da, da, |i, j| {
            (0..db).map(|k| q[(i * db + k, j * db + k)]).sum()
        }),
        Subsystem::First => CMatrix::from_fn(db, db, |i, j| {
            (0..da).map(|k| q[(k * db + i, k * db + j)]).sum()
        }),
    })
}

/// exp(i·t·G) for Hermitian G.
pub fn expm_hermitian_generator(g: &HermitianMatrix, t: f64) -> CMatrix {
    expm_i(g.matrix(), t)
}

pub(crate) fn expm_i(g: &CMatrix, t: f64) -> CMatrix {
    let e = eigh(g);
    let v = &e.eigenvectors;
    let mut scaled = v.clone();
    for (k, &w) in e.eigenvalues.iter().enumerate() {
        let phase = C64::from_polar(1.0, t * w);
        for r in 0..scaled.nrows() {
            scaled[(r, k)] *= phase;
        }
    }
    scaled * v.adjoint()
}

/// Nearest unitary in Frobenius norm (polar factor).
pub fn polar_unitary(m: &CMatrix) -> CMatrix {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u requested");
    let v_t = svd.v_t.expect("svd v_t requested");
    u * v_t
}

pub fn unitarity_defect(u: &CMatrix) -> f64 {
    let n = u.nrows();
    frobenius(&(u * u.adjoint() - CMatrix::identity(n, n)))
}

/// Principal square root of a PSD matrix, with eigenvalues below zero clipped.
pub fn psd_sqrt(a: &CMatrix) -> CMatrix {
    eigh(a).reconstruct_with(|w| w.max(0.0).sqrt())
}

/// Which representation a density's matrix is written in.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisTag {
    /// λ-scaled Fock basis with `n_basis` levels per mode and `d` modes.
    Oscillator { n_basis: usize, d: usize, lambda: f64 },
    /// Point values on a uniform spatial grid.
    SpatialGrid { n: usize, half_width: f64 },
    Tensor(Vec<BasisTag>),
    Unspecified,
}

impl BasisTag {
    pub fn dim(&self) -> Option<usize> {
        match self {
            BasisTag::Oscillator { n_basis, d, .. } => Some(n_basis.pow(*d as u32)),
            BasisTag::SpatialGrid { n, .. } => Some(*n),
            BasisTag::Tensor(parts) => parts.iter().map(|p| p.dim()).product(),
            BasisTag::Unspecified => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensityOperator {
    matrix: HermitianMatrix,
    basis: BasisTag,
}

impl DensityOperator {
    /// Validates Hermiticity, positivity and unit trace. Eigenvalues in
    /// [-1e-10, 0) are clipped and the trace renormalized.
    pub fn new(m: CMatrix, basis: BasisTag) -> Result<Self> {
        let h = HermitianMatrix::new(m)?;
        let tr = h.trace();
        if (tr - 1.0).abs() > tol::TRACE_SLACK {
            return Err(Error::validation(format!(
                "density trace is {tr:.12}, expected 1"
            )));
        }
        Self::finish(h, basis)
    }

    /// Scales a PSD matrix to unit trace, then validates.
    pub fn normalized(m: CMatrix, basis: BasisTag) -> Result<Self> {
        let tr = trace(&m).re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::validation(format!(
                "cannot normalize a matrix with trace {tr}"
            )));
        }
        let h = HermitianMatrix::new(m / re(tr))?;
        Self::finish(h, basis)
    }

    /// Like `new`, but symmetrizes rounding-level Hermiticity defects first.
    pub(crate) fn from_computed(m: &CMatrix, basis: BasisTag) -> Result<Self> {
        Self::normalized(hermitize(m), basis)
    }

    /// For matrices that are PSD by construction (congruences of PSD
    /// matrices): symmetrizes and normalizes without the spectral check.
    pub(crate) fn from_congruence(m: &CMatrix, basis: BasisTag) -> Result<Self> {
        let h = HermitianMatrix::from_hermitized(m);
        let tr = h.trace();
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::validation(format!("cannot normalize a matrix with trace {tr}")));
        }
        if let Some(d) = basis.dim() {
            if d != h.dim() {
                return Err(Error::dimension(format!("basis {basis:?} has dimension {d}, matrix has {}", h.dim())));
            }
        }
        Ok(DensityOperator {
            matrix: HermitianMatrix::from_hermitized(&(h.into_matrix() / re(tr))),
            basis,
        })
    }

    fn finish(h: HermitianMatrix, basis: BasisTag) -> Result<Self> {
        if let Some(d) = basis.dim() {
            if d != h.dim() {
                return Err(Error::dimension(format!(
                    "basis {basis:?} has dimension {d}, matrix has {}",
                    h.dim()
                )));
            }
        }
        let e = eig_hermitian(&h);
        let min = e.min();
        if min < -tol::PSD_SLACK {
            return Err(Error::validation(format!(
                "density has eigenvalue {min:.3e} below -{:.0e}",
                tol::PSD_SLACK
            )));
        }
        let matrix = if min < 0.0 {
            let clipped = e.reconstruct_with(|w| w.max(0.0));
            let tr = trace(&clipped).re;
            HermitianMatrix::from_hermitized(&(clipped / re(tr)))
        } else {
            h
        };
        Ok(DensityOperator { matrix, basis })
    }

    pub fn pure(psi: &CVector, basis: BasisTag) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0) {
            return Err(Error::validation("zero state vector"));
        }
        let v = psi / re(norm);
        Self::from_computed(&(&v * v.adjoint()), basis)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        self.matrix.matrix()
    }

    pub fn hermitian(&self) -> &HermitianMatrix {
        &self.matrix
    }

    pub fn basis(&self) -> &BasisTag {
        &self.basis
    }

    pub fn with_basis(mut self, basis: BasisTag) -> Result<Self> {
        if let Some(d) = basis.dim() {
            if d != self.dim() {
                return Err(Error::dimension(format!(
                    "cannot retag a {}-dimensional density as {basis:?}",
                    self.dim()
                )));
            }
        }
        self.basis = basis;
        Ok(self)
    }

    pub fn purity(&self) -> f64 {
        trace_product(self.matrix(), self.matrix()).re
    }

    pub fn eigen(&self) -> EigenDecomposition {
        eig_hermitian(&self.matrix)
    }

    /// trace(self·A).
    pub fn expectation(&self, a: &CMatrix) -> C64 {
        trace_product(self.matrix(), a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, m: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, m, |_, _| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            c(a, b)
        })
    }

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        hermitize(&random_matrix(n, n, seed))
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = eig_hermitian(&HermitianMatrix::identity(2));
        assert_eq!(e.eigenvalues, vec![1.0, 1.0]);

        let e = eig_hermitian(&HermitianMatrix::from_real_diagonal(&[1.0, 0.0]));
        assert_eq!(e.eigenvalues, vec![0.0, 1.0]);
        assert!((e.eigenvectors[(1, 0)].norm() - 1.0).abs() < 1e-15);
        assert!((e.eigenvectors[(0, 1)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let a = random_hermitian(4, 7);
        let e = eigh(&a);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let resid = frobenius(&(e.reconstruct() - &a));
        assert!(resid < 1e-10 * frobenius(&a));
        let v = &e.eigenvectors;
        assert!(frobenius(&(v.adjoint() * v - CMatrix::identity(4, 4))) < 1e-10);
    }

    #[test]
    fn hermitian_validation_rejects_asymmetry() {
        let mut m = CMatrix::identity(2, 2);
        m[(0, 1)] = c(1e-6, 0.0);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::Validation(_))));
    }

    #[test]
    fn psd_projection_clips() {
        let p = project_psd(&HermitianMatrix::from_real_diagonal(&[1.0, -1.0]));
        assert!(frobenius(&(p.matrix() - HermitianMatrix::from_real_diagonal(&[1.0, 0.0]).matrix())) < 1e-15);

        let p = project_psd(&HermitianMatrix::from_real_diagonal(&[2.0, -3.0, 0.5]));
        let want = HermitianMatrix::from_real_diagonal(&[2.0, 0.0, 0.5]);
        assert!(frobenius(&(p.matrix() - want.matrix())) < 1e-15);
    }

    #[test]
    fn psd_projection_fixes_psd_input() {
        let g = random_matrix(5, 5, 3);
        let a = &g * g.adjoint();
        let p = project_psd_raw(&a);
        assert!(frobenius(&(p - &a)) < 1e-12);
    }

    #[test]
    fn partial_trace_of_product() {
        let k = random_hermitian(2, 1);
        let kp = random_hermitian(3, 2);
        let q = kron(&k, &kp);
        let a = partial_trace(&q, (2, 3), Subsystem::Second).unwrap();
        assert!(frobenius(&(a - &k * trace(&kp))) < 1e-12);
        let b = partial_trace(&q, (2, 3), Subsystem::First).unwrap();
        assert!(frobenius(&(b - &kp * trace(&k))) < 1e-12);
    }

    #[test]
    fn partial_trace_of_maximally_mixed() {
        let q = CMatrix::identity(4, 4) / re(4.0);
        let a = partial_trace(&q, (2, 2), Subsystem::First).unwrap();
        assert!(frobenius(&(a - CMatrix::identity(2, 2) / re(2.0))) < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_split() {
        let q = CMatrix::identity(6, 6);
        assert!(matches!(
            partial_trace(&q, (2, 2), Subsystem::First),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn partial_trace_matches_index_sum() {
        // Oracle: explicit four-index reshaping.
        let (da, db) = (3, 2);
        let g = random_matrix(6, 6, 11);
        let q = &g * g.adjoint();
        let mut t2 = vec![vec![C64::new(0.0, 0.0); da]; da];
        let mut t1 = vec![vec![C64::new(0.0, 0.0); db]; db];
        for a in 0..da {
            for b in 0..db {
                for a2 in 0..da {
                    for b2 in 0..db {
                        let v = q[(a * db + b, a2 * db + b2)];
                        if b == b2 {
                            t2[a][a2] += v;
                        }
                        if a == a2 {
                            t1[b][b2] += v;
                        }
                    }
                }
            }
        }
        let p2 = partial_trace(&q, (da, db), Subsystem::Second).unwrap();
        let p1 = partial_trace(&q, (da, db), Subsystem::First).unwrap();
        for i in 0..da {
            for j in 0..da {
                assert!((p2[(i, j)] - t2[i][j]).norm() < 1e-12);
            }
        }
        for i in 0..db {
            for j in 0..db {
                assert!((p1[(i, j)] - t1[i][j]).norm() < 1e-12);
            }
        }
        assert!((trace(&p1) - trace(&q)).norm() < 1e-12);
        assert!((trace(&p2) - trace(&q)).norm() < 1e-12);
    }

    #[test]
    fn expm_scalar_and_zero() {
        let g = HermitianMatrix::from_real_diagonal(&[std::f64::consts::PI]);
        let u = expm_hermitian_generator(&g, 1.0);
        assert!((u[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-15);

        let g = HermitianMatrix::from_hermitized(&random_hermitian(4, 5));
        let u = expm_hermitian_generator(&g, 0.0);
        assert!(frobenius(&(u - CMatrix::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn expm_inverse_pair() {
        let g = HermitianMatrix::from_hermitized(&random_hermitian(6, 9));
        let u = expm_hermitian_generator(&g, 0.7);
        let v = expm_hermitian_generator(&g, -0.7);
        assert!(frobenius(&(&u * &v - CMatrix::identity(6, 6))) < 1e-10);
        assert!(unitarity_defect(&u) < 1e-10);
    }

    #[test]
    fn density_validation_clips_dust_and_rejects_negatives() {
        let mut m = CMatrix::from_diagonal(&CVector::from_vec(vec![re(1.0 + 5e-11), re(-5e-11)]));
        let d = DensityOperator::new(m.clone(), BasisTag::Unspecified).unwrap();
        assert!(d.eigen().min() >= 0.0);
        assert!((trace(d.matrix()).re - 1.0).abs() < 1e-15);

        m[(0, 0)] = re(1.1);
        m[(1, 1)] = re(-0.1);
        assert!(DensityOperator::new(m, BasisTag::Unspecified).is_err());

        let m = CMatrix::identity(2, 2);
        assert!(DensityOperator::new(m, BasisTag::Unspecified).is_err());
    }

    #[test]
    fn density_checks_basis_dimension() {
        let m = CMatrix::identity(3, 3) / re(3.0);
        let tag = BasisTag::Oscillator {
            n_basis: 4,
            d: 1,
            lambda: 1.0,
        };
        assert!(matches!(
            DensityOperator::new(m, tag),
            Err(Error::Dimension(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn partial_trace_is_adjoint_of_tensoring(seed in 0u64..10_000) {
                let (da, db) = (3, 4);
                let q = random_hermitian(da * db, seed);
                let a = random_hermitian(da, seed.wrapping_add(1));
                let b = random_hermitian(db, seed.wrapping_add(2));
                let lhs = trace_product(&partial_trace(&q, (da, db), Subsystem::Second).unwrap(), &a);
                let rhs = trace_product(&q, &kron(&a, &CMatrix::identity(db, db)));
                prop_assert!((lhs - rhs).norm() < 1e-10);
                let lhs = trace_product(&partial_trace(&q, (da, db), Subsystem::First).unwrap(), &b);
                let rhs = trace_product(&q, &kron(&CMatrix::identity(da, da), &b));
                prop_assert!((lhs - rhs).norm() < 1e-10);
            }

            #[test]
            fn psd_projection_idempotent_and_nonexpansive(seed in 0u64..10_000) {
                let a = random_hermitian(5, seed);
                let b = random_hermitian(5, seed ^ 0xabcdef);
                let pa = project_psd_raw(&a);
                let pb = project_psd_raw(&b);
                prop_assert!(frobenius(&(project_psd_raw(&pa) - &pa)) < 1e-12);
                prop_assert!(frobenius(&(&pa - &pb)) <= frobenius(&(&a - &b)) + 1e-12);
            }

            #[test]
            fn validated_densities_satisfy_invariants(seed in 0u64..10_000, rank in 1usize..5) {
                let g = random_matrix(4, rank, seed);
                let d = DensityOperator::normalized(&g * g.adjoint(), BasisTag::Unspecified).unwrap();
                prop_assert!(hermiticity_defect(d.matrix()) <= tol::HERMITIAN);
                prop_assert!(d.eigen().min() >= -tol::PSD_SLACK);
                prop_assert!((trace(d.matrix()).re - 1.0).abs() <= tol::TRACE_SLACK);
            }
        }
    }
}
