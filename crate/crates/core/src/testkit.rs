//! Seeded random states, the barrier-method reference solver and grid
//! moment quadrature.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{c, eigh, kron, re, trace_product, BasisTag, CMatrix, CVector, DensityOperator};
use crate::phase_space::PhaseSpaceField;

/// Deterministic generator for `seed`, on an independent `stream`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn ginibre(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let a: f64 = StandardNormal.sample(rng);
        let b: f64 = StandardNormal.sample(rng);
        c(a, b) / re(std::f64::consts::SQRT_2)
    })
}

/// G·G†/trace for a dim×rank complex Gaussian G, with the nonzero spectrum
/// floored at 1e-8.
pub fn random_density(dim: usize, rank: usize, seed: u64) -> DensityOperator {
    random_density_from(&mut rng(seed, 0), dim, rank)
}

pub fn random_density_from(rng: &mut ChaCha8Rng, dim: usize, rank: usize) -> DensityOperator {
    assert!(rank >= 1 && rank <= dim, "rank {rank} out of range for dim {dim}");
    let g = ginibre(rng, dim, rank);
    let e = eigh(&(&g * g.adjoint()));
    let cutoff = dim - rank;
    let spectrum: Vec<f64> = e
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(idx, &w)| if idx < cutoff { 0.0 } else { w.max(1e-8) })
        .collect();
    let v = &e.eigenvectors;
    let m = v * CMatrix::from_diagonal(&CVector::from_iterator(dim, spectrum.iter().map(|&w| re(w)))) * v.adjoint();
    DensityOperator::normalized(crate::linalg::hermitize(&m), BasisTag::Unspecified)
        .expect("Ginibre sample is a valid density")
}

/// Random unit vector supported on the first `levels` coordinates.
pub fn random_low_state(rng: &mut ChaCha8Rng, dim: usize, levels: usize) -> CVector {
    let g = ginibre(rng, levels.min(dim), 1);
    let mut v = CVector::zeros(dim);
    for i in 0..levels.min(dim) {
        v[i] = g[(i, 0)];
    }
    let n = v.norm();
    v / re(n)
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> CMatrix {
    crate::linalg::hermitize(&ginibre(rng, dim, dim))
}

#[derive(Clone, Debug)]
pub struct BarrierSolution {
    pub value: f64,
    pub q: CMatrix,
    /// Duality-gap bound ν·μ at the final barrier parameter.
    pub gap: f64,
    pub newton_steps: usize,
}

/// Orthonormal basis of the real vector space of n×n Hermitian matrices.
fn hermitian_basis(n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(n * n);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        for j in i..n {
            if i == j {
                let mut m = CMatrix::zeros(n, n);
                m[(i, i)] = re(1.0);
                out.push(m);
            } else {
                let mut m = CMatrix::zeros(n, n);
                m[(i, j)] = re(s);
                m[(j, i)] = re(s);
                out.push(m);
                let mut m = CMatrix::zeros(n, n);
                m[(i, j)] = c(0.0, s);
                m[(j, i)] = c(0.0, -s);
                out.push(m);
            }
        }
    }
    out
}

fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn marginals(q: &CMatrix, a: usize, b: usize) -> (CMatrix, CMatrix) {
    let m1 = CMatrix::from_fn(a, a, |i, j| (0..b).map(|k| q[(i * b + k, j * b + k)]).sum());
    let m2 = CMatrix::from_fn(b, b, |i, j| (0..a).map(|k| q[(k * b + i, k * b + j)]).sum());
    (m1, m2)
}

/// Lower Cholesky factor of a Hermitian matrix, or None when a pivot is not
/// strictly positive. (nalgebra's complex Cholesky takes complex square
/// roots of negative pivots and so cannot be used as a definiteness test.)
fn cholesky_factor(q: &CMatrix) -> Option<CMatrix> {
    let n = q.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = q[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = re(djj);
        for i in j + 1..n {
            let mut v = q[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / re(djj);
        }
    }
    Some(l)
}

fn log_det_pd(q: &CMatrix) -> Option<f64> {
    cholesky_factor(q).map(|l| l.diagonal().iter().map(|z| 2.0 * z.re.ln()).sum())
}

fn inverse_pd(q: &CMatrix) -> Option<CMatrix> {
    let l = cholesky_factor(q)?;
    let linv = l.solve_lower_triangular(&CMatrix::identity(q.nrows(), q.nrows()))?;
    Some(linv.adjoint() * linv)
}

/// Reference solver for min trace(Q·C) over couplings of K and K', by
/// log-det barrier path following on the affine slice of couplings.
/// Restricted to doubled dimension ≤ 9.
pub fn brute_force_sdp(k: &DensityOperator, kp: &DensityOperator, cost: &CMatrix, tol: f64) -> Result<BarrierSolution> {
    let (n1, n2) = (k.dim(), kp.dim());
    let n = n1 * n2;
    if n > 9 {
        return Err(Error::Size(format!("barrier oracle handles doubled dimension ≤ 9, got {n}")));
    }
    if cost.nrows() != n {
        return Err(Error::dimension(format!("cost has dimension {}, expected {n}", cost.nrows())));
    }
    let ek = k.eigen();
    let ekp = kp.eigen();
    if ek.max() > 1.0 - 1e-12 || ekp.max() > 1.0 - 1e-12 {
        // A pure marginal admits only the product coupling.
        let q = kron(k.matrix(), kp.matrix());
        let value = trace_product(&q, cost).re;
        return Ok(BarrierSolution {
            value,
            q,
            gap: 0.0,
            newton_steps: 0,
        });
    }
    let min_eig = ek.min().min(ekp.min());
    if min_eig <= 1e-12 {
        return Err(Error::IllConditioned {
            what: "barrier oracle needs full-rank or pure marginals".into(),
            condition: ek.max().max(ekp.max()) / min_eig.max(f64::MIN_POSITIVE),
        });
    }

    // Null space of the marginal map over Hermitian matrices.
    let basis = hermitian_basis(n);
    let b1 = hermitian_basis(n1);
    let b2 = hermitian_basis(n2);
    let rows = n1 * n1 + n2 * n2;
    let mut amat = DMatrix::<f64>::zeros(rows, basis.len());
    for (col, bk) in basis.iter().enumerate() {
        let (m1, m2) = marginals(bk, n1, n2);
        for (row, h) in b1.iter().enumerate() {
            amat[(row, col)] = real_inner(h, &m1);
        }
        for (row, h) in b2.iter().enumerate() {
            amat[(n1 * n1 + row, col)] = real_inner(h, &m2);
        }
    }
    let gram = amat.transpose() * &amat;
    let eg = gram.symmetric_eigen();
    let scale = eg.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let dirs: Vec<CMatrix> = (0..basis.len())
        .filter(|&i| eg.eigenvalues[i] < 1e-10 * scale)
        .map(|i| {
            let mut m = CMatrix::zeros(n, n);
            for (j, bj) in basis.iter().enumerate() {
                m += bj * re(eg.eigenvectors[(j, i)]);
            }
            m
        })
        .collect();
    let dim = dirs.len();
    let cdir: Vec<f64> = dirs.iter().map(|d| trace_product(cost, d).re).collect();

    let mut q = kron(k.matrix(), kp.matrix());
    let nu = n as f64;
    let mut mu = (trace_product(&q, cost).re / nu).abs().max(1e-3);
    let mut steps = 0;
    let barrier = |q: &CMatrix, mu: f64| -> Option<f64> {
        let logdet = log_det_pd(q)?;
        Some(trace_product(q, cost).re / mu - logdet)
    };

    loop {
        let last = nu * mu <= tol;
        let centering = if last { 50 } else { 10 };
        for _ in 0..centering {
            let qinv = inverse_pd(&q).ok_or_else(|| Error::IllConditioned {
                what: "barrier iterate left the positive cone".into(),
                condition: f64::INFINITY,
            })?;
            let qd: Vec<CMatrix> = dirs.iter().map(|d| &qinv * d).collect();
            let g = DVector::<f64>::from_fn(dim, |i, _| cdir[i] / mu - trace_product(&qd[i], &CMatrix::identity(n, n)).re);
            let h = DMatrix::<f64>::from_fn(dim, dim, |i, j| trace_product(&qd[i], &qd[j]).re);
            // Near the optimum Q is almost singular and H spans many orders of
            // magnitude; an eigen-solve with a relative cutoff stays stable.
            let eh = h.symmetric_eigen();
            let top = eh.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
            if !(top > 0.0) {
                return Err(Error::IllConditioned {
                    what: "barrier Hessian vanishes".into(),
                    condition: f64::INFINITY,
                });
            }
            let mut step = DVector::<f64>::zeros(dim);
            for (kk, &lam) in eh.eigenvalues.iter().enumerate() {
                if lam > 1e-15 * top {
                    let v = eh.eigenvectors.column(kk);
                    step -= v * (v.dot(&g) / lam);
                }
            }
            let decrement = -g.dot(&step);
            steps += 1;
            if decrement < 1e-14 {
                break;
            }
            let f0 = barrier(&q, mu).expect("iterate is positive definite");
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial = q.clone();
                for (d, s) in dirs.iter().zip(step.iter()) {
                    trial += d * re(t * s);
                }
                let trial = crate::linalg::hermitize(&trial);
                if let Some(f) = barrier(&trial, mu) {
                    if f <= f0 - 0.25 * t * decrement {
                        q = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if last {
            break;
        }
        mu = (mu * 0.1).max(tol / nu);
    }
    Ok(BarrierSolution {
        value: trace_product(&q, cost).re,
        q,
        gap: nu * mu,
        newton_steps: steps,
    })
}

/// ∬ x^a ξ^b f(x, ξ) dx dξ by midpoint quadrature in row-major order.
pub fn quadrature_moment(field: &PhaseSpaceField, degrees: (u32, u32)) -> f64 {
    let g = &field.grid;
    let xs = g.x_points();
    let xis = g.xi_points();
    let mut total = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let xa = x.powi(degrees.0 as i32);
        let mut row = 0.0;
        for (j, &xi) in xis.iter().enumerate() {
            row += xi.powi(degrees.1 as i32) * field.values[i * g.n_xi + j];
        }
        total += xa * row;
    }
    total * g.cell_area()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical_ot::{transport_general, CostMatrix};
    use crate::linalg::{frobenius, trace};
    use crate::oscillator::{cost_operator, OscillatorRep};
    use crate::quantum_ot::{solve_coupling_sdp, SolverConfig};

    #[test]
    fn random_density_rank_and_determinism() {
        let a = random_density(5, 1, 3);
        assert!((a.purity() - 1.0).abs() < 1e-12);
        let b = random_density(5, 5, 3);
        assert!(b.eigen().min() > 0.0);
        let c2 = random_density(5, 5, 3);
        assert_eq!(b.matrix(), c2.matrix());
        let d = random_density(6, 3, 8);
        let e = d.eigen();
        assert!(e.eigenvalues[..3].iter().all(|w| w.abs() < 1e-12));
        assert!(e.eigenvalues[3..].iter().all(|&w| w >= 1e-8 / 2.0));
    }

    #[test]
    fn pure_marginal_gives_product_value() {
        let k = random_density(3, 1, 1);
        let mut r = rng(5, 0);
        let cost = {
            let g = ginibre(&mut r, 9, 9);
            &g * g.adjoint()
        };
        let sol = brute_force_sdp(&k, &k, &cost, 1e-9).unwrap();
        let psi_q = kron(k.matrix(), k.matrix());
        assert!((sol.value - trace_product(&psi_q, &cost).re).abs() < 1e-12);
    }

    #[test]
    fn barrier_matches_splitting_on_a_qubit_pair() {
        let rep = OscillatorRep::new(3, 1, 1.0).unwrap();
        let cost = cost_operator(&rep, &rep).unwrap();
        let k = random_density(3, 3, 10).with_basis(rep.tag()).unwrap();
        let kp = random_density(3, 3, 11).with_basis(rep.tag()).unwrap();
        let b = brute_force_sdp(&k, &kp, cost.matrix.matrix(), 1e-9).unwrap();
        assert!(b.gap <= 1e-9);
        let (m1, m2) = marginals(&b.q, 3, 3);
        assert!(frobenius(&(m1 - k.matrix())) < 1e-9);
        assert!(frobenius(&(m2 - kp.matrix())) < 1e-9);
        let s = solve_coupling_sdp(k.matrix(), kp.matrix(), cost.matrix.matrix(), &SolverConfig::default()).unwrap();
        assert!((s.value - b.value).abs() < 1e-5, "{} vs {}", s.value, b.value);
    }

    #[test]
    fn diagonal_problem_versus_transport_lp() {
        // Diagonal marginals and a diagonal cost: diagonal couplings form a
        // subset of the feasible set, so the SDP is at most the LP value.
        let w1 = [0.5, 0.3, 0.2];
        let w2 = [0.25, 0.25, 0.5];
        let cij = |i: usize, j: usize| ((i as f64) - 2.0 * (j as f64)).powi(2) + 0.1 * i as f64;
        let cost = CMatrix::from_fn(9, 9, |a, b| if a == b { re(cij(a / 3, a % 3)) } else { re(0.0) });
        let k = DensityOperator::new(CMatrix::from_diagonal(&CVector::from_iterator(3, w1.iter().map(|&w| re(w)))), BasisTag::Unspecified).unwrap();
        let kp = DensityOperator::new(CMatrix::from_diagonal(&CVector::from_iterator(3, w2.iter().map(|&w| re(w)))), BasisTag::Unspecified).unwrap();
        let sdp = brute_force_sdp(&k, &kp, &cost, 1e-9).unwrap();
        let lp = transport_general(&w1, &w2, &CostMatrix::from_fn(3, 3, cij)).unwrap();
        assert!(sdp.value <= lp.value + 1e-7, "sdp {} lp {}", sdp.value, lp.value);
        // With a diagonal cost the off-diagonal blocks of Q do not enter the
        // objective and the diagonal of Q is a transport plan, so they agree.
        assert!((sdp.value - lp.value).abs() < 1e-6, "sdp {} lp {}", sdp.value, lp.value);
    }

    #[test]
    fn cholesky_detects_indefinite_matrices() {
        let mut m = CMatrix::identity(3, 3);
        assert!(log_det_pd(&m).unwrap().abs() < 1e-15);
        m[(2, 2)] = re(-1e-3);
        assert!(cholesky_factor(&m).is_none());
        let mut g = rng(2, 0);
        let a = ginibre(&mut g, 4, 4);
        let p = &a * a.adjoint() + CMatrix::identity(4, 4);
        let inv = inverse_pd(&p).unwrap();
        assert!(frobenius(&(&inv * &p - CMatrix::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn rejects_large_problems() {
        let k = random_density(4, 4, 1);
        let cost = CMatrix::identity(16, 16);
        assert!(matches!(brute_force_sdp(&k, &k, &cost, 1e-9), Err(Error::Size(_))));
    }

    #[test]
    fn hermitian_basis_is_orthonormal() {
        let b = hermitian_basis(3);
        assert_eq!(b.len(), 9);
        for i in 0..9 {
            for j in 0..9 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((real_inner(&b[i], &b[j]) - want).abs() < 1e-15);
            }
            assert!(crate::linalg::hermiticity_defect(&b[i]) == 0.0);
        }
        let _ = trace(&b[0]);
    }
}
