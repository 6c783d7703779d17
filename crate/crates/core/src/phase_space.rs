//! Wigner and generalized Husimi transforms on phase-space grids, and
//! Töplitz quantization of discrete measures. One spatial dimension.

use std::path::Path;

use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{hermitize, re, trace, CMatrix, CVector, DensityOperator, C64};
use crate::oscillator::{
    displacement_exact, translated_scaled_density, OscillatorRep, PhaseSpacePoint,
};
use crate::special::scaled_hermite_functions_into;

/// Rectangular cell-centered grid: x_i = -X + (i + ½)dx, likewise for ξ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseSpaceGrid {
    pub x_extent: f64,
    pub xi_extent: f64,
    pub n_x: usize,
    pub n_xi: usize,
    pub d: usize,
}

impl PhaseSpaceGrid {
    pub fn new(x_extent: f64, xi_extent: f64, n_x: usize, n_xi: usize) -> Result<Self> {
        for (name, n) in [("n_x", n_x), ("n_xi", n_xi)] {
            if n < 16 || !n.is_power_of_two() {
                return Err(Error::validation(format!("{name} must be a power of two ≥ 16, got {n}")));
            }
        }
        if !(x_extent > 0.0 && xi_extent > 0.0) {
            return Err(Error::validation("grid half-widths must be positive"));
        }
        Ok(PhaseSpaceGrid {
            x_extent,
            xi_extent,
            n_x,
            n_xi,
            d: 1,
        })
    }

    /// Quadrature-only grid: any even n ≥ 16 (no transforms run on it).
    pub fn quadrature(extent: f64, n: usize) -> Result<Self> {
        if n < 16 || !n.is_multiple_of(2) {
            return Err(Error::validation(format!("quadrature grid needs an even n ≥ 16, got {n}")));
        }
        if !(extent > 0.0) {
            return Err(Error::validation("grid half-width must be positive"));
        }
        Ok(PhaseSpaceGrid {
            x_extent: extent,
            xi_extent: extent,
            n_x: n,
            n_xi: n,
            d: 1,
        })
    }

    pub fn square(extent: f64, n: usize) -> Result<Self> {
        Self::new(extent, extent, n, n)
    }

    /// Half-width 6√λ·max(1, largest displacement), 128 points per axis.
    pub fn default_for(lambda: f64, max_displacement: f64) -> Self {
        let w = 6.0 * lambda.sqrt() * max_displacement.abs().max(1.0);
        Self::square(w, 128).expect("default grid is valid")
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_extent / self.n_x as f64
    }

    pub fn dxi(&self) -> f64 {
        2.0 * self.xi_extent / self.n_xi as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dxi()
    }

    pub fn x_points(&self) -> Vec<f64> {
        let h = self.dx();
        (0..self.n_x).map(|i| -self.x_extent + (i as f64 + 0.5) * h).collect()
    }

    pub fn xi_points(&self) -> Vec<f64> {
        let h = self.dxi();
        (0..self.n_xi).map(|j| -self.xi_extent + (j as f64 + 0.5) * h).collect()
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_xi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Wigner,
    Husimi,
    Generic,
}

#[derive(Clone, Debug)]
pub struct PhaseSpaceField {
    pub grid: PhaseSpaceGrid,
    /// Row-major: value at (x_i, ξ_j) is `values[i * n_xi + j]`.
    pub values: Vec<f64>,
    pub kind: FieldKind,
    /// Largest discarded imaginary part.
    pub imag_max: f64,
}

impl PhaseSpaceField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_xi + j]
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `x,xi,value` rows in row-major grid order.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("x,xi,value\n");
        let xis = self.grid.xi_points();
        for (i, x) in self.grid.x_points().iter().enumerate() {
            for (j, xi) in xis.iter().enumerate() {
                let _ = writeln!(out, "{x:.16e},{xi:.16e},{:.16e}", self.at(i, j));
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &PhaseSpaceField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub point: PhaseSpacePoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::validation("measure has no atoms"));
        }
        if atoms.iter().any(|a| !(a.weight > 0.0) || !a.weight.is_finite()) {
            return Err(Error::validation("measure weights must be positive"));
        }
        let d = atoms[0].point.d();
        if atoms.iter().any(|a| a.point.d() != d) {
            return Err(Error::dimension("measure atoms have mixed dimensions"));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("measure weights sum to {total:.15}, expected 1")));
        }
        Ok(DiscreteMeasure { atoms })
    }

    pub fn dirac(point: PhaseSpacePoint) -> Self {
        DiscreteMeasure {
            atoms: vec![Atom { weight: 1.0, point }],
        }
    }

    /// Weights are normalized to sum to one.
    pub fn weighted(pairs: Vec<(f64, PhaseSpacePoint)>) -> Result<Self> {
        let total: f64 = pairs.iter().map(|p| p.0).sum();
        if !(total > 0.0) {
            return Err(Error::validation("measure has zero total weight"));
        }
        Self::new(
            pairs
                .into_iter()
                .map(|(w, point)| Atom {
                    weight: w / total,
                    point,
                })
                .collect(),
        )
    }

    pub fn d(&self) -> usize {
        self.atoms[0].point.d()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn mean(&self) -> PhaseSpacePoint {
        let d = self.d();
        let mut q = vec![0.0; d];
        let mut p = vec![0.0; d];
        for a in &self.atoms {
            for j in 0..d {
                q[j] += a.weight * a.point.q[j];
                p[j] += a.weight * a.point.p[j];
            }
        }
        PhaseSpacePoint { q, p }
    }

    pub fn max_displacement(&self) -> f64 {
        self.atoms
            .iter()
            .flat_map(|a| a.point.q.iter().chain(&a.point.p))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Lines of `weight q p` (d = 1); blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("line {}: bad number {s:?}", lineno + 1)))
                })
                .collect::<Result<_>>()?;
            if nums.len() != 3 {
                return Err(Error::Parse(format!(
                    "line {}: expected `weight q p`, got {} fields",
                    lineno + 1,
                    nums.len()
                )));
            }
            pairs.push((nums[0], PhaseSpacePoint::d1(nums[1], nums[2])));
        }
        let total: f64 = pairs.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("measure weights sum to {total:.15}, expected 1")));
        }
        Self::new(pairs.into_iter().map(|(weight, point)| Atom { weight, point }).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// max(1e-6, 10 × mass of K on Fock levels ≥ n_basis - 4).
pub fn grid_tol(k: &DensityOperator, rep: &OscillatorRep) -> f64 {
    let n = rep.n_basis;
    let tail: f64 = (n.saturating_sub(4)..n).map(|i| k.matrix()[(i, i)].re).sum();
    (10.0 * tail).max(1e-6)
}

fn require_d1(rep: &OscillatorRep, grid: &PhaseSpaceGrid) -> Result<()> {
    if rep.d != 1 || grid.d != 1 {
        return Err(Error::validation("phase-space transforms are implemented for d = 1"));
    }
    Ok(())
}

fn fft_in_place(planner: &mut FftPlanner<f64>, data: &mut [C64], direction: FftDirection) {
    let fft = planner.plan_fft(data.len(), direction);
    fft.process(data);
}

/// Wigner function of the operator with matrix `k` (scale-λ Hermite basis)
/// at positions `xs` and momenta ξ_j = (j - c)·dξ, j < n_xi.
pub(crate) fn wigner_lattice(
    k: &CMatrix,
    lambda: f64,
    xs: &[f64],
    n_xi: usize,
    dxi: f64,
    c: f64,
) -> Vec<C64> {
    let nb = k.nrows();
    let dy = 2.0 * std::f64::consts::PI / (n_xi as f64 * dxi);
    let ys: Vec<f64> = (0..n_xi).map(|l| (l as f64 - c) * dy).collect();
    let twopi_n = 2.0 * std::f64::consts::PI / n_xi as f64;
    let pre: Vec<C64> = (0..n_xi).map(|l| C64::from_polar(1.0, twopi_n * c * l as f64)).collect();
    let post_const = C64::from_polar(dy / (2.0 * std::f64::consts::PI), -twopi_n * c * c);
    let mut planner = FftPlanner::new();
    let mut out = Vec::with_capacity(xs.len() * n_xi);
    let mut phi_u = CMatrix::zeros(nb, n_xi);
    let mut phi_v = CMatrix::zeros(nb, n_xi);
    let mut buf = vec![0.0; nb];
    let mut line = vec![C64::new(0.0, 0.0); n_xi];
    for &x in xs {
        for (l, &y) in ys.iter().enumerate() {
            scaled_hermite_functions_into(x + lambda * y / 2.0, lambda, &mut buf);
            for m in 0..nb {
                phi_u[(m, l)] = re(buf[m]);
            }
            scaled_hermite_functions_into(x - lambda * y / 2.0, lambda, &mut buf);
            for m in 0..nb {
                phi_v[(m, l)] = re(buf[m]);
            }
        }
        let kv = k * &phi_v;
        for l in 0..n_xi {
            let mut f = C64::new(0.0, 0.0);
            for m in 0..nb {
                f += phi_u[(m, l)] * kv[(m, l)];
            }
            line[l] = f * pre[l];
        }
        fft_in_place(&mut planner, &mut line, FftDirection::Forward);
        for (j, v) in line.iter().enumerate() {
            out.push(*v * post_const * pre[j]);
        }
    }
    out
}

/// Complex Wigner function of an arbitrary operator on `grid`.
pub fn wigner_complex(k: &CMatrix, rep: &OscillatorRep, grid: &PhaseSpaceGrid) -> Result<Vec<C64>> {
    require_d1(rep, grid)?;
    if k.nrows() != rep.dim() {
        return Err(Error::dimension(format!("operator has dimension {}, basis {}", k.nrows(), rep.dim())));
    }
    let c = grid.n_xi as f64 / 2.0 - 0.5;
    Ok(wigner_lattice(k, rep.lambda, &grid.x_points(), grid.n_xi, grid.dxi(), c))
}

fn check_resolution(rep: &OscillatorRep, grid: &PhaseSpaceGrid) -> Result<()> {
    let limit = rep.lambda.sqrt() / 4.0;
    if grid.dx() > limit * (1.0 + 1e-12) || grid.dxi() > limit * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!(
            "grid spacing ({:.4}, {:.4}) exceeds √λ/4 = {limit:.4}",
            grid.dx(),
            grid.dxi()
        )));
    }
    Ok(())
}

/// W_λ[K](x, ξ) = (2π)^{-1} ∫ k(x + λy/2, x - λy/2) e^{-iξy} dy.
pub fn wigner(k: &DensityOperator, rep: &OscillatorRep, grid: &PhaseSpaceGrid) -> Result<PhaseSpaceField> {
    rep.check_density(k)?;
    check_resolution(rep, grid)?;
    let vals = wigner_complex(k.matrix(), rep, grid)?;
    let imag_max = vals.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let field = PhaseSpaceField {
        grid: *grid,
        values: vals.iter().map(|v| v.re).collect(),
        kind: FieldKind::Wigner,
        imag_max,
    };
    let deficit = (field.mass() - trace(k.matrix()).re).abs();
    if deficit > 0.005 {
        return Err(Error::Resolution(format!(
            "grid captures Wigner mass {:.6}, deficit {deficit:.3e} above 0.5%",
            field.mass()
        )));
    }
    Ok(field)
}

/// (2πλ) ∬ conj(W[K]) W[L] dx dξ, the grid side of trace(K*L).
pub fn wigner_pairing(k: &CMatrix, l: &CMatrix, rep: &OscillatorRep, grid: &PhaseSpaceGrid) -> Result<C64> {
    let wk = wigner_complex(k, rep, grid)?;
    let wl = wigner_complex(l, rep, grid)?;
    let s: C64 = wk.iter().zip(&wl).map(|(a, b)| a.conj() * b).sum();
    Ok(s * re(2.0 * std::f64::consts::PI * rep.lambda * grid.cell_area()))
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [C64], rows: usize, cols: usize, dir: FftDirection) {
    for r in 0..rows {
        fft_in_place(planner, &mut data[r * cols..(r + 1) * cols], dir);
    }
    let mut col = vec![C64::new(0.0, 0.0); rows];
    let fft = planner.plan_fft(rows, dir);
    for cidx in 0..cols {
        for r in 0..rows {
            col[r] = data[r * cols + cidx];
        }
        fft.process(&mut col);
        for r in 0..rows {
            data[r * cols + cidx] = col[r];
        }
    }
}

/// Generalized Husimi transform by the convolution path:
/// W̃(z_k) = Σ_i W[K](z_i) W[R^λ](z_i - z_k) dA, zero-padded FFTs.
/// `r` is the scale-1 matrix of R.
pub fn husimi(
    k: &DensityOperator,
    r: &DensityOperator,
    rep: &OscillatorRep,
    grid: &PhaseSpaceGrid,
) -> Result<PhaseSpaceField> {
    rep.check_density(r)?;
    let wk = wigner(k, rep, grid)?;
    let (nx, nxi) = (grid.n_x, grid.n_xi);
    let (px, pxi) = (2 * nx, 2 * nxi);
    // W[R] on the lattice of cell offsets (m - n)·h, m < 2n.
    let xs: Vec<f64> = (0..px).map(|m| (m as f64 - nx as f64) * grid.dx()).collect();
    let wr = wigner_lattice(r.matrix(), rep.lambda, &xs, pxi, grid.dxi(), nxi as f64);

    let mut a = vec![C64::new(0.0, 0.0); px * pxi];
    for i in 0..nx {
        for j in 0..nxi {
            a[i * pxi + j] = re(wk.values[i * nxi + j]);
        }
    }
    // B'[m] = W_R at offset -m, stored at m mod 2n, |m| < n.
    let mut b = vec![C64::new(0.0, 0.0); px * pxi];
    let wrap = |m: i64, n: usize| -> usize { m.rem_euclid(n as i64) as usize };
    for mx in -(nx as i64 - 1)..=(nx as i64 - 1) {
        for mxi in -(nxi as i64 - 1)..=(nxi as i64 - 1) {
            let lx = (-mx + nx as i64) as usize;
            let lxi = (-mxi + nxi as i64) as usize;
            b[wrap(mx, px) * pxi + wrap(mxi, pxi)] = re(wr[lx * pxi + lxi].re);
        }
    }
    let mut planner = FftPlanner::new();
    fft2(&mut planner, &mut a, px, pxi, FftDirection::Forward);
    fft2(&mut planner, &mut b, px, pxi, FftDirection::Forward);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft2(&mut planner, &mut a, px, pxi, FftDirection::Inverse);
    let norm = grid.cell_area() / (px * pxi) as f64;
    let mut values = Vec::with_capacity(nx * nxi);
    let mut imag_max = 0.0f64;
    for i in 0..nx {
        for j in 0..nxi {
            let v = a[i * pxi + j] * norm;
            imag_max = imag_max.max(v.im.abs());
            values.push(v.re);
        }
    }
    Ok(PhaseSpaceField {
        grid: *grid,
        values,
        kind: FieldKind::Husimi,
        imag_max,
    })
}

/// trace(R^λ_{q,p} K)/(2πλ), using the exact compressed displacement.
pub fn husimi_trace_at(
    k: &DensityOperator,
    r: &DensityOperator,
    rep: &OscillatorRep,
    point: &PhaseSpacePoint,
) -> Result<f64> {
    rep.check_density(k)?;
    rep.check_density(r)?;
    let factors = low_rank_factors(r.matrix());
    Ok(husimi_trace_factored(k.matrix(), &factors, rep, point))
}

/// Columns √r_k·u_k of a PSD matrix, dropping negligible eigenvalues.
pub(crate) fn low_rank_factors(r: &CMatrix) -> Vec<CVector> {
    let e = crate::linalg::eigh(r);
    let top = e.max();
    (0..e.eigenvalues.len())
        .rev()
        .filter(|&i| e.eigenvalues[i] > 1e-14 * top.max(1e-300))
        .map(|i| e.eigenvectors.column(i) * re(e.eigenvalues[i].sqrt()))
        .collect()
}

fn husimi_trace_factored(k: &CMatrix, factors: &[CVector], rep: &OscillatorRep, point: &PhaseSpacePoint) -> f64 {
    let d = displacement_exact(rep, point);
    let mut total = 0.0;
    for u in factors {
        let v = &d * u;
        total += (v.adjoint() * k * &v)[(0, 0)].re;
    }
    total / (2.0 * std::f64::consts::PI * rep.lambda).powi(rep.d as i32)
}

/// Generalized Husimi transform on `grid` by the trace path.
pub fn husimi_trace(
    k: &DensityOperator,
    r: &DensityOperator,
    rep: &OscillatorRep,
    grid: &PhaseSpaceGrid,
) -> Result<PhaseSpaceField> {
    require_d1(rep, grid)?;
    rep.check_density(k)?;
    rep.check_density(r)?;
    let factors = low_rank_factors(r.matrix());
    let xs = grid.x_points();
    let xis = grid.xi_points();
    let mut values = Vec::with_capacity(grid.len());
    for &x in &xs {
        for &xi in &xis {
            values.push(husimi_trace_factored(k.matrix(), &factors, rep, &PhaseSpacePoint::d1(x, xi)));
        }
    }
    Ok(PhaseSpaceField {
        grid: *grid,
        values,
        kind: FieldKind::Husimi,
        imag_max: 0.0,
    })
}

/// Σ_i w_i R^λ_{q_i,p_i}, the quantization of (2πλ)^d μ.
pub fn toeplitz_quantize(r: &DensityOperator, rep: &OscillatorRep, mu: &DiscreteMeasure) -> Result<DensityOperator> {
    rep.check_density(r)?;
    let n = rep.dim();
    let mut acc = CMatrix::zeros(n, n);
    for (idx, atom) in mu.atoms.iter().enumerate() {
        let moved = translated_scaled_density(rep, r, &atom.point).map_err(|e| match e {
            Error::Truncation { deficit, limit, .. } => Error::Truncation {
                what: format!("atom {idx} at ({:?}, {:?})", atom.point.q, atom.point.p),
                deficit,
                limit,
            },
            other => other,
        })?;
        acc += moved.matrix() * re(atom.weight);
    }
    DensityOperator::from_computed(&acc, rep.tag())
}

/// (2πλ)^{-1} Σ_cells f(z_c) R^λ_{z_c} dA for a field sampled on `grid`,
/// using the exact compressed displacement (no truncation budget).
pub fn toeplitz_quantize_field(r: &DensityOperator, rep: &OscillatorRep, f: &PhaseSpaceField) -> Result<CMatrix> {
    require_d1(rep, &f.grid)?;
    rep.check_density(r)?;
    let n = rep.dim();
    let factors = low_rank_factors(r.matrix());
    let xs = f.grid.x_points();
    let xis = f.grid.xi_points();
    let mut acc = CMatrix::zeros(n, n);
    for (i, &x) in xs.iter().enumerate() {
        for (j, &xi) in xis.iter().enumerate() {
            let w = f.values[i * f.grid.n_xi + j];
            if w == 0.0 {
                continue;
            }
            let d = displacement_exact(rep, &PhaseSpacePoint::d1(x, xi));
            for u in &factors {
                let v = &d * u;
                acc += &v * v.adjoint() * re(w);
            }
        }
    }
    Ok(hermitize(&acc) * re(f.grid.cell_area() / (2.0 * std::f64::consts::PI * rep.lambda)))
}

#[derive(Clone, Debug)]
pub struct ResolutionCheck {
    /// (2πλ)^{-1} Σ_cells R^λ_{z_c} dA on the lowest ⌊n_basis/2⌋ levels.
    pub block: CMatrix,
    /// Largest entry of |block - I|.
    pub max_entry: f64,
    /// Spectral norm of block - I.
    pub spectral: f64,
}

/// Deviation (largest entry) of the quadrature of R^λ translates from the
/// identity on the lowest ⌊n_basis/2⌋ Fock levels.
pub fn check_resolution_identity(r: &DensityOperator, rep: &OscillatorRep, quad: &PhaseSpaceGrid) -> Result<f64> {
    Ok(resolution_identity(r, rep, quad)?.max_entry)
}

pub fn resolution_identity(r: &DensityOperator, rep: &OscillatorRep, quad: &PhaseSpaceGrid) -> Result<ResolutionCheck> {
    require_d1(rep, quad)?;
    rep.check_density(r)?;
    let levels = rep.n_basis / 2;
    let factors = low_rank_factors(r.matrix());
    let mut acc = CMatrix::zeros(levels, levels);
    for &x in &quad.x_points() {
        for &xi in &quad.xi_points() {
            let d = displacement_exact(rep, &PhaseSpacePoint::d1(x, xi));
            let top = d.rows(0, levels);
            for u in &factors {
                let v = top * u;
                acc += &v * v.adjoint();
            }
        }
    }
    let block = hermitize(&acc) * re(quad.cell_area() / (2.0 * std::f64::consts::PI * rep.lambda));
    let diff = &block - CMatrix::identity(levels, levels);
    let e = crate::linalg::eigh(&diff);
    let max_entry = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(ResolutionCheck {
        block,
        max_entry,
        spectral: e.min().abs().max(e.max().abs()),
    })
}

/// Σ_i w_i W[R](x - q_i, ξ - p_i) on `grid`.
pub fn measure_convolved_wigner(
    r: &DensityOperator,
    rep: &OscillatorRep,
    mu: &DiscreteMeasure,
    grid: &PhaseSpaceGrid,
) -> Result<PhaseSpaceField> {
    require_d1(rep, grid)?;
    let mut values = vec![0.0; grid.len()];
    let c0 = grid.n_xi as f64 / 2.0 - 0.5;
    for atom in &mu.atoms {
        let xs: Vec<f64> = grid.x_points().iter().map(|x| x - atom.point.q[0]).collect();
        let c = c0 + atom.point.p[0] / grid.dxi();
        let w = wigner_lattice(r.matrix(), rep.lambda, &xs, grid.n_xi, grid.dxi(), c);
        for (v, z) in values.iter_mut().zip(&w) {
            *v += atom.weight * z.re;
        }
    }
    Ok(PhaseSpaceField {
        grid: *grid,
        values,
        kind: FieldKind::Generic,
        imag_max: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius, trace_product, BasisTag};
    use crate::oscillator::{coherent_density, fock_density, phase_space_translation};
    use crate::testkit::{random_density, rng, random_density_from};

    fn rep(n: usize, lambda: f64) -> OscillatorRep {
        OscillatorRep::new(n, 1, lambda).unwrap()
    }

    fn embed(d: &DensityOperator, rep: &OscillatorRep) -> DensityOperator {
        let n = rep.dim();
        let mut m = CMatrix::zeros(n, n);
        let k = d.dim();
        m.view_mut((0, 0), (k, k)).copy_from(d.matrix());
        DensityOperator::new(m, rep.tag()).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(PhaseSpaceGrid::new(6.0, 6.0, 100, 128).is_err());
        assert!(PhaseSpaceGrid::new(6.0, 6.0, 8, 8).is_err());
        let g = PhaseSpaceGrid::square(6.0, 16).unwrap();
        let xs = g.x_points();
        assert!((xs[0] + xs[15]).abs() < 1e-15);
    }

    #[test]
    fn ground_state_wigner_is_gaussian() {
        for lambda in [1.0, 0.5] {
            let r = rep(24, lambda);
            let grid = PhaseSpaceGrid::default_for(lambda, 0.0);
            let g = fock_density(&r, &[0]).unwrap();
            let w = wigner(&g, &r, &grid).unwrap();
            let xs = grid.x_points();
            let xis = grid.xi_points();
            let mut worst = 0.0f64;
            for (i, &x) in xs.iter().enumerate() {
                for (j, &xi) in xis.iter().enumerate() {
                    let want = (-(x * x + xi * xi) / lambda).exp() / (std::f64::consts::PI * lambda);
                    worst = worst.max((w.at(i, j) - want).abs());
                }
            }
            assert!(worst < 1e-10, "lambda {lambda}: {worst}");
            assert!((w.mass() - 1.0).abs() < 1e-6);
            assert!(w.imag_max < 1e-10);
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let r = rep(24, 1.0);
        let g = fock_density(&r, &[0]).unwrap();
        let grid = PhaseSpaceGrid::square(6.0, 16).unwrap();
        assert!(matches!(wigner(&g, &r, &grid), Err(Error::Resolution(_))));
        let small = PhaseSpaceGrid::square(1.0, 16).unwrap();
        assert!(matches!(wigner(&g, &r, &small), Err(Error::Resolution(_))));
    }

    #[test]
    fn wigner_of_adjoint_is_conjugate() {
        let r = rep(10, 1.0);
        let grid = PhaseSpaceGrid::default_for(1.0, 0.0);
        let mut g = rng(3, 0);
        let k = crate::testkit::ginibre(&mut g, 10, 10);
        let w = wigner_complex(&k, &r, &grid).unwrap();
        let ws = wigner_complex(&k.adjoint(), &r, &grid).unwrap();
        let worst = w.iter().zip(&ws).map(|(a, b)| (a.conj() - b).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn pairing_reproduces_traces() {
        let r = rep(12, 1.0);
        let grid = PhaseSpaceGrid::default_for(1.0, 0.0);
        let a = fock_density(&r, &[0]).unwrap();
        let b = fock_density(&r, &[1]).unwrap();
        assert!((wigner_pairing(a.matrix(), a.matrix(), &r, &grid).unwrap().re - 1.0).abs() < 1e-6);
        assert!(wigner_pairing(a.matrix(), b.matrix(), &r, &grid).unwrap().norm() < 1e-6);
        let k = random_density(12, 12, 1).with_basis(r.tag()).unwrap();
        let l = random_density(12, 4, 2).with_basis(r.tag()).unwrap();
        let direct = trace_product(k.matrix(), l.matrix()).re;
        let grid_side = wigner_pairing(k.matrix(), l.matrix(), &r, &grid).unwrap().re;
        assert!((direct - grid_side).abs() < 1e-6);
    }

    #[test]
    fn translation_shifts_the_wigner_function() {
        let lambda = 1.0;
        let r = rep(24, lambda);
        let grid = PhaseSpaceGrid::default_for(lambda, 0.0);
        let k = embed(&random_density(6, 3, 4), &r);
        let (sx, sxi) = (5i64, -3i64);
        let pt = PhaseSpacePoint::d1(sx as f64 * grid.dx(), sxi as f64 * grid.dxi());
        let t = phase_space_translation(&r, &pt).unwrap();
        let moved = DensityOperator::from_computed(&(&t * k.matrix() * t.adjoint()), r.tag()).unwrap();
        let w = wigner(&k, &r, &grid).unwrap();
        let wm = wigner(&moved, &r, &grid).unwrap();
        let tol = grid_tol(&moved, &r);
        let mut worst = 0.0f64;
        for i in 0..grid.n_x {
            for j in 0..grid.n_xi {
                let (si, sj) = (i as i64 - sx, j as i64 - sxi);
                if si < 0 || sj < 0 || si >= grid.n_x as i64 || sj >= grid.n_xi as i64 {
                    continue;
                }
                worst = worst.max((wm.at(i, j) - w.at(si as usize, sj as usize)).abs());
            }
        }
        assert!(worst < tol, "{worst} vs {tol}");
    }

    #[test]
    fn gaussian_husimi_closed_form() {
        let r = rep(24, 1.0);
        let grid = PhaseSpaceGrid::default_for(1.0, 0.0);
        let g = fock_density(&r, &[0]).unwrap();
        let h = husimi(&g, &g, &r, &grid).unwrap();
        let ht = husimi_trace(&g, &g, &r, &grid).unwrap();
        let xs = grid.x_points();
        let mut worst = 0.0f64;
        let mut worst_t = 0.0f64;
        for (i, &q) in xs.iter().enumerate() {
            for (j, &p) in grid.xi_points().iter().enumerate() {
                let want = (-(q * q + p * p) / 2.0).exp() / (2.0 * std::f64::consts::PI);
                worst = worst.max((h.at(i, j) - want).abs());
                worst_t = worst_t.max((ht.at(i, j) - want).abs());
            }
        }
        assert!(worst < 1e-6, "convolution path {worst}");
        assert!(worst_t < 1e-12, "trace path {worst_t}");
        assert!((h.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn husimi_paths_agree_at_sample_points() {
        let r = rep(16, 1.0);
        let grid = PhaseSpaceGrid::default_for(1.0, 0.0);
        let k = embed(&random_density(8, 8, 5), &r);
        let rr = embed(&random_density(4, 2, 6), &r);
        let h = husimi(&k, &rr, &r, &grid).unwrap();
        let xs = grid.x_points();
        let xis = grid.xi_points();
        for (i, j) in [(64, 64), (50, 70), (80, 30), (64, 90), (20, 100)] {
            let t = husimi_trace_at(&k, &rr, &r, &PhaseSpacePoint::d1(xs[i], xis[j])).unwrap();
            let direct = {
                let d = displacement_exact(&r, &PhaseSpacePoint::d1(xs[i], xis[j]));
                trace_product(&(&d * rr.matrix() * d.adjoint()), k.matrix()).re
            };
            assert!((t * 2.0 * std::f64::consts::PI - direct).abs() < 1e-12);
            assert!((h.at(i, j) - t).abs() * 2.0 * std::f64::consts::PI < 1e-6, "({i},{j})");
        }
    }

    #[test]
    fn husimi_is_nonnegative() {
        let r = rep(12, 1.0);
        let grid = PhaseSpaceGrid::default_for(1.0, 0.0);
        let mut g = rng(7, 0);
        let rr = fock_density(&r, &[0]).unwrap();
        for _ in 0..5 {
            let k = random_density_from(&mut g, 12, 12).with_basis(r.tag()).unwrap();
            let h = husimi(&k, &rr, &r, &grid).unwrap();
            assert!(h.min() >= -1e-10, "{}", h.min());
        }
        // Autocorrelation of a Wigner function.
        let k = random_density_from(&mut g, 12, 3).with_basis(r.tag()).unwrap();
        assert!(husimi(&k, &k, &r, &grid).unwrap().min() >= -1e-10);
    }

    #[test]
    fn quantized_measure_and_convolution_identity() {
        let lambda = 1.0;
        let r = rep(24, lambda);
        let grid = PhaseSpaceGrid::default_for(lambda, 1.0);
        let rr = fock_density(&r, &[1]).unwrap();
        let mu = DiscreteMeasure::weighted(vec![
            (0.5, PhaseSpacePoint::d1(0.5, 0.0)),
            (0.3, PhaseSpacePoint::d1(-0.4, 0.7)),
            (0.2, PhaseSpacePoint::d1(0.1, -0.9)),
        ])
        .unwrap();
        let op = toeplitz_quantize(&rr, &r, &mu).unwrap();
        assert!((trace(op.matrix()).re - 1.0).abs() < 1e-8);
        let w = wigner(&op, &r, &grid).unwrap();
        let conv = measure_convolved_wigner(&rr, &r, &mu, &grid).unwrap();
        assert!(w.max_abs_diff(&conv) < grid_tol(&op, &r));

        let single = toeplitz_quantize(&rr, &r, &DiscreteMeasure::dirac(PhaseSpacePoint::d1(0.3, 0.2))).unwrap();
        let direct = translated_scaled_density(&r, &rr, &PhaseSpacePoint::d1(0.3, 0.2)).unwrap();
        assert!(frobenius(&(single.matrix() - direct.matrix())) < 1e-12);
    }

    #[test]
    fn toeplitz_reports_the_offending_atom() {
        let r = rep(8, 1.0);
        let g = fock_density(&r, &[0]).unwrap();
        let mu = DiscreteMeasure::weighted(vec![
            (0.5, PhaseSpacePoint::d1(0.0, 0.0)),
            (0.5, PhaseSpacePoint::d1(7.0, 0.0)),
        ])
        .unwrap();
        match toeplitz_quantize(&g, &r, &mu) {
            Err(Error::Truncation { what, .. }) => assert!(what.starts_with("atom 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resolution_of_identity_on_low_levels() {
        let r = rep(24, 1.0);
        let g = fock_density(&r, &[0]).unwrap();
        let quad = PhaseSpaceGrid::quadrature(6.0, 48).unwrap();
        let check = resolution_identity(&g, &r, &quad).unwrap();
        assert!(check.max_entry < 0.02, "{}", check.max_entry);
        assert!(check.spectral >= check.max_entry);
        assert!((check.block[(0, 0)].re - 1.0).abs() < 0.01);
        let fine = PhaseSpaceGrid::quadrature(6.0, 96).unwrap();
        let dev_fine = check_resolution_identity(&g, &r, &fine).unwrap();
        assert!(dev_fine <= check.max_entry * 1.1, "{dev_fine} vs {}", check.max_entry);
        // A wider box removes nearly all of the deviation.
        let wide = PhaseSpaceGrid::quadrature(8.0, 64).unwrap();
        assert!(check_resolution_identity(&g, &r, &wide).unwrap() < 1e-5);
    }

    #[test]
    fn field_csv_layout() {
        let grid = PhaseSpaceGrid::square(2.0, 16).unwrap();
        let f = PhaseSpaceField {
            grid,
            values: (0..256).map(|k| k as f64).collect(),
            kind: FieldKind::Generic,
            imag_max: 0.0,
        };
        let csv = f.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,xi,value");
        assert_eq!(lines.len(), 257);
        assert_eq!(lines[2], "-1.8750000000000000e0,-1.6250000000000000e0,1.0000000000000000e0");
    }

    #[test]
    fn measure_parsing() {
        let mu = DiscreteMeasure::parse("# two atoms\n0.25 1 0\n0.75 -1 0.5\n").unwrap();
        assert_eq!(mu.len(), 2);
        assert!((mu.mean().q[0] + 0.5).abs() < 1e-15);
        assert!(DiscreteMeasure::parse("0.5 1 0\n").is_err());
        assert!(matches!(DiscreteMeasure::parse("0.5 x 0\n0.5 1 1"), Err(Error::Parse(_))));
        assert!(DiscreteMeasure::new(vec![Atom {
            weight: -1.0,
            point: PhaseSpacePoint::d1(0.0, 0.0)
        }])
        .is_err());
    }

    #[test]
    fn coherent_husimi_is_a_shifted_gaussian() {
        let r = rep(24, 0.5);
        let grid = PhaseSpaceGrid::default_for(0.5, 1.0);
        let k = coherent_density(&r, &PhaseSpacePoint::d1(0.7, -0.4)).unwrap();
        let g = fock_density(&r, &[0]).unwrap().with_basis(BasisTag::Unspecified).unwrap();
        let g = g.with_basis(r.tag()).unwrap();
        let h = husimi_trace(&k, &g, &r, &grid).unwrap();
        let xs = grid.x_points();
        let xis = grid.xi_points();
        for (i, j) in [(10, 20), (64, 64), (70, 50)] {
            let (q, p) = (xs[i], xis[j]);
            let want = (-((q - 0.7).powi(2) + (p + 0.4).powi(2)) / (2.0 * 0.5)).exp() / (2.0 * std::f64::consts::PI * 0.5);
            assert!((h.at(i, j) - want).abs() < 1e-10);
        }
    }
}
