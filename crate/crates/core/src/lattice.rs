//! Uniform grids, grid functions, the symmetric divergence-form discretization
//! of second-order operators, spectral fast paths for constant coefficients and
//! a dense eigendecomposition oracle for small grids.

use crate::error::{invalid, Error, Result};
use crate::jet::Jet;
use crate::vecops;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// Default memory budget for a single operator and its solver workspace.
pub const DEFAULT_MEMORY_BUDGET: usize = 8 << 30;
/// Largest problem handled by the dense eigen-oracle.
pub const ORACLE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

/// Uniform grid on `[-L, L]^d` with `m` cells per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub m: usize,
    pub h: f64,
    pub bc: Boundary,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, m: usize, bc: Boundary) -> Result<Self> {
        Self::with_budget(dim, half_width, m, bc, DEFAULT_MEMORY_BUDGET)
    }

    pub fn with_budget(dim: usize, half_width: f64, m: usize, bc: Boundary, budget: usize) -> Result<Self> {
        if dim == 0 || dim > crate::jet::MAX_DIM {
            return Err(invalid(format!("grid dimension {dim} unsupported")));
        }
        if m < 4 || m % 2 != 0 {
            return Err(invalid(format!("points per axis must be even and ≥ 4, got {m}")));
        }
        if !(half_width > 0.0) {
            return Err(invalid("half width must be positive"));
        }
        let g = Grid { dim, half_width, m, h: 2.0 * half_width / m as f64, bc };
        let needed = g.memory_estimate();
        if needed > budget {
            return Err(Error::MemoryBudget { needed, budget });
        }
        Ok(g)
    }

    /// Rough byte count for the matrix plus a restarted Krylov workspace.
    pub fn memory_estimate(&self) -> usize {
        let n = self.len();
        let stencil = 2 * self.dim * self.dim + 1;
        n.saturating_mul(stencil * 12 + 16 * 80)
    }

    /// Unknowns per axis.
    pub fn n_axis(&self) -> usize {
        match self.bc {
            Boundary::Dirichlet => self.m - 1,
            Boundary::Periodic => self.m,
        }
    }

    pub fn len(&self) -> usize {
        self.n_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of axis index `i`.
    pub fn axis_coord(&self, i: usize) -> f64 {
        match self.bc {
            Boundary::Dirichlet => -self.half_width + (i + 1) as f64 * self.h,
            Boundary::Periodic => -self.half_width + i as f64 * self.h,
        }
    }

    pub fn multi_index(&self, mut p: usize) -> Vec<usize> {
        let n = self.n_axis();
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = p % n;
            p /= n;
        }
        idx
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        let n = self.n_axis();
        idx.iter().fold(0, |acc, &i| acc * n + i)
    }

    pub fn coords(&self, p: usize) -> Vec<f64> {
        self.multi_index(p).iter().map(|&i| self.axis_coord(i)).collect()
    }

    /// Lowest eigenvalue of the flat discrete Laplacian (0 for periodic grids).
    pub fn lambda_box(&self) -> f64 {
        match self.bc {
            Boundary::Dirichlet => self.dim as f64 * self.axis_eigenvalues()[0],
            Boundary::Periodic => 0.0,
        }
    }

    /// Upper bound of the flat discrete spectrum.
    pub fn lambda_max(&self) -> f64 {
        4.0 * self.dim as f64 / (self.h * self.h)
    }

    /// Eigenvalues of the one-dimensional `-D^+D^-` on this axis, in transform order.
    pub fn axis_eigenvalues(&self) -> Vec<f64> {
        let h2 = self.h * self.h;
        match self.bc {
            Boundary::Dirichlet => (1..self.m)
                .map(|k| 2.0 / h2 * (1.0 - (std::f64::consts::PI * k as f64 / self.m as f64).cos()))
                .collect(),
            Boundary::Periodic => (0..self.m)
                .map(|k| 2.0 / h2 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / self.m as f64).cos()))
                .collect(),
        }
    }

    /// Continuum wave number of each transform index.
    pub fn axis_wavenumbers(&self) -> Vec<f64> {
        let len = 2.0 * self.half_width;
        match self.bc {
            Boundary::Dirichlet => (1..self.m).map(|k| std::f64::consts::PI * k as f64 / len).collect(),
            Boundary::Periodic => (0..self.m)
                .map(|k| {
                    let kk = if k <= self.m / 2 { k as f64 } else { k as f64 - self.m as f64 };
                    2.0 * std::f64::consts::PI * kk / len
                })
                .collect(),
        }
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Same box with `m` scaled by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Grid::new(self.dim, self.half_width, self.m * factor, self.bc)
    }
}

/// Complex values on the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub data: Vec<C64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    grid: Grid,
    len: usize,
    endianness: String,
    layout: String,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        GridFunction { grid: grid.clone(), data: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> C64 + Sync) -> Self {
        let data = (0..grid.len()).into_par_iter().map(|p| f(&grid.coords(p))).collect();
        GridFunction { grid: grid.clone(), data }
    }

    pub fn from_real_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn from_vec(grid: &Grid, data: Vec<C64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: data.len() });
        }
        Ok(GridFunction { grid: grid.clone(), data })
    }

    /// Discrete `L²` norm `(h^d Σ|u|²)^{1/2}`.
    pub fn l2(&self) -> f64 {
        vecops::norm(&self.data) * self.grid.cell_volume().sqrt()
    }

    /// Discrete inner product, antilinear in `self`.
    pub fn inner(&self, other: &GridFunction) -> C64 {
        vecops::dot(&self.data, &other.data) * self.grid.cell_volume()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Writes `path` (little-endian f64, interleaved re/im) and `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len() * 16);
        for v in &self.data {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        let side = Sidecar {
            grid: self.grid.clone(),
            len: self.data.len(),
            endianness: "little".into(),
            layout: "f64 interleaved re/im, row-major, last axis fastest".into(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let bytes = std::fs::read(path)?;
        if bytes.len() != side.len * 16 || side.len != side.grid.len() {
            return Err(Error::DimensionMismatch { expected: side.len * 16, got: bytes.len() });
        }
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                C64::new(re, im)
            })
            .collect();
        Ok(GridFunction { grid: side.grid, data })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Multiplies by `⟨x⟩^{-ν}` (`sign = +1`) or `⟨x⟩^{ν}` (`sign = -1`).
pub fn weight_apply(u: &GridFunction, nu: f64, sign: i32) -> GridFunction {
    let g = &u.grid;
    let e = -nu * sign as f64;
    let data = u
        .data
        .par_iter()
        .enumerate()
        .map(|(p, v)| {
            let x = g.coords(p);
            let b2 = 1.0 + x.iter().map(|c| c * c).sum::<f64>();
            v * b2.powf(0.5 * e)
        })
        .collect();
    GridFunction { grid: g.clone(), data }
}

/// Node values of `⟨x⟩^{-ν}`.
pub fn weight_vector(g: &Grid, nu: f64) -> Vec<f64> {
    (0..g.len())
        .into_par_iter()
        .map(|p| {
            let x = g.coords(p);
            (1.0 + x.iter().map(|c| c * c).sum::<f64>()).powf(-0.5 * nu)
        })
        .collect()
}

/// Coefficients of a formally symmetric operator `-∂_j(a_jk ∂_k) + v`,
/// written in non-divergence form as `-a_jk ∂_j∂_k + b_k ∂_k + v` with
/// `b_k = -∂_j a_jk`.
pub trait Coefficients: Send + Sync {
    fn dim(&self) -> usize;
    /// `a_jk(x)` row-major.
    fn principal(&self, x: &[f64]) -> Vec<f64>;
    fn principal_jet(&self, x: &[Jet]) -> Vec<Jet>;
    fn drift(&self, x: &[f64]) -> Vec<f64>;
    fn potential(&self, x: &[f64]) -> f64;
    fn is_flat(&self) -> bool {
        false
    }
    /// Whether the principal part must be positive definite (false for
    /// perturbation pieces assembled on their own).
    fn elliptic(&self) -> bool {
        true
    }
}

/// `-Δ`.
pub struct FlatCoefficients(pub usize);

impl Coefficients for FlatCoefficients {
    fn dim(&self) -> usize {
        self.0
    }
    fn principal(&self, _x: &[f64]) -> Vec<f64> {
        let d = self.0;
        (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()
    }
    fn principal_jet(&self, x: &[Jet]) -> Vec<Jet> {
        let d = self.0;
        (0..d * d).map(|i| x[0].cst(if i % (d + 1) == 0 { 1.0 } else { 0.0 })).collect()
    }
    fn drift(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }
    fn potential(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn is_flat(&self) -> bool {
        true
    }
}

/// Compressed sparse row matrix with real entries.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(n: usize, mut t: Vec<(u32, u32, f64)>) -> Self {
        t.par_sort_unstable_by_key(|&(r, c, _)| ((r as u64) << 32) | c as u64);
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(t.len() / 4);
        let mut vals: Vec<f64> = Vec::with_capacity(t.len() / 4);
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r as usize + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        match self.cols[a..b].binary_search(&(c as u32)) {
            Ok(i) => self.vals[a + i],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        y.par_chunks_mut(1024).enumerate().for_each(|(ci, chunk)| {
            let base = ci * 1024;
            for (k, out) in chunk.iter_mut().enumerate() {
                let r = base + k;
                let mut s = C64::new(0.0, 0.0);
                for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += x[self.cols[i] as usize] * self.vals[i];
                }
                *out = s;
            }
        });
    }

    /// `max |M_ij - M_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[i] as usize;
                worst = worst.max((self.vals[i] - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Gershgorin interval containing the spectrum of a symmetric matrix.
    pub fn gershgorin(&self) -> (f64, f64) {
        (0..self.n)
            .into_par_iter()
            .map(|r| {
                let (mut diag, mut off) = (0.0, 0.0);
                for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                    if self.cols[i] as usize == r {
                        diag += self.vals[i];
                    } else {
                        off += self.vals[i].abs();
                    }
                }
                (diag - off, diag + off)
            })
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)))
    }
}

/// Assembled discretization of a formally symmetric operator on a grid.
#[derive(Clone)]
pub struct DiscreteOperator {
    pub grid: Grid,
    pub matrix: CsrMatrix,
    /// constant coefficients: the flat Laplacian, eligible for the spectral fast path
    pub flat: bool,
    pub label: String,
}

impl std::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("grid", &self.grid)
            .field("nnz", &self.matrix.vals.len())
            .field("flat", &self.flat)
            .field("label", &self.label)
            .finish()
    }
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); x.len()];
        self.matrix.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        self.matrix.apply_into(x, y);
    }

    pub fn apply_fn(&self, u: &GridFunction) -> GridFunction {
        GridFunction { grid: u.grid.clone(), data: self.apply(&u.data) }
    }

    /// `⟨u, M u⟩` in the discrete `L²` pairing.
    pub fn form(&self, u: &[C64]) -> f64 {
        (vecops::dot(u, &self.apply(u)) * self.grid.cell_volume()).re
    }

    /// Sum of two operators on the same grid.
    pub fn sum(&self, other: &DiscreteOperator) -> Result<DiscreteOperator> {
        if self.grid != other.grid {
            return Err(invalid("operators live on different grids"));
        }
        let mut t = Vec::with_capacity(self.matrix.vals.len() + other.matrix.vals.len());
        for m in [&self.matrix, &other.matrix] {
            for r in 0..m.n {
                for i in m.row_ptr[r]..m.row_ptr[r + 1] {
                    t.push((r as u32, m.cols[i], m.vals[i]));
                }
            }
        }
        Ok(DiscreteOperator {
            grid: self.grid.clone(),
            matrix: CsrMatrix::from_triplets(self.len(), t),
            flat: false,
            label: format!("{}+{}", self.label, other.label),
        })
    }
}

/// Flat Laplacian `-Δ_h` on a grid.
pub fn flat_laplacian(grid: &Grid) -> DiscreteOperator {
    assemble_coefficients(&FlatCoefficients(grid.dim), grid, "flat").expect("flat assembly")
}

/// Symmetric divergence-form assembly of `-∂_j(a_jk ∂_k) + v`.
///
/// The quadratic form is `½ Σ_{s=±} Σ_nodes (D^s u)ᵀ a(x) (D^s u)` with one-sided
/// differences `D^±`, which averages coefficients onto half-nodes and is
/// nonnegative whenever `a` is positive definite at the nodes.
pub fn assemble_coefficients(c: &dyn Coefficients, grid: &Grid, label: &str) -> Result<DiscreteOperator> {
    let d = grid.dim;
    if c.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: c.dim() });
    }
    check_formal_symmetry(c, grid)?;
    let periodic = grid.bc == Boundary::Periodic;
    let nax = grid.n_axis() as i64;
    // extended node range: Dirichlet includes the boundary layer where u = 0
    let (lo, hi) = if periodic { (0i64, nax - 1) } else { (-1i64, nax) };
    let ext = (hi - lo + 1) as usize;
    let n_ext = ext.pow(d as u32);
    let inv_h = 1.0 / grid.h;
    let to_unknown = |idx: &[i64]| -> Option<u32> {
        let mut p = 0i64;
        for &i in idx {
            let j = if periodic { i.rem_euclid(nax) } else { i };
            if j < 0 || j >= nax {
                return None;
            }
            p = p * nax + j;
        }
        Some(p as u32)
    };
    let chunks: Vec<Vec<(u32, u32, f64)>> = (0..n_ext)
        .into_par_iter()
        .chunks(4096)
        .map(|ids| {
            let mut t = Vec::new();
            let mut idx = vec![0i64; d];
            for q in ids {
                let mut r = q;
                for a in (0..d).rev() {
                    idx[a] = lo + (r % ext) as i64;
                    r /= ext;
                }
                let x: Vec<f64> = idx
                    .iter()
                    .map(|&i| match grid.bc {
                        Boundary::Dirichlet => -grid.half_width + (i + 1) as f64 * grid.h,
                        Boundary::Periodic => -grid.half_width + i as f64 * grid.h,
                    })
                    .collect();
                let a = c.principal(&x);
                for s in [1i64, -1] {
                    // D^s_k u = s (u[i + s e_k] - u[i]) / h
                    let stencil: Vec<[(Option<u32>, f64); 2]> = (0..d)
                        .map(|k| {
                            let mut nb = idx.clone();
                            nb[k] += s;
                            [(to_unknown(&nb), s as f64 * inv_h), (to_unknown(&idx), -(s as f64) * inv_h)]
                        })
                        .collect();
                    for j in 0..d {
                        for k in 0..d {
                            let ajk = 0.5 * a[j * d + k];
                            if ajk == 0.0 {
                                continue;
                            }
                            for &(pj, cj) in &stencil[j] {
                                let Some(pj) = pj else { continue };
                                for &(pk, ck) in &stencil[k] {
                                    let Some(pk) = pk else { continue };
                                    t.push((pj, pk, ajk * cj * ck));
                                }
                            }
                        }
                    }
                }
                if let Some(p) = to_unknown(&idx) {
                    let v = c.potential(&x);
                    if v != 0.0 {
                        t.push((p, p, v));
                    }
                }
            }
            t
        })
        .collect();
    let triplets: Vec<(u32, u32, f64)> = chunks.into_iter().flatten().collect();
    let matrix = CsrMatrix::from_triplets(grid.len(), triplets);
    Ok(DiscreteOperator { grid: grid.clone(), matrix, flat: c.is_flat(), label: label.to_string() })
}

/// Asserts `b_k = -∂_j a_jk` and symmetric positive definite `a` on a sample of nodes.
fn check_formal_symmetry(c: &dyn Coefficients, grid: &Grid) -> Result<()> {
    let d = grid.dim;
    let n = grid.len();
    let step = (n / 97).max(1);
    for p in (0..n).step_by(step) {
        let x = grid.coords(p);
        let a = c.principal(&x);
        for j in 0..d {
            for k in 0..j {
                if (a[j * d + k] - a[k * d + j]).abs() > 1e-12 * (1.0 + a[j * d + k].abs()) {
                    return Err(Error::NotFormallySymmetric(format!("a not symmetric at {x:?}")));
                }
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(d, d, &a);
        let lo = nalgebra::SymmetricEigen::new(m).eigenvalues.min();
        if c.elliptic() && !(lo > 0.0) {
            return Err(Error::NotElliptic(format!("principal part eigenvalue {lo:.3e} at {x:?}")));
        }
        let aj = c.principal_jet(&Jet::seed(&x, 1));
        let b = c.drift(&x);
        for k in 0..d {
            let mut div = 0.0;
            for j in 0..d {
                let mut alpha = vec![0; d];
                alpha[j] = 1;
                div += aj[j * d + k].derivative(&alpha);
            }
            if (b[k] + div).abs() > 1e-9 * (1.0 + div.abs()) {
                return Err(Error::NotFormallySymmetric(format!(
                    "drift {:.3e} differs from -div a = {:.3e} at {x:?}",
                    b[k], -div
                )));
            }
        }
    }
    Ok(())
}

/// Plans for the separable transforms diagonalizing the flat Laplacian:
/// DST-I on Dirichlet grids and the DFT on periodic grids.
#[derive(Clone)]
pub struct FlatSpectral {
    pub grid: Grid,
    axis_eigs: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FlatSpectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlatSpectral").field("grid", &self.grid).finish()
    }
}

impl FlatSpectral {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let len = match grid.bc {
            Boundary::Dirichlet => 2 * grid.m,
            Boundary::Periodic => grid.m,
        };
        FlatSpectral {
            grid: grid.clone(),
            axis_eigs: grid.axis_eigenvalues(),
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    /// Eigenvalue of the flat operator for transform multi-index `p`.
    pub fn eigenvalue(&self, p: usize) -> f64 {
        self.grid.multi_index(p).iter().map(|&k| self.axis_eigs[k]).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.grid.len()).into_par_iter().map(|p| self.eigenvalue(p)).collect()
    }

    fn transform_axis(&self, data: &mut [C64], axis: usize, forward: bool) {
        let n = self.grid.n_axis();
        let d = self.grid.dim;
        let stride = n.pow((d - 1 - axis) as u32);
        let lines = data.len() / n;
        let line_start = |l: usize| (l / stride) * stride * n + (l % stride);
        let mut buf: Vec<C64> = (0..lines * n)
            .into_par_iter()
            .map(|q| {
                let (l, i) = (q / n, q % n);
                data[line_start(l) + i * stride]
            })
            .collect();
        match self.grid.bc {
            Boundary::Dirichlet => {
                let big = 2 * self.grid.m;
                buf.par_chunks_mut(n).for_each_init(
                    || vec![C64::new(0.0, 0.0); big],
                    |work, line| {
                        // odd extension: [0, x, 0, -rev(x)]
                        work[0] = C64::new(0.0, 0.0);
                        work[n + 1] = C64::new(0.0, 0.0);
                        for j in 0..n {
                            work[j + 1] = line[j];
                            work[big - 1 - j] = -line[j];
                        }
                        self.fwd.process(work);
                        for k in 0..n {
                            line[k] = work[k + 1] * C64::new(0.0, 0.5);
                        }
                    },
                );
                if !forward {
                    let s = 2.0 / self.grid.m as f64;
                    buf.par_iter_mut().for_each(|v| *v *= s);
                }
            }
            Boundary::Periodic => {
                let plan = if forward { &self.fwd } else { &self.inv };
                buf.par_chunks_mut(n).for_each(|line| plan.process(line));
                if !forward {
                    let s = 1.0 / n as f64;
                    buf.par_iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        data.par_iter_mut().enumerate().for_each(|(p, v)| {
            let block = p / (stride * n);
            let rem = p % (stride * n);
            let (i, off) = (rem / stride, rem % stride);
            let l = block * stride + off;
            *v = buf[l * n + i];
        });
    }

    pub fn forward(&self, data: &mut [C64]) {
        for a in 0..self.grid.dim {
            self.transform_axis(data, a, true);
        }
    }

    pub fn inverse(&self, data: &mut [C64]) {
        for a in 0..self.grid.dim {
            self.transform_axis(data, a, false);
        }
    }

    /// `f(M_flat) u` for a spectral multiplier `f`.
    pub fn apply<F: Fn(f64) -> C64 + Sync>(&self, u: &[C64], f: F) -> Vec<C64> {
        let mut w = u.to_vec();
        self.forward(&mut w);
        w.par_iter_mut().enumerate().for_each(|(p, v)| *v *= f(self.eigenvalue(p)));
        self.inverse(&mut w);
        w
    }

    /// Multiplier depending on the whole transform index (e.g. wave vectors).
    pub fn apply_indexed<F: Fn(usize) -> C64 + Sync>(&self, u: &[C64], f: F) -> Vec<C64> {
        let mut w = u.to_vec();
        self.forward(&mut w);
        w.par_iter_mut().enumerate().for_each(|(p, v)| *v *= f(p));
        self.inverse(&mut w);
        w
    }

    /// `(M_flat - z)^{-1} u`.
    pub fn resolvent(&self, u: &[C64], z: C64) -> Vec<C64> {
        self.apply(u, |l| 1.0 / (C64::new(l, 0.0) - z))
    }
}

/// Norm families on grid functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormKind {
    /// `L^p`, `p = ∞` allowed
    Lp(f64),
    /// `H^s` through `(1 + M_flat)^{s/2}`
    Hs(f64),
    /// `‖⟨x⟩^{-ν} u‖_{L²}`
    Weighted(f64),
}

pub fn discrete_norm(u: &GridFunction, kind: NormKind) -> f64 {
    let g = &u.grid;
    match kind {
        NormKind::Lp(p) if p.is_infinite() => vecops::max_abs(&u.data),
        NormKind::Lp(p) => {
            let s: f64 = vecops::chunked_sum(&u.data, |_, v| v.norm().powf(p));
            (s * g.cell_volume()).powf(1.0 / p)
        }
        NormKind::Hs(s) => {
            if s == 0.0 {
                return u.l2();
            }
            let sp = FlatSpectral::new(g);
            let w = sp.apply(&u.data, |l| C64::new((1.0 + l).powf(0.5 * s), 0.0));
            vecops::norm(&w) * g.cell_volume().sqrt()
        }
        NormKind::Weighted(nu) => weight_apply(u, nu, 1).l2(),
    }
}

/// `‖∇_h u‖²` with forward differences and zero extension (Dirichlet) or wrap (periodic).
pub fn gradient_norm_sq(u: &GridFunction) -> f64 {
    let lap = flat_laplacian(&u.grid);
    lap.form(&u.data)
}

/// Dense eigendecomposition of a small operator.
pub struct EigenOracle {
    pub grid: Grid,
    pub values: Vec<f64>,
    /// eigenvectors as columns, orthonormal in the Euclidean pairing
    pub vectors: faer::Mat<f64>,
}

impl std::fmt::Debug for EigenOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EigenOracle").field("grid", &self.grid).field("n", &self.values.len()).finish()
    }
}

pub fn dense_matrix(m: &DiscreteOperator) -> faer::Mat<f64> {
    let n = m.len();
    let mut a = faer::Mat::<f64>::zeros(n, n);
    for r in 0..n {
        for i in m.matrix.row_ptr[r]..m.matrix.row_ptr[r + 1] {
            a[(r, m.matrix.cols[i] as usize)] = m.matrix.vals[i];
        }
    }
    a
}

pub fn eigen_oracle(m: &DiscreteOperator) -> Result<EigenOracle> {
    let n = m.len();
    if n > ORACLE_CAP {
        return Err(Error::OracleTooLarge(n));
    }
    let a = dense_matrix(m);
    let evd = a.self_adjoint_eigen(faer::Side::Lower).map_err(|_| Error::Eigen)?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..n).map(|i| s[i]).collect();
    Ok(EigenOracle { grid: m.grid.clone(), values, vectors: evd.U().to_owned() })
}

impl EigenOracle {
    /// Coefficients `Qᵀ u`.
    pub fn project(&self, u: &[C64]) -> Vec<C64> {
        let n = self.values.len();
        let (re, im) = split(u);
        let cr = self.vectors.transpose() * &re;
        let ci = self.vectors.transpose() * &im;
        (0..n).map(|i| C64::new(cr[i], ci[i])).collect()
    }

    /// `Q c`.
    pub fn synthesize(&self, c: &[C64]) -> Vec<C64> {
        let n = self.values.len();
        let (re, im) = split(c);
        let vr = &self.vectors * &re;
        let vi = &self.vectors * &im;
        (0..n).map(|i| C64::new(vr[i], vi[i])).collect()
    }

    /// `f(M) u = Q f(Λ) Qᵀ u`.
    pub fn apply<F: Fn(f64) -> C64>(&self, u: &[C64], f: F) -> Vec<C64> {
        let mut c = self.project(u);
        for (ci, l) in c.iter_mut().zip(&self.values) {
            *ci *= f(*l);
        }
        self.synthesize(&c)
    }

    /// `‖M - QΛQᵀ‖_max / ‖M‖_max`.
    pub fn reconstruction_error(&self, m: &DiscreteOperator) -> f64 {
        let n = self.values.len();
        let q = &self.vectors;
        let mut scaled = q.clone();
        for j in 0..n {
            for i in 0..n {
                scaled[(i, j)] *= self.values[j];
            }
        }
        let rec = &scaled * q.transpose();
        let a = dense_matrix(m);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((rec[(i, j)] - a[(i, j)]).abs());
            }
        }
        worst / m.matrix.max_abs()
    }

    /// Dense matrix `Q diag(f(λ)) Qᵀ` for real-valued `f`.
    pub fn function_matrix<F: Fn(f64) -> f64>(&self, f: F) -> faer::Mat<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let v = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= v;
            }
        }
        &scaled * self.vectors.transpose()
    }
}

fn split(u: &[C64]) -> (faer::Col<f64>, faer::Col<f64>) {
    let n = u.len();
    (faer::Col::from_fn(n, |i| u[i].re), faer::Col::from_fn(n, |i| u[i].im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn grid_arithmetic() {
        let g = Grid::new(3, 24.0, 48, Boundary::Dirichlet).unwrap();
        assert_eq!(g.h, 1.0);
        assert_eq!(g.len(), 47 * 47 * 47);
        let cont = 3.0 * (std::f64::consts::PI / 48.0).powi(2);
        assert!((g.lambda_box() - cont).abs() < 0.05 * cont);
        assert!(Grid::new(3, 1.0, 7, Boundary::Dirichlet).is_err());
        assert!(matches!(Grid::new(3, 1.0, 4096, Boundary::Dirichlet), Err(Error::MemoryBudget { .. })));
    }

    #[test]
    fn flat_stencil_is_standard() {
        let g = Grid::new(3, 2.0, 8, Boundary::Dirichlet).unwrap();
        let m = flat_laplacian(&g);
        let p = g.linear_index(&[3, 3, 3]);
        assert_relative_eq!(m.matrix.get(p, p), 6.0 / (g.h * g.h), epsilon = 1e-12);
        assert_relative_eq!(m.matrix.get(p, g.linear_index(&[2, 3, 3])), -1.0 / (g.h * g.h), epsilon = 1e-12);
        assert_eq!(m.matrix.get(p, g.linear_index(&[2, 2, 3])), 0.0);
        // boundary-adjacent node keeps the full diagonal
        let b = g.linear_index(&[0, 0, 0]);
        assert_relative_eq!(m.matrix.get(b, b), 6.0 / (g.h * g.h), epsilon = 1e-12);
        assert_eq!(m.matrix.row_ptr[p + 1] - m.matrix.row_ptr[p], 7);
        assert!(m.matrix.asymmetry() <= 1e-12);
    }

    #[test]
    fn periodic_one_dimensional_spectrum() {
        let g = Grid::new(1, std::f64::consts::PI, 8, Boundary::Periodic).unwrap();
        let o = eigen_oracle(&flat_laplacian(&g)).unwrap();
        let mut expect: Vec<f64> = (0..8).map(|k| 2.0 / (g.h * g.h) * (1.0 - (k as f64 * g.h).cos())).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in o.values.iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn spectral_transforms_invert_and_diagonalize() {
        for bc in [Boundary::Dirichlet, Boundary::Periodic] {
            let g = Grid::new(3, 3.0, 8, bc).unwrap();
            let sp = FlatSpectral::new(&g);
            let u = random(g.len(), 3);
            let mut w = u.clone();
            sp.forward(&mut w);
            sp.inverse(&mut w);
            assert!(vecops::rel_diff(&w, &u) < 1e-13);
            let m = flat_laplacian(&g);
            let z = C64::new(0.3, 0.2);
            let r = sp.resolvent(&u, z);
            let mut back = m.apply(&r);
            vecops::axpy(-z, &r, &mut back);
            assert!(vecops::rel_diff(&back, &u) < 1e-12, "{bc:?}");
        }
    }

    #[test]
    fn oracle_reconstructs() {
        let g = Grid::new(2, 2.0, 10, Boundary::Dirichlet).unwrap();
        let m = flat_laplacian(&g);
        let o = eigen_oracle(&m).unwrap();
        assert!(o.reconstruction_error(&m) < 1e-8);
        assert!(o.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn weights_are_involutive() {
        let g = Grid::new(2, 4.0, 8, Boundary::Periodic).unwrap();
        let u = GridFunction::from_vec(&g, random(g.len(), 1)).unwrap();
        let back = weight_apply(&weight_apply(&u, 2.5, 1), 2.5, -1);
        assert!(vecops::rel_diff(&back.data, &u.data) < 1e-14);
        let origin = g.linear_index(&[4, 4]);
        assert_eq!(g.coords(origin), vec![0.0, 0.0]);
        assert_eq!(weight_vector(&g, 3.0)[origin], 1.0);
    }

    #[test]
    fn gaussian_norms() {
        let g = Grid::new(3, 8.0, 64, Boundary::Dirichlet).unwrap();
        let u = GridFunction::from_real_fn(&g, |x| (-x.iter().map(|c| c * c).sum::<f64>()).exp());
        // ∫ e^{-2|x|²} = (π/2)^{3/2}
        let expect = (std::f64::consts::PI / 2.0).powf(0.75);
        assert_relative_eq!(discrete_norm(&u, NormKind::Lp(2.0)), expect, max_relative = 1e-3);
        assert_eq!(discrete_norm(&u, NormKind::Hs(0.0)), u.l2());
        assert_eq!(discrete_norm(&u, NormKind::Lp(f64::INFINITY)), 1.0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let g = Grid::new(2, 1.0, 4, Boundary::Dirichlet).unwrap();
        let u = GridFunction::from_vec(&g, random(g.len(), 9)).unwrap();
        let dir = std::env::temp_dir().join(format!("specres-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("u.bin");
        u.save(&path).unwrap();
        assert_eq!(GridFunction::load(&path).unwrap(), u);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
