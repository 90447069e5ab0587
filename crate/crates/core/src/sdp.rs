//! ADMM solver for linear objectives over products of Hermitian PSD (or
//! free) blocks under affine equality constraints.
//!
//! The complex problem is solved through the real symmetric embedding
//! `X ↦ [[Re X, −Im X], [Im X, Re X]]`, with data scaled by 1/2 so that
//! Frobenius products of embeddings equal the complex trace products.

use std::f64::consts::SQRT_2;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, ComplexMatrix, C64, HERMITIAN_TOL};

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200_000;
const OVER_RELAXATION: f64 = 1.5;
const CHECK_EVERY: usize = 10;
const RHO_UPDATE_EVERY: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Psd,
    /// Unconstrained Hermitian.
    Free,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub dim: usize,
    pub kind: BlockKind,
}

/// A Hermitian matrix given by its nonzero entries. Both `(r, c)` and
/// `(c, r)` must be listed for off-diagonal entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseHermitian {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseHermitian {
    pub fn new(dim: usize) -> Self {
        SparseHermitian { dim, entries: Vec::new() }
    }

    /// Adds `k · A` where `⟨A, X⟩ = Re X[r, c]` for Hermitian `X`.
    pub fn add_re(&mut self, r: usize, c: usize, k: f64) {
        if r == c {
            self.entries.push((r, r, C64::new(k, 0.0)));
        } else {
            self.entries.push((r, c, C64::new(k / 2.0, 0.0)));
            self.entries.push((c, r, C64::new(k / 2.0, 0.0)));
        }
    }

    /// Adds `k · A` where `⟨A, X⟩ = Im X[r, c]` for Hermitian `X`.
    pub fn add_im(&mut self, r: usize, c: usize, k: f64) {
        if r != c {
            self.entries.push((r, c, C64::new(0.0, k / 2.0)));
            self.entries.push((c, r, C64::new(0.0, -k / 2.0)));
        }
    }

    pub fn to_dense(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// `tr(A X)`, real for Hermitian arguments.
    pub fn inner(&self, x: &ComplexMatrix) -> f64 {
        self.entries.iter().map(|&(r, c, v)| (v * x[(c, r)]).re).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// `(block index, A_{j,b})`.
    pub terms: Vec<(usize, SparseHermitian)>,
    pub rhs: f64,
}

/// `maximize Σ_b ⟨C_b, X_b⟩` subject to `Σ_b ⟨A_{j,b}, X_b⟩ = b_j`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub blocks: Vec<Block>,
    pub objective: Vec<ComplexMatrix>,
    pub constraints: Vec<Constraint>,
}

impl ConicProblem {
    pub fn add_block(&mut self, name: impl Into<String>, dim: usize, kind: BlockKind) -> usize {
        self.blocks.push(Block { name: name.into(), dim, kind });
        self.objective.push(ComplexMatrix::zeros(dim, dim));
        self.blocks.len() - 1
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} objective blocks for {} variable blocks",
                self.objective.len(),
                self.blocks.len()
            )));
        }
        for (b, c) in self.blocks.iter().zip(&self.objective) {
            if c.rows() != b.dim || c.cols() != b.dim {
                return Err(Error::DimensionMismatch(format!("objective for block `{}` is not {}x{}", b.name, b.dim, b.dim)));
            }
            let deviation = c.hermiticity_deviation();
            if deviation > HERMITIAN_TOL {
                return Err(Error::NotHermitian { deviation });
            }
        }
        for (j, con) in self.constraints.iter().enumerate() {
            for (b, a) in &con.terms {
                let block = self
                    .blocks
                    .get(*b)
                    .ok_or_else(|| Error::InvalidArgument(format!("constraint {j} names block {b}")))?;
                if a.dim != block.dim || a.entries.iter().any(|&(r, c, _)| r >= a.dim || c >= a.dim) {
                    return Err(Error::DimensionMismatch(format!("constraint {j} does not fit block `{}`", block.name)));
                }
                let deviation = a.to_dense().hermiticity_deviation();
                if deviation > HERMITIAN_TOL {
                    return Err(Error::NotHermitian { deviation });
                }
            }
        }
        Ok(())
    }

    /// `Σ_b ⟨C_b, X_b⟩`.
    pub fn objective_value(&self, x: &[ComplexMatrix]) -> f64 {
        self.objective.iter().zip(x).map(|(c, xb)| c.hs_inner(xb).re).sum()
    }

    /// `Σ_b ⟨A_{j,b}, X_b⟩ − b_j` for each constraint.
    pub fn constraint_residuals(&self, x: &[ComplexMatrix]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|con| con.terms.iter().map(|(b, a)| a.inner(&x[*b])).sum::<f64>() - con.rhs)
            .collect()
    }

    pub fn scaled_objective(&self, factor: f64) -> ConicProblem {
        let mut p = self.clone();
        for c in &mut p.objective {
            *c = c.scale_real(factor);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub eps: f64,
    pub max_iter: usize,
    pub rho: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { eps: DEFAULT_EPS, max_iter: DEFAULT_MAX_ITER, rho: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub value: f64,
    pub dual_value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub blocks: Vec<ComplexMatrix>,
    pub dual: Vec<f64>,
}

impl SolverResult {
    /// Smallest eigenvalue over the PSD blocks.
    pub fn min_psd_eigenvalue(&self, problem: &ConicProblem) -> Result<f64> {
        let mut m = f64::INFINITY;
        for (b, x) in problem.blocks.iter().zip(&self.blocks) {
            if b.kind == BlockKind::Psd {
                m = m.min(eigh(x)?.min());
            }
        }
        Ok(m)
    }
}

/// `[[Re X, −Im X], [Im X, Re X]]`.
pub fn hermitian_embed(x: &ComplexMatrix) -> Result<ComplexMatrix> {
    let deviation = x.hermiticity_deviation();
    if deviation > HERMITIAN_TOL * x.max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation });
    }
    let n = x.rows();
    Ok(ComplexMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = x[(r % n, c % n)];
        let v = match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        };
        C64::new(v, 0.0)
    }))
}

/// Inverse of the embedding up to the U(1) average, applied to a real
/// symmetric `2n × 2n` block stored row-major.
fn compress(z: &[f64], n: usize) -> ComplexMatrix {
    let m = 2 * n;
    ComplexMatrix::from_fn(n, n, |r, c| {
        let re = (z[r * m + c] + z[(r + n) * m + c + n]) / 2.0;
        let im = (z[(r + n) * m + c] - z[r * m + c + n]) / 2.0;
        C64::new(re, im)
    })
}

/// Row-major sparse symmetric matrix.
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.row_ptr.len() - 1)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }
}

/// The embedded problem in flat coordinates: each block is a dense
/// `2n × 2n` row-major slice of one long vector.
struct Embedded {
    offsets: Vec<usize>,
    real_dims: Vec<usize>,
    kinds: Vec<BlockKind>,
    len: usize,
    c: Vec<f64>,
    b: Vec<f64>,
    /// Constraint rows as sparse vectors over the flat coordinates.
    rows: Vec<(Vec<usize>, Vec<f64>)>,
    gram: Csr,
}

impl Embedded {
    fn new(p: &ConicProblem) -> Self {
        let mut offsets = Vec::with_capacity(p.blocks.len());
        let mut real_dims = Vec::with_capacity(p.blocks.len());
        let mut len = 0;
        for b in &p.blocks {
            offsets.push(len);
            real_dims.push(2 * b.dim);
            len += 4 * b.dim * b.dim;
        }
        let mut c = vec![0.0; len];
        for (bi, cb) in p.objective.iter().enumerate() {
            let n = p.blocks[bi].dim;
            let m = 2 * n;
            for r in 0..n {
                for col in 0..n {
                    let z = cb[(r, col)] * 0.5;
                    let o = offsets[bi];
                    c[o + r * m + col] += z.re;
                    c[o + (r + n) * m + col + n] += z.re;
                    c[o + r * m + col + n] -= z.im;
                    c[o + (r + n) * m + col] += z.im;
                }
            }
        }
        let mut rows = Vec::with_capacity(p.constraints.len());
        for con in &p.constraints {
            let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
            for (bi, a) in &con.terms {
                let n = p.blocks[*bi].dim;
                let m = 2 * n;
                let o = offsets[*bi];
                for &(r, col, v) in &a.entries {
                    let v = v * 0.5;
                    *acc.entry(o + r * m + col).or_default() += v.re;
                    *acc.entry(o + (r + n) * m + col + n).or_default() += v.re;
                    *acc.entry(o + r * m + col + n).or_default() -= v.im;
                    *acc.entry(o + (r + n) * m + col).or_default() += v.im;
                }
            }
            let (idx, val): (Vec<usize>, Vec<f64>) = acc.into_iter().filter(|(_, v)| *v != 0.0).unzip();
            rows.push((idx, val));
        }
        let b = p.constraints.iter().map(|c| c.rhs).collect();
        let gram = Self::gram(&rows, len);
        let kinds = p.blocks.iter().map(|b| b.kind).collect();
        Embedded { offsets, real_dims, kinds, len, c, b, rows, gram }
    }

    /// `A A*` assembled through the coordinates each row touches.
    fn gram(rows: &[(Vec<usize>, Vec<f64>)], len: usize) -> Csr {
        let mut by_coord: Vec<Vec<(usize, f64)>> = vec![Vec::new(); len];
        for (j, (idx, val)) in rows.iter().enumerate() {
            for (&i, &v) in idx.iter().zip(val) {
                by_coord[i].push((j, v));
            }
        }
        let mut entries: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); rows.len()];
        for list in &by_coord {
            for &(j, vj) in list {
                for &(k, vk) in list {
                    *entries[j].entry(k).or_default() += vj * vk;
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for e in entries {
            for (k, v) in e {
                cols.push(k);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Csr { row_ptr, cols, vals }
    }

    fn apply_a(&self, x: &[f64], out: &mut [f64]) {
        for (o, (idx, val)) in out.iter_mut().zip(&self.rows) {
            *o = idx.iter().zip(val).map(|(&i, &v)| v * x[i]).sum();
        }
    }

    /// `out = x − A* w`.
    fn sub_apply_at(&self, w: &[f64], out: &mut [f64]) {
        for ((idx, val), &wj) in self.rows.iter().zip(w) {
            if wj == 0.0 {
                continue;
            }
            for (&i, &v) in idx.iter().zip(val) {
                out[i] -= v * wj;
            }
        }
    }

    /// Preconditioned conjugate gradients on `A A* w = rhs`, warm started.
    fn solve_gram(&self, rhs: &[f64], w: &mut [f64], diag: &[f64]) {
        let m = rhs.len();
        let mut r = vec![0.0; m];
        self.gram.mul(w, &mut r);
        for i in 0..m {
            r[i] = rhs[i] - r[i];
        }
        let rhs_norm = norm(rhs);
        let tol = 1e-13 * (1.0 + rhs_norm);
        if norm(&r) <= tol {
            return;
        }
        let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; m];
        for _ in 0..(10 * m).max(100) {
            self.gram.mul(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..m {
                w[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= tol {
                break;
            }
            for i in 0..m {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
    }

    fn block<'a>(&self, v: &'a [f64], b: usize) -> &'a [f64] {
        let m = self.real_dims[b];
        &v[self.offsets[b]..self.offsets[b] + m * m]
    }

    /// Projects every PSD block onto the cone in place; free blocks are left alone.
    fn project_cone(&self, v: &mut [f64]) -> Result<()> {
        for b in 0..self.offsets.len() {
            if self.kinds[b] == BlockKind::Psd {
                let m = self.real_dims[b];
                let o = self.offsets[b];
                let slice = &mut v[o..o + m * m];
                let (pos, _) = split_spectrum(slice, m)?;
                slice.copy_from_slice(&pos);
            }
        }
        Ok(())
    }

    /// Frobenius norm of the cone violation of `S`: negative part on PSD
    /// blocks, everything on free blocks.
    fn dual_violation(&self, s: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for b in 0..self.offsets.len() {
            let m = self.real_dims[b];
            let blk = self.block(s, b);
            match self.kinds[b] {
                BlockKind::Free => total += blk.iter().map(|x| x * x).sum::<f64>(),
                BlockKind::Psd => {
                    let (_, neg) = split_spectrum(blk, m)?;
                    total += neg.iter().map(|x| x * x).sum::<f64>();
                }
            }
        }
        Ok(total.sqrt())
    }
}

/// Splits a real symmetric matrix into its positive and negative spectral parts.
fn split_spectrum(v: &[f64], m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = Mat::<f64>::from_fn(m, m, |r, c| 0.5 * (v[r * m + c] + v[c * m + r]));
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenFailure)?;
    let s = evd.S();
    let u = evd.U();
    let lam: Vec<f64> = (0..m).map(|k| s[k]).collect();
    let build = |keep: &dyn Fn(f64) -> bool| -> Vec<f64> {
        let cols: Vec<usize> = (0..m).filter(|&k| keep(lam[k])).collect();
        if cols.is_empty() {
            return vec![0.0; m * m];
        }
        let vs = Mat::<f64>::from_fn(m, cols.len(), |r, j| u[(r, cols[j])] * lam[cols[j]].abs().sqrt());
        let prod = &vs * vs.transpose();
        let sign = if keep(1.0) { 1.0 } else { -1.0 };
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] = sign * prod[(r, c)];
            }
        }
        out
    };
    Ok((build(&|l| l > 0.0), build(&|l| l < 0.0)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Residuals {
    primal: f64,
    dual: f64,
    gap: f64,
}

impl Residuals {
    fn worst(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

fn residuals(e: &Embedded, z: &[f64], y: &[f64], c_norm: f64, b_norm: f64) -> Result<Residuals> {
    let mut az = vec![0.0; e.b.len()];
    e.apply_a(z, &mut az);
    let pr: Vec<f64> = az.iter().zip(&e.b).map(|(a, b)| a - b).collect();
    // S = A* y − C
    let mut s: Vec<f64> = e.c.iter().map(|c| -c).collect();
    let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
    e.sub_apply_at(&neg_y, &mut s);
    let value = dot(&e.c, z);
    let dual_value = dot(&e.b, y);
    Ok(Residuals {
        primal: norm(&pr) / (1.0 + b_norm),
        // embedded data carry a factor 1/√2 in Frobenius norm relative to the complex problem
        dual: SQRT_2 * e.dual_violation(&s)? / (1.0 + SQRT_2 * c_norm),
        gap: (dual_value - value).abs() / (1.0 + value.abs() + dual_value.abs()),
    })
}

/// Solves the problem by over-relaxed ADMM with residual-balanced penalty.
///
/// Deterministic: identical inputs give bit-identical iterates. On
/// `max_iter` exhaustion the best checked iterate is returned with
/// `converged = false`.
pub fn solve(problem: &ConicProblem, opts: &SolverOptions) -> Result<SolverResult> {
    problem.validate()?;
    if opts.eps <= 0.0 || opts.rho <= 0.0 {
        return Err(Error::InvalidArgument("eps and rho must be positive".into()));
    }
    let e = Embedded::new(problem);
    let m = e.b.len();
    let len = e.len;
    let c_norm = norm(&e.c);
    let b_norm = norm(&e.b);
    let diag: Vec<f64> = e.gram.diagonal().into_iter().map(|d| if d > 0.0 { d } else { 1.0 }).collect();

    let mut rho = opts.rho;
    let mut z = vec![0.0; len];
    let mut u = vec![0.0; len];
    let mut x = vec![0.0; len];
    let mut w = vec![0.0; m];
    let mut av = vec![0.0; m];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        // affine projection of v = Z − U + C/ρ
        for i in 0..len {
            x[i] = z[i] - u[i] + e.c[i] / rho;
        }
        e.apply_a(&x, &mut av);
        for j in 0..m {
            av[j] -= e.b[j];
        }
        e.solve_gram(&av, &mut w, &diag);
        e.sub_apply_at(&w, &mut x);

        let z_old = if it % RHO_UPDATE_EVERY == 0 { Some(z.clone()) } else { None };
        let mut zhat = vec![0.0; len];
        for i in 0..len {
            zhat[i] = OVER_RELAXATION * x[i] + (1.0 - OVER_RELAXATION) * z[i];
        }
        let mut znew: Vec<f64> = zhat.iter().zip(&u).map(|(a, b)| a + b).collect();
        e.project_cone(&mut znew)?;
        for i in 0..len {
            u[i] += zhat[i] - znew[i];
        }
        z = znew;

        if it % CHECK_EVERY == 0 || it == opts.max_iter {
            let y: Vec<f64> = w.iter().map(|v| v * rho).collect();
            let res = residuals(&e, &z, &y, c_norm, b_norm)?;
            let worst = res.worst();
            if best.as_ref().is_none_or(|(bw, ..)| worst < *bw) {
                best = Some((worst, z.clone(), y, it));
            }
            if res.primal <= opts.eps && res.dual <= opts.eps && res.gap <= opts.eps {
                // accept only if the residuals recomputed on the returned blocks agree
                let y: Vec<f64> = w.iter().map(|v| v * rho).collect();
                let out = finish(problem, &e, &z, y, it, true)?;
                if out.primal_residual <= opts.eps && out.dual_residual <= opts.eps && out.gap <= opts.eps {
                    return Ok(out);
                }
            }
        }

        if let Some(z_old) = z_old {
            let r_norm: f64 = x.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let s_norm: f64 = rho * z.iter().zip(&z_old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let factor = if r_norm > 10.0 * s_norm {
                2.0
            } else if s_norm > 10.0 * r_norm {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                for v in &mut u {
                    *v /= factor;
                }
                for v in &mut w {
                    *v /= factor;
                }
            }
        }
    }

    let (_, z_out, y_out, _) = best.expect("at least one residual check ran");
    finish(problem, &e, &z_out, y_out, iterations, false)
}

/// Reports value and residuals recomputed from the returned complex blocks.
fn finish(
    problem: &ConicProblem,
    e: &Embedded,
    z: &[f64],
    y: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<SolverResult> {
    let blocks: Vec<ComplexMatrix> = problem
        .blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| compress(e.block(z, b), blk.dim))
        .collect();
    let value = problem.objective_value(&blocks);
    let b_norm = problem.constraints.iter().map(|c| c.rhs * c.rhs).sum::<f64>().sqrt();
    let primal = problem.constraint_residuals(&blocks).iter().map(|r| r * r).sum::<f64>().sqrt();
    let dual_value: f64 = problem.constraints.iter().zip(&y).map(|(c, yj)| c.rhs * yj).sum();
    // S_b = Σ_j y_j A_{j,b} − C_b
    let mut s: Vec<ComplexMatrix> = problem.objective.iter().map(|c| -c).collect();
    for (con, &yj) in problem.constraints.iter().zip(&y) {
        for (b, a) in &con.terms {
            for &(r, c, v) in &a.entries {
                s[*b][(r, c)] += v * yj;
            }
        }
    }
    let mut violation = 0.0;
    let c_norm = problem.objective.iter().map(|c| c.frobenius_norm().powi(2)).sum::<f64>().sqrt();
    for (blk, sb) in problem.blocks.iter().zip(&s) {
        match blk.kind {
            BlockKind::Free => violation += sb.frobenius_norm().powi(2),
            BlockKind::Psd => {
                violation += eigh(&sb.hermitian_part())?.values.iter().filter(|&&l| l < 0.0).map(|l| l * l).sum::<f64>()
            }
        }
    }
    Ok(SolverResult {
        value,
        dual_value,
        primal_residual: primal / (1.0 + b_norm),
        dual_residual: violation.sqrt() / (1.0 + c_norm),
        gap: (dual_value - value).abs() / (1.0 + value.abs() + dual_value.abs()),
        iterations,
        converged,
        blocks,
        dual: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::seeded_rng;
    use rand::Rng;

    /// `max ⟨C, X⟩` subject to `tr X = 1`, `X ⪰ 0`.
    fn lambda_max_problem(c: ComplexMatrix) -> ConicProblem {
        let n = c.rows();
        let mut p = ConicProblem::default();
        let b = p.add_block("x", n, BlockKind::Psd);
        p.objective[b] = c;
        let mut a = SparseHermitian::new(n);
        for i in 0..n {
            a.add_re(i, i, 1.0);
        }
        p.constraints.push(Constraint { terms: vec![(b, a)], rhs: 1.0 });
        p
    }

    #[test]
    fn embedding_examples() {
        assert_eq!(hermitian_embed(&ComplexMatrix::identity(2)).unwrap(), ComplexMatrix::identity(4));
        let sy = ComplexMatrix::from_vec(2, 2, vec![C64::new(0., 0.), C64::new(0., -1.), C64::new(0., 1.), C64::new(0., 0.)])
            .unwrap();
        let ev = eigh(&hermitian_embed(&sy).unwrap()).unwrap().values;
        for (got, want) in ev.iter().zip([1.0, 1.0, -1.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(hermitian_embed(&ComplexMatrix::real(2, 2, &[0., 1., 0., 0.])).is_err());
    }

    #[test]
    fn embedding_doubles_inner_products() {
        let mut rng = seeded_rng(41);
        for _ in 0..10 {
            let mut rand_h = || {
                ComplexMatrix::from_fn(4, 4, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .hermitian_part()
            };
            let (a, b) = (rand_h(), rand_h());
            let lhs = hermitian_embed(&a).unwrap().hs_inner(&hermitian_embed(&b).unwrap()).re;
            assert!((lhs - 2.0 * a.hs_inner(&b).re).abs() < 1e-12);
            let ea: Vec<f64> = hermitian_embed(&a).unwrap().data().iter().map(|z| z.re).collect();
            assert!((&compress(&ea, 4) - &a).max_abs() < 1e-15);
        }
    }

    #[test]
    fn sparse_functionals_read_entries() {
        let x = ComplexMatrix::from_vec(2, 2, vec![C64::new(2., 0.), C64::new(0.5, -0.25), C64::new(0.5, 0.25), C64::new(1., 0.)])
            .unwrap();
        let mut a = SparseHermitian::new(2);
        a.add_re(0, 1, 1.0);
        assert!((a.inner(&x) - 0.5).abs() < 1e-15);
        let mut a = SparseHermitian::new(2);
        a.add_im(0, 1, 1.0);
        assert!((a.inner(&x) + 0.25).abs() < 1e-15);
        assert!(a.to_dense().is_hermitian(0.0));
    }

    fn tight() -> SolverOptions {
        SolverOptions { eps: 1e-8, ..Default::default() }
    }

    #[test]
    fn lambda_max_diagonal() {
        let p = lambda_max_problem(ComplexMatrix::diag_real(&[3.0, 1.0, -2.0]));
        let r = solve(&p, &tight()).unwrap();
        assert!(r.converged);
        assert!((r.value - 3.0).abs() < 1e-6, "{r:?}");
        assert!(r.min_psd_eigenvalue(&p).unwrap() >= -1e-5);
    }

    #[test]
    fn lambda_max_sigma_x() {
        let p = lambda_max_problem(ComplexMatrix::real(2, 2, &[0., 1., 1., 0.]));
        let r = solve(&p, &tight()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-6);
        assert!(r.primal_residual <= 1e-8 && r.dual_residual <= 1e-8 && r.gap <= 1e-8);
    }

    #[test]
    fn lambda_max_random_complex() {
        let mut rng = seeded_rng(42);
        for n in [3, 6, 10] {
            let c = ComplexMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .hermitian_part();
            let lmax = eigh(&c).unwrap().max();
            let p = lambda_max_problem(c);
            let r = solve(&p, &SolverOptions::default()).unwrap();
            assert!(r.converged);
            assert!((r.value - lmax).abs() < 1e-5, "n={n}: {} vs {lmax}", r.value);
            assert!(r.gap >= -1e-5);
        }
    }

    #[test]
    fn free_block_is_unconstrained() {
        // max −x subject to x = −2 with x a free 1×1 block
        let mut p = ConicProblem::default();
        let f = p.add_block("f", 1, BlockKind::Free);
        p.objective[f] = ComplexMatrix::real(1, 1, &[-1.0]);
        let mut a = SparseHermitian::new(1);
        a.add_re(0, 0, 1.0);
        p.constraints.push(Constraint { terms: vec![(f, a)], rhs: -2.0 });
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-6);
        assert!((r.blocks[0][(0, 0)].re + 2.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_reruns() {
        let p = lambda_max_problem(ComplexMatrix::real(3, 3, &[1., 0.5, 0., 0.5, 2., 0.3, 0., 0.3, -1.]));
        let a = solve(&p, &SolverOptions::default()).unwrap();
        let b = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.blocks, b.blocks);
    }

    #[test]
    fn scaling_objective_scales_value() {
        let p = lambda_max_problem(ComplexMatrix::real(3, 3, &[1., 0.5, 0., 0.5, 2., 0.3, 0., 0.3, -1.]));
        let opts = SolverOptions::default();
        let a = solve(&p, &opts).unwrap();
        let b = solve(&p.scaled_objective(2.0), &opts).unwrap();
        assert!((b.value - 2.0 * a.value).abs() <= 2.0 * opts.eps * (1.0 + b.value.abs()));
        assert!(a.primal_residual <= opts.eps && b.primal_residual <= opts.eps);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let p = lambda_max_problem(ComplexMatrix::diag_real(&[3.0, 1.0, -2.0]));
        let r = solve(&p, &SolverOptions { max_iter: 3, ..Default::default() }).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn invalid_problems_rejected() {
        let mut p = lambda_max_problem(ComplexMatrix::identity(2));
        p.objective[0] = ComplexMatrix::real(2, 2, &[0., 1., 0., 0.]);
        assert!(solve(&p, &SolverOptions::default()).is_err());
        let mut p = lambda_max_problem(ComplexMatrix::identity(2));
        p.constraints[0].terms[0].0 = 5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn problem_json_round_trip() {
        let p = lambda_max_problem(ComplexMatrix::diag_real(&[1.0, 2.0]));
        let json = serde_json::to_string(&p).unwrap();
        let back: ConicProblem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn random_lambda_max_problems(seed in proptest::prelude::any::<u64>(), n in 2usize..6) {
            let mut rng = seeded_rng(seed);
            let c = ComplexMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .hermitian_part();
            let lmax = eigh(&c).unwrap().max();
            let p = lambda_max_problem(c);
            let eps = 1e-7;
            let r = solve(&p, &SolverOptions { eps, ..Default::default() }).unwrap();
            proptest::prop_assert!(r.converged);
            proptest::prop_assert!(r.gap >= -10.0 * eps);
            proptest::prop_assert!(r.min_psd_eigenvalue(&p).unwrap() >= -10.0 * eps);
            proptest::prop_assert!((r.value - lmax).abs() < 1e-4 * (1.0 + lmax.abs()));
            // the dual certificate bounds the value from above
            proptest::prop_assert!(r.dual_value >= lmax - 1e-4);
        }
    }
}
