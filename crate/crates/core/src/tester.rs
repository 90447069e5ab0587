//! The learning network as a two-outcome tester `{L₀, L₁}` on
//! `(rin, out₁, in₁, …, out_N, in_N)`, optimized under parallel or
//! adaptive (comb) normalization.
//!
//! Every `Ω_i` is block diagonal in the classical outputs, so only the
//! output-diagonal blocks of `L_i` enter the objective and the
//! normalization is unaffected by dephasing them. The programs are
//! therefore posed over blocks `Λ_{i,s}` on `rin ⊗ in₁ ⊗ … ⊗ in_N`, one
//! per output string `s`, with `L_i = Σ_s |s⟩⟨s| ⊗ Λ_{i,s}`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    contract_second, eigh, embed_with_identity, kron_power, partial_trace, ComplexMatrix, Role, SubsystemShape, C64,
};
use crate::pbt::{Method, SchemeId, SchemeReport};
use crate::pgls::pgls_effect;
use crate::quantum::{choi_vn, Povm, VonNeumannMeasurement};
use crate::sdp::{solve, BlockKind, ConicProblem, Constraint, SolverOptions, SolverResult, SparseHermitian};
use crate::twirl::{objective_operator, objective_shape, TwirledObjective};

/// Largest `N` solved without an explicit opt-in.
pub const DEFAULT_MAX_USES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TesterKind {
    Parallel,
    Adaptive,
}

impl TesterKind {
    pub fn scheme(self) -> SchemeId {
        match self {
            TesterKind::Parallel => SchemeId::ParallelSdp,
            TesterKind::Adaptive => SchemeId::AdaptiveSdp,
        }
    }
}

impl fmt::Display for TesterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TesterKind::Parallel => "parallel",
            TesterKind::Adaptive => "adaptive",
        })
    }
}

impl std::str::FromStr for TesterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parallel" => Ok(TesterKind::Parallel),
            "adaptive" => Ok(TesterKind::Adaptive),
            _ => Err(Error::InvalidArgument(format!("unknown tester kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesterVariables {
    pub n: usize,
    pub kind: TesterKind,
    pub l_effects: Vec<ComplexMatrix>,
    pub shape: SubsystemShape,
    /// `[σ]` for parallel testers, `[Γ⁽¹⁾, …, Γ⁽ᴺ⁾]` for adaptive ones.
    pub aux: Vec<ComplexMatrix>,
}

/// Deviations of a tester from its normalization conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub min_eigenvalue: f64,
    /// Largest entry of `Σ_i L_i` minus the required normalization.
    pub sum_residual: f64,
    /// Largest entry in the comb chain `tr_{in_k} Γ⁽ᵏ⁾ = I ⊗ Γ⁽ᵏ⁻¹⁾`.
    pub chain_residual: f64,
    /// `|tr σ − 1|` or `|tr Γ⁽¹⁾ − 1|`.
    pub trace_error: f64,
    pub total_trace: f64,
}

impl Feasibility {
    pub fn max_violation(&self) -> f64 {
        (-self.min_eigenvalue).max(0.0).max(self.sum_residual).max(self.chain_residual).max(self.trace_error)
    }
}

/// Factors of `Γ⁽ᵏ⁾`: `(out₁, in₁, …, out_{k−1}, in_{k−1}, in_k)`.
pub fn comb_shape(k: usize) -> SubsystemShape {
    let mut factors = Vec::new();
    for j in 1..k {
        factors.push((Role::MeasOut(j), 2));
        factors.push((Role::MeasIn(j), 2));
    }
    factors.push((Role::MeasIn(k), 2));
    SubsystemShape::new(factors).expect("distinct roles")
}

fn outs(n: usize) -> Vec<Role> {
    (1..=n).map(Role::MeasOut).collect()
}

fn ins(n: usize) -> Vec<Role> {
    (1..=n).map(Role::MeasIn).collect()
}

/// Diagonal blocks of `x` over the classical factors `classical` (each of
/// dimension 2, first listed most significant); the remaining factors keep
/// their order.
pub fn pinch_blocks(x: &ComplexMatrix, shape: &SubsystemShape, classical: &[Role]) -> Result<Vec<ComplexMatrix>> {
    shape.check_square(x)?;
    let cls = shape.positions(classical)?;
    let cls_off = shape.offsets(&cls);
    let rest_off = shape.offsets(&shape.complement(&cls));
    let m = rest_off.len();
    Ok(cls_off
        .iter()
        .map(|&o| ComplexMatrix::from_fn(m, m, |r, c| x[(o + rest_off[r], o + rest_off[c])]))
        .collect())
}

/// `Σ_s |s⟩⟨s| ⊗ blocks[s]`, the inverse of [`pinch_blocks`] on
/// block-diagonal operators.
pub fn unpinch(blocks: &[ComplexMatrix], shape: &SubsystemShape, classical: &[Role]) -> Result<ComplexMatrix> {
    let cls = shape.positions(classical)?;
    let cls_off = shape.offsets(&cls);
    let rest_off = shape.offsets(&shape.complement(&cls));
    if blocks.len() != cls_off.len() || blocks.iter().any(|b| b.rows() != rest_off.len() || !b.is_square()) {
        return Err(Error::DimensionMismatch(format!(
            "expected {} blocks of size {}",
            cls_off.len(),
            rest_off.len()
        )));
    }
    let n = shape.total_dim();
    let mut out = ComplexMatrix::zeros(n, n);
    for (b, &o) in blocks.iter().zip(&cls_off) {
        for (r, &ro) in rest_off.iter().enumerate() {
            for (c, &co) in rest_off.iter().enumerate() {
                out[(o + ro, o + co)] = b[(r, c)];
            }
        }
    }
    Ok(out)
}

/// One real equality per independent real parameter of a Hermitian
/// `dim × dim` identity `Σ_terms coef · X_block[row, col] = rhs[r, c]`.
/// `terms(r, c)` lists `(block, row, col, coef)` for the entry `(r, c)`.
fn equate(
    p: &mut ConicProblem,
    dim: usize,
    terms: impl Fn(usize, usize) -> Vec<(usize, usize, usize, f64)>,
    rhs: impl Fn(usize, usize) -> C64,
) {
    for r in 0..dim {
        for c in r..dim {
            let t = terms(r, c);
            let parts: [(fn(&mut SparseHermitian, usize, usize, f64), f64); 2] =
                [(SparseHermitian::add_re, rhs(r, c).re), (SparseHermitian::add_im, rhs(r, c).im)];
            for (k, (add, b)) in parts.into_iter().enumerate() {
                if k == 1 && r == c {
                    continue;
                }
                let mut by_block: BTreeMap<usize, SparseHermitian> = BTreeMap::new();
                for &(blk, row, col, coef) in &t {
                    let a = by_block.entry(blk).or_insert_with(|| SparseHermitian::new(p.blocks[blk].dim));
                    add(a, row, col, coef);
                }
                p.constraints.push(Constraint { terms: by_block.into_iter().collect(), rhs: b });
            }
        }
    }
}

/// Adds the `Λ_{i,s}` blocks with objective `(1/2)(Ω_i)_{ss}ᵀ` and returns
/// their indices as `[i][s]`.
fn add_effect_blocks(p: &mut ConicProblem, omega: &TwirledObjective) -> Result<Vec<Vec<usize>>> {
    let n = omega.n;
    let mut idx = vec![Vec::new(); 2];
    for (i, o) in omega.omega.iter().enumerate() {
        for (s, block) in pinch_blocks(o, &omega.shape, &outs(n))?.into_iter().enumerate() {
            let b = p.add_block(format!("L{i}[{s}]"), 1 << (n + 1), BlockKind::Psd);
            p.objective[b] = block.transpose().scale_real(0.5);
            idx[i].push(b);
        }
    }
    Ok(idx)
}

/// `Λ_{0,s} + Λ_{1,s} − I_rin ⊗ G = 0` with `G` the block `g`.
fn equate_sum(p: &mut ConicProblem, lam: &[Vec<usize>], s: usize, g: usize) {
    let dim = p.blocks[lam[0][s]].dim;
    let half = dim / 2;
    let (l0, l1) = (lam[0][s], lam[1][s]);
    equate(
        p,
        dim,
        |r, c| {
            let mut t = vec![(l0, r, c, 1.0), (l1, r, c, 1.0)];
            if r / half == c / half {
                t.push((g, r % half, c % half, -1.0));
            }
            t
        },
        |_, _| C64::new(0.0, 0.0),
    );
}

fn trace_one(p: &mut ConicProblem, b: usize) {
    let mut a = SparseHermitian::new(p.blocks[b].dim);
    for i in 0..p.blocks[b].dim {
        a.add_re(i, i, 1.0);
    }
    p.constraints.push(Constraint { terms: vec![(b, a)], rhs: 1.0 });
}

fn check_objective(n: usize, omega: &TwirledObjective) -> Result<()> {
    if omega.n != n || n == 0 {
        return Err(Error::InvalidArgument(format!("objective is for N = {}, requested N = {n}", omega.n)));
    }
    Ok(())
}

/// `max (1/2) Σ_i ⟨L_iᵀ, Ω_i⟩` subject to `Σ_i L_i = I_rin ⊗ I_outs ⊗ σ`,
/// `tr σ = 1`.
pub fn parallel_problem(n: usize, omega: &TwirledObjective) -> Result<ConicProblem> {
    check_objective(n, omega)?;
    let mut p = ConicProblem::default();
    let lam = add_effect_blocks(&mut p, omega)?;
    let sigma = p.add_block("sigma", 1 << n, BlockKind::Psd);
    for s in 0..(1 << n) {
        equate_sum(&mut p, &lam, s, sigma);
    }
    trace_one(&mut p, sigma);
    Ok(p)
}

/// Same objective under the comb chain
/// `Σ_i L_i = I_{rin, out_N} ⊗ Γ⁽ᴺ⁾`, `tr_{in_k} Γ⁽ᵏ⁾ = I_{out_{k−1}} ⊗ Γ⁽ᵏ⁻¹⁾`,
/// `tr Γ⁽¹⁾ = 1`. Each `Γ⁽ᵏ⁾` is likewise split over `out₁ … out_{k−1}`.
pub fn adaptive_problem(n: usize, omega: &TwirledObjective) -> Result<ConicProblem> {
    check_objective(n, omega)?;
    let mut p = ConicProblem::default();
    let lam = add_effect_blocks(&mut p, omega)?;
    // gamma[k-1][t] for prefixes t of length k-1
    let mut gamma: Vec<Vec<usize>> = Vec::with_capacity(n);
    for k in 1..=n {
        gamma.push((0..(1 << (k - 1))).map(|t| p.add_block(format!("G{k}[{t}]"), 1 << k, BlockKind::Psd)).collect());
    }
    for s in 0..(1 << n) {
        equate_sum(&mut p, &lam, s, gamma[n - 1][s >> 1]);
    }
    for k in (2..=n).rev() {
        for t in 0..(1 << (k - 1)) {
            let (hi, lo) = (gamma[k - 1][t], gamma[k - 2][t >> 1]);
            equate(
                &mut p,
                1 << (k - 1),
                |r, c| vec![(hi, 2 * r, 2 * c, 1.0), (hi, 2 * r + 1, 2 * c + 1, 1.0), (lo, r, c, -1.0)],
                |_, _| C64::new(0.0, 0.0),
            );
        }
    }
    trace_one(&mut p, gamma[0][0]);
    Ok(p)
}

/// Builds full operators from a solved problem.
fn assemble(kind: TesterKind, n: usize, p: &ConicProblem, x: &[ComplexMatrix]) -> Result<TesterVariables> {
    let shape = objective_shape(n);
    let get = |name: String| -> Result<ComplexMatrix> {
        let b = p.block_index(&name).ok_or_else(|| Error::InvalidArgument(format!("missing block `{name}`")))?;
        Ok(x[b].clone())
    };
    let mut l_effects = Vec::with_capacity(2);
    for i in 0..2 {
        let blocks = (0..(1usize << n)).map(|s| get(format!("L{i}[{s}]"))).collect::<Result<Vec<_>>>()?;
        l_effects.push(unpinch(&blocks, &shape, &outs(n))?);
    }
    let aux = match kind {
        TesterKind::Parallel => vec![get("sigma".into())?],
        TesterKind::Adaptive => (1..=n)
            .map(|k| {
                let blocks = (0..(1usize << (k - 1))).map(|t| get(format!("G{k}[{t}]"))).collect::<Result<Vec<_>>>()?;
                unpinch(&blocks, &comb_shape(k), &outs(k - 1))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(TesterVariables { n, kind, l_effects, shape, aux })
}

impl TesterVariables {
    /// Checks the normalization with dense partial traces on the full
    /// operators, independently of the block formulation.
    pub fn feasibility(&self) -> Result<Feasibility> {
        let n = self.n;
        let mut min_eigenvalue = f64::INFINITY;
        for l in self.l_effects.iter().chain(&self.aux) {
            min_eigenvalue = min_eigenvalue.min(eigh(&l.hermitian_part())?.min());
        }
        let sum = &self.l_effects[0] + &self.l_effects[1];
        let total_trace = sum.trace().re;
        let mut chain_residual: f64 = 0.0;
        let (required, trace_error) = match self.kind {
            TesterKind::Parallel => {
                let sigma = &self.aux[0];
                (embed_with_identity(sigma, &self.shape, &ins(n))?, (sigma.trace().re - 1.0).abs())
            }
            TesterKind::Adaptive => {
                let top = comb_shape(n);
                let required = embed_with_identity(&self.aux[n - 1], &self.shape, &top.roles())?;
                for k in (2..=n).rev() {
                    let shape_k = comb_shape(k);
                    let mut keep = shape_k.roles();
                    keep.retain(|r| *r != Role::MeasIn(k));
                    let reduced = partial_trace(&self.aux[k - 1], &shape_k, &keep)?;
                    let expect = embed_with_identity(&self.aux[k - 2], &shape_k.select(&shape_k.positions(&keep)?), &comb_shape(k - 1).roles())?;
                    chain_residual = chain_residual.max((&reduced - &expect).max_abs());
                }
                (required, (self.aux[0].trace().re - 1.0).abs())
            }
        };
        Ok(Feasibility {
            min_eigenvalue,
            sum_residual: (&sum - &required).max_abs(),
            chain_residual,
            trace_error,
            total_trace,
        })
    }

    /// `(1/2) Σ_i tr(L_iᵀ Ω_i)`.
    pub fn score(&self, omega: &TwirledObjective) -> Result<f64> {
        omega.evaluate(&self.l_effects)
    }

    /// `{X L₁ X, X L₀ X}` with `X = σ_x` on every factor, which maps the
    /// objective onto itself.
    pub fn relabeled(&self) -> Result<TesterVariables> {
        let x = kron_power(&crate::quantum::sigma_x(), 2 * self.n + 1);
        let mut out = self.clone();
        out.l_effects = vec![self.l_effects[1].conjugate_by(&x)?, self.l_effects[0].conjugate_by(&x)?];
        Ok(out)
    }
}

/// `Q_{U,i} = tr_rest[(I ⊗ P_U^{⊗N}) L_iᵀ]`, so that
/// `tr(ρ Q_{U,i}) = tr(L_iᵀ (ρ ⊗ P_U^{⊗N}))`.
pub fn retrieved_povm(vars: &TesterVariables, u: &VonNeumannMeasurement) -> Result<Povm> {
    if u.dim() != 2 {
        return Err(Error::InvalidArgument("testers are defined for qubit measurements".into()));
    }
    let b = kron_power(&choi_vn(u).matrix, vars.n);
    let effects = vars
        .l_effects
        .iter()
        .map(|l| Ok(contract_second(&l.transpose(), 2, &b)?.hermitian_part()))
        .collect::<Result<Vec<_>>>()?;
    Povm::new(2, effects)
}

/// The closed-form scheme as a parallel tester: half of `|ω⟩` per use,
/// majority vote, and the retrieval effect on `rin` and the majority copies.
/// Each `Λ_{i,s} = (E_s⁽ⁱ⁾)ᵀ / 2ᴺ` and `σ = I / 2ᴺ`.
pub fn pgls_tester(n: usize) -> Result<TesterVariables> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let mut local = vec![(Role::RetrievalIn, 2)];
    local.extend(ins(n).into_iter().map(|r| (r, 2)));
    let local = SubsystemShape::new(local)?;
    let dim = local.total_dim();
    let norm = 1.0 / (1u64 << n) as f64;
    let mut blocks = vec![Vec::new(), Vec::new()];
    for s in 0..(1usize << n) {
        // out₁ is the most significant bit
        let bits: Vec<usize> = (0..n).map(|k| (s >> (n - 1 - k)) & 1).collect();
        let ones = bits.iter().filter(|&&b| b == 1).count();
        let label = usize::from(ones > n - ones);
        let mut at = vec![Role::RetrievalIn];
        at.extend((0..n).filter(|&k| bits[k] == label).map(|k| Role::MeasIn(k + 1)));
        let r = pgls_effect(at.len() - 1)?.r;
        let hit = embed_with_identity(&r, &local, &at)?;
        let miss = &ComplexMatrix::identity(dim) - &hit;
        let (e0, e1) = if label == 0 { (hit, miss) } else { (miss, hit) };
        blocks[0].push(e0.transpose().scale_real(norm));
        blocks[1].push(e1.transpose().scale_real(norm));
    }
    let shape = objective_shape(n);
    let l_effects = blocks.iter().map(|b| unpinch(b, &shape, &outs(n))).collect::<Result<Vec<_>>>()?;
    let sigma = ComplexMatrix::identity(1 << n).scale_real(norm);
    Ok(TesterVariables { n, kind: TesterKind::Parallel, l_effects, shape, aux: vec![sigma] })
}

/// `L_i = I / 2ᴺ⁺¹ ⊗ ...`: ignores the uses and answers uniformly.
pub fn uninformative_tester(n: usize) -> Result<TesterVariables> {
    let shape = objective_shape(n);
    let sigma = ComplexMatrix::identity(1 << n).scale_real(1.0 / (1u64 << n) as f64);
    let half = embed_with_identity(&sigma, &shape, &ins(n))?.scale_real(0.5);
    Ok(TesterVariables { n, kind: TesterKind::Parallel, l_effects: vec![half.clone(), half], shape, aux: vec![sigma] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesterSolution {
    pub report: SchemeReport,
    pub vars: TesterVariables,
    pub solver: SolverResult,
}

/// Builds the objective, solves the chosen program and assembles the
/// tester. `allow_large` lifts the `N ≤ 3` cap.
pub fn solve_tester(kind: TesterKind, n: usize, opts: &SolverOptions, allow_large: bool) -> Result<TesterSolution> {
    if n == 0 || (n > DEFAULT_MAX_USES && !allow_large) {
        return Err(Error::InvalidArgument(format!(
            "tester programs are capped at N <= {DEFAULT_MAX_USES} (got {n})"
        )));
    }
    let omega = objective_operator(n)?;
    let problem = match kind {
        TesterKind::Parallel => parallel_problem(n, &omega)?,
        TesterKind::Adaptive => adaptive_problem(n, &omega)?,
    };
    let solver = solve(&problem, opts)?;
    let vars = assemble(kind, n, &problem, &solver.blocks)?;
    let feas = vars.feasibility()?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("primal_residual".into(), solver.primal_residual);
    diagnostics.insert("dual_residual".into(), solver.dual_residual);
    diagnostics.insert("gap".into(), solver.gap);
    diagnostics.insert("dual_value".into(), solver.dual_value);
    diagnostics.insert("iterations".into(), solver.iterations as f64);
    diagnostics.insert("converged".into(), f64::from(u8::from(solver.converged)));
    diagnostics.insert("feasibility_violation".into(), feas.max_violation());
    diagnostics.insert("blocks".into(), problem.blocks.len() as f64);
    diagnostics.insert("constraints".into(), problem.constraints.len() as f64);
    let report = SchemeReport { scheme: kind.scheme(), n, value: solver.value, method: Method::Sdp, diagnostics };
    Ok(TesterSolution { report, vars, solver })
}

pub fn solve_scheme(kind: TesterKind, n: usize, opts: &SolverOptions) -> Result<SchemeReport> {
    Ok(solve_tester(kind, n, opts, false)?.report)
}
