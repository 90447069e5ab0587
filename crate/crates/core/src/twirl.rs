//! Exact Haar twirls through the permutation commutant, with Monte-Carlo
//! cross-checks, and the Haar-averaged objective operators `Ω_i`.
//!
//! Permutations act on tensor factors as `W_π|b₀,…,b_{p−1}⟩ = |b_{π(0)},…,b_{π(p−1)}⟩`.
//! With this action `W_π W_τ = W_{τ∘π}`, where `(τ∘π)(k) = τ(π(k))`; see
//! [`compose`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    kron, kron_all, kron_power, numerical_rank, permute_subsystems, pinv, ComplexMatrix, Role, SubsystemShape, C64,
    ONE, ZERO,
};
use crate::quantum::{choi_vn, dephasing_choi, haar_unitary, mean_and_stderr, VonNeumannMeasurement};

/// Largest `N` handled by [`objective_operator`].
pub const MAX_EXACT_USES: usize = 4;

/// Default relative eigenvalue cutoff for the Gram pseudo-inverse.
pub const GRAM_RANK_TOL: f64 = 1e-10;

pub type Permutation = Vec<usize>;

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

/// `(a∘b)(k) = a(b(k))`.
pub fn compose(a: &[usize], b: &[usize]) -> Permutation {
    b.iter().map(|&k| a[k]).collect()
}

pub fn inverse(perm: &[usize]) -> Permutation {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn cycle_count(perm: &[usize]) -> usize {
    let mut seen = vec![false; perm.len()];
    let mut cycles = 0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        cycles += 1;
        let mut k = start;
        while !seen[k] {
            seen[k] = true;
            k = perm[k];
        }
    }
    cycles
}

/// All permutations of `0..p` in lexicographic order; the identity first.
pub fn all_permutations(p: usize) -> Vec<Permutation> {
    let mut out = Vec::new();
    let mut cur: Permutation = (0..p).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..p).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..p).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot has a successor");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// For each basis index `x` of `(C^d)^{⊗p}`, the index `W_π x`.
fn perm_index_map(perm: &[usize], d: usize) -> Vec<usize> {
    let p = perm.len();
    let total = d.pow(p as u32);
    let mut digits = vec![0; p];
    (0..total)
        .map(|mut x| {
            for k in (0..p).rev() {
                digits[k] = x % d;
                x /= d;
            }
            perm.iter().fold(0, |acc, &src| acc * d + digits[src])
        })
        .collect()
}

/// `W_π` as a `d^p × d^p` permutation matrix.
pub fn perm_operator(p: usize, perm: &[usize], d: usize) -> Result<ComplexMatrix> {
    if perm.len() != p || !is_permutation(perm) {
        return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of {p} symbols")));
    }
    let map = perm_index_map(perm, d);
    let n = map.len();
    let mut w = ComplexMatrix::zeros(n, n);
    for (x, &y) in map.iter().enumerate() {
        w[(y, x)] = ONE;
    }
    Ok(w)
}

/// The permutation operators of `S_p` on `(C^d)^{⊗p}` and their Gram matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PermGroupBasis {
    pub p: usize,
    pub d: usize,
    pub perms: Vec<Permutation>,
    /// `G[σ,τ] = tr(W_σ† W_τ) = d^{#cycles(σ⁻¹∘τ)}`.
    pub gram: ComplexMatrix,
    pub gram_pinv: ComplexMatrix,
    pub rank: usize,
    #[serde(skip)]
    maps: Vec<Vec<usize>>,
}

pub fn gram_basis(p: usize, d: usize, rank_tol: f64) -> Result<PermGroupBasis> {
    if p == 0 || d == 0 {
        return Err(Error::InvalidArgument("need at least one factor of positive dimension".into()));
    }
    let perms = all_permutations(p);
    let m = perms.len();
    let gram = ComplexMatrix::from_fn(m, m, |s, t| {
        let c = cycle_count(&compose(&inverse(&perms[s]), &perms[t]));
        C64::new((d as f64).powi(c as i32), 0.0)
    });
    let gram_pinv = pinv(&gram, rank_tol)?;
    let rank = numerical_rank(&gram, rank_tol)?;
    let maps = perms.iter().map(|perm| perm_index_map(perm, d)).collect();
    Ok(PermGroupBasis { p, d, perms, gram, gram_pinv, rank, maps })
}

impl PermGroupBasis {
    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    fn map(&self, i: usize) -> std::borrow::Cow<'_, [usize]> {
        match self.maps.get(i) {
            Some(m) => std::borrow::Cow::Borrowed(m),
            None => std::borrow::Cow::Owned(perm_index_map(&self.perms[i], self.d)),
        }
    }

    /// Projects `x` on `(C^d)^{⊗p} ⊗ C^a` (twirled factors first) onto the
    /// commutant `span{W_τ} ⊗ M(C^a)`.
    fn project_leading(&self, x: &ComplexMatrix) -> Result<ComplexMatrix> {
        let q = self.d.pow(self.p as u32);
        let n = x.rows();
        if !x.is_square() || n % q != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix does not factor through (C^{})^⊗{}",
                x.rows(),
                x.cols(),
                self.d,
                self.p
            )));
        }
        let a = n / q;
        let m = self.len();
        // b_σ = tr_twirled[(W_σ† ⊗ I) X], b_σ[r,c] = Σ_x X[(w_σ(x), r), (x, c)]
        let mut b = vec![ComplexMatrix::zeros(a, a); m];
        for (s, bs) in b.iter_mut().enumerate() {
            let map = self.map(s);
            for (col, &wx) in map.iter().enumerate() {
                for r in 0..a {
                    let row = (wx * a + r) * n + col * a;
                    for c in 0..a {
                        bs[(r, c)] += x.data()[row + c];
                    }
                }
            }
        }
        let mut out = ComplexMatrix::zeros(n, n);
        for t in 0..m {
            let mut mt = ComplexMatrix::zeros(a, a);
            for (s, bs) in b.iter().enumerate() {
                let g = self.gram_pinv[(t, s)];
                if g != ZERO {
                    mt += &bs.scale(g);
                }
            }
            // (W_τ ⊗ M)[(w_τ(y), r), (y, c)] = M[r, c]
            let map = self.map(t);
            for (y, &wy) in map.iter().enumerate() {
                for r in 0..a {
                    let row = (wy * a + r) * n + y * a;
                    for c in 0..a {
                        out.data_mut()[row + c] += mt[(r, c)];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// `∫dU (U^{⊗p} ⊗ I) X (U^{⊗p} ⊗ I)†` with `U` acting on the factors
/// `twirl_positions`, computed exactly as the orthogonal projection onto the
/// permutation commutant.
pub fn commutant_twirl(
    x: &ComplexMatrix,
    shape: &SubsystemShape,
    twirl_positions: &[Role],
    basis: &PermGroupBasis,
) -> Result<ComplexMatrix> {
    shape.check_square(x)?;
    if twirl_positions.len() != basis.p {
        return Err(Error::DimensionMismatch(format!(
            "{} twirled factors for a basis on {} factors",
            twirl_positions.len(),
            basis.p
        )));
    }
    for role in twirl_positions {
        if shape.dim_of(role)? != basis.d {
            return Err(Error::DimensionMismatch(format!("factor `{role}` is not {}-dimensional", basis.d)));
        }
    }
    let rest: Vec<Role> = shape.roles().into_iter().filter(|r| !twirl_positions.contains(r)).collect();
    let mut order = twirl_positions.to_vec();
    order.extend(rest);
    let (leading, leading_shape) = permute_subsystems(x, shape, &order)?;
    let projected = basis.project_leading(&leading)?;
    let (back, _) = permute_subsystems(&projected, &leading_shape, &shape.roles())?;
    Ok(back)
}

/// Empirical mean of `G X G†` over `samples` Haar draws `U ∈ U(d)`, where
/// `G = action(U)`.
pub fn mc_twirl<R: Rng + ?Sized>(
    x: &ComplexMatrix,
    d: usize,
    mut action: impl FnMut(&ComplexMatrix) -> ComplexMatrix,
    samples: usize,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let mut acc = ComplexMatrix::zeros(x.rows(), x.cols());
    for _ in 0..samples {
        let g = action(&haar_unitary(d, rng));
        acc += &x.conjugate_by(&g)?;
    }
    Ok(acc.scale_real(1.0 / samples as f64))
}

/// Haar unitary divided by a square root of its determinant.
pub fn haar_special_unitary<R: Rng + ?Sized>(rng: &mut R) -> ComplexMatrix {
    let u = haar_unitary(2, rng);
    let det = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)];
    u.scale(det.sqrt().inv())
}

/// `∫dU (U⊗Ū) X (U⊗Ū)†` on `C^d ⊗ C^d`, obtained from the `U⊗U` twirl of
/// the partial transpose: `(U⊗Ū)X(U⊗Ū)†` has partial transpose
/// `(U⊗U)X^{T₂}(U⊗U)†`.
pub fn twirl_u_ubar(x: &ComplexMatrix, d: usize) -> Result<ComplexMatrix> {
    let shape = SubsystemShape::anonymous(&[d, d]);
    let second: Role = "1".into();
    let basis = gram_basis(2, d, GRAM_RANK_TOL)?;
    let pt = crate::linalg::partial_transpose(x, &shape, &second)?;
    let twirled = commutant_twirl(&pt, &shape, &["0".into(), "1".into()], &basis)?;
    crate::linalg::partial_transpose(&twirled, &shape, &second)
}

/// `(I + |I⟩⟩⟨⟨I|)/(d+1)`.
pub fn dephasing_twirl_closed_form(d: usize) -> ComplexMatrix {
    let vec_i = crate::linalg::vectorize(&ComplexMatrix::identity(d));
    (&ComplexMatrix::identity(d * d) + &ComplexMatrix::projector(&vec_i)).scale_real(1.0 / (d + 1) as f64)
}

/// Factor order `(rin, out₁, in₁, …, out_N, in_N)` of the objective.
pub fn objective_shape(n: usize) -> SubsystemShape {
    let mut factors = vec![(Role::RetrievalIn, 2)];
    for k in 1..=n {
        factors.push((Role::MeasOut(k), 2));
        factors.push((Role::MeasIn(k), 2));
    }
    SubsystemShape::new(factors).expect("distinct roles")
}

/// `Ω_i = ∫dU P_{U,i} ⊗ P_U^{⊗N}` for `i = 0, 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwirledObjective {
    pub n: usize,
    pub omega: Vec<ComplexMatrix>,
    pub shape: SubsystemShape,
}

impl TwirledObjective {
    /// `(1/2) Σ_i tr(L_iᵀ Ω_i)`.
    pub fn evaluate(&self, l: &[ComplexMatrix]) -> Result<f64> {
        if l.len() != self.omega.len() {
            return Err(Error::DimensionMismatch(format!("{} tester effects for {} outcomes", l.len(), self.omega.len())));
        }
        let mut total = 0.0;
        for (li, oi) in l.iter().zip(&self.omega) {
            self.shape.check_square(li)?;
            // tr(Lᵀ Ω) = Σ_{a,b} L[a,b] Ω[a,b]
            total += li.data().iter().zip(oi.data()).map(|(a, b)| a * b).sum::<C64>().re;
        }
        Ok(total / 2.0)
    }

    /// Largest entry of `|Ω₁ − X Ω₀ X|` with `X = σ_x` on every measurement output.
    pub fn relabeling_residual(&self) -> Result<f64> {
        let flip = outcome_flip(self.n);
        Ok((&self.omega[1] - &self.omega[0].conjugate_by(&flip)?).max_abs())
    }
}

/// `σ_x` on each `out_k`, identity on `rin` and every `in_k`.
pub fn outcome_flip(n: usize) -> ComplexMatrix {
    let sx = crate::quantum::sigma_x();
    let pair = kron(&sx, &ComplexMatrix::identity(2));
    kron(&ComplexMatrix::identity(2), &kron_power(&pair, n))
}

/// `Y = [[0, 1], [−1, 0]]`, with `Ū = Y U Y†` for `U ∈ SU(2)`.
pub fn y_matrix() -> ComplexMatrix {
    ComplexMatrix::real(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

/// `U_rin ⊗ (I ⊗ Ū)^{⊗N}`, the action whose average produces `Ω_i`.
pub fn objective_action(u: &ComplexMatrix, n: usize) -> ComplexMatrix {
    let pair = kron(&ComplexMatrix::identity(2), &u.conj());
    kron(u, &kron_power(&pair, n))
}

/// `X_i = |i⟩⟨i| ⊗ J_Δ^{⊗N}`.
pub fn objective_seed(i: usize, n: usize) -> ComplexMatrix {
    let ii = ComplexMatrix::projector(&ComplexMatrix::basis(2, i));
    kron(&ii, &kron_power(&dephasing_choi(2).matrix, n))
}

pub fn objective_operator(n: usize) -> Result<TwirledObjective> {
    if n == 0 || n > MAX_EXACT_USES {
        return Err(Error::InvalidArgument(format!("exact objective supports 1 <= N <= {MAX_EXACT_USES}, got {n}")));
    }
    let shape = objective_shape(n);
    let basis = gram_basis(n + 1, 2, GRAM_RANK_TOL)?;
    let mut twirled: Vec<Role> = vec![Role::RetrievalIn];
    twirled.extend((1..=n).map(Role::MeasIn));
    // on SU(2) the action is K (U ⊗ (I ⊗ U)^{⊗N}) K† with K = I ⊗ (I ⊗ Y)^{⊗N}
    let k = kron(
        &ComplexMatrix::identity(2),
        &kron_power(&kron(&ComplexMatrix::identity(2), &y_matrix()), n),
    );
    let kd = k.adjoint();
    let mut omega = Vec::with_capacity(2);
    for i in 0..2 {
        let inner = objective_seed(i, n).conjugate_by(&kd)?;
        let t = commutant_twirl(&inner, &shape, &twirled, &basis)?;
        omega.push(t.conjugate_by(&k)?.hermitian_part());
    }
    Ok(TwirledObjective { n, omega, shape })
}

/// Monte-Carlo `Ω_i` from the product form `P_{U,i} ⊗ P_U^{⊗N}` directly.
pub fn mc_objective<R: Rng + ?Sized>(n: usize, samples: usize, rng: &mut R) -> Result<Vec<ComplexMatrix>> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let dim = 1 << (2 * n + 1);
    let mut acc = vec![ComplexMatrix::zeros(dim, dim); 2];
    for _ in 0..samples {
        let m = VonNeumannMeasurement::new(haar_unitary(2, rng))?;
        let tail = kron_power(&choi_vn(&m).matrix, n);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += &kron(&m.effect(i), &tail);
        }
    }
    Ok(acc.into_iter().map(|a| a.scale_real(1.0 / samples as f64)).collect())
}

/// Mean and standard error of `tr(Z · G_U X_0 G_U†)` under either U(2)
/// or SU(2) Haar samples.
pub fn objective_functional_mc<R: Rng + ?Sized>(
    n: usize,
    z: &ComplexMatrix,
    special: bool,
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let x = objective_seed(0, n);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = if special { haar_special_unitary(rng) } else { haar_unitary(2, rng) };
        let y = x.conjugate_by(&objective_action(&u, n))?;
        values.push(z.adjoint().hs_inner(&y).re);
    }
    Ok(mean_and_stderr(&values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwirlCheck {
    pub n: usize,
    pub samples: usize,
    pub exact_vs_mc_specnorm: f64,
    pub invariance_residual: f64,
    pub idempotence_residual: f64,
}

/// Compares exact `Ω_i` against Monte-Carlo, and measures invariance under
/// sampled group elements and idempotence of the projection.
pub fn twirl_check<R: Rng + ?Sized>(n: usize, samples: usize, rng: &mut R) -> Result<TwirlCheck> {
    let obj = objective_operator(n)?;
    let mc = mc_objective(n, samples, rng)?;
    let mut exact_vs_mc_specnorm: f64 = 0.0;
    for (e, m) in obj.omega.iter().zip(&mc) {
        exact_vs_mc_specnorm = exact_vs_mc_specnorm.max((e - m).hermitian_spectral_norm()?);
    }
    let mut invariance_residual: f64 = 0.0;
    for _ in 0..50 {
        let g = objective_action(&haar_unitary(2, rng), n);
        for o in &obj.omega {
            invariance_residual = invariance_residual.max((&(&g * o) - &(o * &g)).max_abs());
        }
    }
    // idempotence of the underlying projection on the twirled frame
    let shape = obj.shape.clone();
    let basis = gram_basis(n + 1, 2, GRAM_RANK_TOL)?;
    let mut twirled: Vec<Role> = vec![Role::RetrievalIn];
    twirled.extend((1..=n).map(Role::MeasIn));
    let dim = shape.total_dim();
    let z = ComplexMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .hermitian_part();
    let once = commutant_twirl(&z, &shape, &twirled, &basis)?;
    let twice = commutant_twirl(&once, &shape, &twirled, &basis)?;
    let idempotence_residual = (&twice - &once).max_abs();
    Ok(TwirlCheck { n, samples, exact_vs_mc_specnorm, invariance_residual, idempotence_residual })
}

/// `U^{⊗p} ⊗ I_a`.
pub fn tensor_power_action(u: &ComplexMatrix, p: usize, ancilla: usize) -> ComplexMatrix {
    kron_all([&kron_power(u, p), &ComplexMatrix::identity(ancilla)])
}
