//! Measurements, Choi operators, Haar sampling and the fidelity functional.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    eigh, embed_with_identity, kron, partial_trace, ComplexMatrix, Role, SubsystemShape, C64, HERMITIAN_TOL, ONE,
    ZERO,
};

/// Default tolerance for [`validate_povm`].
pub const POVM_TOL: f64 = 1e-8;

/// Tolerance for `U†U = I`.
pub const UNITARY_TOL: f64 = 1e-10;

/// The random stream used throughout: reproducible from a `u64` seed.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ordered effects on a `dim`-dimensional system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Povm {
    dim: usize,
    effects: Vec<ComplexMatrix>,
}

impl Povm {
    /// Checks shapes only; use [`validate_povm`] for positivity and completeness.
    pub fn new(dim: usize, effects: Vec<ComplexMatrix>) -> Result<Self> {
        if effects.is_empty() {
            return Err(Error::InvalidArgument("a POVM needs at least one effect".into()));
        }
        for (i, e) in effects.iter().enumerate() {
            if e.rows() != dim || e.cols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "effect {i} is {}x{}, expected {dim}x{dim}",
                    e.rows(),
                    e.cols()
                )));
            }
        }
        Ok(Povm { dim, effects })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn effects(&self) -> &[ComplexMatrix] {
        &self.effects
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    /// Outcome probabilities `tr(E_i ρ)`.
    pub fn probabilities(&self, rho: &ComplexMatrix) -> Result<Vec<f64>> {
        if rho.rows() != self.dim || rho.cols() != self.dim {
            return Err(Error::DimensionMismatch(format!("state is {}x{}, POVM acts on {}", rho.rows(), rho.cols(), self.dim)));
        }
        Ok(self.effects.iter().map(|e| e.adjoint().hs_inner(rho).re).collect())
    }

    /// Outcomes relabeled so that new outcome `i` is old outcome `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&p| p >= self.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation of {} outcomes", self.len())));
        }
        Ok(Povm { dim: self.dim, effects: perm.iter().map(|&p| self.effects[p].clone()).collect() })
    }

    /// `p·self + (1−p)·other`, outcome by outcome.
    pub fn mix(&self, p: f64, other: &Povm) -> Result<Self> {
        check_compatible(self, other)?;
        let effects = self
            .effects
            .iter()
            .zip(&other.effects)
            .map(|(a, b)| &a.scale_real(p) + &b.scale_real(1.0 - p))
            .collect();
        Ok(Povm { dim: self.dim, effects })
    }
}

fn check_compatible(p: &Povm, q: &Povm) -> Result<()> {
    if p.dim != q.dim || p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "POVMs differ in shape: {} effects on d={} vs {} effects on d={}",
            p.len(),
            p.dim,
            q.len(),
            q.dim
        )));
    }
    Ok(())
}

/// A projective measurement in the basis `{U|i⟩}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VonNeumannMeasurement {
    u: ComplexMatrix,
}

impl VonNeumannMeasurement {
    pub fn new(u: ComplexMatrix) -> Result<Self> {
        let deviation = unitarity_deviation(&u)?;
        if deviation > UNITARY_TOL {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(VonNeumannMeasurement { u })
    }

    pub fn computational(d: usize) -> Self {
        VonNeumannMeasurement { u: ComplexMatrix::identity(d) }
    }

    pub fn u(&self) -> &ComplexMatrix {
        &self.u
    }

    pub fn dim(&self) -> usize {
        self.u.rows()
    }

    /// `U|i⟩`.
    pub fn basis_vector(&self, i: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.dim(), 1, |r, _| self.u[(r, i)])
    }

    /// `P_{U,i} = U|i⟩⟨i|U†`.
    pub fn effect(&self, i: usize) -> ComplexMatrix {
        ComplexMatrix::projector(&self.basis_vector(i))
    }
}

/// `max |U†U − I|` entrywise.
pub fn unitarity_deviation(u: &ComplexMatrix) -> Result<f64> {
    if !u.is_square() {
        return Err(Error::DimensionMismatch(format!("{}x{} matrix cannot be unitary", u.rows(), u.cols())));
    }
    Ok((&u.adjoint().matmul(u)? - &ComplexMatrix::identity(u.rows())).max_abs())
}

/// A Choi operator together with the meaning of its tensor factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiOperator {
    pub matrix: ComplexMatrix,
    pub shape: SubsystemShape,
}

impl ChoiOperator {
    pub fn new(matrix: ComplexMatrix, shape: SubsystemShape) -> Result<Self> {
        shape.check_square(&matrix)?;
        let deviation = matrix.hermiticity_deviation();
        if deviation > HERMITIAN_TOL * matrix.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(ChoiOperator { matrix, shape })
    }

    /// Applies the map to `rho` on the `inputs` factors via the link
    /// formula `T(ρ) = tr_in[(I ⊗ ρᵀ) T]`. The result lives on the remaining
    /// factors in their original order.
    pub fn apply(&self, rho: &ComplexMatrix, inputs: &[Role]) -> Result<ComplexMatrix> {
        let lifted = embed_with_identity(&rho.transpose(), &self.shape, inputs)?;
        let keep: Vec<Role> = self.shape.roles().into_iter().filter(|r| !inputs.contains(r)).collect();
        partial_trace(&lifted.matmul(&self.matrix)?, &self.shape, &keep)
    }

    /// Largest deviation of `tr_outputs T` from the identity on the inputs.
    pub fn trace_preservation_error(&self, outputs: &[Role]) -> Result<f64> {
        let keep: Vec<Role> = self.shape.roles().into_iter().filter(|r| !outputs.contains(r)).collect();
        let reduced = partial_trace(&self.matrix, &self.shape, &keep)?;
        Ok((&reduced - &ComplexMatrix::identity(reduced.rows())).max_abs())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(eigh(&self.matrix)?.min())
    }
}

/// Haar-distributed unitary: Ginibre draw orthonormalized column by column,
/// which is QR with a positive real diagonal in the triangular factor.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix {
    assert!(d >= 1, "dimension must be positive");
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut v: Vec<C64> = (0..d)
            .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
            .collect();
        // two Gram–Schmidt passes keep the columns orthogonal to machine precision
        for _ in 0..2 {
            for q in &cols {
                let proj: C64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (x, a) in v.iter_mut().zip(q) {
                    *x -= proj * a;
                }
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        cols.push(v);
    }
    ComplexMatrix::from_fn(d, d, |r, c| cols[c][r])
}

pub fn haar_measurement<R: Rng + ?Sized>(d: usize, rng: &mut R) -> VonNeumannMeasurement {
    VonNeumannMeasurement { u: haar_unitary(d, rng) }
}

pub fn vn_effects(m: &VonNeumannMeasurement) -> Povm {
    Povm { dim: m.dim(), effects: (0..m.dim()).map(|i| m.effect(i)).collect() }
}

/// `Σ_i |i⟩⟨i| ⊗ conj(P_{U,i})`, classical output first.
pub fn choi_vn(m: &VonNeumannMeasurement) -> ChoiOperator {
    let d = m.dim();
    let mut matrix = ComplexMatrix::zeros(d * d, d * d);
    for i in 0..d {
        let block = m.effect(i).conj();
        let ii = ComplexMatrix::projector(&ComplexMatrix::basis(d, i));
        matrix += &kron(&ii, &block);
    }
    ChoiOperator { matrix, shape: vn_shape(d, 1) }
}

/// Shape `(out_k, in_k)` for a single use.
pub fn vn_shape(d: usize, k: usize) -> SubsystemShape {
    SubsystemShape::new(vec![(Role::MeasOut(k), d), (Role::MeasIn(k), d)]).expect("distinct roles")
}

/// `J_Δ = Σ_i |i⟩⟨i| ⊗ |i⟩⟨i|`.
pub fn dephasing_choi(d: usize) -> ChoiOperator {
    let mut matrix = ComplexMatrix::zeros(d * d, d * d);
    for i in 0..d {
        matrix[(i * d + i, i * d + i)] = ONE;
    }
    ChoiOperator { matrix, shape: vn_shape(d, 1) }
}

/// The maximally depolarizing channel as a uniform POVM `{I/d, …}`.
pub fn depolarize_effects(d: usize) -> Povm {
    let e = ComplexMatrix::identity(d).scale_real(1.0 / d as f64);
    Povm { dim: d, effects: vec![e; d] }
}

/// `(1/d) Σ_i tr(P_i Q_i)`.
pub fn fidelity(p: &Povm, q: &Povm) -> Result<f64> {
    check_compatible(p, q)?;
    let sum: f64 = p.effects.iter().zip(&q.effects).map(|(a, b)| a.adjoint().hs_inner(b).re).sum();
    Ok(sum / p.dim as f64)
}

/// Monte-Carlo estimate of the Haar-averaged fidelity of `scheme` against
/// the measurement it was given. Returns `(mean, standard error)`.
pub fn avg_fidelity_mc<R, F>(d: usize, mut scheme: F, samples: usize, rng: &mut R) -> Result<(f64, f64)>
where
    R: Rng + ?Sized,
    F: FnMut(&VonNeumannMeasurement, &mut R) -> Result<Povm>,
{
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let m = haar_measurement(d, rng);
        let q = scheme(&m, rng)?;
        values.push(fidelity(&vn_effects(&m), &q)?);
    }
    Ok(mean_and_stderr(&values))
}

/// Sample mean and standard error (zero for a single sample).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PovmReport {
    pub min_eigenvalues: Vec<f64>,
    /// Largest entry of `|Σ_i Q_i − I|`.
    pub completeness_error: f64,
    pub tol: f64,
    pub pass: bool,
}

pub fn validate_povm(p: &Povm, tol: f64) -> PovmReport {
    let mut sum = ComplexMatrix::zeros(p.dim, p.dim);
    let mut min_eigenvalues = Vec::with_capacity(p.len());
    let mut hermitian = true;
    for e in &p.effects {
        sum += e;
        match eigh(e) {
            Ok(ev) => min_eigenvalues.push(ev.min()),
            Err(_) => {
                hermitian = false;
                min_eigenvalues.push(f64::NAN);
            }
        }
    }
    let completeness_error = (&sum - &ComplexMatrix::identity(p.dim)).max_abs();
    let pass = hermitian && completeness_error <= tol && min_eigenvalues.iter().all(|&l| l >= -tol);
    PovmReport { min_eigenvalues, completeness_error, tol, pass }
}

/// Pure state `|ψ⟩⟨ψ|` from a random Gaussian vector.
pub fn random_pure_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix {
    let u = haar_unitary(d, rng);
    ComplexMatrix::projector(&ComplexMatrix::from_fn(d, 1, |r, _| u[(r, 0)]))
}

/// Random density matrix: a mixture of two Haar pure states.
pub fn random_density<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix {
    let w: f64 = rng.random();
    &random_pure_state(d, rng).scale_real(w) + &random_pure_state(d, rng).scale_real(1.0 - w)
}

/// Hadamard gate.
pub fn hadamard() -> ComplexMatrix {
    let s = 0.5_f64.sqrt();
    ComplexMatrix::real(2, 2, &[s, s, s, -s])
}

/// Pauli X.
pub fn sigma_x() -> ComplexMatrix {
    ComplexMatrix::from_vec(2, 2, vec![ZERO, ONE, ONE, ZERO]).expect("2x2")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vectorize;
    use proptest::prelude::*;

    #[test]
    fn haar_d1_is_a_phase() {
        let mut rng = seeded_rng(1);
        let u = haar_unitary(1, &mut rng);
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn haar_samples_are_unitary() {
        let mut rng = seeded_rng(2);
        for d in [2, 3, 5, 8] {
            for _ in 0..20 {
                let u = haar_unitary(d, &mut rng);
                assert!(unitarity_deviation(&u).unwrap() < 1e-12);
            }
        }
        let u = haar_unitary(2, &mut rng);
        assert!((vectorize(&u).frobenius_norm().powi(2) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn haar_second_moment() {
        // ∫|u00|² dU = 1/d
        let mut rng = seeded_rng(3);
        let n = 100_000;
        let mean = (0..n).map(|_| haar_unitary(2, &mut rng)[(0, 0)].norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn non_unitary_rejected() {
        let err = VonNeumannMeasurement::new(ComplexMatrix::real(2, 2, &[1., 1., 0., 1.])).unwrap_err();
        assert!(matches!(err, Error::NotUnitary { .. }));
    }

    #[test]
    fn vn_effects_examples() {
        let p = vn_effects(&VonNeumannMeasurement::computational(2));
        assert_eq!(p.effects()[0], ComplexMatrix::diag_real(&[1.0, 0.0]));
        assert_eq!(p.effects()[1], ComplexMatrix::diag_real(&[0.0, 1.0]));

        let h = vn_effects(&VonNeumannMeasurement::new(hadamard()).unwrap());
        let plus = ComplexMatrix::real(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let minus = ComplexMatrix::real(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((&h.effects()[0] - &plus).max_abs() < 1e-15);
        assert!((&h.effects()[1] - &minus).max_abs() < 1e-15);
    }

    #[test]
    fn haar_effects_are_orthogonal_projectors() {
        let mut rng = seeded_rng(4);
        for _ in 0..100 {
            let p = vn_effects(&haar_measurement(2, &mut rng));
            let e = p.effects();
            for a in e {
                assert!((&(a * a) - a).max_abs() < 1e-10);
                assert!((a.trace().re - 1.0).abs() < 1e-9);
            }
            assert!((&e[0] * &e[1]).max_abs() < 1e-10);
            assert!(validate_povm(&p, 1e-9).pass);
        }
    }

    #[test]
    fn choi_vn_examples() {
        let j = choi_vn(&VonNeumannMeasurement::computational(2));
        assert_eq!(j.matrix, ComplexMatrix::diag_real(&[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(j, dephasing_choi(2));

        let mut rng = seeded_rng(5);
        let m = haar_measurement(2, &mut rng);
        let c = choi_vn(&m);
        assert!((c.matrix.trace().re - 2.0).abs() < 1e-12);
        assert!(c.min_eigenvalue().unwrap() > -1e-12);
        assert!(c.trace_preservation_error(&[Role::MeasOut(1)]).unwrap() < 1e-12);
        // off-diagonal classical blocks vanish
        for r in 0..2 {
            for cc in 2..4 {
                assert_eq!(c.matrix[(r, cc)], ZERO);
            }
        }
    }

    #[test]
    fn choi_link_formula_reproduces_channel() {
        let mut rng = seeded_rng(6);
        let m = haar_measurement(2, &mut rng);
        let c = choi_vn(&m);
        let p = vn_effects(&m);
        for _ in 0..20 {
            let rho = random_density(2, &mut rng);
            let out = c.apply(&rho, &[Role::MeasIn(1)]).unwrap();
            let probs = p.probabilities(&rho).unwrap();
            let direct = ComplexMatrix::diag_real(&probs);
            assert!((&out - &direct).max_abs() < 1e-12);
        }
    }

    #[test]
    fn dephasing_choi_d3() {
        let j = dephasing_choi(3);
        for r in 0..9 {
            for c in 0..9 {
                let expect = if r == c && r % 4 == 0 { ONE } else { ZERO };
                assert_eq!(j.matrix[(r, c)], expect);
            }
        }
        assert_eq!(j, choi_vn(&VonNeumannMeasurement::computational(3)));
    }

    #[test]
    fn depolarizing_examples() {
        let phi = depolarize_effects(2);
        assert_eq!(phi.effects(), &[ComplexMatrix::identity(2).scale_real(0.5), ComplexMatrix::identity(2).scale_real(0.5)]);
        assert!(validate_povm(&phi, 1e-12).pass);
        let mut rng = seeded_rng(7);
        let p = vn_effects(&haar_measurement(2, &mut rng));
        assert!((fidelity(&p, &phi).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = seeded_rng(8);
        let p = vn_effects(&haar_measurement(2, &mut rng));
        assert!((fidelity(&p, &p).unwrap() - 1.0).abs() < 1e-14);
        let i = vn_effects(&VonNeumannMeasurement::computational(2));
        let h = vn_effects(&VonNeumannMeasurement::new(hadamard()).unwrap());
        assert!((fidelity(&i, &h).unwrap() - 0.5).abs() < 1e-15);
        assert!(fidelity(&i, &depolarize_effects(3)).is_err());
    }

    #[test]
    fn avg_fidelity_trivial_schemes() {
        let mut rng = seeded_rng(9);
        let (m, s) = avg_fidelity_mc(2, |m, _| Ok(vn_effects(m)), 200, &mut rng).unwrap();
        assert!((m - 1.0).abs() < 1e-12 && s < 1e-12);
        let (m, s) = avg_fidelity_mc(2, |_, _| Ok(depolarize_effects(2)), 200, &mut rng).unwrap();
        assert!((m - 0.5).abs() < 1e-14 && s < 1e-14);
        assert!(avg_fidelity_mc(2, |_, _| Ok(depolarize_effects(2)), 0, &mut rng).is_err());
    }

    #[test]
    fn avg_fidelity_is_reproducible() {
        let run = || {
            let mut rng = seeded_rng(42);
            avg_fidelity_mc(2, |m, _| vn_effects(m).mix(0.4, &depolarize_effects(2)), 500, &mut rng).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn validate_povm_flags_negative_effect() {
        let p0 = ComplexMatrix::diag_real(&[1.1, 0.0]);
        let bad = Povm::new(2, vec![p0.clone(), &ComplexMatrix::identity(2) - &p0]).unwrap();
        let r = validate_povm(&bad, POVM_TOL);
        assert!(!r.pass);
        assert!((r.min_eigenvalues[1] + 0.1).abs() < 1e-12);
        assert!(r.completeness_error < 1e-15);
    }

    #[test]
    fn povm_shape_checks() {
        assert!(Povm::new(2, vec![]).is_err());
        assert!(Povm::new(2, vec![ComplexMatrix::identity(3)]).is_err());
        assert!(depolarize_effects(2).relabel(&[0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn fidelity_invariant_under_joint_relabel(seed in any::<u64>(), swap in any::<bool>()) {
            let mut rng = seeded_rng(seed);
            let p = vn_effects(&haar_measurement(2, &mut rng));
            let q = vn_effects(&haar_measurement(2, &mut rng)).mix(0.7, &depolarize_effects(2)).unwrap();
            let perm = if swap { [1, 0] } else { [0, 1] };
            let f = fidelity(&p, &q).unwrap();
            let g = fidelity(&p.relabel(&perm).unwrap(), &q.relabel(&perm).unwrap()).unwrap();
            prop_assert!((f - g).abs() < 1e-14);
        }

        #[test]
        fn fidelity_is_linear_in_mixture(seed in any::<u64>(), idx in 0usize..3) {
            let p0 = [0.0, 0.3, 1.0][idx];
            let mut rng = seeded_rng(seed);
            let p = vn_effects(&haar_measurement(2, &mut rng));
            let q = p.mix(p0, &depolarize_effects(2)).unwrap();
            prop_assert!((fidelity(&p, &q).unwrap() - (p0 + (1.0 - p0) / 2.0)).abs() < 1e-12);
        }
    }
}
