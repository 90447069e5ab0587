//! The pretty good learning scheme.
//!
//! Each of the `N` uses measures half of a maximally entangled pair, leaving
//! `conj(P_{U,i})` on the other half. The majority outcome's `N₀` memory
//! copies are fed, together with the retrieval input, to the effect
//! `R = Σ_k |R_k⟩⟨R_k|`, which yields `Q = N₀/(N₀+1) · P_{U,majority}`.
//!
//! Memory qubit 0 is the leftmost tensor factor; Dicke weights count ones over
//! all memory qubits.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{contract_second, eigh, kron_power, ComplexMatrix, C64, ZERO};
use crate::quantum::{validate_povm, Povm, PovmReport, VonNeumannMeasurement};

/// `|D_k^n⟩`: uniform superposition of the weight-`k` basis states of `n` qubits.
pub fn dicke(n: usize, k: usize) -> Result<ComplexMatrix> {
    if k > n {
        return Err(Error::InvalidArgument(format!("Dicke weight {k} exceeds qubit count {n}")));
    }
    let amp = 1.0 / binomial_f64(n, k).sqrt();
    Ok(ComplexMatrix::from_fn(1 << n, 1, |r, _| {
        if r.count_ones() as usize == k {
            C64::new(amp, 0.0)
        } else {
            ZERO
        }
    }))
}

/// `s_n(k, m) = Σ_{i+j=m} C(k,i) C(n−k,j) (−1)^{n−k−j}`; zero for `m ∉ [0, n]`.
pub fn s_conv(n: usize, k: usize, m: i64) -> BigInt {
    assert!(k <= n, "s_conv needs k <= n");
    let mut acc = BigInt::zero();
    if m < 0 || m > n as i64 {
        return acc;
    }
    let m = m as usize;
    for i in 0..=k.min(m) {
        let j = m - i;
        if j > n - k {
            continue;
        }
        let term = binomial_big(k, i) * binomial_big(n - k, j);
        if (n - k - j) % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

pub fn binomial_big(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

pub fn binomial_f64(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn big_to_f64(x: &BigInt) -> f64 {
    x.to_string().parse().expect("BigInt renders as a decimal integer")
}

/// `M_k ∈ M(C², C^{2^{n+1}})` from Dicke bra rows.
///
/// Entry `(a, x)` is `s_n(k, n + a − w(x)) / C(n+1, w(x))` with `w` the Hamming
/// weight of the memory string `x`.
pub fn m_k_matrix(n: usize, k: usize) -> Result<ComplexMatrix> {
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    let s: Vec<f64> = (-1..=n as i64 + 1).map(|m| big_to_f64(&s_conv(n, k, m))).collect();
    let s_at = |m: i64| s[(m + 1) as usize];
    Ok(ComplexMatrix::from_fn(2, 1 << (n + 1), |a, x| {
        let w = x.count_ones() as usize;
        let v = s_at(n as i64 + a as i64 - w as i64) / binomial_f64(n + 1, w);
        C64::new(v, 0.0)
    }))
}

/// `‖M_k‖_F² = (n+2)/(n+1) · 2ⁿ / C(n,k)`.
pub fn m_k_norm_sq(n: usize, k: usize) -> f64 {
    (n + 2) as f64 / (n + 1) as f64 * 2f64.powi(n as i32) / binomial_f64(n, k)
}

/// Columns `|R_k⟩ = |M_k⟩⟩ / ‖M_k‖`, `k = 0..=n`, on retrieval-in ⊗ memory.
pub fn pgls_basis_vectors(n0: usize) -> Result<ComplexMatrix> {
    if n0 == 0 {
        return Err(Error::InvalidArgument("the retrieval effect needs N0 >= 1".into()));
    }
    let n = n0 - 1;
    let dim = 1 << (n + 2);
    let mut out = ComplexMatrix::zeros(dim, n + 1);
    for k in 0..=n {
        let mk = m_k_matrix(n, k)?;
        let norm = mk.frobenius_norm();
        for (r, z) in mk.data().iter().enumerate() {
            out[(r, k)] = z / norm;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PglsEffect {
    /// `N₀ − 1`.
    pub n: usize,
    pub r: ComplexMatrix,
    pub basis_vectors: ComplexMatrix,
}

impl PglsEffect {
    pub fn n0(&self) -> usize {
        self.n + 1
    }

    /// `⟨R_k|R_k'⟩`.
    pub fn gram(&self) -> ComplexMatrix {
        &self.basis_vectors.adjoint() * &self.basis_vectors
    }

    /// The two-outcome retrieval measurement `{R, I − R}`.
    pub fn povm(&self) -> Povm {
        let dim = self.r.rows();
        Povm::new(dim, vec![self.r.clone(), &ComplexMatrix::identity(dim) - &self.r]).expect("square effects")
    }
}

pub fn pgls_effect(n0: usize) -> Result<PglsEffect> {
    let basis_vectors = pgls_basis_vectors(n0)?;
    let r = &basis_vectors * &basis_vectors.adjoint();
    Ok(PglsEffect { n: n0 - 1, r, basis_vectors })
}

/// `Q_{U,0} = tr_mem[(I₂ ⊗ conj(P_{U,0})^{⊗N₀}) R]`, evaluated as a dense
/// partial trace.
pub fn pgls_retrieved_effect(m: &VonNeumannMeasurement, n0: usize) -> Result<ComplexMatrix> {
    if m.dim() != 2 {
        return Err(Error::InvalidArgument("the scheme is defined for qubits".into()));
    }
    let effect = pgls_effect(n0)?;
    let memory = kron_power(&m.effect(0).conj(), n0);
    contract_second(&effect.r, 2, &memory)
}

/// Retrieval from the rank-one memory `conj(|x⟩⟨x|)^{⊗N₀}` using only the
/// vectors `|R_k⟩`: `Q = Σ_k v_k v_k†` with `v_k = (I ⊗ ⟨x̄|^{⊗N₀})|R_k⟩`.
fn retrieve_from_vectors(basis_vectors: &ComplexMatrix, x: &ComplexMatrix, n0: usize) -> ComplexMatrix {
    let xs = kron_power(x, n0);
    let mem = xs.rows();
    let mut q = ComplexMatrix::zeros(2, 2);
    for k in 0..basis_vectors.cols() {
        let mut v = [ZERO; 2];
        for (a, va) in v.iter_mut().enumerate() {
            for y in 0..mem {
                *va += basis_vectors[(a * mem + y, k)] * xs.data()[y];
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                q[(a, b)] += v[a] * v[b].conj();
            }
        }
    }
    q
}

/// `(2k+1)/(2k+2)`, the fidelity after retrieving from `k` agreeing copies.
pub fn per_run_fidelity(n_major: usize) -> f64 {
    (2 * n_major + 1) as f64 / (2 * n_major + 2) as f64
}

fn per_run_fidelity_exact(n_major: usize) -> BigRational {
    BigRational::new(BigInt::from(2 * n_major + 1), BigInt::from(2 * n_major + 2))
}

/// Haar-averaged fidelity as a binomial sum split by the parity of `N`.
pub fn pgls_avg_fidelity(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    // log of C(N, l) / 2^N, accumulated to stay finite for large N
    let mut log_w = vec![-(n as f64) * std::f64::consts::LN_2; n + 1];
    for l in 1..=n {
        log_w[l] = log_w[l - 1] + ((n - l + 1) as f64 / l as f64).ln();
    }
    let k = n.div_ceil(2);
    let mut total = 0.0;
    let first_doubled = if n % 2 == 0 {
        total += log_w[k].exp() * per_run_fidelity(k);
        k + 1
    } else {
        k
    };
    for l in first_doubled..=n {
        total += 2.0 * log_w[l].exp() * per_run_fidelity(l);
    }
    Ok(total)
}

pub fn pgls_avg_fidelity_exact(n: usize) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let k = n.div_ceil(2);
    let two = BigRational::from_integer(BigInt::from(2));
    let mut total = BigRational::zero();
    let first_doubled = if n % 2 == 0 {
        total += BigRational::from_integer(binomial_big(n, k)) * per_run_fidelity_exact(k);
        k + 1
    } else {
        k
    };
    for l in first_doubled..=n {
        total += &two * BigRational::from_integer(binomial_big(n, l)) * per_run_fidelity_exact(l);
    }
    Ok(total / BigRational::from_integer(BigInt::one() << n))
}

/// `p₀ = 2F − 1` such that the averaged approximation is `p₀ P_U + (1 − p₀) Φ_*`.
pub fn pgls_mixture_form(n: usize) -> Result<f64> {
    Ok(2.0 * pgls_avg_fidelity(n)? - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PglsOutcomeRecord {
    pub outcomes: Vec<u8>,
    pub majority_label: u8,
    pub n_major: usize,
    pub fidelity: f64,
}

/// Runs the scheme repeatedly, caching the retrieval vectors per `N₀`.
#[derive(Default)]
pub struct PglsSimulator {
    vectors: HashMap<usize, ComplexMatrix>,
}

impl PglsSimulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run<R: Rng + ?Sized>(
        &mut self,
        m: &VonNeumannMeasurement,
        n: usize,
        rng: &mut R,
    ) -> Result<(PglsOutcomeRecord, Povm)> {
        if n == 0 {
            return Err(Error::InvalidArgument("N must be at least 1".into()));
        }
        if m.dim() != 2 {
            return Err(Error::InvalidArgument("the scheme is defined for qubits".into()));
        }
        // the measured half of |ω⟩ is maximally mixed
        let half = ComplexMatrix::identity(2).scale_real(0.5);
        let p0 = m.effect(0).adjoint().hs_inner(&half).re;
        let outcomes: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() >= p0)).collect();
        self.retrieve(m, outcomes)
    }

    /// Majority vote and retrieval for a given outcome record.
    pub fn retrieve(&mut self, m: &VonNeumannMeasurement, outcomes: Vec<u8>) -> Result<(PglsOutcomeRecord, Povm)> {
        let n = outcomes.len();
        if n == 0 || outcomes.iter().any(|&o| o > 1) {
            return Err(Error::InvalidArgument("outcome records are nonempty strings of 0/1".into()));
        }
        if m.dim() != 2 {
            return Err(Error::InvalidArgument("the scheme is defined for qubits".into()));
        }
        let ones = outcomes.iter().filter(|&&o| o == 1).count();
        // ties keep label 0
        let (majority_label, n_major) = if ones > n - ones { (1u8, ones) } else { (0u8, n - ones) };

        let vectors = match self.vectors.entry(n_major) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(pgls_basis_vectors(n_major)?),
        };
        let q = retrieve_from_vectors(vectors, &m.basis_vector(majority_label as usize), n_major);
        let rest = &ComplexMatrix::identity(2) - &q;
        let effects = if majority_label == 0 { vec![q, rest] } else { vec![rest, q] };
        let record = PglsOutcomeRecord { outcomes, majority_label, n_major, fidelity: per_run_fidelity(n_major) };
        Ok((record, Povm::new(2, effects)?))
    }
}

pub fn pgls_simulate<R: Rng + ?Sized>(
    m: &VonNeumannMeasurement,
    n: usize,
    rng: &mut R,
) -> Result<(PglsOutcomeRecord, Povm)> {
    PglsSimulator::new().run(m, n, rng)
}

/// `[s_n(k, m)]_{k,m}`, optionally with every entry shifted by `perturb`
/// (used to confirm that the checks can fail).
pub fn lemma_matrix(n: usize, perturb: i64) -> Vec<Vec<BigInt>> {
    (0..=n).map(|k| (0..=n).map(|m| s_conv(n, k, m as i64) + perturb).collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactLemmaCheck {
    pub n: usize,
    /// `M² = 2ⁿ I`.
    pub square: bool,
    /// `MD` symmetric with `D = diag(1/C(n,m))`.
    pub symmetric: bool,
    /// `Σ_m s_n(k,m) xᵐ = (x+1)^k (x−1)^{n−k}` at `x ∈ {2, 3, −1}`.
    pub generating_function: bool,
}

impl ExactLemmaCheck {
    pub fn pass(&self) -> bool {
        self.square && self.symmetric && self.generating_function
    }
}

pub fn check_lemmas_exact(n: usize, perturb: i64) -> ExactLemmaCheck {
    let m = lemma_matrix(n, perturb);
    let size = n + 1;
    let scale = BigInt::one() << n;
    let mut square = true;
    for i in 0..size {
        for j in 0..size {
            let v: BigInt = (0..size).map(|l| &m[i][l] * &m[l][j]).sum();
            let expect = if i == j { scale.clone() } else { BigInt::zero() };
            square &= v == expect;
        }
    }
    let mut symmetric = true;
    for i in 0..size {
        for j in 0..size {
            let a = BigRational::new(m[i][j].clone(), binomial_big(n, j));
            let b = BigRational::new(m[j][i].clone(), binomial_big(n, i));
            symmetric &= a == b;
        }
    }
    let mut generating_function = true;
    for x in [2i64, 3, -1] {
        let x = BigInt::from(x);
        for (k, row) in m.iter().enumerate() {
            let mut lhs = BigInt::zero();
            let mut pow = BigInt::one();
            for s in row {
                lhs += s * &pow;
                pow *= &x;
            }
            let rhs = num_traits::pow(&x + 1, k) * num_traits::pow(&x - 1, n - k);
            generating_function &= lhs == rhs;
        }
    }
    ExactLemmaCheck { n, square, symmetric, generating_function }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectCheck {
    pub n0: usize,
    /// `max |⟨R_k|R_k'⟩ − δ|`.
    pub gram_residual: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub povm: PovmReport,
}

pub fn check_effect(n0: usize, tol: f64) -> Result<EffectCheck> {
    let e = pgls_effect(n0)?;
    let gram_residual = (&e.gram() - &ComplexMatrix::identity(n0)).max_abs();
    let spec = eigh(&e.r)?;
    Ok(EffectCheck {
        n0,
        gram_residual,
        min_eigenvalue: spec.min(),
        max_eigenvalue: spec.max(),
        povm: validate_povm(&e.povm(), tol),
    })
}

/// Largest deviation of the dense retrieval from `N₀/(N₀+1) P_{U,0}` over
/// the given measurements.
pub fn retrieval_residual(ms: &[VonNeumannMeasurement], n0: usize) -> Result<f64> {
    let effect = pgls_effect(n0)?;
    let c = n0 as f64 / (n0 + 1) as f64;
    let mut worst: f64 = 0.0;
    for m in ms {
        let memory = kron_power(&m.effect(0).conj(), n0);
        let q = contract_second(&effect.r, 2, &memory)?;
        worst = worst.max((&q - &m.effect(0).scale_real(c)).max_abs());
    }
    Ok(worst)
}

/// `|F_float − F_exact|` helper for reports.
pub fn exact_float_gap(n: usize) -> Result<f64> {
    let exact = pgls_avg_fidelity_exact(n)?;
    let approx = big_to_f64(exact.numer()) / big_to_f64(exact.denom());
    Ok((approx - pgls_avg_fidelity(n)?).abs())
}

/// Renders a rational as `p/q` with a reduced fraction.
pub fn rational_string(x: &BigRational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else if x.is_negative() {
        format!("-{}/{}", x.numer().abs(), x.denom())
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{fidelity, haar_measurement, mean_and_stderr, seeded_rng, vn_effects};
    use proptest::prelude::*;

    #[test]
    fn dicke_examples() {
        let d = dicke(3, 1).unwrap();
        let s = 1.0 / 3f64.sqrt();
        for (idx, z) in d.data().iter().enumerate() {
            let expect = if [4, 2, 1].contains(&idx) { s } else { 0.0 };
            assert!((z.re - expect).abs() < 1e-15 && z.im == 0.0);
        }
        assert_eq!(dicke(4, 0).unwrap(), ComplexMatrix::basis(16, 0));
        let d = dicke(4, 2).unwrap();
        let nz: Vec<_> = d.data().iter().filter(|z| z.norm() > 0.0).collect();
        assert_eq!(nz.len(), 6);
        assert!(nz.iter().all(|z| (z.re - 1.0 / 6f64.sqrt()).abs() < 1e-15));
        assert!(dicke(2, 3).is_err());
    }

    #[test]
    fn s_conv_small_cases() {
        assert_eq!(s_conv(0, 0, 0), BigInt::one());
        let m: Vec<Vec<i64>> = (0..=1)
            .map(|k| (0..=1).map(|mm| s_conv(1, k, mm).to_string().parse().unwrap()).collect())
            .collect();
        assert_eq!(m, vec![vec![-1, 1], vec![1, 1]]);
        assert_eq!(s_conv(3, 1, -1), BigInt::zero());
        assert_eq!(s_conv(3, 1, 4), BigInt::zero());
    }

    #[test]
    fn exact_lemmas_up_to_twelve() {
        for n in 0..=12 {
            let c = check_lemmas_exact(n, 0);
            assert!(c.pass(), "{c:?}");
        }
    }

    #[test]
    fn perturbed_matrix_fails_square_check() {
        assert!(!check_lemmas_exact(3, 1).square);
    }

    #[test]
    fn m_k_trivial_case_is_identity() {
        assert_eq!(m_k_matrix(0, 0).unwrap(), ComplexMatrix::identity(2));
    }

    #[test]
    fn m_k_norm_closed_form() {
        let m = m_k_matrix(3, 1).unwrap();
        assert!((m.frobenius_norm().powi(2) - 10.0 / 3.0).abs() < 1e-12);
        for n in 0..=6 {
            for k in 0..=n {
                let f = m_k_matrix(n, k).unwrap().frobenius_norm().powi(2);
                assert!((f - m_k_norm_sq(n, k)).abs() < 1e-10 * f);
            }
        }
    }

    #[test]
    fn m_k_acts_on_product_vectors() {
        let mut rng = seeded_rng(11);
        for n in 0..=6 {
            for _ in 0..20 {
                let u = crate::quantum::haar_unitary(2, &mut rng);
                let x = ComplexMatrix::from_fn(2, 1, |r, _| u[(r, 0)]);
                let (a, b) = (x.data()[0], x.data()[1]);
                let xs = kron_power(&x, n + 1);
                for k in 0..=n {
                    let got = &m_k_matrix(n, k).unwrap() * &xs;
                    let coeff = (a + b).powu(k as u32) * (a - b).powu((n - k) as u32);
                    assert!((&got - &x.scale(coeff)).max_abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn effect_is_valid_for_small_memories() {
        for n0 in 1..=8 {
            let c = check_effect(n0, 1e-9).unwrap();
            assert!(c.gram_residual < 1e-10, "{c:?}");
            assert!(c.povm.pass, "{c:?}");
            assert!(c.min_eigenvalue > -1e-9 && c.max_eigenvalue < 1.0 + 1e-9);
        }
        let e = pgls_effect(1).unwrap();
        assert!((&(&e.r * &e.r) - &e.r).max_abs() < 1e-12);
        assert!((e.r.trace().re - 1.0).abs() < 1e-12);
        assert!(pgls_effect(0).is_err());
    }

    #[test]
    fn retrieval_examples() {
        let q = pgls_retrieved_effect(&VonNeumannMeasurement::computational(2), 1).unwrap();
        assert!((&q - &ComplexMatrix::diag_real(&[0.5, 0.0])).max_abs() < 1e-14);

        let mut rng = seeded_rng(12);
        let m = haar_measurement(2, &mut rng);
        let q = pgls_retrieved_effect(&m, 4).unwrap();
        assert!((&q - &m.effect(0).scale_real(0.8)).max_abs() < 1e-10);

        let q = pgls_retrieved_effect(&m, 9).unwrap();
        let gap = (&q - &m.effect(0)).hermitian_spectral_norm().unwrap();
        assert!((gap - 0.1).abs() < 1e-10);
    }

    #[test]
    fn dense_and_vector_retrieval_agree() {
        let mut rng = seeded_rng(13);
        for n0 in 1..=5 {
            let m = haar_measurement(2, &mut rng);
            let v = pgls_basis_vectors(n0).unwrap();
            let fast = retrieve_from_vectors(&v, &m.basis_vector(0), n0);
            let dense = pgls_retrieved_effect(&m, n0).unwrap();
            assert!((&fast - &dense).max_abs() < 1e-12);
        }
    }

    #[test]
    fn average_fidelity_table_row() {
        let expect = [0.7500, 0.7917, 0.8438, 0.8625, 0.8854];
        for (n, e) in (1..=5).zip(expect) {
            let f = pgls_avg_fidelity(n).unwrap();
            assert!(((f * 1e4).round() / 1e4 - e).abs() < 5e-5, "N={n}: {f}");
        }
        assert!((pgls_avg_fidelity(3).unwrap() - 0.84375).abs() < 1e-15);
        assert_eq!(rational_string(&pgls_avg_fidelity_exact(3).unwrap()), "27/32");
        assert_eq!(rational_string(&pgls_avg_fidelity_exact(1).unwrap()), "3/4");
    }

    #[test]
    fn exact_and_float_agree() {
        for n in 1..=60 {
            assert!(exact_float_gap(n).unwrap() < 1e-13, "N={n}");
        }
    }

    #[test]
    fn average_fidelity_bounds() {
        for n in 1..=200 {
            let f = pgls_avg_fidelity(n).unwrap();
            let k = n.div_ceil(2);
            assert!(f >= per_run_fidelity(k) - 1e-15, "N={n}");
            assert!(f >= 0.75 - 1e-15 && f < 1.0);
        }
        assert!(pgls_avg_fidelity(5000).unwrap().is_finite());
    }

    #[test]
    fn mixture_form_examples() {
        assert!((pgls_mixture_form(1).unwrap() - 0.5).abs() < 1e-15);
        assert!((pgls_mixture_form(2).unwrap() - 7.0 / 12.0).abs() < 1e-12);
        let mut rng = seeded_rng(14);
        for n in [1, 4] {
            let p0 = pgls_mixture_form(n).unwrap();
            for _ in 0..10 {
                let p = vn_effects(&haar_measurement(2, &mut rng));
                let q = p.mix(p0, &crate::quantum::depolarize_effects(2)).unwrap();
                assert!((fidelity(&p, &q).unwrap() - pgls_avg_fidelity(n).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulator_n1_always_three_quarters() {
        let mut rng = seeded_rng(15);
        let mut sim = PglsSimulator::new();
        let mut ones = 0;
        for _ in 0..2000 {
            let m = haar_measurement(2, &mut rng);
            let (rec, q) = sim.run(&m, 1, &mut rng).unwrap();
            ones += rec.outcomes[0] as usize;
            assert_eq!(rec.n_major, 1);
            assert!((fidelity(&vn_effects(&m), &q).unwrap() - 0.75).abs() < 1e-12);
            assert!(validate_povm(&q, 1e-9).pass);
        }
        // Binomial(2000, 1/2): 5σ ≈ 112
        assert!((ones as i64 - 1000).abs() < 112, "{ones}");
    }

    #[test]
    fn simulator_mean_matches_closed_form_at_three() {
        let mut rng = seeded_rng(7);
        let mut sim = PglsSimulator::new();
        let vals: Vec<f64> = (0..10_000)
            .map(|_| {
                let m = haar_measurement(2, &mut rng);
                let (_, q) = sim.run(&m, 3, &mut rng).unwrap();
                fidelity(&vn_effects(&m), &q).unwrap()
            })
            .collect();
        let (mean, se) = mean_and_stderr(&vals);
        assert!((mean - pgls_avg_fidelity(3).unwrap()).abs() <= 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn simulator_record_invariants() {
        let mut rng = seeded_rng(16);
        let mut sim = PglsSimulator::new();
        for n in 1..=6 {
            for _ in 0..50 {
                let m = haar_measurement(2, &mut rng);
                let (rec, q) = sim.run(&m, n, &mut rng).unwrap();
                assert!(rec.n_major >= n.div_ceil(2));
                assert_eq!(rec.fidelity, per_run_fidelity(rec.n_major));
                assert!((fidelity(&vn_effects(&m), &q).unwrap() - rec.fidelity).abs() < 1e-12);
                if n % 2 == 0 && rec.n_major == n / 2 {
                    assert_eq!(rec.majority_label, 0);
                }
            }
        }
    }

    #[test]
    fn retrieve_given_record() {
        let m = haar_measurement(2, &mut seeded_rng(17));
        let mut sim = PglsSimulator::new();
        let (rec, q) = sim.retrieve(&m, vec![1, 0, 1, 1]).unwrap();
        assert_eq!((rec.majority_label, rec.n_major), (1, 3));
        assert!((fidelity(&vn_effects(&m), &q).unwrap() - per_run_fidelity(3)).abs() < 1e-12);
        let (tie, _) = sim.retrieve(&m, vec![1, 0]).unwrap();
        assert_eq!((tie.majority_label, tie.n_major), (0, 1));
        assert!(sim.retrieve(&m, vec![]).is_err());
        assert!(sim.retrieve(&m, vec![0, 2]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn retrieval_matches_closed_form(seed in any::<u64>(), n0 in 1usize..=6) {
            let mut rng = seeded_rng(seed);
            let m = haar_measurement(2, &mut rng);
            prop_assert!(retrieval_residual(&[m], n0).unwrap() < 1e-10);
        }
    }
}
