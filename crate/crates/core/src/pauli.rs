//! Signed Pauli strings on a flat qubit register.
//!
//! A string is stored as a pair of bit masks (`x_mask`, `z_mask`) plus a
//! phase that is an exact power of `i`. A qubit with both bits set carries a
//! `Y` (up to the stored phase), so the operator is
//!
//! ```text
//! op = i^phase_exp * P_{K-1} x ... x P_1 x P_0,   P_q in {I, X, Y, Z}
//! ```
//!
//! All algebra (products, commutators, application to state vectors) is exact;
//! no floating-point error enters until a string is applied to amplitudes.
//! Registers are limited to at most 64 qubits, far beyond what exact
//! diagonalization can hold in memory anyway.

use ndarray::Array1;
use num_complex::Complex64;
use thiserror::Error;

/// Position of a qubit in a fixed register ordering.
///
/// Lattice modules own the mapping from geometric labels (plaquettes, links,
/// winding spins) to flat indices; this type is deliberately geometry-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QubitIndex(pub usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PauliError {
    #[error("register size mismatch: {0} vs {1}")]
    RegisterMismatch(usize, usize),
    #[error("dimension mismatch: operator register {0} needs dimension {1}, state has {2}")]
    DimensionMismatch(usize, usize, usize),
    #[error("qubit index {0} out of range for register of {1} qubits")]
    QubitOutOfRange(usize, usize),
    #[error("non-Hermitian term: phase i^{0} with real coefficient")]
    NonHermitianTerm(u8),
}

/// A signed product of single-site Pauli operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PauliString {
    x_mask: u64,
    z_mask: u64,
    /// Phase exponent `p` with the string carrying the factor `i^p`, `p` mod 4.
    phase_exp: u8,
    register: usize,
}

impl PauliString {
    /// Identity string on `register` qubits.
    pub fn identity(register: usize) -> Self {
        assert!(register <= 64, "register limited to 64 qubits");
        PauliString { x_mask: 0, z_mask: 0, phase_exp: 0, register }
    }

    pub fn from_masks(register: usize, x_mask: u64, z_mask: u64) -> Self {
        assert!(register <= 64, "register limited to 64 qubits");
        if register < 64 {
            let valid = (1u64 << register) - 1;
            assert!(x_mask & !valid == 0 && z_mask & !valid == 0, "mask outside register");
        }
        PauliString { x_mask, z_mask, phase_exp: 0, register }
    }

    pub fn x(register: usize, q: QubitIndex) -> Self {
        Self::from_masks(register, 1 << q.0, 0)
    }

    pub fn y(register: usize, q: QubitIndex) -> Self {
        Self::from_masks(register, 1 << q.0, 1 << q.0)
    }

    pub fn z(register: usize, q: QubitIndex) -> Self {
        Self::from_masks(register, 0, 1 << q.0)
    }

    pub fn register_size(&self) -> usize {
        self.register
    }

    pub fn x_mask(&self) -> u64 {
        self.x_mask
    }

    pub fn z_mask(&self) -> u64 {
        self.z_mask
    }

    pub fn is_identity(&self) -> bool {
        self.x_mask == 0 && self.z_mask == 0
    }

    /// Phase as an exact power of `i` (exponent mod 4).
    pub fn phase_exp(&self) -> u8 {
        self.phase_exp
    }

    pub fn phase(&self) -> Complex64 {
        match self.phase_exp {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

    /// True when the phase is `+1` or `-1`, as required for Hamiltonian terms.
    pub fn phase_is_real(&self) -> bool {
        self.phase_exp % 2 == 0
    }

    /// Sign of a real phase; panics if the phase is imaginary.
    pub fn real_sign(&self) -> f64 {
        match self.phase_exp {
            0 => 1.0,
            2 => -1.0,
            _ => panic!("real_sign on imaginary phase i^{}", self.phase_exp),
        }
    }

    pub fn with_sign(mut self, sign: f64) -> Self {
        if sign < 0.0 {
            self.phase_exp = (self.phase_exp + 2) % 4;
        }
        self
    }

    /// Same masks, phase reset to `+1`.
    pub fn unsigned(mut self) -> Self {
        self.phase_exp = 0;
        self
    }

    fn check_register(&self, other: &PauliString) -> Result<(), PauliError> {
        if self.register != other.register {
            return Err(PauliError::RegisterMismatch(self.register, other.register));
        }
        Ok(())
    }

    /// Product `self * other` with the exact accumulated phase.
    pub fn multiply(&self, other: &PauliString) -> Result<PauliString, PauliError> {
        self.check_register(other)?;
        // Work in the X^x Z^z normal form: a Y-convention string equals
        // i^{|x&z|} X^x Z^z up to the stored phase. Reordering Z^z1 past X^x2
        // costs (-1)^{|z1&x2|}.
        let x = self.x_mask ^ other.x_mask;
        let z = self.z_mask ^ other.z_mask;
        let y_self = (self.x_mask & self.z_mask).count_ones();
        let y_other = (other.x_mask & other.z_mask).count_ones();
        let y_out = (x & z).count_ones();
        let reorder = 2 * (self.z_mask & other.x_mask).count_ones();
        // i^{y_self + y_other} from normal forms, i^{-y_out} converting back.
        let exp = self.phase_exp as u32 + other.phase_exp as u32 + y_self + y_other + reorder
            + (4 - y_out % 4);
        Ok(PauliString {
            x_mask: x,
            z_mask: z,
            phase_exp: (exp % 4) as u8,
            register: self.register,
        })
    }

    /// True iff `self * other == other * self`.
    pub fn commutes(&self, other: &PauliString) -> Result<bool, PauliError> {
        self.check_register(other)?;
        let anti = (self.x_mask & other.z_mask).count_ones()
            + (self.z_mask & other.x_mask).count_ones();
        Ok(anti % 2 == 0)
    }

    /// Applies the string to a state vector of dimension `2^register`.
    ///
    /// X bits permute basis indices, Z bits flip amplitude signs, the phase
    /// multiplies globally.
    pub fn apply(&self, state: &Array1<Complex64>) -> Result<Array1<Complex64>, PauliError> {
        let dim = 1usize << self.register;
        if state.len() != dim {
            return Err(PauliError::DimensionMismatch(self.register, dim, state.len()));
        }
        // Y-convention: op = i^{phase_exp} i^{|x&z|} X^x Z^z.
        let y_count = (self.x_mask & self.z_mask).count_ones();
        let global = self.phase() * Complex64::i().powu(y_count);
        let mut out = Array1::zeros(dim);
        let x = self.x_mask;
        let z = self.z_mask;
        for (s, amp) in state.iter().enumerate() {
            let sign = if ((s as u64) & z).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            out[(s as u64 ^ x) as usize] = global * sign * amp;
        }
        Ok(out)
    }

    /// Hermitian conjugate (flips the sign of imaginary phases).
    pub fn dagger(&self) -> PauliString {
        // A phase-free Y-convention string is Hermitian.
        let exp = match self.phase_exp {
            1 => 3,
            3 => 1,
            e => e,
        };
        PauliString { phase_exp: exp, ..*self }
    }

    /// Dense matrix representation, for small-register oracle checks only.
    pub fn to_dense(&self) -> ndarray::Array2<Complex64> {
        let dim = 1usize << self.register;
        let mut m = ndarray::Array2::zeros((dim, dim));
        let y_count = (self.x_mask & self.z_mask).count_ones();
        let global = self.phase() * Complex64::i().powu(y_count);
        for s in 0..dim {
            let sign = if ((s as u64) & self.z_mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            m[[(s as u64 ^ self.x_mask) as usize, s]] = global * sign;
        }
        m
    }
}

impl std::fmt::Display for PauliString {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.phase_exp {
            0 => write!(f, "+")?,
            1 => write!(f, "+i")?,
            2 => write!(f, "-")?,
            _ => write!(f, "-i")?,
        }
        if self.is_identity() {
            return write!(f, "I");
        }
        for q in (0..self.register).rev() {
            let xb = self.x_mask >> q & 1;
            let zb = self.z_mask >> q & 1;
            match (xb, zb) {
                (0, 0) => {}
                (1, 0) => write!(f, "X{q}")?,
                (0, 1) => write!(f, "Z{q}")?,
                _ => write!(f, "Y{q}")?,
            }
        }
        Ok(())
    }
}

/// A real-linear combination of Pauli strings in canonical merged form.
///
/// Every stored string has phase `+1`; signs are folded into the real
/// coefficients, so the sum is Hermitian by construction. No two terms share
/// identical masks.
#[derive(Debug, Clone, Default)]
pub struct OperatorSum {
    register: usize,
    terms: Vec<(f64, PauliString)>,
}

impl OperatorSum {
    pub fn new(register: usize) -> Self {
        OperatorSum { register, terms: Vec::new() }
    }

    pub fn register_size(&self) -> usize {
        self.register
    }

    /// Adds `coeff * op`, folding the string's `±1` phase into the
    /// coefficient and merging with an existing term of the same masks.
    pub fn add(&mut self, coeff: f64, op: PauliString) -> Result<(), PauliError> {
        if op.register_size() != self.register {
            return Err(PauliError::RegisterMismatch(op.register_size(), self.register));
        }
        if !op.phase_is_real() {
            return Err(PauliError::NonHermitianTerm(op.phase_exp));
        }
        let c = coeff * op.real_sign();
        let key = op.unsigned();
        if let Some(t) = self.terms.iter_mut().find(|(_, p)| *p == key) {
            t.0 += c;
            if t.0 == 0.0 {
                self.terms.retain(|(_, p)| *p != key);
            }
        } else if c != 0.0 {
            self.terms.push((c, key));
        }
        Ok(())
    }

    pub fn terms(&self) -> &[(f64, PauliString)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn extend(&mut self, other: &OperatorSum) -> Result<(), PauliError> {
        for (c, p) in &other.terms {
            self.add(*c, *p)?;
        }
        Ok(())
    }

    /// Applies the sum to a state vector (no precompilation; see
    /// [`crate::spectra::CompiledHamiltonian`] for the streaming fast path).
    pub fn apply(&self, state: &Array1<Complex64>) -> Result<Array1<Complex64>, PauliError> {
        let dim = 1usize << self.register;
        if state.len() != dim {
            return Err(PauliError::DimensionMismatch(self.register, dim, state.len()));
        }
        let mut out = Array1::zeros(dim);
        for (c, p) in &self.terms {
            out = out + p.apply(state)?.mapv(|a| a * *c);
        }
        Ok(out)
    }

    /// Dense matrix, for small registers.
    pub fn to_dense(&self) -> ndarray::Array2<Complex64> {
        let dim = 1usize << self.register;
        let mut m = ndarray::Array2::zeros((dim, dim));
        for (c, p) in &self.terms {
            m = m + p.to_dense().mapv(|a| a * *c);
        }
        m
    }

    /// Largest commutator violation against `op`, exact bit-parity check.
    pub fn commutes_with(&self, op: &PauliString) -> Result<bool, PauliError> {
        // A Hermitian sum commutes with a string iff every term does, except
        // for accidental cancellations which do not occur for Pauli sums with
        // distinct masks.
        for (_, p) in &self.terms {
            if !p.commutes(op)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
