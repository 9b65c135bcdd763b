//! Real-amplitude statevector kernel for one and two polarization qubits.
//!
//! Every state the protocol touches has real coordinates, so nothing here uses
//! complex arithmetic. Measurement bases are stored as explicit eigenstate
//! pairs; the rotation angle `atan(beta / alpha)` is never materialized.

use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance for normalization and orthogonality checks.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// Schmidt coefficients `(alpha, beta)` of the source state `alpha|HH> + beta|VV>`.
///
/// Both components are real and nonnegative. `alpha = 0` or `beta = 0` is legal
/// and yields a product state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Amplitudes {
    alpha: f64,
    beta: f64,
}

impl Amplitudes {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta < 0.0 {
            return Err(Error::InvalidAmplitudes(format!(
                "alpha = {alpha}, beta = {beta}: both must be finite and nonnegative"
            )));
        }
        let norm = alpha * alpha + beta * beta;
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidAmplitudes(format!(
                "alpha² + beta² = {norm}, expected 1"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// Builds the pair from `alpha²`, taking nonnegative square roots.
    pub fn from_alpha_sq(alpha_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_sq) {
            return Err(Error::InvalidAmplitudes(format!(
                "alpha² = {alpha_sq} is outside [0, 1]"
            )));
        }
        Self::new(alpha_sq.sqrt(), (1.0 - alpha_sq).sqrt())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha_sq(&self) -> f64 {
        self.alpha * self.alpha
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta * self.beta
    }

    /// `(beta, alpha)`: the coefficients of the primed source state.
    pub fn swapped(&self) -> Self {
        Self {
            alpha: self.beta,
            beta: self.alpha,
        }
    }
}

/// Single-photon polarization state `c_h|H> + c_v|V>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    c_h: f64,
    c_v: f64,
}

impl QubitState {
    pub const H: QubitState = QubitState { c_h: 1.0, c_v: 0.0 };
    pub const V: QubitState = QubitState { c_h: 0.0, c_v: 1.0 };

    pub fn new(c_h: f64, c_v: f64) -> Result<Self> {
        let norm = c_h * c_h + c_v * c_v;
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { c_h, c_v })
    }

    /// Rescales a nonzero vector to unit length.
    fn normalized(c_h: f64, c_v: f64) -> Self {
        let norm = c_h.hypot(c_v);
        debug_assert!(norm > 0.0, "cannot normalize the zero vector");
        Self {
            c_h: c_h / norm,
            c_v: c_v / norm,
        }
    }

    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    pub fn c_v(&self) -> f64 {
        self.c_v
    }

    pub fn dot(&self, other: &QubitState) -> f64 {
        self.c_h * other.c_h + self.c_v * other.c_v
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Two-photon state over the ordered basis `{HH, HV, VH, VV}`; photon A is the
/// first factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    coords: [f64; 4],
}

impl PairState {
    pub fn new(coords: [f64; 4]) -> Result<Self> {
        let norm: f64 = coords.iter().map(|c| c * c).sum();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> [f64; 4] {
        self.coords
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisTag {
    /// `{H, V}`
    Rect,
    /// `{(H+V)/√2, (H−V)/√2}`
    Diag,
    /// `{alpha H + beta V, beta H − alpha V}`
    PlusTheta,
    /// `{beta H + alpha V, alpha H − beta V}`
    MinusTheta,
}

impl BasisTag {
    pub const ALL: [BasisTag; 4] = [
        BasisTag::Rect,
        BasisTag::Diag,
        BasisTag::PlusTheta,
        BasisTag::MinusTheta,
    ];
}

/// Projective measurement basis held as its two eigenstates: index 0 reads
/// out bit 0, index 1 reads out bit 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasBasis {
    tag: BasisTag,
    states: [QubitState; 2],
}

impl MeasBasis {
    pub fn tag(&self) -> BasisTag {
        self.tag
    }

    pub fn eigenstate(&self, bit: u8) -> QubitState {
        self.states[usize::from(bit & 1)]
    }

    pub fn bit0_state(&self) -> QubitState {
        self.states[0]
    }

    pub fn bit1_state(&self) -> QubitState {
        self.states[1]
    }
}

/// Which of the two equivalent source states Alice prepared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceChoice {
    /// `alpha|HH> + beta|VV>`
    Plain,
    /// `beta|HH> + alpha|VV>`, the image of `Plain` under `σx ⊗ σx`.
    Primed,
}

pub fn make_pair_state(amps: Amplitudes, source: SourceChoice) -> PairState {
    let (a, b) = match source {
        SourceChoice::Plain => (amps.alpha, amps.beta),
        SourceChoice::Primed => (amps.beta, amps.alpha),
    };
    PairState {
        coords: [a, 0.0, 0.0, b],
    }
}

pub fn basis_for(tag: BasisTag, amps: Amplitudes) -> MeasBasis {
    let (a, b) = (amps.alpha, amps.beta);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let states = match tag {
        BasisTag::Rect => [QubitState::H, QubitState::V],
        BasisTag::Diag => [
            QubitState { c_h: s, c_v: s },
            QubitState { c_h: s, c_v: -s },
        ],
        BasisTag::PlusTheta => [
            QubitState { c_h: a, c_v: b },
            QubitState { c_h: b, c_v: -a },
        ],
        BasisTag::MinusTheta => [
            QubitState { c_h: b, c_v: a },
            QubitState { c_h: a, c_v: -b },
        ],
    };
    MeasBasis { tag, states }
}

/// Born-rule transition probability `(a·b)²`.
pub fn overlap_prob(a: &QubitState, b: &QubitState) -> f64 {
    let d = a.dot(b);
    (d * d).min(1.0)
}

/// Draws bit 0 with probability `w0 / (w0 + w1)`.
///
/// Normalizing by the total weight makes eigenstate inputs deterministic: the
/// complementary weight is an exact zero, so the ratio is exactly 0 or 1.
fn sample_bit<R: Rng + ?Sized>(w0: f64, w1: f64, rng: &mut R) -> u8 {
    let p0 = w0 / (w0 + w1);
    let u: f64 = rng.random();
    if u < p0 {
        0
    } else {
        1
    }
}

/// Unnormalized state of photon B after projecting photon A onto `a_state`.
fn project_first(pair: &PairState, a_state: &QubitState) -> (f64, f64) {
    let [hh, hv, vh, vv] = pair.coords;
    (
        a_state.c_h * hh + a_state.c_v * vh,
        a_state.c_h * hv + a_state.c_v * vv,
    )
}

/// Outcome probabilities `(P(bit 0), P(bit 1))` for measuring photon A of
/// `pair` in `basis`.
pub fn pair_first_probs(pair: &PairState, basis: &MeasBasis) -> (f64, f64) {
    let w = |s: &QubitState| {
        let (h, v) = project_first(pair, s);
        h * h + v * v
    };
    let (w0, w1) = (w(&basis.states[0]), w(&basis.states[1]));
    let total = w0 + w1;
    (w0 / total, w1 / total)
}

/// Measures photon A of `pair` in `basis` and returns Alice's bit together with
/// the normalized post-measurement state of photon B.
pub fn measure_pair_first<R: Rng + ?Sized>(
    pair: &PairState,
    basis: &MeasBasis,
    rng: &mut R,
) -> (u8, QubitState) {
    let b0 = project_first(pair, &basis.states[0]);
    let b1 = project_first(pair, &basis.states[1]);
    let w0 = b0.0 * b0.0 + b0.1 * b0.1;
    let w1 = b1.0 * b1.0 + b1.1 * b1.1;
    let bit = sample_bit(w0, w1, rng);
    let (h, v) = if bit == 0 { b0 } else { b1 };
    (bit, QubitState::normalized(h, v))
}

/// Projective single-qubit measurement; the collapsed state is the basis
/// eigenstate for the returned bit.
pub fn measure_qubit<R: Rng + ?Sized>(
    state: &QubitState,
    basis: &MeasBasis,
    rng: &mut R,
) -> (u8, QubitState) {
    let w0 = overlap_prob(state, &basis.states[0]);
    let w1 = overlap_prob(state, &basis.states[1]);
    let bit = sample_bit(w0, w1, rng);
    (bit, basis.eigenstate(bit))
}
