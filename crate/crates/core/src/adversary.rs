//! Biased intercept-resend attack on the photon travelling to Bob.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{basis_for, measure_qubit, Amplitudes, BasisTag, QubitState};

/// Eve's per-photon basis probabilities: `p1` rectilinear, `p2` plus-theta,
/// `p3` minus-theta. She stays passive with the remaining probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct AttackPolicy {
    p1: f64,
    p2: f64,
    p3: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    p1: f64,
    p2: f64,
    p3: f64,
}

impl TryFrom<RawPolicy> for AttackPolicy {
    type Error = Error;

    fn try_from(raw: RawPolicy) -> Result<Self> {
        AttackPolicy::new(raw.p1, raw.p2, raw.p3)
    }
}

impl From<AttackPolicy> for RawPolicy {
    fn from(p: AttackPolicy) -> Self {
        RawPolicy {
            p1: p.p1,
            p2: p.p2,
            p3: p.p3,
        }
    }
}

impl Default for AttackPolicy {
    fn default() -> Self {
        Self::PASSIVE
    }
}

impl AttackPolicy {
    pub const PASSIVE: AttackPolicy = AttackPolicy {
        p1: 0.0,
        p2: 0.0,
        p3: 0.0,
    };

    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        for (name, p) in [("p1", p1), ("p2", p2), ("p3", p3)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidPolicy(format!(
                    "{name} = {p} is outside [0, 1]"
                )));
            }
        }
        // Allow for rounding in user-supplied thirds and the like.
        if p1 + p2 + p3 > 1.0 + 1e-12 {
            return Err(Error::InvalidPolicy(format!(
                "p1 + p2 + p3 = {} exceeds 1",
                p1 + p2 + p3
            )));
        }
        Ok(Self { p1, p2, p3 })
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn p3(&self) -> f64 {
        self.p3
    }

    pub fn passive_prob(&self) -> f64 {
        (1.0 - self.p1 - self.p2 - self.p3).max(0.0)
    }

    pub fn is_passive(&self) -> bool {
        self.p1 == 0.0 && self.p2 == 0.0 && self.p3 == 0.0
    }

    /// The policy with the two rotated-basis probabilities exchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            p1: self.p1,
            p2: self.p3,
            p3: self.p2,
        }
    }

    fn draw_basis<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<BasisTag> {
        let u: f64 = rng.random();
        if u < self.p1 {
            Some(BasisTag::Rect)
        } else if u < self.p1 + self.p2 {
            Some(BasisTag::PlusTheta)
        } else if u < self.p1 + self.p2 + self.p3 {
            Some(BasisTag::MinusTheta)
        } else {
            None
        }
    }
}

/// What Eve did to one photon. Her observed bit is kept for diagnostics only;
/// no protocol decision reads it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EveAction {
    MeasuredRect(u8),
    MeasuredPlus(u8),
    MeasuredMinus(u8),
    Passive,
}

impl EveAction {
    pub fn observed_bit(&self) -> Option<u8> {
        match *self {
            EveAction::MeasuredRect(b)
            | EveAction::MeasuredPlus(b)
            | EveAction::MeasuredMinus(b) => Some(b),
            EveAction::Passive => None,
        }
    }

    pub fn basis(&self) -> Option<BasisTag> {
        match self {
            EveAction::MeasuredRect(_) => Some(BasisTag::Rect),
            EveAction::MeasuredPlus(_) => Some(BasisTag::PlusTheta),
            EveAction::MeasuredMinus(_) => Some(BasisTag::MinusTheta),
            EveAction::Passive => None,
        }
    }

    /// CSV token: `passive`, or `<basis>:<bit>` with basis `rect`, `plus`, `minus`.
    pub fn token(&self) -> &'static str {
        match self {
            EveAction::MeasuredRect(0) => "rect:0",
            EveAction::MeasuredRect(_) => "rect:1",
            EveAction::MeasuredPlus(0) => "plus:0",
            EveAction::MeasuredPlus(_) => "plus:1",
            EveAction::MeasuredMinus(0) => "minus:0",
            EveAction::MeasuredMinus(_) => "minus:1",
            EveAction::Passive => "passive",
        }
    }
}

/// Intercepts `photon`, possibly measuring it, and returns the state forwarded
/// to Bob.
pub fn eve_intercept<R: Rng + ?Sized>(
    photon: &QubitState,
    policy: &AttackPolicy,
    amps: Amplitudes,
    rng: &mut R,
) -> (QubitState, EveAction) {
    let Some(tag) = policy.draw_basis(rng) else {
        return (*photon, EveAction::Passive);
    };
    let (bit, resent) = measure_qubit(photon, &basis_for(tag, amps), rng);
    let action = match tag {
        BasisTag::Rect => EveAction::MeasuredRect(bit),
        BasisTag::PlusTheta => EveAction::MeasuredPlus(bit),
        BasisTag::MinusTheta => EveAction::MeasuredMinus(bit),
        BasisTag::Diag => unreachable!("Eve never measures in the diagonal basis"),
    };
    (resent, action)
}
