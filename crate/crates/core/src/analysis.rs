//! Error estimation per sifted subset, closed-form predictions under the
//! biased intercept-resend attack, and the accept/abort decisions.

use rand::Rng;
use serde::Serialize;

use crate::adversary::AttackPolicy;
use crate::error::{Error, Result};
use crate::quantum::Amplitudes;
use crate::session::{PairRecord, SampleSizes, SubsetLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Abort,
}

impl Decision {
    fn below(value: f64, e_max: f64) -> Self {
        if value < e_max {
            Decision::Accept
        } else {
            Decision::Abort
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsetEstimate {
    pub label: SubsetLabel,
    /// Sifted records available in this subset before sampling.
    pub population: u64,
    pub sample_size: usize,
    pub mismatches: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub epsilon: f64,
    pub e_max: f64,
    /// Always six entries in the order e1, e1p, e2, e2p, e3, e3p.
    pub subsets: Vec<SubsetEstimate>,
    /// The naive single-number error rate, combining the subset estimates with
    /// the expected subset weights for this epsilon.
    pub average_error: f64,
    /// Subset estimates weighted by the observed subset populations.
    pub pooled_error: f64,
    pub refined_decision: Decision,
    pub naive_decision: Decision,
    pub sifted_length: u64,
    pub remaining_key_length: usize,
}

impl ErrorReport {
    pub fn subset(&self, label: SubsetLabel) -> &SubsetEstimate {
        &self.subsets[label.index()]
    }

    pub fn estimate(&self, label: SubsetLabel) -> f64 {
        self.subset(label).estimate
    }

    pub fn estimates(&self) -> [f64; 6] {
        SubsetLabel::ALL.map(|l| self.estimate(l))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Report plus the record positions whose bits remain as key material, in
/// ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorEstimation {
    pub report: ErrorReport,
    pub key_positions: Vec<usize>,
}

/// Samples `m_i` records per subset without replacement, compares bits
/// publicly, and drops the compared records from the key material.
pub fn estimate_errors<R: Rng + ?Sized>(
    records: &[PairRecord],
    m_samples: &SampleSizes,
    epsilon: f64,
    e_max: f64,
    rng: &mut R,
) -> Result<ErrorEstimation> {
    let mut members: [Vec<usize>; 6] = Default::default();
    for (pos, r) in records.iter().enumerate() {
        if let Some(label) = r.subset {
            members[label.index()].push(pos);
        }
    }
    for label in SubsetLabel::ALL {
        let (available, required) = (members[label.index()].len(), m_samples.get(label));
        if available < required {
            return Err(Error::InsufficientSamples {
                label,
                available,
                required,
            });
        }
    }

    let mut tested = vec![false; records.len()];
    let mut subsets = Vec::with_capacity(6);
    for label in SubsetLabel::ALL {
        let pool = &members[label.index()];
        let m = m_samples.get(label);
        let mut mismatches = 0;
        for i in rand::seq::index::sample(rng, pool.len(), m) {
            let pos = pool[i];
            tested[pos] = true;
            mismatches += usize::from(records[pos].is_mismatch());
        }
        subsets.push(SubsetEstimate {
            label,
            population: pool.len() as u64,
            sample_size: m,
            mismatches,
            estimate: mismatches as f64 / m as f64,
        });
    }

    let key_positions: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(pos, r)| r.subset.is_some() && !tested[*pos])
        .map(|(pos, _)| pos)
        .collect();

    let estimates: [f64; 6] = std::array::from_fn(|i| subsets[i].estimate);
    let average_error = weighted_average(&estimates, epsilon);
    let sifted_length: u64 = subsets.iter().map(|s| s.population).sum();
    let pooled_error = subsets
        .iter()
        .map(|s| s.estimate * s.population as f64)
        .sum::<f64>()
        / sifted_length as f64;
    let refined_decision = if estimates.iter().all(|&e| e < e_max) {
        Decision::Accept
    } else {
        Decision::Abort
    };

    Ok(ErrorEstimation {
        report: ErrorReport {
            epsilon,
            e_max,
            subsets,
            average_error,
            pooled_error,
            refined_decision,
            naive_decision: Decision::below(average_error, e_max),
            sifted_length,
            remaining_key_length: key_positions.len(),
        },
        key_positions,
    })
}

/// Mismatch count over an entire subset, without sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SubsetFrequency {
    pub population: u64,
    pub mismatches: u64,
}

impl SubsetFrequency {
    /// `None` for an empty subset.
    pub fn rate(&self) -> Option<f64> {
        (self.population > 0).then(|| self.mismatches as f64 / self.population as f64)
    }
}

pub fn subset_frequencies(records: &[PairRecord]) -> [SubsetFrequency; 6] {
    let mut out = [SubsetFrequency::default(); 6];
    for r in records {
        if let Some(label) = r.subset {
            let f = &mut out[label.index()];
            f.population += 1;
            f.mismatches += u64::from(r.is_mismatch());
        }
    }
    out
}

/// Closed-form subset error rates under a biased intercept-resend attack.
/// Indexed like [`SubsetLabel::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictedRates {
    pub e1: f64,
    pub e1p: f64,
    pub e2: f64,
    pub e2p: f64,
    pub e3: f64,
    pub e3p: f64,
}

impl PredictedRates {
    pub fn get(&self, label: SubsetLabel) -> f64 {
        self.as_array()[label.index()]
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.e1, self.e1p, self.e2, self.e2p, self.e3, self.e3p]
    }
}

pub fn predict_rates(amps: Amplitudes, policy: &AttackPolicy) -> PredictedRates {
    let ab = amps.alpha_sq() * amps.beta_sq();
    let diff = amps.alpha_sq() - amps.beta_sq();
    let randomize = 2.0 * ab;
    let cross = 8.0 * ab * diff * diff;
    let rect = randomize * (policy.p2() + policy.p3());
    let plus = randomize * policy.p1() + cross * policy.p3();
    let minus = randomize * policy.p1() + cross * policy.p2();
    PredictedRates {
        e1: rect,
        e1p: rect,
        e2: plus,
        e2p: minus,
        e3: minus,
        e3p: plus,
    }
}

/// Fraction of all pairs that survive sifting: `(1−ε)² + ε²/2`.
pub fn sifted_fraction(epsilon: f64) -> f64 {
    (1.0 - epsilon).powi(2) + epsilon * epsilon / 2.0
}

/// Combines six subset rates (label order) into the single average a naive
/// analysis would test: rectilinear subsets weighted by `(1−ε)²`, diagonal
/// ones by `ε²/4`, normalized by `2[(1−ε)² + ε²/2]`.
pub fn weighted_average(rates: &[f64; 6], epsilon: f64) -> f64 {
    let rect: f64 = SubsetLabel::ALL
        .iter()
        .filter(|l| l.is_rectilinear())
        .map(|l| rates[l.index()])
        .sum();
    let diag: f64 = SubsetLabel::ALL
        .iter()
        .filter(|l| !l.is_rectilinear())
        .map(|l| rates[l.index()])
        .sum();
    let num = (1.0 - epsilon).powi(2) * rect + epsilon * epsilon / 4.0 * diag;
    num / (2.0 * sifted_fraction(epsilon))
}

pub fn predict_average(amps: Amplitudes, policy: &AttackPolicy, epsilon: f64) -> f64 {
    weighted_average(&predict_rates(amps, policy).as_array(), epsilon)
}

/// Smallest epsilon whose expected diagonal-subset population `Nε²/8`
/// reaches `m`, i.e. `2·sqrt(2m/N)`.
pub fn min_epsilon(n_pairs: u64, m_required: u64) -> Result<f64> {
    assert!(
        n_pairs >= 1 && m_required >= 1,
        "n_pairs and m_required must be positive"
    );
    let eps = 2.0 * (2.0 * m_required as f64 / n_pairs as f64).sqrt();
    if eps > 1.0 {
        return Err(Error::Infeasible { required: eps });
    }
    Ok(eps)
}

/// Ceiling on the efficiency of the concentrate-then-EPR alternative:
/// `2·min(α², β²)`.
pub fn concentration_efficiency_bound(amps: Amplitudes) -> f64 {
    2.0 * amps.alpha_sq().min(amps.beta_sq())
}
