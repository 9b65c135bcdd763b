//! Protocol steps 1 through 7: source choice, biased basis selection on both
//! sides, transit through the (possibly attacked) channel, and sifting into
//! the six test subsets.

use std::fmt;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{eve_intercept, AttackPolicy, EveAction};
use crate::error::{Error, Result};
use crate::quantum::{
    basis_for, make_pair_state, measure_pair_first, measure_qubit, Amplitudes, BasisTag,
    SourceChoice,
};

/// Substream reserved for test-sample selection during error estimation.
pub const STREAM_TEST_SAMPLING: u64 = u64::MAX;
/// Substream reserved for the shared permutations used in reconciliation.
pub const STREAM_RECONCILIATION: u64 = u64::MAX - 1;
/// Substream reserved for drawing the privacy-amplification hash seed.
pub const STREAM_HASH_SEED: u64 = u64::MAX - 2;
/// Trial indices must stay below the reserved substreams.
pub const MAX_PAIRS: u64 = u64::MAX - 16;

/// Counter-based substream: the ChaCha key comes from `seed`, the stream id
/// selects an independent keystream. Trial `i` always uses stream `i`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-subset test sample sizes in the order `m1, m1', m2, m2', m3, m3'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleSizes(pub [usize; 6]);

impl SampleSizes {
    pub fn uniform(m: usize) -> Self {
        Self([m; 6])
    }

    pub fn get(&self, label: SubsetLabel) -> usize {
        self.0[label.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub n_pairs: u64,
    pub epsilon: f64,
    pub alpha_sq: f64,
    pub attack: AttackPolicy,
    pub m_samples: SampleSizes,
    pub e_max: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1_000_000,
            epsilon: 0.1,
            alpha_sq: 0.8,
            attack: AttackPolicy::PASSIVE,
            m_samples: SampleSizes::uniform(500),
            e_max: 0.05,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |field, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.n_pairs == 0 {
            return invalid("n_pairs", "must be at least 1".into());
        }
        if self.n_pairs > MAX_PAIRS {
            return invalid("n_pairs", format!("must not exceed {MAX_PAIRS}"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return invalid(
                "epsilon",
                format!(
                    "{} is outside (0, 1]; epsilon can be small but never zero, \
                     a zero epsilon leaves the scheme insecure",
                    self.epsilon
                ),
            );
        }
        if !(0.0..=1.0).contains(&self.alpha_sq) {
            return invalid("alpha_sq", format!("{} is outside [0, 1]", self.alpha_sq));
        }
        if let Some(label) = SubsetLabel::ALL
            .into_iter()
            .find(|l| self.m_samples.get(*l) == 0)
        {
            return invalid(
                "m_samples",
                format!("sample size for {label} must be positive"),
            );
        }
        if !(self.e_max > 0.0 && self.e_max < 1.0) {
            return invalid("e_max", format!("{} is outside (0, 1)", self.e_max));
        }
        Ok(())
    }

    pub fn amplitudes(&self) -> Result<Amplitudes> {
        Amplitudes::from_alpha_sq(self.alpha_sq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AliceBasis {
    Rect,
    Diag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BobBasis {
    Rect,
    PlusTheta,
    MinusTheta,
}

impl From<AliceBasis> for BasisTag {
    fn from(b: AliceBasis) -> Self {
        match b {
            AliceBasis::Rect => BasisTag::Rect,
            AliceBasis::Diag => BasisTag::Diag,
        }
    }
}

impl From<BobBasis> for BasisTag {
    fn from(b: BobBasis) -> Self {
        match b {
            BobBasis::Rect => BasisTag::Rect,
            BobBasis::PlusTheta => BasisTag::PlusTheta,
            BobBasis::MinusTheta => BasisTag::MinusTheta,
        }
    }
}

/// The six sifted subsets, each tested separately.
///
/// `E1`/`E1P`: both rectilinear, plain/primed source. For a diagonal Alice,
/// `E2` and `E3` are the plain-source cases with Bob in plus-theta and
/// minus-theta; `E2P` and `E3P` are the primed-source cases with Bob in
/// minus-theta and plus-theta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetLabel {
    E1,
    E1P,
    E2,
    E2P,
    E3,
    E3P,
}

impl SubsetLabel {
    pub const ALL: [SubsetLabel; 6] = [
        SubsetLabel::E1,
        SubsetLabel::E1P,
        SubsetLabel::E2,
        SubsetLabel::E2P,
        SubsetLabel::E3,
        SubsetLabel::E3P,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn token(self) -> &'static str {
        match self {
            SubsetLabel::E1 => "e1",
            SubsetLabel::E1P => "e1p",
            SubsetLabel::E2 => "e2",
            SubsetLabel::E2P => "e2p",
            SubsetLabel::E3 => "e3",
            SubsetLabel::E3P => "e3p",
        }
    }

    pub fn is_rectilinear(self) -> bool {
        matches!(self, SubsetLabel::E1 | SubsetLabel::E1P)
    }
}

impl fmt::Display for SubsetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// One photon-pair trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub index: u64,
    pub source: SourceChoice,
    pub alice_basis: AliceBasis,
    pub alice_bit: u8,
    pub eve_action: EveAction,
    pub bob_basis: BobBasis,
    pub bob_bit: u8,
    pub subset: Option<SubsetLabel>,
}

impl PairRecord {
    pub fn is_mismatch(&self) -> bool {
        self.alice_bit != self.bob_bit
    }
}

pub fn alice_choose<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> (SourceChoice, AliceBasis) {
    let source = if rng.random::<f64>() < 0.5 {
        SourceChoice::Plain
    } else {
        SourceChoice::Primed
    };
    let basis = if rng.random::<f64>() < epsilon {
        AliceBasis::Diag
    } else {
        AliceBasis::Rect
    };
    (source, basis)
}

pub fn bob_choose<R: Rng + ?Sized>(epsilon: f64, rng: &mut R) -> BobBasis {
    let u: f64 = rng.random();
    if u < 1.0 - epsilon {
        BobBasis::Rect
    } else if u < 1.0 - epsilon / 2.0 {
        BobBasis::PlusTheta
    } else {
        BobBasis::MinusTheta
    }
}

/// The basis Bob needs for a compatible outcome once Alice has measured her
/// photon diagonally.
pub fn expected_bob_basis(source: SourceChoice, alice_diag_bit: u8) -> BobBasis {
    match (source, alice_diag_bit) {
        (SourceChoice::Plain, 0) | (SourceChoice::Primed, 1) => BobBasis::PlusTheta,
        _ => BobBasis::MinusTheta,
    }
}

/// Compatibility decision. Reads Alice's private record and Bob's announced
/// basis only; Bob's bit never influences which events are kept.
pub fn sift(record: &PairRecord) -> Option<SubsetLabel> {
    use SourceChoice::{Plain, Primed};
    match record.alice_basis {
        AliceBasis::Rect => match (record.bob_basis, record.source) {
            (BobBasis::Rect, Plain) => Some(SubsetLabel::E1),
            (BobBasis::Rect, Primed) => Some(SubsetLabel::E1P),
            _ => None,
        },
        AliceBasis::Diag => {
            if record.bob_basis != expected_bob_basis(record.source, record.alice_bit) {
                return None;
            }
            Some(match (record.source, record.bob_basis) {
                (Plain, BobBasis::PlusTheta) => SubsetLabel::E2,
                (Plain, _) => SubsetLabel::E3,
                (Primed, BobBasis::MinusTheta) => SubsetLabel::E2P,
                (Primed, _) => SubsetLabel::E3P,
            })
        }
    }
}

/// Runs trial `index` on its own substream of `config.seed`.
pub fn run_trial(config: &SessionConfig, amps: Amplitudes, index: u64) -> PairRecord {
    let mut rng = substream(config.seed, index);
    let (source, alice_basis) = alice_choose(config.epsilon, &mut rng);
    let pair = make_pair_state(amps, source);
    let (alice_bit, photon_b) =
        measure_pair_first(&pair, &basis_for(alice_basis.into(), amps), &mut rng);
    let (photon_b, eve_action) = eve_intercept(&photon_b, &config.attack, amps, &mut rng);
    let bob_basis = bob_choose(config.epsilon, &mut rng);
    let (bob_bit, _) = measure_qubit(&photon_b, &basis_for(bob_basis.into(), amps), &mut rng);
    let mut record = PairRecord {
        index,
        source,
        alice_basis,
        alice_bit,
        eve_action,
        bob_basis,
        bob_bit,
        subset: None,
    };
    record.subset = sift(&record);
    record
}

/// Sifted-record counts per subset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SubsetTally(pub [u64; 6]);

impl SubsetTally {
    pub fn get(&self, label: SubsetLabel) -> u64 {
        self.0[label.index()]
    }

    pub fn add(&mut self, record: &PairRecord) {
        if let Some(label) = record.subset {
            self.0[label.index()] += 1;
        }
    }

    pub fn merge(mut self, other: SubsetTally) -> SubsetTally {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
        self
    }

    pub fn sifted(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl Serialize for SubsetTally {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(6))?;
        for label in SubsetLabel::ALL {
            map.serialize_entry(label.token(), &self.get(label))?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub records: Vec<PairRecord>,
    pub tally: SubsetTally,
}

impl SessionResult {
    fn from_records(records: Vec<PairRecord>) -> Self {
        let tally = records
            .par_iter()
            .fold(SubsetTally::default, |mut t, r| {
                t.add(r);
                t
            })
            .reduce(SubsetTally::default, SubsetTally::merge);
        Self { records, tally }
    }

    pub fn sifted_count(&self) -> u64 {
        self.tally.sifted()
    }
}

/// Runs all `n_pairs` trials in parallel. Output is identical to
/// [`run_session_serial`] because each trial owns its substream.
pub fn run_session(config: &SessionConfig) -> Result<SessionResult> {
    config.validate()?;
    let amps = config.amplitudes()?;
    let records: Vec<PairRecord> = (0..config.n_pairs)
        .into_par_iter()
        .map(|i| run_trial(config, amps, i))
        .collect();
    Ok(SessionResult::from_records(records))
}

pub fn run_session_serial(config: &SessionConfig) -> Result<SessionResult> {
    config.validate()?;
    let amps = config.amplitudes()?;
    let records: Vec<PairRecord> = (0..config.n_pairs)
        .map(|i| run_trial(config, amps, i))
        .collect();
    let mut tally = SubsetTally::default();
    records.iter().for_each(|r| tally.add(r));
    Ok(SessionResult { records, tally })
}

pub const RECORDS_CSV_HEADER: &str =
    "index,source,alice_basis,alice_bit,eve_action,bob_basis,bob_bit,subset";

fn source_token(s: SourceChoice) -> &'static str {
    match s {
        SourceChoice::Plain => "plain",
        SourceChoice::Primed => "primed",
    }
}

fn alice_basis_token(b: AliceBasis) -> &'static str {
    match b {
        AliceBasis::Rect => "rect",
        AliceBasis::Diag => "diag",
    }
}

fn bob_basis_token(b: BobBasis) -> &'static str {
    match b {
        BobBasis::Rect => "rect",
        BobBasis::PlusTheta => "plus_theta",
        BobBasis::MinusTheta => "minus_theta",
    }
}

/// Writes the per-trial dump, one line per record after the header. The
/// `subset` column is empty for discarded trials.
pub fn write_records_csv<W: Write>(records: &[PairRecord], out: W) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    writeln!(out, "{RECORDS_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.index,
            source_token(r.source),
            alice_basis_token(r.alice_basis),
            r.alice_bit,
            r.eve_action.token(),
            bob_basis_token(r.bob_basis),
            r.bob_bit,
            r.subset.map_or("", SubsetLabel::token),
        )?;
    }
    out.flush()
}
