//! Statistical behaviour of full sessions against the closed-form predictions.

use biased_qkd::adversary::AttackPolicy;
use biased_qkd::analysis::{estimate_errors, predict_average, predict_rates, Decision};
use biased_qkd::session::{
    run_session, run_session_serial, substream, SampleSizes, SessionConfig, SubsetLabel,
    STREAM_TEST_SAMPLING,
};

fn rect_attack() -> AttackPolicy {
    AttackPolicy::new(1.0, 0.0, 0.0).unwrap()
}

/// Whenever the rectilinear attack's diagonal signature clears the threshold,
/// the per-subset test aborts while the pooled average still accepts.
#[test]
fn refined_test_catches_what_the_average_misses() {
    for (k, &(alpha_sq, epsilon, m)) in [
        (0.5, 0.1, 500),
        (0.6, 0.2, 500),
        (0.8, 0.1, 500),
        (0.95, 0.2, 500),
        (0.8, 0.05, 200),
    ]
    .iter()
    .enumerate()
    {
        let cfg = SessionConfig {
            n_pairs: 1_000_000,
            epsilon,
            alpha_sq,
            attack: rect_attack(),
            m_samples: SampleSizes::uniform(m),
            e_max: 0.05,
            seed: 1000 + k as u64,
        };
        let amps = cfg.amplitudes().unwrap();
        assert!(2.0 * amps.alpha_sq() * amps.beta_sq() > cfg.e_max);
        assert!(predict_average(amps, &cfg.attack, epsilon) < cfg.e_max);

        let session = run_session(&cfg).unwrap();
        let mut rng = substream(cfg.seed, STREAM_TEST_SAMPLING);
        let est = estimate_errors(
            &session.records,
            &cfg.m_samples,
            epsilon,
            cfg.e_max,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            est.report.naive_decision,
            Decision::Accept,
            "alpha²={alpha_sq} eps={epsilon}"
        );
        assert_eq!(
            est.report.refined_decision,
            Decision::Abort,
            "alpha²={alpha_sq} eps={epsilon}"
        );
    }
}

#[test]
fn sample_estimates_sit_near_predictions() {
    let cfg = SessionConfig {
        n_pairs: 1_000_000,
        epsilon: 0.3,
        alpha_sq: 0.7,
        attack: AttackPolicy::new(0.3, 0.2, 0.2).unwrap(),
        m_samples: SampleSizes::uniform(2000),
        ..SessionConfig::default()
    };
    let predicted = predict_rates(cfg.amplitudes().unwrap(), &cfg.attack);
    let session = run_session(&cfg).unwrap();
    let mut rng = substream(cfg.seed, STREAM_TEST_SAMPLING);
    let est = estimate_errors(
        &session.records,
        &cfg.m_samples,
        cfg.epsilon,
        cfg.e_max,
        &mut rng,
    )
    .unwrap();
    for label in SubsetLabel::ALL {
        let p = predicted.get(label);
        let sigma = (p * (1.0 - p) / 2000.0).sqrt().max(1e-3);
        let got = est.report.estimate(label);
        assert!((got - p).abs() <= 4.0 * sigma, "{label}: {got} vs {p}");
    }
    assert_eq!(
        est.key_positions.len(),
        session.sifted_count() as usize - 6 * 2000,
        "sampled records are excluded from the key"
    );
}

#[test]
fn key_bits_are_balanced() {
    let cfg = SessionConfig {
        alpha_sq: 0.9,
        epsilon: 0.2,
        ..SessionConfig::default()
    };
    let session = run_session(&cfg).unwrap();
    let sifted: Vec<u8> = session
        .records
        .iter()
        .filter(|r| r.subset.is_some())
        .map(|r| r.alice_bit)
        .collect();
    let n = sifted.len() as f64;
    let ones = sifted.iter().map(|&b| b as f64).sum::<f64>();
    let z = (ones - n / 2.0) / (n / 4.0).sqrt();
    assert!(z.abs() < 4.0, "ones fraction {} (z = {z})", ones / n);
}

#[test]
fn parallel_and_serial_sessions_agree() {
    let cfg = SessionConfig {
        n_pairs: 200_000,
        epsilon: 0.4,
        alpha_sq: 0.65,
        attack: AttackPolicy::new(0.2, 0.3, 0.1).unwrap(),
        seed: 31,
        ..SessionConfig::default()
    };
    let par = run_session(&cfg).unwrap();
    let ser = run_session_serial(&cfg).unwrap();
    assert_eq!(par.records, ser.records);
    assert_eq!(par.tally, ser.tally);
}
