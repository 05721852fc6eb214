//! Stream-level invariants of the sample builders, checked over many draws.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samom::corpus::{
    generate_synthetic_corpus, make_epoch, Corpus, SamplePolicy, SyntheticSpec, TrainSource, TrainingSample,
};
use samom::signal::{mix, MixMode, Waveform};

fn corpus(speakers: usize, utts: usize, seed: u64) -> Corpus {
    generate_synthetic_corpus(
        &SyntheticSpec {
            n_speakers: speakers,
            utts_per_speaker: utts,
            duration_s: 0.25,
            sample_rate_hz: 8000,
        },
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn max_abs_diff(a: &Waveform, b: &Waveform) -> f64 {
    a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn enrollment_never_equals_its_source_over_10000_samples() {
    let c = corpus(6, 3, 5);
    let policies = [
        SamplePolicy::Mom {
            n_sams: 2,
            speakers_per_sam: 2,
        },
        SamplePolicy::Sam { speakers: 2 },
        SamplePolicy::Noisy {
            interferers: 1,
            snr_db: 5.0,
        },
    ];
    let mut checked = 0;
    for (k, policy) in policies.into_iter().enumerate() {
        let stream = make_epoch(TrainSource::Corpus(&c), policy, 50, 70, 0.01, 17, k as u64, None).unwrap();
        for batch in stream {
            for sample in batch.unwrap() {
                match &sample {
                    TrainingSample::Mom(m) => {
                        for k in m.sams.iter().flat_map(|s| &s.constituents) {
                            assert_ne!(k.source.as_ref().unwrap(), &k.enrollment);
                            assert_ne!(k.source_id.as_deref(), Some(k.enrollment_id.as_str()));
                        }
                    }
                    TrainingSample::Sam(s) => {
                        for k in &s.constituents {
                            assert_ne!(k.source.as_ref().unwrap(), &k.enrollment);
                        }
                    }
                    TrainingSample::Noisy(n) => {
                        assert_ne!(n.clean_source.waveform, n.target_enrollment);
                        // Interferers are weakly labelled: no source, only
                        // an enrollment drawn the same way as for SAMs.
                        for k in &n.noisy_sam.constituents {
                            assert!(k.source.is_none());
                            assert_eq!(c.utterance(&k.enrollment_id).unwrap().speaker_id, k.speaker_id);
                        }
                    }
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 10_000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mom_samples_reconstruct_and_keep_speakers_disjoint(
        seed in 0u64..1000,
        n_sams in 2usize..4,
        per_sam in 1usize..3,
    ) {
        let c = corpus(n_sams * per_sam + 1, 2, 3);
        let policy = SamplePolicy::Mom { n_sams, speakers_per_sam: per_sam };
        let stream = make_epoch(TrainSource::Corpus(&c), policy, 4, 2, 0.05, seed, 0, Some((-3.0, 3.0))).unwrap();
        for batch in stream {
            for sample in batch.unwrap() {
                let TrainingSample::Mom(m) = sample else { panic!("policy yields mixtures of mixtures") };
                let refs: Vec<&Waveform> = m.sams.iter().map(|s| &s.mixture).collect();
                prop_assert!(max_abs_diff(&m.input, &mix(&refs, MixMode::Minimum).unwrap()) < 1e-9);
                let speakers: Vec<&str> = m.sams.iter().flat_map(|s| s.speaker_ids()).collect();
                let distinct: BTreeSet<&str> = speakers.iter().copied().collect();
                prop_assert_eq!(distinct.len(), speakers.len());
                for sam in &m.sams {
                    let sources: Vec<&Waveform> = sam.constituents.iter().map(|k| k.source.as_ref().unwrap()).collect();
                    prop_assert!(max_abs_diff(&sam.mixture, &mix(&sources, MixMode::Minimum).unwrap()) < 1e-9);
                    for k in &sam.constituents {
                        prop_assert_eq!(c.utterance(&k.enrollment_id).unwrap().speaker_id.as_str(), k.speaker_id.as_str());
                    }
                }
            }
        }
    }

    #[test]
    fn noisy_samples_decompose_into_clean_plus_residual(seed in 0u64..1000, snr in -5.0f64..15.0) {
        let c = corpus(4, 2, 8);
        let policy = SamplePolicy::Noisy { interferers: 2, snr_db: snr };
        let stream = make_epoch(TrainSource::Corpus(&c), policy, 3, 1, 0.05, seed, 1, None).unwrap();
        for sample in stream.flat_map(|b| b.unwrap()) {
            let TrainingSample::Noisy(n) = sample else { panic!("policy yields noisy pairs") };
            let sum = mix(&[&n.clean_source.waveform, &n.noisy_sam.mixture], MixMode::Minimum).unwrap();
            prop_assert!(max_abs_diff(&n.input, &sum) < 1e-9);
            prop_assert!(n.noisy_sam.contains_noise);
            prop_assert!(n.noisy_sam.speaker_ids().all(|s| s != n.clean_source.speaker_id));
        }
    }
}
