//! Synthetic speakers: a fixed set of harmonic partials over a
//! speaker-specific fundamental plus a band of filtered noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Corpus, CorpusError, Utterance};
use crate::signal::Waveform;

const F0_RANGE_HZ: (f64, f64) = (100.0, 350.0);
const PEAK: f64 = 0.5;
const MAX_HARMONIC: u32 = 16;
const NYQUIST_MARGIN: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerSignature {
    pub f0_hz: f64,
    /// `(harmonic number, amplitude)` pairs, harmonic numbers ascending.
    pub partials: Vec<(u32, f64)>,
    pub noise_center_hz: f64,
    pub noise_bandwidth_hz: f64,
    /// Noise RMS relative to the harmonic part's RMS.
    pub noise_level: f64,
}

impl SpeakerSignature {
    pub fn partial_frequencies(&self) -> Vec<f64> {
        self.partials.iter().map(|&(k, _)| k as f64 * self.f0_hz).collect()
    }
}

/// Minimum distance between any two speakers' fundamentals.
pub fn min_f0_spacing_hz(n_speakers: usize) -> f64 {
    0.5 * (F0_RANGE_HZ.1 - F0_RANGE_HZ.0) / n_speakers as f64
}

/// Fundamentals are drawn from the middle half of equal-width strata of the
/// f0 range, so neighbours are at least [`min_f0_spacing_hz`] apart, and the
/// strata are then shuffled over speakers.
pub fn draw_signatures<R: Rng + ?Sized>(
    n_speakers: usize,
    sample_rate_hz: u32,
    rng: &mut R,
) -> Result<Vec<SpeakerSignature>, CorpusError> {
    if n_speakers < 2 {
        return Err(CorpusError::Invalid(format!(
            "need at least 2 speakers, got {n_speakers}"
        )));
    }
    let nyquist = NYQUIST_MARGIN * sample_rate_hz as f64;
    if nyquist < 5.0 * F0_RANGE_HZ.1 {
        return Err(CorpusError::Invalid(format!(
            "sample rate {sample_rate_hz} Hz too low for the synthetic speaker model"
        )));
    }
    let width = (F0_RANGE_HZ.1 - F0_RANGE_HZ.0) / n_speakers as f64;
    let mut strata: Vec<usize> = (0..n_speakers).collect();
    strata.shuffle(rng);
    let mut out = Vec::with_capacity(n_speakers);
    for s in strata {
        let lo = F0_RANGE_HZ.0 + width * s as f64;
        let f0 = lo + width * rng.random_range(0.25..0.75);
        let top = ((nyquist / f0).floor() as u32).min(MAX_HARMONIC);
        let n_partials = rng.random_range(3..=5usize);
        let mut harmonics: Vec<u32> = (1..=top).collect();
        harmonics.shuffle(rng);
        harmonics.truncate(n_partials);
        harmonics.sort_unstable();
        let partials = harmonics
            .into_iter()
            .map(|k| (k, rng.random_range(0.6..1.0)))
            .collect();
        let noise_center_hz = rng.random_range(300.0..(0.8 * nyquist));
        out.push(SpeakerSignature {
            f0_hz: f0,
            partials,
            noise_center_hz,
            noise_bandwidth_hz: rng.random_range(150.0..500.0),
            noise_level: rng.random_range(0.05..0.15),
        });
    }
    Ok(out)
}

/// Band-pass biquad (0 dB peak gain).
fn bandpass(x: &[f64], center_hz: f64, bandwidth_hz: f64, sample_rate_hz: u32) -> Vec<f64> {
    let w0 = 2.0 * PI * center_hz / sample_rate_hz as f64;
    let q = center_hz / bandwidth_hz;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn peak_normalize(mut x: Vec<f64>, sample_rate_hz: u32) -> Result<Waveform, CorpusError> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    Ok(Waveform::new(x, sample_rate_hz)?)
}

/// One utterance of a speaker: fresh partial phases, a fresh slow amplitude
/// envelope and fresh noise, peak-normalized to 0.5.
pub fn render_utterance<R: Rng + ?Sized>(
    sig: &SpeakerSignature,
    n_samples: usize,
    sample_rate_hz: u32,
    rng: &mut R,
) -> Result<Waveform, CorpusError> {
    if n_samples == 0 {
        return Err(CorpusError::Invalid("utterance length must be positive".into()));
    }
    let sr = sample_rate_hz as f64;
    let rate_hz = rng.random_range(1.0..3.0);
    let env_phase = rng.random_range(0.0..2.0 * PI);
    let phases: Vec<f64> = sig.partials.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut harmonic = vec![0.0; n_samples];
    for (&(k, amp), &ph) in sig.partials.iter().zip(&phases) {
        let w = 2.0 * PI * k as f64 * sig.f0_hz / sr;
        for (n, h) in harmonic.iter_mut().enumerate() {
            *h += amp * (w * n as f64 + ph).sin();
        }
    }
    let white: Vec<f64> = (0..n_samples).map(|_| StandardNormal.sample(rng)).collect();
    let mut noise = bandpass(&white, sig.noise_center_hz, sig.noise_bandwidth_hz, sample_rate_hz);
    let gain = sig.noise_level * rms(&harmonic) / rms(&noise).max(1e-12);
    let out = harmonic
        .iter()
        .zip(noise.iter_mut())
        .enumerate()
        .map(|(n, (h, z))| {
            let env = 0.6 + 0.4 * (2.0 * PI * rate_hz * n as f64 / sr + env_phase).sin();
            env * (h + gain * *z)
        })
        .collect();
    peak_normalize(out, sample_rate_hz)
}

/// Speakers are named `spkNN`, utterances `spkNN_uMMM`.
pub fn generate_synthetic_corpus<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<Corpus, CorpusError> {
    if spec.utts_per_speaker == 0 {
        return Err(CorpusError::Invalid("utts_per_speaker must be positive".into()));
    }
    if spec.sample_rate_hz == 0 {
        return Err(CorpusError::Invalid("sample rate must be positive".into()));
    }
    if !(spec.duration_s.is_finite() && spec.duration_s > 0.0) {
        return Err(CorpusError::Invalid(format!("bad duration {}", spec.duration_s)));
    }
    let n_samples = (spec.duration_s * spec.sample_rate_hz as f64).round() as usize;
    let sigs = draw_signatures(spec.n_speakers, spec.sample_rate_hz, rng)?;
    let mut utts = Vec::with_capacity(spec.n_speakers * spec.utts_per_speaker);
    for (s, sig) in sigs.iter().enumerate() {
        for u in 0..spec.utts_per_speaker {
            utts.push(Utterance {
                utterance_id: format!("spk{s:02}_u{u:03}"),
                speaker_id: format!("spk{s:02}"),
                waveform: render_utterance(sig, n_samples, spec.sample_rate_hz, rng)?,
            });
        }
    }
    Corpus::new(spec.sample_rate_hz, utts)
}

/// First-order FIR `y[n] = x[n] - c x[n-1]`, re-normalized to the original
/// peak. Positive `c` tilts energy towards high frequencies.
pub fn apply_spectral_tilt(w: &Waveform, coefficient: f64) -> Result<Waveform, CorpusError> {
    if !coefficient.is_finite() || coefficient.abs() >= 1.0 {
        return Err(CorpusError::Invalid(format!("tilt coefficient {coefficient} outside (-1, 1)")));
    }
    let x = w.samples();
    let y: Vec<f64> = (0..x.len())
        .map(|n| x[n] - coefficient * if n > 0 { x[n - 1] } else { 0.0 })
        .collect();
    let old_peak = w.peak();
    let new_peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if new_peak > 0.0 { old_peak / new_peak } else { 1.0 };
    Ok(Waveform::new(y.into_iter().map(|v| v * g).collect(), w.sample_rate_hz())?)
}

/// Low-pass colored noise (AR(1), pole 0.7) at unit RMS.
pub fn colored_noise<R: Rng + ?Sized>(
    n_samples: usize,
    sample_rate_hz: u32,
    rng: &mut R,
) -> Result<Waveform, CorpusError> {
    let mut prev = 0.0;
    let x: Vec<f64> = (0..n_samples)
        .map(|_| {
            let w: f64 = StandardNormal.sample(rng);
            prev = 0.7 * prev + w;
            prev
        })
        .collect();
    let r = rms(&x).max(1e-12);
    Ok(Waveform::new(x.into_iter().map(|v| v / r).collect(), sample_rate_hz)?)
}

/// Scales `noise` so that `10 log10(E_reference / E_noise) = snr_db`.
pub fn scale_to_snr(noise: &Waveform, reference: &Waveform, snr_db: f64) -> Result<Waveform, CorpusError> {
    let en = noise.energy();
    if en <= 0.0 {
        return Ok(noise.clone());
    }
    let target = reference.energy() / 10f64.powf(snr_db / 10.0);
    Ok(noise.scaled((target / en).sqrt())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustfft::{num_complex::Complex, FftPlanner};

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n_speakers: 4,
            utts_per_speaker: 10,
            duration_s: 4.0,
            sample_rate_hz: 8000,
        }
    }

    fn magnitude(x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2].iter().map(|c| c.norm()).collect()
    }

    /// Bins of the `k` largest local maxima.
    fn top_peaks(mag: &[f64], k: usize) -> Vec<usize> {
        let mut peaks: Vec<usize> = (1..mag.len() - 1)
            .filter(|&i| mag[i] > mag[i - 1] && mag[i] >= mag[i + 1])
            .collect();
        peaks.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]));
        peaks.truncate(k);
        peaks.sort_unstable();
        peaks
    }

    #[test]
    fn deterministic_and_sized() {
        let a = generate_synthetic_corpus(&spec(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = generate_synthetic_corpus(&spec(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        assert_eq!(a.n_speakers(), 4);
        for u in a.utterances() {
            assert_eq!(u.waveform.len(), 32000);
            assert!((u.waveform.peak() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn same_speaker_shares_spectral_peaks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigs = draw_signatures(6, 8000, &mut rng).unwrap();
        for sig in &sigs {
            let k = sig.partials.len();
            let a = render_utterance(sig, 32000, 8000, &mut rng).unwrap();
            let b = render_utterance(sig, 32000, 8000, &mut rng).unwrap();
            let pa = top_peaks(&magnitude(a.samples()), k);
            let pb = top_peaks(&magnitude(b.samples()), k);
            assert_eq!(pa, pb);
            // 32000 samples at 8 kHz: 0.25 Hz per bin.
            for (bin, f) in pa.iter().zip(sig.partial_frequencies()) {
                assert!((*bin as f64 * 0.25 - f).abs() <= 0.5, "{bin} vs {f}");
            }
            assert_ne!(a, b);
        }
    }

    #[test]
    fn fundamentals_are_spaced() {
        for seed in 0..20 {
            for n in [2, 4, 8, 16] {
                let sigs = draw_signatures(n, 8000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                for i in 0..n {
                    assert!((3..=5).contains(&sigs[i].partials.len()));
                    assert!(sigs[i].partial_frequencies().iter().all(|&f| f < 3600.0));
                    for j in 0..i {
                        assert!((sigs[i].f0_hz - sigs[j].f0_hz).abs() >= min_f0_spacing_hz(n));
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for bad in [
            SyntheticSpec { n_speakers: 1, ..spec() },
            SyntheticSpec { utts_per_speaker: 0, ..spec() },
            SyntheticSpec { duration_s: 0.0, ..spec() },
            SyntheticSpec { sample_rate_hz: 1000, ..spec() },
        ] {
            assert!(generate_synthetic_corpus(&bad, &mut rng).is_err());
        }
    }

    #[test]
    fn tilt_moves_energy_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sig = &draw_signatures(2, 8000, &mut rng).unwrap()[0];
        let w = render_utterance(sig, 8000, 8000, &mut rng).unwrap();
        let t = apply_spectral_tilt(&w, 0.9).unwrap();
        let centroid = |x: &[f64]| {
            let m = magnitude(x);
            m.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>() / m.iter().sum::<f64>()
        };
        assert!(centroid(t.samples()) > centroid(w.samples()));
        assert!((t.peak() - w.peak()).abs() < 1e-12);
        assert!(apply_spectral_tilt(&w, 1.0).is_err());
    }

    #[test]
    fn snr_scaling_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = colored_noise(1000, 8000, &mut rng).unwrap();
        let r = colored_noise(1000, 8000, &mut rng).unwrap().scaled(0.3).unwrap();
        let s = scale_to_snr(&n, &r, 5.0).unwrap();
        let snr = 10.0 * (r.energy() / s.energy()).log10();
        assert!((snr - 5.0).abs() < 1e-9);
    }
}
