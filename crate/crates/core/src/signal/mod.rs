//! Waveform type and the pure sample arithmetic used everywhere else:
//! summing sources into mixtures, slicing and random cropping.

pub mod wav;

use rand::Rng;
use thiserror::Error;

/// Default sample rate for every corpus and model in this crate.
pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 8000;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("waveform must contain at least one sample")]
    Empty,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("non-finite sample {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("sample rate mismatch: expected {expected} Hz, found {found} Hz")]
    SampleRateMismatch { expected: u32, found: u32 },
    #[error("cannot mix an empty list of waveforms")]
    NothingToMix,
    #[error("segment duration must be positive, got {0} s")]
    NonPositiveDuration(f64),
    #[error("slice [{start}, {start}+{len}) out of bounds for length {total}")]
    OutOfBounds { start: usize, len: usize, total: usize },
}

/// Single-channel audio. Samples are finite and nominally within [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self, SignalError> {
        if sample_rate_hz == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SignalError::NonFinite { index, value });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Result<Self, SignalError> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false for a constructed waveform; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Result<Self, SignalError> {
        Self::new(
            self.samples.iter().map(|v| v * gain).collect(),
            self.sample_rate_hz,
        )
    }

    pub fn negated(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|v| -v).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// `self - other`, truncated to the shorter of the two.
    pub fn minus(&self, other: &Waveform) -> Result<Self, SignalError> {
        mix(&[self, &other.negated()], MixMode::Minimum)
    }

    /// Contiguous slice `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self, SignalError> {
        if len == 0 || start + len > self.samples.len() {
            return Err(SignalError::OutOfBounds {
                start,
                len,
                total: self.samples.len(),
            });
        }
        Ok(Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Segment of `len` samples starting at `start`. When the waveform is
    /// shorter than `len` it is repeated from its first sample (wrap padding)
    /// and `start` must be zero.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self, SignalError> {
        if self.samples.len() >= len {
            return self.slice(start, len);
        }
        if start != 0 || len == 0 {
            return Err(SignalError::OutOfBounds {
                start,
                len,
                total: self.samples.len(),
            });
        }
        let samples = self.samples.iter().copied().cycle().take(len).collect();
        Ok(Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        })
    }
}

/// Length policy when summing signals of different lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixMode {
    /// Truncate every input to the shortest one.
    #[default]
    Minimum,
}

/// Plain sample-wise sum. No gain is applied.
pub fn mix(waveforms: &[&Waveform], mode: MixMode) -> Result<Waveform, SignalError> {
    let first = waveforms.first().ok_or(SignalError::NothingToMix)?;
    let rate = first.sample_rate_hz;
    if let Some(bad) = waveforms.iter().find(|w| w.sample_rate_hz != rate) {
        return Err(SignalError::SampleRateMismatch {
            expected: rate,
            found: bad.sample_rate_hz,
        });
    }
    let len = match mode {
        MixMode::Minimum => waveforms.iter().map(|w| w.len()).min().unwrap_or(0),
    };
    let mut out = first.samples[..len].to_vec();
    for w in &waveforms[1..] {
        for (o, s) in out.iter_mut().zip(&w.samples[..len]) {
            *o += s;
        }
    }
    Waveform::new(out, rate)
}

/// Convenience over owned slices.
pub fn mix_owned(waveforms: &[Waveform], mode: MixMode) -> Result<Waveform, SignalError> {
    let refs: Vec<&Waveform> = waveforms.iter().collect();
    mix(&refs, mode)
}

/// Number of samples in a segment of `seconds` at `sample_rate_hz`.
pub fn segment_len(seconds: f64, sample_rate_hz: u32) -> Result<usize, SignalError> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(SignalError::NonPositiveDuration(seconds));
    }
    let n = (seconds * sample_rate_hz as f64).round() as usize;
    Ok(n.max(1))
}

/// Uniform start index for a `seg_len` window over a signal of `total` samples.
/// Returns 0 when the signal is too short (the caller wrap-pads).
pub fn random_start<R: Rng + ?Sized>(total: usize, seg_len: usize, rng: &mut R) -> usize {
    if total <= seg_len {
        0
    } else {
        rng.random_range(0..=total - seg_len)
    }
}

/// Random contiguous crop of `seconds` duration.
pub fn crop_random_segment<R: Rng + ?Sized>(
    w: &Waveform,
    seconds: f64,
    rng: &mut R,
) -> Result<Waveform, SignalError> {
    let seg_len = segment_len(seconds, w.sample_rate_hz)?;
    let start = random_start(w.len(), seg_len, rng);
    w.segment(start, seg_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wf(v: &[f64]) -> Waveform {
        Waveform::new(v.to_vec(), 8000).unwrap()
    }

    #[test]
    fn mix_adds_elementwise() {
        let out = mix(&[&wf(&[0.1, 0.2]), &wf(&[0.3, -0.1])], MixMode::Minimum).unwrap();
        assert!((out.samples()[0] - 0.4).abs() < 1e-15);
        assert!((out.samples()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mix_truncates_to_shortest() {
        let out = mix(&[&wf(&[1.0, 1.0, 1.0]), &wf(&[1.0, 1.0])], MixMode::Minimum).unwrap();
        assert_eq!(out.samples(), &[2.0, 2.0]);
    }

    #[test]
    fn mix_singleton_is_identity() {
        let x = wf(&[0.3, -0.7, 0.25]);
        assert_eq!(mix(&[&x], MixMode::Minimum).unwrap(), x);
    }

    #[test]
    fn mix_rejects_bad_inputs() {
        assert_eq!(mix(&[], MixMode::Minimum), Err(SignalError::NothingToMix));
        let a = wf(&[1.0]);
        let b = Waveform::new(vec![1.0], 16000).unwrap();
        assert!(matches!(
            mix(&[&a, &b], MixMode::Minimum),
            Err(SignalError::SampleRateMismatch { expected: 8000, found: 16000 })
        ));
    }

    #[test]
    fn waveform_validates() {
        assert_eq!(Waveform::new(vec![], 8000), Err(SignalError::Empty));
        assert_eq!(Waveform::new(vec![0.0], 0), Err(SignalError::ZeroSampleRate));
        assert!(matches!(
            Waveform::new(vec![0.0, f64::NAN], 8000),
            Err(SignalError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn crop_three_of_five_seconds() {
        let w = Waveform::new((0..40000).map(|i| i as f64 / 40000.0).collect(), 8000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let c = crop_random_segment(&w, 3.0, &mut rng).unwrap();
            assert_eq!(c.len(), 24000);
            let start = (c.samples()[0] * 40000.0).round() as usize;
            assert!(start <= 16000);
        }
    }

    #[test]
    fn crop_exact_length_returns_whole() {
        let w = Waveform::new((0..24000).map(|i| (i as f64).sin()).collect(), 8000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(crop_random_segment(&w, 3.0, &mut rng).unwrap(), w);
    }

    #[test]
    fn crop_is_deterministic_under_seed() {
        let w = Waveform::new((0..40000).map(|i| (i as f64 * 0.01).sin()).collect(), 8000).unwrap();
        let a = crop_random_segment(&w, 3.0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = crop_random_segment(&w, 3.0, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crop_wrap_pads_short_input() {
        let w = wf(&[1.0, 2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = crop_random_segment(&w, 7.0 / 8000.0, &mut rng).unwrap();
        assert_eq!(c.samples(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn crop_rejects_non_positive_duration() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            crop_random_segment(&wf(&[1.0]), 0.0, &mut rng),
            Err(SignalError::NonPositiveDuration(_))
        ));
        assert!(crop_random_segment(&wf(&[1.0]), -1.0, &mut rng).is_err());
    }

    fn signal(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, len)
    }

    proptest! {
        #[test]
        fn mix_commutes_and_associates(a in signal(1..64), b in signal(1..64), c in signal(1..64)) {
            let (a, b, c) = (wf(&a), wf(&b), wf(&c));
            let ab = mix(&[&a, &b], MixMode::Minimum).unwrap();
            let ba = mix(&[&b, &a], MixMode::Minimum).unwrap();
            let ab_c = mix(&[&ab, &c], MixMode::Minimum).unwrap();
            let bc = mix(&[&b, &c], MixMode::Minimum).unwrap();
            let a_bc = mix(&[&a, &bc], MixMode::Minimum).unwrap();
            for (x, y) in ab.samples().iter().zip(ba.samples()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            prop_assert_eq!(ab_c.len(), a_bc.len());
            for (x, y) in ab_c.samples().iter().zip(a_bc.samples()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn mix_with_negation_is_silent(a in signal(1..128)) {
            let a = wf(&a);
            let z = mix(&[&a, &a.negated()], MixMode::Minimum).unwrap();
            prop_assert!(z.samples().iter().all(|&v| v == 0.0));
        }

        #[test]
        fn crop_matches_input_slice(a in signal(10..300), seg in 1usize..300, seed in 0u64..1000) {
            let w = wf(&a);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = crop_random_segment(&w, seg as f64 / 8000.0, &mut rng).unwrap();
            prop_assert_eq!(c.len(), seg);
            if seg <= w.len() {
                let found = (0..=w.len() - seg).any(|s| &w.samples()[s..s + seg] == c.samples());
                prop_assert!(found);
            }
        }
    }
}
