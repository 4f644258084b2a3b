//! STFT, cross-spectra, PHAT weighting and interpolated GCC.
//!
//! Cross-spectra are formed as `C_p[f] = conj(X_u[f]) * X_v[f]`. With the
//! `e^{+j 2 pi f tau / N}` synthesis kernel this puts the correlation peak of
//! a plane wave at `+k * tau_p[i]`, the index read from the TDoA table.

use std::ops::Range;
use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{check_interpolation, PairSet};

/// Magnitude below which a cross-spectrum bin is treated as empty.
pub const DEFAULT_PHAT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    /// Periodic taper of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|t| {
                    let s = (std::f64::consts::PI * t as f64 / n as f64).sin();
                    s * s
                })
                .collect(),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(Window::Hann),
            "rect" | "rectangular" => Ok(Window::Rectangular),
            _ => Err(Error::InvalidParameter(format!("unknown window {s:?}"))),
        }
    }
}

pub(crate) fn check_frame_size(n: usize) -> Result<()> {
    if n >= 2 && n.is_power_of_two() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("frame size must be a power of two >= 2, got {n}")))
    }
}

/// Half spectra of every channel for one STFT frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub index: usize,
    n: usize,
    bins: Vec<Vec<Complex64>>,
}

impl SpectralFrame {
    pub fn new(index: usize, n: usize, bins: Vec<Vec<Complex64>>) -> Result<Self> {
        check_frame_size(n)?;
        if bins.iter().any(|b| b.len() != n / 2 + 1) {
            return Err(Error::DimensionMismatch(format!("every channel needs {} bins", n / 2 + 1)));
        }
        Ok(Self { index, n, bins })
    }

    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.bins.len()
    }

    pub fn channel(&self, m: usize) -> &[Complex64] {
        &self.bins[m]
    }
}

/// Windowed real-input STFT with a fixed frame size and hop.
pub struct Stft {
    n: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn RealToComplex<f64>>,
}

impl Stft {
    pub fn new(n: usize, hop: usize, window: Window) -> Result<Self> {
        check_frame_size(n)?;
        if hop == 0 {
            return Err(Error::InvalidParameter("hop must be at least 1".into()));
        }
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
        Ok(Self { n, hop, window: window.coefficients(n), fft })
    }

    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.n {
            0
        } else {
            (len - self.n) / self.hop + 1
        }
    }

    /// Lazily transforms `signal` (one slice per channel, equal lengths).
    pub fn frames<'a, S: AsRef<[f64]>>(&'a self, signal: &'a [S]) -> Result<StftFrames<'a, S>> {
        let len = signal.first().map_or(0, |c| c.as_ref().len());
        if signal.iter().any(|c| c.as_ref().len() != len) {
            return Err(Error::DimensionMismatch("channels have different lengths".into()));
        }
        if len < self.n {
            return Err(Error::SignalTooShort { needed: self.n, got: len });
        }
        Ok(StftFrames {
            stft: self,
            signal,
            next: 0,
            total: self.frame_count(len),
            input: vec![0.0; self.n],
            scratch: self.fft.make_scratch_vec(),
        })
    }
}

pub struct StftFrames<'a, S> {
    stft: &'a Stft,
    signal: &'a [S],
    next: usize,
    total: usize,
    input: Vec<f64>,
    scratch: Vec<Complex64>,
}

impl<S: AsRef<[f64]>> Iterator for StftFrames<'_, S> {
    type Item = SpectralFrame;

    fn next(&mut self) -> Option<SpectralFrame> {
        if self.next >= self.total {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let n = self.stft.n;
        let start = t * self.stft.hop;
        let bins = self
            .signal
            .iter()
            .map(|channel| {
                let frame = &channel.as_ref()[start..start + n];
                for ((x, s), w) in self.input.iter_mut().zip(frame).zip(&self.stft.window) {
                    *x = s * w;
                }
                let mut spectrum = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
                self.stft
                    .fft
                    .process_with_scratch(&mut self.input, &mut spectrum, &mut self.scratch)
                    .expect("buffer sizes match the plan");
                spectrum
            })
            .collect();
        Some(SpectralFrame { index: t, n, bins })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total - self.next;
        (left, Some(left))
    }
}

/// Eager STFT of a whole multichannel signal.
pub fn stft<S: AsRef<[f64]>>(signal: &[S], n: usize, hop: usize, window: Window) -> Result<Vec<SpectralFrame>> {
    let stft = Stft::new(n, hop, window)?;
    let frames = stft.frames(signal)?.collect();
    Ok(frames)
}

/// Per-pair cross-spectra accumulated over a block of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSpectra {
    n: usize,
    values: Vec<Vec<Complex64>>,
    frames: Range<usize>,
}

impl CrossSpectra {
    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[Vec<Complex64>] {
        &self.values
    }

    pub fn frames(&self) -> Range<usize> {
        self.frames.clone()
    }

    pub fn frames_accumulated(&self) -> usize {
        self.frames.len()
    }
}

/// Pulls `block` frames from `frames` and accumulates
/// `sum_t conj(X_u[t, f]) * X_v[t, f]` for every pair.
pub fn cross_spectrum<I>(frames: &mut I, pairs: &PairSet, block: usize) -> Result<CrossSpectra>
where
    I: Iterator<Item = SpectralFrame>,
{
    if block == 0 {
        return Err(Error::InvalidParameter("block must hold at least one frame".into()));
    }
    let mut acc: Option<CrossSpectra> = None;
    for got in 0..block {
        let Some(frame) = frames.next() else {
            return Err(Error::IncompleteBlock { needed: block, got });
        };
        let n = frame.frame_size();
        let acc = acc.get_or_insert_with(|| CrossSpectra {
            n,
            values: vec![vec![Complex64::new(0.0, 0.0); n / 2 + 1]; pairs.len()],
            frames: frame.index..frame.index,
        });
        if n != acc.n {
            return Err(Error::DimensionMismatch(format!("frame size changed from {} to {n}", acc.n)));
        }
        for (values, pair) in acc.values.iter_mut().zip(pairs.pairs()) {
            if pair.u >= frame.channels() || pair.v >= frame.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "pair ({}, {}) needs more than {} channels",
                    pair.u + 1,
                    pair.v + 1,
                    frame.channels()
                )));
            }
            for ((c, xu), xv) in values.iter_mut().zip(frame.channel(pair.u)).zip(frame.channel(pair.v)) {
                *c += xu.conj() * xv;
            }
        }
        acc.frames.end = frame.index + 1;
    }
    Ok(acc.expect("block >= 1"))
}

/// Unit-magnitude (or zero) per-pair spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct PhatSpectra {
    n: usize,
    values: Vec<Vec<Complex64>>,
    frames: Range<usize>,
}

impl PhatSpectra {
    /// Wraps externally produced spectra; each row needs `n/2 + 1` bins.
    pub fn new(n: usize, values: Vec<Vec<Complex64>>) -> Result<Self> {
        check_frame_size(n)?;
        if values.iter().any(|row| row.len() != n / 2 + 1) {
            return Err(Error::DimensionMismatch(format!("every pair needs {} bins", n / 2 + 1)));
        }
        Ok(Self { n, values, frames: 0..0 })
    }

    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Vec<Complex64>] {
        &self.values
    }

    pub fn row(&self, p: usize) -> &[Complex64] {
        &self.values[p]
    }

    pub fn frames(&self) -> Range<usize> {
        self.frames.clone()
    }
}

/// `R = C / |C|`, with bins at or below `floor` mapped to zero.
pub fn phat(cross: &CrossSpectra, floor: f64) -> PhatSpectra {
    let values = cross
        .values
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| {
                    let mag = c.norm();
                    if mag > floor {
                        c / mag
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    PhatSpectra { n: cross.n, values, frames: cross.frames.clone() }
}

/// Time-domain correlation on the interpolated grid of `k * N` lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVector {
    samples: Vec<f64>,
    k: u32,
    n: usize,
}

impl CorrelationVector {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn frame_size(&self) -> usize {
        self.n
    }

    /// Value at interpolated lag `lag`, wrapping circularly.
    pub fn at(&self, lag: i64) -> f64 {
        self.samples[lag.rem_euclid(self.samples.len() as i64) as usize]
    }

    /// Index of the largest sample (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.samples.iter().enumerate() {
            if v > self.samples[best] {
                best = i;
            }
        }
        best
    }
}

/// Reusable inverse transform evaluating
/// `r[tau] = Re(sum_{f=0}^{N/2} R[f] e^{j 2 pi f tau / (k N)})` for
/// `tau = 0..kN`.
///
/// The half spectrum is zero-padded to `kN/2 + 1` bins and fed to a real
/// inverse FFT of length `kN`. A Hermitian inverse counts interior bins twice
/// and the DC (and, for `k = 1`, Nyquist) bin once, so interior bins are
/// halved on the way in; the output then matches the half-spectrum sum
/// exactly.
pub struct Correlator {
    n: usize,
    k: u32,
    ifft: Arc<dyn ComplexToReal<f64>>,
    input: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Correlator {
    pub fn new(n: usize, k: u32) -> Result<Self> {
        check_frame_size(n)?;
        check_interpolation(k)?;
        let len = n * k as usize;
        let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(len);
        let scratch = ifft.make_scratch_vec();
        Ok(Self { n, k, ifft, input: vec![Complex64::new(0.0, 0.0); len / 2 + 1], scratch })
    }

    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// Length of the interpolated correlation, `k * N`.
    pub fn output_len(&self) -> usize {
        self.n * self.k as usize
    }

    /// Writes the correlation of `spectrum` (`N/2 + 1` bins) into `out`
    /// (`k * N` samples).
    pub fn correlate(&mut self, spectrum: &[Complex64], out: &mut [f64]) {
        let half = self.n / 2;
        assert_eq!(spectrum.len(), half + 1, "spectrum must hold N/2 + 1 bins");
        assert_eq!(out.len(), self.output_len(), "output must hold k * N samples");

        self.input[0] = Complex64::new(spectrum[0].re, 0.0);
        for (dst, src) in self.input[1..half].iter_mut().zip(&spectrum[1..half]) {
            *dst = src * 0.5;
        }
        if self.k == 1 {
            self.input[half] = Complex64::new(spectrum[half].re, 0.0);
        } else {
            self.input[half] = spectrum[half] * 0.5;
            for z in &mut self.input[half + 1..] {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        self.ifft
            .process_with_scratch(&mut self.input, out, &mut self.scratch)
            .expect("edge bins are real and buffers match the plan");
    }
}

/// One-shot GCC of a single PHAT spectrum row.
pub fn gcc(spectrum: &[Complex64], k: u32) -> Result<CorrelationVector> {
    if spectrum.len() < 2 {
        return Err(Error::DimensionMismatch("spectrum needs at least 2 bins".into()));
    }
    let n = 2 * (spectrum.len() - 1);
    let mut correlator = Correlator::new(n, k)?;
    let mut samples = vec![0.0; correlator.output_len()];
    correlator.correlate(spectrum, &mut samples);
    Ok(CorrelationVector { samples, k, n })
}
