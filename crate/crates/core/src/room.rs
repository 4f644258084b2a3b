//! Shoebox image-method simulation and MAE campaigns.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use realfft::RealFftPlanner;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{angle_deg, norm, normalize, sub, MicArray, Vec3};
use crate::localize::Method;
use crate::pipeline::{strongest, Pipeline, PipelineConfig};

/// Sabine's constant in s/m.
const SABINE: f64 = 0.161;

/// Half-width of the windowed-sinc fractional delay (81 taps in total).
const SINC_HALF_WIDTH: i64 = 40;

pub const WALL_MARGIN: f64 = 0.5;
pub const MIN_SOURCE_DISTANCE: f64 = 1.0;
pub const ARRAY_HEIGHT: f64 = 1.0;
pub const SOURCE_HEIGHT: f64 = 2.0;
pub const DEFAULT_DIMS: Vec3 = [10.0, 10.0, 3.0];
pub const DEFAULT_MAX_ORDER: u32 = 6;
pub const DEFAULT_RT60_RANGE: (f64, f64) = (0.2, 0.5);

/// How wall absorption is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Walls {
    /// Target reverberation time in seconds, inverted with Sabine's formula.
    Rt60(f64),
    /// Uniform energy absorption coefficient in `(0, 1]`.
    Absorption(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoomConfig {
    pub dims: Vec3,
    pub walls: Walls,
    pub fs: f64,
    pub c: f64,
    /// Maximum number of reflections along each axis.
    pub max_order: u32,
}

impl RoomConfig {
    pub fn new(dims: Vec3, walls: Walls, fs: f64, c: f64, max_order: u32) -> Result<Self> {
        if dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Room(format!("room dimensions must be positive, got {dims:?}")));
        }
        match walls {
            Walls::Rt60(t) if !(t > 0.0 && t <= 2.0) => {
                return Err(Error::Room(format!("rt60 must lie in (0, 2] s, got {t}")))
            }
            Walls::Absorption(a) if !(a > 0.0 && a <= 1.0) => {
                return Err(Error::Room(format!("absorption must lie in (0, 1], got {a}")))
            }
            _ => {}
        }
        if !(fs > 0.0 && c > 0.0) {
            return Err(Error::InvalidParameter("sample rate and speed of sound must be positive".into()));
        }
        let room = Self { dims, walls, fs, c, max_order };
        room.absorption()?;
        Ok(room)
    }

    /// The 10 x 10 x 3 m room at 16 kHz with the given reverberation time.
    pub fn with_rt60(rt60: f64) -> Result<Self> {
        Self::new(DEFAULT_DIMS, Walls::Rt60(rt60), 16000.0, 343.0, DEFAULT_MAX_ORDER)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform absorption `alpha = 0.161 V / (rt60 S)`.
    pub fn absorption(&self) -> Result<f64> {
        match self.walls {
            Walls::Absorption(a) => Ok(a),
            Walls::Rt60(t) => {
                let a = SABINE * self.volume() / (t * self.surface());
                if a > 1.0 {
                    Err(Error::Room(format!(
                        "rt60 {t} s needs absorption {a:.3} > 1 in a {:?} m room",
                        self.dims
                    )))
                } else {
                    Ok(a)
                }
            }
        }
    }

    /// Reverberation time implied by the walls (Sabine).
    pub fn rt60(&self) -> f64 {
        match self.walls {
            Walls::Rt60(t) => t,
            Walls::Absorption(a) => SABINE * self.volume() / (a * self.surface()),
        }
    }

    fn contains(&self, p: &Vec3, margin: f64) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &d)| x > margin && x < d - margin)
    }
}

/// Image-source impulse response from `src` to `mic`.
///
/// Every image within `max_order` reflections per axis contributes
/// `beta^reflections / (4 pi r)` at a fractional delay of `r fs / c`
/// samples, rendered with an 81-tap Hann-windowed sinc. The response is cut
/// once the Sabine decay envelope falls 60 dB below the direct path.
pub fn compute_rir(room: &RoomConfig, src: &Vec3, mic: &Vec3) -> Result<Vec<f64>> {
    if !room.contains(src, 0.0) || !room.contains(mic, 0.0) {
        return Err(Error::Room("source and microphone must lie inside the room".into()));
    }
    let beta = (1.0 - room.absorption()?).sqrt();
    let samples_per_meter = room.fs / room.c;
    let direct = norm(&sub(src, mic)) * samples_per_meter;
    let len = (direct + room.rt60() * room.fs).ceil() as usize + SINC_HALF_WIDTH as usize + 1;
    let mut h = vec![0.0; len];

    let order = room.max_order as i64;
    let axes: Vec<Vec<(f64, i32)>> = (0..3)
        .map(|axis| {
            let mut images = Vec::new();
            for n in -order..=order {
                for q in 0..=1i64 {
                    let reflections = (n - q).abs() + n.abs();
                    if reflections <= order {
                        let x = (1 - 2 * q) as f64 * src[axis] + 2.0 * n as f64 * room.dims[axis];
                        images.push((x - mic[axis], reflections as i32));
                    }
                }
            }
            images
        })
        .collect();

    let last = (len as i64 - 1 - SINC_HALF_WIDTH) as f64;
    for &(dx, rx) in &axes[0] {
        for &(dy, ry) in &axes[1] {
            for &(dz, rz) in &axes[2] {
                let gain = beta.powi(rx + ry + rz);
                if gain == 0.0 {
                    continue;
                }
                let r = (dx * dx + dy * dy + dz * dz).sqrt();
                let delay = r * samples_per_meter;
                if delay > last {
                    continue;
                }
                add_fractional_impulse(&mut h, delay, gain / (4.0 * PI * r));
            }
        }
    }
    Ok(h)
}

fn add_fractional_impulse(h: &mut [f64], delay: f64, amplitude: f64) {
    let center = delay.round() as i64;
    let window_half = (SINC_HALF_WIDTH + 1) as f64;
    for n in (center - SINC_HALF_WIDTH).max(0)..=(center + SINC_HALF_WIDTH).min(h.len() as i64 - 1) {
        let t = n as f64 - delay;
        let sinc = if t.abs() < 1e-12 { 1.0 } else { (PI * t).sin() / (PI * t) };
        let window = 0.5 * (1.0 + (PI * t / window_half).cos());
        h[n as usize] += amplitude * sinc * window;
    }
}

/// Placement of the array and the source for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialSetup {
    pub array_center: Vec3,
    pub source: Vec3,
    /// Unit vector from the array center towards the source.
    pub truth: Vec3,
    pub seed: u64,
}

impl TrialSetup {
    pub fn new(array_center: Vec3, source: Vec3, seed: u64) -> Result<Self> {
        let offset = sub(&source, &array_center);
        if norm(&offset) < MIN_SOURCE_DISTANCE {
            return Err(Error::Room(format!(
                "source must be at least {MIN_SOURCE_DISTANCE} m from the array"
            )));
        }
        Ok(Self { array_center, source, truth: normalize(&offset), seed })
    }

    /// Array at 1 m height, source at 2 m, both uniformly placed with wall
    /// margins and at least 1 m apart.
    pub fn random<R: Rng>(dims: &Vec3, rng: &mut R) -> Result<Self> {
        if dims[0] <= 2.0 * WALL_MARGIN || dims[1] <= 2.0 * WALL_MARGIN || dims[2] <= SOURCE_HEIGHT + WALL_MARGIN {
            return Err(Error::Room(format!("room {dims:?} too small for the trial layout")));
        }
        let mut place = |z: f64| -> Vec3 {
            [
                rng.gen_range(WALL_MARGIN..dims[0] - WALL_MARGIN),
                rng.gen_range(WALL_MARGIN..dims[1] - WALL_MARGIN),
                z,
            ]
        };
        loop {
            let center = place(ARRAY_HEIGHT);
            let source = place(SOURCE_HEIGHT);
            if norm(&sub(&source, &center)) >= MIN_SOURCE_DISTANCE {
                let seed = rng.gen();
                return Self::new(center, source, seed);
            }
        }
    }
}

/// Per-microphone signals of a white-noise source heard through the room.
pub fn simulate_trial(
    room: &RoomConfig,
    array: &MicArray,
    setup: &TrialSetup,
    duration: f64,
    min_samples: usize,
) -> Result<Vec<Vec<f64>>> {
    let samples = (duration * room.fs).round() as usize;
    if samples < min_samples.max(1) {
        return Err(Error::SignalTooShort { needed: min_samples.max(1), got: samples });
    }
    let mics = array.positions_at(&setup.array_center);
    if !room.contains(&setup.source, WALL_MARGIN) || !room.contains(&setup.array_center, WALL_MARGIN) {
        return Err(Error::Room(format!("array and source need a {WALL_MARGIN} m wall margin")));
    }
    let rirs = mics.iter().map(|m| compute_rir(room, &setup.source, m)).collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let source: Vec<f64> = (0..samples).map(|_| rng.sample(StandardNormal)).collect();
    Ok(convolve_all(&source, &rirs, samples))
}

/// First `samples` outputs of the linear convolution of `signal` with each filter.
fn convolve_all(signal: &[f64], filters: &[Vec<f64>], samples: usize) -> Vec<Vec<f64>> {
    let longest = filters.iter().map(Vec::len).max().unwrap_or(0);
    let size = (signal.len() + longest).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);

    let spectrum_of = |x: &[f64]| {
        let mut buf = vec![0.0; size];
        buf[..x.len()].copy_from_slice(x);
        let mut out = forward.make_output_vec();
        forward.process(&mut buf, &mut out).expect("sizes match the plan");
        out
    };
    let source = spectrum_of(signal);
    filters
        .iter()
        .map(|h| {
            let mut product: Vec<Complex64> = spectrum_of(h).iter().zip(&source).map(|(a, b)| a * b).collect();
            product[0].im = 0.0;
            product[size / 2].im = 0.0;
            let mut out = vec![0.0; size];
            inverse.process(&mut product, &mut out).expect("sizes match the plan");
            out.truncate(samples);
            out.iter_mut().for_each(|v| *v /= size as f64);
            out
        })
        .collect()
}

/// Settings shared by every trial of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignConfig {
    pub dims: Vec3,
    pub rt60_range: (f64, f64),
    pub max_order: u32,
    /// Seconds of noise per trial.
    pub duration: f64,
    pub pipeline: PipelineConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            dims: DEFAULT_DIMS,
            rt60_range: DEFAULT_RT60_RANGE,
            max_order: DEFAULT_MAX_ORDER,
            duration: 1.0,
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Everything random about trial `index` of a campaign seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialDraw {
    pub index: usize,
    pub rt60: f64,
    pub setup: TrialSetup,
}

impl CampaignConfig {
    /// Each trial draws from its own ChaCha stream, so any subset of trials
    /// can be regenerated independently and in any order.
    pub fn draw(&self, seed: u64, index: usize) -> Result<TrialDraw> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let (lo, hi) = self.rt60_range;
        let rt60 = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let setup = TrialSetup::random(&self.dims, &mut rng)?;
        Ok(TrialDraw { index, rt60, setup })
    }

    pub fn room(&self, rt60: f64) -> Result<RoomConfig> {
        RoomConfig::new(self.dims, Walls::Rt60(rt60), self.pipeline.fs, self.pipeline.c, self.max_order)
    }

    pub fn signals(&self, array: &MicArray, draw: &TrialDraw) -> Result<Vec<Vec<f64>>> {
        let room = self.room(draw.rt60)?;
        simulate_trial(&room, array, &draw.setup, self.duration, self.pipeline.block_samples())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub index: usize,
    pub rt60: f64,
    pub truth: Vec3,
    pub predicted: Vec3,
    pub grid_index: usize,
    pub energy: f64,
    pub error_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub method: Method,
    pub mae_deg: f64,
    pub trials: Vec<TrialRecord>,
}

impl SimReport {
    pub fn new(method: Method, trials: Vec<TrialRecord>) -> Self {
        let mae_deg = mean_angular_error(trials.iter().map(|t| (t.predicted, t.truth)));
        Self { method, mae_deg, trials }
    }
}

/// Mean of `arccos(predicted . truth)` in degrees.
pub fn mean_angular_error(pairs: impl IntoIterator<Item = (Vec3, Vec3)>) -> f64 {
    let (sum, count) = pairs.into_iter().fold((0.0, 0usize), |(s, c), (p, t)| (s + angle_deg(&p, &t), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Runs `trials` simulations and localizes each with every method in
/// `methods`; the block with the highest steered energy gives the trial's
/// prediction. Returns one report per method, in order.
pub fn run_campaign(
    config: &CampaignConfig,
    array: &MicArray,
    methods: &[Method],
    trials: usize,
    seed: u64,
) -> Result<Vec<SimReport>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("a campaign needs at least one trial".into()));
    }
    // Fail fast on configuration errors before spawning work.
    Pipeline::new(array, config.pipeline.clone())?;
    config.room(config.rt60_range.0)?;
    config.room(config.rt60_range.1)?;

    let per_trial: Vec<Vec<TrialRecord>> = (0..trials)
        .into_par_iter()
        .map_init(
            || Pipeline::new(array, config.pipeline.clone()).expect("validated above"),
            |pipeline, index| -> Result<Vec<TrialRecord>> {
                let draw = config.draw(seed, index)?;
                let signals = config.signals(array, &draw)?;
                let results = pipeline.locate(&signals, methods)?;
                results
                    .iter()
                    .map(|blocks| {
                        let best = strongest(blocks).ok_or(Error::IncompleteBlock { needed: 1, got: 0 })?;
                        Ok(TrialRecord {
                            index,
                            rt60: draw.rt60,
                            truth: draw.setup.truth,
                            predicted: best.direction,
                            grid_index: best.index,
                            energy: best.energy,
                            error_deg: angle_deg(&best.direction, &draw.setup.truth),
                        })
                    })
                    .collect()
            },
        )
        .collect::<Result<_>>()?;

    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, &method)| SimReport::new(method, per_trial.iter().map(|t| t[j].clone()).collect()))
        .collect())
}
