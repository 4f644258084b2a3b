//! Analytic operation counts and wall-clock timing of SRP-PHAT vs SMP-PHAT.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gcc::PhatSpectra;
use crate::geometry::{DoaGrid, MicArray, PairSet, TdoaTable};
use crate::localize::{Counts, Localizer, Method};
use crate::plan::{MergePlan, DEFAULT_EPSILON};

pub const WARMUP_ITERATIONS: usize = 10;

/// Fractional reduction of SMP relative to SRP, `(srp - smp) / srp`; negative
/// when merging costs more than it saves (coarse grids).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reductions {
    pub iffts: f64,
    pub lookups: f64,
    pub additions: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpCounts {
    pub pairs: u64,
    pub groups: u64,
    pub frame_size: u64,
    pub directions: u64,
    pub srp: Counts,
    pub smp: Counts,
    pub reduction: Reductions,
}

impl OpCounts {
    pub fn for_method(&self, method: Method) -> Counts {
        match method {
            Method::Srp => self.srp,
            Method::Smp => self.smp,
        }
    }
}

/// Operation counts per localization block for `P` pairs merged into `Q`
/// groups, frame size `N` and `I` directions.
pub fn count_ops(pairs: u64, groups: u64, n: u64, directions: u64) -> Result<OpCounts> {
    if groups < 1 || groups > pairs {
        return Err(Error::InvalidParameter(format!("need 1 <= Q <= P, got P = {pairs}, Q = {groups}")));
    }
    if n < 2 || directions < 1 {
        return Err(Error::InvalidParameter(format!("need N >= 2 and I >= 1, got N = {n}, I = {directions}")));
    }
    let srp = Counts { iffts: pairs, lookups: pairs * directions, additions: pairs * directions };
    let smp = Counts {
        iffts: groups,
        lookups: groups * directions,
        additions: groups * directions + (n + 2) * (pairs - groups),
    };
    let reduce = |a: u64, b: u64| (a as f64 - b as f64) / a as f64;
    let reduction = Reductions {
        iffts: reduce(srp.iffts, smp.iffts),
        lookups: reduce(srp.lookups, smp.lookups),
        additions: reduce(srp.additions, smp.additions),
    };
    Ok(OpCounts { pairs, groups, frame_size: n, directions, srp, smp, reduction })
}

/// Counts for a concrete array, grid level and frame size.
pub fn count_ops_for(array: &MicArray, n: usize, grid_level: u32, epsilon: f64) -> Result<OpCounts> {
    let pairs = PairSet::enumerate(array);
    let plan = MergePlan::build(&pairs, epsilon)?;
    let grid = DoaGrid::icosphere(grid_level, true)?;
    count_ops(pairs.len() as u64, plan.len() as u64, n as u64, grid.len() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub n: usize,
    pub k: u32,
    pub fs: f64,
    pub c: f64,
    pub grid_level: u32,
    pub repetitions: usize,
    pub seed: u64,
    /// Workers for the direction scan; 1 keeps the measurement single-threaded.
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n: 512, k: 4, fs: 16000.0, c: 343.0, grid_level: 4, repetitions: 100, seed: 1, threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodTiming {
    pub method: Method,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub repetitions: usize,
    /// Operations executed for one block, from the localizer's counters.
    pub counted: Counts,
    pub counts_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub array: String,
    pub machine: String,
    pub config: BenchConfig,
    pub expected: OpCounts,
    pub timings: Vec<MethodTiming>,
}

impl BenchReport {
    pub fn timing(&self, method: Method) -> Option<&MethodTiming> {
        self.timings.iter().find(|t| t.method == method)
    }
}

pub fn machine_label() -> String {
    let cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{}-{} ({cpus} cpus)", std::env::consts::ARCH, std::env::consts::OS)
}

/// Random unit-magnitude spectra; the localization cost does not depend on
/// the payload.
pub fn random_phat_spectra<R: Rng>(rng: &mut R, pairs: usize, n: usize) -> PhatSpectra {
    let values = (0..pairs)
        .map(|_| {
            (0..=n / 2)
                .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    PhatSpectra::new(n, values).expect("rows have N/2 + 1 bins")
}

/// Times one localization block (merge, inverse transforms and grid scan)
/// per repetition for each method, after [`WARMUP_ITERATIONS`] untimed
/// blocks. Methods are interleaved within every repetition.
pub fn run_bench(array: &MicArray, methods: &[Method], config: &BenchConfig) -> Result<BenchReport> {
    if config.repetitions == 0 {
        return Err(Error::InvalidParameter("at least one repetition is required".into()));
    }
    let pairs = PairSet::enumerate(array);
    let plan = MergePlan::build(&pairs, DEFAULT_EPSILON)?;
    let grid = DoaGrid::icosphere(config.grid_level, true)?;
    let table = TdoaTable::build(&pairs, &grid, config.fs, config.c, config.k)?;
    let expected = count_ops(pairs.len() as u64, plan.len() as u64, config.n as u64, grid.len() as u64)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let payloads: Vec<PhatSpectra> = (0..8).map(|_| random_phat_spectra(&mut rng, pairs.len(), config.n)).collect();

    let mut localizers = methods
        .iter()
        .map(|&m| Localizer::new(m, &plan, &table, &grid, config.n)?.with_threads(config.threads))
        .collect::<Result<Vec<_>>>()?;

    let mut counted = vec![Counts::default(); methods.len()];
    for (loc, counts) in localizers.iter_mut().zip(&mut counted) {
        loc.locate_counted(&payloads[0], counts)?;
    }

    for w in 0..WARMUP_ITERATIONS {
        for loc in &mut localizers {
            std::hint::black_box(loc.locate(&payloads[w % payloads.len()])?);
        }
    }
    let mut samples = vec![Vec::with_capacity(config.repetitions); methods.len()];
    for r in 0..config.repetitions {
        let payload = &payloads[r % payloads.len()];
        for (loc, times) in localizers.iter_mut().zip(&mut samples) {
            let start = Instant::now();
            std::hint::black_box(loc.locate(payload)?);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }

    let timings = methods
        .iter()
        .zip(samples)
        .zip(counted)
        .map(|((&method, times), counted)| {
            let (mean_ms, std_ms) = mean_std(&times);
            MethodTiming {
                method,
                mean_ms,
                std_ms,
                repetitions: times.len(),
                counted,
                counts_match: counted == expected.for_method(method),
            }
        })
        .collect();
    Ok(BenchReport {
        array: array.name().to_string(),
        machine: machine_label(),
        config: config.clone(),
        expected,
        timings,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}
