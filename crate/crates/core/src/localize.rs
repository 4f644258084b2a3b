//! Online SRP-PHAT and SMP-PHAT grid scans.
//!
//! Both estimators share one engine. SRP-PHAT runs one inverse transform per
//! pair and looks every pair up for every direction. SMP-PHAT first sums the
//! spectra of each merge group (conjugating reversed members, which reverses
//! their correlation in time) and then only transforms and looks up the
//! group sums at the reference pair's delay.

use std::fmt;
use std::ops::Range;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gcc::{Correlator, PhatSpectra};
use crate::geometry::{DoaGrid, TdoaTable, Vec3};
use crate::plan::{MergeGroup, MergePlan, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Srp,
    Smp,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Srp, Method::Smp];

    pub fn label(self) -> &'static str {
        match self {
            Method::Srp => "srp",
            Method::Smp => "smp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "srp" => Ok(Method::Srp),
            "smp" => Ok(Method::Smp),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?} (expected srp or smp)"))),
        }
    }
}

/// Inverse transforms, correlation lookups and real additions performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub iffts: u64,
    pub lookups: u64,
    pub additions: u64,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, rhs: Counts) {
        self.iffts += rhs.iffts;
        self.lookups += rhs.lookups;
        self.additions += rhs.additions;
    }
}

/// Per-group spectrum sums `S_q[f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSpectra {
    n: usize,
    values: Vec<Vec<Complex64>>,
}

impl MergedSpectra {
    pub fn frame_size(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[Vec<Complex64>] {
        &self.values
    }

    pub fn row(&self, q: usize) -> &[Complex64] {
        &self.values[q]
    }
}

/// Sums each group's spectra, conjugating members with [`Sign::Minus`].
pub fn merge_spectra(spectra: &PhatSpectra, plan: &MergePlan) -> Result<MergedSpectra> {
    if spectra.pairs() != plan.pairs() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} pairs, spectra hold {}",
            plan.pairs(),
            spectra.pairs()
        )));
    }
    let bins = spectra.frame_size() / 2 + 1;
    let values = plan
        .groups()
        .iter()
        .map(|g| {
            let mut out = vec![Complex64::new(0.0, 0.0); bins];
            merge_group_into(spectra, g, &mut out);
            out
        })
        .collect();
    Ok(MergedSpectra { n: spectra.frame_size(), values })
}

/// Writes the group sum into `out` and returns the number of real additions.
fn merge_group_into(spectra: &PhatSpectra, group: &MergeGroup, out: &mut [Complex64]) -> u64 {
    let (first, rest) = group.members.split_first().expect("groups are never empty");
    debug_assert_eq!(first.1, Sign::Plus);
    out.copy_from_slice(spectra.row(first.0));
    for &(p, sign) in rest {
        let row = spectra.row(p);
        match sign {
            Sign::Plus => out.iter_mut().zip(row).for_each(|(s, r)| *s += r),
            Sign::Minus => out.iter_mut().zip(row).for_each(|(s, r)| *s += r.conj()),
        }
    }
    2 * out.len() as u64 * rest.len() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    /// Zero-based grid index of the winning direction.
    pub index: usize,
    pub direction: Vec3,
    pub energy: f64,
    /// STFT frames the spectra were accumulated over.
    pub frames: Range<usize>,
}

/// Precomputed steering state for one method, array, grid and frame size.
pub struct Localizer {
    method: Method,
    plan: MergePlan,
    grid: DoaGrid,
    n: usize,
    rows: usize,
    len: usize,
    /// Direction-major offsets into `correlations`: entry `i * rows + j` is
    /// `j * kN + (delay mod kN)` for row `j`'s reference pair.
    offsets: Vec<u32>,
    correlator: Correlator,
    merged: Vec<Complex64>,
    correlations: Vec<f64>,
    pool: Option<rayon::ThreadPool>,
}

impl Localizer {
    /// SRP-PHAT: one row per pair.
    pub fn srp(table: &TdoaTable, grid: &DoaGrid, n: usize) -> Result<Self> {
        Self::build(Method::Srp, MergePlan::singletons(table.pairs()), table, grid, n)
    }

    /// SMP-PHAT: one row per merge group.
    pub fn smp(plan: &MergePlan, table: &TdoaTable, grid: &DoaGrid, n: usize) -> Result<Self> {
        Self::build(Method::Smp, plan.clone(), table, grid, n)
    }

    pub fn new(method: Method, plan: &MergePlan, table: &TdoaTable, grid: &DoaGrid, n: usize) -> Result<Self> {
        match method {
            Method::Srp => Self::srp(table, grid, n),
            Method::Smp => Self::smp(plan, table, grid, n),
        }
    }

    fn build(method: Method, plan: MergePlan, table: &TdoaTable, grid: &DoaGrid, n: usize) -> Result<Self> {
        if plan.pairs() != table.pairs() {
            return Err(Error::DimensionMismatch(format!(
                "plan covers {} pairs, table has {}",
                plan.pairs(),
                table.pairs()
            )));
        }
        if table.directions() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "table has {} directions, grid has {}",
                table.directions(),
                grid.len()
            )));
        }
        let correlator = Correlator::new(n, table.k())?;
        let len = correlator.output_len();
        let rows = plan.len();
        let mut offsets = vec![0u32; rows * grid.len()];
        for (j, reference) in plan.references().enumerate() {
            for (i, &delay) in table.row(reference).iter().enumerate() {
                let wrapped = (delay as i64).rem_euclid(len as i64) as usize;
                offsets[i * rows + j] = (j * len + wrapped) as u32;
            }
        }
        Ok(Self {
            method,
            plan,
            grid: grid.clone(),
            n,
            rows,
            len,
            offsets,
            correlator,
            merged: vec![Complex64::new(0.0, 0.0); n / 2 + 1],
            correlations: vec![0.0; rows * len],
            pool: None,
        })
    }

    /// Splits the direction scan over `threads` workers (1 keeps it serial).
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        self.pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(self)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn grid(&self) -> &DoaGrid {
        &self.grid
    }

    /// Number of correlation rows: `P` for SRP, `Q` for SMP.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Localizes one block of PHAT spectra.
    pub fn locate(&mut self, spectra: &PhatSpectra) -> Result<LocalizationResult> {
        self.locate_counted(spectra, &mut Counts::default())
    }

    /// As [`Localizer::locate`], adding the executed operations to `counts`.
    pub fn locate_counted(&mut self, spectra: &PhatSpectra, counts: &mut Counts) -> Result<LocalizationResult> {
        self.correlate(spectra, counts)?;
        let (index, energy) = match &self.pool {
            Some(pool) => pool.install(|| self.scan_parallel()),
            None => self.scan(),
        };
        let lookups = (self.rows * self.grid.len()) as u64;
        counts.lookups += lookups;
        counts.additions += lookups;
        Ok(LocalizationResult { index, direction: *self.grid.get(index), energy, frames: spectra.frames() })
    }

    /// Steered energy `E(i)` for every direction.
    pub fn energies(&mut self, spectra: &PhatSpectra) -> Result<Vec<f64>> {
        self.correlate(spectra, &mut Counts::default())?;
        Ok((0..self.grid.len()).map(|i| self.energy_at(i)).collect())
    }

    /// Per-row correlations from the last block, each `k * N` long.
    pub fn correlations(&self) -> impl Iterator<Item = &[f64]> {
        self.correlations.chunks(self.len)
    }

    fn correlate(&mut self, spectra: &PhatSpectra, counts: &mut Counts) -> Result<()> {
        if spectra.pairs() != self.plan.pairs() {
            return Err(Error::DimensionMismatch(format!(
                "spectra hold {} pairs, localizer expects {}",
                spectra.pairs(),
                self.plan.pairs()
            )));
        }
        if spectra.frame_size() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "spectra frame size {} differs from localizer frame size {}",
                spectra.frame_size(),
                self.n
            )));
        }
        for (group, out) in self.plan.groups().iter().zip(self.correlations.chunks_mut(self.len)) {
            if group.len() == 1 {
                self.correlator.correlate(spectra.row(group.reference), out);
            } else {
                counts.additions += merge_group_into(spectra, group, &mut self.merged);
                self.correlator.correlate(&self.merged, out);
            }
            counts.iffts += 1;
        }
        Ok(())
    }

    #[inline]
    fn energy_at(&self, i: usize) -> f64 {
        let offsets = &self.offsets[i * self.rows..(i + 1) * self.rows];
        let mut e = 0.0;
        for &o in offsets {
            e += self.correlations[o as usize];
        }
        e
    }

    /// First index attaining the maximum energy, scanning ascending.
    fn scan(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..self.grid.len() {
            let e = self.energy_at(i);
            if e > best.1 {
                best = (i, e);
            }
        }
        best
    }

    fn scan_parallel(&self) -> (usize, f64) {
        (0..self.grid.len())
            .into_par_iter()
            .with_min_len(128)
            .map(|i| (i, self.energy_at(i)))
            .reduce(
                || (0, f64::NEG_INFINITY),
                |a, b| {
                    // Larger energy wins; equal energies keep the lower index.
                    if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
                        b
                    } else {
                        a
                    }
                },
            )
    }
}

/// Online SRP-PHAT over one block of PHAT spectra.
pub fn srp_phat(spectra: &PhatSpectra, table: &TdoaTable, grid: &DoaGrid, k: u32) -> Result<LocalizationResult> {
    check_k(table, k)?;
    Localizer::srp(table, grid, spectra.frame_size())?.locate(spectra)
}

/// Online SMP-PHAT over one block of PHAT spectra.
pub fn smp_phat(
    spectra: &PhatSpectra,
    plan: &MergePlan,
    table: &TdoaTable,
    grid: &DoaGrid,
    k: u32,
) -> Result<LocalizationResult> {
    check_k(table, k)?;
    Localizer::smp(plan, table, grid, spectra.frame_size())?.locate(spectra)
}

fn check_k(table: &TdoaTable, k: u32) -> Result<()> {
    if table.k() != k {
        return Err(Error::DimensionMismatch(format!("table built for k = {}, got k = {k}", table.k())));
    }
    Ok(())
}
