//! End-to-end block localization of multichannel signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcc::{cross_spectrum, phat, Stft, Window, DEFAULT_PHAT_FLOOR};
use crate::geometry::{DoaGrid, MicArray, PairSet, TdoaTable};
use crate::localize::{LocalizationResult, Localizer, Method};
use crate::plan::{MergePlan, DEFAULT_EPSILON};

pub const DEFAULT_FS: f64 = 16000.0;
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fs: f64,
    pub c: f64,
    /// STFT frame size `N`.
    pub n: usize,
    pub hop: usize,
    /// Interpolation factor `k`.
    pub k: u32,
    /// Frames accumulated per localization.
    pub block: usize,
    pub grid_level: u32,
    pub hann: bool,
    pub phat_floor: f64,
    pub epsilon: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fs: DEFAULT_FS,
            c: DEFAULT_SPEED_OF_SOUND,
            n: 512,
            hop: 256,
            k: 4,
            block: 8,
            grid_level: 4,
            hann: true,
            phat_floor: DEFAULT_PHAT_FLOOR,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl PipelineConfig {
    pub fn window(&self) -> Window {
        if self.hann {
            Window::Hann
        } else {
            Window::Rectangular
        }
    }

    /// Samples needed for one full localization block.
    pub fn block_samples(&self) -> usize {
        self.n + (self.block.max(1) - 1) * self.hop
    }
}

/// Offline state for one array plus the online localizers.
pub struct Pipeline {
    config: PipelineConfig,
    channels: usize,
    pairs: PairSet,
    grid: DoaGrid,
    table: TdoaTable,
    plan: MergePlan,
    stft: Stft,
    srp: Localizer,
    smp: Localizer,
}

impl Pipeline {
    pub fn new(array: &MicArray, config: PipelineConfig) -> Result<Self> {
        if config.block == 0 {
            return Err(Error::InvalidParameter("block must hold at least one frame".into()));
        }
        let pairs = PairSet::enumerate(array);
        let grid = DoaGrid::icosphere(config.grid_level, true)?;
        let table = TdoaTable::build(&pairs, &grid, config.fs, config.c, config.k)?;
        let plan = MergePlan::build(&pairs, config.epsilon)?;
        let stft = Stft::new(config.n, config.hop, config.window())?;
        let srp = Localizer::srp(&table, &grid, config.n)?;
        let smp = Localizer::smp(&plan, &table, &grid, config.n)?;
        Ok(Self { config, channels: array.len(), pairs, grid, table, plan, stft, srp, smp })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn pairs(&self) -> &PairSet {
        &self.pairs
    }

    pub fn grid(&self) -> &DoaGrid {
        &self.grid
    }

    pub fn table(&self) -> &TdoaTable {
        &self.table
    }

    pub fn plan(&self) -> &MergePlan {
        &self.plan
    }

    pub fn localizer(&mut self, method: Method) -> &mut Localizer {
        match method {
            Method::Srp => &mut self.srp,
            Method::Smp => &mut self.smp,
        }
    }

    /// Scan the direction grid with `threads` workers per localizer.
    pub fn set_threads(&mut self, threads: usize) -> Result<()> {
        let srp = std::mem::replace(&mut self.srp, Localizer::srp(&self.table, &self.grid, self.config.n)?);
        self.srp = srp.with_threads(threads)?;
        let smp = std::mem::replace(&mut self.smp, Localizer::smp(&self.plan, &self.table, &self.grid, self.config.n)?);
        self.smp = smp.with_threads(threads)?;
        Ok(())
    }

    /// One result per complete block of frames for each requested method.
    /// `out[j][b]` is block `b` localized with `methods[j]`.
    pub fn locate<S: AsRef<[f64]>>(&mut self, signal: &[S], methods: &[Method]) -> Result<Vec<Vec<LocalizationResult>>> {
        if signal.len() != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "signal has {} channels, array has {} microphones",
                signal.len(),
                self.channels
            )));
        }
        let len = signal.first().map_or(0, |c| c.as_ref().len());
        let needed = self.config.block_samples();
        if len < needed {
            return Err(Error::SignalTooShort { needed, got: len });
        }
        let blocks = self.stft.frame_count(len) / self.config.block;
        let mut frames = self.stft.frames(signal)?;
        let mut out = vec![Vec::with_capacity(blocks); methods.len()];
        for _ in 0..blocks {
            let cross = cross_spectrum(&mut frames, &self.pairs, self.config.block)?;
            let spectra = phat(&cross, self.config.phat_floor);
            for (results, &method) in out.iter_mut().zip(methods) {
                let localizer = match method {
                    Method::Srp => &mut self.srp,
                    Method::Smp => &mut self.smp,
                };
                results.push(localizer.locate(&spectra)?);
            }
        }
        Ok(out)
    }
}

/// The block with the largest steered energy (first one on ties).
pub fn strongest(results: &[LocalizationResult]) -> Option<&LocalizationResult> {
    results.iter().fold(None, |best: Option<&LocalizationResult>, r| match best {
        Some(b) if b.energy >= r.energy => Some(b),
        _ => Some(r),
    })
}
