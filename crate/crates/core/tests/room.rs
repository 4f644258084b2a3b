use std::collections::HashMap;

use smpphat::geometry::angle_deg;
use smpphat::pipeline::{strongest, Pipeline, PipelineConfig};
use smpphat::room::{
    compute_rir, mean_angular_error, run_campaign, simulate_trial, CampaignConfig, RoomConfig, TrialSetup, Walls,
    DEFAULT_DIMS, DEFAULT_MAX_ORDER,
};
use smpphat::{Method, MicArray};

const FS: f64 = 16000.0;
const C: f64 = 343.0;

/// T20 from Schroeder backward integration: least-squares slope of the
/// energy decay curve between -5 and -25 dB, extrapolated to -60 dB.
fn schroeder_t20(rir: &[f64], fs: f64) -> f64 {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for (e, h) in edc.iter_mut().zip(rir).rev() {
        acc += h * h;
        *e = acc;
    }
    let total = edc[0];
    let points: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .map(|(t, e)| (t as f64 / fs, 10.0 * (e / total).log10()))
        .filter(|&(_, db)| (-25.0..=-5.0).contains(&db))
        .collect();
    let n = points.len() as f64;
    let (mt, md) = points.iter().fold((0.0, 0.0), |(a, b), &(t, d)| (a + t / n, b + d / n));
    let (num, den) = points.iter().fold((0.0, 0.0), |(a, b), &(t, d)| (a + (t - mt) * (d - md), b + (t - mt).powi(2)));
    -60.0 / (num / den)
}

#[test]
fn schroeder_decay_matches_requested_rt60() {
    let src = [3.0, 4.0, 2.0];
    let mic = [6.5, 5.5, 1.0];
    for rt60 in [0.2, 0.3, 0.4, 0.5] {
        let room = RoomConfig::new(DEFAULT_DIMS, Walls::Rt60(rt60), FS, C, DEFAULT_MAX_ORDER).unwrap();
        let measured = schroeder_t20(&compute_rir(&room, &src, &mic).unwrap(), FS);
        assert!((measured / rt60 - 1.0).abs() <= 0.2, "rt60 {rt60}: measured {measured:.3}");
    }
}

#[test]
fn rir_energy_falls_as_absorption_rises() {
    let energy = |alpha: f64| {
        let room = RoomConfig::new([6.0, 5.0, 3.0], Walls::Absorption(alpha), FS, C, 4).unwrap();
        compute_rir(&room, &[1.5, 2.0, 1.7], &[4.0, 3.0, 1.2]).unwrap().iter().map(|h| h * h).sum::<f64>()
    };
    let energies: Vec<f64> = [0.1, 0.25, 0.5, 0.75, 1.0].into_iter().map(energy).collect();
    assert!(energies.windows(2).all(|w| w[0] > w[1]), "{energies:?}");
}

#[test]
fn angular_error_survives_a_common_rotation() {
    let rot = |u: [f64; 3]| [-u[1], u[0], u[2]];
    let pairs = [
        ([0.0, 0.0, 1.0], [0.6, 0.0, 0.8]),
        ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        ([0.36, 0.48, 0.8], [0.48, 0.36, 0.8]),
    ];
    let before = mean_angular_error(pairs);
    let after = mean_angular_error(pairs.map(|(p, t)| (rot(p), rot(t))));
    assert!((before - after).abs() < 1e-12);
    assert!((angle_deg(&pairs[1].0, &pairs[1].1) - 90.0).abs() < 1e-12);
}

#[test]
fn anechoic_source_on_a_grid_direction_is_found() {
    let array = MicArray::preset("matrix-creator").unwrap();
    let config = PipelineConfig::default();
    let mut pipeline = Pipeline::new(&array, config.clone()).unwrap();
    let table = pipeline.table();
    let mut seen: HashMap<Vec<i32>, usize> = HashMap::new();
    let column = |i: usize| (0..table.pairs()).map(|p| table.get(p, i)).collect::<Vec<_>>();
    for i in 0..table.directions() {
        *seen.entry(column(i)).or_default() += 1;
    }
    let candidates: Vec<usize> = (0..table.directions())
        .filter(|&i| seen[&column(i)] == 1 && pipeline.grid().get(i)[2] < 0.9)
        .step_by(97)
        .collect();
    let room = RoomConfig::new(DEFAULT_DIMS, Walls::Absorption(1.0), FS, C, 0).unwrap();
    let center = [5.0, 5.0, 1.0];
    for (n, &i) in candidates.iter().enumerate() {
        let u = *pipeline.grid().get(i);
        let source = [center[0] + 1.4 * u[0], center[1] + 1.4 * u[1], center[2] + 1.4 * u[2]];
        let setup = TrialSetup::new(center, source, n as u64).unwrap();
        let signals = simulate_trial(&room, &array, &setup, 0.5, config.block_samples()).unwrap();
        let results = pipeline.locate(&signals, &Method::ALL).unwrap();
        for blocks in &results {
            let best = strongest(blocks).unwrap();
            let err = angle_deg(&best.direction, &setup.truth);
            assert!(err <= 2.0, "direction {i}: error {err:.2} deg");
        }
    }
    assert!(candidates.len() >= 10);
}

#[test]
fn campaign_is_reproducible_and_matches_a_serial_rerun() {
    let array = MicArray::preset("respeaker-usb").unwrap();
    let config = CampaignConfig { duration: 0.3, ..CampaignConfig::default() };
    let a = run_campaign(&config, &array, &Method::ALL, 6, 7).unwrap();
    let b = run_campaign(&config, &array, &[Method::Smp], 6, 7).unwrap();
    assert_eq!(a[1], b[0]);

    let draw = config.draw(7, 4).unwrap();
    let signals = config.signals(&array, &draw).unwrap();
    let mut pipeline = Pipeline::new(&array, config.pipeline.clone()).unwrap();
    let results = pipeline.locate(&signals, &[Method::Srp]).unwrap();
    let best = strongest(&results[0]).unwrap();
    assert_eq!(a[0].trials[4].grid_index, best.index);
    assert_eq!(a[0].trials[4].energy, best.energy);
    assert!(run_campaign(&config, &array, &Method::ALL, 0, 7).is_err());
}
