use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use smpphat::bench::random_phat_spectra;
use smpphat::gcc::{cross_spectrum, gcc, phat, DEFAULT_PHAT_FLOOR};
use smpphat::geometry::{Pair, PRESET_NAMES};
use smpphat::plan::{validate_plan, PlanValidation, DEFAULT_EPSILON};
use smpphat::{DoaGrid, Localizer, MergeGroup, MergePlan, MicArray, PairSet, SpectralFrame, TdoaTable};

const FS: f64 = 16000.0;
const C: f64 = 343.0;

fn ring(count: usize, radius: f64, phase: f64, center: bool) -> MicArray {
    let mut mics: Vec<[f64; 3]> = (0..count)
        .map(|m| {
            let a = phase + std::f64::consts::TAU * m as f64 / count as f64;
            [radius * a.cos(), radius * a.sin(), 0.0]
        })
        .collect();
    if center {
        mics.push([0.0, 0.0, 0.0]);
    }
    MicArray::new("ring", mics).unwrap()
}

/// Rings wide enough that the absolute merge tolerance only groups truly
/// parallel pairs (equal-length chords of a heptagon are 25.7 degrees apart).
fn ring_strategy() -> impl Strategy<Value = MicArray> {
    (3usize..=8, 0.05f64..0.1, 0.0f64..std::f64::consts::PI, any::<bool>())
        .prop_map(|(count, radius, phase, center)| ring(count, radius, phase, center))
}

fn scattered_strategy() -> impl Strategy<Value = MicArray> {
    prop::collection::vec((-0.06f64..0.06, -0.06f64..0.06, -0.02f64..0.02), 3..7).prop_filter_map(
        "mics too close",
        |mics| {
            let mics: Vec<[f64; 3]> = mics.into_iter().map(|(x, y, z)| [x, y, z]).collect();
            let min = mics
                .iter()
                .enumerate()
                .flat_map(|(i, a)| mics[i + 1..].iter().map(move |b| dist(a, b)))
                .fold(f64::INFINITY, f64::min);
            (min > 0.005).then(|| MicArray::new("scattered", mics).unwrap())
        },
    )
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn k_strategy() -> impl Strategy<Value = u32> {
    prop::sample::select(vec![1u32, 2, 4, 8])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn swapping_a_pair_negates_its_delays(array in scattered_strategy(), k in k_strategy()) {
        let pairs = PairSet::enumerate(&array);
        let swapped = PairSet::from_pairs(
            pairs.pairs().iter().map(|p| Pair { u: p.v, v: p.u, d: [-p.d[0], -p.d[1], -p.d[2]] }).collect(),
        );
        let grid = DoaGrid::icosphere(2, false).unwrap();
        let a = TdoaTable::build(&pairs, &grid, FS, C, k).unwrap();
        let b = TdoaTable::build(&swapped, &grid, FS, C, k).unwrap();
        for p in 0..pairs.len() {
            for i in 0..grid.len() {
                prop_assert_eq!(a.get(p, i), -b.get(p, i));
            }
        }
    }

    #[test]
    fn delays_respect_the_physical_bound(array in scattered_strategy(), k in k_strategy()) {
        let pairs = PairSet::enumerate(&array);
        let grid = DoaGrid::icosphere(3, true).unwrap();
        let table = TdoaTable::build(&pairs, &grid, FS, C, k).unwrap();
        for (p, pair) in pairs.pairs().iter().enumerate() {
            let d = (pair.d[0].powi(2) + pair.d[1].powi(2) + pair.d[2].powi(2)).sqrt();
            let bound = FS * d / C;
            for &delay in table.row(p) {
                prop_assert!((delay as f64 / k as f64).abs() <= bound + 0.5);
                prop_assert!(delay.unsigned_abs() <= k * bound.ceil() as u32);
            }
        }
    }

    #[test]
    fn table_build_is_deterministic(array in scattered_strategy(), k in k_strategy()) {
        let pairs = PairSet::enumerate(&array);
        let grid = DoaGrid::icosphere(2, true).unwrap();
        let a = TdoaTable::build(&pairs, &grid, FS, C, k).unwrap();
        let b = TdoaTable::build(&pairs, &grid, FS, C, k).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn replanning_references_gives_singletons(array in ring_strategy()) {
        let pairs = PairSet::enumerate(&array);
        let plan = MergePlan::build(&pairs, DEFAULT_EPSILON).unwrap();
        let refs = PairSet::from_pairs(plan.references().map(|p| *pairs.get(p)).collect());
        let again = MergePlan::build(&refs, DEFAULT_EPSILON).unwrap();
        prop_assert_eq!(again.len(), plan.len());
        prop_assert!(again.groups().iter().all(|g| g.len() == 1));
    }

    #[test]
    fn doubling_the_aperture_keeps_the_groups(array in ring_strategy()) {
        let plan = MergePlan::build(&PairSet::enumerate(&array), DEFAULT_EPSILON).unwrap();
        let scaled = array.scaled(2.0).unwrap();
        let doubled = MergePlan::build(&PairSet::enumerate(&scaled), DEFAULT_EPSILON).unwrap();
        prop_assert_eq!(plan.groups(), doubled.groups());
    }

    #[test]
    fn smp_energies_match_srp(array in ring_strategy(), k in k_strategy(), seed in any::<u64>()) {
        let pairs = PairSet::enumerate(&array);
        let plan = MergePlan::build(&pairs, DEFAULT_EPSILON).unwrap();
        let grid = DoaGrid::icosphere(3, true).unwrap();
        let table = TdoaTable::build(&pairs, &grid, FS, C, k).unwrap();
        let spectra = random_phat_spectra(&mut ChaCha8Rng::seed_from_u64(seed), pairs.len(), 256);
        let srp = Localizer::srp(&table, &grid, 256).unwrap().energies(&spectra).unwrap();
        let smp = Localizer::smp(&plan, &table, &grid, 256).unwrap().energies(&spectra).unwrap();
        for (a, b) in srp.iter().zip(&smp) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs(), "{} vs {}", a, b);
        }
    }

    #[test]
    fn group_order_does_not_change_the_winner(array in ring_strategy(), seed in any::<u64>()) {
        let pairs = PairSet::enumerate(&array);
        let plan = MergePlan::build(&pairs, DEFAULT_EPSILON).unwrap();
        let reversed: Vec<MergeGroup> = plan.groups().iter().rev().cloned().collect();
        let reversed = MergePlan::from_groups(reversed, pairs.len(), DEFAULT_EPSILON).unwrap();
        let grid = DoaGrid::icosphere(3, true).unwrap();
        let table = TdoaTable::build(&pairs, &grid, FS, C, 4).unwrap();
        let spectra = random_phat_spectra(&mut ChaCha8Rng::seed_from_u64(seed), pairs.len(), 256);
        let a = Localizer::smp(&plan, &table, &grid, 256).unwrap().locate(&spectra).unwrap();
        let b = Localizer::smp(&reversed, &table, &grid, 256).unwrap().locate(&spectra).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert!((a.energy - b.energy).abs() <= 1e-9 * a.energy.abs());
    }

    /// Mean square of the correlation equals `Re(R_0)^2 + sum_{f >= 1} |R_f|^2 / 2`
    /// for every k > 1, where bin N/2 is split evenly between the two halves.
    #[test]
    fn correlation_power_does_not_depend_on_k(
        values in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 129),
    ) {
        let spectrum: Vec<Complex64> = values.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        let expected = spectrum[0].re.powi(2) + spectrum[1..].iter().map(|c| c.norm_sqr()).sum::<f64>() / 2.0;
        for k in [2u32, 4, 8] {
            let r = gcc(&spectrum, k).unwrap();
            let power = r.samples().iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
            prop_assert!((power - expected).abs() <= 1e-6 * expected, "k = {}: {} vs {}", k, power, expected);
        }
    }

    #[test]
    fn plane_wave_peaks_at_table_delays(array in scattered_strategy(), k in k_strategy(), index in 0usize..321) {
        const N: usize = 512;
        let pairs = PairSet::enumerate(&array);
        let grid = DoaGrid::icosphere(3, true).unwrap();
        let table = TdoaTable::build(&pairs, &grid, FS, C, k).unwrap();
        let u = grid.get(index);
        for pair in pairs.pairs() {
            let t = k as f64 * FS / C * (pair.d[0] * u[0] + pair.d[1] * u[1] + pair.d[2] * u[2]);
            prop_assume!((t.fract().abs() - 0.5).abs() > 1e-3);
        }
        let bins = array
            .mics()
            .iter()
            .map(|x| {
                let delay = -FS * (x[0] * u[0] + x[1] * u[1] + x[2] * u[2]) / C;
                (0..=N / 2)
                    .map(|f| Complex64::from_polar(1.0, -std::f64::consts::TAU * f as f64 * delay / N as f64))
                    .collect()
            })
            .collect();
        let frame = SpectralFrame::new(0, N, bins).unwrap();
        let cross = cross_spectrum(&mut std::iter::once(frame), &pairs, 1).unwrap();
        let spectra = phat(&cross, DEFAULT_PHAT_FLOOR);
        for p in 0..pairs.len() {
            let r = gcc(spectra.row(p), k).unwrap();
            let len = r.len() as i64;
            let peak = r.argmax() as i64;
            let lag = if peak > len / 2 { peak - len } else { peak };
            prop_assert_eq!(lag, table.get(p, index) as i64);
        }
    }
}

#[test]
fn singleton_plan_matches_srp_bit_for_bit() {
    for name in PRESET_NAMES {
        let array = MicArray::preset(name).unwrap();
        let pairs = PairSet::enumerate(&array);
        let grid = DoaGrid::icosphere(3, true).unwrap();
        let table = TdoaTable::build(&pairs, &grid, FS, C, 4).unwrap();
        let spectra = random_phat_spectra(&mut ChaCha8Rng::seed_from_u64(3), pairs.len(), 512);
        let srp = Localizer::srp(&table, &grid, 512).unwrap().energies(&spectra).unwrap();
        let plan = MergePlan::singletons(pairs.len());
        let smp = Localizer::smp(&plan, &table, &grid, 512).unwrap().energies(&spectra).unwrap();
        assert_eq!(srp, smp, "{name}");
    }
}

#[test]
fn hemisphere_grids_are_clean() {
    for level in 0..=5 {
        let grid = DoaGrid::icosphere(level, true).unwrap();
        let dirs = grid.directions();
        assert!(dirs.iter().all(|u| u[2] >= -1e-6));
        for (i, a) in dirs.iter().enumerate() {
            for b in &dirs[i + 1..] {
                let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
                assert!(cos.acos() > 1e-6, "level {level}: duplicate direction");
            }
        }
    }
}

#[test]
fn tiny_apertures_merge_nearly_parallel_pairs() {
    // Step-one chords of a 2 cm heptagon are 17 mm long and 25.7 degrees
    // apart: L^2 (1 - cos) ~ 3e-5 is below the default tolerance.
    let array = ring(7, 0.02, 0.0, false);
    let pairs = PairSet::enumerate(&array);
    let plan = MergePlan::build(&pairs, DEFAULT_EPSILON).unwrap();
    let grid = DoaGrid::icosphere(3, true).unwrap();
    let table = TdoaTable::build(&pairs, &grid, FS, C, 4).unwrap();
    assert!(matches!(validate_plan(&plan, &table).unwrap(), PlanValidation::Violation { .. }));
    let tight = MergePlan::build(&pairs, 1e-6).unwrap();
    assert!(matches!(validate_plan(&tight, &table).unwrap(), PlanValidation::Valid { .. }));
}
