mod common;

use proptest::prelude::*;
use rand::Rng;
use rppg_core::ingest::*;
use rppg_core::synth::{make_cohort, CohortOptions, SynthSpec};
use rppg_core::Error;

fn nearest_even(v: f64) -> usize {
    (0..=(v as usize + 2)).step_by(2).min_by(|a, b| (*a as f64 - v).abs().total_cmp(&(*b as f64 - v).abs())).unwrap()
}

fn track(frames: usize, seed: u64) -> Vec<Vec<(f64, f64)>> {
    let mut r = common::rng(seed);
    (0..frames)
        .map(|_| (0..5).map(|_| (r.random_range(10.0..300.0), r.random_range(10.0..300.0))).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn side_is_the_scaled_first_frame_range(frames in 1usize..6, seed in any::<u64>()) {
        let t = track(frames, seed);
        let (lo, hi) = t[0].iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let spec = compute_crop(&LandmarkTrack::new(t).unwrap()).unwrap();
        prop_assert_eq!(spec.side, nearest_even(1.2 * (hi - lo)));
    }

    #[test]
    fn later_frames_never_change_the_side(seed in any::<u64>(), other in any::<u64>()) {
        let mut t = track(4, seed);
        let side = compute_crop(&LandmarkTrack::new(t.clone()).unwrap()).unwrap().side;
        t[1..].clone_from_slice(&track(3, other));
        prop_assert_eq!(compute_crop(&LandmarkTrack::new(t).unwrap()).unwrap().side, side);
    }

    #[test]
    fn translation_equivariance(seed in any::<u64>(), k in 0usize..4, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let t = track(4, seed);
        let a = compute_crop(&LandmarkTrack::new(t.clone()).unwrap()).unwrap();
        let mut moved = t;
        for p in &mut moved[k] {
            p.0 += dx;
            p.1 += dy;
        }
        let b = compute_crop(&LandmarkTrack::new(moved).unwrap()).unwrap();
        if k > 0 {
            prop_assert_eq!(a.side, b.side);
        }
        prop_assert!((b.centers[k].0 - a.centers[k].0 - dx).abs() < 1e-9);
        prop_assert!((b.centers[k].1 - a.centers[k].1 - dy).abs() < 1e-9);
        for j in (0..4).filter(|&j| j != k) {
            prop_assert_eq!(a.centers[j], b.centers[j]);
        }
    }

    #[test]
    fn crops_have_the_fixed_shape_and_range(w in 8usize..60, h in 8usize..60, side in 2usize..80, cx in -20.0f64..80.0, cy in -20.0f64..80.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let frames: Vec<RgbFrame> = (0..2)
            .map(|_| RgbFrame::new(w, h, (0..w * h * 3).map(|_| r.random_range(0.0f32..=1.0)).collect()).unwrap())
            .collect();
        let spec = CropSpec { centers: vec![(cx, cy); 2], side: side & !1 | 2 };
        let clip = crop_and_resize(&frames, &spec, 30.0).unwrap();
        prop_assert_eq!(clip.frames, 2);
        prop_assert_eq!(clip.data.len(), 2 * Clip::FRAME_LEN);
        prop_assert!(clip.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn test_windows_are_disjoint_and_cover(frames in 1usize..5000, len_s in prop::sample::select(vec![5.0f64, 10.0, 30.0])) {
        let len = (len_s * 30.0) as usize;
        match segment_clips(frames, 30.0, len_s, SegmentMode::Test, &mut common::rng(0)) {
            Err(Error::VideoTooShort { .. }) => prop_assert!(frames < len),
            Err(e) => prop_assert!(false, "{e}"),
            Ok(w) => {
                prop_assert_eq!(w.len(), frames / len);
                for (i, r) in w.iter().enumerate() {
                    prop_assert_eq!(r.clone(), i * len..(i + 1) * len);
                }
            }
        }
    }
}

#[test]
fn test_windowing_and_degenerate_tracks() {
    let w = segment_clips(95 * 30, 30.0, 30.0, SegmentMode::Test, &mut common::rng(0)).unwrap();
    assert_eq!(w, vec![0..900, 900..1800, 1800..2700]);
    let t = LandmarkTrack::new(vec![vec![(100.0, 100.0), (300.0, 300.0)]]).unwrap();
    assert_eq!(compute_crop(&t).unwrap().side, 240);
    let single = LandmarkTrack::new(vec![vec![(5.0, 5.0)]]).unwrap();
    assert!(matches!(compute_crop(&single), Err(Error::DegenerateLandmarks)));
}

/// A small cohort written through the clip store reads back as generated.
#[test]
fn cohort_round_trips_through_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let template = SynthSpec { duration_s: 3.0, ..Default::default() };
    let opts = CohortOptions { template: template.clone(), ..Default::default() };
    let m = make_cohort(dir.path(), 2, (60.0, 120.0), 4, &opts).unwrap();
    let loaded = Manifest::load(dir.path()).unwrap();
    assert_eq!(loaded.entries.len(), 2);
    for e in &loaded.entries {
        let spec = SynthSpec { hr_bpm: e.hr_bpm.unwrap(), ..template.clone() };
        let (clip, _, _) = rppg_core::synth::generate_clip(&spec, e.synth_seed.unwrap()).unwrap();
        let stored = loaded.open_clip(e).unwrap().read_all().unwrap();
        assert_eq!(stored.frames, clip.frames);
        let worst = stored.data.iter().zip(&clip.data).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(worst <= 0.5 / 65535.0 + 1e-7, "max difference {worst}");
    }
    assert_eq!(m.entries.len(), 2);
}
