mod common;

use proptest::prelude::*;
use rand::Rng;
use rppg_core::eval::*;
use rppg_core::ingest::{Manifest, Split};
use rppg_core::model::{standardize_clip, Encoder, ModelConfig};
use rppg_core::synth::{make_cohort, CohortOptions, SynthSpec};

fn row(i: usize, pred: Option<f64>, truth: Option<f64>, degenerate: bool) -> EvalRow {
    EvalRow { clip_id: format!("c{}", i / 3), window: i % 3, start_s: (i % 3) as f64 * 30.0, hr_pred: pred, hr_true: truth, ipr: Some(0.5), degenerate }
}

proptest! {
    #[test]
    fn aggregates_equal_brute_force(spec in prop::collection::vec((40.0f64..200.0, 40.0f64..200.0, any::<bool>(), 0u8..10), 1..30)) {
        let rows: Vec<EvalRow> = spec.iter().enumerate().map(|(i, &(p, t, deg, miss))| {
            row(i, Some(p), (miss != 0).then_some(t), deg)
        }).collect();
        let valid: Vec<(f64, f64)> = rows.iter().filter(|r| !r.degenerate).filter_map(|r| Some((r.hr_pred?, r.hr_true?))).collect();
        match aggregate(&rows) {
            None => prop_assert!(valid.is_empty()),
            Some(a) => {
                let n = valid.len() as f64;
                let mae = valid.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
                let rmse = (valid.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert_eq!(a.mae, mae);
                prop_assert_eq!(a.rmse, rmse);
            }
        }
    }

    /// Standardization cancels any uniform rescaling of the pixels, so the
    /// saliency map sees an identical input.
    #[test]
    fn standardized_input_ignores_pixel_scale(k in -8i32..8, seed in any::<u64>(), a in 0.01f32..100.0) {
        let mut r = common::rng(seed);
        let n = 4 * 8 * 8 * 3;
        let x: Vec<f32> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let base = standardize_clip(&x, 4, 8, 8);
        let s = 2f32.powi(k);
        let exact: Vec<f32> = x.iter().map(|v| v * s).collect();
        prop_assert_eq!(&standardize_clip(&exact, 4, 8, 8), &base);
        let any: Vec<f32> = x.iter().map(|v| v * a).collect();
        for (u, v) in standardize_clip(&any, 4, 8, 8).data.iter().zip(&base.data) {
            prop_assert!((u - v).abs() <= 1e-4);
        }
    }
}

/// 95 s videos yield three disjoint 30 s windows each.
#[test]
fn windows_of_a_long_video() {
    let dir = tempfile::tempdir().unwrap();
    let opts = CohortOptions {
        template: SynthSpec { duration_s: 95.0, ..Default::default() },
        split: Split::Test,
        ..Default::default()
    };
    make_cohort(dir.path(), 2, (70.0, 90.0), 1, &opts).unwrap();
    let m = Manifest::load(dir.path()).unwrap();
    let model = Encoder::new(ModelConfig { base_channels: 4, ..Default::default() }, 0).unwrap();
    let (report, traces) = evaluate(&m, &model, &EvalOptions::default(), None).unwrap();
    assert_eq!(report.rows.len(), 6);
    for (i, r) in report.rows.iter().enumerate() {
        assert_eq!((r.window, r.start_s), (i % 3, (i % 3) as f64 * 30.0));
    }
    assert!(traces.iter().all(|t| t.rppg.len() == 3 * 900));
    assert!(report.rows.iter().all(|r| r.hr_true.is_some()));
    assert_eq!(report.summary.agreement, aggregate(&report.rows));

    let out = dir.path().join("eval");
    report.write(&out).unwrap();
    assert_eq!(EvalReport::load(&out).unwrap(), report);
}
