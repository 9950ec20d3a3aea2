mod common;

use std::collections::{BTreeMap, HashSet};

use common::*;
use proptest::prelude::*;
use rppg_core::strppg::*;
use rppg_core::Error;

fn block(frames: usize, side: usize, seed: u64) -> StBlock {
    StBlock::new(noise(frames * side * side, seed), frames, side, 30.0).unwrap()
}

/// Every (S, K) of the sensitivity grid.
#[test]
fn sampler_contract_over_the_grid() {
    for s in [1, 2, 4, 8] {
        for k in [1, 4] {
            for frames in [60, 150, 300, 301] {
                let b = block(frames, s, (s * 100 + k + frames) as u64);
                let out = sample_block(&b, k, &mut rng(9)).unwrap();
                assert_eq!(out.len(), s * s * k);
                let mut per_cell = BTreeMap::new();
                for (spec, w) in &out {
                    assert_eq!(spec.dt, frames / 2);
                    assert!(spec.t0 + spec.dt <= frames);
                    assert_eq!(w.samples(), &b.trace(spec.h, spec.w)[spec.t0..spec.t0 + spec.dt]);
                    assert_eq!(w.fs(), b.fs());
                    *per_cell.entry((spec.h, spec.w)).or_insert(0) += 1;
                }
                assert_eq!(per_cell.len(), s * s);
                assert!(per_cell.values().all(|&c| c == k));
                let again = sample_block(&b, k, &mut rng(9)).unwrap();
                let specs = |v: &[(SampleSpec, _)]| v.iter().map(|p| p.0).collect::<Vec<_>>();
                assert_eq!(specs(&out), specs(&again));
            }
        }
    }
}

#[test]
fn seeds_change_start_frames() {
    let b = block(300, 2, 1);
    let draws: HashSet<Vec<usize>> = (0..100)
        .map(|seed| {
            let mut t: Vec<usize> = sample_block(&b, 4, &mut rng(seed)).unwrap().iter().map(|p| p.0.t0).collect();
            t.sort_unstable();
            t
        })
        .collect();
    assert!(draws.len() >= 99, "only {} distinct start multisets over 100 seeds", draws.len());
}

#[test]
fn short_blocks_are_rejected() {
    assert!(matches!(StBlock::new(vec![0.0; 59], 59, 1, 30.0), Err(Error::BlockTooShort { .. })));
    let tiny = StBlock::new(vec![1.0, 2.0, 3.0, 4.0], 4, 1, 2.0).unwrap();
    let out = sample_block(&tiny, 1, &mut rng(0)).unwrap();
    assert_eq!(out.len(), 1);
    assert!(out[0].0.t0 <= 2);
}

proptest! {
    #[test]
    fn start_frames_are_uniformish(seed in any::<u64>()) {
        // 400 draws over 151 starts: every third of the range is hit.
        let b = block(300, 1, 3);
        let out = sample_block(&b, 400, &mut rng(seed)).unwrap();
        let mut thirds = [0; 3];
        for (s, _) in &out {
            thirds[(s.t0 * 3 / 151).min(2)] += 1;
        }
        prop_assert!(thirds.iter().all(|&c| c > 80));
    }

    #[test]
    fn spatial_average_commutes_with_slicing(frames in 60usize..200, side in prop::sample::select(vec![1usize, 2, 4, 8]), seed in any::<u64>(), a in 0usize..30, len in 60usize..100) {
        let b = block(frames, side, seed);
        let avg = spatial_average(&b);
        let start = a.min(frames - 60);
        let end = (start + len).min(frames);
        let cells = side * side;
        let sliced = StBlock::new(b.values()[start * cells..end * cells].to_vec(), end - start, side, 30.0).unwrap();
        let direct = spatial_average(&sliced);
        prop_assert_eq!(&avg.samples()[start..end], direct.samples());
    }
}
