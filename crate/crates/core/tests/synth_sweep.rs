use lfinet_core::trajdata::synth::{synth_scene_detailed, SynthSpec};

#[test]
fn coverage_stays_in_band_over_1000_seeds() {
    let spec = SynthSpec::default();
    let (mut lo, mut hi) = (1.0f64, 0.0f64);
    for seed in 0..1000u64 {
        let sc = synth_scene_detailed(seed, &spec).unwrap();
        let m = &sc.pair.mask;
        assert!(m.is_binary(), "seed {seed}");
        let cov = m.count_on() as f64 / m.data.len() as f64;
        assert!((0.02..=0.25).contains(&cov), "seed {seed}: coverage {cov}");
        assert!((2..=5).contains(&sc.segments.len()), "seed {seed}: {} segments", sc.segments.len());
        lo = lo.min(cov);
        hi = hi.max(cov);
    }
    println!("coverage range {lo:.4}..{hi:.4}");
}

#[test]
fn every_segment_is_eight_connected_and_masked() {
    let spec = SynthSpec::default();
    for seed in 0..1000u64 {
        let sc = synth_scene_detailed(seed, &spec).unwrap();
        for (i, seg) in sc.segments.iter().enumerate() {
            for w in seg.skeleton.windows(2) {
                let (a, b) = (w[0], w[1]);
                let dr = a.0.abs_diff(b.0);
                let dc = a.1.abs_diff(b.1);
                assert!(dr <= 1 && dc <= 1, "seed {seed} segment {i}: {a:?} -> {b:?}");
            }
            for &(r, c) in &seg.skeleton {
                assert_eq!(sc.pair.mask.get(r, c), 1.0, "seed {seed} segment {i} at {r},{c}");
            }
        }
    }
}
