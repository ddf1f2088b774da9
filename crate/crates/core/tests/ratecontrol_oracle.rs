//! `solve_qp` against a full scan of every qp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recompress_core::pixel::rgb_to_ycbcr420;
use recompress_core::ratecontrol::{solve_qp, RateStatus, MAX_PROBES};
use recompress_core::refcodec::{count_bits, QuantParam};
use recompress_core::synth;

fn scan(ycc: &recompress_core::pixel::PlanarImage) -> Vec<f64> {
    let area = ycc.original_area() as f64;
    (0..=51)
        .map(|q| count_bits(ycc, QuantParam::new(q).unwrap()).unwrap() as f64 / area)
        .collect()
}

fn oracle(bpps: &[f64], target: f64) -> i64 {
    let mut best = 0;
    for (q, b) in bpps.iter().enumerate() {
        if (b - target).abs() < (bpps[best] - target).abs() {
            best = q;
        }
    }
    best as i64
}

#[test]
fn fifty_random_instances_match_the_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..50 {
        let (w, h) = (rng.gen_range(16..80), rng.gen_range(16..80));
        let img = if i % 2 == 0 {
            synth::gray_image(w, h, rng.gen())
        } else {
            synth::color_image(w, h, rng.gen())
        }
        .unwrap();
        let ycc = rgb_to_ycbcr420(&img).unwrap();
        let bpps = scan(&ycc);
        let (lo, hi) = (bpps[51], bpps[0]);
        let target = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
        let got = solve_qp(&img, target, 0.05).unwrap();
        assert_eq!(got.param, oracle(&bpps, target), "instance {i}: target {target}");
        assert!(got.probes <= MAX_PROBES, "instance {i}: {} probes", got.probes);
        assert_eq!(got.achieved_bpp, bpps[got.param as usize]);
        if got.status == RateStatus::Matched {
            assert!(got.relative_error() <= 0.05);
        }
    }
}

#[test]
fn targets_outside_the_range_hit_the_bounds() {
    let img = synth::gray_image(64, 64, 5).unwrap();
    let bpps = scan(&rgb_to_ycbcr420(&img).unwrap());
    let low = solve_qp(&img, bpps[51] * 0.5, 0.05).unwrap();
    assert_eq!((low.param, low.status), (51, RateStatus::BestEffortAtBound));
    let high = solve_qp(&img, bpps[0] * 2.0, 0.05).unwrap();
    assert_eq!((high.param, high.status), (0, RateStatus::BestEffortAtBound));
}

#[test]
fn every_achieved_rate_is_recovered_exactly() {
    let img = synth::color_image(48, 48, 17).unwrap();
    let bpps = scan(&rgb_to_ycbcr420(&img).unwrap());
    for (q, &b) in bpps.iter().enumerate() {
        let got = solve_qp(&img, b, 0.0).unwrap();
        // Plateaus resolve to the lowest qp sharing that rate.
        let first = bpps.iter().position(|&x| x == b).unwrap();
        assert_eq!(got.param as usize, first, "qp {q}");
        assert!(got.probes <= MAX_PROBES);
    }
}
