//! Checks against independent oracles: closed-form projector algebra,
//! derivative-free search for the probe loss infimum, and SVD ranks.

mod common;

use std::time::Instant;

use common::oracle::{check_inlp, check_projector_algebra, check_v_information, synthetic};

#[test]
fn projector_algebra_on_random_directions() {
    let start = Instant::now();
    check_projector_algebra(&[2, 8, 64], 1000, 1e-5, 7);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn v_information_matches_grid_search_oracle() {
    let start = Instant::now();
    check_v_information(20, 1e-3, 2024);
    assert!(start.elapsed().as_secs_f64() < 120.0);
}

#[test]
fn inlp_converges_and_composed_rank_is_d_minus_k() {
    let start = Instant::now();
    for (d, informative, seed) in [(8usize, 2usize, 1u64), (16, 5, 2), (32, 12, 3)] {
        let train = synthetic(600, d, informative, seed);
        let dev = synthetic(400, d, informative, seed + 100);
        check_inlp(&train, &dev);
    }
    assert!(start.elapsed().as_secs_f64() < 300.0);
}
