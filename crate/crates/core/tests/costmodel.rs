mod common;

use common::*;
use mpq::costmodel::*;
use mpq::quantizer::{LayerBits, QuantConfig};
use proptest::prelude::*;

fn desk_model() -> mpq::ModelGraph {
    random_model(&mut rng(4), &[12, 20, 16, 16, 10], None)
}

proptest! {
    #[test]
    fn frontier_matches_pairwise_dominance(
        pts in prop::collection::vec((0u8..20, 0u8..20), 1..100)
    ) {
        // Coarse values so that ties and duplicates are common.
        let points: Vec<(f64, f64)> = pts.iter().map(|&(a, l)| (a as f64 / 20.0, l as f64 + 1.0)).collect();
        let front = pareto_frontier(&points);
        prop_assert_eq!(&front, &pareto_oracle(&points));
        prop_assert_eq!(pareto_frontier(&front), front);
    }

    #[test]
    fn lowering_bits_never_raises_latency(
        choice in prop::collection::vec(0usize..3, 4),
        layer in 0usize..4,
        c in 1e-4f64..1.0,
    ) {
        let m = desk_model();
        let table = synth_cost_table(&m, &[16, 8, 4], c).unwrap();
        let palette = [16u8, 8, 4];
        let bits: Vec<u8> = choice.iter().map(|&i| palette[i]).collect();
        let before = model_latency(&m, &QuantConfig::from_bits(&m, &bits).unwrap(), &table).unwrap();
        let mut lower = bits.clone();
        lower[layer] = palette[(choice[layer] + 1).min(2)];
        let after = model_latency(&m, &QuantConfig::from_bits(&m, &lower).unwrap(), &table).unwrap();
        prop_assert!(after <= before);
        let lo = model_latency(&m, &QuantConfig::uniform(&m, 4), &table).unwrap();
        let hi = model_latency(&m, &QuantConfig::baseline(&m), &table).unwrap();
        prop_assert!(lo <= before && before <= hi);
    }
}

#[test]
fn size_is_linear_in_bits() {
    let m = desk_model();
    let weights: u64 = m.weighted_ids().iter().map(|id| m.layer_weights(id).unwrap().len() as u64).sum();
    let s16 = model_size(&m, &QuantConfig::baseline(&m)).unwrap();
    let s8 = model_size(&m, &QuantConfig::uniform(&m, 8)).unwrap();
    assert_eq!(s16.weight_bytes(), (weights * 2) as f64);
    assert_eq!(s8.weight_bytes() * 2.0, s16.weight_bytes());
    assert_eq!(s8.weight_bytes() / s16.weight_bytes(), 0.5);
}

#[test]
fn all_eight_bit_latency_is_half_of_baseline_without_overhead() {
    let m = desk_model();
    let table = synth_cost_table(&m, &[16, 8, 4], 0.01).unwrap();
    let l16 = model_latency(&m, &QuantConfig::baseline(&m), &table).unwrap();
    let l8 = model_latency(&m, &QuantConfig::uniform(&m, 8), &table).unwrap();
    let overhead = SYNTH_OVERHEAD_US * m.weighted_count() as f64;
    assert!(((l8 - overhead) * 2.0 - (l16 - overhead)).abs() < 1e-9);
}

#[test]
fn synthetic_table_round_trips_and_is_monotone() {
    let m = desk_model();
    let table = synth_cost_table(&m, &[16, 8, 4], 0.0123).unwrap();
    assert!(table.monotonicity_violations().is_empty());
    let back = CostTable::from_csv(&table.to_csv()).unwrap();
    assert_eq!(back, table);
    assert_eq!(back.to_csv(), table.to_csv());
}

#[test]
fn missing_kernels_are_reported_not_interpolated() {
    let m = desk_model();
    let table = synth_cost_table(&m, &[16, 8], 0.01).unwrap();
    let mut config = QuantConfig::baseline(&m);
    config.set("fc2", LayerBits::uniform(4));
    let err = model_latency(&m, &config, &table).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("gemm"), "{err}");
}

#[test]
fn report_relatives_follow_the_baseline() {
    let m = desk_model();
    let table = synth_cost_table(&m, &[16, 8, 4], 0.01).unwrap();
    let mut report = CostReport::new(&m, &table, 0.8).unwrap();
    report.add(&m, &table, &QuantConfig::baseline(&m), 0.8, (Some(1.0), None, None)).unwrap();
    report.add(&m, &table, &QuantConfig::uniform(&m, 8), 0.79, (Some(0.99), None, None)).unwrap();
    let (base, eight) = (&report.configs[0], &report.configs[1]);
    assert_eq!((base.accuracy_rel, base.weight_rel, base.latency_rel), (1.0, 1.0, 1.0));
    assert_eq!(eight.weight_rel, 0.5);
    assert!(report.to_markdown().contains("| 50.00% |"));
}
