use proptest::prelude::*;

use tsa_core::dataset::{build_dataset, enumerate_scenarios, split_dataset, BuildConfig, GridConfig, FLAG_NON_MONOTONE};
use tsa_core::grid::{Adjacency, Network};
use tsa_core::monitor::{offline_events, Decision, MonitorEvent};
use tsa_core::nn::Model;
use tsa_core::tds::{simulate, solve_equilibrium};
use tsa_core::train::{train, TrainConfig};

#[test]
fn desk_grid_build() {
    let net = Network::new_england_39();
    let cfg = BuildConfig::new(GridConfig::desk(), &net, 0);
    let out = build_dataset(&net, &cfg).unwrap();
    let ds = &out.dataset;
    assert_eq!(ds.len(), 90);
    assert!(out.failures.is_empty());
    let m = &out.manifest;
    assert_eq!(m.get_usize("samples"), Some(90));
    assert_eq!(m.get_usize("tas_stable").unwrap() + m.get_usize("tas_unstable").unwrap(), 90);
    assert_eq!(m.get_usize("tvs_stable").unwrap() + m.get_usize("tvs_unstable").unwrap(), 90);

    for s in &ds.samples {
        assert_eq!(s.adjacency, Adjacency::for_network(&net, Some(s.scenario.line)));
        assert_eq!(s.features.values.len(), 39 * 40);
        assert!(s.features.values.iter().all(|v| v.is_finite()));
        assert!((-1.0..=1.0).contains(&s.labels.tas_target));
        if !s.labels.has(FLAG_NON_MONOTONE) {
            assert_eq!(s.labels.tas_stable, s.labels.tas_target >= 0.0, "{:?}", s.scenario);
        }
    }

    let unstable_at = |c: u32| ds.samples.iter().filter(|s| s.scenario.clearing_cycles == c && !s.labels.tas_stable).count();
    assert!(unstable_at(11) > unstable_at(3), "{} vs {}", unstable_at(11), unstable_at(3));

    // Monotonicity spot check; violations are tolerated but must be rare and flagged.
    let mut violations = 0;
    for group in ds.samples.chunks(5) {
        for w in group.windows(2) {
            if !w[0].labels.tas_stable && w[1].labels.tas_stable {
                violations += 1;
            }
        }
    }
    assert!(violations <= 2, "{violations} non-monotone clearing pairs");

    replay_decisions(&net, ds);
}

fn scenario_events(net: &Network, model: &Model, s: &tsa_core::dataset::Sample) -> Vec<MonitorEvent> {
    let eq = solve_equilibrium(net, s.scenario.motor_fraction).unwrap();
    let trace = simulate(net, &s.scenario.scenario(), &eq).unwrap();
    offline_events(model, net, &trace, Some(s.scenario.line), 20).unwrap()
}

/// Replays of training scenarios through a model trained on the desk set.
fn replay_decisions(net: &Network, ds: &tsa_core::dataset::Dataset) {
    let split = ds.split(0).unwrap();
    let model = train(ds, &split, &TrainConfig::default()).unwrap().model;
    let train_samples = || split.train_ids.iter().map(|&i| &ds.samples[i]);
    let stable = train_samples()
        .filter(|s| s.labels.tas_stable && s.labels.tvs_stable)
        .max_by(|a, b| {
            let m = |s: &&tsa_core::dataset::Sample| s.labels.tas_target.min(s.labels.tvs_target);
            m(a).total_cmp(&m(b))
        })
        .unwrap();
    let events = scenario_events(net, &model, stable);
    // The model only sees inception windows during training.
    let ev = &events[100];
    assert_eq!(ev.timestamp, 1.19);
    assert_eq!((ev.tas_decision, ev.tvs_decision), (Decision::Stable, Decision::Stable), "{:?}", stable.scenario);
    assert!(ev.tas_value > 0.0 && ev.tvs_value > 0.0, "{ev:?}");

    let unstable = train_samples()
        .filter(|s| !s.labels.tas_stable)
        .min_by(|a, b| a.labels.tas_target.total_cmp(&b.labels.tas_target))
        .unwrap();
    let events = scenario_events(net, &model, unstable);
    assert!(events.iter().any(|e| e.tas_decision == Decision::Unstable), "{:?}", unstable.scenario);
}

#[test]
fn rebuild_is_byte_identical() {
    let net = Network::new_england_39();
    let grid = GridConfig {
        lines: vec![16, 34],
        location_fractions: vec![0.5],
        motor_fractions: vec![0.6],
        clearing_cycles: vec![3, 9],
        window_steps: 20,
    };
    let cfg = BuildConfig::new(grid, &net, 4);
    let a = build_dataset(&net, &cfg).unwrap();
    let b = build_dataset(&net, &cfg).unwrap();
    assert_eq!(a.dataset.to_bytes().unwrap(), b.dataset.to_bytes().unwrap());
    assert_eq!(a.manifest.to_text(), b.manifest.to_text());
    assert_eq!(a.dataset.samples.iter().map(|s| s.scenario.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn split_of_paper_scale() {
    let classes: Vec<(bool, bool)> = (0..4590).map(|i| (i % 3 != 0, i % 5 != 0)).collect();
    let s = split_dataset(&classes, 9).unwrap();
    assert_eq!((s.train_ids.len(), s.val_ids.len(), s.test_ids.len()), (3213, 459, 918));
    for class in [(true, true), (true, false), (false, true), (false, false)] {
        let global = classes.iter().filter(|&&c| c == class).count() as f64 / 4590.0;
        let train = s.train_ids.iter().filter(|&&i| classes[i] == class).count() as f64 / 3213.0;
        assert!((train - global).abs() <= 0.02);
    }
}

proptest! {
    #[test]
    fn enumeration_length_is_product(
        lines in proptest::collection::vec(0usize..46, 1..5),
        locs in proptest::collection::vec(0.05f64..0.95, 1..4),
        shares in proptest::collection::vec(0.0f64..1.0, 1..4),
        cycles in proptest::collection::vec(1u32..20, 1..6),
    ) {
        let cfg = GridConfig {
            lines: lines.clone(),
            location_fractions: locs.clone(),
            motor_fractions: shares.clone(),
            clearing_cycles: cycles.clone(),
            window_steps: 20,
        };
        let sc = enumerate_scenarios(&cfg);
        prop_assert_eq!(sc.len(), lines.len() * locs.len() * shares.len() * cycles.len());
        prop_assert!(sc.iter().enumerate().all(|(i, s)| s.id == i));
    }
}
