use std::collections::BTreeSet;

use proptest::prelude::*;
use trainplan_core::batch::plan_batch_size;
use trainplan_core::catalog::{AlgorithmCatalog, CostEntry};
use trainplan_core::memory::{
    classifier_memory, feature_map_memory, memory_bound, model_param_memory,
};
use trainplan_core::network::{
    propagate_shapes, ClassifierLayerSpec, FeatureLayerSpec, LayerKind, NetworkSpec, TensorShape,
};
use trainplan_core::scale::{
    efficiency, masks_io, max_overhead_ratio, min_parameter_servers, scaling_estimate, ClusterSpec,
};
use trainplan_core::select::{brute_force_selection, solve_selection, SelectError};

fn feature_layer() -> impl Strategy<Value = FeatureLayerSpec> {
    (any::<bool>(), 1u64..6, 1u64..4, 0u64..3, 1u64..64).prop_map(|(conv, f, s, p, k)| {
        if conv {
            FeatureLayerSpec::conv(f, s, p, k)
        } else {
            FeatureLayerSpec::pool(f, s, p)
        }
    })
}

/// Random networks whose shape chain never collapses.
fn network() -> impl Strategy<Value = NetworkSpec> {
    (
        (8u64..96, 8u64..96, 1u64..8),
        prop::collection::vec(feature_layer(), 1..6),
        prop::collection::vec(1u64..512, 1..4),
    )
        .prop_filter_map("shape collapse", |((w, h, d), layers, fc)| {
            let net = NetworkSpec::new(
                TensorShape::new(w, h, d),
                layers,
                fc.into_iter()
                    .map(|neuron_count| ClassifierLayerSpec { neuron_count })
                    .collect(),
            );
            propagate_shapes(&net).is_ok().then_some(net)
        })
}

proptest! {
    #[test]
    fn pointwise_conv_preserves_extent(w in 1u64..500, h in 1u64..500, d in 1u64..64) {
        let input = TensorShape::new(w, h, d);
        let out = FeatureLayerSpec::conv(1, 1, 0, d).output_shape(input).unwrap();
        prop_assert_eq!(out, input);
    }

    #[test]
    fn more_padding_never_shrinks(net in network(), idx in 0usize..6) {
        let shapes = propagate_shapes(&net).unwrap();
        let i = idx % net.feature_layers.len();
        let mut layer = net.feature_layers[i];
        let before = layer.output_shape(shapes[i]).unwrap();
        layer.padding += 1;
        let after = layer.output_shape(shapes[i]).unwrap();
        prop_assert!(after.width >= before.width && after.height >= before.height);
    }

    #[test]
    fn shapes_are_deterministic_and_pooling_keeps_depth(net in network()) {
        let a = propagate_shapes(&net).unwrap();
        prop_assert_eq!(&a, &propagate_shapes(&net).unwrap());
        prop_assert_eq!(a.len(), net.feature_layers.len() + 1);
        for (i, layer) in net.feature_layers.iter().enumerate() {
            prop_assert!(a[i + 1].is_valid());
            match layer.kind {
                LayerKind::Pooling => prop_assert_eq!(a[i + 1].depth, a[i].depth),
                LayerKind::Convolution => prop_assert_eq!(a[i + 1].depth, layer.filter_count),
            }
        }
        prop_assert!(net.validate().is_empty());
    }

    #[test]
    fn feature_maps_linear_in_batch(net in network(), k in 1u64..4096) {
        let shapes = propagate_shapes(&net).unwrap();
        prop_assert_eq!(
            feature_map_memory(&shapes, 2 * k).unwrap(),
            2 * feature_map_memory(&shapes, k).unwrap()
        );
    }

    #[test]
    fn bound_decreases_with_batch(net in network(), k in 1u64..4096) {
        let gpu = 12u128 << 33;
        let a = memory_bound(gpu, &net, k).unwrap();
        let b = memory_bound(gpu, &net, k + 1).unwrap();
        prop_assert!(b.bound < a.bound);
        prop_assert_eq!(a.model_params, b.model_params);
        prop_assert_eq!(a.classifier, b.classifier);
        prop_assert_eq!(a.model_params, model_param_memory(&net).unwrap());
        prop_assert_eq!(a.classifier, classifier_memory(&net.classifier_layers).unwrap());
        prop_assert_eq!(
            a.bound,
            gpu as i128 - a.feature_maps as i128 - a.model_params as i128 - a.classifier as i128
        );
    }
}

/// Catalog with `layers` layers, algorithms a/b/c (first `algos` of them)
/// at batch size 1.
fn instance() -> impl Strategy<Value = (AlgorithmCatalog, i128)> {
    (1usize..7, 1usize..4)
        .prop_flat_map(|(layers, algos)| {
            (
                prop::collection::vec((1u32..40, 0u32..100), layers * algos),
                Just(layers),
                Just(algos),
                -50i128..600,
            )
        })
        .prop_map(|(costs, layers, algos, bound)| {
            let names = ["a", "b", "c"];
            let entries = costs
                .iter()
                .enumerate()
                .map(|(i, &(t, m))| {
                    CostEntry::new(
                        (i / algos) as u32 + 1,
                        names[i % algos],
                        1,
                        t as f64 * 0.25,
                        m as u128,
                    )
                    .unwrap()
                })
                .collect();
            let _ = layers;
            (AlgorithmCatalog::from_entries(entries).unwrap(), bound)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn solver_matches_enumeration((cat, bound) in instance()) {
        let fast = solve_selection(&cat, 1, bound);
        let brute = brute_force_selection(&cat, 1, bound);
        match (&fast, &brute) {
            (Ok(f), Ok(b)) => {
                prop_assert_eq!(f.total_time, b.total_time);
                prop_assert!(f.total_memory as i128 <= bound);
                prop_assert_eq!(f.assignment.len(), cat.layer_count() as usize);
                prop_assert_eq!(f.recompute(&cat, 1), Some((f.total_time, f.total_memory)));
                // ties broken identically as well
                prop_assert_eq!(f, b);
            }
            (Err(SelectError::Infeasible { min_memory: a, .. }),
             Err(SelectError::Infeasible { min_memory: b, .. })) => {
                prop_assert_eq!(a, b);
                prop_assert!(*a as i128 > bound);
            }
            _ => prop_assert!(false, "solver {:?} vs enumeration {:?}", fast, brute),
        }
    }

    #[test]
    fn relaxing_bound_never_slows((cat, bound) in instance(), extra in 0i128..200) {
        if let Ok(tight) = solve_selection(&cat, 1, bound) {
            let loose = solve_selection(&cat, 1, bound + extra).unwrap();
            prop_assert!(loose.total_time <= tight.total_time);
        }
    }

    #[test]
    fn catalog_round_trips((cat, _) in instance()) {
        let mut csv = Vec::new();
        cat.write_csv(&mut csv).unwrap();
        prop_assert_eq!(&AlgorithmCatalog::from_csv(csv.as_slice()).unwrap(), &cat);
        let mut json = Vec::new();
        cat.write_json(&mut json).unwrap();
        prop_assert_eq!(&AlgorithmCatalog::from_json(json.as_slice()).unwrap(), &cat);
    }
}

fn toy_net() -> NetworkSpec {
    NetworkSpec::new(
        TensorShape::new(4, 4, 1),
        vec![
            FeatureLayerSpec::conv(3, 1, 1, 2),
            FeatureLayerSpec::conv(3, 1, 1, 2),
        ],
        vec![ClassifierLayerSpec { neuron_count: 4 }],
    )
}

/// Two-layer catalog over batch sizes 1..=5 whose memory never shrinks
/// with the batch size.
fn sweep() -> impl Strategy<Value = (AlgorithmCatalog, u128)> {
    (
        prop::collection::vec((1u32..20, 1u32..20, 0u32..2000, 0u32..2000), 5 * 2),
        0u128..20000,
    )
        .prop_map(|(raw, gpu_extra)| {
            let mut entries = Vec::new();
            for layer in 0..2u32 {
                let mut mem_g = 0u128;
                let mut mem_f = 0u128;
                for b in 0..5u64 {
                    let (tg, tf, mg, mf) = raw[(layer as usize) * 5 + b as usize];
                    mem_g += mg as u128;
                    mem_f += mf as u128;
                    entries.push(
                        CostEntry::new(layer + 1, "gemm", b + 1, tg as f64 * 0.01, mem_g).unwrap(),
                    );
                    entries.push(
                        CostEntry::new(layer + 1, "fft", b + 1, tf as f64 * 0.01, mem_f).unwrap(),
                    );
                }
            }
            // fixed charge of the toy net is 2176 bits plus 1536 per sample
            (AlgorithmCatalog::from_entries(entries).unwrap(), 2176 + gpu_extra)
        })
}

proptest! {
    #[test]
    fn recommendation_is_minimal_and_stable((cat, gpu) in sweep(), dataset in 1u64..100) {
        let candidates = [1, 2, 3, 4, 5];
        let plan = plan_batch_size(&toy_net(), &cat, gpu, dataset, &candidates).unwrap();
        let feasible: Vec<_> = plan.candidates.iter().filter(|c| c.epoch_time().is_some()).collect();
        prop_assert_eq!(plan.recommended.is_none(), feasible.is_empty());

        if let Some(rec) = plan.recommended_result() {
            let best = rec.epoch_time().unwrap();
            for c in &feasible {
                prop_assert!(best <= c.epoch_time().unwrap());
            }
            // dropping any other candidate keeps the recommendation
            for drop in candidates.iter().filter(|&&b| b != rec.batch_size) {
                let rest: Vec<u64> = candidates.iter().copied().filter(|b| b != drop).collect();
                let again = plan_batch_size(&toy_net(), &cat, gpu, dataset, &rest).unwrap();
                prop_assert_eq!(again.recommended, plan.recommended);
            }
        }

        // infeasibility propagates upward when memory is monotone
        let infeasible: BTreeSet<u64> = plan
            .candidates
            .iter()
            .filter(|c| c.epoch_time().is_none())
            .map(|c| c.batch_size)
            .collect();
        if let Some(&first) = infeasible.iter().next() {
            prop_assert!((first..=5).all(|b| infeasible.contains(&b)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn efficiency_monotone(g in 2u32..128, r in 0.001f64..5.0) {
        let a = efficiency(g, r).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(efficiency(g + 1, r).unwrap() < a);
        prop_assert!(efficiency(g, r * 1.5).unwrap() < a);
        let s = scaling_estimate(g, r).unwrap();
        prop_assert!(scaling_estimate(g + 1, r).unwrap().speedup > s.speedup);
        prop_assert!(s.speedup <= g as f64);
        prop_assert!(s.speedup < 1.0 + 1.0 / r);
    }

    #[test]
    fn overhead_round_trip(g in 2u32..65, r in 1e-6f64..=2.0) {
        let back = max_overhead_ratio(g, efficiency(g, r).unwrap()).unwrap();
        prop_assert!(((back - r) / r).abs() <= 1e-12, "g={} r={} back={}", g, r, back);
    }

    #[test]
    fn parameter_servers_minimal_and_monotone(
        s in 1e3f64..1e10,
        nw in 1u64..256,
        bw in 1e6f64..1e11,
        tc in 1e-3f64..100.0,
    ) {
        let spec = ClusterSpec { worker_count: nw, param_size_bytes: s, bandwidth_bytes_per_sec: bw, gpu_count: 1 };
        prop_assume!(2.0 * s * nw as f64 / (bw * tc) < 1e9);
        let n = min_parameter_servers(&spec, tc).unwrap();
        prop_assert!(n >= 1);
        prop_assert!(masks_io(&spec, tc, n));
        if n >= 2 {
            prop_assert!(!masks_io(&spec, tc, n - 1));
        }
        let doubled = ClusterSpec { worker_count: 2 * nw, ..spec };
        let n2 = min_parameter_servers(&doubled, tc).unwrap();
        prop_assert!(n2 >= n && n2 <= 2 * n);
        let bigger = ClusterSpec { param_size_bytes: s * 1.7, ..spec };
        prop_assert!(min_parameter_servers(&bigger, tc).unwrap() >= n);
        let faster = ClusterSpec { bandwidth_bytes_per_sec: bw * 1.7, ..spec };
        prop_assert!(min_parameter_servers(&faster, tc).unwrap() <= n);
        prop_assert!(min_parameter_servers(&spec, tc * 1.7).unwrap() <= n);
    }
}
