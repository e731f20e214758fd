mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use graphbench_core::adapter::protocol::{decode_line, encode_line};
use graphbench_core::adapter::{AdapterRequest, AdapterResponse};
use graphbench_core::agent::{remaining_tasks, Checkpoint};
use graphbench_core::blockgen::BlockKind;
use graphbench_core::config::{parse_plan, serialize_plan, ConfigError};
use graphbench_core::metrics::{
    aggregate, ase, bsr, bucket_aggregate, depth_scaling_fit, rtr, BatchBucket, DepthPoint, Pooling,
    ScalingSeries,
};
use graphbench_core::model::{expand_plan, make_task_id, parse_task_id, ModelSpec, ResultRecord};
use graphbench_core::wire::{decode_envelope, encode_envelope, Envelope, WireMessage};

use common::fake::measurement;
use common::oracle::{exact_mean, exact_variance, ols_slope, rel_close};
use common::plans::{random_plan, MUTATIONS, TEXT_MUTATIONS};
use num_traits::ToPrimitive;

fn model() -> impl Strategy<Value = ModelSpec> {
    prop_oneof![
        "[A-Za-z0-9 |%/_-]{1,12}".prop_map(ModelSpec::catalog),
        (prop::bool::ANY, 1u32..2048, 1u32..64).prop_map(|(mha, w, d)| {
            ModelSpec::block(if mha { BlockKind::Mha } else { BlockKind::Conv }, w, d)
        }),
    ]
}

fn series() -> impl Strategy<Value = Vec<(u32, f64)>> {
    prop::collection::btree_map(2u32..4096, 1e-3f64..1e6, 0..10).prop_flat_map(|rest| {
        (1e-3f64..1e6).prop_map(move |t1| {
            let mut v = vec![(1, t1)];
            v.extend(rest.iter().map(|(&b, &t)| (b, t)));
            v
        })
    })
}

proptest! {
    #[test]
    fn task_id_round_trips(device in "[ -~]{1,10}", compiler in "[ -~]{1,10}", m in model(), b in 1u32..100_000) {
        let id = make_task_id(&device, &compiler, &m, b);
        let coords = parse_task_id(&id).unwrap();
        prop_assert_eq!(coords.device_id, device);
        prop_assert_eq!(coords.compiler_id, compiler);
        prop_assert_eq!(coords.model_key, m.key());
        prop_assert_eq!(coords.batch_size, b);
        prop_assert_eq!(coords.model_digest, m.digest());
    }

    #[test]
    fn task_ids_are_injective(a in ("[a|%]{1,4}", "[a|%]{1,4}", 1u32..4), b in ("[a|%]{1,4}", "[a|%]{1,4}", 1u32..4)) {
        let m = ModelSpec::block(BlockKind::Conv, 8, 1);
        let ia = make_task_id(&a.0, &a.1, &m, a.2);
        let ib = make_task_id(&b.0, &b.1, &m, b.2);
        prop_assert_eq!(ia == ib, a == b);
    }

    #[test]
    fn metric_algebra(points in series(), k in 1e-3f64..1e3) {
        let s = ScalingSeries::from_pairs("c", &points).unwrap();
        let scaled = s.scaled(k);
        prop_assert_eq!(rtr(&s, 1).unwrap(), 1.0);
        prop_assert_eq!(ase(&s, 1).unwrap(), 1.0);
        for &(b, t) in &points {
            let r = rtr(&s, b).unwrap();
            let a = ase(&s, b).unwrap();
            prop_assert!(rel_close(a * f64::from(b), r, 1e-12));
            prop_assert!(rel_close(r, t / points[0].1, 1e-15));
            prop_assert_eq!(bsr(&s, &s, b).unwrap(), 1.0);
            prop_assert!(rel_close(rtr(&scaled, b).unwrap(), r, 1e-12));
            prop_assert!(rel_close(ase(&scaled, b).unwrap(), a, 1e-12));
            prop_assert!(rel_close(bsr(&scaled, &s, b).unwrap(), 1.0, 1e-12));
        }
    }

    #[test]
    fn aggregate_matches_exact_moments(xs in prop::collection::vec(1e-3f64..1e6, 1..50)) {
        let s = aggregate(&xs).unwrap();
        prop_assert_eq!(s.n, xs.len());
        prop_assert!(rel_close(s.mean, exact_mean(&xs).to_f64().unwrap(), 1e-12));
        if xs.len() == 1 {
            prop_assert_eq!(s.std, 0.0);
        } else {
            let var = exact_variance(&xs).to_f64().unwrap();
            prop_assert!((s.std * s.std - var).abs() <= 1e-9 * var.max(1e-12 * s.mean * s.mean));
        }
    }

    #[test]
    fn depth_fit_matches_exact_ols(
        depths in prop::collection::btree_set(2u32..200, 1..8),
        speedups in prop::collection::vec(1e-2f64..1e2, 9),
    ) {
        let points: Vec<(u32, f64)> =
            std::iter::once(1).chain(depths).zip(speedups).collect();
        let fit = depth_scaling_fit(
            &points.iter().map(|&(depth, speedup)| DepthPoint { depth, speedup }).collect::<Vec<_>>(),
        ).unwrap();
        prop_assert!(rel_close(fit.slope, ols_slope(&points), 1e-9), "{} vs {}", fit.slope, ols_slope(&points));
        let deepest = points.iter().max_by_key(|p| p.0).unwrap().1;
        prop_assert_eq!(fit.retention, deepest / points[0].1);
    }

    #[test]
    fn bucket_pooling_matches_brute_force(
        recs in prop::collection::vec((1u32..64, prop::collection::vec(1.0f64..1e4, 0..6), prop::option::of(0.0f64..100.0)), 1..20),
        cuts in prop::collection::btree_set(1u32..64, 1..6),
    ) {
        let records: Vec<ResultRecord> = recs.iter().enumerate().map(|(i, (b, samples, cpu))| {
            let mean = if samples.is_empty() { 50.0 + i as f64 } else { aggregate(samples).unwrap().mean };
            ResultRecord {
                task_id: format!("t{i}"),
                device_id: "d".into(),
                compiler_id: "c".into(),
                is_identity: false,
                model_key: "m".into(),
                batch_size: *b,
                throughput_mean: mean,
                throughput_std: 0.0,
                cpu_mean: *cpu,
                cpu_std: cpu.map(|_| 0.0),
                compile_time_s: 0.0,
                throughput_samples: samples.clone(),
                cpu_samples: cpu.map(|c| vec![c, 100.0 - c]).unwrap_or_default(),
            }
        }).collect();
        let cuts: Vec<u32> = cuts.into_iter().collect();
        let mut buckets = Vec::new();
        let mut lo = 1;
        for &c in &cuts {
            if c >= lo {
                buckets.push(BatchBucket::new(lo, c));
                lo = c + 1;
            }
        }
        let refs: Vec<&ResultRecord> = records.iter().collect();
        for pooling in [Pooling::FlattenSamples, Pooling::RecordMeans] {
            let got = bucket_aggregate(&refs, &buckets, pooling).unwrap();
            prop_assert_eq!(got.len(), buckets.len());
            for (bucket, stats) in got {
                let members: Vec<&ResultRecord> =
                    records.iter().filter(|r| r.batch_size >= bucket.lo && r.batch_size <= bucket.hi).collect();
                let Some(stats) = stats else {
                    prop_assert!(members.is_empty());
                    continue;
                };
                prop_assert_eq!(stats.records, members.len());
                let values: Vec<f64> = match pooling {
                    Pooling::FlattenSamples => members.iter().flat_map(|r| {
                        if r.throughput_samples.is_empty() { vec![r.throughput_mean] } else { r.throughput_samples.clone() }
                    }).collect(),
                    Pooling::RecordMeans => members.iter().map(|r| r.throughput_mean).collect(),
                };
                prop_assert_eq!(stats.throughput.n, values.len());
                prop_assert!(rel_close(stats.throughput.mean, exact_mean(&values).to_f64().unwrap(), 1e-12));
            }
            let overlapping = [BatchBucket::new(1, 4), BatchBucket::new(4, 8)];
            prop_assert!(bucket_aggregate(&refs, &overlapping, pooling).is_err());
        }
    }

    #[test]
    fn adapter_messages_round_trip(m in model(), compiler in "[ -~]{0,12}", b in 1u32..1024, reps in 1u32..1000,
                                   samples in prop::collection::vec(1e-6f64..1e9, 0..20), code in "[a-z_]{1,12}") {
        let requests = [
            AdapterRequest::Init { model: m, compiler_id: compiler.clone(), flags: [(compiler.clone(), "v".into())].into(), batch_size: b },
            AdapterRequest::Bench { repetitions: reps, warmup: b, samples_per_repetition: 1 },
            AdapterRequest::Shutdown,
        ];
        for r in &requests {
            let line = encode_line(r);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(&decode_line::<AdapterRequest>(&line).unwrap(), r);
        }
        let responses = [
            AdapterResponse::Hello { protocol: reps },
            AdapterResponse::InitOk { compile_time_s: samples.first().copied().unwrap_or(0.0) },
            AdapterResponse::BenchOk { throughput_samples: samples },
            AdapterResponse::error(code, compiler),
            AdapterResponse::Bye,
        ];
        for r in &responses {
            let line = encode_line(r);
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(&decode_line::<AdapterResponse>(&format!("{line}\r\n")).unwrap(), r);
        }
    }

    #[test]
    fn wire_envelopes_round_trip(seed in any::<u64>(), seq in 1u64..u64::MAX, reason in "[ -~]{0,20}") {
        let plan = random_plan(&mut ChaCha8Rng::seed_from_u64(seed));
        let tasks: Vec<String> = expand_plan(&plan).into_iter().map(|t| t.task_id).collect();
        let bodies = vec![
            WireMessage::Hello { agent_version: reason.clone(), protocol: 1 },
            WireMessage::DeployPlan { plan: plan.clone(), tasks: tasks.clone() },
            WireMessage::Progress { completed: 1, total: tasks.len(), current: tasks.first().cloned() },
            WireMessage::ResultsUpload {
                measurements: tasks.iter().take(3).map(|t| measurement(&plan, t)).collect(),
                failures: vec![],
                final_upload: seq % 2 == 0,
            },
            WireMessage::Teardown,
            WireMessage::Ack,
            WireMessage::Nack { reason },
        ];
        for body in bodies {
            let env = Envelope { plan_id: plan.plan_id.clone(), seq, body };
            prop_assert_eq!(decode_envelope(&encode_envelope(&env)).unwrap(), env);
        }
    }

    #[test]
    fn resume_is_set_difference(mask in prop::collection::vec(prop::bool::ANY, 48), failed in prop::collection::vec(prop::bool::ANY, 48)) {
        let addrs = ["127.0.0.1:1".parse().unwrap(), "127.0.0.1:2".parse().unwrap()];
        let plan = common::plan_48(&addrs);
        let tasks = expand_plan(&plan);
        prop_assert_eq!(tasks.len(), 48);
        let mut cp = Checkpoint::empty(&plan.plan_id, &tasks);
        for (i, t) in tasks.iter().enumerate() {
            if mask[i] {
                cp.completed.insert(t.task_id.clone(), measurement(&plan, &t.task_id));
            } else if failed[i] {
                cp.failed.insert(t.task_id.clone(), "earlier failure".into());
            }
        }
        let remaining: Vec<String> =
            remaining_tasks(&plan.plan_id, &tasks, &cp).unwrap().into_iter().map(|t| t.task_id).collect();
        let expected: Vec<String> =
            tasks.iter().enumerate().filter(|(i, _)| !mask[*i]).map(|(_, t)| t.task_id.clone()).collect();
        prop_assert_eq!(&remaining, &expected);
        let done: BTreeSet<&String> = cp.completed.keys().collect();
        prop_assert!(remaining.iter().all(|id| !done.contains(id)));
        prop_assert_eq!(remaining.len() + done.len(), 48);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn config_round_trips(seed in any::<u64>()) {
        let plan = random_plan(&mut ChaCha8Rng::seed_from_u64(seed));
        plan.validate().unwrap();
        let text = serialize_plan(&plan);
        let back = parse_plan(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(serialize_plan(&back), text);
    }

    #[test]
    fn config_mutations_are_rejected(seed in any::<u64>(), which in 0..MUTATIONS.len() + TEXT_MUTATIONS.len()) {
        let mut plan = random_plan(&mut ChaCha8Rng::seed_from_u64(seed));
        let (name, text, path) = if let Some(m) = MUTATIONS.get(which) {
            let path = (m.apply)(&mut plan);
            (m.name, serialize_plan(&plan), path)
        } else {
            let m = &TEXT_MUTATIONS[which - MUTATIONS.len()];
            let serde_yaml::Value::Mapping(mut doc) = serde_yaml::from_str(&serialize_plan(&plan)).unwrap() else {
                unreachable!()
            };
            let path = (m.apply)(&mut doc);
            (m.name, serde_yaml::to_string(&doc).unwrap(), path.to_string())
        };
        match parse_plan(&text) {
            Err(ConfigError::Validation(v)) => prop_assert!(v.mentions(&path), "{name}: expected {path}, got {v}"),
            other => prop_assert!(false, "{name}: expected a violation at {path}, got {other:?}"),
        }
    }
}
