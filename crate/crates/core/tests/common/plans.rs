//! Random valid plans and invariant-breaking mutations of them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_yaml::{Mapping, Value};

use graphbench_core::blockgen::BlockKind;
use graphbench_core::model::{
    AdapterTimeouts, CompilerSpec, DeviceSpec, ExperimentPlan, ModelSpec, ModelVariant, Scalar,
};

const WORDS: [&str; 10] = ["orin", "rpi", "tx2", "x86", "edge", "node", "gpu", "npu", "arm", "box"];
const CATALOG: [&str; 6] = ["ResNet-18", "ResNet-50", "MobileNetV2", "ViT-B/16", "BERT-base", "SqueezeNet"];

fn ident<R: Rng>(rng: &mut R) -> String {
    let word = WORDS.choose(rng).unwrap();
    match rng.gen_range(0..4) {
        0 => format!("{word}-{}", rng.gen_range(0..100)),
        1 => format!("{word}_{word}"),
        2 => format!("{word}.{}", rng.gen_range(0..10)),
        _ => word.to_string(),
    }
}

/// Free-form names with characters that stress quoting and id escaping.
fn name<R: Rng>(rng: &mut R) -> String {
    let odd = ["a|b", "50%", "yes", "null", "1.5", "x: y", "tvm", "onnx rt", "#tag", "'q'"];
    if rng.gen_bool(0.3) {
        odd.choose(rng).unwrap().to_string()
    } else {
        ident(rng)
    }
}

fn scalar<R: Rng>(rng: &mut R) -> Scalar {
    match rng.gen_range(0..4) {
        0 => Scalar::Bool(rng.gen()),
        1 => Scalar::Int(rng.gen_range(-1_000_000..1_000_000)),
        2 => Scalar::Float(rng.gen_range(-1e6..1e6)),
        _ => Scalar::Str(name(rng)),
    }
}

fn flags<R: Rng>(rng: &mut R) -> BTreeMap<String, String> {
    (0..rng.gen_range(0..3)).map(|_| (name(rng), name(rng))).collect()
}

pub fn random_plan<R: Rng>(rng: &mut R) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(ident(rng));
    let identity = if rng.gen_bool(0.5) { "identity".to_string() } else { format!("eager-{}", rng.gen_range(0..9)) };
    for i in 0..rng.gen_range(1..4) {
        let id = format!("{}{i}", name(rng));
        let host = if rng.gen_bool(0.2) { "[::1]".to_string() } else { format!("10.0.0.{}", rng.gen_range(1..255)) };
        let labels = (0..rng.gen_range(0..3)).map(|_| (ident(rng), name(rng))).collect();
        plan.devices.push(DeviceSpec { id: id.clone(), address: format!("{host}:{}", rng.gen_range(1..65535)), labels });
        let mut compilers = vec![CompilerSpec { flags: flags(rng), ..CompilerSpec::identity(identity.clone()) }];
        for j in 0..rng.gen_range(0..3) {
            compilers.push(CompilerSpec { flags: flags(rng), ..CompilerSpec::new(format!("{}{j}", name(rng))) });
        }
        compilers.shuffle(rng);
        plan.compilers.insert(id, compilers);
    }
    let mut names: Vec<&str> = CATALOG.to_vec();
    names.shuffle(rng);
    for n in names.iter().take(rng.gen_range(0..3)) {
        plan.models.push(ModelSpec::catalog(*n));
    }
    for d in 1..=rng.gen_range(1..4u32) {
        let kind = if rng.gen_bool(0.5) { BlockKind::Conv } else { BlockKind::Mha };
        let width = [16, 64, 128, 256, 512][rng.gen_range(0..5)];
        let mut m = ModelSpec::block(kind, width, d * rng.gen_range(1..4) + (d - 1) * 10);
        if rng.gen_bool(0.3) {
            m.input_shape = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..512)).collect();
        }
        m.init_params = (0..rng.gen_range(0..3)).map(|_| (ident(rng), scalar(rng))).collect();
        plan.models.push(m);
    }
    plan.models.shuffle(rng);
    plan.scaling_metrics = rng.gen_bool(0.8);
    let mut b = if plan.scaling_metrics || rng.gen_bool(0.5) { 1 } else { rng.gen_range(2..5) };
    plan.batch_sizes = vec![b];
    for _ in 0..rng.gen_range(0..6) {
        b += rng.gen_range(1..b + 2);
        plan.batch_sizes.push(b);
    }
    plan.repetitions = rng.gen_range(1..500);
    plan.warmup = rng.gen_range(0..50);
    plan.checkpoint_every = rng.gen_range(1..20);
    plan.cpu_sample_interval_ms = rng.gen_range(1..2000);
    plan.timeouts = AdapterTimeouts { init_s: rng.gen_range(1..100_000), bench_s: rng.gen_range(1..10_000) };
    plan
}

/// A way to break one plan invariant, with the field path the diagnostic
/// must name.
pub struct Mutation {
    pub name: &'static str,
    pub apply: fn(&mut ExperimentPlan) -> String,
}

fn first_device(plan: &ExperimentPlan) -> String {
    plan.devices[0].id.clone()
}

pub const MUTATIONS: &[Mutation] = &[
    Mutation { name: "empty plan id", apply: |p| {
        p.plan_id.clear();
        "plan_id".into()
    } },
    Mutation { name: "bad plan id", apply: |p| {
        p.plan_id.push_str("/..");
        "plan_id".into()
    } },
    Mutation { name: "zero batch size", apply: |p| {
        p.batch_sizes.insert(0, 0);
        "batch_sizes[0]".into()
    } },
    Mutation { name: "unsorted batch sizes", apply: |p| {
        let last = *p.batch_sizes.last().unwrap();
        p.batch_sizes.push(last);
        "batch_sizes".into()
    } },
    Mutation { name: "no batch sizes", apply: |p| {
        p.batch_sizes.clear();
        "batch_sizes".into()
    } },
    Mutation { name: "scaling without batch 1", apply: |p| {
        p.scaling_metrics = true;
        p.batch_sizes.retain(|&b| b != 1);
        if p.batch_sizes.is_empty() {
            p.batch_sizes.push(2);
        }
        "batch_sizes".into()
    } },
    Mutation { name: "zero repetitions", apply: |p| {
        p.repetitions = 0;
        "repetitions".into()
    } },
    Mutation { name: "zero checkpoint interval", apply: |p| {
        p.checkpoint_every = 0;
        "checkpoint_every".into()
    } },
    Mutation { name: "zero cpu interval", apply: |p| {
        p.cpu_sample_interval_ms = 0;
        "cpu_sample_interval_ms".into()
    } },
    Mutation { name: "zero init timeout", apply: |p| {
        p.timeouts.init_s = 0;
        "timeouts.init_s".into()
    } },
    Mutation { name: "zero bench timeout", apply: |p| {
        p.timeouts.bench_s = 0;
        "timeouts.bench_s".into()
    } },
    Mutation { name: "duplicate device", apply: |p| {
        let d = p.devices[0].clone();
        p.devices.push(d);
        format!("devices[{}].id", p.devices.len() - 1)
    } },
    Mutation { name: "empty device id", apply: |p| {
        let mut d = p.devices[0].clone();
        d.id.clear();
        p.devices.push(d);
        format!("devices[{}].id", p.devices.len() - 1)
    } },
    Mutation { name: "bad address", apply: |p| {
        p.devices[0].address = "no-port".into();
        "devices[0].address".into()
    } },
    Mutation { name: "compilers for unknown device", apply: |p| {
        let list = p.compilers.values().next().unwrap().clone();
        p.compilers.insert("ghost-device".into(), list);
        "compilers.ghost-device".into()
    } },
    Mutation { name: "no identity", apply: |p| {
        for c in p.compilers.values_mut().flatten() {
            c.identity = false;
        }
        "compilers".into()
    } },
    Mutation { name: "two identities", apply: |p| {
        let d = first_device(p);
        p.compilers.get_mut(&d).unwrap().push(CompilerSpec::identity("second-baseline"));
        "compilers".into()
    } },
    Mutation { name: "duplicate compiler", apply: |p| {
        let d = first_device(p);
        let list = p.compilers.get_mut(&d).unwrap();
        list.push(list[0].clone());
        format!("compilers.{d}[{}].id", list.len() - 1)
    } },
    Mutation { name: "no models", apply: |p| {
        p.models.clear();
        "models".into()
    } },
    Mutation { name: "duplicate model", apply: |p| {
        p.models.push(p.models[0].clone());
        format!("models[{}]", p.models.len() - 1)
    } },
    Mutation { name: "zero depth", apply: |p| {
        p.models.push(ModelSpec::block(BlockKind::Conv, 8, 0));
        format!("models[{}].block.depth", p.models.len() - 1)
    } },
    Mutation { name: "zero width", apply: |p| {
        p.models.push(ModelSpec::block(BlockKind::Mha, 0, 1));
        format!("models[{}].block.width", p.models.len() - 1)
    } },
    Mutation { name: "zero input dim", apply: |p| {
        let i = p.models.len() - 1;
        p.models[i].input_shape.push(0);
        format!("models[{i}].input_shape[{}]", p.models[i].input_shape.len() - 1)
    } },
    Mutation { name: "empty catalog name", apply: |p| {
        let mut m = ModelSpec::catalog("x");
        m.variant = ModelVariant::Catalog(String::new());
        p.models.push(m);
        format!("models[{}].catalog", p.models.len() - 1)
    } },
];

/// Document-level mutations that break typing rather than invariants,
/// with the field path the diagnostic must name.
pub struct TextMutation {
    pub name: &'static str,
    pub apply: fn(&mut Mapping) -> &'static str,
}

pub const TEXT_MUTATIONS: &[TextMutation] = &[
    TextMutation { name: "unknown top-level key", apply: |doc| {
        doc.insert("colour".into(), "blue".into());
        "colour"
    } },
    TextMutation { name: "unknown device key", apply: |doc| {
        let Value::Sequence(devices) = &mut doc["devices"] else { unreachable!() };
        devices[0].as_mapping_mut().unwrap().insert("colour".into(), "blue".into());
        "devices[0].colour"
    } },
    TextMutation { name: "string repetitions", apply: |doc| {
        doc.insert("repetitions".into(), "many".into());
        "repetitions"
    } },
    TextMutation { name: "negative warmup", apply: |doc| {
        doc.insert("warmup".into(), (-3).into());
        "warmup"
    } },
    TextMutation { name: "model with both variants", apply: |doc| {
        let Value::Sequence(models) = &mut doc["models"] else { unreachable!() };
        let m = models[0].as_mapping_mut().unwrap();
        m.insert("catalog".into(), "ResNet-18".into());
        m.insert("block".into(), serde_yaml::from_str("{kind: conv, width: 8, depth: 1}").unwrap());
        "models[0]"
    } },
];
