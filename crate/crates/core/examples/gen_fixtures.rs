//! Writes the synthetic trace fixtures and workload cards used by the test suites.
//!
//! ```text
//! cargo run -p traceval-core --example gen_fixtures -- fixtures
//! ```
//!
//! The training workload is encoded twice, once per dialect, from the same
//! microsecond schedule so both files normalize to identical timelines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::Compression;
use serde_json::{json, Value};

const STEP_US: i64 = 1000;

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Compute { occupancy: f64, flops: f64 },
    AllReduce,
    AllGather,
    CopyIn,
    CopyOut,
}

struct Op {
    name: &'static str,
    start: i64,
    end: i64,
    kind: Kind,
    bytes: u64,
}

/// One training step, offsets in microseconds from the step start.
fn step_ops(rank: usize, allreduce_end: i64) -> Vec<Op> {
    let compute = |name, start, end, occupancy, flops| Op {
        name,
        start,
        end,
        kind: Kind::Compute { occupancy, flops },
        bytes: 0,
    };
    vec![
        compute("ampere_bf16_gemm_fwd", 0, 300, 80.0, 1.0e11),
        Op {
            name: "Memcpy HtoD (Pageable -> Device)",
            start: 100,
            end: 150,
            kind: Kind::CopyIn,
            bytes: 4_000_000,
        },
        compute("vectorized_elementwise_bwd", 300, 400, 40.0, 5.0e9),
        compute("ampere_bf16_gemm_bwd", 400, 700, 75.0, 2.0e11),
        Op {
            name: "ncclDevKernel_AllReduce_Sum_bf16_RING_LL",
            // The second rank reaches the collective 20 µs later.
            start: if rank == 0 { 500 } else { 520 },
            end: allreduce_end,
            kind: Kind::AllReduce,
            bytes: 64 << 20,
        },
        Op {
            name: "Memcpy DtoH (Device -> Pinned)",
            start: 800,
            end: 850,
            kind: Kind::CopyOut,
            bytes: 8_000_000,
        },
        Op {
            name: "ncclDevKernel_AllGather_RING_LL",
            start: 850,
            end: 900,
            kind: Kind::AllGather,
            bytes: 16 << 20,
        },
    ]
}

fn kineto_op(op: &Op, t0: i64) -> Value {
    let ts = t0 + op.start;
    let dur = op.end - op.start;
    match op.kind {
        Kind::Compute { occupancy, .. } => json!({
            "ph": "X", "cat": "kernel", "name": op.name, "pid": 0, "tid": 7, "ts": ts, "dur": dur,
            "args": {"stream": 7, "est. achieved occupancy %": occupancy}
        }),
        Kind::CopyIn | Kind::CopyOut => json!({
            "ph": "X", "cat": "gpu_memcpy", "name": op.name, "pid": 0, "tid": 9, "ts": ts, "dur": dur,
            "args": {"stream": 9, "bytes": op.bytes}
        }),
        Kind::AllReduce => json!({
            "ph": "X", "cat": "kernel", "name": op.name, "pid": 0, "tid": 20, "ts": ts, "dur": dur,
            "args": {"stream": 20, "In msg nelems": op.bytes / 2, "Out msg nelems": op.bytes / 2,
                     "dtype": "BFloat16", "Group size": 2, "Process Group Name": "0"}
        }),
        Kind::AllGather => json!({
            "ph": "X", "cat": "kernel", "name": op.name, "pid": 0, "tid": 20, "ts": ts, "dur": dur,
            "args": {"stream": 20, "In msg nelems": op.bytes / 4, "Out msg nelems": op.bytes / 2,
                     "dtype": "BFloat16", "Group size": 2, "Process Group Name": "0"}
        }),
    }
}

fn ps(us: i64) -> String {
    (us * 1_000_000).to_string()
}

fn xla_device(name: &str, category: &str, tid: i64, start_us: i64, end_us: i64, mut extra: Value) -> Value {
    let args = extra.as_object_mut().expect("object");
    args.insert("device_offset_ps".into(), json!(ps(start_us)));
    args.insert("device_duration_ps".into(), json!(ps(end_us - start_us)));
    args.insert("hlo_category".into(), json!(category));
    json!({"ph": "X", "name": name, "pid": 3, "tid": tid, "ts": start_us, "dur": end_us - start_us, "args": extra})
}

fn xla_ops(op: &Op, t0: i64, seq: usize) -> Vec<Value> {
    let (s, e) = (t0 + op.start, t0 + op.end);
    match op.kind {
        Kind::Compute { flops, .. } => {
            let category = if op.name.contains("gemm") { "convolution fusion" } else { "loop fusion" };
            vec![xla_device(op.name, category, 1, s, e, json!({"model_flops": flops}))]
        }
        Kind::CopyIn | Kind::CopyOut => vec![
            xla_device(&format!("copy-start.{seq}"), "data formatting", 4, s, s, json!({"bytes": op.bytes})),
            xla_device(&format!("copy-done.{seq}"), "data formatting", 4, e, e, json!({})),
        ],
        Kind::AllReduce => vec![xla_device(
            "all-reduce.1",
            "all-reduce",
            2,
            s,
            e,
            json!({"bytes": op.bytes, "replica_groups": "{{0,1}}"}),
        )],
        Kind::AllGather => vec![xla_device(
            "all-gather.2",
            "all-gather",
            2,
            s,
            e,
            json!({"bytes": op.bytes, "replica_groups": "{{0,1}}"}),
        )],
    }
}

/// Kineto and XLA files for `steps` training steps per rank.
fn training(steps: usize, ranks: usize, allreduce_end: i64, shift_rank1_us: i64) -> (Vec<Value>, Vec<Value>) {
    let mut kineto = Vec::new();
    let mut xla = Vec::new();
    for rank in 0..ranks {
        let base = if rank == 1 { shift_rank1_us } else { 0 } + 10_000;
        let mut k = vec![json!({"ph": "M", "name": "process_name", "pid": 0, "args": {"name": format!("rank {rank}")}})];
        let mut x = vec![json!({"ph": "M", "name": "process_name", "pid": 3, "args": {"name": "/device:TPU:0"}})];
        for s in 0..steps {
            let t0 = base + s as i64 * STEP_US;
            k.push(json!({
                "ph": "X", "cat": "user_annotation", "name": format!("ProfilerStep#{}", s + 1),
                "pid": 0, "tid": 1, "ts": t0, "dur": STEP_US
            }));
            k.push(json!({"ph": "X", "cat": "cpu_op", "name": "aten::mm", "pid": 0, "tid": 1, "ts": t0 + 5, "dur": 45}));
            x.push(xla_device("$core.py:331 step", "step", 0, t0, t0 + STEP_US, json!({})));
            x.push(json!({"ph": "X", "name": "PjitFunction(train_step)", "pid": 5, "tid": 1, "ts": t0 + 5, "dur": 45}));
            for (i, op) in step_ops(rank, allreduce_end).iter().enumerate() {
                k.push(kineto_op(op, t0));
                x.extend(xla_ops(op, t0, s * 10 + i));
            }
        }
        kineto.push(json!({"schemaVersion": 1, "traceEvents": k}));
        xla.push(json!({"displayTimeUnit": "ns", "traceEvents": x}));
    }
    (kineto, xla)
}

/// One prefill of 500 ms followed by 128 decode steps of 40 ms.
fn inference() -> Value {
    let mut ev = Vec::new();
    let mut t = 0i64;
    for s in 0..129 {
        let (len, busy) = if s == 0 { (500_000, 450_000) } else { (40_000, 30_000) };
        ev.push(json!({"ph": "X", "cat": "user_annotation", "name": format!("ProfilerStep#{s}"),
                       "pid": 0, "tid": 1, "ts": t, "dur": len}));
        ev.push(json!({"ph": "X", "cat": "kernel", "name": "flash_attn_fwd_kernel", "pid": 0, "tid": 7,
                       "ts": t + 1000, "dur": busy, "args": {"est. achieved occupancy %": 62.5}}));
        t += len;
    }
    json!({"traceEvents": ev})
}

/// Three 5 ms windows, each filled by one 1 GiB all-reduce across two ranks.
fn whatif_single(rank: usize) -> Value {
    let mut ev = Vec::new();
    for s in 0..3 {
        let t0 = s * 5000;
        ev.push(json!({"ph": "X", "cat": "user_annotation", "name": format!("ProfilerStep#{s}"),
                       "pid": rank, "tid": 1, "ts": t0, "dur": 5000}));
        ev.push(json!({"ph": "X", "cat": "kernel", "name": "ncclDevKernel_AllReduce_Sum_f32_RING_LL",
                       "pid": rank, "tid": 20, "ts": t0, "dur": 5000,
                       "args": {"In msg nelems": 1u64 << 28, "dtype": "Float", "Group size": 2}}));
    }
    json!({"traceEvents": ev})
}

/// Three 10 ms windows of compute with an idle millisecond between kernels.
fn whatif_compute() -> Value {
    let mut ev = Vec::new();
    for s in 0..3 {
        let t0 = s * 10_000;
        ev.push(json!({"ph": "X", "cat": "user_annotation", "name": format!("ProfilerStep#{s}"),
                       "pid": 0, "tid": 1, "ts": t0, "dur": 10_000}));
        ev.push(json!({"ph": "X", "cat": "kernel", "name": "sm80_gemm_a", "pid": 0, "tid": 7, "ts": t0, "dur": 3000}));
        ev.push(json!({"ph": "X", "cat": "kernel", "name": "sm80_gemm_b", "pid": 0, "tid": 7, "ts": t0 + 4000, "dur": 5000}));
    }
    json!({"traceEvents": ev})
}

#[allow(clippy::too_many_arguments)]
fn card(
    phase: &str,
    iteration: usize,
    xpu: &str,
    total: usize,
    framework: (&str, &str),
    library: (&str, &str),
    source: &str,
    extra_data: &str,
) -> String {
    format!(
        "version: 1
description: synthetic {phase} fixture
workload:
  model:
    phase: {phase}
    model_family: gpt2-medium
    precision: bf16
    iteration: {iteration}
    model_arch:
      num_params: 354823168
      num_params_embedding: 51463168
      num_layers: 24
      num_heads: 16
      head_dim: 64
  data:
    batch_size: 1
    seq_len: 128{extra_data}
  hardware:
    network_topo:
      topology: two-tier
      bandwidth_gbps: [200, 2400]
    xpu_spec:
      xpu_type: {xpu_type}
      model: {xpu}
      total_count: {total}
      count_per_node: {total}
    driver_version: \"{driver}\"
Model-executor:
  framework:
    name: {}
    version: \"{}\"
  model_plan_parallelization:
    dp_replicate: {total}
  communication_library:
    name: {}
    version: \"{}\"
metric_source:
  traces: [{source}]
",
        framework.0,
        framework.1,
        library.0,
        library.1,
        xpu_type = if xpu.starts_with("tpu") { "tpu" } else { "gpu" },
        driver = if xpu.starts_with("tpu") { "libtpu-0.0.10" } else { "cuda_12.4" },
    )
}

fn write_json(path: &Path, doc: &Value) {
    fs::create_dir_all(path.parent().expect("parent")).expect("mkdir");
    let mut text = serde_json::to_string(doc).expect("serialize");
    text.push('\n');
    if path.extension().is_some_and(|e| e == "gz") {
        // Fixed header fields keep the compressed bytes reproducible.
        let file = fs::File::create(path).expect("create");
        let mut gz = flate2::GzBuilder::new().mtime(0).write(file, Compression::default());
        gz.write_all(text.as_bytes()).expect("write");
        gz.finish().expect("finish");
    } else {
        fs::write(path, text).expect("write");
    }
}

fn write_text(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().expect("parent")).expect("mkdir");
    fs::write(path, text).expect("write");
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let traces = root.join("traces");
    let cards = root.join("cards");

    let put_ranks = |dir: &str, docs: &[Value]| {
        for (r, d) in docs.iter().enumerate() {
            write_json(&traces.join(dir).join(format!("rank{r}.json")), d);
        }
    };
    let (k, x) = training(5, 2, 800, 0);
    put_ranks("train_gpu", &k);
    for (r, d) in x.iter().enumerate() {
        write_json(&traces.join("train_tpu").join(format!("rank{r}.trace.json")), d);
    }
    put_ranks("train_gpu_short", &training(3, 2, 800, 0).0);
    put_ranks("train_gpu_shifted", &training(5, 2, 800, 1_000_000).0);
    put_ranks("train_gpu_fastar", &training(5, 2, 650, 0).0);
    write_json(&traces.join("infer_gpu/rank0.json.gz"), &inference());
    put_ranks("whatif_single", &[whatif_single(0), whatif_single(1)]);
    put_ranks("whatif_compute", &[whatif_compute()]);

    let gpu_fw = ("torchtitan", "0.2.0");
    let nccl = ("NCCL", "2.21.5");
    write_text(&cards.join("train_gpu.yaml"), &card("training", 5, "nvidia_a100", 2, gpu_fw, nccl, "kineto", ""));
    write_text(
        &cards.join("train_gpu_short.yaml"),
        &card("training", 3, "nvidia_a100", 2, gpu_fw, nccl, "kineto", ""),
    );
    write_text(
        &cards.join("train_gpu_fastar.yaml"),
        &card("training", 5, "nvidia_a100", 2, gpu_fw, ("MSCCL++", "0.6.0"), "kineto", ""),
    );
    write_text(
        &cards.join("train_tpu.yaml"),
        &card("training", 5, "tpu_v6e", 2, ("maxtext", "2025.04"), ("XLA", "0.5.1"), "xla", ""),
    );
    write_text(
        &cards.join("infer_gpu.yaml"),
        &card(
            "inference",
            128,
            "nvidia_a100",
            1,
            ("vllm", "0.8.5"),
            nccl,
            "kineto",
            "\n    input_len: 1024\n    output_len: 128",
        ),
    );
    write_text(&cards.join("whatif_single.yaml"), &card("training", 3, "nvidia_a100", 2, gpu_fw, nccl, "kineto", ""));
    write_text(&cards.join("whatif_compute.yaml"), &card("training", 3, "nvidia_a100", 1, gpu_fw, nccl, "kineto", ""));
}
