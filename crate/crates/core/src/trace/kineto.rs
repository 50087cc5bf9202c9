//! PyTorch profiler (Kineto) traces: complete events with `ts`/`dur` in microseconds.

use std::io::Read;

use super::patterns::{any_match, match_kind};
use super::reader::{as_f64, as_u64, for_each_event, us_to_ns, RawEvent};
use super::{EventAttrs, EventClass, Nanos, PatternConfig, TimelineFragment, TraceError, TraceEvent};

const BYTES_KEYS: &[&str] = &["bytes", "Bytes", "msg_bytes", "message_bytes", "Message bytes"];
const GROUP_SIZE_KEYS: &[&str] = &["Group size", "group_size", "groupSize"];
const GROUP_NAME_KEYS: &[&str] = &["Process Group Name", "pg_name", "group_name", "Process Group Ranks"];
const ELEM_SIZE_KEYS: &[&str] = &["elem_size", "element_size", "dtype_size"];
const OCCUPANCY_KEYS: &[&str] = &["est. achieved occupancy %", "achieved_occupancy", "occupancy"];

/// Parses one Kineto trace file.
///
/// Step windows come from `ProfilerStep#N` spans. Device events (by category) are
/// split into collectives (NCCL names on `kernel` events), memory transfers
/// (copy-like names), remaining kernels as compute; everything else is `Other`.
pub fn parse_kineto<R: Read>(reader: R, patterns: &PatternConfig) -> Result<TimelineFragment, TraceError> {
    let p = &patterns.kineto;
    let mut frag = TimelineFragment::default();
    let mut device_events = 0usize;

    for_each_event(reader, |ev| {
        if !ev.is_complete() {
            return true;
        }
        let Some((t_start, duration)) = timing(&ev, &mut frag) else {
            return true;
        };
        let name = ev.name().to_string();
        let cat = ev.cat.clone().unwrap_or_default();
        let mut attrs = EventAttrs {
            category: ev.cat.clone(),
            ..EventAttrs::default()
        };

        let class = if let Some(caps) = p.step_marker.captures(&name) {
            attrs.step_number = caps.get(1).and_then(|m| m.as_str().parse().ok());
            frag.push_window(t_start, t_start + duration, attrs.step_number);
            EventClass::Marker
        } else if p.device_categories.contains(&cat) {
            device_events += 1;
            let kind = (cat == "kernel").then(|| match_kind(&p.collectives, &name)).flatten();
            if let Some(kind) = kind {
                attrs.collective = Some(kind);
                fill_message_attrs(&ev, &mut attrs);
                EventClass::Collective
            } else if any_match(&p.mem_transfer, &name) {
                attrs.bytes = ev.arg_any(BYTES_KEYS).and_then(as_u64);
                EventClass::MemTransfer
            } else if cat == "kernel" {
                attrs.occupancy = ev.arg_any(OCCUPANCY_KEYS).and_then(as_f64);
                EventClass::Compute
            } else {
                EventClass::Other
            }
        } else {
            EventClass::Other
        };

        frag.events.push(TraceEvent {
            rank: 0,
            stream: ev.lane(),
            name,
            t_start,
            duration,
            class,
            attrs,
        });
        true
    })?;

    if device_events == 0 {
        return Err(TraceError::EmptyTrace);
    }
    Ok(frag)
}

fn timing(ev: &RawEvent, frag: &mut TimelineFragment) -> Option<(Nanos, Nanos)> {
    let Some(ts) = ev.ts.as_ref().and_then(us_to_ns) else {
        frag.warnings.missing_ts += 1;
        return None;
    };
    let dur = match ev.dur.as_ref().and_then(us_to_ns) {
        Some(d) if d >= 0 => d,
        _ => {
            frag.warnings.missing_dur += 1;
            0
        }
    };
    match (Nanos::try_from(ts), Nanos::try_from(ts + dur)) {
        (Ok(t), Ok(_)) => Some((t, dur as Nanos)),
        _ => {
            frag.warnings.overflow += 1;
            None
        }
    }
}

fn fill_message_attrs(ev: &RawEvent, attrs: &mut EventAttrs) {
    attrs.bytes = ev.arg_any(BYTES_KEYS).and_then(as_u64);
    // AllGather/ReduceScatter carry the per-rank shard on one side; take the full buffer.
    let nelems = ["In msg nelems", "Out msg nelems", "nelems", "elem_count"]
        .iter()
        .filter_map(|k| ev.arg(k).and_then(as_u64))
        .max();
    attrs.elem_count = nelems;
    attrs.elem_size = ev
        .arg_any(ELEM_SIZE_KEYS)
        .and_then(as_u64)
        .or_else(|| ev.arg("dtype").and_then(|d| d.as_str()).and_then(dtype_size));
    attrs.group_size = ev
        .arg_any(GROUP_SIZE_KEYS)
        .and_then(as_u64)
        .and_then(|n| u32::try_from(n).ok());
    attrs.group_name = ev.arg_any(GROUP_NAME_KEYS).map(|v| match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    });
}

/// Element size in bytes for the dtype spellings Kineto and NCCL use.
pub(crate) fn dtype_size(dtype: &str) -> Option<u64> {
    let d = dtype.to_ascii_lowercase();
    let size = match d.as_str() {
        "float" | "float32" | "f32" | "fp32" | "int" | "int32" | "i32" | "uint32" => 4,
        "double" | "float64" | "f64" | "fp64" | "long" | "int64" | "i64" | "uint64" => 8,
        "half" | "float16" | "f16" | "fp16" | "bfloat16" | "bf16" | "short" | "int16" => 2,
        "byte" | "char" | "int8" | "uint8" | "bool" | "float8_e4m3fn" | "float8_e5m2" | "fp8" => 1,
        _ => return None,
    };
    Some(size)
}
