//! XLA profiler traces: device events carry `device_offset_ps` / `device_duration_ps`.

use std::collections::BTreeMap;
use std::io::Read;

use super::patterns::{any_match, match_kind};
use super::reader::{as_f64, as_i128, as_u64, for_each_event, us_to_ns, RawEvent};
use super::{ps_to_ns, EventAttrs, EventClass, Nanos, PatternConfig, TimelineFragment, TraceError, TraceEvent};

const BYTES_KEYS: &[&str] = &["bytes", "message_bytes", "transfer_bytes", "size_bytes"];

struct CopyEnd {
    key: String,
    at: Nanos,
    stream: String,
    bytes: Option<u64>,
    start: bool,
    seq: usize,
}

/// Parses one XLA trace file.
///
/// Steps come from events whose name contains the configured marker. Device events
/// are classified by HLO category: strict collective names (never `broadcast`),
/// compute keywords for leaf ops (not `jit_*` containers or `dependency-wait`).
/// `copy-start.k`/`copy-done.k` pairs become one memory-transfer interval.
pub fn parse_xla<R: Read>(reader: R, patterns: &PatternConfig) -> Result<TimelineFragment, TraceError> {
    let p = &patterns.xla;
    let mut frag = TimelineFragment::default();
    let mut copies: Vec<CopyEnd> = Vec::new();
    let mut device_events = 0usize;

    for_each_event(reader, |ev| {
        if !ev.is_complete() {
            return true;
        }
        let name = ev.name().to_string();
        let device = device_timing(&ev);

        if let Some((start, key)) = copy_marker(&name) {
            let at = match device {
                Some((t, _)) => Some(t),
                None => ev.ts.as_ref().and_then(us_to_ns).and_then(|t| Nanos::try_from(t).ok()),
            };
            match at {
                Some(at) => {
                    device_events += 1;
                    copies.push(CopyEnd {
                        key: key.to_string(),
                        at,
                        stream: ev.lane(),
                        bytes: ev.arg_any(BYTES_KEYS).and_then(as_u64),
                        start,
                        seq: copies.len(),
                    });
                }
                None => frag.warnings.missing_ts += 1,
            }
            return true;
        }

        let timing = match device {
            Some(t) => Some(t),
            None => host_timing(&ev, &mut frag),
        };
        let Some((t_start, duration)) = timing else {
            return true;
        };

        let category = ev
            .arg("hlo_category")
            .or_else(|| ev.arg("category"))
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .or_else(|| ev.cat.clone());
        let mut attrs = EventAttrs {
            category: category.clone(),
            model_flops: ev.arg("model_flops").and_then(as_f64),
            ..EventAttrs::default()
        };
        let cat = category.as_deref().unwrap_or("");

        let class = if name.contains(p.step_marker.as_str()) {
            frag.push_window(t_start, t_start + duration, None);
            EventClass::Marker
        } else if device.is_some() {
            device_events += 1;
            if let Some(kind) = match_kind(&p.collectives, cat) {
                attrs.collective = Some(kind);
                attrs.bytes = ev.arg_any(BYTES_KEYS).and_then(as_u64);
                attrs.group_size = group_size(&ev);
                attrs.group_name = ev.arg("replica_groups").and_then(|v| v.as_str()).map(str::to_string);
                EventClass::Collective
            } else if any_match(&p.exclude, &name) {
                EventClass::Other
            } else if any_match(&p.compute, cat) {
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

    pair_copies(copies, &mut frag);

    if device_events == 0 {
        return Err(TraceError::EmptyTrace);
    }
    Ok(frag)
}

/// `copy-start.3` → `(true, ".3")`, `copy-done.3` → `(false, ".3")`.
fn copy_marker(name: &str) -> Option<(bool, &str)> {
    if let Some(rest) = name.strip_prefix("copy-start") {
        Some((true, rest))
    } else {
        name.strip_prefix("copy-done").map(|rest| (false, rest))
    }
}

fn device_timing(ev: &RawEvent) -> Option<(Nanos, Nanos)> {
    let off = ev.arg("device_offset_ps").and_then(ps_value)?;
    let dur = ev.arg("device_duration_ps").and_then(ps_value)?;
    let start = Nanos::try_from(ps_to_ns(off)).ok()?;
    let dur = Nanos::try_from(ps_to_ns(dur)).ok()?.max(0);
    start.checked_add(dur)?;
    Some((start, dur))
}

fn ps_value(v: &serde_json::Value) -> Option<i128> {
    as_i128(v).or_else(|| as_f64(v).filter(|f| f.is_finite()).map(|f| f.round() as i128))
}

fn host_timing(ev: &RawEvent, frag: &mut TimelineFragment) -> Option<(Nanos, Nanos)> {
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

fn group_size(ev: &RawEvent) -> Option<u32> {
    if let Some(n) = ev.arg("group_size").and_then(as_u64) {
        return u32::try_from(n).ok();
    }
    // replica_groups like "{{0,1,2,3},{4,5,6,7}}": size of the first group.
    let groups = ev.arg("replica_groups")?.as_str()?;
    let inner = groups.trim_start_matches('{');
    let first = inner.split('}').next()?;
    let n = first.split(',').filter(|s| !s.trim().is_empty()).count();
    (n > 0).then_some(n as u32)
}

/// Pairs starts with dones of the same key in time order (FIFO per key).
fn pair_copies(mut copies: Vec<CopyEnd>, frag: &mut TimelineFragment) {
    copies.sort_by(|a, b| (a.key.as_str(), a.at, !a.start, a.seq).cmp(&(b.key.as_str(), b.at, !b.start, b.seq)));
    let mut pending: BTreeMap<String, std::collections::VecDeque<CopyEnd>> = BTreeMap::new();
    for c in copies {
        if c.start {
            pending.entry(c.key.clone()).or_default().push_back(c);
            continue;
        }
        match pending.get_mut(&c.key).and_then(|q| q.pop_front()) {
            Some(s) => {
                let duration = (c.at - s.at).max(0);
                frag.events.push(TraceEvent {
                    rank: 0,
                    stream: s.stream,
                    name: format!("copy{}", s.key),
                    t_start: s.at,
                    duration,
                    class: EventClass::MemTransfer,
                    attrs: EventAttrs {
                        bytes: s.bytes.or(c.bytes),
                        ..EventAttrs::default()
                    },
                });
            }
            None => frag.warnings.unmatched_copies += 1,
        }
    }
    frag.warnings.unmatched_copies += pending.values().map(|q| q.len() as u64).sum::<u64>();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::CollectiveKind;

    fn parse(doc: &str) -> Result<TimelineFragment, TraceError> {
        parse_xla(doc.as_bytes(), &PatternConfig::default())
    }

    fn dev(name: &str, cat: &str, off: u64, dur: u64) -> String {
        format!(
            r#"{{"name":"{name}","ph":"X","pid":1,"tid":2,"ts":0,"dur":0,"args":{{"device_offset_ps":"{off}","device_duration_ps":"{dur}","hlo_category":"{cat}"}}}}"#
        )
    }

    fn doc(events: &[String]) -> String {
        format!(r#"{{"traceEvents":[{}]}}"#, events.join(","))
    }

    #[test]
    fn copy_pair_becomes_interval() {
        let f = parse(&doc(&[
            dev("copy-start.3", "data formatting", 2_000_000, 10),
            dev("copy-done.3", "data formatting", 5_000_000, 10),
        ]))
        .unwrap();
        let m: Vec<_> = f.events.iter().filter(|e| e.class == EventClass::MemTransfer).collect();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].t_start, m[0].t_end()), (2000, 5000));
    }

    #[test]
    fn unmatched_copy_start_warns() {
        let f = parse(&doc(&[
            dev("copy-start.1", "", 0, 1),
            dev("fusion.2", "loop fusion", 0, 1_000),
        ]))
        .unwrap();
        assert_eq!(f.warnings.unmatched_copies, 1);
        assert!(f.events.iter().all(|e| e.class != EventClass::MemTransfer));
    }

    #[test]
    fn all_reduce_category() {
        let f = parse(&doc(&[dev("all-reduce.7", "all-reduce", 0, 4_000_000)])).unwrap();
        assert_eq!(f.events[0].class, EventClass::Collective);
        assert_eq!(f.events[0].attrs.collective, Some(CollectiveKind::AllReduce));
        assert_eq!(f.events[0].duration, 4000);
    }

    #[test]
    fn broadcast_is_not_collective() {
        let f = parse(&doc(&[dev("broadcast.1", "broadcast", 0, 1_000)])).unwrap();
        assert_eq!(f.events[0].class, EventClass::Other);
    }

    #[test]
    fn containers_and_waits_excluded_from_compute() {
        let f = parse(&doc(&[
            dev("jit_train_step", "fusion", 0, 9_000),
            dev("dependency-wait", "custom-call", 0, 9_000),
            dev("fusion.12", "convolution fusion", 0, 9_000),
        ]))
        .unwrap();
        let classes: Vec<_> = f.events.iter().map(|e| e.class).collect();
        assert_eq!(classes, [EventClass::Other, EventClass::Other, EventClass::Compute]);
    }

    #[test]
    fn step_marker_and_model_flops() {
        let step = r#"{"name":"$core.py:331 step","ph":"X","ts":1,"dur":2,"args":{"device_offset_ps":0,"device_duration_ps":10000000}}"#;
        let op = r#"{"name":"dot.1","ph":"X","ts":0,"dur":0,"args":{"device_offset_ps":1000,"device_duration_ps":2000000,"hlo_category":"dot","model_flops":"1e9"}}"#;
        let f = parse(&doc(&[step.into(), op.into()])).unwrap();
        assert_eq!(f.steps.len(), 1);
        assert_eq!((f.steps[0].t_start, f.steps[0].t_end), (0, 10_000));
        let dot = f.events.iter().find(|e| e.name == "dot.1").unwrap();
        assert_eq!(dot.attrs.model_flops, Some(1e9));
        assert_eq!(dot.t_start, 1);
    }

    #[test]
    fn replica_group_size() {
        let e = r#"{"name":"all-gather.1","ph":"X","args":{"device_offset_ps":0,"device_duration_ps":5,"hlo_category":"all-gather","replica_groups":"{{0,1,2,3},{4,5,6,7}}"}}"#;
        let f = parse(&doc(&[e.into()])).unwrap();
        assert_eq!(f.events[0].attrs.group_size, Some(4));
    }

    #[test]
    fn host_only_document_is_empty() {
        let e = r#"{"name":"host","ph":"X","ts":1,"dur":2}"#;
        assert!(matches!(parse(&doc(&[e.into()])), Err(TraceError::EmptyTrace)));
    }
}
