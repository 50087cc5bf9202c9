//! Streaming access to the `traceEvents` array of a Chrome-trace document.
//!
//! Events are deserialized one at a time and handed to a callback, so memory
//! use is bounded by the largest single event rather than the file size.

use std::cell::Cell;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::rc::Rc;

use flate2::read::MultiGzDecoder;
use serde::de::{self, DeserializeSeed, Deserializer, IgnoredAny, MapAccess, SeqAccess, Visitor};
use serde::Deserialize;
use serde_json::{Map, Value};

use super::TraceError;

/// The subset of a trace event the parsers look at.
#[derive(Debug, Deserialize)]
pub(crate) struct RawEvent {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub ph: Option<String>,
    #[serde(default)]
    pub cat: Option<String>,
    #[serde(default)]
    pub ts: Option<Value>,
    #[serde(default)]
    pub dur: Option<Value>,
    #[serde(default)]
    pub pid: Option<Value>,
    #[serde(default)]
    pub tid: Option<Value>,
    #[serde(default)]
    pub args: Option<Map<String, Value>>,
}

impl RawEvent {
    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("")
    }

    pub fn is_complete(&self) -> bool {
        self.ph.as_deref() == Some("X")
    }

    pub fn arg(&self, key: &str) -> Option<&Value> {
        self.args.as_ref().and_then(|a| a.get(key))
    }

    /// First present argument among `keys`.
    pub fn arg_any(&self, keys: &[&str]) -> Option<&Value> {
        keys.iter().find_map(|k| self.arg(k))
    }

    pub fn lane(&self) -> String {
        format!("{}:{}", id_str(self.pid.as_ref()), id_str(self.tid.as_ref()))
    }
}

fn id_str(v: Option<&Value>) -> String {
    match v {
        Some(Value::String(s)) => s.clone(),
        Some(other) => other.to_string(),
        None => "-".to_string(),
    }
}

/// Numeric value of a JSON number or numeric string.
pub(crate) fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub(crate) fn as_u64(v: &Value) -> Option<u64> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .or_else(|| n.as_f64().filter(|f| *f >= 0.0 && f.fract() == 0.0).map(|f| f as u64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Exact integer value where possible, for timestamp arithmetic.
pub(crate) fn as_i128(v: &Value) -> Option<i128> {
    match v {
        Value::Number(n) => n.as_i64().map(i128::from).or_else(|| n.as_u64().map(i128::from)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Microseconds (possibly fractional) to integer nanoseconds.
pub(crate) fn us_to_ns(v: &Value) -> Option<i128> {
    if let Some(i) = as_i128(v) {
        return i.checked_mul(1000);
    }
    as_f64(v).filter(|f| f.is_finite()).map(|f| (f * 1000.0).round() as i128)
}

/// Opens a trace file, transparently decompressing gzip input.
pub(crate) fn open(path: &Path) -> Result<Box<dyn Read + Send>, TraceError> {
    let io_err = |source| TraceError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut buf = BufReader::new(file);
    let gz = buf.fill_buf().map_err(io_err)?.starts_with(&[0x1f, 0x8b]);
    if gz {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buf))))
    } else {
        Ok(Box::new(buf))
    }
}

struct CountingReader<R> {
    inner: R,
    count: Rc<Cell<u64>>,
}

impl<R: Read> Read for CountingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.count.set(self.count.get() + n as u64);
        Ok(n)
    }
}

/// Calls `sink` for every element of `traceEvents` (or of a bare top-level
/// array). The sink returns `false` to stop early.
pub(crate) fn for_each_event<R, F>(reader: R, mut sink: F) -> Result<(), TraceError>
where
    R: Read,
    F: FnMut(RawEvent) -> bool,
{
    let count = Rc::new(Cell::new(0));
    let counting = CountingReader {
        inner: BufReader::new(reader),
        count: Rc::clone(&count),
    };
    let stopped = Cell::new(false);
    let mut de = serde_json::Deserializer::from_reader(counting);
    let result = de.deserialize_any(DocumentVisitor {
        sink: &mut sink,
        stopped: &stopped,
    });
    if stopped.get() {
        return Ok(());
    }
    let offset = count.get();
    match result {
        Ok(true) => de.end().map_err(|e| TraceError::Parse {
            offset: count.get(),
            message: e.to_string(),
        }),
        Ok(false) => Err(TraceError::Parse {
            offset,
            message: "document has no `traceEvents` array".into(),
        }),
        Err(e) => Err(TraceError::Parse {
            offset,
            message: e.to_string(),
        }),
    }
}

struct DocumentVisitor<'a, F> {
    sink: &'a mut F,
    stopped: &'a Cell<bool>,
}

impl<'de, F: FnMut(RawEvent) -> bool> Visitor<'de> for DocumentVisitor<'_, F> {
    /// Whether an event array was found.
    type Value = bool;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a Chrome trace object or event array")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<bool, A::Error> {
        let mut found = false;
        while let Some(key) = map.next_key::<String>()? {
            if key == "traceEvents" {
                map.next_value_seed(EventArray {
                    sink: &mut *self.sink,
                    stopped: self.stopped,
                })?;
                found = true;
                if self.stopped.get() {
                    return Err(de::Error::custom("stopped"));
                }
            } else {
                map.next_value::<IgnoredAny>()?;
            }
        }
        Ok(found)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, seq: A) -> Result<bool, A::Error> {
        EventArray {
            sink: self.sink,
            stopped: self.stopped,
        }
        .visit_seq(seq)?;
        Ok(true)
    }
}

struct EventArray<'a, F> {
    sink: &'a mut F,
    stopped: &'a Cell<bool>,
}

impl<'de, F: FnMut(RawEvent) -> bool> DeserializeSeed<'de> for EventArray<'_, F> {
    type Value = ();

    fn deserialize<D: Deserializer<'de>>(self, deserializer: D) -> Result<(), D::Error> {
        deserializer.deserialize_seq(self)
    }
}

impl<'de, F: FnMut(RawEvent) -> bool> Visitor<'de> for EventArray<'_, F> {
    type Value = ();

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an array of trace events")
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<(), A::Error> {
        while let Some(ev) = seq.next_element::<RawEvent>()? {
            if !(self.sink)(ev) {
                self.stopped.set(true);
                return Err(de::Error::custom("stopped"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect(doc: &str) -> Result<Vec<String>, TraceError> {
        let mut names = Vec::new();
        for_each_event(doc.as_bytes(), |e| {
            names.push(e.name().to_string());
            true
        })?;
        Ok(names)
    }

    #[test]
    fn object_and_bare_array_forms() {
        let obj = r#"{"schemaVersion":1,"traceEvents":[{"name":"a"},{"name":"b"}],"displayTimeUnit":"ms"}"#;
        assert_eq!(collect(obj).unwrap(), ["a", "b"]);
        assert_eq!(collect(r#"[{"name":"x"}]"#).unwrap(), ["x"]);
    }

    #[test]
    fn malformed_reports_offset() {
        let doc = r#"{"traceEvents":[{"name":"a"},{"name": }]}"#;
        match collect(doc) {
            Err(TraceError::Parse { offset, .. }) => assert!(offset > 0 && offset <= doc.len() as u64),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_event_array() {
        assert!(matches!(collect(r#"{"foo":1}"#), Err(TraceError::Parse { .. })));
    }

    #[test]
    fn early_stop() {
        let mut n = 0;
        for_each_event(r#"[{"name":"a"},{"name":"b"},{"name":"c"}]"#.as_bytes(), |_| {
            n += 1;
            n < 2
        })
        .unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn microsecond_conversion() {
        assert_eq!(us_to_ns(&serde_json::json!(1000)), Some(1_000_000));
        assert_eq!(us_to_ns(&serde_json::json!(1.5)), Some(1500));
        assert_eq!(us_to_ns(&serde_json::json!("7")), Some(7000));
    }
}
