//! Newline-delimited JSON training metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use mkdt_core::train::LossRecord;
use serde_json::{Map, Value};

use crate::error::{format_err, io, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Step,
    Epoch,
}

impl Kind {
    fn as_str(self) -> &'static str {
        match self {
            Kind::Step => "step",
            Kind::Epoch => "epoch",
        }
    }
}

/// One log line: `kind`, `epoch`, `step`, `teacher/cls` (when a teacher is
/// trained), `student/cls`, `student/kld/<view>`, `student/total` and, on
/// epoch records with validation data, `val/acc`.
pub fn record_json(kind: Kind, r: &LossRecord) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), kind.as_str().into());
    m.insert("epoch".into(), r.epoch.into());
    m.insert("step".into(), r.step.into());
    if let Some(t) = r.teacher_cls {
        m.insert("teacher/cls".into(), t.into());
    }
    m.insert("student/cls".into(), r.student_cls.into());
    for (v, k) in &r.student_kld {
        m.insert(format!("student/kld/{v}"), (*k).into());
    }
    m.insert("student/total".into(), r.student_total.into());
    if let Some(a) = r.val_acc {
        m.insert("val/acc".into(), a.into());
    }
    Value::Object(m)
}

pub fn parse_record(line: &str) -> std::result::Result<(Kind, LossRecord), String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let m = value.as_object().ok_or("metrics line is not an object")?;
    let num = |k: &str| m.get(k).and_then(Value::as_f64);
    let int = |k: &str| m.get(k).and_then(Value::as_u64).map(|v| v as usize).ok_or(format!("missing {k}"));
    let kind = match m.get("kind").and_then(Value::as_str) {
        Some("step") => Kind::Step,
        Some("epoch") => Kind::Epoch,
        other => return Err(format!("bad kind {other:?}")),
    };
    let mut student_kld = std::collections::BTreeMap::new();
    for (k, v) in m {
        if let Some(view) = k.strip_prefix("student/kld/") {
            let view = view.parse().map_err(|_| format!("bad view in {k}"))?;
            student_kld.insert(view, v.as_f64().ok_or(format!("{k} is not a number"))?);
        }
    }
    Ok((
        kind,
        LossRecord {
            epoch: int("epoch")?,
            step: int("step")?,
            teacher_cls: num("teacher/cls"),
            student_cls: num("student/cls").ok_or("missing student/cls")?,
            student_kld,
            student_total: num("student/total").ok_or("missing student/total")?,
            val_acc: num("val/acc"),
        },
    ))
}

pub fn read_metrics(path: &Path) -> Result<Vec<(Kind, LossRecord)>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_record(l).map_err(|e| format_err(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Appends records to an NDJSON file.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, kind: Kind, record: &LossRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, &record_json(kind, record))?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn line_keys_and_round_trip() {
        let r = LossRecord {
            epoch: 2,
            step: 7,
            teacher_cls: Some(0.5),
            student_cls: 1.25,
            student_kld: BTreeMap::from([(2, 0.125), (3, 0.0625)]),
            student_total: 1.4375,
            val_acc: Some(0.75),
        };
        let mut w = MetricsWriter::new(Vec::new());
        w.write(Kind::Epoch, &r).unwrap();
        let line = String::from_utf8(w.out).unwrap();
        assert_eq!(
            line,
            "{\"kind\":\"epoch\",\"epoch\":2,\"step\":7,\"teacher/cls\":0.5,\"student/cls\":1.25,\
             \"student/kld/2\":0.125,\"student/kld/3\":0.0625,\"student/total\":1.4375,\"val/acc\":0.75}\n"
        );
        assert_eq!(parse_record(line.trim_end()).unwrap(), (Kind::Epoch, r));
    }

    #[test]
    fn optional_fields_are_omitted() {
        let r = LossRecord {
            epoch: 1,
            step: 1,
            teacher_cls: None,
            student_cls: 1.0,
            student_kld: BTreeMap::new(),
            student_total: 1.0,
            val_acc: None,
        };
        let v = record_json(Kind::Step, &r);
        assert!(v.get("teacher/cls").is_none() && v.get("val/acc").is_none());
        assert_eq!(parse_record(&v.to_string()).unwrap().1, r);
    }
}
