//! Run manifests: a small JSON document describing one CLI run, serialized
//! deterministically (sorted keys, fixed formatting). The timestamp is the
//! only run-dependent field.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::Result;

/// Snapshot of one run: configuration, inputs, outputs, metrics.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    /// Seconds since the Unix epoch at creation time.
    pub timestamp: u64,
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

impl RunManifest {
    pub fn new() -> Self {
        Self {
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            ..Default::default()
        }
    }

    /// Deterministic JSON: keys sorted, arrays in insertion order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        out.push_str("  \"config\": {\n");
        let entries: Vec<String> = self
            .config
            .iter()
            .map(|(k, v)| format!("    \"{}\": \"{}\"", json_escape(k), json_escape(v)))
            .collect();
        out.push_str(&entries.join(",\n"));
        out.push_str("\n  },\n");
        let list = |items: &[String]| -> String {
            let inner: Vec<String> = items
                .iter()
                .map(|s| format!("    \"{}\"", json_escape(s)))
                .collect();
            if inner.is_empty() {
                "[]".to_string()
            } else {
                format!("[\n{}\n  ]", inner.join(",\n"))
            }
        };
        out.push_str(&format!("  \"inputs\": {},\n", list(&self.inputs)));
        let metrics: Vec<String> = self
            .metrics
            .iter()
            .map(|(k, v)| format!("    \"{}\": {v:.12e}", json_escape(k)))
            .collect();
        if metrics.is_empty() {
            out.push_str("  \"metrics\": {},\n");
        } else {
            out.push_str(&format!("  \"metrics\": {{\n{}\n  }},\n", metrics.join(",\n")));
        }
        out.push_str(&format!("  \"outputs\": {},\n", list(&self.outputs)));
        out.push_str(&format!("  \"timestamp\": {}\n}}\n", self.timestamp));
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}
