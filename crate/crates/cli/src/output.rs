use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::Format;

/// A command result: a JSON document plus the table written in CSV mode.
pub struct Output {
    pub result: Value,
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Scalar facts shown above the CSV table.
    pub summary: Vec<(String, String)>,
    pub modes: Vec<&'static str>,
}

impl Output {
    pub fn new(result: &impl Serialize, headers: &[&'static str]) -> Self {
        Self {
            result: serde_json::to_value(result).expect("serializable result"),
            headers: headers.to_vec(),
            rows: vec![],
            summary: vec![],
            modes: vec![],
        }
    }

    pub fn row(&mut self, cells: Vec<String>) -> &mut Self {
        self.rows.push(cells);
        self
    }

    pub fn note(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.summary.push((key.to_string(), value.to_string()));
        self
    }

    pub fn mode(&mut self, flag: &'static str) -> &mut Self {
        if !self.modes.contains(&flag) {
            self.modes.push(flag);
        }
        self
    }
}

pub struct RunHeader {
    pub command: String,
    pub seed: u64,
    pub config: String,
}

impl RunHeader {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(b"\n");
        h.update(self.seed.to_le_bytes());
        h.update(self.config.as_bytes());
        format!("{:x}", h.finalize())
    }
}

pub fn render(out: &Output, header: &RunHeader, format: Format) -> String {
    let modes = if out.modes.is_empty() { "none".to_string() } else { out.modes.join(",") };
    match format {
        Format::Json => {
            let doc = json!({
                "header": {
                    "tool": "gcdlab",
                    "version": env!("CARGO_PKG_VERSION"),
                    "command": header.command,
                    "seed": header.seed,
                    "config_hash": header.hash(),
                    "config": header.config,
                    "modes": out.modes,
                },
                "result": out.result,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("json");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = String::new();
            let _ = writeln!(s, "# gcdlab {}", env!("CARGO_PKG_VERSION"));
            let _ = writeln!(s, "# command: {}", header.command);
            let _ = writeln!(s, "# seed: {}", header.seed);
            let _ = writeln!(s, "# config-hash: {}", header.hash());
            let _ = writeln!(s, "# modes: {modes}");
            let _ = writeln!(s, "# config: {}", header.config);
            for (k, v) in &out.summary {
                let _ = writeln!(s, "# {k}: {v}");
            }
            s.push_str(&gcdlab::fmt::csv(&out.headers, &out.rows));
            s
        }
    }
}
