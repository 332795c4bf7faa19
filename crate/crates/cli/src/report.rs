//! Line-delimited `key=value` reports.
//!
//! Keys starting with `time.` carry wall-clock measurements; every other key
//! is reproducible under fixed seeds.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use crate::Failure;

pub const TIMING_PREFIX: &str = "time.";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new(kind: &str) -> Self {
        let mut r = Self::default();
        r.push("report", kind);
        r
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Fixed six-decimal rendering so reports diff cleanly.
    pub fn float(&mut self, key: impl Into<String>, value: f64) {
        self.push(key, format!("{value:.6}"));
    }

    pub fn opt_float(&mut self, key: impl Into<String>, value: Option<f64>) {
        match value {
            Some(v) => self.float(key, v),
            None => self.push(key, "unavailable"),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut r = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", n + 1))?;
            r.push(k, v);
        }
        Ok(r)
    }

    /// Writes to `out`, or stdout when absent.
    pub fn emit(&self, out: Option<&Path>) -> Result<(), Failure> {
        match out {
            Some(path) => fs::write(path, self.render()).map_err(|e| Failure::io(path, e)),
            None => {
                print!("{}", self.render());
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut r = Report::new("bench");
        r.float("recall", 0.5);
        r.opt_float("truth", None);
        r.push("ids", "1,2=3");
        let back = Report::parse(&r.render()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get("recall"), Some("0.500000"));
        assert_eq!(back.get("ids"), Some("1,2=3"));
        assert!(Report::parse("nonsense").is_err());
    }
}
