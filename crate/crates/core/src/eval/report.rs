use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metric value with its 95% confidence half-width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub ci95: f64,
    /// Sample counts and settings that produced the value.
    pub config: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, ci95: f64) -> Result<Self> {
        let metric = metric.into();
        if !value.is_finite() || !(ci95 >= 0.0) {
            return Err(Error::NonFinite(format!("metric {metric}: value {value}, half-width {ci95}")));
        }
        Ok(Self {
            metric,
            value,
            ci95,
            config: BTreeMap::new(),
        })
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.config
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `<stem>.json` (array) and `<stem>.csv` (one row per metric) into `dir`.
pub fn write_reports(dir: &Path, stem: &str, reports: &[MetricReport]) -> Result<()> {
    crate::io::write_json(&dir.join(format!("{stem}.json")), &reports)?;
    let mut csv = String::from("metric,value,ci95,config\n");
    for r in reports {
        let cfg = serde_json::to_string(&r.config)?;
        csv.push_str(&format!("{},{},{},{}\n", csv_field(&r.metric), r.value, r.ci95, csv_field(&cfg)));
    }
    crate::io::atomic_write(&dir.join(format!("{stem}.csv")), csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = vec![
            MetricReport::new("fid", 0.5, 0.1).unwrap().with("n", 10),
            MetricReport::new("bleu@1", 40.0, 0.0).unwrap(),
        ];
        write_reports(dir.path(), "m", &r).unwrap();
        let back: Vec<MetricReport> = crate::io::read_json(&dir.path().join("m.json")).unwrap();
        assert_eq!(back, r);
        let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("\"{\"\"n\"\":10}\""));
        assert!(MetricReport::new("x", f64::NAN, 0.0).is_err());
        assert!(MetricReport::new("x", 1.0, -1.0).is_err());
    }
}
