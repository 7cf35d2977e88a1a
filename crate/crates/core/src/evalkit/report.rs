use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::protocols::Metric;
use crate::error::{Error, Result};
use crate::records::write_file;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub video: i64,
    /// Frame index within the video.
    pub timestep: usize,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub timestep: usize,
    pub metric: Metric,
    pub mean: f64,
    /// Sample standard deviation over videos divided by `sqrt(n)`.
    pub stderr: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    /// Samples considered per video.
    pub best_of: usize,
    pub config_digest: String,
    pub rows: Vec<MetricRow>,
    pub diversity: Vec<(i64, f64)>,
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / n.sqrt())
}

impl MetricsReport {
    /// Mean and standard error per `(timestep, metric)`, ordered by timestep
    /// then metric.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<(usize, Metric), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry((r.timestep, r.metric)).or_default().push(r.value);
        }
        groups
            .into_iter()
            .map(|((timestep, metric), vals)| {
                let (mean, stderr) = mean_stderr(&vals);
                AggregateRow {
                    timestep,
                    metric,
                    mean,
                    stderr,
                    n: vals.len(),
                }
            })
            .collect()
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("video,timestep,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.video, r.timestep, r.metric.name(), r.value);
        }
        s
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = String::from("timestep,metric,mean,stderr\n");
        for a in self.aggregate() {
            let _ = writeln!(s, "{},{},{},{}", a.timestep, a.metric.name(), a.mean, a.stderr);
        }
        s
    }

    pub fn diversity_csv(&self) -> String {
        let mut s = String::from("video,diversity\n");
        for (v, d) in &self.diversity {
            let _ = writeln!(s, "{v},{d}");
        }
        s
    }

    /// Writes `metrics.csv`, `aggregate.csv`, `diversity.csv` and `report.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = serde_json::json!({
            "best_of": self.best_of,
            "config_digest": self.config_digest,
            "videos": self.diversity.len(),
        });
        write_file(&dir.join("metrics.csv"), self.metrics_csv().as_bytes())?;
        write_file(&dir.join("aggregate.csv"), self.aggregate_csv().as_bytes())?;
        write_file(&dir.join("diversity.csv"), self.diversity_csv().as_bytes())?;
        write_file(&dir.join("report.json"), format!("{summary:#}\n").as_bytes())
    }
}

/// Binary 8-bit PGM of an `h x w` image with values in [0, 1].
pub fn pgm_bytes(pixels: &[f64], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, pixels: &[f64], h: usize, w: usize) -> Result<()> {
    write_file(path, &pgm_bytes(pixels, h, w))
}
