use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One logged training record. Wall time is carried alongside but excluded
/// from trace comparisons, which must be reproducible across runs.
#[derive(Debug, Clone, PartialEq)]
pub enum PhaseMetric {
    Phase1 {
        step: u64,
        l_d: f64,
        l_s: f64,
        total: f64,
    },
    Phase2 {
        step: u64,
        kl: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricLine {
    pub metric: PhaseMetric,
    pub wall_time: f64,
}

impl MetricLine {
    pub fn to_line(&self) -> String {
        match &self.metric {
            PhaseMetric::Phase1 {
                step,
                l_d,
                l_s,
                total,
            } => format!(
                "phase=1\tstep={step}\tL_d={l_d:.9e}\tL_s={l_s:.9e}\tL_total={total:.9e}\twall_time={:.3}",
                self.wall_time
            ),
            PhaseMetric::Phase2 { step, kl } => format!(
                "phase=2\tstep={step}\tKL={kl:.9e}\twall_time={:.3}",
                self.wall_time
            ),
        }
    }

    pub fn parse(line: &str) -> Option<MetricLine> {
        let mut fields = std::collections::HashMap::new();
        for part in line.split('\t') {
            let (k, v) = part.split_once('=')?;
            fields.insert(k, v);
        }
        let wall_time: f64 = fields.get("wall_time")?.parse().ok()?;
        let step: u64 = fields.get("step")?.parse().ok()?;
        let metric = match *fields.get("phase")? {
            "1" => PhaseMetric::Phase1 {
                step,
                l_d: fields.get("L_d")?.parse().ok()?,
                l_s: fields.get("L_s")?.parse().ok()?,
                total: fields.get("L_total")?.parse().ok()?,
            },
            "2" => PhaseMetric::Phase2 {
                step,
                kl: fields.get("KL")?.parse().ok()?,
            },
            _ => return None,
        };
        Some(MetricLine { metric, wall_time })
    }
}

/// Collects metric records in memory, optionally mirroring them to a file
/// and to stdout.
#[derive(Default)]
pub struct MetricLog {
    pub lines: Vec<MetricLine>,
    file: Option<File>,
    echo: bool,
}

impl MetricLog {
    pub fn in_memory() -> Self {
        MetricLog::default()
    }

    pub fn with_file(path: impl AsRef<Path>, echo: bool) -> Result<Self> {
        let file = File::create(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Ok(MetricLog {
            lines: Vec::new(),
            file: Some(file),
            echo,
        })
    }

    pub fn record(&mut self, metric: PhaseMetric, wall_time: f64) {
        let line = MetricLine { metric, wall_time };
        let text = line.to_line();
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{text}");
        }
        if self.echo {
            println!("{text}");
        }
        self.lines.push(line);
    }

    /// The reproducible part of the trace: every metric, no wall times.
    pub fn trace(&self) -> Vec<PhaseMetric> {
        self.lines.iter().map(|l| l.metric.clone()).collect()
    }
}
