use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::{LinkKind, Result, SimReport};
use crate::routing::{percentile, write_cdf_csv, HOP_BUCKETS};

const USAGE_BINS: usize = 20;

/// Distributions extracted from a [`SimReport`], ready to plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricBundle {
    /// Per-flow mean stretch over flows with at least one delivery, sorted.
    pub stretch: Vec<f64>,
    /// Every RTT sample in seconds, sorted.
    pub rtt_s: Vec<f64>,
    pub stretch_p90: f64,
    pub rtt_p75_s: f64,
    pub hop_histogram: [u64; 4],
    /// ISL usage ratios, sorted.
    pub isl_usage: Vec<f64>,
    /// `(lower edge, count)` over `USAGE_BINS` equal bins up to the largest ratio.
    pub usage_histogram: Vec<(f64, usize)>,
}

pub fn replay_metrics(report: &SimReport) -> MetricBundle {
    let mut stretch: Vec<f64> = report.flows.iter().filter(|f| f.delivered > 0).map(|f| f.mean_stretch).collect();
    stretch.sort_by(f64::total_cmp);
    let mut rtt_s: Vec<f64> = report.flows.iter().flat_map(|f| f.rtt_s.iter().copied()).collect();
    rtt_s.sort_by(f64::total_cmp);
    let mut isl_usage: Vec<f64> = report.links.iter().filter(|l| l.kind == LinkKind::Isl).map(|l| l.usage).collect();
    isl_usage.sort_by(f64::total_cmp);
    let usage_histogram = match isl_usage.last() {
        Some(&max) if max > 0.0 => {
            let width = max / USAGE_BINS as f64;
            let mut counts = vec![0; USAGE_BINS];
            for &u in &isl_usage {
                counts[((u / width) as usize).min(USAGE_BINS - 1)] += 1;
            }
            counts.into_iter().enumerate().map(|(i, c)| (i as f64 * width, c)).collect()
        }
        _ => Vec::new(),
    };
    MetricBundle {
        stretch_p90: percentile(&stretch, 90.0),
        rtt_p75_s: percentile(&rtt_s, 75.0),
        stretch,
        rtt_s,
        hop_histogram: report.hop_histogram,
        isl_usage,
        usage_histogram,
    }
}

impl MetricBundle {
    /// Writes `cdf_stretch.csv`, `cdf_rtt.csv`, `hops.csv`, `link_usage.csv`
    /// and `markers.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_cdf_csv(BufWriter::new(File::create(dir.join("cdf_stretch.csv"))?), &self.stretch)?;
        write_cdf_csv(BufWriter::new(File::create(dir.join("cdf_rtt.csv"))?), &self.rtt_s)?;
        let mut w = BufWriter::new(File::create(dir.join("hops.csv"))?);
        writeln!(w, "bucket,min_hops,max_hops,packets")?;
        for ((name, lo, hi), n) in HOP_BUCKETS.iter().zip(self.hop_histogram) {
            let hi = if *hi == usize::MAX { String::new() } else { hi.to_string() };
            writeln!(w, "{name},{lo},{hi},{n}")?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("link_usage.csv"))?);
        writeln!(w, "usage_from,links")?;
        for (edge, n) in &self.usage_histogram {
            writeln!(w, "{edge},{n}")?;
        }
        w.flush()?;
        let markers = serde_json::json!({ "stretch_p90": self.stretch_p90, "rtt_p75_s": self.rtt_p75_s });
        std::fs::write(dir.join("markers.json"), serde_json::to_string_pretty(&markers)?)?;
        Ok(())
    }
}

impl SimReport {
    /// Writes `report.json` (totals), `flows.csv` and `links.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let summary = serde_json::json!({
            "duration_s": self.duration_s,
            "seed": self.seed,
            "data": self.data,
            "echo": self.echo,
            "drops_by_reason": self.drops_by_reason,
            "hop_histogram": self.hop_histogram,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&summary)?)?;
        let mut w = BufWriter::new(File::create(dir.join("flows.csv"))?);
        writeln!(w, "src,dst,rate,generated,delivered,dropped,mean_stretch,mean_hops,mean_rtt_s,jitter_s")?;
        for f in &self.flows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                f.src,
                f.dst,
                f.rate,
                f.generated,
                f.delivered,
                f.dropped,
                f.mean_stretch,
                f.mean_hops,
                f.mean_rtt_s,
                f.jitter_s
            )?;
        }
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join("links.csv"))?);
        writeln!(w, "a,b,kind,forwarded,usage")?;
        for l in &self.links {
            let kind = if l.kind == LinkKind::Isl { "isl" } else { "gsl" };
            writeln!(w, "{},{},{kind},{},{}", l.a, l.b, l.forwarded, l.usage)?;
        }
        w.flush()?;
        Ok(())
    }
}
