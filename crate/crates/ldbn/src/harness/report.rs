//! Stream reports: the per-frame CSV and the run summary.
//!
//! The CSV schema is stable: a header row is always present, floats carry
//! six significant digits, booleans are 0/1. Columns:
//!
//! ```text
//! frame_idx,entropy,running_accuracy,infer_ms,adapt_ms,total_ms,deadline_miss
//! ```

use crate::error::Result;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

pub const STREAM_CSV_HEADER: &str =
    "frame_idx,entropy,running_accuracy,infer_ms,adapt_ms,total_ms,deadline_miss";

/// Frames in the head/tail accuracy windows of the summary.
pub const ACCURACY_WINDOW: usize = 100;

/// One streamed frame as reported. `frame_accuracy` is this frame's own
/// score and feeds the summary windows; the CSV carries the running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRow {
    pub frame_idx: usize,
    /// Mean prediction entropy of this frame, nats.
    pub entropy: f32,
    pub frame_accuracy: f32,
    /// Cumulative mean accuracy over frames 0..=frame_idx.
    pub running_accuracy: f32,
    pub infer_ms: f64,
    /// All adaptation-attributable time: the entropy backward, the update,
    /// and for buffered batch sizes the extra batch forward.
    pub adapt_ms: f64,
    pub total_ms: f64,
    pub deadline_miss: bool,
}

/// Aggregates over one stream run.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub frames: usize,
    pub deadline_ms: f64,
    pub miss_rate: f64,
    pub mean_total_ms: f64,
    pub median_total_ms: f64,
    pub p99_total_ms: f64,
    /// Mean per-frame accuracy over the first [`ACCURACY_WINDOW`] frames.
    pub initial_accuracy: f32,
    /// Mean per-frame accuracy over the last [`ACCURACY_WINDOW`] frames.
    pub final_accuracy: f32,
    pub mean_entropy: f32,
    pub steps: u64,
    pub step_errors: usize,
    /// Whole-stream accuracy of the final model, recomputed after the run
    /// with updates off. Filled by drivers that do the second pass.
    pub posthoc_accuracy: Option<f32>,
}

#[derive(Debug, Clone)]
pub struct StreamReport {
    pub rows: Vec<StreamRow>,
    pub summary: StreamSummary,
}

impl StreamReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(STREAM_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.frame_idx,
                sig6(r.entropy as f64),
                sig6(r.running_accuracy as f64),
                sig6(r.infer_ms),
                sig6(r.adapt_ms),
                sig6(r.total_ms),
                u8::from(r.deadline_miss),
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(self.to_csv().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Human-oriented multi-line summary for stdout.
    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "frames            {}", s.frames);
        let _ = writeln!(out, "adapt steps       {} ({} discarded)", s.steps, s.step_errors);
        let _ = writeln!(
            out,
            "latency ms        mean {} median {} p99 {} (deadline {})",
            sig6(s.mean_total_ms),
            sig6(s.median_total_ms),
            sig6(s.p99_total_ms),
            sig6(s.deadline_ms),
        );
        let _ = writeln!(out, "deadline miss     {}", sig6(s.miss_rate));
        let _ = writeln!(
            out,
            "accuracy          first-{} {} last-{} {}",
            ACCURACY_WINDOW.min(s.frames),
            sig6(s.initial_accuracy as f64),
            ACCURACY_WINDOW.min(s.frames),
            sig6(s.final_accuracy as f64),
        );
        let _ = writeln!(out, "mean entropy      {}", sig6(s.mean_entropy as f64));
        if let Some(a) = s.posthoc_accuracy {
            let _ = writeln!(out, "post-hoc accuracy {}", sig6(a as f64));
        }
        out
    }
}

/// Builds the summary from finished rows.
pub fn summarize(rows: &[StreamRow], deadline_ms: f64, steps: u64, step_errors: usize) -> StreamSummary {
    let n = rows.len();
    let mut totals: Vec<f64> = rows.iter().map(|r| r.total_ms).collect();
    totals.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
    let window = ACCURACY_WINDOW.min(n);
    let mean_over = |slice: &[StreamRow]| {
        slice.iter().map(|r| r.frame_accuracy as f64).sum::<f64>() / slice.len().max(1) as f64
    };
    StreamSummary {
        frames: n,
        deadline_ms,
        miss_rate: rows.iter().filter(|r| r.deadline_miss).count() as f64 / n.max(1) as f64,
        mean_total_ms: totals.iter().sum::<f64>() / n.max(1) as f64,
        median_total_ms: percentile(&totals, 0.50),
        p99_total_ms: percentile(&totals, 0.99),
        initial_accuracy: mean_over(&rows[..window]) as f32,
        final_accuracy: mean_over(&rows[n - window..]) as f32,
        mean_entropy: (rows.iter().map(|r| r.entropy as f64).sum::<f64>() / n.max(1) as f64)
            as f32,
        steps,
        step_errors,
        posthoc_accuracy: None,
    }
}

/// Nearest-rank percentile of an ascending-sorted slice; 0 for empty input.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Six significant digits, scientific notation.
pub fn sig6(v: f64) -> String {
    format!("{v:.5e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, acc: f32, total: f64, miss: bool) -> StreamRow {
        StreamRow {
            frame_idx: i,
            entropy: 1.5,
            frame_accuracy: acc,
            running_accuracy: acc,
            infer_ms: total * 0.7,
            adapt_ms: total * 0.3,
            total_ms: total,
            deadline_miss: miss,
        }
    }

    #[test]
    fn csv_has_header_and_six_significant_digits() {
        let rows = vec![row(0, 0.5, 12.345678, false)];
        let report = StreamReport {
            summary: summarize(&rows, 33.3, 1, 0),
            rows,
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(STREAM_CSV_HEADER));
        let data = lines.next().unwrap();
        assert_eq!(data, "0,1.50000e0,5.00000e-1,8.64197e0,3.70370e0,1.23457e1,0");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn summary_windows_and_percentiles() {
        let rows: Vec<StreamRow> = (0..200)
            .map(|i| row(i, if i < 100 { 0.2 } else { 0.8 }, (i + 1) as f64, i % 4 == 0))
            .collect();
        let s = summarize(&rows, 50.0, 200, 0);
        assert!((s.initial_accuracy - 0.2).abs() < 1e-6);
        assert!((s.final_accuracy - 0.8).abs() < 1e-6);
        assert!((s.miss_rate - 0.25).abs() < 1e-12);
        assert_eq!(s.median_total_ms, 100.0);
        assert_eq!(s.p99_total_ms, 198.0);
        assert_eq!(s.frames, 200);
    }

    #[test]
    fn percentile_boundaries() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.50), 2.0);
        assert_eq!(percentile(&v, 1.00), 4.0);
        assert_eq!(percentile(&v, 0.99), 4.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }
}
