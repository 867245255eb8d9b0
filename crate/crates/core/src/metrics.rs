//! Waveform metrics, heart-rate error and inference timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::qrs::estimate_hr;
use crate::rddm::{Model, SampleOptions};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::invalid("rmse of empty windows"));
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Discrete Fréchet distance with point cost `cost(i, j)`.
pub fn frechet_with(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("frechet distance of an empty curve"));
    }
    let mut prev = vec![0.0; m];
    let mut cur = vec![0.0; m];
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            let reach = match (i, j) {
                (0, 0) => c,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]),
            };
            cur[j] = reach.max(c);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Discrete Fréchet distance between two sampled curves sharing a time grid,
/// with amplitude difference as the point metric.
pub fn frechet_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    frechet_with(a.len(), b.len(), |i, j| (a[i] - b[j]).abs())
}

/// Mean RMSE and mean Fréchet distance over windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    pub fd: f64,
    pub n_windows: usize,
}

/// Scores `generated` against `truth`, both concatenated `len`-sample windows.
pub fn evaluate(generated: &[f64], truth: &[f64], len: usize) -> Result<EvalReport> {
    same_len(generated.len(), truth.len())?;
    if len == 0 || generated.is_empty() || generated.len() % len != 0 {
        return Err(Error::invalid("buffers are not a whole number of windows"));
    }
    let n = generated.len() / len;
    let (mut r, mut f) = (0.0, 0.0);
    for (g, t) in generated.chunks(len).zip(truth.chunks(len)) {
        r += rmse(g, t)?;
        f += frechet_distance(g, t)?;
    }
    Ok(EvalReport {
        rmse: r / n as f64,
        fd: f / n as f64,
        n_windows: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrReport {
    pub mae: f64,
    pub scored: usize,
    pub skipped: usize,
}

/// Mean absolute HR error in bpm. Windows where fewer than two R-peaks are
/// found are skipped and counted.
pub fn hr_mae(ecgs: &[Signal], truth_hrs: &[f64]) -> Result<HrReport> {
    same_len(ecgs.len(), truth_hrs.len())?;
    let mut sum = 0.0;
    let mut scored = 0;
    let mut skipped = 0;
    for (ecg, &truth) in ecgs.iter().zip(truth_hrs) {
        match estimate_hr(ecg) {
            Ok(hr) => {
                sum += (hr - truth).abs();
                scored += 1;
            }
            Err(Error::UndetectableRhythm { .. }) | Err(Error::InsufficientData { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if scored == 0 {
        return Err(Error::NoValidWindows { skipped });
    }
    Ok(HrReport {
        mae: sum / scored as f64,
        scored,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub method: String,
    pub steps: usize,
    pub windows: usize,
    pub total_ms: f64,
    pub per_window_ms: f64,
    pub net_calls: u64,
}

/// Times full translation of `conds` at each step count, after one untimed
/// warmup window. Runs on the calling thread.
pub fn bench_inference(model: &Model, conds: &[f32], len: usize, steps_list: &[usize], seed: u64) -> Result<Vec<TimingReport>> {
    Ok(bench_with_outputs(model, conds, len, steps_list, seed)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

/// [`bench_inference`] that also hands back the generated windows.
pub fn bench_with_outputs(
    model: &Model,
    conds: &[f32],
    len: usize,
    steps_list: &[usize],
    seed: u64,
) -> Result<Vec<(TimingReport, Vec<f32>)>> {
    if len == 0 || conds.is_empty() || conds.len() % len != 0 {
        return Err(Error::invalid("condition buffer is not a whole number of windows"));
    }
    let windows = conds.len() / len;
    let mut out = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let opts = SampleOptions {
            steps,
            seed,
            ..SampleOptions::default()
        };
        model.sample(&conds[..len], len, opts)?;
        model.reset_calls();
        let started = Instant::now();
        let generated = model.sample(conds, len, opts)?;
        let total_ms = started.elapsed().as_secs_f64() * 1e3;
        out.push((
            TimingReport {
                method: model.kind().to_string(),
                steps: if steps == 0 { model.sched().steps() } else { steps },
                windows,
                total_ms,
                per_window_ms: total_ms / windows as f64,
                net_calls: model.net_calls(),
            },
            generated,
        ));
    }
    Ok(out)
}

/// One row of the evaluation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub steps: usize,
    pub rmse: f64,
    pub fd: f64,
    pub hr_mae: Option<f64>,
    pub per_window_ms: Option<f64>,
}

pub const REPORT_HEADER: &str = "dataset,method,steps,rmse,fd,hr_mae,per_window_ms";

impl ReportRow {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{:.6},{:.6},{},{}",
            self.dataset,
            self.method,
            self.steps,
            self.rmse,
            self.fd,
            opt(self.hr_mae),
            opt(self.per_window_ms)
        )
    }
}

/// RMSE against per-window time, one point per row.
pub fn timing_svg(rows: &[ReportRow]) -> String {
    let pts: Vec<(f64, f64, &ReportRow)> = rows
        .iter()
        .filter_map(|r| r.per_window_ms.map(|t| (t, r.rmse, r)))
        .collect();
    let (w, h, pad) = (480.0, 320.0, 50.0);
    let max_t = pts.iter().map(|p| p.0).fold(1e-9, f64::max) * 1.1;
    let max_r = pts.iter().map(|p| p.1).fold(1e-9, f64::max) * 1.1;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n<!-- rddm-schema: 1 -->\n\
         <line x1=\"{pad}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\">ms per window</text>\n\
         <text x=\"12\" y=\"{cy}\" transform=\"rotate(-90 12 {cy})\" text-anchor=\"middle\">RMSE</text>\n",
        y0 = h - pad,
        x1 = w - pad,
        cx = w / 2.0,
        ty = h - 12.0,
        cy = h / 2.0
    );
    for (t, r, row) in pts {
        let x = pad + t / max_t * (w - 2.0 * pad);
        let y = h - pad - r / max_r * (h - 2.0 * pad);
        let color = if row.method == "rddm" { "crimson" } else { "steelblue" };
        s.push_str(&format!(
            "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"{color}\"/><text x=\"{tx:.1}\" y=\"{y:.1}\" font-size=\"10\">{} T={}</text>\n",
            row.method,
            row.steps,
            tx = x + 6.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        let a = [0.1, -0.3, 0.7];
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        assert!((rmse(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!(rmse(&a, &b[..2]).is_err());
    }

    #[test]
    fn frechet_small_example() {
        assert_eq!(frechet_distance(&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(frechet_distance(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert!(frechet_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn frechet_allows_time_warping() {
        // a shifted pulse costs nothing in amplitude-only Fréchet
        let a = [0.0, 1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0, 0.0];
        assert_eq!(frechet_distance(&a, &b).unwrap(), 0.0);
        assert_eq!(rmse(&a, &b).unwrap(), (0.5f64).sqrt());
    }

    #[test]
    fn report_line_format() {
        let row = ReportRow {
            dataset: "synth".into(),
            method: "rddm".into(),
            steps: 10,
            rmse: 0.25,
            fd: 0.5,
            hr_mae: None,
            per_window_ms: Some(1.5),
        };
        assert_eq!(row.csv_line(), "synth,rddm,10,0.250000,0.500000,,1.500000");
    }
}
