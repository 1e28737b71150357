//! Evaluation report text and the benchmark figure.

use std::fs;
use std::path::Path;

use plotters::prelude::*;

use s2ut_core::bench::BenchReport;

use crate::error::{io_err, Error, Result};
use crate::pipeline::EvalSummary;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Corpus scores, WER distribution and the pairwise significance grid.
pub fn eval_text(s: &EvalSummary) -> String {
    let mut out = format!("split = {}\nbleu = sacrebleu-compatible case:lc|eff:no|tok:13a|smooth:exp\n", s.split);
    for sys in &s.systems {
        let mut w = sys.wers.clone();
        w.sort_by(f64::total_cmp);
        let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
        let n = &sys.name;
        out.push_str(&format!("{n}.asr_bleu = {:.4}\n", sys.asr_bleu));
        out.push_str(&format!("{n}.ctc_bleu = {:.4}\n", sys.ctc_bleu));
        out.push_str(&format!("{n}.speech_text_agreement = {:.4}\n", sys.agreement));
        out.push_str(&format!("{n}.truncated = {}\n", sys.truncated));
        out.push_str(&format!("{n}.wer.mean = {mean:.4}\n"));
        for (label, q) in [("min", 0.0), ("p25", 0.25), ("median", 0.5), ("p75", 0.75), ("p90", 0.9), ("max", 1.0)] {
            out.push_str(&format!("{n}.wer.{label} = {:.4}\n", quantile(&w, q)));
        }
        out.push_str(&format!("{n}.wer.over_80 = {}\n", w.iter().filter(|&&x| x > 80.0).count()));
    }
    if !s.significance.is_empty() {
        out.push_str("\n# paired bootstrap p-values (ASR-BLEU)\n");
        let names: Vec<&str> = s.systems.iter().map(|x| x.name.as_str()).collect();
        out.push_str(&format!("{:>10}", ""));
        for n in &names {
            out.push_str(&format!(" {n:>10}"));
        }
        out.push('\n');
        for a in &names {
            out.push_str(&format!("{a:>10}"));
            for b in &names {
                let p = s.significance.iter().find(|(x, y, _)| (x == a && y == b) || (x == b && y == a)).map(|t| t.2);
                match p {
                    Some(p) => out.push_str(&format!(" {p:>10.4}")),
                    None => out.push_str(&format!(" {:>10}", "-")),
                }
            }
            out.push('\n');
        }
    }
    out
}

type Metric = (&'static str, fn(&BenchReport) -> f64);

/// Loads every `*.json` report in `dir` and redraws `benchmark.svg`.
pub fn plot_bench_dir(dir: &Path) -> Result<()> {
    let mut reports = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let r: BenchReport = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            reports.push(r);
        }
    }
    reports.sort_by(|a, b| (&a.system, &a.subset).cmp(&(&b.system, &b.subset)));
    plot_reports(&reports, &dir.join("benchmark.svg"))
}

/// Three panels (runtime, FLOPs, peak memory per sample); one bar group per
/// subset, one bar per system.
pub fn plot_reports(reports: &[BenchReport], path: &Path) -> Result<()> {
    let subsets = ["random", "shortest", "longest"];
    let mut systems: Vec<&str> = reports.iter().map(|r| r.system.as_str()).collect();
    systems.sort();
    systems.dedup();
    let plot_err = |e: String| Error::Data(format!("{}: {e}", path.display()));
    let root = SVGBackend::new(path, (1200, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let panels = root.split_evenly((1, 3));
    let metrics: [Metric; 3] = [
        ("runtime per sample (ms)", |r| 1e3 * r.seconds_per_sample),
        ("GFLOPs per sample", |r| r.flops_per_sample / 1e9),
        ("max memory (MB)", |r| r.peak_bytes as f64 / 1e6),
    ];
    for (panel, (title, metric)) in panels.iter().zip(metrics) {
        let top = reports.iter().map(metric).fold(0.0, f64::max).max(1e-9) * 1.15;
        let mut chart = ChartBuilder::on(panel)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(55)
            .build_cartesian_2d(0.0..subsets.len() as f64, 0.0..top)
            .map_err(|e| plot_err(e.to_string()))?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(subsets.len() * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - i as f64 - 0.5).abs() < 1e-6 && i < subsets.len() {
                    subsets[i].to_string()
                } else {
                    String::new()
                }
            })
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;
        let width = 0.8 / systems.len().max(1) as f64;
        for (si, sys) in systems.iter().enumerate() {
            let color = Palette99::pick(si).to_rgba();
            let bars: Vec<Rectangle<(f64, f64)>> = reports
                .iter()
                .filter(|r| r.system == *sys)
                .filter_map(|r| subsets.iter().position(|s| *s == r.subset).map(|i| (i, metric(r))))
                .map(|(i, v)| {
                    let x0 = i as f64 + 0.1 + si as f64 * width;
                    Rectangle::new([(x0, 0.0), (x0 + width * 0.9, v)], color.filled())
                })
                .collect();
            chart
                .draw_series(bars)
                .map_err(|e| plot_err(e.to_string()))?
                .label(*sys)
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()
            .map_err(|e| plot_err(e.to_string()))?;
    }
    root.present().map_err(|e| plot_err(e.to_string()))
}
