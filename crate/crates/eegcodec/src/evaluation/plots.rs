//! SVG plot emission for sweep curves, mode comparison bars, and
//! original-vs-reconstruction overlays, plus a text summary.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axis_layer(xlabel: &str, ylabel: &str) -> String {
    format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{xl}</text>\n\
         <text x=\"16\" y=\"{cy}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {cy})\">{yl}</text>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0,
        t = MARGIN / 2.0,
        cx = W / 2.0,
        ly = H - 16.0,
        cy = H / 2.0,
        xl = escape(xlabel),
        yl = escape(ylabel),
    )
}

fn scale(points: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    ((xmin, xmax), (ymin, ymax))
}

fn to_px(x: f64, y: f64, xr: (f64, f64), yr: (f64, f64)) -> (f64, f64) {
    let px = MARGIN + (x - xr.0) / (xr.1 - xr.0) * (W - 1.5 * MARGIN);
    let py = (H - MARGIN) - (y - yr.0) / (yr.1 - yr.0) * (H - 1.5 * MARGIN);
    (px, py)
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Multi-series line chart.
pub fn line_chart(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let mut all: Vec<(f64, f64)> = Vec::new();
    for (_, pts) in series {
        all.extend(pts.iter().copied());
    }
    let (xr, yr) = scale(&all);
    let mut out = svg_header(title);
    out.push_str(&axis_layer(xlabel, ylabel));
    for (si, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_px(x, y, xr, yr);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            let (px, py) = to_px(x, y, xr, yr);
            out.push_str(&format!(
                "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            W - MARGIN / 2.0 - 150.0,
            MARGIN / 2.0 + 16.0 * si as f64,
            escape(name)
        ));
    }
    // y-range annotations
    out.push_str(&format!(
        "<text x=\"{m}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n\
         <text x=\"{m}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n",
        H - MARGIN + 4.0,
        yr.0,
        MARGIN / 2.0 + 8.0,
        yr.1,
        m = MARGIN - 4.0,
    ));
    out.push_str("</svg>\n");
    out
}

/// Labeled bar chart.
pub fn bar_chart(title: &str, ylabel: &str, bars: &[(String, f64)]) -> String {
    let ymax = bars.iter().map(|(_, v)| *v).fold(f64::MIN_POSITIVE, f64::max);
    let mut out = svg_header(title);
    out.push_str(&axis_layer("", ylabel));
    let n = bars.len().max(1) as f64;
    let span = W - 1.5 * MARGIN;
    let bw = (span / n * 0.7).min(80.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let cx = MARGIN + span * (i as f64 + 0.5) / n;
        let h = (v / ymax) * (H - 1.5 * MARGIN);
        let y = (H - MARGIN) - h;
        let color = COLORS[i % COLORS.len()];
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{bw:.1}\" height=\"{h:.1}\" fill=\"{color}\"/>\n",
            cx - bw / 2.0
        ));
        out.push_str(&format!(
            "<text x=\"{cx:.1}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            H - MARGIN + 14.0,
            escape(label)
        ));
        out.push_str(&format!(
            "<text x=\"{cx:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>\n",
            y - 4.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Original-vs-reconstruction overlay with a maximum-gap annotation.
pub fn overlay_chart(title: &str, original: &[f32], reconstruction: &[f32]) -> String {
    let n = original.len().min(reconstruction.len());
    let orig: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, original[i] as f64)).collect();
    let rec: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, reconstruction[i] as f64)).collect();
    let max_gap = (0..n)
        .map(|i| (original[i] - reconstruction[i]).abs())
        .fold(0.0f32, f32::max);
    let svg = line_chart(
        title,
        "sample",
        "normalized amplitude",
        &[("original".into(), orig), ("reconstruction".into(), rec)],
    );
    let note = format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">max gap {max_gap:.4}</text>\n</svg>\n",
        MARGIN,
        MARGIN / 2.0
    );
    svg.replace("</svg>\n", &note)
}

/// Render every known result file in `results_dir` into SVG plots plus a
/// text summary. Returns the produced files; errors if nothing could be
/// produced, listing the absent inputs.
pub fn emit_plots(results_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let results_dir = results_dir.as_ref();
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut produced = Vec::new();
    let mut absent = Vec::new();
    let mut summary = String::from("plot summary\n============\n");

    let depth_path = results_dir.join("depth_sweep.tsv");
    if depth_path.exists() {
        let text = std::fs::read_to_string(&depth_path)?;
        let pts = parse_sweep_tsv(&text)?;
        let series = vec![(
            "spectrogram loss".to_string(),
            pts.iter().map(|(k, l, _)| (*k as f64, *l)).collect::<Vec<_>>(),
        )];
        let svg = line_chart("Reconstruction loss vs codebook depth", "codebooks kept", "loss", &series);
        let path = out_dir.join("depth_curve.svg");
        std::fs::write(&path, svg)?;
        summary.push_str(&format!("depth curve: {} points\n", pts.len()));
        produced.push(path);
    } else {
        absent.push(depth_path);
    }

    let rv_path = results_dir.join("rate_vocab.tsv");
    if rv_path.exists() {
        let text = std::fs::read_to_string(&rv_path)?;
        let pts = parse_label_tsv(&text)?;
        let svg = bar_chart("Rate / vocabulary configurations", "spectrogram loss", &pts);
        let path = out_dir.join("rate_vocab_bars.svg");
        std::fs::write(&path, svg)?;
        summary.push_str(&format!("rate/vocab bars: {} configurations\n", pts.len()));
        produced.push(path);
    } else {
        absent.push(rv_path);
    }

    let bench_path = results_dir.join("bench_report.tsv");
    if bench_path.exists() {
        let text = std::fs::read_to_string(&bench_path)?;
        let mut bars = Vec::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() >= 4 && f[2] == "random-forest" {
                bars.push((f[1].to_string(), f[3].parse::<f64>().unwrap_or(0.0)));
            }
        }
        let svg = bar_chart("Downstream accuracy by mode (random forest)", "accuracy", &bars);
        let path = out_dir.join("bench_accuracy.svg");
        std::fs::write(&path, svg)?;
        summary.push_str(&format!("benchmark bars: {} modes\n", bars.len()));
        produced.push(path);
    } else {
        absent.push(bench_path);
    }

    let orig_path = results_dir.join("overlay_original.eegc");
    let rec_path = results_dir.join("overlay_reconstruction.eegc");
    if orig_path.exists() && rec_path.exists() {
        let orig = crate::data_io::load_container(&orig_path)?;
        let rec = crate::data_io::load_container(&rec_path)?;
        let a: Vec<f32> = orig.data.row(0).to_vec();
        let b: Vec<f32> = rec.data.row(0).to_vec();
        let take = a.len().min(b.len()).min(2048);
        let svg = overlay_chart(
            &format!("Channel {} original vs reconstruction", orig.channels[0].name),
            &a[..take],
            &b[..take],
        );
        let path = out_dir.join("overlay_trace.svg");
        std::fs::write(&path, svg)?;
        summary.push_str("overlay trace: 1 channel\n");
        produced.push(path);
    } else {
        if !orig_path.exists() {
            absent.push(orig_path);
        }
        if !rec_path.exists() {
            absent.push(rec_path);
        }
    }

    if produced.is_empty() {
        let names: Vec<String> = absent.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Data(format!(
            "no result files found; looked for: {}",
            names.join(", ")
        )));
    }
    if !absent.is_empty() {
        summary.push_str("absent inputs:\n");
        for p in &absent {
            summary.push_str(&format!("  {}\n", p.display()));
        }
    }
    let spath = out_dir.join("summary.txt");
    std::fs::write(&spath, summary)?;
    produced.push(spath);
    Ok(produced)
}

fn parse_sweep_tsv(text: &str) -> Result<Vec<(usize, f64, f64)>> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 4 {
            continue;
        }
        out.push((
            f[1].parse().map_err(|_| Error::Format("bad sweep k".into()))?,
            f[2].parse().map_err(|_| Error::Format("bad sweep loss".into()))?,
            f[3].parse().map_err(|_| Error::Format("bad sweep bits".into()))?,
        ));
    }
    Ok(out)
}

fn parse_label_tsv(text: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() >= 3 {
            out.push((
                f[0].to_string(),
                f[2].parse().map_err(|_| Error::Format("bad loss".into()))?,
            ));
        }
    }
    Ok(out)
}
