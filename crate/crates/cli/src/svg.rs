//! Minimal SVG rendering of a phase diagram: `S` against `eta`, one polyline
//! per contiguous run of a branch with unchanged stability.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use densenematic::equilibria::Stability;

use crate::tables::PhaseRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 190.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 55.0;

fn colour(branch: &str) -> &'static str {
    match branch {
        "isotropic" => "#1f77b4",
        "prolate" => "#d62728",
        "oblate" => "#2ca02c",
        "unstable_near_zero_prolate" => "#9467bd",
        _ => "#ff7f0e",
    }
}

fn dash(stability: Stability) -> &'static str {
    match stability {
        Stability::Minimum => "",
        Stability::Saddle => " stroke-dasharray=\"6 4\"",
        Stability::Maximum => " stroke-dasharray=\"2 3\"",
        Stability::Degenerate => " stroke-dasharray=\"10 3 2 3\"",
    }
}

/// Tick positions at a 1-2-5 spacing covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut out = Vec::new();
    let mut k = (lo / step).ceil();
    while k * step <= hi + 1e-9 * span {
        let v = k * step;
        out.push(if v.abs() < 1e-12 * step { 0.0 } else { v });
        k += 1.0;
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{:.3}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render the non-gap rows. `grid` is the sweep in output order; a segment
/// is broken wherever a branch is missing at a grid point or changes
/// stability.
pub fn phase_svg(rows: &[PhaseRecord], grid: &[f64]) -> String {
    let pts: Vec<&PhaseRecord> = rows.iter().filter(|r| !r.is_gap()).collect();
    let (mut x0, mut x1) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (-1.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 0.05;
        x1 += 0.05;
    }
    let (y0, y1) = (-0.5, 1.0);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let index: BTreeMap<u64, usize> = grid.iter().enumerate().map(|(i, e)| (e.to_bits(), i)).collect();
    let mut series: BTreeMap<String, Vec<(usize, f64, f64, Stability)>> = BTreeMap::new();
    for r in &pts {
        let (Some(s), Some(st)) = (r.s, r.stability) else {
            continue;
        };
        let i = index.get(&r.eta.to_bits()).copied().unwrap_or(usize::MAX);
        series.entry(r.branch.clone()).or_default().push((i, r.eta, s, st));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(svg, "<g font-family=\"sans-serif\" font-size=\"11\">");
    for t in ticks(x0, x1) {
        let x = sx(t);
        let yb = MARGIN_T + ph;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{yb}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            yb + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            yb + 18.0,
            label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{MARGIN_L}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 8.0,
            y + 4.0,
            label(t)
        );
    }
    if y0 < 0.0 && y1 > 0.0 {
        let y = sy(0.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#bbbbbb\"/>",
            MARGIN_L + pw
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\">eta</text>",
        MARGIN_L + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 {:.2})\">S</text>",
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0
    );
    let _ = writeln!(svg, "</g>");

    for (name, mut list) in series.clone() {
        list.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut runs: Vec<Vec<(f64, f64)>> = Vec::new();
        let mut styles: Vec<Stability> = Vec::new();
        let mut prev: Option<(usize, Stability)> = None;
        for (i, eta, s, st) in list {
            let contiguous = matches!(prev, Some((pi, pst)) if pst == st && i != usize::MAX && pi + 1 == i);
            if !contiguous {
                runs.push(Vec::new());
                styles.push(st);
            }
            runs.last_mut().unwrap().push((eta, s));
            prev = Some((i, st));
        }
        let _ = writeln!(svg, "<g class=\"{}\">", escape(&name));
        for (run, st) in runs.iter().zip(styles) {
            let c = colour(&name);
            if run.len() == 1 {
                let (e, s) = run[0];
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{c}\"/>",
                    sx(e),
                    sy(s)
                );
                continue;
            }
            let points: Vec<String> = run.iter().map(|&(e, s)| format!("{:.2},{:.2}", sx(e), sy(s))).collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.8\"{} points=\"{}\"/>",
                dash(st),
                points.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
    }

    let lx = MARGIN_L + pw + 15.0;
    let _ = writeln!(svg, "<g font-family=\"sans-serif\" font-size=\"11\">");
    let mut ly = MARGIN_T + 10.0;
    for name in series.keys() {
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{}\" stroke-width=\"1.8\"/>",
            lx + 22.0,
            colour(name)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            lx + 28.0,
            ly + 4.0,
            escape(name)
        );
        ly += 18.0;
    }
    ly += 8.0;
    for st in [
        Stability::Minimum,
        Stability::Saddle,
        Stability::Maximum,
        Stability::Degenerate,
    ] {
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"black\"{}/>",
            lx + 22.0,
            dash(st)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            lx + 28.0,
            ly + 4.0,
            st.label()
        );
        ly += 18.0;
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_spacing() {
        assert_eq!(ticks(0.0, 1.0).len(), 6);
        let t = ticks(-0.5, 0.6);
        assert!(t.contains(&0.0));
        assert_eq!(label(0.30000000000000004), "0.3");
        assert_eq!(label(-0.0), "0");
    }

    #[test]
    fn segments_break_on_stability_change() {
        let mk = |eta: f64, s: f64, st| PhaseRecord {
            eta,
            branch: "prolate".into(),
            s: Some(s),
            l: Some(0.0),
            j: Some(0.0),
            stability: Some(st),
            x2: Some(0.5),
            p_star: Some(1.0),
            reason: String::new(),
        };
        let grid = [0.1, 0.2, 0.3, 0.4];
        let rows = vec![
            mk(0.1, 0.5, Stability::Minimum),
            mk(0.2, 0.6, Stability::Minimum),
            mk(0.3, 0.7, Stability::Saddle),
            mk(0.4, 0.8, Stability::Saddle),
        ];
        let svg = phase_svg(&rows, &grid);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
