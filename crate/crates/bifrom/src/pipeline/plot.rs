//! Static SVG heatmap of a bifurcation diagram plus a columnar text dump.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone)]
struct DiagramRow {
    mu1: f64,
    mu2: f64,
    observable: f64,
}

fn parse_diagram(path: &Path) -> Result<Vec<DiagramRow>, PlotError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlotError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(PlotError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                reason: "expected mu1,mu2,observable,converged".into(),
            });
        }
        let parse = |s: &str| -> Result<f64, PlotError> {
            s.trim().parse().map_err(|_| PlotError::Malformed {
                path: path.display().to_string(),
                line: idx + 1,
                reason: format!("bad number {s:?}"),
            })
        };
        rows.push(DiagramRow {
            mu1: parse(fields[0])?,
            mu2: parse(fields[1])?,
            observable: parse(fields[2])?,
        });
    }
    if rows.is_empty() {
        return Err(PlotError::Malformed {
            path: path.display().to_string(),
            line: 1,
            reason: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Five-anchor sequential colormap (dark blue to yellow).
fn colormap(t: f64) -> (u8, u8, u8) {
    const ANCHORS: [(f64, f64, f64); 5] = [
        (0.267, 0.005, 0.329),
        (0.229, 0.322, 0.546),
        (0.127, 0.566, 0.551),
        (0.369, 0.789, 0.383),
        (0.993, 0.906, 0.144),
    ];
    let t = t.clamp(0.0, 1.0) * (ANCHORS.len() - 1) as f64;
    let lower = (t.floor() as usize).min(ANCHORS.len() - 2);
    let frac = t - lower as f64;
    let mix = |a: f64, b: f64| ((a + frac * (b - a)) * 255.0).round() as u8;
    (
        mix(ANCHORS[lower].0, ANCHORS[lower + 1].0),
        mix(ANCHORS[lower].1, ANCHORS[lower + 1].1),
        mix(ANCHORS[lower].2, ANCHORS[lower + 1].2),
    )
}

/// Renders `diagram.csv` into an SVG heatmap over the parameter box and a
/// three-column text file (`mu1 mu2 value`).
pub fn plot_diagram(input: &Path, svg_out: &Path, text_out: &Path) -> Result<(), PlotError> {
    let rows = parse_diagram(input)?;

    let mut text = String::new();
    for r in &rows {
        let _ = writeln!(text, "{} {} {}", r.mu1, r.mu2, r.observable);
    }
    std::fs::write(text_out, text).map_err(|source| PlotError::Write {
        path: text_out.display().to_string(),
        source,
    })?;

    let mut mu1s: Vec<f64> = rows.iter().map(|r| r.mu1).collect();
    let mut mu2s: Vec<f64> = rows.iter().map(|r| r.mu2).collect();
    mu1s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mu1s.dedup();
    mu2s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mu2s.dedup();
    let (n1, n2) = (mu1s.len(), mu2s.len());

    let vmin = rows.iter().map(|r| r.observable).fold(f64::INFINITY, f64::min);
    let vmax = rows
        .iter()
        .map(|r| r.observable)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };

    const CELL: f64 = 14.0;
    const MARGIN_LEFT: f64 = 70.0;
    const MARGIN_BOTTOM: f64 = 50.0;
    const MARGIN_TOP: f64 = 30.0;
    const BAR_WIDTH: f64 = 18.0;
    const BAR_GAP: f64 = 24.0;
    let plot_w = CELL * n1 as f64;
    let plot_h = CELL * n2 as f64;
    let width = MARGIN_LEFT + plot_w + BAR_GAP + BAR_WIDTH + 60.0;
    let height = MARGIN_TOP + plot_h + MARGIN_BOTTOM;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"18\" font-family=\"monospace\" font-size=\"13\">steady-state observable over the parameter box</text>",
        MARGIN_LEFT
    );

    // Cells: mu1 rightward, mu2 upward.
    for r in &rows {
        let i = mu1s.iter().position(|&v| v == r.mu1).unwrap();
        let j = mu2s.iter().position(|&v| v == r.mu2).unwrap();
        let x = MARGIN_LEFT + CELL * i as f64;
        let y = MARGIN_TOP + plot_h - CELL * (j + 1) as f64;
        let (red, green, blue) = colormap((r.observable - vmin) / span);
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" fill=\"rgb({red},{green},{blue})\"/>"
        );
    }

    // Axis labels at the box corners.
    let axis_y = MARGIN_TOP + plot_h + 16.0;
    let _ = writeln!(
        svg,
        "<text x=\"{MARGIN_LEFT:.1}\" y=\"{axis_y:.1}\" font-family=\"monospace\" font-size=\"11\">mu1={}</text>",
        mu1s[0]
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{axis_y:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">mu1={}</text>",
        MARGIN_LEFT + plot_w,
        mu1s[n1 - 1]
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">mu2={}</text>",
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + plot_h - 2.0,
        mu2s[0]
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">mu2={}</text>",
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 10.0,
        mu2s[n2 - 1]
    );

    // Colorbar.
    let bar_x = MARGIN_LEFT + plot_w + BAR_GAP;
    const BAR_STEPS: usize = 64;
    let step_h = plot_h / BAR_STEPS as f64;
    for s in 0..BAR_STEPS {
        let t = s as f64 / (BAR_STEPS - 1) as f64;
        let (red, green, blue) = colormap(t);
        let y = MARGIN_TOP + plot_h - step_h * (s + 1) as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{bar_x:.1}\" y=\"{y:.1}\" width=\"{BAR_WIDTH:.1}\" height=\"{:.2}\" fill=\"rgb({red},{green},{blue})\"/>",
            step_h + 0.5
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">{vmax:.4}</text>",
        bar_x + BAR_WIDTH + 4.0,
        MARGIN_TOP + 10.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"11\">{vmin:.4}</text>",
        bar_x + BAR_WIDTH + 4.0,
        MARGIN_TOP + plot_h
    );
    let _ = writeln!(svg, "</svg>");

    std::fs::write(svg_out, svg).map_err(|source| PlotError::Write {
        path: svg_out.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_a_small_diagram() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("diagram.csv");
        std::fs::write(
            &csv,
            "mu1,mu2,observable,converged\n\
             0.5,0.06,0,1\n1.0,0.06,0.5,1\n\
             0.5,0.15,0,1\n1.0,0.15,0.25,1\n",
        )
        .unwrap();
        let svg = dir.path().join("diagram.svg");
        let txt = dir.path().join("diagram.txt");
        plot_diagram(&csv, &svg, &txt).unwrap();
        let svg_text = std::fs::read_to_string(&svg).unwrap();
        assert!(svg_text.starts_with("<svg"));
        assert!(svg_text.contains("rect"));
        let txt_text = std::fs::read_to_string(&txt).unwrap();
        assert_eq!(txt_text.lines().count(), 4);
        assert!(txt_text.lines().next().unwrap().split(' ').count() == 3);

        // Determinism: identical bytes on a rerun.
        let again_svg = dir.path().join("again.svg");
        let again_txt = dir.path().join("again.txt");
        plot_diagram(&csv, &again_svg, &again_txt).unwrap();
        assert_eq!(std::fs::read(&svg).unwrap(), std::fs::read(&again_svg).unwrap());
    }

    #[test]
    fn malformed_input_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("bad.csv");
        std::fs::write(&csv, "mu1,mu2\n1,2\n").unwrap();
        assert!(matches!(
            plot_diagram(&csv, &dir.path().join("o.svg"), &dir.path().join("o.txt")),
            Err(PlotError::Malformed { .. })
        ));
    }
}
