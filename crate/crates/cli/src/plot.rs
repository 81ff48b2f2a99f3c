use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Log-log line plot. Non-positive values are dropped.
pub fn loglog(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if !pts.is_empty() {
        x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor();
        x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil();
        y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
        y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
    }
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    for d in (x0 as i64)..=(x1 as i64) {
        let x = sx(d as f64);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{d}</text>"#, H - PAD + 16.0);
    }
    for d in (y0 as i64)..=(y1 as i64) {
        let y = sy(d as f64);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#, PAD - 4.0, y + 4.0);
        let _ = writeln!(s, r##"<line x1="{PAD}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, W - PAD);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLOURS[i % COLOURS.len()];
        let p: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .map(|(x, y)| format!("{:.1},{:.1}", sx(x.log10()), sy(y.log10())))
            .collect();
        if !p.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, p.join(" "));
        }
        let ly = PAD + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{c}">{}</text>"#,
            W - PAD - 150.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_well_formed_and_skips_nonpositive() {
        let s = loglog(
            "a < b",
            "eps",
            "norm",
            &[Series { label: "K=1".into(), points: vec![(0.1, 1e-2), (0.05, 0.0), (0.025, 6e-4)] }],
        );
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let line = s.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }

    #[test]
    fn empty_plot_still_renders() {
        assert!(loglog("t", "x", "y", &[]).contains("</svg>"));
    }
}
