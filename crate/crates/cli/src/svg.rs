//! Static SVG plots of size curves: x is size ratio in percent, y is mean
//! Dice.

use std::fmt::Write as _;

use caranet::size::{CurveComparison, SizeCurve};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 2] = ["#1f4e9c", "#b8860b"];

struct Frame {
    x0: f64,
    x1: f64,
}

impl Frame {
    fn new(lo: f64, hi: f64) -> Self {
        Frame { x0: lo * 100.0, x1: hi * 100.0 }
    }

    fn x(&self, ratio: f64) -> f64 {
        let pct = ratio * 100.0;
        PAD + (pct - self.x0) / (self.x1 - self.x0).max(1e-12) * (W - 2.0 * PAD)
    }

    fn y(&self, dice: f64) -> f64 {
        H - PAD - dice.clamp(0.0, 1.0) * (H - 2.0 * PAD)
    }
}

fn header(s: &mut String, frame: &Frame, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (PAD, W - PAD, PAD, H - PAD);
    let _ = writeln!(s, r#"<path d="M{l} {t}V{b}H{r}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let d = i as f64 / 5.0;
        let y = frame.y(d);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{d:.1}</text>"#, l - 4.0, y + 4.0);
    }
    for i in 0..=4 {
        let pct = frame.x0 + (frame.x1 - frame.x0) * i as f64 / 4.0;
        let x = frame.x(pct / 100.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{pct:.2}</text>"#, b + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">size ratio (%)</text>"#, W / 2.0, H - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">mean Dice</text>"#,
        H / 2.0,
        H / 2.0
    );
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn series(s: &mut String, frame: &Frame, curve: &SizeCurve, color: &str, label: &str, slot: usize) {
    let pts: Vec<(f64, f64)> = curve
        .populated()
        .map(|(_, b)| (frame.x(0.5 * (b.lo + b.hi)), frame.y(b.mean_dice)))
        .collect();
    let line: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
    for (x, y) in &pts {
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}"/>"#);
    }
    let ly = PAD + 14.0 * slot as f64;
    let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, W - PAD - 120.0, ly - 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - PAD - 105.0, escape(label));
}

/// One curve.
pub fn curve_svg(curve: &SizeCurve, label: &str) -> String {
    let frame = Frame::new(curve.lo, curve.hi);
    let mut s = String::new();
    header(&mut s, &frame, label);
    series(&mut s, &frame, curve, COLORS[0], label, 0);
    s.push_str("</svg>\n");
    s
}

/// Two curves; intervals where `a` leads are shaded red, where `b` leads
/// blue.
pub fn comparison_svg(a: &SizeCurve, b: &SizeCurve, cmp: &CurveComparison, labels: [&str; 2]) -> String {
    let frame = Frame::new(a.lo, a.hi);
    let mut s = String::new();
    header(&mut s, &frame, &format!("{} vs {}", labels[0], labels[1]));
    for r in &cmp.rows {
        if r.diff == 0.0 {
            continue;
        }
        let (x0, x1) = (frame.x(r.lo), frame.x(r.hi));
        let (ya, yb) = (frame.y(r.a), frame.y(r.b));
        let fill = if r.diff > 0.0 { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="0.35"/>"#,
            ya.min(yb),
            x1 - x0,
            (ya - yb).abs()
        );
    }
    series(&mut s, &frame, a, COLORS[0], labels[0], 0);
    series(&mut s, &frame, b, COLORS[1], labels[1], 1);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}">red {:.4} / blue {:.4}</text>"#,
        PAD + 8.0,
        PAD + 4.0,
        cmp.sum_positive,
        cmp.sum_negative
    );
    s.push_str("</svg>\n");
    s
}
