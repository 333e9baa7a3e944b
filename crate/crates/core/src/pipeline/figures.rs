//! Plain SVG figures: indicator histograms with a kernel density overlay and
//! a village-versus-plot scatter with its least-squares line.

use crate::econ::ols_fit;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

/// Silverman's rule-of-thumb bandwidth; `None` without spread.
pub fn silverman_bandwidth(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut s = values.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    if s[0] == s[n - 1] {
        return None;
    }
    let q = |p: f64| {
        let pos = p * (n - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    (h > 0.0).then_some(h)
}

pub fn gaussian_kde(values: &[f64], h: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>()
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_range: (f64, f64), y_range: (f64, f64), x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    s.push_str(&format!(
        "<path d=\"M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}\" stroke=\"black\" fill=\"none\"/>\n"
    ));
    for (v, x) in [(x_range.0, x0), (x_range.1, x1)] {
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>\n",
            y0 + 14.0
        ));
    }
    for (v, y) in [(y_range.0, y0), (y_range.1, y1)] {
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{y:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.3}</text>\n",
            x0 - 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        H - 10.0,
        escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));
}

fn map(v: f64, from: (f64, f64), to: (f64, f64)) -> f64 {
    to.0 + (v - from.0) / (from.1 - from.0) * (to.1 - to.0)
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Density histogram with a Gaussian kernel density curve.
pub fn histogram_svg(title: &str, values: &[f64], bins: usize) -> String {
    let mut s = header(title);
    let lo = values.iter().copied().fold(0.0f64, f64::min);
    let hi = values.iter().copied().fold(lo, f64::max);
    let (lo, hi) = widen(lo, hi);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = values.len().max(1) as f64;
    let density: Vec<f64> = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let h = silverman_bandwidth(values);
    let curve: Vec<(f64, f64)> = match h {
        Some(h) => (0..=100)
            .map(|k| {
                let x = lo + (hi - lo) * k as f64 / 100.0;
                (x, gaussian_kde(values, h, x))
            })
            .collect(),
        None => Vec::new(),
    };
    let ymax = density.iter().chain(curve.iter().map(|(_, y)| y)).copied().fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    axes(&mut s, (lo, hi), (0.0, ymax), "burn fraction", "density");
    let xs = (PAD, W - PAD / 2.0);
    let ys = (H - PAD, PAD);
    for (b, d) in density.iter().enumerate() {
        let xa = map(lo + b as f64 * width, (lo, hi), xs);
        let xb = map(lo + (b + 1) as f64 * width, (lo, hi), xs);
        let yt = map(*d, (0.0, ymax), ys);
        s.push_str(&format!(
            "<rect x=\"{xa:.2}\" y=\"{yt:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"#3182bd\"/>\n",
            xb - xa,
            ys.0 - yt
        ));
    }
    if !curve.is_empty() {
        let pts: Vec<String> = curve
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", map(*x, (lo, hi), xs), map(*y, (0.0, ymax), ys)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#de2d26\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
    }
    s.push_str(&format!("<!-- n={} bandwidth={} -->\n", values.len(), h.map(|h| format!("{h:.6}")).unwrap_or_else(|| "none".into())));
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedLine {
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line of `y` on `x`; `None` with fewer than two points or
/// no spread in `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<FittedLine> {
    if x.len() < 2 {
        return None;
    }
    let names = ["slope".to_string(), "intercept".to_string()];
    let sol = ols_fit(y, &[x.to_vec(), vec![1.0; x.len()]], &names).ok()?;
    Some(FittedLine {
        slope: sol.coefficients[0],
        intercept: sol.coefficients[1],
    })
}

/// Scatter of paired values with the fitted line when one exists.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64]) -> (String, Option<FittedLine>) {
    let mut s = header(title);
    let lo = x.iter().chain(y).copied().fold(0.0f64, f64::min);
    let hi = x.iter().chain(y).copied().fold(lo, f64::max);
    let r = widen(lo, hi);
    axes(&mut s, r, r, x_label, y_label);
    let xs = (PAD, W - PAD / 2.0);
    let ys = (H - PAD, PAD);
    for (a, b) in x.iter().zip(y) {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#3182bd\" fill-opacity=\"0.7\"/>\n",
            map(*a, r, xs),
            map(*b, r, ys)
        ));
    }
    let line = fit_line(x, y);
    match line {
        Some(l) => {
            s.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#de2d26\" stroke-width=\"2\"/>\n",
                map(r.0, r, xs),
                map(l.intercept + l.slope * r.0, r, ys),
                map(r.1, r, xs),
                map(l.intercept + l.slope * r.1, r, ys)
            ));
            s.push_str(&format!("<!-- n={} slope={:.6} intercept={:.6} -->\n", x.len(), l.slope, l.intercept));
        }
        None => s.push_str(&format!("<!-- n={} fitted line omitted -->\n", x.len())),
    }
    s.push_str("</svg>\n");
    (s, line)
}
