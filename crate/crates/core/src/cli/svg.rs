//! Static SVG plots: loss curves and 2-D scatters.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for &(x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            (f.x0, f.x1, f.y0, f.y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if f.x1 <= f.x0 {
            f.x1 = f.x0 + 1.0;
        }
        if f.y1 <= f.y0 {
            f.y1 = f.y0 + 1.0;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn header(title: &str, f: &Frame, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        W / 2.0,
        escape(title),
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = write!(
        s,
        "<text x=\"{PAD}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3e}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.3e}</text>\n\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3e}</text>\n\
         <text x=\"4\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3e}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
         <text x=\"12\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{}</text>\n",
        H - PAD + 14.0,
        f.x0,
        W - PAD,
        H - PAD + 14.0,
        f.x1,
        H - PAD,
        f.y0,
        PAD + 10.0,
        f.y1,
        W / 2.0,
        H - 8.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    s
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = PAD + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            W - PAD - 150.0,
            y - 9.0,
            COLORS[i % COLORS.len()],
            W - PAD - 135.0,
            y,
            escape(name)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One polyline per series, x = iteration.
pub fn line_plot(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, v)| v.iter().enumerate().map(|(i, y)| (i as f64, *y)).collect())
        .collect();
    let f = Frame::fit(pts.iter().flatten());
    let mut s = header(title, &f, "iteration", "loss");
    for (i, p) in pts.iter().enumerate() {
        let path: Vec<String> = p
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1\" points=\"{}\"/>",
            COLORS[i % COLORS.len()],
            path.join(" ")
        );
    }
    let names: Vec<&str> = series.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

/// Point clouds, one colour per named set.
pub fn scatter_plot(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    sets: &[(String, Vec<(f64, f64)>)],
) -> String {
    let f = Frame::fit(sets.iter().flat_map(|(_, p)| p.iter()));
    let mut s = header(title, &f, xlabel, ylabel);
    for (i, (_, p)) in sets.iter().enumerate() {
        for &(x, y) in p.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(
                s,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.5\" fill=\"{}\" fill-opacity=\"0.5\"/>",
                f.px(x),
                f.py(y),
                COLORS[i % COLORS.len()]
            );
        }
    }
    let names: Vec<&str> = sets.iter().map(|(n, _)| n.as_str()).collect();
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let l = line_plot("a<b", &[("x".into(), vec![3.0, 2.0, f64::NAN, 1.0])]);
        assert!(l.starts_with("<svg") && l.ends_with("</svg>\n"));
        assert!(l.contains("a&lt;b"));
        assert_eq!(l.matches("<polyline").count(), 1);
        let s = scatter_plot(
            "s",
            "x",
            "y",
            &[
                ("real".into(), vec![(0.0, 0.0), (1.0, 1.0)]),
                ("gen".into(), vec![]),
            ],
        );
        assert_eq!(s.matches("<circle").count(), 2);
    }
}
