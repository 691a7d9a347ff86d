//! Static SVG rendering for the run's figures. Everything is emitted
//! from fixed-size canvases with coordinates printed at fixed precision,
//! so the same data always produces the same bytes and the files can be
//! checked against golden copies.

use asca_core::diagnostics::BoxSummary;
use asca_core::factorization::fmt_sig;
use asca_core::sca::BiplotCoords;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#c0392b", "#2e8b57", "#8e44ad", "#d35400", "#16a085", "#7f8c8d", "#2c3e50",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut body = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
        );
        body.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
        body.push_str(&format!(
            "<text x=\"{}\" y=\"24\" font-size=\"16\" fill=\"#222222\" text-anchor=\"middle\">{}</text>\n",
            px(WIDTH / 2.0),
            esc(title)
        ));
        Canvas { body }
    }

    fn metadata(&mut self, content: &str) {
        self.body
            .push_str(&format!("<metadata>{}</metadata>\n", esc(content)));
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64, dash: Option<&str>) {
        let dash = dash
            .map(|d| format!(" stroke-dasharray=\"{d}\""))
            .unwrap_or_default();
        self.body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"{}\"{}/>\n",
            px(x1), px(y1), px(x2), px(y2), stroke, width, dash
        ));
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        self.body.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"/>\n",
            px(cx), px(cy), r, fill
        ));
    }

    fn cross(&mut self, cx: f64, cy: f64, arm: f64, stroke: &str) {
        self.line(cx - arm, cy, cx + arm, cy, stroke, 1.2, None);
        self.line(cx, cy - arm, cx, cy + arm, stroke, 1.2, None);
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        self.body.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"{}\"/>\n",
            px(x), px(y), px(w), px(h), fill, stroke
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, fill: &str, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"{}\" fill=\"{}\" text-anchor=\"{}\">{}</text>\n",
            px(x), px(y), size, fill, anchor, esc(s)
        ));
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        if pts.is_empty() {
            return;
        }
        let coords = pts
            .iter()
            .map(|(x, y)| format!("{},{}", px(*x), px(*y)))
            .collect::<Vec<_>>()
            .join(" ");
        self.body.push_str(&format!(
            "<polyline points=\"{coords}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.3\"/>\n"
        ));
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Data-to-pixel mapping inside the plot box, y axis flipped.
struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    /// Pad degenerate or empty ranges so the axes always span something.
    fn new(xs: &[f64], ys: &[f64]) -> Self {
        let finite = |vals: &[f64]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in vals {
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if lo > hi {
                (0.0, 1.0)
            } else if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                let pad = (hi - lo) * 0.06;
                (lo - pad, hi + pad)
            }
        };
        let (xmin, xmax) = finite(xs);
        let (ymin, ymax) = finite(ys);
        Frame { xmin, xmax, ymin, ymax }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT + (v - self.xmin) / (self.xmax - self.xmin) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM
            - (v - self.ymin) / (self.ymax - self.ymin) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn draw_axes(&self, c: &mut Canvas, xlabel: &str, ylabel: &str) {
        let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
        c.line(x0, y0, x1, y0, "#222222", 1.0, None);
        c.line(x0, y0, x0, y1, "#222222", 1.0, None);
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let xv = self.xmin + t * (self.xmax - self.xmin);
            let yv = self.ymin + t * (self.ymax - self.ymin);
            let xp = self.x(xv);
            let yp = self.y(yv);
            c.line(xp, y0, xp, y0 + 4.0, "#222222", 1.0, None);
            c.text(xp, y0 + 18.0, 11.0, "middle", "#222222", &fmt_sig(xv, 4));
            c.line(x0 - 4.0, yp, x0, yp, "#222222", 1.0, None);
            c.text(x0 - 7.0, yp + 4.0, 11.0, "end", "#222222", &fmt_sig(yv, 4));
        }
        c.text((x0 + x1) / 2.0, HEIGHT - 12.0, 13.0, "middle", "#222222", xlabel);
        c.text(16.0, (y0 + y1) / 2.0, 13.0, "middle", "#222222", ylabel);
    }
}

fn legend(c: &mut Canvas, entries: &[(String, &str)]) {
    let x = WIDTH - MARGIN_RIGHT + 16.0;
    for (i, (label, col)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 14.0 + i as f64 * 18.0;
        c.circle(x, y - 4.0, 4.0, col);
        c.text(x + 10.0, y, 11.0, "start", "#222222", label);
    }
}

/// Scatter of grouped points; one color per group in first-appearance
/// order. Empty input draws the axes alone.
pub fn scatter(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    groups: &[(String, Vec<(f64, f64)>)],
) -> String {
    let xs: Vec<f64> = groups.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let ys: Vec<f64> = groups.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).collect();
    let frame = Frame::new(&xs, &ys);
    let mut c = Canvas::new(title);
    frame.draw_axes(&mut c, xlabel, ylabel);
    // Zero lines help read signed score axes.
    if frame.xmin < 0.0 && frame.xmax > 0.0 {
        c.line(frame.x(0.0), frame.y(frame.ymin), frame.x(0.0), frame.y(frame.ymax), "#bbbbbb", 0.8, Some("4 3"));
    }
    if frame.ymin < 0.0 && frame.ymax > 0.0 {
        c.line(frame.x(frame.xmin), frame.y(0.0), frame.x(frame.xmax), frame.y(0.0), "#bbbbbb", 0.8, Some("4 3"));
    }
    let mut entries = Vec::new();
    for (g, (label, pts)) in groups.iter().enumerate() {
        for &(x, y) in pts {
            if x.is_finite() && y.is_finite() {
                c.circle(frame.x(x), frame.y(y), 4.0, color(g));
            }
        }
        entries.push((label.clone(), color(g)));
    }
    legend(&mut c, &entries);
    c.finish()
}

/// Loadings drawn as one polyline per component across the variable
/// index, which reads naturally when columns are ordered in time.
pub fn loading_lines(title: &str, loadings: &[Vec<f64>], explained: &[f64]) -> String {
    let n: usize = loadings.first().map_or(0, Vec::len);
    let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let ys: Vec<f64> = loadings.iter().flatten().copied().collect();
    let frame = Frame::new(&xs, &ys);
    let mut c = Canvas::new(title);
    frame.draw_axes(&mut c, "variable index", "loading");
    if frame.ymin < 0.0 && frame.ymax > 0.0 {
        c.line(frame.x(frame.xmin), frame.y(0.0), frame.x(frame.xmax), frame.y(0.0), "#bbbbbb", 0.8, Some("4 3"));
    }
    let mut entries = Vec::new();
    for (k, comp) in loadings.iter().enumerate() {
        let pts: Vec<(f64, f64)> = comp
            .iter()
            .enumerate()
            .map(|(i, &v)| (frame.x(i as f64), frame.y(v)))
            .collect();
        c.polyline(&pts, color(k));
        let pct = explained.get(k).copied().unwrap_or(0.0) * 100.0;
        entries.push((format!("pc{} ({}%)", k + 1, fmt_sig(pct, 3)), color(k)));
    }
    legend(&mut c, &entries);
    c.finish()
}

/// Joint score/loading display. The loading rescale factor is recorded
/// in the SVG metadata so the plot is self-describing.
pub fn biplot(title: &str, coords: &BiplotCoords) -> String {
    let xs: Vec<f64> = coords
        .scores
        .iter()
        .chain(coords.loadings.iter())
        .map(|p| p.x)
        .collect();
    let ys: Vec<f64> = coords
        .scores
        .iter()
        .chain(coords.loadings.iter())
        .map(|p| p.y)
        .collect();
    let frame = Frame::new(&xs, &ys);
    let mut c = Canvas::new(title);
    c.metadata(&format!("loading scale: {}", coords.scale));
    frame.draw_axes(
        &mut c,
        &format!("pc{}", coords.pc_x + 1),
        &format!("pc{}", coords.pc_y + 1),
    );
    if frame.xmin < 0.0 && frame.xmax > 0.0 {
        c.line(frame.x(0.0), frame.y(frame.ymin), frame.x(0.0), frame.y(frame.ymax), "#bbbbbb", 0.8, Some("4 3"));
    }
    if frame.ymin < 0.0 && frame.ymax > 0.0 {
        c.line(frame.x(frame.xmin), frame.y(0.0), frame.x(frame.xmax), frame.y(0.0), "#bbbbbb", 0.8, Some("4 3"));
    }
    for p in &coords.loadings {
        if p.x.is_finite() && p.y.is_finite() {
            c.cross(frame.x(p.x), frame.y(p.y), 3.0, "#999999");
        }
    }
    for (i, p) in coords.scores.iter().enumerate() {
        if p.x.is_finite() && p.y.is_finite() {
            let (px_, py_) = (frame.x(p.x), frame.y(p.y));
            c.circle(px_, py_, 4.5, color(i));
            c.text(px_ + 7.0, py_ + 4.0, 11.0, "start", "#222222", &p.label);
        }
    }
    c.finish()
}

/// D vs Q scatter with dashed control-limit lines.
pub fn mspc_plot(q: &[f64], d: &[f64], q_limit: f64, d_limit: f64, percentile: f64) -> String {
    let frame = Frame::new(
        &[d, &[d_limit][..]].concat(),
        &[q, &[q_limit][..]].concat(),
    );
    let mut c = Canvas::new("model distance vs residual");
    frame.draw_axes(&mut c, "d statistic", "q statistic");
    c.line(frame.x(d_limit), frame.y(frame.ymin), frame.x(d_limit), frame.y(frame.ymax), "#c0392b", 1.0, Some("6 4"));
    c.line(frame.x(frame.xmin), frame.y(q_limit), frame.x(frame.xmax), frame.y(q_limit), "#c0392b", 1.0, Some("6 4"));
    for i in 0..q.len().min(d.len()) {
        if q[i].is_finite() && d[i].is_finite() {
            c.circle(frame.x(d[i]), frame.y(q[i]), 3.5, "#1b6ca8");
        }
    }
    legend(
        &mut c,
        &[(format!("limit at p{}", fmt_sig(percentile, 3)), "#c0392b")],
    );
    c.finish()
}

/// Stem plot of the autocorrelation with the white-noise band at
/// plus/minus 1.96 over sqrt(n).
pub fn acf_stem(acf: &[f64], n_series: usize) -> String {
    let xs: Vec<f64> = (0..acf.len()).map(|i| i as f64).collect();
    let mut ys = acf.to_vec();
    ys.push(1.0);
    ys.push(-0.3);
    let frame = Frame::new(&xs, &ys);
    let mut c = Canvas::new("autocorrelation of the q statistic");
    frame.draw_axes(&mut c, "lag", "r");
    let band = if n_series > 0 {
        1.96 / (n_series as f64).sqrt()
    } else {
        0.0
    };
    for g in [band, -band] {
        c.line(frame.x(frame.xmin), frame.y(g), frame.x(frame.xmax), frame.y(g), "#c0392b", 0.9, Some("5 4"));
    }
    c.line(frame.x(frame.xmin), frame.y(0.0), frame.x(frame.xmax), frame.y(0.0), "#222222", 0.8, None);
    for (lag, &r) in acf.iter().enumerate() {
        let x = frame.x(lag as f64);
        c.line(x, frame.y(0.0), x, frame.y(r), "#1b6ca8", 1.4, None);
        c.circle(x, frame.y(r), 2.6, "#1b6ca8");
    }
    c.finish()
}

/// Tukey boxes per level. Empty levels leave a gap.
pub fn box_plot(title: &str, summaries: &[BoxSummary], labels: &[String]) -> String {
    let mut ys: Vec<f64> = Vec::new();
    for s in summaries {
        if s.n > 0 {
            ys.extend([s.whisker_low, s.whisker_high]);
            ys.extend(s.outliers.iter().copied());
        }
    }
    let xs: Vec<f64> = (0..summaries.len()).map(|i| i as f64).collect();
    let frame = Frame::new(&[xs, vec![-0.6, summaries.len() as f64 - 0.4]].concat(), &ys);
    let mut c = Canvas::new(title);
    frame.draw_axes(&mut c, "level", "residual");
    let half = 0.32;
    for (i, s) in summaries.iter().enumerate() {
        let xc = i as f64;
        if s.n == 0 {
            continue;
        }
        let (xl, xr) = (frame.x(xc - half), frame.x(xc + half));
        let w = xr - xl;
        c.rect(xl, frame.y(s.q3), w, frame.y(s.q1) - frame.y(s.q3), "none", "#1b6ca8");
        c.line(xl, frame.y(s.median), xr, frame.y(s.median), "#c0392b", 1.4, None);
        let xm = frame.x(xc);
        c.line(xm, frame.y(s.q3), xm, frame.y(s.whisker_high), "#1b6ca8", 1.0, None);
        c.line(xm, frame.y(s.q1), xm, frame.y(s.whisker_low), "#1b6ca8", 1.0, None);
        for cap in [s.whisker_low, s.whisker_high] {
            c.line(frame.x(xc - half / 2.0), frame.y(cap), frame.x(xc + half / 2.0), frame.y(cap), "#1b6ca8", 1.0, None);
        }
        for &o in &s.outliers {
            c.circle(xm, frame.y(o), 2.2, "#7f8c8d");
        }
        c.text(xm, HEIGHT - MARGIN_BOTTOM + 32.0, 10.0, "middle", "#222222", &labels[s.level]);
    }
    c.finish()
}

/// Axes-only placeholder for a view with nothing to draw.
pub fn empty_plot(title: &str) -> String {
    let frame = Frame::new(&[], &[]);
    let mut c = Canvas::new(title);
    frame.draw_axes(&mut c, "", "");
    c.finish()
}
