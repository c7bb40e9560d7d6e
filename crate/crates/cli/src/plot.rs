//! Static SVG figures: log–log rate curves, stem plots of a mixing
//! distribution, and a fitted mixture over a data histogram.

use svg::node::element::path::Data;
use svg::node::element::{Circle, Line, Path as SvgPath, Rectangle as Rect, Text};
use svg::{Document, Node};

use prmix_core::{mixture_log_density, Kernel, KernelFamily, MixingVector, SupportSet};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e933c", "#8e6c8a", "#edae49", "#3d5a80"];

#[derive(Debug, Clone, Copy)]
enum Scale {
    Linear,
    Log10,
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    scale: Scale,
}

impl Axis {
    fn unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lo) / (self.hi - self.lo),
            Scale::Log10 => (v.log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10()),
        }
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Log10 => {
                let a = self.lo.log10().floor() as i32;
                let b = self.hi.log10().ceil() as i32;
                (a..=b)
                    .map(|k| 10f64.powi(k))
                    .filter(|t| *t >= self.lo && *t <= self.hi)
                    .collect()
            }
            Scale::Linear => {
                let raw = (self.hi - self.lo) / 8.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0]
                    .iter()
                    .map(|m| m * mag)
                    .find(|s| *s >= raw)
                    .unwrap_or(10.0 * mag);
                let first = (self.lo / step).ceil() as i64;
                let last = (self.hi / step).floor() as i64;
                (first..=last).map(|k| k as f64 * step).collect()
            }
        }
    }

    fn padded(lo: f64, hi: f64, scale: Scale) -> Axis {
        match scale {
            Scale::Log10 => {
                let (a, b) = (lo.log10(), hi.log10());
                let pad = ((b - a) * 0.05).max(0.05);
                Axis {
                    lo: 10f64.powf(a - pad),
                    hi: 10f64.powf(b + pad),
                    scale,
                }
            }
            Scale::Linear => {
                let pad = ((hi - lo) * 0.05).max(1e-9);
                Axis {
                    lo: lo - pad,
                    hi: hi + pad,
                    scale,
                }
            }
        }
    }
}

fn tick_label(v: f64, scale: Scale) -> String {
    match scale {
        Scale::Log10 => format!("1e{}", v.log10().round() as i32),
        Scale::Linear => {
            let s = format!("{v:.4}");
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s == "-0" {
                "0".into()
            } else {
                s.to_string()
            }
        }
    }
}

struct Canvas {
    doc: Document,
    x: Axis,
    y: Axis,
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str, x: Axis, y: Axis) -> Canvas {
        let mut doc = Document::new()
            .set("viewBox", (0, 0, WIDTH, HEIGHT))
            .set("width", WIDTH)
            .set("height", HEIGHT)
            .set("font-family", "sans-serif")
            .add(
                Rect::new()
                    .set("width", WIDTH)
                    .set("height", HEIGHT)
                    .set("fill", "white"),
            )
            .add(
                Text::new(title)
                    .set("x", WIDTH / 2.0)
                    .set("y", TOP / 2.0 + 5.0)
                    .set("text-anchor", "middle")
                    .set("font-size", 15),
            )
            .add(
                Text::new(x_label)
                    .set("x", LEFT + (WIDTH - LEFT - RIGHT) / 2.0)
                    .set("y", HEIGHT - 10.0)
                    .set("text-anchor", "middle")
                    .set("font-size", 12),
            )
            .add(
                Text::new(y_label)
                    .set(
                        "transform",
                        format!("translate(16,{}) rotate(-90)", TOP + (HEIGHT - TOP - BOTTOM) / 2.0),
                    )
                    .set("text-anchor", "middle")
                    .set("font-size", 12),
            )
            .add(
                Rect::new()
                    .set("x", LEFT)
                    .set("y", TOP)
                    .set("width", WIDTH - LEFT - RIGHT)
                    .set("height", HEIGHT - TOP - BOTTOM)
                    .set("fill", "none")
                    .set("stroke", "black"),
            );
        for t in x.ticks() {
            let px = LEFT + x.unit(t) * (WIDTH - LEFT - RIGHT);
            doc = doc
                .add(line(px, HEIGHT - BOTTOM, px, HEIGHT - BOTTOM + 5.0, "black"))
                .add(
                    Text::new(tick_label(t, x.scale))
                        .set("x", px)
                        .set("y", HEIGHT - BOTTOM + 18.0)
                        .set("text-anchor", "middle")
                        .set("font-size", 10),
                );
        }
        for t in y.ticks() {
            let py = HEIGHT - BOTTOM - y.unit(t) * (HEIGHT - TOP - BOTTOM);
            doc = doc.add(line(LEFT - 5.0, py, LEFT, py, "black")).add(
                Text::new(tick_label(t, y.scale))
                    .set("x", LEFT - 8.0)
                    .set("y", py + 3.5)
                    .set("text-anchor", "end")
                    .set("font-size", 10),
            );
        }
        Canvas { doc, x, y }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            LEFT + self.x.unit(x) * (WIDTH - LEFT - RIGHT),
            HEIGHT - BOTTOM - self.y.unit(y) * (HEIGHT - TOP - BOTTOM),
        )
    }

    fn add<N: Into<Box<dyn Node>>>(&mut self, node: N) {
        self.doc.append(node);
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, dashed: bool) {
        if pts.is_empty() {
            return;
        }
        let (x0, y0) = self.px(pts[0].0, pts[0].1);
        let mut data = Data::new().move_to((x0, y0));
        for &(x, y) in &pts[1..] {
            data = data.line_to(self.px(x, y));
        }
        let mut path = SvgPath::new()
            .set("d", data)
            .set("fill", "none")
            .set("stroke", color)
            .set("stroke-width", 1.8);
        if dashed {
            path = path.set("stroke-dasharray", "5,4");
        }
        self.add(path);
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 14.0 + 15.0 * i as f64;
            let x = WIDTH - RIGHT - 170.0;
            self.add(line(x, y - 4.0, x + 18.0, y - 4.0, color).set("stroke-width", 2));
            self.add(
                Text::new(label.as_str())
                    .set("x", x + 24.0)
                    .set("y", y)
                    .set("font-size", 10),
            );
        }
    }
}

fn line(x1: f64, y1: f64, x2: f64, y2: f64, color: &str) -> Line {
    Line::new()
        .set("x1", x1)
        .set("y1", y1)
        .set("x2", x2)
        .set("y2", y2)
        .set("stroke", color)
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Log–log plot of median error against sample size, one line per series.
pub fn rate_plot(title: &str, y_label: &str, series: &[Series]) -> Option<Document> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && y.is_finite())
        .collect();
    if pts.is_empty() {
        return None;
    }
    let (xmin, xmax) = bounds(pts.iter().map(|p| p.0));
    let (ymin, ymax) = bounds(pts.iter().map(|p| p.1));
    let mut c = Canvas::new(
        title,
        "n",
        y_label,
        Axis::padded(xmin, xmax, Scale::Log10),
        Axis::padded(ymin, ymax, Scale::Log10),
    );
    let mut legend = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let p: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| *x > 0.0 && *y > 0.0).collect();
        c.polyline(&p, color, false);
        for &(x, y) in &p {
            let (px, py) = c.px(x, y);
            c.add(
                Circle::new()
                    .set("cx", px)
                    .set("cy", py)
                    .set("r", 2.5)
                    .set("fill", color),
            );
        }
        legend.push((s.label.clone(), color));
    }
    c.legend(&legend);
    Some(c.doc)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Vertical stems at the support points with heights equal to the weights.
pub fn stem_plot(title: &str, support: &SupportSet, weights: &MixingVector) -> Document {
    let (xmin, xmax) = bounds(support.points().iter().copied());
    let (xmin, xmax) = if xmin == xmax {
        (xmin - 1.0, xmax + 1.0)
    } else {
        (xmin, xmax)
    };
    let wmax = weights.weights().iter().copied().fold(0.0, f64::max);
    let mut c = Canvas::new(
        title,
        "u",
        "f(u)",
        Axis::padded(xmin, xmax, Scale::Linear),
        Axis {
            lo: 0.0,
            hi: wmax * 1.1,
            scale: Scale::Linear,
        },
    );
    for (&u, &w) in support.points().iter().zip(weights.weights()) {
        let (x0, y0) = c.px(u, 0.0);
        let (x1, y1) = c.px(u, w);
        c.add(line(x0, y0, x1, y1, PALETTE[0]).set("stroke-width", 2));
        c.add(
            Circle::new()
                .set("cx", x1)
                .set("cy", y1)
                .set("r", 3.5)
                .set("fill", PALETTE[0]),
        );
    }
    c.doc
}

/// Density-scale histogram of the data with the fitted mixture overlaid:
/// a curve for continuous kernels, markers at each count for Poisson.
/// Histogram bar as `(left, right, height)`.
type Bar = (f64, f64, f64);

pub fn mixture_plot(
    title: &str,
    data: &[f64],
    kernel: &Kernel,
    support: &SupportSet,
    weights: &MixingVector,
) -> Document {
    let n = data.len() as f64;
    let (dmin, dmax) = bounds(data.iter().copied());
    let density = |y: f64| {
        mixture_log_density(weights, support, kernel, y)
            .map(f64::exp)
            .unwrap_or(0.0)
    };
    let (bars, curve): (Vec<Bar>, Vec<(f64, f64)>) = match kernel.family() {
        KernelFamily::Poisson => {
            let top = dmax as i64;
            let bars = (0..=top)
                .map(|k| {
                    let count = data.iter().filter(|&&y| y == k as f64).count() as f64;
                    (k as f64 - 0.4, k as f64 + 0.4, count / n)
                })
                .collect();
            let curve = (0..=top).map(|k| (k as f64, density(k as f64))).collect();
            (bars, curve)
        }
        KernelFamily::GaussianLocation => {
            let bins = ((n.sqrt().ceil()) as usize).clamp(10, 60);
            let width = ((dmax - dmin) / bins as f64).max(1e-9);
            let mut counts = vec![0.0; bins];
            for &y in data {
                let b = (((y - dmin) / width) as usize).min(bins - 1);
                counts[b] += 1.0;
            }
            let bars = counts
                .iter()
                .enumerate()
                .map(|(b, c)| {
                    let lo = dmin + b as f64 * width;
                    (lo, lo + width, c / (n * width))
                })
                .collect();
            let pad = 3.0 * kernel.scale();
            let (lo, hi) = (
                dmin.min(support.points()[0]) - pad,
                dmax.max(*support.points().last().unwrap()) + pad,
            );
            let curve = (0..=400)
                .map(|i| lo + (hi - lo) * i as f64 / 400.0)
                .map(|y| (y, density(y)))
                .collect();
            (bars, curve)
        }
    };
    let (xmin, xmax) = bounds(
        bars.iter()
            .map(|b| b.0)
            .chain(bars.iter().map(|b| b.1))
            .chain(curve.iter().map(|p| p.0)),
    );
    let ymax = bars
        .iter()
        .map(|b| b.2)
        .chain(curve.iter().map(|p| p.1))
        .fold(0.0, f64::max);
    let mut c = Canvas::new(
        title,
        "y",
        "density",
        Axis::padded(xmin, xmax, Scale::Linear),
        Axis {
            lo: 0.0,
            hi: ymax * 1.1,
            scale: Scale::Linear,
        },
    );
    for &(lo, hi, h) in &bars {
        let (x0, y0) = c.px(lo, h);
        let (x1, y1) = c.px(hi, 0.0);
        c.add(
            Rect::new()
                .set("x", x0)
                .set("y", y0)
                .set("width", x1 - x0)
                .set("height", y1 - y0)
                .set("fill", "#c9d6e3")
                .set("stroke", "#8aa1b8"),
        );
    }
    match kernel.family() {
        KernelFamily::Poisson => {
            for &(x, y) in &curve {
                let (px, py) = c.px(x, y);
                c.add(
                    Circle::new()
                        .set("cx", px)
                        .set("cy", py)
                        .set("r", 3)
                        .set("fill", PALETTE[1]),
                );
            }
        }
        KernelFamily::GaussianLocation => c.polyline(&curve, PALETTE[1], false),
    }
    c.doc
}
