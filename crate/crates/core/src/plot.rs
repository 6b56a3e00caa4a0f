//! Static SVG figures: log-log scatter/line plots of run records and 2-d
//! decision-boundary renderings. Output depends only on the inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mlp::{self, MlpState};
use crate::train::RunRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub x_field: String,
    pub y_field: String,
    pub group_by: String,
    /// Plotted abscissa is `x · g^{x_rescale_exponent}` for group value `g`.
    #[serde(default)]
    pub x_rescale_exponent: f64,
    /// Plotted ordinate is `y · g^{y_rescale_exponent}`.
    #[serde(default)]
    pub y_rescale_exponent: f64,
    #[serde(default = "yes")]
    pub log_x: bool,
    #[serde(default = "yes")]
    pub log_y: bool,
    pub output_path: PathBuf,
}

fn yes() -> bool {
    true
}

impl PlotSpec {
    pub fn new(x_field: &str, y_field: &str, group_by: &str, output_path: impl Into<PathBuf>) -> Self {
        Self {
            x_field: x_field.into(),
            y_field: y_field.into(),
            group_by: group_by.into(),
            x_rescale_exponent: 0.0,
            y_rescale_exponent: 0.0,
            log_x: true,
            log_y: true,
            output_path: output_path.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for f in [&self.x_field, &self.y_field, &self.group_by] {
            if !RunRecord::has_field(f) {
                return Err(invalid(format!("unknown record field '{f}'")));
            }
        }
        Ok(())
    }

    pub fn csv_path(&self) -> PathBuf {
        self.output_path.with_extension("csv")
    }
}

/// One plotted point with its raw coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub group: f64,
    pub x_raw: f64,
    pub y_raw: f64,
    pub x: f64,
    pub y: f64,
}

/// Points grouped by series, in ascending group and abscissa order.
pub fn plot_points(records: &[RunRecord], spec: &PlotSpec) -> Result<Vec<(f64, Vec<PlotPoint>)>> {
    spec.validate()?;
    let mut groups: BTreeMap<u64, Vec<PlotPoint>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.diverged && r.failure.is_none()) {
        let (Some(g), Some(x), Some(y)) = (r.field(&spec.group_by), r.field(&spec.x_field), r.field(&spec.y_field))
        else {
            continue;
        };
        let px = x * g.powf(spec.x_rescale_exponent);
        let py = y * g.powf(spec.y_rescale_exponent);
        if !(px.is_finite() && py.is_finite()) || (spec.log_x && px <= 0.0) || (spec.log_y && py <= 0.0) {
            continue;
        }
        // order-preserving key for non-negative and negative floats alike
        let key = if g >= 0.0 { g.to_bits() ^ (1 << 63) } else { !g.to_bits() };
        groups.entry(key).or_default().push(PlotPoint { group: g, x_raw: x, y_raw: y, x: px, y: py });
    }
    if groups.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no records with positive {} and {}",
            spec.x_field, spec.y_field
        )));
    }
    Ok(groups
        .into_values()
        .map(|mut pts| {
            pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
            (pts[0].group, pts)
        })
        .collect())
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Self { log, lo: lo - pad, hi: hi + pad, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        let u = if self.log { v.log10() } else { v };
        self.px_lo + (u - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    /// Tick positions in data units with labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let first = self.lo.ceil() as i32;
            let last = self.hi.floor() as i32;
            let step = (((last - first) as f64) / 8.0).ceil().max(1.0) as i32;
            (first..=last)
                .step_by(step as usize)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            let span = self.hi - self.lo;
            let raw = span / 6.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let start = (self.lo / step).ceil() as i64;
            let end = (self.hi / step).floor() as i64;
            (start..=end).map(|k| (k as f64 * step, fmt_num(k as f64 * step))).collect()
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn label_for(name: &str, exponent: f64, group: &str) -> String {
    if exponent == 0.0 {
        name.to_string()
    } else {
        format!("{name} · {group}^{}", fmt_num(exponent))
    }
}

/// Renders the SVG text for `series` as produced by [`plot_points`].
pub fn render_loglog_svg(series: &[(f64, Vec<PlotPoint>)], spec: &PlotSpec) -> String {
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let xa = Axis::new(all().map(|p| p.x), spec.log_x, LEFT, W - RIGHT);
    let ya = Axis::new(all().map(|p| p.y), spec.log_y, H - BOTTOM, TOP);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(
        s,
        "<!-- x={} y={} group={} x_rescale={} y_rescale={} -->",
        spec.x_field, spec.y_field, spec.group_by, spec.x_rescale_exponent, spec.y_rescale_exponent
    );
    for (g, pts) in series {
        for p in pts {
            let _ = writeln!(s, "<!-- data {} {} {} -->", g, p.x, p.y);
        }
    }
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for (v, label) in xa.ticks() {
        let px = xa.map(v);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#, H - BOTTOM, H - BOTTOM + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{label}</text>"#, H - BOTTOM + 18.0);
    }
    for (v, label) in ya.ticks() {
        let py = ya.map(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 8.0, py + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 15.0,
        label_for(&spec.x_field, spec.x_rescale_exponent, &spec.group_by)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        label_for(&spec.y_field, spec.y_rescale_exponent, &spec.group_by)
    );
    for (k, (g, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="series" data-group="{g}" stroke="{color}" fill="{color}">"#);
        let path: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", xa.map(p.x), ya.map(p.y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" points="{}"/>"#, path.join(" "));
        for p in pts {
            let _ = writeln!(s, r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3"/>"#, xa.map(p.x), ya.map(p.y));
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{ly:.2}" r="4"/>"#, W - RIGHT + 15.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" stroke="none" fill="black">{} = {}</text>"#,
            W - RIGHT + 25.0,
            ly + 4.0,
            spec.group_by,
            fmt_num(*g)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Files written by [`emit_loglog_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutput {
    pub svg_path: PathBuf,
    pub csv_path: PathBuf,
    pub series: usize,
    pub points: usize,
}

/// Writes the SVG to `spec.output_path` and the plotted table next to it
/// with a `.csv` extension.
pub fn emit_loglog_svg(records: &[RunRecord], spec: &PlotSpec) -> Result<PlotOutput> {
    let series = plot_points(records, spec)?;
    std::fs::write(&spec.output_path, render_loglog_svg(&series, spec))?;
    let mut csv = format!("{},{},{},x_plot,y_plot\n", spec.group_by, spec.x_field, spec.y_field);
    for (_, pts) in &series {
        for p in pts {
            let _ = writeln!(csv, "{},{},{},{},{}", p.group, p.x_raw, p.y_raw, p.x, p.y);
        }
    }
    let csv_path = spec.csv_path();
    std::fs::write(&csv_path, csv)?;
    Ok(PlotOutput {
        svg_path: spec.output_path.clone(),
        csv_path,
        series: series.len(),
        points: series.iter().map(|(_, p)| p.len()).sum(),
    })
}

/// A trained 2-d classifier for boundary rendering.
pub trait BoundaryModel {
    fn output(&self, x: &[f64]) -> f64;
    fn input_gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Perceptron weights, `F = w·x/√d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel(pub Vec<f64>);

impl BoundaryModel for LinearModel {
    fn output(&self, x: &[f64]) -> f64 {
        crate::linalg::dot(&self.0, x) / (self.0.len() as f64).sqrt()
    }

    fn input_gradient(&self, _x: &[f64]) -> Vec<f64> {
        let s = 1.0 / (self.0.len() as f64).sqrt();
        self.0.iter().map(|w| w * s).collect()
    }
}

impl BoundaryModel for MlpState {
    fn output(&self, x: &[f64]) -> f64 {
        mlp::centered_predictor(self, x).expect("input dimension checked by caller")
    }

    fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        mlp::input_gradient(self, x).expect("input dimension checked by caller")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryOptions {
    pub resolution: usize,
    /// Draw `∂_x F` arrows at this many boundary points; 0 disables them.
    pub arrows: usize,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self { resolution: 100, arrows: 0 }
    }
}

/// Traced model boundary: segments whose endpoints sit on grid edges where
/// `F` changes sign.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub extent: (f64, f64, f64, f64),
    pub segments: Vec<([f64; 2], [f64; 2])>,
    pub svg: String,
}

fn zero_on_edge(a: [f64; 2], fa: f64, b: [f64; 2], fb: f64) -> [f64; 2] {
    let s = fa / (fa - fb);
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

/// Rasterizes `sign(F)` over the data's bounding box and traces its zero set.
pub fn trace_boundary(model: &dyn BoundaryModel, ds: &Dataset, opts: &BoundaryOptions) -> Result<BoundaryTrace> {
    if ds.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: ds.dim() });
    }
    if opts.resolution < 2 {
        return Err(invalid("resolution must be >= 2"));
    }
    let n = opts.resolution;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (p, _) in ds.iter() {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let r = x0.abs().max(x1.abs()).max(y0.abs()).max(y1.abs()).max(1e-9) * 1.1;
    let (x0, x1, y0, y1) = (-r, r, -r, r);
    let at = |i: usize, j: usize| [x0 + (x1 - x0) * i as f64 / n as f64, y0 + (y1 - y0) * j as f64 / n as f64];
    let mut f = vec![0.0; (n + 1) * (n + 1)];
    for j in 0..=n {
        for i in 0..=n {
            f[j * (n + 1) + i] = model.output(&at(i, j));
        }
    }
    let fv = |i: usize, j: usize| f[j * (n + 1) + i];
    let mut segments = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let mut hits = Vec::with_capacity(4);
            for k in 0..4 {
                let (a, b) = (corners[k], corners[(k + 1) % 4]);
                let (fa, fb) = (fv(a.0, a.1), fv(b.0, b.1));
                if (fa > 0.0) != (fb > 0.0) {
                    hits.push(zero_on_edge(at(a.0, a.1), fa, at(b.0, b.1), fb));
                }
            }
            if hits.len() >= 2 {
                segments.push((hits[0], hits[1]));
            }
            if hits.len() == 4 {
                segments.push((hits[2], hits[3]));
            }
        }
    }

    let size = 480.0;
    let sx = |x: f64| (x - x0) / (x1 - x0) * size;
    let sy = |y: f64| size - (y - y0) / (y1 - y0) * size;
    let cell = size / n as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(s, "<!-- extent {x0} {x1} {y0} {y1} resolution {n} -->");
    for j in 0..n {
        for i in 0..n {
            let c = at(i, j);
            let mid = [c[0] + 0.5 * (x1 - x0) / n as f64, c[1] + 0.5 * (y1 - y0) / n as f64];
            let fill = if model.output(&mid) > 0.0 { "#dbe9f6" } else { "#f8dcdc" };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}" stroke="none"/>"#,
                sx(c[0]),
                sy(c[1]) - cell,
                cell + 0.05,
                cell + 0.05
            );
        }
    }
    if let Some(nrm) = ds.true_normal() {
        // boundary line perpendicular to the normal through the origin
        let dir = [-nrm[1], nrm[0]];
        let _ = writeln!(
            s,
            r#"<line class="true-boundary" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
            sx(-2.0 * r * dir[0]),
            sy(-2.0 * r * dir[1]),
            sx(2.0 * r * dir[0]),
            sy(2.0 * r * dir[1])
        );
    }
    for (a, b) in &segments {
        let _ = writeln!(
            s,
            r#"<line class="model-boundary" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            sx(a[0]),
            sy(a[1]),
            sx(b[0]),
            sy(b[1])
        );
    }
    for (p, y) in ds.iter() {
        let color = if y > 0.0 { "#1f77b4" } else { "#d62728" };
        let _ = writeln!(s, r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(p[0]), sy(p[1]));
    }
    if opts.arrows > 0 && !segments.is_empty() {
        let every = segments.len().div_ceil(opts.arrows);
        for (a, b) in segments.iter().step_by(every) {
            let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let g = model.input_gradient(&m);
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gn == 0.0 {
                continue;
            }
            let len = 0.1 * r;
            let tip = [m[0] + len * g[0] / gn, m[1] + len * g[1] / gn];
            let _ = writeln!(
                s,
                r##"<line class="gradient" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#333" stroke-width="1.5"/>"##,
                sx(m[0]),
                sy(m[1]),
                sx(tip[0]),
                sy(tip[1])
            );
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#333"/>"##, sx(tip[0]), sy(tip[1]));
        }
    }
    s.push_str("</svg>\n");
    Ok(BoundaryTrace { extent: (x0, x1, y0, y1), segments, svg: s })
}

/// Writes the boundary rendering of `model` on `ds` to `path`.
pub fn render_boundary_2d(
    model: &dyn BoundaryModel,
    ds: &Dataset,
    opts: &BoundaryOptions,
    path: impl AsRef<Path>,
) -> Result<BoundaryTrace> {
    let trace = trace_boundary(model, ds, opts)?;
    std::fs::write(path, &trace.svg)?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::TrainConfig;

    fn rec(p: usize, t: f64, dw: f64) -> RunRecord {
        let cfg = TrainConfig::from_temperature(1.0, t, 1, 0).unwrap();
        let mut r = RunRecord::blank(&cfg, p, 2);
        r.delta_w = dw;
        r
    }

    #[test]
    fn grouped_points_and_rescale() {
        let records: Vec<RunRecord> = [100, 400]
            .iter()
            .flat_map(|&p| (1..=5).map(move |k| rec(p, 0.01 * k as f64, 0.1 * k as f64)))
            .collect();
        let mut spec = PlotSpec::new("temperature", "delta_w", "P", "unused.svg");
        let series = plot_points(&records, &spec).unwrap();
        assert_eq!(series.len(), 2);
        assert!(series.iter().all(|(_, p)| p.len() == 5));
        assert!(series[0].1.iter().all(|p| p.x == p.x_raw && p.y == p.y_raw));
        spec.x_rescale_exponent = 0.5;
        let series = plot_points(&records, &spec).unwrap();
        assert_eq!(series[1].0, 400.0);
        assert!((series[1].1[0].x - 0.01 * 20.0).abs() < 1e-12);
        let svg = render_loglog_svg(&series, &spec);
        assert_eq!(svg.matches(r#"class="series""#).count(), 2);
        assert_eq!(svg.matches(r#"class="marker""#).count(), 10);
        assert_eq!(svg, render_loglog_svg(&series, &spec));
    }

    #[test]
    fn empty_and_unknown_fields() {
        let spec = PlotSpec::new("temperature", "w1_final", "P", "x.svg");
        assert!(matches!(plot_points(&[rec(10, 0.1, 1.0)], &spec), Err(Error::EmptySelection(_))));
        let spec = PlotSpec::new("temperature", "nonsense", "P", "x.svg");
        assert!(plot_points(&[rec(10, 0.1, 1.0)], &spec).is_err());
    }

    fn square_dataset() -> Dataset {
        Dataset::new(
            vec![1.0, 0.5, -1.0, 0.3, 0.7, -0.8, -0.4, -0.9],
            vec![1.0, -1.0, 1.0, -1.0],
            2,
            Some(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn vertical_boundary_for_axis_weights() {
        let ds = square_dataset();
        let t = trace_boundary(&LinearModel(vec![1.0, 0.0]), &ds, &BoundaryOptions { resolution: 41, arrows: 3 }).unwrap();
        assert!(!t.segments.is_empty());
        for (a, b) in &t.segments {
            assert!(a[0].abs() < 1e-12 && b[0].abs() < 1e-12, "{a:?} {b:?}");
        }
        assert!(t.svg.contains("true-boundary"));
        assert_eq!(t.svg.matches(r#"class="point""#).count(), 4);
        assert!(t.svg.contains(r#"class="gradient""#));
    }

    #[test]
    fn boundary_needs_two_dimensions() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0], vec![1.0], 3, None).unwrap();
        assert!(matches!(
            trace_boundary(&LinearModel(vec![1.0, 0.0, 0.0]), &ds, &BoundaryOptions::default()),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn traced_segments_separate_signs() {
        let ds = square_dataset();
        let model = LinearModel(vec![0.6, -0.8]);
        let t = trace_boundary(&model, &ds, &BoundaryOptions { resolution: 30, arrows: 0 }).unwrap();
        for (a, b) in &t.segments {
            let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let eps = 1e-3;
            let plus = model.output(&[m[0] + eps * 0.6, m[1] - eps * 0.8]);
            let minus = model.output(&[m[0] - eps * 0.6, m[1] + eps * 0.8]);
            assert!(plus > 0.0 && minus < 0.0);
        }
    }
}
