//! Deterministic SVG rendering of the tool's CSV tables. Every number is
//! printed with a fixed precision and elements are emitted in input order,
//! so equal tables give byte-identical files.

use bayesflow::checks::{density_curves, OutcomeScale, PredictiveEnsemble};
use bayesflow::compare::ComparisonTable;
use bayesflow::stats;

use crate::error::{CliError, CliResult};

const WIDTH: f64 = 720.0;
const MARGIN_LEFT: f64 = 130.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 45.0;
const THIN_BLUE: &str = "#9ecae1";
const DARK_BLUE: &str = "#08306b";
const PALETTE: [&str; 6] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];
const VIOLIN_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    DensityOverlay,
    Violin,
    Interval,
    Trace,
}

#[derive(Debug, Clone, Default)]
pub struct PlotOptions {
    pub title: String,
    /// Violins: draw values on a `log10(1 + v)` axis.
    pub log_scale: bool,
    /// Ensemble tables: scale of the density curves.
    pub identity_scale: bool,
    /// Trace: coordinates to draw; default the first four.
    pub columns: Vec<String>,
}

/// A header plus rows of plain comma-separated fields (the tool never
/// quotes).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> CliResult<Table> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Usage("empty table".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if row.len() != header.len() {
                return Err(CliError::Input(format!(
                    "table line {}: expected {} fields, found {}",
                    i + 2,
                    header.len(),
                    row.len()
                )));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("table has no `{name}` column")))
    }

    fn number(&self, row: usize, col: usize) -> CliResult<f64> {
        let s = &self.rows[row][col];
        s.parse()
            .map_err(|_| CliError::Input(format!("table row {}: `{s}` is not a number", row + 1)))
    }
}

pub fn render(kind: PlotKind, table: &Table, options: &PlotOptions) -> CliResult<String> {
    if table.rows.is_empty() {
        return Err(CliError::Usage(
            "nothing to plot: the table has no rows".into(),
        ));
    }
    match kind {
        PlotKind::DensityOverlay => density_overlay(table, options),
        PlotKind::Violin => violin(table, options),
        PlotKind::Interval => interval(table, options),
        PlotKind::Trace => trace(table, options),
    }
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Short, stable tick label.
fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if (1e-3..1e5).contains(&a) {
        let decimals = (2 - a.log10().floor() as i32).clamp(0, 4) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.1e}")
    };
    if s.contains('.') && !s.contains('e') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let p = 0.03 * (hi - lo);
        (lo - p, hi + p)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

struct Plot {
    height: f64,
    body: String,
}

impl Plot {
    fn new(height: f64, title: &str) -> Self {
        let mut body = String::new();
        if !title.is_empty() {
            body.push_str(&format!(
                "<text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
                px(WIDTH / 2.0),
                escape(title)
            ));
        }
        Plot { height, body }
    }

    fn push(&mut self, s: String) {
        self.body.push_str(&s);
        self.body.push('\n');
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = px(WIDTH),
            h = px(self.height)
        )
    }
}

/// Linear map from a data rectangle to a pixel rectangle.
#[derive(Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    fn sx(&self, v: f64) -> f64 {
        self.left + (v - self.x.0) / (self.x.1 - self.x.0) * (self.right - self.left)
    }

    fn sy(&self, v: f64) -> f64 {
        self.bottom - (v - self.y.0) / (self.y.1 - self.y.0) * (self.bottom - self.top)
    }

    fn axes(&self, plot: &mut Plot, x_label: &str, y_ticks: bool) {
        plot.push(format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\" stroke-width=\"0.8\"/>",
            px(self.left),
            px(self.top),
            px(self.right - self.left),
            px(self.bottom - self.top)
        ));
        for t in ticks(self.x.0, self.x.1) {
            let x = self.sx(t);
            plot.push(format!(
                "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"#444\"/><text x=\"{x}\" y=\"{ty}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                label(t),
                x = px(x),
                b = px(self.bottom),
                b2 = px(self.bottom + 4.0),
                ty = px(self.bottom + 16.0)
            ));
        }
        if y_ticks {
            for t in ticks(self.y.0, self.y.1) {
                let y = self.sy(t);
                plot.push(format!(
                    "<line x1=\"{l2}\" y1=\"{y}\" x2=\"{l}\" y2=\"{y}\" stroke=\"#444\"/><text x=\"{tx}\" y=\"{ty}\" font-size=\"11\" text-anchor=\"end\">{}</text>",
                    label(t),
                    y = px(y),
                    l = px(self.left),
                    l2 = px(self.left - 4.0),
                    tx = px(self.left - 7.0),
                    ty = px(y + 4.0)
                ));
            }
        }
        if !x_label.is_empty() {
            plot.push(format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
                px((self.left + self.right) / 2.0),
                px(self.bottom + 34.0),
                escape(x_label)
            ));
        }
    }
}

fn polyline(
    frame: &Frame,
    xs: &[f64],
    ys: &[f64],
    stroke: &str,
    width: f64,
    extra: &str,
) -> String {
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{},{}", px(frame.sx(x)), px(frame.sy(y))))
        .collect();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{extra}/>",
        points.join(" ")
    )
}

fn range_of<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Groups consecutive-or-not rows by key, in order of first appearance.
fn group_in_order<T>(items: impl IntoIterator<Item = (String, T)>) -> Vec<(String, Vec<T>)> {
    let mut groups: Vec<(String, Vec<T>)> = Vec::new();
    for (k, v) in items {
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, vs)) => vs.push(v),
            None => groups.push((k, vec![v])),
        }
    }
    groups
}

/// Simulated density curves plus the observed one, from either a density
/// table (`curve,x,density`) or an ensemble table (`simulation,row,value`).
fn density_overlay(table: &Table, options: &PlotOptions) -> CliResult<String> {
    let (grid, simulated, observed) = if table.header == ["curve", "x", "density"] {
        let mut pts = Vec::with_capacity(table.rows.len());
        for i in 0..table.rows.len() {
            pts.push((
                table.rows[i][0].clone(),
                (table.number(i, 1)?, table.number(i, 2)?),
            ));
        }
        let mut grid = Vec::new();
        let mut simulated = Vec::new();
        let mut observed = Vec::new();
        for (name, curve) in group_in_order(pts) {
            if grid.is_empty() {
                grid = curve.iter().map(|p| p.0).collect();
            }
            let ys: Vec<f64> = curve.iter().map(|p| p.1).collect();
            if ys.len() != grid.len() {
                return Err(CliError::Input(format!(
                    "curve {name} has a different grid length"
                )));
            }
            if name == "observed" {
                observed = ys;
            } else {
                simulated.push(ys);
            }
        }
        (grid, simulated, observed)
    } else if table.header == ["simulation", "row", "value"] {
        let mut pts = Vec::with_capacity(table.rows.len());
        for i in 0..table.rows.len() {
            pts.push((table.rows[i][0].clone(), table.number(i, 2)?));
        }
        let mut sims = Vec::new();
        let mut obs = None;
        for (name, values) in group_in_order(pts) {
            if name == "observed" {
                obs = Some(values);
            } else {
                sims.push(values);
            }
        }
        if sims.is_empty() {
            return Err(CliError::Usage(
                "nothing to plot: the ensemble has no simulations".into(),
            ));
        }
        let scale = if options.identity_scale {
            OutcomeScale::Identity
        } else {
            OutcomeScale::Log10p1
        };
        let c = density_curves(&PredictiveEnsemble::new(sims, obs, scale)?);
        (c.grid, c.simulated, c.observed)
    } else {
        return Err(CliError::Input(format!(
            "density-overlay expects `curve,x,density` or `simulation,row,value`, found `{}`",
            table.header.join(",")
        )));
    };
    if simulated.is_empty() {
        return Err(CliError::Usage(
            "nothing to plot: no simulated curves".into(),
        ));
    }
    let (x0, x1) = pad_range(range_of(&grid).0, range_of(&grid).1);
    let y_hi = range_of(simulated.iter().flatten().chain(&observed))
        .1
        .max(1e-12);
    let height = 400.0;
    let frame = Frame {
        x: (x0, x1),
        y: (0.0, 1.05 * y_hi),
        left: MARGIN_LEFT,
        right: WIDTH - MARGIN_RIGHT,
        top: MARGIN_TOP,
        bottom: height - MARGIN_BOTTOM,
    };
    let mut plot = Plot::new(height, &options.title);
    frame.axes(
        &mut plot,
        if options.identity_scale {
            "value"
        } else {
            "log10(1 + value)"
        },
        true,
    );
    for ys in &simulated {
        plot.push(polyline(
            &frame,
            &grid,
            ys,
            THIN_BLUE,
            0.6,
            " class=\"simulated\"",
        ));
    }
    if !observed.is_empty() {
        plot.push(polyline(
            &frame,
            &grid,
            &observed,
            DARK_BLUE,
            2.5,
            " class=\"observed\"",
        ));
    }
    Ok(plot.finish())
}

/// Violins from percentile tables (`<group columns…>,q,value`), one row per
/// group in table order.
fn violin(table: &Table, options: &PlotOptions) -> CliResult<String> {
    let qc = table.column("q")?;
    let vc = table.column("value")?;
    if qc + 1 != vc || vc + 1 != table.header.len() || qc == 0 {
        return Err(CliError::Input(
            "violin tables end with `q,value` after group columns".into(),
        ));
    }
    // Label by the group columns that vary; all-constant tables use the last.
    let varying: Vec<usize> = (0..qc)
        .filter(|&c| table.rows.iter().any(|r| r[c] != table.rows[0][c]))
        .collect();
    let label_cols = if varying.is_empty() {
        vec![qc - 1]
    } else {
        varying
    };
    let mut pts = Vec::with_capacity(table.rows.len());
    for i in 0..table.rows.len() {
        let key: Vec<&str> = label_cols
            .iter()
            .map(|&c| table.rows[i][c].as_str())
            .collect();
        let v = table.number(i, vc)?;
        let v = if options.log_scale {
            (v.max(0.0)).ln_1p() / std::f64::consts::LN_10
        } else {
            v
        };
        pts.push((key.join(" "), (table.number(i, qc)?, v)));
    }
    let groups = group_in_order(pts);
    let all: Vec<f64> = groups
        .iter()
        .flat_map(|(_, g)| g.iter().map(|p| p.1))
        .collect();
    let (lo, hi) = range_of(&all);
    let (x0, x1) = pad_range(lo, hi);
    let row_h = 28.0;
    let height = MARGIN_TOP + MARGIN_BOTTOM + row_h * groups.len() as f64;
    let frame = Frame {
        x: (x0, x1),
        y: (0.0, groups.len() as f64),
        left: MARGIN_LEFT,
        right: WIDTH - MARGIN_RIGHT,
        top: MARGIN_TOP,
        bottom: height - MARGIN_BOTTOM,
    };
    let mut plot = Plot::new(height, &options.title);
    frame.axes(
        &mut plot,
        if options.log_scale {
            "log10(1 + value)"
        } else {
            "value"
        },
        false,
    );
    let grid = stats::linspace(x0, x1, VIOLIN_POINTS);
    for (j, (name, g)) in groups.iter().enumerate() {
        let values: Vec<f64> = g.iter().map(|p| p.1).collect();
        let dens = stats::kde(&values, &grid);
        let peak = dens.iter().copied().fold(0.0, f64::max);
        let centre = groups.len() as f64 - j as f64 - 0.5;
        let half = 0.42;
        let upper: Vec<String> = grid
            .iter()
            .zip(&dens)
            .map(|(&x, &d)| {
                let w = if peak > 0.0 { half * d / peak } else { 0.0 };
                format!("{},{}", px(frame.sx(x)), px(frame.sy(centre + w)))
            })
            .collect();
        let lower: Vec<String> = grid
            .iter()
            .zip(&dens)
            .rev()
            .map(|(&x, &d)| {
                let w = if peak > 0.0 { half * d / peak } else { 0.0 };
                format!("{},{}", px(frame.sx(x)), px(frame.sy(centre - w)))
            })
            .collect();
        plot.push(format!(
            "<polygon points=\"{} {}\" fill=\"{THIN_BLUE}\" stroke=\"{DARK_BLUE}\" stroke-width=\"0.7\"/>",
            upper.join(" "),
            lower.join(" ")
        ));
        let median = g
            .iter()
            .min_by(|a, b| (a.0 - 0.5).abs().total_cmp(&(b.0 - 0.5).abs()))
            .map(|p| p.1)
            .unwrap_or(f64::NAN);
        if median.is_finite() {
            plot.push(format!(
                "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"{DARK_BLUE}\" stroke-width=\"2\"/>",
                px(frame.sy(centre + half)),
                px(frame.sy(centre - half)),
                x = px(frame.sx(median))
            ));
        }
        plot.push(format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            px(MARGIN_LEFT - 8.0),
            px(frame.sy(centre) + 4.0),
            escape(name)
        ));
    }
    Ok(plot.finish())
}

/// Dot-and-whisker rows from `parameter,prob,low,median,high`.
fn interval(table: &Table, options: &PlotOptions) -> CliResult<String> {
    let pc = table.column("parameter")?;
    let lc = table.column("low")?;
    let mc = table.column("median")?;
    let hc = table.column("high")?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for i in 0..table.rows.len() {
        rows.push((
            table.rows[i][pc].clone(),
            table.number(i, lc)?,
            table.number(i, mc)?,
            table.number(i, hc)?,
        ));
    }
    let (lo, hi) = range_of(rows.iter().flat_map(|r| [&r.1, &r.3]));
    let (x0, x1) = pad_range(lo.min(0.0), hi.max(0.0));
    let row_h = 24.0;
    let height = MARGIN_TOP + MARGIN_BOTTOM + row_h * rows.len() as f64;
    let frame = Frame {
        x: (x0, x1),
        y: (0.0, rows.len() as f64),
        left: MARGIN_LEFT,
        right: WIDTH - MARGIN_RIGHT,
        top: MARGIN_TOP,
        bottom: height - MARGIN_BOTTOM,
    };
    let mut plot = Plot::new(height, &options.title);
    frame.axes(&mut plot, "value", false);
    plot.push(format!(
        "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        px(frame.top),
        px(frame.bottom),
        x = px(frame.sx(0.0))
    ));
    for (j, (name, low, median, high)) in rows.iter().enumerate() {
        let y = px(frame.sy(rows.len() as f64 - j as f64 - 0.5));
        plot.push(format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{DARK_BLUE}\" stroke-width=\"2\"/>",
            px(frame.sx(*low)),
            px(frame.sx(*high))
        ));
        plot.push(format!(
            "<circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"{DARK_BLUE}\"/>",
            px(frame.sx(*median))
        ));
        plot.push(format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            px(MARGIN_LEFT - 8.0),
            px(frame.sy(rows.len() as f64 - j as f64 - 0.5) + 4.0),
            escape(name)
        ));
    }
    Ok(plot.finish())
}

/// One panel per coordinate of a draws table, one series per chain.
fn trace(table: &Table, options: &PlotOptions) -> CliResult<String> {
    let cc = table.column("chain")?;
    let ic = table.column("iteration")?;
    let first_coord = table.column("energy")? + 1;
    let coords: Vec<usize> = if options.columns.is_empty() {
        (first_coord..table.header.len()).take(4).collect()
    } else {
        options
            .columns
            .iter()
            .map(|c| table.column(c))
            .collect::<CliResult<_>>()?
    };
    if coords.is_empty() {
        return Err(CliError::Usage(
            "nothing to plot: the draws table has no coordinates".into(),
        ));
    }
    let panel_h = 150.0;
    let gap = 30.0;
    let height = MARGIN_TOP + MARGIN_BOTTOM + coords.len() as f64 * (panel_h + gap) - gap;
    let mut plot = Plot::new(height, &options.title);
    let mut iters = Vec::with_capacity(table.rows.len());
    for i in 0..table.rows.len() {
        iters.push(table.number(i, ic)?);
    }
    let (it0, it1) = range_of(&iters);
    for (p, &c) in coords.iter().enumerate() {
        let mut pts = Vec::with_capacity(table.rows.len());
        for i in 0..table.rows.len() {
            pts.push((table.rows[i][cc].clone(), (iters[i], table.number(i, c)?)));
        }
        let chains = group_in_order(pts);
        let (lo, hi) = range_of(chains.iter().flat_map(|(_, s)| s.iter().map(|q| &q.1)));
        let top = MARGIN_TOP + p as f64 * (panel_h + gap);
        let frame = Frame {
            x: pad_range(it0, it1),
            y: pad_range(lo, hi),
            left: MARGIN_LEFT,
            right: WIDTH - MARGIN_RIGHT,
            top,
            bottom: top + panel_h,
        };
        frame.axes(&mut plot, "", true);
        for (k, (_, series)) in chains.iter().enumerate() {
            let xs: Vec<f64> = series.iter().map(|q| q.0).collect();
            let ys: Vec<f64> = series.iter().map(|q| q.1).collect();
            plot.push(polyline(
                &frame,
                &xs,
                &ys,
                PALETTE[k % PALETTE.len()],
                0.7,
                "",
            ));
        }
        plot.push(format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            px(MARGIN_LEFT - 45.0),
            px(top + panel_h / 2.0),
            escape(&table.header[c])
        ));
    }
    Ok(plot.finish())
}

/// Stage status of one model in a workflow summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skipped => "skipped",
        }
    }

    fn colour(self) -> &'static str {
        match self {
            Status::Pass => "#a1d99b",
            Status::Fail => "#fc9272",
            Status::Skipped => "#d9d9d9",
        }
    }
}

/// Grid of stage outcomes per model, followed by the comparison's elpd
/// differences as dot-and-whisker rows.
pub fn workflow_summary(
    stages: &[&str],
    models: &[(String, Vec<Status>)],
    comparison: Option<&ComparisonTable>,
) -> String {
    let cell_w = 110.0;
    let cell_h = 26.0;
    let grid_h = cell_h * (models.len() + 1) as f64;
    let cmp_rows = comparison.map_or(0, |c| c.rows.len());
    let cmp_h = if cmp_rows > 0 {
        60.0 + 24.0 * cmp_rows as f64 + MARGIN_BOTTOM
    } else {
        30.0
    };
    let height = MARGIN_TOP + grid_h + cmp_h;
    let mut plot = Plot::new(height, "Workflow summary");
    for (s, stage) in stages.iter().enumerate() {
        plot.push(format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
            px(MARGIN_LEFT + cell_w * (s as f64 + 0.5)),
            px(MARGIN_TOP + 17.0),
            escape(stage)
        ));
    }
    for (m, (name, statuses)) in models.iter().enumerate() {
        let y = MARGIN_TOP + cell_h * (m + 1) as f64;
        plot.push(format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
            px(MARGIN_LEFT - 8.0),
            px(y + 17.0),
            escape(name)
        ));
        for (s, st) in statuses.iter().enumerate() {
            let x = MARGIN_LEFT + cell_w * s as f64;
            plot.push(format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"white\"/><text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                px(x),
                px(y),
                px(cell_w),
                px(cell_h),
                st.colour(),
                px(x + cell_w / 2.0),
                px(y + 17.0),
                st.as_str()
            ));
        }
    }
    let top = MARGIN_TOP + grid_h + 50.0;
    match comparison {
        Some(c) if !c.rows.is_empty() => {
            plot.push(format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">elpd_loo (± 2 SE)</text>",
                px(WIDTH / 2.0),
                px(top - 18.0)
            ));
            let (lo, hi) = range_of(
                c.rows
                    .iter()
                    .flat_map(|r| [r.elpd_loo - 2.0 * r.se_elpd, r.elpd_loo + 2.0 * r.se_elpd])
                    .collect::<Vec<_>>()
                    .iter(),
            );
            let frame = Frame {
                x: pad_range(lo, hi),
                y: (0.0, c.rows.len() as f64),
                left: MARGIN_LEFT,
                right: WIDTH - MARGIN_RIGHT,
                top,
                bottom: top + 24.0 * c.rows.len() as f64,
            };
            frame.axes(&mut plot, "", false);
            for (j, r) in c.rows.iter().enumerate() {
                let yc = c.rows.len() as f64 - j as f64 - 0.5;
                let y = px(frame.sy(yc));
                plot.push(format!(
                    "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{DARK_BLUE}\" stroke-width=\"2\"/><circle cx=\"{}\" cy=\"{y}\" r=\"4\" fill=\"{DARK_BLUE}\"/>",
                    px(frame.sx(r.elpd_loo - 2.0 * r.se_elpd)),
                    px(frame.sx(r.elpd_loo + 2.0 * r.se_elpd)),
                    px(frame.sx(r.elpd_loo))
                ));
                plot.push(format!(
                    "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>",
                    px(MARGIN_LEFT - 8.0),
                    px(frame.sy(yc) + 4.0),
                    escape(&r.model)
                ));
            }
        }
        _ => plot.push(format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">nothing to compare</text>",
            px(MARGIN_LEFT),
            px(top - 18.0)
        )),
    }
    plot.finish()
}
