//! Readers and writers for the on-disk formats.
//!
//! * Measurement logs: CSV with header `time_s,azimuth_deg,elevation_deg,range_m,prism_id`,
//!   one file per station. Angles are degrees on disk and radians in memory.
//! * GCP files: CSV with header `label,x_m,y_m,z_m`, one file per frame.
//! * Inter-prism distances: `alpha_m=`, `beta_m=`, `gamma_m=` lines.
//! * Synchronized trajectories: CSV with header
//!   `segment,time_s,x1_m,y1_m,z1_m,x2_m,y2_m,z2_m,x3_m,y3_m,z3_m`.
//! * Calibration reports: see [`write_calibration_report`].

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::{Matrix4, Vector3};
use thiserror::Error;

use crate::preprocess::{SyncedTrajectories, TimeInterval};
use crate::calibrate::{CalibrationResult, Method, PriorSearchDiagnostics, SweepEntry, Validation};
use crate::metrics::{MetricKind, MetricReport};
use crate::se3::{wrap_angle_positive, Frame, PolarMeasurement, RigidTransform, Twist};

pub const MEASUREMENT_HEADER: [&str; 5] =
    ["time_s", "azimuth_deg", "elevation_deg", "range_m", "prism_id"];
pub const GCP_HEADER: [&str; 4] = ["label", "x_m", "y_m", "z_m"];
pub const SYNCED_HEADER: [&str; 11] =
    ["segment", "time_s", "x1_m", "y1_m", "z1_m", "x2_m", "y2_m", "z2_m", "x3_m", "y3_m", "z3_m"];

/// Timestamps closer than this are treated as duplicates.
pub const DUPLICATE_TIME_EPS: f64 = 1e-6;
/// Fraction of malformed rows above which a file is rejected outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

const REPORT_MAGIC: &str = "# rts-calib calibration report v1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognized header: expected '{expected}', found '{found}'")]
    BadHeader { expected: String, found: String },
    #[error("{malformed} of {total} rows are malformed (more than 10%); wrong file?")]
    TooManyMalformed { malformed: usize, total: usize },
    #[error("file contains no usable rows")]
    Empty,
    #[error("duplicate GCP label '{0}'")]
    DuplicateLabel(String),
    #[error("invalid inter-prism distances: {0}")]
    InvalidDistances(String),
    #[error("malformed report, line {line}: {reason}")]
    MalformedReport { line: usize, reason: String },
    #[error("malformed trajectory file, line {line}: {reason}")]
    MalformedSynced { line: usize, reason: String },
    #[error("refusing to write non-finite value in {0}")]
    NonFinite(String),
}

/// A row skipped while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct RowWarning {
    /// 1-based line number in the source, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub station_id: u8,
    /// Strictly increasing in time.
    pub records: Vec<PolarMeasurement>,
}

impl MeasurementLog {
    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpPoint {
    pub label: String,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpSet {
    pub frame: Frame,
    pub points: Vec<GcpPoint>,
}

impl GcpSet {
    pub fn get(&self, label: &str) -> Option<&Vector3<f64>> {
        self.points.iter().find(|p| p.label == label).map(|p| &p.position)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Premeasured distances between the three body-mounted prisms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterPrismDistances {
    /// prism 1 to prism 2
    pub alpha: f64,
    /// prism 1 to prism 3
    pub beta: f64,
    /// prism 2 to prism 3
    pub gamma: f64,
}

impl InterPrismDistances {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, IngestError> {
        let d = Self { alpha, beta, gamma };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let [a, b, c] = [self.alpha, self.beta, self.gamma];
        if !(a.is_finite() && b.is_finite() && c.is_finite()) || a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(IngestError::InvalidDistances(format!(
                "distances must be positive and finite, got {a}, {b}, {c}"
            )));
        }
        if !(a < b + c && b < a + c && c < a + b) {
            return Err(IngestError::InvalidDistances(format!(
                "triangle inequality violated by {a}, {b}, {c}"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    let ok = found.len() == expected.len()
        && found.iter().zip(expected).all(|(f, e)| f.trim() == *e);
    if ok {
        Ok(())
    } else {
        Err(IngestError::BadHeader {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        })
    }
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source)
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str) -> Result<f64, String> {
    let raw = record.get(idx).ok_or_else(|| format!("missing field {name}"))?;
    let v: f64 = raw.parse().map_err(|_| format!("{name}: '{raw}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name}: non-finite value"))
    }
}

fn measurement_row(record: &csv::StringRecord, station_id: u8) -> Result<PolarMeasurement, String> {
    if record.len() != MEASUREMENT_HEADER.len() {
        return Err(format!("expected 5 fields, found {}", record.len()));
    }
    let time = parse_field(record, 0, "time_s")?;
    let azimuth = wrap_angle_positive(parse_field(record, 1, "azimuth_deg")?.to_radians());
    let elevation = parse_field(record, 2, "elevation_deg")?.to_radians();
    let range = parse_field(record, 3, "range_m")?;
    let prism_id: u8 = record[4]
        .parse()
        .map_err(|_| format!("prism_id: '{}' is not an integer", &record[4]))?;
    if !(1..=3).contains(&prism_id) {
        return Err(format!("prism_id {prism_id} outside 1..=3"));
    }
    let m = PolarMeasurement {
        time,
        azimuth,
        elevation,
        range,
        station_id,
        prism_id,
    };
    m.validate().map_err(|e| e.to_string())?;
    Ok(m)
}

fn check_malformed(malformed: usize, total: usize) -> Result<(), IngestError> {
    // a single bad row is always tolerated so tiny files are not rejected outright
    if malformed > 1 && malformed as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(IngestError::TooManyMalformed { malformed, total });
    }
    Ok(())
}

/// Parses one station's measurement log.
///
/// Output records are time-sorted; rows whose timestamp lies within
/// [`DUPLICATE_TIME_EPS`] of an earlier kept row are dropped (the first one
/// in file order wins). Malformed rows are skipped and reported as warnings.
pub fn parse_measurement_log<R: Read>(
    source: R,
    station_id: u8,
) -> Result<(MeasurementLog, Vec<RowWarning>), IngestError> {
    let mut reader = csv_reader(source);
    let header = reader.headers().map_err(csv_to_io)?.clone();
    check_header(&header, &MEASUREMENT_HEADER)?;

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut total = 0usize;
    for (i, row) in reader.records().enumerate() {
        total += 1;
        let line = row
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map(|p| p.line() as usize)
            .unwrap_or(i + 2);
        match row.map_err(|e| e.to_string()).and_then(|r| measurement_row(&r, station_id)) {
            Ok(m) => records.push(m),
            Err(reason) => warnings.push(RowWarning { line, reason }),
        }
    }
    check_malformed(warnings.len(), total)?;
    if records.is_empty() {
        return Err(IngestError::Empty);
    }

    // stable: equal timestamps keep file order
    records.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut deduped: Vec<PolarMeasurement> = Vec::with_capacity(records.len());
    for m in records {
        match deduped.last() {
            Some(last) if m.time - last.time < DUPLICATE_TIME_EPS => warnings.push(RowWarning {
                line: 0,
                reason: format!("duplicate timestamp {} dropped", m.time),
            }),
            _ => deduped.push(m),
        }
    }
    Ok((
        MeasurementLog {
            station_id,
            records: deduped,
        },
        warnings,
    ))
}

pub fn parse_gcp_file<R: Read>(source: R, frame: Frame) -> Result<(GcpSet, Vec<RowWarning>), IngestError> {
    let mut reader = csv_reader(source);
    let header = reader.headers().map_err(csv_to_io)?.clone();
    check_header(&header, &GCP_HEADER)?;

    let mut points: Vec<GcpPoint> = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for (i, row) in reader.records().enumerate() {
        total += 1;
        let parsed = row.map_err(|e| e.to_string()).and_then(|r| {
            if r.len() != GCP_HEADER.len() {
                return Err(format!("expected 4 fields, found {}", r.len()));
            }
            if r[0].is_empty() {
                return Err("empty label".to_string());
            }
            let p = Vector3::new(
                parse_field(&r, 1, "x_m")?,
                parse_field(&r, 2, "y_m")?,
                parse_field(&r, 3, "z_m")?,
            );
            Ok(GcpPoint {
                label: r[0].to_string(),
                position: p,
            })
        });
        match parsed {
            Ok(p) => {
                if !seen.insert(p.label.clone()) {
                    return Err(IngestError::DuplicateLabel(p.label));
                }
                points.push(p);
            }
            Err(reason) => warnings.push(RowWarning { line: i + 2, reason }),
        }
    }
    check_malformed(warnings.len(), total)?;
    if points.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok((GcpSet { frame, points }, warnings))
}

pub fn parse_distances<R: Read>(source: R) -> Result<InterPrismDistances, IngestError> {
    let mut values = [None; 3];
    for line in BufReader::new(source).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| IngestError::InvalidDistances(format!("expected key=value, got '{line}'")))?;
        let slot = match key.trim() {
            "alpha_m" => 0,
            "beta_m" => 1,
            "gamma_m" => 2,
            other => return Err(IngestError::InvalidDistances(format!("unknown key '{other}'"))),
        };
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| IngestError::InvalidDistances(format!("'{}' is not a number", value.trim())))?;
        values[slot] = Some(v);
    }
    match values {
        [Some(a), Some(b), Some(c)] => InterPrismDistances::new(a, b, c),
        _ => Err(IngestError::InvalidDistances(
            "alpha_m, beta_m and gamma_m are all required".into(),
        )),
    }
}

fn csv_to_io(e: csv::Error) -> IngestError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IngestError::Io(io),
        other => IngestError::BadHeader {
            expected: "a CSV header".into(),
            found: format!("{other:?}"),
        },
    }
}

/// Formats with 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_measurement_log<W: Write>(log: &MeasurementLog, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{}", MEASUREMENT_HEADER.join(","))?;
    for m in &log.records {
        writeln!(
            sink,
            "{},{},{},{},{}",
            fmt_f64(m.time),
            fmt_f64(m.azimuth.to_degrees()),
            fmt_f64(m.elevation.to_degrees()),
            fmt_f64(m.range),
            m.prism_id
        )?;
    }
    Ok(())
}

pub fn write_gcp_file<W: Write>(set: &GcpSet, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{}", GCP_HEADER.join(","))?;
    for p in &set.points {
        writeln!(
            sink,
            "{},{},{},{}",
            p.label,
            fmt_f64(p.position.x),
            fmt_f64(p.position.y),
            fmt_f64(p.position.z)
        )?;
    }
    Ok(())
}

pub fn write_distances<W: Write>(d: &InterPrismDistances, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "alpha_m={}", fmt_f64(d.alpha))?;
    writeln!(sink, "beta_m={}", fmt_f64(d.beta))?;
    writeln!(sink, "gamma_m={}", fmt_f64(d.gamma))
}

pub fn write_synced<W: Write>(synced: &SyncedTrajectories, mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{}", SYNCED_HEADER.join(","))?;
    for (k, seg) in synced.segments.iter().enumerate() {
        for j in seg.clone() {
            let mut row = vec![k.to_string(), fmt_f64(synced.times[j])];
            for s in 0..3 {
                row.extend(synced.positions[s][j].iter().map(|v| fmt_f64(*v)));
            }
            writeln!(sink, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Reads a file written by [`write_synced`]. The file is machine-generated,
/// so any bad row is a hard error. Interval bounds are taken from the first
/// and last sample of each segment.
pub fn parse_synced<R: Read>(source: R) -> Result<SyncedTrajectories, IngestError> {
    let mut reader = csv_reader(source);
    let header = reader.headers().map_err(csv_to_io)?.clone();
    check_header(&header, &SYNCED_HEADER)?;

    let mut times = Vec::new();
    let mut positions: [Vec<Vector3<f64>>; 3] = Default::default();
    let mut segments: Vec<std::ops::Range<usize>> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |reason: String| IngestError::MalformedSynced { line, reason };
        let r = row.map_err(|e| bad(e.to_string()))?;
        if r.len() != SYNCED_HEADER.len() {
            return Err(bad(format!("expected 11 fields, found {}", r.len())));
        }
        let seg: usize = r[0].parse().map_err(|_| bad(format!("segment: '{}' is not an integer", &r[0])))?;
        let mut v = [0.0; 10];
        for (k, name) in SYNCED_HEADER[1..].iter().enumerate() {
            v[k] = parse_field(&r, k + 1, name).map_err(bad)?;
        }
        let j = times.len();
        if j > 0 && v[0] <= times[j - 1] {
            return Err(bad("time not increasing".into()));
        }
        let n_seg = segments.len();
        if seg + 1 == n_seg {
            segments[n_seg - 1].end = j + 1;
        } else if seg == n_seg {
            segments.push(j..j + 1);
        } else {
            return Err(bad(format!("segment {seg} out of order")));
        }
        times.push(v[0]);
        for s in 0..3 {
            positions[s].push(Vector3::new(v[1 + 3 * s], v[2 + 3 * s], v[3 + 3 * s]));
        }
    }
    if times.is_empty() {
        return Err(IngestError::Empty);
    }
    let intervals = segments
        .iter()
        .map(|r| TimeInterval { start: times[r.start], end: times[r.end - 1] })
        .collect();
    Ok(SyncedTrajectories { times, positions, segments, intervals })
}

/// Summary statistics of one metric as stored in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub kind: MetricKind,
    pub count: usize,
    pub median: f64,
    pub iqr: f64,
}

impl From<&MetricReport> for MetricSummary {
    fn from(r: &MetricReport) -> Self {
        Self {
            kind: r.kind,
            count: r.count,
            median: r.median,
            iqr: r.iqr,
        }
    }
}

/// Everything a calibration run writes to its report file.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub result: CalibrationResult,
    pub metrics: Vec<MetricSummary>,
    pub diagnostics: Option<PriorSearchDiagnostics>,
}

fn ensure_finite(name: &str, values: impl IntoIterator<Item = f64>) -> Result<(), IngestError> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(IngestError::NonFinite(name.to_string()))
    }
}

fn twist_line(xi: &Twist) -> String {
    xi.to_array().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

/// Writes a report as a sectioned key=value document.
///
/// ```text
/// # rts-calib calibration report v1
/// [result]
/// method = inter_prism
/// cost_m2 = ...
/// [transform T_12]
/// from = station2
/// to = station1
/// matrix =
///   r00 r01 r02 tx        (4 rows, row-major)
/// twist = rho_x rho_y rho_z phi
/// [residuals]             (one value per line, meters)
/// [cost_history]          (one value per line, m^2)
/// [metric inter_prism]
/// [prior_search]          (only for inter-prism runs)
/// ```
///
/// Every float is written with 17 significant digits so parsing the
/// document back reproduces the values bit for bit.
pub fn write_calibration_report<W: Write>(report: &CalibrationReport, mut sink: W) -> Result<(), IngestError> {
    let r = &report.result;
    ensure_finite("cost", [r.cost])?;
    ensure_finite("residuals", r.residuals.iter().copied())?;
    ensure_finite("cost history", r.cost_history.iter().copied())?;
    for t in [&r.t_12, &r.t_13] {
        ensure_finite("transform", t.to_matrix4().iter().copied())?;
    }
    for m in &report.metrics {
        ensure_finite("metric", [m.median, m.iqr])?;
    }

    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(REPORT_MAGIC.to_string());
    line("[result]".into());
    line(format!("method = {}", r.method));
    line(format!("cost_m2 = {}", fmt_f64(r.cost)));
    line(format!("iterations = {}", r.iterations));
    line(format!("converged = {}", r.converged));
    line(format!(
        "validation = {}",
        r.validation.map(|v| v.to_string()).unwrap_or_else(|| "n/a".into())
    ));
    line(format!("residual_count = {}", r.residuals.len()));
    for (name, t, xi) in [("T_12", &r.t_12, &r.xi_12), ("T_13", &r.t_13, &r.xi_13)] {
        line(format!("[transform {name}]"));
        line(format!("from = {}", t.from));
        line(format!("to = {}", t.to));
        line("matrix =".into());
        let m = t.to_matrix4();
        for row in 0..4 {
            line(format!(
                "  {}",
                (0..4).map(|c| fmt_f64(m[(row, c)])).collect::<Vec<_>>().join(" ")
            ));
        }
        line(format!("twist = {}", twist_line(xi)));
    }
    line("[residuals]".into());
    for v in &r.residuals {
        line(fmt_f64(*v));
    }
    line("[cost_history]".into());
    for v in &r.cost_history {
        line(fmt_f64(*v));
    }
    for m in &report.metrics {
        line(format!("[metric {}]", m.kind));
        line(format!("count = {}", m.count));
        line(format!("median_m = {}", fmt_f64(m.median)));
        line(format!("iqr_m = {}", fmt_f64(m.iqr)));
    }
    if let Some(d) = &report.diagnostics {
        line("[prior_search]".into());
        line(format!("start_tau_v = {}", fmt_f64(d.start_tau_v)));
        line(format!("best_step1 = {}", opt_usize(d.best_step1)));
        line(format!("best_step2 = {}", opt_usize(d.best_step2)));
        line(format!("similar_convergence_count = {}", d.similar_convergence_count));
        line(format!("effective_entries = {}", d.effective_entries));
        line(format!("insufficient_diversity = {}", d.insufficient_diversity));
        line(format!("mirror_replaced = {}", d.mirror_replaced));
        line(format!("predicted_sd_translation_m = {}", fmt_f64(d.predicted_sd.0)));
        line(format!("predicted_sd_yaw_rad = {}", fmt_f64(d.predicted_sd.1)));
        line(format!("heading_coverage_rad = {}", fmt_f64(d.heading_coverage)));
        line("# entry = step tau_v subset_size cost metric_median converged iterations xi_12[4] xi_13[4]".into());
        for e in &d.entries {
            line(format!(
                "entry = {} {} {} {} {} {} {} {} {}",
                e.step,
                fmt_f64(e.tau_v),
                e.subset_size,
                fmt_f64(e.cost),
                fmt_f64(e.metric_median),
                e.converged,
                e.iterations,
                twist_line(&e.xi_12),
                twist_line(&e.xi_13)
            ));
        }
    }
    sink.write_all(out.as_bytes())?;
    Ok(())
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
}

struct ReportCursor<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> ReportCursor<'a> {
    fn err(&self, reason: impl Into<String>) -> IngestError {
        let line = self.lines.get(self.pos.saturating_sub(1)).map(|l| l.0).unwrap_or(0);
        IngestError::MalformedReport {
            line,
            reason: reason.into(),
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        let l = self.lines.get(self.pos).map(|l| l.1);
        if l.is_some() {
            self.pos += 1;
        }
        l
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.1)
    }

    fn key(&mut self, key: &str) -> Result<&'a str, IngestError> {
        let l = self.next().ok_or_else(|| self.err(format!("missing '{key}'")))?;
        match l.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim()),
            _ => Err(self.err(format!("expected '{key} = ...', found '{l}'"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, IngestError> {
        let v = self.key(key)?;
        v.parse().map_err(|_| self.err(format!("cannot parse {key} value '{v}'")))
    }

    fn section(&mut self, name: &str) -> Result<(), IngestError> {
        match self.next() {
            Some(l) if l == format!("[{name}]") => Ok(()),
            other => Err(self.err(format!("expected section [{name}], found {other:?}"))),
        }
    }

    /// Consumes plain value lines until the next section header.
    fn values(&mut self) -> Result<Vec<f64>, IngestError> {
        let mut out = Vec::new();
        while let Some(l) = self.peek() {
            if l.starts_with('[') {
                break;
            }
            self.pos += 1;
            out.push(l.parse().map_err(|_| self.err(format!("bad value '{l}'")))?);
        }
        Ok(out)
    }
}

fn parse_floats(s: &str, n: usize) -> Option<Vec<f64>> {
    let v: Vec<f64> = s.split_whitespace().map(|t| t.parse().ok()).collect::<Option<_>>()?;
    (v.len() == n).then_some(v)
}

pub fn parse_calibration_report<R: Read>(mut source: R) -> Result<CalibrationReport, IngestError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut cur = ReportCursor {
        lines: text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect(),
        pos: 0,
    };
    if cur.next() != Some(REPORT_MAGIC) {
        return Err(cur.err("missing report header line"));
    }
    cur.section("result")?;
    let method: Method = cur.parse("method")?;
    let cost: f64 = cur.parse("cost_m2")?;
    let iterations: usize = cur.parse("iterations")?;
    let converged: bool = cur.parse("converged")?;
    let validation = match cur.key("validation")? {
        "n/a" => None,
        v => Some(v.parse::<Validation>().map_err(|e| cur.err(e))?),
    };
    let residual_count: usize = cur.parse("residual_count")?;

    let mut transforms = Vec::new();
    for name in ["T_12", "T_13"] {
        cur.section(&format!("transform {name}"))?;
        let from: Frame = cur.key("from")?.parse().map_err(|e: String| cur.err(e))?;
        let to: Frame = cur.key("to")?.parse().map_err(|e: String| cur.err(e))?;
        if !cur.key("matrix")?.is_empty() {
            return Err(cur.err("matrix block must start on the next line"));
        }
        let mut m = Matrix4::zeros();
        for row in 0..4 {
            let l = cur.next().ok_or_else(|| cur.err("truncated matrix"))?;
            let v = parse_floats(l, 4).ok_or_else(|| cur.err("matrix row needs 4 numbers"))?;
            for (c, x) in v.into_iter().enumerate() {
                m[(row, c)] = x;
            }
        }
        let xi = parse_floats(cur.key("twist")?, 4).ok_or_else(|| cur.err("twist needs 4 numbers"))?;
        transforms.push((RigidTransform::from_matrix4(&m, from, to), Twist::from_slice(&xi)));
    }

    cur.section("residuals")?;
    let residuals = cur.values()?;
    if residuals.len() != residual_count {
        return Err(cur.err(format!(
            "residual_count says {residual_count}, found {}",
            residuals.len()
        )));
    }
    cur.section("cost_history")?;
    let cost_history = cur.values()?;

    let mut metrics = Vec::new();
    let mut diagnostics = None;
    while let Some(l) = cur.next() {
        if let Some(kind) = l.strip_prefix("[metric ").and_then(|s| s.strip_suffix(']')) {
            let kind: MetricKind = kind.parse().map_err(|e: String| cur.err(e))?;
            metrics.push(MetricSummary {
                kind,
                count: cur.parse("count")?,
                median: cur.parse("median_m")?,
                iqr: cur.parse("iqr_m")?,
            });
        } else if l == "[prior_search]" {
            diagnostics = Some(parse_diagnostics(&mut cur)?);
        } else {
            return Err(cur.err(format!("unexpected line '{l}'")));
        }
    }

    let (t_12, xi_12) = transforms[0];
    let (t_13, xi_13) = transforms[1];
    Ok(CalibrationReport {
        result: CalibrationResult {
            method,
            t_12,
            t_13,
            xi_12,
            xi_13,
            cost,
            residuals,
            iterations,
            converged,
            validation,
            cost_history,
        },
        metrics,
        diagnostics,
    })
}

fn parse_opt_usize(cur: &mut ReportCursor, key: &str) -> Result<Option<usize>, IngestError> {
    match cur.key(key)? {
        "none" => Ok(None),
        v => v.parse().map(Some).map_err(|_| cur.err(format!("bad {key}"))),
    }
}

fn parse_diagnostics(cur: &mut ReportCursor) -> Result<PriorSearchDiagnostics, IngestError> {
    let start_tau_v = cur.parse("start_tau_v")?;
    let best_step1 = parse_opt_usize(cur, "best_step1")?;
    let best_step2 = parse_opt_usize(cur, "best_step2")?;
    let similar_convergence_count = cur.parse("similar_convergence_count")?;
    let effective_entries = cur.parse("effective_entries")?;
    let insufficient_diversity = cur.parse("insufficient_diversity")?;
    let mirror_replaced = cur.parse("mirror_replaced")?;
    let sd_t = cur.parse("predicted_sd_translation_m")?;
    let sd_r = cur.parse("predicted_sd_yaw_rad")?;
    let heading_coverage = cur.parse("heading_coverage_rad")?;
    let mut entries = Vec::new();
    while let Some(l) = cur.peek() {
        if l.starts_with('#') {
            cur.pos += 1;
            continue;
        }
        if !l.starts_with("entry") {
            break;
        }
        let v = cur.key("entry")?;
        let f: Vec<&str> = v.split_whitespace().collect();
        if f.len() != 15 {
            return Err(cur.err("entry needs 15 fields"));
        }
        let bad = |_| cur.err("bad entry field");
        let nums: Vec<f64> = f[7..].iter().map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(bad)?;
        entries.push(SweepEntry {
            step: f[0].parse().map_err(|_| cur.err("bad step"))?,
            tau_v: f[1].parse().map_err(|_| cur.err("bad tau_v"))?,
            subset_size: f[2].parse().map_err(|_| cur.err("bad subset size"))?,
            cost: f[3].parse().map_err(|_| cur.err("bad cost"))?,
            metric_median: f[4].parse().map_err(|_| cur.err("bad median"))?,
            converged: f[5].parse().map_err(|_| cur.err("bad converged flag"))?,
            iterations: f[6].parse().map_err(|_| cur.err("bad iterations"))?,
            xi_12: Twist::from_slice(&nums[0..4]),
            xi_13: Twist::from_slice(&nums[4..8]),
        });
    }
    Ok(PriorSearchDiagnostics {
        entries,
        best_step1,
        best_step2,
        similar_convergence_count,
        start_tau_v,
        effective_entries,
        insufficient_diversity,
        mirror_replaced,
        predicted_sd: (sd_t, sd_r),
        heading_coverage,
    })
}
