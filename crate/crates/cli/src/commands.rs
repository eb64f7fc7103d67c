use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};

use rts_calib::calibrate::{
    dynamic_gcp_calibrate, dynamic_inter_prism_calibrate, gcp_triplets, static_gcp_calibrate, two_point_calibrate,
    CalibrationResult, Method, PriorSearchDiagnostics, Validation,
};
use rts_calib::ingest::{
    fmt_f64, parse_calibration_report, parse_distances, parse_gcp_file, parse_measurement_log, parse_synced,
    write_calibration_report, write_distances, write_gcp_file, write_measurement_log, write_synced, CalibrationReport,
    GcpSet, InterPrismDistances, MeasurementLog, MetricSummary, RowWarning,
};
use rts_calib::metrics::{gcp_metric, inter_prism_metric, write_metric_samples, MetricReport};
use rts_calib::preprocess::{run_pipeline_with_stats, SyncedTrajectories};
use rts_calib::se3::{transform_delta, Frame, RigidTransform};
use rts_calib::simulate::{generate_scene, GroundTruth};

use crate::manifest::RunManifest;
use crate::truth::TruthFile;
use crate::{CliError, CommonArgs, Config, InputArgs, Outcome, PipelineOverrides};

pub const REPORT_FILE: &str = "report.txt";
pub const SYNCED_FILE: &str = "synced.csv";
pub const TRUTH_FILE: &str = "truth.toml";
pub const TRUTH_TRAJECTORY_FILE: &str = "truth_trajectory.csv";
pub const DISTANCES_FILE: &str = "distances.txt";
pub const WORLD_GCP_FILE: &str = "gcp_world.csv";
pub const EVALUATION_FILE: &str = "evaluation.txt";

pub fn log_file(station: usize) -> String {
    format!("station{station}.csv")
}

pub fn gcp_file(station: usize) -> String {
    format!("gcp_station{station}.csv")
}

fn load_config(common: &CommonArgs) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Config::from_toml(&text)?
        }
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn report_warnings(path: &Path, warnings: &[RowWarning]) -> usize {
    for w in warnings {
        warn!("{}:{}: {}", path.display(), w.line, w.reason);
    }
    warnings.len()
}

/// Input files after merging explicit flags with the `--input` directory.
struct Sources<'a> {
    args: &'a InputArgs,
    used: Vec<PathBuf>,
    warnings: usize,
}

impl<'a> Sources<'a> {
    fn new(args: &'a InputArgs) -> Self {
        Self { args, used: Vec::new(), warnings: 0 }
    }

    /// Explicit path, else the conventional name inside `--input` if it exists.
    fn pick(&self, explicit: Option<&PathBuf>, name: &str) -> Option<PathBuf> {
        explicit
            .cloned()
            .or_else(|| self.args.input.as_ref().map(|d| d.join(name)).filter(|p| p.exists()))
    }

    fn pick3(&self, explicit: Option<&Vec<PathBuf>>, name: fn(usize) -> String) -> Option<[PathBuf; 3]> {
        if let Some(v) = explicit {
            return Some([v[0].clone(), v[1].clone(), v[2].clone()]);
        }
        let dir = self.args.input.as_ref()?;
        let paths = [1, 2, 3].map(|i| dir.join(name(i)));
        paths.iter().all(|p| p.exists()).then_some(paths)
    }

    fn logs(&mut self) -> Result<Option<[MeasurementLog; 3]>, CliError> {
        let Some(paths) = self.pick3(self.args.logs.as_ref(), log_file) else {
            return Ok(None);
        };
        let mut logs = Vec::with_capacity(3);
        for (i, path) in paths.iter().enumerate() {
            let (log, w) = parse_measurement_log(open(path)?, i as u8 + 1).map_err(|e| CliError::io(path, e))?;
            self.warnings += report_warnings(path, &w);
            self.used.push(path.clone());
            logs.push(log);
        }
        Ok(Some(logs.try_into().expect("three logs")))
    }

    fn gcps(&mut self) -> Result<Option<[GcpSet; 3]>, CliError> {
        let Some(paths) = self.pick3(self.args.gcp.as_ref(), gcp_file) else {
            return Ok(None);
        };
        let mut sets = Vec::with_capacity(3);
        for (i, path) in paths.iter().enumerate() {
            let (set, w) = parse_gcp_file(open(path)?, Frame::Station(i as u8 + 1)).map_err(|e| CliError::io(path, e))?;
            self.warnings += report_warnings(path, &w);
            self.used.push(path.clone());
            sets.push(set);
        }
        Ok(Some(sets.try_into().expect("three GCP sets")))
    }

    fn world_gcps(&mut self) -> Result<Option<GcpSet>, CliError> {
        let Some(path) = self.pick(self.args.world_gcp.as_ref(), WORLD_GCP_FILE) else {
            return Ok(None);
        };
        let (set, w) = parse_gcp_file(open(&path)?, Frame::World).map_err(|e| CliError::io(&path, e))?;
        self.warnings += report_warnings(&path, &w);
        self.used.push(path);
        Ok(Some(set))
    }

    fn distances(&mut self) -> Result<Option<InterPrismDistances>, CliError> {
        let Some(path) = self.pick(self.args.distances.as_ref(), DISTANCES_FILE) else {
            return Ok(None);
        };
        let d = parse_distances(open(&path)?).map_err(|e| CliError::io(&path, e))?;
        self.used.push(path);
        Ok(Some(d))
    }

    /// A synchronized file when given, else the logs run through the pipeline.
    fn synced(&mut self, cfg: &Config) -> Result<Option<SyncedTrajectories>, CliError> {
        let explicit_logs = self.args.logs.is_some();
        if !explicit_logs {
            if let Some(path) = self.pick(self.args.synced.as_ref(), SYNCED_FILE) {
                let s = parse_synced(open(&path)?).map_err(|e| CliError::io(&path, e))?;
                self.used.push(path);
                return Ok(Some(s));
            }
        }
        match self.logs()? {
            Some(logs) => {
                let (synced, stats) = run_pipeline_with_stats(&logs, &cfg.pipeline_config()?)?;
                info!("pipeline: {stats:?}");
                Ok(Some(synced))
            }
            None => Ok(None),
        }
    }
}

fn require<T>(v: Option<T>, what: &str, method: Method) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("method {method} needs {what}")))
}

pub fn simulate(common: &CommonArgs) -> Result<Outcome, CliError> {
    let cfg = load_config(common)?;
    let scene_cfg = cfg.scene_config()?;
    let scene = generate_scene(&scene_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let out = &common.out;
    create_dir(out)?;

    let mut outputs = Vec::new();
    for (i, log) in scene.logs.iter().enumerate() {
        outputs.push(write_with(&out.join(log_file(i + 1)), |w| write_measurement_log(log, w))?);
    }
    outputs.push(write_with(&out.join(DISTANCES_FILE), |w| write_distances(&scene.delta, w))?);
    for (i, set) in scene.gcps.iter().enumerate() {
        outputs.push(write_with(&out.join(gcp_file(i + 1)), |w| write_gcp_file(set, w))?);
    }
    outputs.push(write_with(&out.join(WORLD_GCP_FILE), |w| write_gcp_file(&scene.world_gcps, w))?);
    let truth = TruthFile::new(&scene_cfg, &scene.truth);
    outputs.push(write_with(&out.join(TRUTH_FILE), |w| w.write_all(truth.to_toml().as_bytes()))?);
    outputs.push(write_with(&out.join(TRUTH_TRAJECTORY_FILE), |w| write_truth_trajectory(&scene.truth, w))?);
    RunManifest::new("simulate", &cfg, &[], &outputs, 0)?.write(out)?;

    let records = scene.logs.iter().map(|l| l.records.len().to_string()).collect::<Vec<_>>().join(",");
    Ok(Outcome {
        exit_code: 0,
        summary: format!(
            "status=ok command=simulate trajectory={} records={} outliers={} out={}",
            scene_cfg.trajectory.name(),
            records,
            scene.truth.outliers.len(),
            out.display()
        ),
    })
}

fn write_truth_trajectory<W: Write>(truth: &GroundTruth, mut w: W) -> std::io::Result<()> {
    writeln!(w, "time_s,x1_m,y1_m,z1_m,x2_m,y2_m,z2_m,x3_m,y3_m,z3_m")?;
    for (j, t) in truth.times.iter().enumerate() {
        let mut row = vec![fmt_f64(*t)];
        for prism in &truth.prism_positions {
            row.extend(prism[j].iter().map(|v| fmt_f64(*v)));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn preprocess(common: &CommonArgs, inputs: &InputArgs, overrides: &PipelineOverrides) -> Result<Outcome, CliError> {
    let mut cfg = load_config(common)?;
    overrides.apply(&mut cfg);
    let pipeline = cfg.pipeline_config()?;
    let mut sources = Sources::new(inputs);
    let logs = sources
        .logs()?
        .ok_or_else(|| CliError::Config("preprocess needs --logs or an --input directory with station logs".into()))?;
    let (synced, stats) = run_pipeline_with_stats(&logs, &pipeline)?;

    let out = &common.out;
    create_dir(out)?;
    let synced_path = write_with(&out.join(SYNCED_FILE), |w| write_synced(&synced, w))?;
    RunManifest::new("preprocess", &cfg, &sources.used, &[synced_path], sources.warnings)?.write(out)?;
    Ok(Outcome {
        exit_code: 0,
        summary: format!(
            "status=ok command=preprocess samples={} intervals_kept={} intervals_found={} records_kept={}",
            synced.len(),
            stats.intervals_kept,
            stats.intervals_found,
            stats.after_outlier_filter.map(|n| n.to_string()).join(",")
        ),
    })
}

pub fn calibrate(
    common: &CommonArgs,
    inputs: &InputArgs,
    overrides: &PipelineOverrides,
    method: Option<&str>,
) -> Result<Outcome, CliError> {
    let mut cfg = load_config(common)?;
    overrides.apply(&mut cfg);
    if let Some(m) = method {
        cfg.calibrate.method = m.to_string();
    }
    let method = cfg.method()?;
    let prior_cfg = cfg.prior_config()?;
    cfg.pipeline_config()?;

    let mut sources = Sources::new(inputs);
    let gcps = sources.gcps()?;
    let world = sources.world_gcps()?;
    let delta = sources.distances()?;
    let synced = sources.synced(&cfg)?;

    let mut diagnostics: Option<PriorSearchDiagnostics> = None;
    let result: CalibrationResult = match method {
        Method::TwoPoint => two_point_calibrate(
            require(world.as_ref(), "world GCP coordinates", method)?,
            require(gcps.as_ref(), "station GCP observations", method)?,
        )?,
        Method::StaticGcp => static_gcp_calibrate(
            require(gcps.as_ref(), "station GCP observations", method)?,
            world.as_ref(),
            !cfg.calibrate.static_full_se3,
        )?,
        Method::DynamicGcp => dynamic_gcp_calibrate(require(synced.as_ref(), "measurement logs", method)?, true)?,
        Method::InterPrism => {
            let s = require(synced.as_ref(), "measurement logs", method)?;
            let d = require(delta.as_ref(), "inter-prism distances", method)?;
            let (r, diag) = dynamic_inter_prism_calibrate(s, d, &prior_cfg)?;
            diagnostics = Some(diag);
            r
        }
    };

    let out = &common.out;
    create_dir(out)?;
    let mut outputs = Vec::new();
    let mut metrics: Vec<MetricReport> = Vec::new();
    if let (Some(s), Some(d)) = (&synced, &delta) {
        metrics.push(inter_prism_metric(s, &result.t_12, &result.t_13, d));
    }
    if let Some(g) = &gcps {
        let m = gcp_metric(&gcp_triplets(g, &result.t_12, &result.t_13));
        if m.count > 0 {
            metrics.push(m);
        }
    }
    for m in &metrics {
        outputs.push(write_with(&out.join(format!("metric_{}.csv", m.kind)), |w| write_metric_samples(m, w))?);
    }

    let report = CalibrationReport {
        result,
        metrics: metrics.iter().map(MetricSummary::from).collect(),
        diagnostics,
    };
    let report_path = out.join(REPORT_FILE);
    let mut buf = Vec::new();
    write_calibration_report(&report, &mut buf).map_err(|e| CliError::Solver(e.to_string()))?;
    fs::write(&report_path, &buf).map_err(|e| CliError::io(&report_path, e))?;
    outputs.insert(0, report_path);
    RunManifest::new("calibrate", &cfg, &sources.used, &outputs, sources.warnings)?.write(out)?;

    let r = &report.result;
    let validation = r.validation;
    let status = match validation {
        None | Some(Validation::Validated) => "ok".to_string(),
        Some(v) => v.to_string(),
    };
    let mut summary = format!(
        "status={status} command=calibrate method={method} cost_m2={:.6e} iterations={}",
        r.cost, r.iterations
    );
    if let Some(v) = validation {
        summary.push_str(&format!(" validation={v}"));
    }
    for m in &report.metrics {
        summary.push_str(&format!(" {}_median_m={:.6e}", m.kind, m.median));
    }
    summary.push_str(&format!(" report={}", out.join(REPORT_FILE).display()));
    let exit_code = match validation {
        Some(Validation::Unvalidated) | Some(Validation::Degenerate) => 3,
        _ => 0,
    };
    Ok(Outcome { exit_code, summary })
}

fn read_report(path: &Path) -> Result<CalibrationReport, CliError> {
    parse_calibration_report(open(path)?).map_err(|e| CliError::io(path, e))
}

fn deltas(report: &CalibrationReport, t_12: &RigidTransform, t_13: &RigidTransform) -> Result<[(f64, f64); 2], CliError> {
    let d = |a: &RigidTransform, b: &RigidTransform| transform_delta(a, b).map_err(|e| CliError::Io(e.to_string()));
    Ok([d(&report.result.t_12, t_12)?, d(&report.result.t_13, t_13)?])
}

pub fn evaluate(report: &Path, truth: Option<&Path>, against: Option<&Path>, out: Option<&Path>) -> Result<Outcome, CliError> {
    let rep = read_report(report)?;
    let mut lines = vec![format!("method = {}", rep.result.method)];
    let errors = match (truth, against) {
        (Some(t), _) => {
            let (t12, t13) = TruthFile::read(t)?.transforms()?;
            lines.push("reference = truth".into());
            deltas(&rep, &t12, &t13)?
        }
        (None, Some(a)) => {
            let other = read_report(a)?;
            lines.push(format!("reference = report ({})", other.result.method));
            for m in &rep.metrics {
                if let Some(o) = other.metrics.iter().find(|o| o.kind == m.kind) {
                    lines.push(format!("{}_median_delta_m = {}", m.kind, fmt_f64(m.median - o.median)));
                    lines.push(format!("{}_iqr_delta_m = {}", m.kind, fmt_f64(m.iqr - o.iqr)));
                }
            }
            deltas(&rep, &other.result.t_12, &other.result.t_13)?
        }
        (None, None) => return Err(CliError::Config("evaluate needs --truth or --against".into())),
    };
    for (name, (dt, dr)) in ["t12", "t13"].iter().zip(errors) {
        lines.push(format!("{name}_translation_m = {}", fmt_f64(dt)));
        lines.push(format!("{name}_rotation_rad = {}", fmt_f64(dr)));
    }
    for m in &rep.metrics {
        lines.push(format!("{}_median_m = {}", m.kind, fmt_f64(m.median)));
        lines.push(format!("{}_iqr_m = {}", m.kind, fmt_f64(m.iqr)));
    }
    let text = lines.join("\n") + "\n";
    match out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join(EVALUATION_FILE);
            fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        }
        // stdout is reserved for the summary line
        None => eprint!("{text}"),
    }
    Ok(Outcome {
        exit_code: 0,
        summary: format!(
            "status=ok command=evaluate t12_translation_m={:.6e} t12_rotation_rad={:.6e} t13_translation_m={:.6e} t13_rotation_rad={:.6e}",
            errors[0].0, errors[0].1, errors[1].0, errors[1].1
        ),
    })
}
