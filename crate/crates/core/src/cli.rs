//! Configuration parsing and study execution for the command line tool.
//!
//! A configuration is a list of `key=value` tokens separated by whitespace or
//! newlines; `#` starts a comment. Missing keys take their defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point2;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::assembly::PhysicalParams;
use crate::geometry::{LevelSet, Phase};
use crate::verification::{
    self, default_positions, default_slips, default_viscosities, eoc_table, position_center, run_case, ErrorReport,
    ManufacturedCase, StudyEntry, StudySettings,
};

pub const CSV_HEADER: &str = "study,case_id,n,h,mu_minus,mu_plus,f,k,c1,c2,err_l2_u,err_h1w_u,err_h1w_u_scaled,err_l2w_p,eoc_l2_u,eoc_h1w_u,eoc_l2w_p,residual,status,wall_ms";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("PARSE_ERROR line {line}, key '{key}': {message}")]
    Parse { line: usize, key: String, message: String },
    #[error("VALIDATION_ERROR: {0}")]
    Validation(String),
}

impl ConfigError {
    pub fn status(&self) -> &'static str {
        match self {
            ConfigError::Parse { .. } => "PARSE_ERROR",
            ConfigError::Validation(_) => "VALIDATION_ERROR",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Case(#[from] crate::error::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    Convergence,
    Viscosity,
    Slip,
    Position,
    Single,
}

impl StudyKind {
    fn name(self) -> &'static str {
        match self {
            StudyKind::Convergence => "convergence",
            StudyKind::Viscosity => "viscosity",
            StudyKind::Slip => "slip",
            StudyKind::Position => "position",
            StudyKind::Single => "single",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub study: StudyKind,
    /// Mesh subdivisions for sweeps and single runs.
    pub n: usize,
    pub n_list: Vec<usize>,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub f: f64,
    pub c: [f64; 2],
    /// Position index; overrides `c` when set.
    pub k: Option<u32>,
    pub mu_plus_list: Vec<f64>,
    pub f_list: Vec<f64>,
    pub k_list: Vec<u32>,
    pub params: PhysicalParams,
    pub tol: f64,
    pub out: PathBuf,
    /// Write measured wall times into results.csv (breaks byte-identical reruns).
    pub record_timings: bool,
    /// Samples per axis of the solution dump of a single run; 0 disables it.
    pub dump_grid: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            study: StudyKind::Convergence,
            n: 32,
            n_list: vec![4, 8, 16, 32],
            mu_minus: 1.0,
            mu_plus: 10.0,
            f: 10.0,
            c: [0.0, 0.0],
            k: None,
            mu_plus_list: default_viscosities(),
            f_list: default_slips(),
            k_list: default_positions(),
            params: PhysicalParams::default(),
            tol: crate::solver::DEFAULT_TOL,
            out: PathBuf::from("results"),
            record_timings: false,
            dump_grid: 0,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
    value.split(',').map(|s| s.trim().parse().ok()).collect()
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("");
        for token in content.split_whitespace() {
            let Some((key, value)) = token.split_once('=') else {
                return Err(ConfigError::Parse { line, key: token.into(), message: "expected key=value".into() });
            };
            let err = |message: &str| ConfigError::Parse { line, key: key.into(), message: message.into() };
            if !seen.insert(key.to_string()) {
                return Err(err("duplicate key"));
            }
            let num = || value.parse::<f64>().map_err(|_| err("expected a number"));
            let int = || value.parse::<usize>().map_err(|_| err("expected a non-negative integer"));
            let boolean = || value.parse::<bool>().map_err(|_| err("expected true or false"));
            match key {
                "study" => {
                    cfg.study = match value {
                        "convergence" => StudyKind::Convergence,
                        "viscosity" => StudyKind::Viscosity,
                        "slip" => StudyKind::Slip,
                        "position" => StudyKind::Position,
                        "single" => StudyKind::Single,
                        _ => return Err(err("expected convergence, viscosity, slip, position or single")),
                    }
                }
                "n" => cfg.n = int()?,
                "n_list" => cfg.n_list = parse_list(value).ok_or_else(|| err("expected comma-separated integers"))?,
                "mu_minus" => cfg.mu_minus = num()?,
                "mu_plus" => cfg.mu_plus = num()?,
                "f" => cfg.f = num()?,
                "c1" => cfg.c[0] = num()?,
                "c2" => cfg.c[1] = num()?,
                "k" => cfg.k = Some(value.parse().map_err(|_| err("expected a non-negative integer"))?),
                "mu_plus_list" => cfg.mu_plus_list = parse_list(value).ok_or_else(|| err("expected comma-separated numbers"))?,
                "f_list" => cfg.f_list = parse_list(value).ok_or_else(|| err("expected comma-separated numbers"))?,
                "k_list" => cfg.k_list = parse_list(value).ok_or_else(|| err("expected comma-separated integers"))?,
                "gamma" => cfg.params.gamma = num()?,
                "gamma_u" => cfg.params.gamma_u = [num()?; 2],
                "gamma_u_minus" => cfg.params.gamma_u[0] = num()?,
                "gamma_u_plus" => cfg.params.gamma_u[1] = num()?,
                "gamma_p" => cfg.params.gamma_p = [num()?; 2],
                "gamma_p_minus" => cfg.params.gamma_p[0] = num()?,
                "gamma_p_plus" => cfg.params.gamma_p[1] = num()?,
                "alpha" => cfg.params.alpha = num()?,
                "beta" => cfg.params.beta = num()?,
                "tol" => cfg.tol = num()?,
                "out" => cfg.out = PathBuf::from(value),
                "record_timings" => cfg.record_timings = boolean()?,
                "dump_grid" => cfg.dump_grid = int()?,
                _ => return Err(err("unknown key")),
            }
        }
    }
    cfg.params.mu_minus = cfg.mu_minus;
    cfg.params.mu_plus = cfg.mu_plus;
    cfg.params.slip = cfg.f;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    let fail = |m: String| Err(ConfigError::Validation(m));
    cfg.params.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
    if cfg.f <= 0.0 {
        return fail(format!("f must be > 0 for the manufactured solution (got {})", cfg.f));
    }
    if !(cfg.tol > 0.0 && cfg.tol < 1.0) {
        return fail(format!("tol must lie in (0, 1) (got {})", cfg.tol));
    }
    if cfg.n < 2 || cfg.n % 2 != 0 {
        return fail(format!("n must be even and >= 2 (got {})", cfg.n));
    }
    let increasing_powers = !cfg.n_list.is_empty()
        && cfg.n_list.iter().all(|n| n.is_power_of_two() && *n >= 2)
        && cfg.n_list.windows(2).all(|w| w[0] < w[1]);
    if !increasing_powers {
        return fail(format!("n_list must be strictly increasing powers of two >= 2 (got {:?})", cfg.n_list));
    }
    if cfg.mu_plus_list.iter().any(|&m| !(m >= 1.0 && m.is_finite())) {
        return fail("mu_plus_list entries must be >= mu_minus = 1".into());
    }
    if cfg.f_list.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return fail("f_list entries must be > 0".into());
    }
    if cfg.c.iter().any(|c| !c.is_finite()) {
        return fail("c1, c2 must be finite".into());
    }
    Ok(())
}

/// Command line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    /// Largest mesh to run; larger entries of `n_list` are skipped.
    pub n_max: usize,
}

/// One row of results.csv.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub study: &'static str,
    pub case_id: usize,
    pub n: usize,
    pub case: ManufacturedCase,
    pub k: Option<u32>,
    pub report: Option<ErrorReport>,
    pub eoc: Option<[f64; 3]>,
    pub status: String,
    pub message: Option<String>,
}

impl ResultRow {
    fn from_entry(study: StudyKind, case_id: usize, entry: StudyEntry) -> Self {
        let (report, status, message) = match entry.outcome {
            Ok(r) => (Some(r), "OK".to_string(), None),
            Err(e) => (None, e.status().to_string(), Some(e.to_string())),
        };
        ResultRow { study: study.name(), case_id, n: entry.n, case: entry.case, k: entry.k, report, eoc: None, status, message }
    }

    pub fn ok(&self) -> bool {
        self.report.is_some()
    }
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.rows.iter().all(ResultRow::ok)
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// CSV text for a set of rows.
pub fn render_csv(rows: &[ResultRow], record_timings: bool) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let (errs, residual, wall) = match &r.report {
            Some(rep) => (
                [rep.err_l2_u, rep.err_h1w_u, rep.err_h1w_u_scaled, rep.err_l2w_p].map(num).join(","),
                num(rep.residual),
                if record_timings { format!("{:.3}", rep.wall_ms) } else { String::new() },
            ),
            None => (",,,".to_string(), String::new(), String::new()),
        };
        let eoc = r.eoc.map(|e| e.map(num).join(",")).unwrap_or_else(|| ",,".to_string());
        let h = 2.0 / r.n as f64;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.study,
            r.case_id,
            r.n,
            num(h),
            num(r.case.mu_minus),
            num(r.case.mu_plus),
            num(r.case.slip),
            k,
            num(r.case.center[0]),
            num(r.case.center[1]),
            errs,
            eoc,
            residual,
            r.status,
            wall
        );
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Runs the configured study and writes results.csv and meta.json.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.out.clone());
    fs::create_dir_all(&out_dir).map_err(|source| CliError::Io { path: out_dir.clone(), source })?;
    let n_max = if opts.n_max == 0 { usize::MAX } else { opts.n_max };
    let settings = StudySettings { params: cfg.params, tol: cfg.tol };
    let started = std::time::Instant::now();

    let case = |c: [f64; 2], mu_plus: f64, f: f64| ManufacturedCase::new(c, cfg.mu_minus, mu_plus, f);
    let single_n = if cfg.study != StudyKind::Convergence && cfg.n > n_max {
        return Err(ConfigError::Validation(format!("n = {} exceeds --n-max {}", cfg.n, n_max)).into());
    } else {
        cfg.n
    };
    let mut dump = None;
    let mut rows: Vec<ResultRow> = match cfg.study {
        StudyKind::Convergence => {
            let list: Vec<usize> = cfg.n_list.iter().copied().filter(|&n| n <= n_max).collect();
            if list.len() < cfg.n_list.len() {
                log::warn!("skipping meshes finer than n = {n_max}");
            }
            let base = case(cfg.c, cfg.mu_plus, cfg.f).map_err(crate::error::Error::from)?;
            let entries = verification::run_entries(list.iter().map(|&n| (base, n, None)).collect(), &settings);
            entries.into_iter().enumerate().map(|(i, e)| ResultRow::from_entry(cfg.study, i, e)).collect()
        }
        StudyKind::Viscosity | StudyKind::Slip | StudyKind::Position => {
            let mut entries = Vec::new();
            match cfg.study {
                StudyKind::Viscosity => {
                    for &m in &cfg.mu_plus_list {
                        entries.push((case(cfg.c, m, cfg.f).map_err(crate::error::Error::from)?, single_n, None));
                    }
                }
                StudyKind::Slip => {
                    for &f in &cfg.f_list {
                        entries.push((case(cfg.c, cfg.mu_plus, f).map_err(crate::error::Error::from)?, single_n, None));
                    }
                }
                _ => {
                    for &k in &cfg.k_list {
                        let c = position_center(k, single_n);
                        entries.push((case(c, cfg.mu_plus, cfg.f).map_err(crate::error::Error::from)?, single_n, Some(k)));
                    }
                }
            }
            let entries = verification::run_entries(entries, &settings);
            entries.into_iter().enumerate().map(|(i, e)| ResultRow::from_entry(cfg.study, i, e)).collect()
        }
        StudyKind::Single => {
            let c = cfg.k.map_or(cfg.c, |k| position_center(k, single_n));
            let base = case(c, cfg.mu_plus, cfg.f).map_err(crate::error::Error::from)?;
            let outcome = run_case(&base, single_n, &settings);
            let entry = match outcome {
                Ok(run) => {
                    if cfg.dump_grid > 1 {
                        dump = Some(render_dump(&run, cfg.dump_grid));
                    }
                    StudyEntry { case: run.case, n: single_n, k: cfg.k, outcome: Ok(run.report) }
                }
                Err(e) => StudyEntry { case: base, n: single_n, k: cfg.k, outcome: Err(e) },
            };
            vec![ResultRow::from_entry(cfg.study, 0, entry)]
        }
    };

    if cfg.study == StudyKind::Convergence {
        let reports: Vec<ErrorReport> = rows.iter().filter_map(|r| r.report).collect();
        if reports.len() == rows.len() {
            for (row, eoc) in rows.iter_mut().zip(eoc_table(&reports)) {
                row.eoc = eoc;
            }
        }
    }

    write(&out_dir.join("results.csv"), &render_csv(&rows, cfg.record_timings))?;
    if let Some(text) = dump {
        write(&out_dir.join("solution.txt"), &text)?;
    }
    let meta = json!({
        "code_version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "n_max": opts.n_max,
        "threads": rayon::current_num_threads(),
        "scaled_error_normalization": verification::SCALING,
        "total_wall_ms": started.elapsed().as_secs_f64() * 1e3,
        "cases": rows.iter().map(|r| json!({
            "case_id": r.case_id,
            "n": r.n,
            "k": r.k,
            "center": r.case.center,
            "status": r.status,
            "message": r.message,
            "residual": r.report.map(|x| x.residual),
            "multiplier": r.report.map(|x| x.multiplier),
            "wall_ms": r.report.map(|x| x.wall_ms),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write(&out_dir.join("meta.json"), &text)?;
    Ok(RunSummary { rows, out_dir })
}

/// Plain-text samples `x y phase u1 u2 p` on a uniform grid.
fn render_dump(run: &verification::CaseRun, samples: usize) -> String {
    let ls = run.case.level_set();
    let space = &run.disc.space;
    let mut s = String::from("x y phase u1 u2 p\n");
    for j in 0..samples {
        for i in 0..samples {
            let step = 2.0 / (samples - 1) as f64;
            let x = Point2::new(-1.0 + i as f64 * step, -1.0 + j as f64 * step);
            let phase = Phase::of_value(ls.value(&x));
            let u = run.solution.velocity(space, phase).value(&x);
            let p = run.solution.pressure(space, phase).value(&x);
            if let (Some(u), Some(p)) = (u, p) {
                let tag = if phase == Phase::Minus { "minus" } else { "plus" };
                let _ = writeln!(s, "{} {} {} {} {} {}", num(x.x), num(x.y), tag, num(u.x), num(u.y), num(p));
            }
        }
    }
    s
}
