//! Configuration files, CSV channel readers/writers and session loading.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector5;

use crate::ekf::{FilterConfig, MeasurementNoise};
use crate::error::{Error, Result};
use crate::physio::{ModelParams, StateVector};
use crate::signal::ImuTriplet;
use crate::types::{check_disjoint, ActivitySegment, Series3, SubjectProfile, TimeSeries, Unit};

// ---------------------------------------------------------------------------
// Number formatting

/// Format like C's `%.9g`: nine significant digits, trailing zeros removed,
/// exponent form outside 1e-4 ≤ |v| < 1e9.
pub fn fmt_g(v: f64) -> String {
    const PREC: i32 = 9;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (PREC - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= PREC {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (PREC - 1 - exp) as usize, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

// ---------------------------------------------------------------------------
// CSV

/// A parsed CSV file with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(file_label(path)));
        }
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| parse_error(path, 1, e.to_string()))?;
        let header = reader
            .headers()
            .map_err(|e| parse_error(path, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_error(path, line, e.to_string())
            })?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    /// Require the header to equal `expected` exactly.
    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header != expected {
            return Err(parse_error(
                &self.path,
                1,
                format!("header `{}` does not match expected `{}`", self.header.join(","), expected.join(",")),
            ));
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_error(&self.path, 1, format!("missing column `{name}`")))
    }

    /// Numeric column by name. Data rows are numbered from line 2.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[j].parse::<f64>()
                    .map_err(|_| parse_error(&self.path, i + 2, format!("`{}` is not a number", r[j])))
            })
            .collect()
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<String>> {
        let j = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Write equal-length numeric columns with `%.9g` formatting.
pub fn write_columns(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    if header.len() != columns.len() {
        return Err(Error::invalid("header and column counts differ"));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("columns must have equal length"));
    }
    let mut out = String::with_capacity(n * columns.len() * 12);
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..n {
        for (j, c) in columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_g(c[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Start time and rate of a uniformly sampled time column.
pub fn uniform_rate(t: &[f64], path: &Path) -> Result<(f64, f64)> {
    if t.len() < 2 {
        return Err(parse_error(path, 2, "need at least two samples"));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(parse_error(path, 2, "time column must increase"));
    }
    for (i, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-3 * dt {
            return Err(parse_error(path, i + 3, "time column is not uniformly sampled"));
        }
    }
    Ok((t[0], 1.0 / dt))
}

pub const IMU_HEADER: [&str; 4] = ["t", "ax", "ay", "az"];
pub const HR_HEADER: [&str; 2] = ["t", "bpm"];
pub const GAS_HEADER: [&str; 3] = ["t", "vo2_lps", "vco2_lps"];
pub const SEGMENT_HEADER: [&str; 4] = ["t_start", "t_end", "label", "intensity"];
pub const PROXY_HEADER: [&str; 3] = ["t", "rm_o2_lps", "rm_co2_lps"];

pub fn read_imu(path: &Path) -> Result<Series3> {
    let table = Table::read(path)?;
    table.expect_header(&IMU_HEADER)?;
    let (start, rate) = uniform_rate(&table.column("t")?, path)?;
    let [x, y, z] = ["ax", "ay", "az"].map(|c| table.column(c));
    let (x, y, z) = (x?, y?, z?);
    let values = (0..x.len()).map(|i| [x[i], y[i], z[i]]).collect();
    Series3::new(start, rate, values, Unit::MetersPerSecond2)
}

pub fn write_imu(path: &Path, s: &Series3) -> Result<()> {
    let t: Vec<f64> = (0..s.len()).map(|i| s.start + i as f64 / s.rate).collect();
    let axes: Vec<Vec<f64>> = (0..3).map(|k| s.values.iter().map(|v| v[k]).collect()).collect();
    write_columns(path, &IMU_HEADER, &[&t, &axes[0], &axes[1], &axes[2]])
}

pub fn read_hr(path: &Path) -> Result<TimeSeries> {
    let table = Table::read(path)?;
    table.expect_header(&HR_HEADER)?;
    let (start, rate) = uniform_rate(&table.column("t")?, path)?;
    TimeSeries::new(start, rate, table.column("bpm")?, Unit::Bpm)
}

pub fn write_series(path: &Path, header: [&str; 2], s: &TimeSeries) -> Result<()> {
    let t: Vec<f64> = (0..s.len()).map(|i| s.time(i)).collect();
    write_columns(path, &header, &[&t, &s.values])
}

/// O2 and CO2 rate channels of a gas-analyzer recording.
pub fn read_gas(path: &Path) -> Result<(TimeSeries, TimeSeries)> {
    let table = Table::read(path)?;
    table.expect_header(&GAS_HEADER)?;
    let (start, rate) = uniform_rate(&table.column("t")?, path)?;
    Ok((
        TimeSeries::new(start, rate, table.column("vo2_lps")?, Unit::LitersPerSecond)?,
        TimeSeries::new(start, rate, table.column("vco2_lps")?, Unit::LitersPerSecond)?,
    ))
}

pub fn write_gas(path: &Path, o2: &TimeSeries, co2: &TimeSeries) -> Result<()> {
    let t: Vec<f64> = (0..o2.len()).map(|i| o2.time(i)).collect();
    write_columns(path, &GAS_HEADER, &[&t, &o2.values, &co2.values])
}

pub fn read_segments(path: &Path) -> Result<Vec<ActivitySegment>> {
    let table = Table::read(path)?;
    table.expect_header(&SEGMENT_HEADER)?;
    let (a, b) = (table.column("t_start")?, table.column("t_end")?);
    let labels = table.text_column("label")?;
    let kinds = table.text_column("intensity")?;
    let segments = (0..a.len())
        .map(|i| {
            let kind = kinds[i].parse().map_err(|e: Error| parse_error(path, i + 2, e.to_string()))?;
            ActivitySegment::new(labels[i].clone(), kind, a[i], b[i])
                .map_err(|e| parse_error(path, i + 2, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    check_disjoint(&segments)?;
    Ok(segments)
}

pub fn write_segments(path: &Path, segments: &[ActivitySegment]) -> Result<()> {
    let mut out = SEGMENT_HEADER.join(",");
    out.push('\n');
    for s in segments {
        if s.label.contains([',', '"', '\n']) {
            return Err(Error::invalid(format!("segment label '{}' contains a reserved character", s.label)));
        }
        out.push_str(&format!("{},{},{},{}\n", fmt_g(s.t_start), fmt_g(s.t_end), s.label, s.intensity));
    }
    fs::write(path, out)?;
    Ok(())
}

/// 1 Hz metabolic proxies (O2, CO2) with their start time.
pub fn read_proxies(path: &Path) -> Result<(f64, Vec<[f64; 2]>)> {
    let table = Table::read(path)?;
    table.expect_header(&PROXY_HEADER)?;
    let (start, rate) = uniform_rate(&table.column("t")?, path)?;
    if (rate - 1.0).abs() > 1e-6 {
        return Err(parse_error(path, 2, "proxies must be sampled at 1 Hz"));
    }
    let (o2, co2) = (table.column("rm_o2_lps")?, table.column("rm_co2_lps")?);
    Ok((start, o2.into_iter().zip(co2).map(|(a, b)| [a, b]).collect()))
}

pub fn write_proxies(path: &Path, t: &[f64], z: &[[f64; 2]]) -> Result<()> {
    let (a, b): (Vec<f64>, Vec<f64>) = z.iter().map(|v| (v[0], v[1])).unzip();
    write_columns(path, &PROXY_HEADER, &[t, &a, &b])
}

/// Column names of the five states in trajectory files.
pub const STATE_COLUMNS: [&str; 5] = ["x1", "x2", "x3", "x4", "x5"];

/// Simulated ground truth at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub t: Vec<f64>,
    pub states: Vec<StateVector>,
    pub paee: Vec<f64>,
    pub hr_bpm: Vec<f64>,
    pub drive_o2: Vec<f64>,
}

pub fn truth_header() -> Vec<&'static str> {
    let mut h = vec!["t"];
    h.extend(STATE_COLUMNS);
    h.extend(["paee", "hr_bpm", "drive_o2_lps"]);
    h
}

pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    let cols = state_columns(&truth.states);
    let mut columns: Vec<&[f64]> = vec![&truth.t];
    columns.extend(cols.iter().map(|c| c.as_slice()));
    columns.extend([truth.paee.as_slice(), &truth.hr_bpm, &truth.drive_o2]);
    write_columns(path, &truth_header(), &columns)
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let table = Table::read(path)?;
    table.expect_header(&truth_header())?;
    let t = table.column("t")?;
    uniform_rate(&t, path)?;
    Ok(Truth {
        states: read_states(&table)?,
        paee: table.column("paee")?,
        hr_bpm: table.column("hr_bpm")?,
        drive_o2: table.column("drive_o2_lps")?,
        t,
    })
}

/// Transpose states into five columns.
pub fn state_columns(states: &[StateVector]) -> [Vec<f64>; 5] {
    std::array::from_fn(|k| states.iter().map(|x| x[k]).collect())
}

/// Read the five state columns of any trajectory table.
pub fn read_states(table: &Table) -> Result<Vec<StateVector>> {
    let cols = STATE_COLUMNS
        .iter()
        .map(|n| table.column(n))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..cols[0].len())
        .map(|i| StateVector::from_fn(|k, _| cols[k][i]))
        .collect())
}

// ---------------------------------------------------------------------------
// Configuration

/// Model, filter and subject settings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: ModelParams,
    pub ekf: FilterConfig,
    pub subject: SubjectProfile,
}

const Q_KEYS: [&str; 5] = ["q_p_a_o2", "q_p_a_co2", "q_c_v_o2", "q_c_v_co2", "q_vt_a"];

impl Config {
    /// Parse flat `key = value` lines grouped under `[model]`, `[ekf]` and
    /// `[subject]`. `#` starts a comment; unknown sections and keys are errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section = String::new();
        let mut fixed_r: [Option<f64>; 2] = [None, None];
        let mut adaptive = match cfg.ekf.r_meas {
            MeasurementNoise::Adaptive { frac, window_s, floor } => [frac, window_s, floor],
            MeasurementNoise::Fixed(_) => unreachable!("default noise is adaptive"),
        };
        let mut muscle_from_subject = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| parse_error(path, line_no, msg);
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !matches!(name, "model" | "ekf" | "subject") {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| err(format!("value of `{key}` is not a number")))?;
            match section.as_str() {
                "model" => cfg.model.set(key, value).map_err(|e| err(e.to_string()))?,
                "ekf" => match key {
                    "dt" => cfg.ekf.dt = value,
                    "substeps" => cfg.ekf.substeps = count(value).ok_or_else(|| err("substeps must be a positive integer".into()))?,
                    "jacobian_step" => cfg.ekf.jacobian_step = value,
                    "cond_limit" => cfg.ekf.cond_limit = value,
                    "constant_hr_bpm" => cfg.ekf.constant_hr_bpm = Some(value),
                    "r_o2" => fixed_r[0] = Some(value),
                    "r_co2" => fixed_r[1] = Some(value),
                    "r_frac" => adaptive[0] = value,
                    "r_window_s" => adaptive[1] = value,
                    "r_floor" => adaptive[2] = value,
                    k => match Q_KEYS.iter().position(|q| *q == k) {
                        Some(i) => cfg.ekf.q_proc[i] = value,
                        None => return Err(err(format!("unknown ekf key `{k}`"))),
                    },
                },
                "subject" => match key {
                    "body_mass_kg" => cfg.subject.body_mass_kg = value,
                    "skeletal_muscle_mass_kg" => {
                        cfg.subject.skeletal_muscle_mass_kg = value;
                        muscle_from_subject = Some(value);
                    }
                    "leg_mass_fraction" => cfg.subject.leg_mass_fraction = value,
                    "efficiency_default" => cfg.subject.efficiency_default = value,
                    "efficiency_cycling" => cfg.subject.efficiency_cycling = value,
                    k => return Err(err(format!("unknown subject key `{k}`"))),
                },
                _ => return Err(err("key outside of a section".into())),
            }
        }
        cfg.ekf.r_meas = match fixed_r {
            [Some(a), Some(b)] => MeasurementNoise::Fixed([a, b]),
            [None, None] => MeasurementNoise::Adaptive {
                frac: adaptive[0],
                window_s: adaptive[1],
                floor: adaptive[2],
            },
            _ => return Err(parse_error(path, 0, "r_o2 and r_co2 must be given together")),
        };
        // the subject's muscle mass sizes the model tissue compartment
        if let Some(m) = muscle_from_subject {
            cfg.model.m_sm = m;
        } else {
            cfg.subject.skeletal_muscle_mass_kg = cfg.model.m_sm;
        }
        cfg.validate().map_err(|e| parse_error(path, 0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(file_label(path)));
        }
        Self::parse(&fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.ekf.validate()?;
        self.subject.validate()
    }

    /// Text form accepted by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::from("[model]\n");
        for key in crate::physio::PARAM_KEYS {
            out.push_str(&format!("{key} = {}\n", num(self.model.get(key).expect("known key"))));
        }
        out.push_str("\n[ekf]\n");
        out.push_str(&format!("dt = {}\nsubsteps = {}\n", num(self.ekf.dt), self.ekf.substeps));
        let q: Vector5<f64> = self.ekf.q_proc;
        for (k, v) in Q_KEYS.iter().zip(q.iter()) {
            out.push_str(&format!("{k} = {}\n", num(*v)));
        }
        match self.ekf.r_meas {
            MeasurementNoise::Fixed([a, b]) => out.push_str(&format!("r_o2 = {}\nr_co2 = {}\n", num(a), num(b))),
            MeasurementNoise::Adaptive { frac, window_s, floor } => out.push_str(&format!(
                "r_frac = {}\nr_window_s = {}\nr_floor = {}\n",
                num(frac),
                num(window_s),
                num(floor)
            )),
        }
        out.push_str(&format!(
            "jacobian_step = {}\ncond_limit = {}\n",
            num(self.ekf.jacobian_step),
            num(self.ekf.cond_limit)
        ));
        if let Some(bpm) = self.ekf.constant_hr_bpm {
            out.push_str(&format!("constant_hr_bpm = {}\n", num(bpm)));
        }
        let s = &self.subject;
        out.push_str(&format!(
            "\n[subject]\nbody_mass_kg = {}\nskeletal_muscle_mass_kg = {}\nleg_mass_fraction = {}\nefficiency_default = {}\nefficiency_cycling = {}\n",
            num(s.body_mass_kg),
            num(s.skeletal_muscle_mass_kg),
            num(s.leg_mass_fraction),
            num(s.efficiency_default),
            num(s.efficiency_cycling)
        ));
        out
    }
}

/// Shortest text that parses back to the same value.
fn num(v: f64) -> String {
    v.to_string()
}

fn count(v: f64) -> Option<usize> {
    (v >= 1.0 && v.fract() == 0.0).then_some(v as usize)
}

// ---------------------------------------------------------------------------
// Sessions

pub const IMU_FILES: [&str; 3] = ["imu_pelvis.csv", "imu_thigh_l.csv", "imu_thigh_r.csv"];
pub const HR_FILE: &str = "hr.csv";
pub const REF_GAS_FILE: &str = "ref_gas.csv";
pub const RMR_FILE: &str = "rmr.csv";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const PROXIES_FILE: &str = "proxies.csv";
pub const PROXIES_CLEAN_FILE: &str = "proxies_clean.csv";
pub const TRUTH_FILE: &str = "truth.csv";

/// All channels of one recording session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionBundle {
    pub name: String,
    pub subject: SubjectProfile,
    pub imu: Option<ImuTriplet>,
    /// Precomputed 1 Hz metabolic proxies (start time, samples); used
    /// instead of the IMU chain when present.
    pub proxies: Option<(f64, Vec<[f64; 2]>)>,
    pub hr: TimeSeries,
    pub reference_gas: Option<(TimeSeries, TimeSeries)>,
    pub rmr_recording: Option<(TimeSeries, TimeSeries)>,
    pub truth: Option<Truth>,
    pub segments: Vec<ActivitySegment>,
}

impl SessionBundle {
    /// Whether a PAEE reference (simulated truth or indirect calorimetry) exists.
    pub fn has_reference(&self) -> bool {
        self.truth.is_some() || self.reference_gas.is_some()
    }

    /// Common time interval of the motion and heart-rate channels.
    pub fn interval(&self) -> (f64, f64) {
        let mut spans = vec![span(self.hr.start, self.hr.rate, self.hr.len())];
        if let Some((start, z)) = &self.proxies {
            spans.push(span(*start, 1.0, z.len()));
        } else if let Some(imu) = &self.imu {
            spans.push(span(imu.pelvis.start, imu.pelvis.rate, imu.pelvis.len()));
        }
        spans
            .into_iter()
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(a, b), (s, e)| (a.max(s), b.min(e)))
    }
}

fn span(start: f64, rate: f64, n: usize) -> (f64, f64) {
    (start, start + n as f64 / rate)
}

/// Drop samples outside `[t0, t1)`.
fn trim_series(s: &TimeSeries, t0: f64, t1: f64) -> Result<TimeSeries> {
    let (a, b) = trim_range(s.start, s.rate, s.len(), t0, t1);
    TimeSeries::new(s.start + a as f64 / s.rate, s.rate, s.values[a..b].to_vec(), s.unit)
}

fn trim_series3(s: &Series3, t0: f64, t1: f64) -> Result<Series3> {
    let (a, b) = trim_range(s.start, s.rate, s.len(), t0, t1);
    Series3::new(s.start + a as f64 / s.rate, s.rate, s.values[a..b].to_vec(), s.unit)
}

fn trim_range(start: f64, rate: f64, n: usize, t0: f64, t1: f64) -> (usize, usize) {
    let eps = 1e-9;
    let a = (((t0 - start) * rate - eps).ceil().max(0.0) as usize).min(n);
    let b = (((t1 - start) * rate - eps).ceil().max(0.0) as usize).clamp(a, n);
    (a, b)
}

/// Load and validate a session directory. Motion comes from `proxies.csv`
/// when present, otherwise from the three IMU files.
pub fn load_session(dir: &Path, config: &Config) -> Result<SessionBundle> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.display().to_string()));
    }
    let file = |name: &str| dir.join(name);
    let hr = read_hr(&file(HR_FILE))?;
    let proxies = if file(PROXIES_FILE).is_file() {
        Some(read_proxies(&file(PROXIES_FILE))?)
    } else {
        None
    };
    let imu = if proxies.is_none() || IMU_FILES.iter().any(|f| file(f).is_file()) {
        let [p, l, r] = IMU_FILES.map(|f| read_imu(&file(f)));
        Some(
            ImuTriplet {
                pelvis: p?,
                thigh_left: l?,
                thigh_right: r?,
            }
            .aligned()?,
        )
    } else {
        None
    };
    let reference_gas = if file(REF_GAS_FILE).is_file() {
        Some(read_gas(&file(REF_GAS_FILE))?)
    } else {
        None
    };
    let rmr_recording = match (reference_gas.is_some(), file(RMR_FILE).is_file()) {
        (_, true) => Some(read_gas(&file(RMR_FILE))?),
        (true, false) => return Err(Error::MissingFile(RMR_FILE.into())),
        (false, false) => None,
    };
    let truth = if file(TRUTH_FILE).is_file() {
        Some(read_truth(&file(TRUTH_FILE))?)
    } else {
        None
    };
    let segments = if file(SEGMENTS_FILE).is_file() {
        read_segments(&file(SEGMENTS_FILE))?
    } else {
        Vec::new()
    };
    let mut subject = config.subject.clone();
    subject.activity_labels = segments.clone();
    subject.validate()?;

    let mut bundle = SessionBundle {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "session".into()),
        subject,
        imu,
        proxies,
        hr,
        reference_gas,
        rmr_recording,
        truth,
        segments,
    };
    let (t0, t1) = bundle.interval();
    if !(t1 > t0) {
        return Err(Error::invalid("motion and heart-rate channels do not overlap in time"));
    }
    if let Some(s) = bundle.segments.iter().find(|s| s.t_start < t0 - 1e-9 || s.t_end > t1 + 1e-9) {
        return Err(Error::invalid(format!(
            "segment '{}' [{}, {}) lies outside the recording [{t0}, {t1})",
            s.label, s.t_start, s.t_end
        )));
    }
    bundle.hr = trim_series(&bundle.hr, t0, t1)?;
    if let Some(imu) = &mut bundle.imu {
        imu.pelvis = trim_series3(&imu.pelvis, t0, t1)?;
        imu.thigh_left = trim_series3(&imu.thigh_left, t0, t1)?;
        imu.thigh_right = trim_series3(&imu.thigh_right, t0, t1)?;
    }
    if let Some((start, z)) = &mut bundle.proxies {
        let (a, b) = trim_range(*start, 1.0, z.len(), t0, t1);
        *start += a as f64;
        *z = z[a..b].to_vec();
    }
    Ok(bundle)
}
