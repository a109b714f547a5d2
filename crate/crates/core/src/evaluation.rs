//! Metrics, paired statistics, the linear-regression baseline and the
//! leave-one-subject-out harness.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::signal::{free_acceleration, hr_to_input, resample_mean, savgol_smooth, ImuTriplet};
use crate::types::{check_disjoint, ActivitySegment, Intensity, TimeSeries, Unit};

// ---------------------------------------------------------------------------
// Metrics

fn check_pair(y: &[f64], yhat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", y.len(), yhat.len())));
    }
    if y.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} samples")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination 1 − SSE/SST.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    let m = mean(y);
    let sst: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::invalid("reference series is constant"));
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - sse / sst)
}

/// Root-mean-squared error divided by the reference mean.
pub fn nrmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    let m = mean(y);
    if m == 0.0 {
        return Err(Error::invalid("reference mean is zero"));
    }
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt() / m)
}

/// Median, minimum and maximum of a group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Some(Self {
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

/// Per-intensity NRMSE summaries plus the labels of skipped segments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntensityNrmse {
    pub by_intensity: BTreeMap<Intensity, Summary>,
    pub per_segment: Vec<(String, Intensity, f64)>,
    pub skipped: Vec<String>,
}

/// NRMSE per activity segment, summarized by intensity. `t` holds the sample
/// times of both series.
pub fn per_intensity_nrmse(
    y: &[f64],
    yhat: &[f64],
    t: &[f64],
    segments: &[ActivitySegment],
) -> Result<IntensityNrmse> {
    check_pair(y, yhat, 0)?;
    if t.len() != y.len() {
        return Err(Error::invalid("time vector length mismatch"));
    }
    check_disjoint(segments)?;
    let mut out = IntensityNrmse::default();
    let mut groups: BTreeMap<Intensity, Vec<f64>> = BTreeMap::new();
    for s in segments {
        let idx: Vec<usize> = (0..t.len()).filter(|&i| s.contains(t[i])).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| yhat[i]).collect();
        match (idx.len() >= 2).then(|| nrmse(&ys, &ps)) {
            Some(Ok(v)) => {
                groups.entry(s.intensity).or_default().push(v);
                out.per_segment.push((s.label.clone(), s.intensity, v));
            }
            _ => out.skipped.push(s.label.clone()),
        }
    }
    out.by_intensity = groups
        .into_iter()
        .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
        .collect();
    Ok(out)
}

/// Fraction of predictions strictly below `bound`.
pub fn violation_rate(yhat: &[f64], bound: f64) -> Result<f64> {
    if yhat.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    Ok(yhat.iter().filter(|v| **v < bound).count() as f64 / yhat.len() as f64)
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// min(W+, W−).
    pub statistic: f64,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    /// Pairs remaining after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Midranks of `values` (1-based); ties share their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Largest sample size handled with the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Two-sided Wilcoxon signed-rank test of paired samples. Zero differences
/// are dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    check_pair(a, b, 1)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(Error::invalid("all paired differences are zero"));
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);
    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_p_value(&ranks, w_plus), true)
    } else {
        (normal_p_value(&abs, &ranks, w_plus), false)
    };
    Ok(WilcoxonResult {
        statistic,
        w_plus,
        p_value,
        n,
        exact,
    })
}

/// Exact two-sided p-value from the distribution of W+ over all 2ⁿ sign
/// assignments, counted by dynamic programming on doubled (integer) ranks.
fn exact_p_value(ranks: &[f64], w_plus: f64) -> f64 {
    let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = r2.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &r2 {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let all: f64 = counts.iter().sum();
    let w = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
fn normal_p_value(abs: &[f64], ranks: &[f64], w_plus: f64) -> f64 {
    let n = abs.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut seen = std::collections::HashMap::new();
    for r in ranks {
        *seen.entry(r.to_bits()).or_insert(0usize) += 1;
    }
    for t in seen.values() {
        let t = *t as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Bonferroni adjustment: multiply by the number of tests, cap at 1.
pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

// ---------------------------------------------------------------------------
// Linear-regression baseline

/// Ordinary least squares model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// True when the design matrix was rank deficient and the minimum-norm
    /// solution was used.
    pub rank_deficient: bool,
}

impl LinearModel {
    /// Least-squares fit with intercept; rank-deficient designs fall back to
    /// the minimum-norm solution.
    pub fn fit(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if rows.len() < 2 || rows.len() != y.len() {
            return Err(Error::invalid("need at least two training rows matching the targets"));
        }
        let p = rows[0].len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged feature rows"));
        }
        let x = DMatrix::from_fn(rows.len(), p + 1, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
        let svd = x.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * 1e-10 * (rows.len().max(p + 1) as f64);
        let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
        let beta = svd
            .solve(&DVector::from_column_slice(y), eps)
            .map_err(|e| Error::numerical(format!("least-squares solve failed: {e}")))?;
        Ok(Self {
            intercept: beta[0],
            coef: beta.iter().skip(1).copied().collect(),
            rank_deficient: rank < p + 1,
        })
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(c, x)| c * x).sum::<f64>()
    }
}

/// One 30 s window of baseline features.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSample {
    /// Integrated absolute acceleration per IMU (pelvis, left thigh, right thigh).
    pub iaa: [f64; 3],
    /// Mean heart rate over the window, bpm.
    pub hr: f64,
    /// Mean reference PAEE over the window, kcal/s.
    pub paee: f64,
}

impl LrSample {
    fn features(&self, use_hr: bool) -> Vec<f64> {
        let mut f = self.iaa.to_vec();
        if use_hr {
            f.push(self.hr);
        }
        f
    }
}

/// Window length for the baseline features, s.
pub const IAA_WINDOW_S: f64 = 30.0;

/// Per-window sum of |a| over all axes and samples of the gravity-free,
/// low-passed acceleration of each IMU.
pub fn iaa_features(imu: &ImuTriplet, window_s: f64) -> Result<Vec<[f64; 3]>> {
    let per = (window_s * imu.pelvis.rate).round() as usize;
    if per == 0 {
        return Err(Error::invalid("feature window shorter than one sample"));
    }
    let chans = [&imu.pelvis, &imu.thigh_left, &imu.thigh_right].map(free_acceleration);
    let [p, l, r] = chans;
    let (p, l, r) = (p?, l?, r?);
    let n = p.len().min(l.len()).min(r.len()) / per;
    Ok((0..n)
        .map(|w| {
            [&p, &l, &r].map(|s| {
                s.values[w * per..(w + 1) * per]
                    .iter()
                    .map(|a| a[0].abs() + a[1].abs() + a[2].abs())
                    .sum()
            })
        })
        .collect())
}

/// Build baseline samples from IMU, 1 Hz heart rate and 1 Hz reference PAEE.
pub fn lr_samples(imu: &ImuTriplet, hr_bpm_1hz: &[f64], paee_1hz: &[f64], window_s: f64) -> Result<Vec<LrSample>> {
    let feats = iaa_features(imu, window_s)?;
    let per = window_s.round() as usize;
    Ok(feats
        .into_iter()
        .enumerate()
        .filter(|(w, _)| (w + 1) * per <= hr_bpm_1hz.len().min(paee_1hz.len()))
        .map(|(w, iaa)| LrSample {
            iaa,
            hr: mean(&hr_bpm_1hz[w * per..(w + 1) * per]),
            paee: mean(&paee_1hz[w * per..(w + 1) * per]),
        })
        .collect())
}

/// Fit on `train`, predict `test`. With `use_hr` false the heart-rate column
/// is dropped from both.
pub fn lr_baseline(train: &[LrSample], test: &[LrSample], use_hr: bool) -> Result<(LinearModel, Vec<f64>)> {
    let rows: Vec<Vec<f64>> = train.iter().map(|s| s.features(use_hr)).collect();
    let y: Vec<f64> = train.iter().map(|s| s.paee).collect();
    let model = LinearModel::fit(&rows, &y)?;
    let pred = test.iter().map(|s| model.predict(&s.features(use_hr))).collect();
    Ok((model, pred))
}

/// Expand per-window predictions to 1 Hz by repetition.
pub fn expand_windows(pred: &[f64], window_s: f64, len: usize) -> Vec<f64> {
    let per = window_s.round() as usize;
    (0..len).map(|i| pred.get(i / per).or(pred.last()).copied().unwrap_or(0.0)).collect()
}

// ---------------------------------------------------------------------------
// LOSO

/// Run one fold per subject: `run(train, test)` sees every other subject as
/// training data and the held-out subject as test data.
pub fn loso_harness<S, R, F>(subjects: &[S], mut run: F) -> Result<Vec<R>>
where
    F: FnMut(&[&S], &S) -> Result<R>,
{
    if subjects.len() < 2 {
        return Err(Error::invalid("leave-one-subject-out needs at least two subjects"));
    }
    (0..subjects.len())
        .map(|k| {
            let train: Vec<&S> = subjects
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, s)| s)
                .collect();
            run(&train, &subjects[k])
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reference gas

/// Initial part of the resting recording discarded before averaging, s.
pub const RMR_DISCARD_S: f64 = 300.0;
/// Minimum resting recording length, s.
pub const RMR_MIN_S: f64 = 360.0;

/// Subtract the resting O2/CO2 rates (mean after the first 5 minutes) from
/// the activity reference, after 1 Hz resampling and 20 s smoothing.
pub fn subtract_rmr(
    reference: (&TimeSeries, &TimeSeries),
    rmr: (&TimeSeries, &TimeSeries),
) -> Result<(TimeSeries, TimeSeries)> {
    let mut out = Vec::with_capacity(2);
    for (adl, rest) in [(reference.0, rmr.0), (reference.1, rmr.1)] {
        let duration = rest.len() as f64 / rest.rate;
        if duration < RMR_MIN_S {
            return Err(Error::invalid(format!(
                "resting recording lasts {duration} s; at least {RMR_MIN_S} s are required"
            )));
        }
        let kept: Vec<f64> = (0..rest.len())
            .filter(|&i| (i as f64) / rest.rate >= RMR_DISCARD_S)
            .map(|i| rest.values[i])
            .collect();
        let base = mean(&kept);
        let smoothed = savgol_smooth(&resample_mean(adl, 1.0)?, 20.0, 1)?;
        let values = smoothed.values.iter().map(|v| v - base).collect();
        out.push(TimeSeries::new(smoothed.start, smoothed.rate, values, Unit::LitersPerSecond)?);
    }
    let co2 = out.pop().expect("two channels");
    let o2 = out.pop().expect("two channels");
    Ok((o2, co2))
}

/// Weir PAEE (kcal/s, unclamped) from O2/CO2 rate series.
pub fn reference_paee(o2: &TimeSeries, co2: &TimeSeries) -> Vec<f64> {
    o2.values.iter().zip(&co2.values).map(|(a, b)| 3.9 * a + 1.1 * b).collect()
}

/// Heart rate resampled to 1 Hz and smoothed, in bpm.
pub fn hr_bpm_1hz(hr: &TimeSeries) -> Result<Vec<f64>> {
    Ok(hr_to_input(hr)?.u.values.iter().map(|u| u * 60.0).collect())
}

// ---------------------------------------------------------------------------
// Reports

/// Accuracy and plausibility of one method on one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub r2: f64,
    pub nrmse: f64,
    /// Fraction of negative PAEE predictions.
    pub violation_rate: f64,
    pub per_intensity: IntensityNrmse,
}

impl MethodMetrics {
    pub fn compute(method: &str, y: &[f64], yhat: &[f64], t: &[f64], segments: &[ActivitySegment]) -> Result<Self> {
        Ok(Self {
            method: method.to_string(),
            r2: r_squared(y, yhat)?,
            nrmse: nrmse(y, yhat)?,
            violation_rate: violation_rate(yhat, 0.0)?,
            per_intensity: per_intensity_nrmse(y, yhat, t, segments)?,
        })
    }
}

/// Metrics of every method on one subject or session.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub subject: String,
    pub samples: usize,
    pub methods: Vec<MethodMetrics>,
}

fn fmt_summary(s: Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.3} [{:.3}-{:.3}]", s.median, s.min, s.max),
        None => "n/a".into(),
    }
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("subject {} ({} s)\n", self.subject, self.samples);
        out.push_str(&format!("{:<22} {:>8} {:>8} {:>10}\n", "method", "R2", "NRMSE", "violation"));
        for m in &self.methods {
            out.push_str(&format!(
                "{:<22} {:>8.3} {:>8.3} {:>9.1}%\n",
                m.method,
                m.r2,
                m.nrmse,
                100.0 * m.violation_rate
            ));
        }
        for m in &self.methods {
            for (k, s) in &m.per_intensity.by_intensity {
                out.push_str(&format!("  {} NRMSE {}: {}\n", m.method, k, fmt_summary(Some(*s))));
            }
            if !m.per_intensity.skipped.is_empty() {
                out.push_str(&format!("  {} skipped segments: {}\n", m.method, m.per_intensity.skipped.join(", ")));
            }
        }
        out
    }
}

/// Paired comparison of the first method against one other method.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTest {
    pub metric: &'static str,
    pub reference_method: String,
    pub other_method: String,
    /// `None` when every paired difference is zero.
    pub result: Option<WilcoxonResult>,
    pub p_adjusted: f64,
}

/// Cross-subject summary in the layout of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub folds: Vec<EvalReport>,
    pub tests: Vec<ComparisonTest>,
}

impl DatasetReport {
    /// Summaries plus Wilcoxon tests of the first method against each other
    /// method on per-subject R² and NRMSE, Bonferroni-adjusted over all tests.
    pub fn new(folds: Vec<EvalReport>) -> Result<Self> {
        let names = method_names(&folds)?;
        let mut tests = Vec::new();
        for other in names.iter().skip(1) {
            for metric in ["R2", "NRMSE"] {
                let pick = |name: &str| -> Vec<f64> {
                    folds
                        .iter()
                        .map(|f| {
                            let m = f.method(name).expect("checked above");
                            if metric == "R2" {
                                m.r2
                            } else {
                                m.nrmse
                            }
                        })
                        .collect()
                };
                let result = wilcoxon_signed_rank(&pick(&names[0]), &pick(other)).ok();
                tests.push(ComparisonTest {
                    metric,
                    reference_method: names[0].clone(),
                    other_method: other.clone(),
                    result,
                    p_adjusted: 1.0,
                });
            }
        }
        let raw: Vec<f64> = tests.iter().map(|t| t.result.map_or(1.0, |r| r.p_value)).collect();
        for (t, p) in tests.iter_mut().zip(bonferroni(&raw)) {
            t.p_adjusted = p;
        }
        Ok(Self { folds, tests })
    }

    pub fn method_names(&self) -> Vec<String> {
        method_names(&self.folds).unwrap_or_default()
    }

    /// Per-subject values of one metric for one method.
    pub fn values(&self, method: &str, pick: impl Fn(&MethodMetrics) -> f64) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.method(method)).map(pick).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} subjects, leave-one-subject-out\n\n", self.folds.len());
        out.push_str(&format!(
            "{:<22} {:>24} {:>24} {:>10}\n",
            "method", "R2 median [min-max]", "NRMSE median [min-max]", "violation"
        ));
        for name in self.method_names() {
            let r2 = Summary::of(&self.values(&name, |m| m.r2));
            let e = Summary::of(&self.values(&name, |m| m.nrmse));
            let v = self.values(&name, |m| m.violation_rate);
            out.push_str(&format!(
                "{:<22} {:>24} {:>24} {:>9.1}%\n",
                name,
                fmt_summary(r2),
                fmt_summary(e),
                100.0 * mean(&v)
            ));
        }
        out.push_str("\nNRMSE by intensity, median [min-max] over segments\n");
        for name in self.method_names() {
            for k in Intensity::ACTIVE {
                let vals: Vec<f64> = self
                    .folds
                    .iter()
                    .filter_map(|f| f.method(&name))
                    .flat_map(|m| m.per_intensity.per_segment.iter().filter(|s| s.1 == k).map(|s| s.2))
                    .collect();
                if !vals.is_empty() {
                    out.push_str(&format!("{:<22} {:<14} {}\n", name, k.as_str(), fmt_summary(Summary::of(&vals))));
                }
            }
        }
        if !self.tests.is_empty() {
            out.push_str("\nWilcoxon signed-rank, Bonferroni-adjusted\n");
            for t in &self.tests {
                match t.result {
                    Some(r) => out.push_str(&format!(
                        "{} vs {} ({}): W = {}, n = {}, p = {:.4}, adjusted p = {:.4}\n",
                        t.reference_method, t.other_method, t.metric, r.statistic, r.n, r.p_value, t.p_adjusted
                    )),
                    None => out.push_str(&format!(
                        "{} vs {} ({}): all differences zero\n",
                        t.reference_method, t.other_method, t.metric
                    )),
                }
            }
        }
        out.push_str("\nper subject\n");
        for f in &self.folds {
            out.push_str(&f.to_text());
        }
        out
    }
}

fn method_names(folds: &[EvalReport]) -> Result<Vec<String>> {
    let first = folds.first().ok_or_else(|| Error::invalid("no folds to summarize"))?;
    let names: Vec<String> = first.methods.iter().map(|m| m.method.clone()).collect();
    if folds.iter().any(|f| f.methods.iter().map(|m| &m.method).ne(names.iter())) {
        return Err(Error::invalid("folds report different methods"));
    }
    Ok(names)
}
