//! Shared domain types used across modules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Unit tag carried by a [`TimeSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    MetersPerSecond2,
    MetersPerSecond,
    Bpm,
    Bps,
    LitersPerSecond,
    KjPerSecond,
    KcalPerSecond,
    Dimensionless,
}

/// Uniformly sampled scalar channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub start: f64,
    pub rate: f64,
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl TimeSeries {
    pub fn new(start: f64, rate: f64, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {rate}")));
        }
        if values.is_empty() {
            return Err(Error::invalid("time series must have at least one sample"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            start,
            rate,
            values,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 / self.rate
    }

    pub(crate) fn with_values(&self, values: Vec<f64>, unit: Unit) -> Self {
        Self {
            start: self.start,
            rate: self.rate,
            values,
            unit,
        }
    }
}

/// Uniformly sampled triaxial channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Series3 {
    pub start: f64,
    pub rate: f64,
    pub values: Vec<[f64; 3]>,
    pub unit: Unit,
}

impl Series3 {
    pub fn new(start: f64, rate: f64, values: Vec<[f64; 3]>, unit: Unit) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!("sample rate must be positive, got {rate}")));
        }
        if values.is_empty() {
            return Err(Error::invalid("time series must have at least one sample"));
        }
        if let Some(i) = values.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            start,
            rate,
            values,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One axis as a scalar series.
    pub fn axis(&self, k: usize) -> TimeSeries {
        TimeSeries {
            start: self.start,
            rate: self.rate,
            values: self.values.iter().map(|v| v[k]).collect(),
            unit: self.unit,
        }
    }

    pub(crate) fn from_axes(template: &TimeSeries, axes: [Vec<f64>; 3], unit: Unit) -> Self {
        let n = axes[0].len();
        let values = (0..n).map(|i| [axes[0][i], axes[1][i], axes[2][i]]).collect();
        Self {
            start: template.start,
            rate: template.rate,
            values,
            unit,
        }
    }
}

/// Activity intensity classes. `Rest` is only used by simulator scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Intensity {
    Rest,
    Low,
    Moderate,
    ModerateHigh,
}

impl Intensity {
    pub const ACTIVE: [Intensity; 3] = [Intensity::Low, Intensity::Moderate, Intensity::ModerateHigh];

    pub fn as_str(self) -> &'static str {
        match self {
            Intensity::Rest => "rest",
            Intensity::Low => "low",
            Intensity::Moderate => "moderate",
            Intensity::ModerateHigh => "moderate-high",
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rest" => Ok(Intensity::Rest),
            "low" => Ok(Intensity::Low),
            "moderate" => Ok(Intensity::Moderate),
            "moderate-high" | "moderate_high" | "moderatehigh" => Ok(Intensity::ModerateHigh),
            other => Err(Error::invalid(format!("unknown intensity '{other}'"))),
        }
    }
}

/// A labelled activity interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySegment {
    pub label: String,
    pub intensity: Intensity,
    pub t_start: f64,
    pub t_end: f64,
}

impl ActivitySegment {
    pub fn new(label: impl Into<String>, intensity: Intensity, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::invalid(format!("segment end {t_end} must exceed start {t_start}")));
        }
        if intensity == Intensity::Rest {
            return Err(Error::invalid("activity segments must be low, moderate or moderate-high"));
        }
        Ok(Self {
            label: label.into(),
            intensity,
            t_start,
            t_end,
        })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }

    pub fn is_cycling(&self) -> bool {
        self.label.to_ascii_lowercase().contains("cycl")
    }
}

/// Check that segments do not overlap; the error names the first offending pair.
pub fn check_disjoint(segments: &[ActivitySegment]) -> Result<()> {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| segments[a].t_start.total_cmp(&segments[b].t_start));
    for w in order.windows(2) {
        let (a, b) = (&segments[w[0]], &segments[w[1]]);
        if b.t_start < a.t_end {
            return Err(Error::invalid(format!(
                "overlapping activity segments '{}' [{}, {}) and '{}' [{}, {})",
                a.label, a.t_start, a.t_end, b.label, b.t_start, b.t_end
            )));
        }
    }
    Ok(())
}

/// Anthropometrics and metabolic-efficiency assignment for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub body_mass_kg: f64,
    pub skeletal_muscle_mass_kg: f64,
    /// Mass fraction of each leg.
    pub leg_mass_fraction: f64,
    pub efficiency_default: f64,
    pub efficiency_cycling: f64,
    pub activity_labels: Vec<ActivitySegment>,
}

impl Default for SubjectProfile {
    fn default() -> Self {
        Self {
            body_mass_kg: 70.0,
            skeletal_muscle_mass_kg: 30.0,
            leg_mass_fraction: 0.16,
            efficiency_default: 0.06,
            efficiency_cycling: 0.02,
            activity_labels: Vec::new(),
        }
    }
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, mu) in [
            ("efficiency_default", self.efficiency_default),
            ("efficiency_cycling", self.efficiency_cycling),
        ] {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {mu}")));
            }
        }
        if !(self.leg_mass_fraction > 0.0 && self.leg_mass_fraction < 0.5) {
            return Err(Error::invalid(format!(
                "leg_mass_fraction must lie in (0, 0.5), got {}",
                self.leg_mass_fraction
            )));
        }
        if !(self.body_mass_kg > 0.0 && self.skeletal_muscle_mass_kg > 0.0) {
            return Err(Error::invalid("masses must be positive"));
        }
        check_disjoint(&self.activity_labels)
    }

    /// Segment masses (upper body, left leg, right leg) in kg.
    pub fn segment_masses(&self) -> (f64, f64, f64) {
        let leg = self.leg_mass_fraction * self.body_mass_kg;
        (self.body_mass_kg - 2.0 * leg, leg, leg)
    }

    /// Efficiency in force at time `t`.
    pub fn efficiency_at(&self, t: f64) -> f64 {
        match self.activity_labels.iter().find(|s| s.contains(t)) {
            Some(s) if s.is_cycling() => self.efficiency_cycling,
            _ => self.efficiency_default,
        }
    }
}
