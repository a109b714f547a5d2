//! Signal-level preprocessing: HR smoothing, IMU filtering, velocity
//! integration with zero-velocity updates, and the kinetic metabolic proxy.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{Series3, SubjectProfile, TimeSeries, Unit};

/// Heat released per litre of O2 consumed, kJ/L.
pub const KJ_PER_LITRE_O2: f64 = 19.6;
/// Acceleration magnitude below which a sample counts as "zero" for ZUPT.
pub const ZUPT_TOLERANCE: f64 = 0.05;
/// Minimum run of zero samples that triggers a velocity reset.
pub const ZUPT_MIN_RUN: usize = 5;
/// Cutoff of the low-pass gravity estimator.
pub const GRAVITY_CUTOFF_HZ: f64 = 0.25;
const GRAVITY_ORDER: usize = 2;

// ---------------------------------------------------------------------------
// Savitzky-Golay

/// Number of window samples used for `window_s` at `rate`, rounded up to odd.
pub fn savgol_window_len(window_s: f64, rate: f64) -> usize {
    let n = (window_s * rate).round().max(0.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Weights that evaluate a least-squares polynomial of degree `order`, fitted
/// over offsets `lo..=hi`, at offset 0.
fn savgol_weights(lo: isize, hi: isize, order: usize) -> Vec<f64> {
    let m = (hi - lo + 1) as usize;
    let deg = order.min(m - 1);
    let v = DMatrix::from_fn(m, deg + 1, |r, c| ((lo + r as isize) as f64).powi(c as i32));
    let normal = v.transpose() * &v;
    let mut e0 = DVector::zeros(deg + 1);
    e0[0] = 1.0;
    // (VᵀV)⁻¹ e0 then weights = V · that
    let coef = normal
        .lu()
        .solve(&e0)
        .expect("Vandermonde normal matrix is nonsingular for distinct offsets");
    (v * coef).iter().copied().collect()
}

/// Least-squares polynomial smoothing with a centred window; edges use
/// truncated windows.
pub fn savgol_smooth(x: &TimeSeries, window_s: f64, order: usize) -> Result<TimeSeries> {
    let n = savgol_window_len(window_s, x.rate);
    if n < 3 {
        return Err(Error::invalid(format!(
            "Savitzky-Golay window of {window_s} s at {} Hz covers fewer than 3 samples",
            x.rate
        )));
    }
    Ok(x.with_values(savgol_values(&x.values, n / 2, order), x.unit))
}

pub(crate) fn savgol_values(values: &[f64], half: usize, order: usize) -> Vec<f64> {
    let len = values.len();
    let h = half as isize;
    let interior = savgol_weights(-h, h, order);
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(len - 1);
            let window = &values[lo..=hi];
            if hi - lo == 2 * half {
                dot(&interior, window)
            } else {
                let w = savgol_weights(lo as isize - i as isize, hi as isize - i as isize, order);
                dot(&w, window)
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Butterworth

/// One second-order section, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex<f64>) -> Complex<f64> {
        let z2 = z_inv * z_inv;
        let num = Complex::new(self.b[0], 0.0) + z_inv * self.b[1] + z2 * self.b[2];
        let den = Complex::new(self.a[0], 0.0) + z_inv * self.a[1] + z2 * self.a[2];
        num / den
    }
}

/// Digital Butterworth low-pass as a cascade of biquads (bilinear transform
/// with frequency prewarping). Each section has unit DC gain.
pub fn butterworth_design(order: usize, cutoff_hz: f64, rate: f64) -> Result<Vec<Biquad>> {
    if order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < rate / 2.0) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, Nyquist = {} Hz)",
            rate / 2.0
        )));
    }
    let k = (std::f64::consts::PI * cutoff_hz / rate).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
        let q = 1.0 / (2.0 * theta.sin());
        let norm = 1.0 / (1.0 + k / q + k2);
        let b0 = k2 * norm;
        sections.push(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
        });
    }
    if order % 2 == 1 {
        let b0 = k / (1.0 + k);
        sections.push(Biquad {
            b: [b0, b0, 0.0],
            a: [1.0, (k - 1.0) / (k + 1.0), 0.0],
        });
    }
    Ok(sections)
}

/// Magnitude of the single-pass frequency response at `f_hz`.
pub fn sos_magnitude(sections: &[Biquad], f_hz: f64, rate: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f_hz / rate;
    let z_inv = Complex::new(w.cos(), -w.sin());
    sections
        .iter()
        .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
        .norm()
}

/// Single forward pass, states initialized to the steady-state response to
/// a constant input equal to the first sample.
fn sos_pass(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let x0 = x.first().copied().unwrap_or(0.0);
    let mut state: Vec<[f64; 2]> = sections
        .iter()
        .map(|s| {
            let z2 = (s.b[2] - s.a[2]) * x0;
            [(s.b[1] - s.a[1]) * x0 + z2, z2]
        })
        .collect();
    x.iter()
        .map(|&input| {
            let mut v = input;
            for (s, z) in sections.iter().zip(state.iter_mut()) {
                let y = s.b[0] * v + z[0];
                z[0] = s.b[1] * v - s.a[1] * y + z[1];
                z[1] = s.b[2] * v - s.a[2] * y;
                v = y;
            }
            v
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd reflection padding.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((0..pad).rev().map(|i| 2.0 * x[0] - x[i + 1]));
    ext.extend_from_slice(x);
    ext.extend((0..pad).map(|i| 2.0 * x[n - 1] - x[n - 2 - i]));
    let mut y = sos_pass(sections, &ext);
    y.reverse();
    let mut y = sos_pass(sections, &y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Zero-phase Butterworth low-pass.
pub fn butterworth_lowpass(x: &TimeSeries, cutoff_hz: f64, order: usize) -> Result<TimeSeries> {
    let sections = butterworth_design(order, cutoff_hz, x.rate)?;
    Ok(x.with_values(filtfilt(&sections, &x.values, 3 * order), x.unit))
}

fn lowpass3(x: &Series3, cutoff_hz: f64, order: usize) -> Result<[Vec<f64>; 3]> {
    let sections = butterworth_design(order, cutoff_hz, x.rate)?;
    let run = |k: usize| {
        let axis: Vec<f64> = x.values.iter().map(|v| v[k]).collect();
        filtfilt(&sections, &axis, 3 * order)
    };
    Ok([run(0), run(1), run(2)])
}

/// Per-axis zero-phase Butterworth low-pass of a triaxial series.
pub fn butterworth_lowpass3(x: &Series3, cutoff_hz: f64, order: usize) -> Result<Series3> {
    let axes = lowpass3(x, cutoff_hz, order)?;
    Ok(Series3::from_axes(&x.axis(0), axes, x.unit))
}

/// Subtract the quasi-static (gravity) component estimated by a 0.25 Hz
/// zero-phase low-pass.
pub fn remove_gravity(accel: &Series3) -> Result<Series3> {
    let g = lowpass3(accel, GRAVITY_CUTOFF_HZ, GRAVITY_ORDER)?;
    let values = accel
        .values
        .iter()
        .enumerate()
        .map(|(i, a)| [a[0] - g[0][i], a[1] - g[1][i], a[2] - g[2][i]])
        .collect();
    Ok(Series3 {
        start: accel.start,
        rate: accel.rate,
        values,
        unit: accel.unit,
    })
}

// ---------------------------------------------------------------------------
// Velocity

/// Mask of samples that belong to a run of at least `min_run` consecutive
/// near-zero accelerations.
pub fn zupt_mask(accel: &[[f64; 3]], tol: f64, min_run: usize) -> Vec<bool> {
    let n = accel.len();
    let mut mask = vec![false; n];
    let mut i = 0;
    while i < n {
        if norm3(&accel[i]) < tol {
            let start = i;
            while i < n && norm3(&accel[i]) < tol {
                i += 1;
            }
            if i - start >= min_run {
                mask[start..i].iter_mut().for_each(|m| *m = true);
            }
        } else {
            i += 1;
        }
    }
    mask
}

/// Trapezoidal velocity at the native rate with zero-velocity resets.
pub fn integrate_velocity_native(free_accel: &Series3) -> Series3 {
    let dt = 1.0 / free_accel.rate;
    let a = &free_accel.values;
    let mask = zupt_mask(a, ZUPT_TOLERANCE, ZUPT_MIN_RUN);
    let mut v = vec![[0.0; 3]; a.len()];
    for i in 1..a.len() {
        if mask[i] {
            continue;
        }
        for k in 0..3 {
            v[i][k] = v[i - 1][k] + 0.5 * dt * (a[i - 1][k] + a[i][k]);
        }
    }
    Series3 {
        start: free_accel.start,
        rate: free_accel.rate,
        values: v,
        unit: Unit::MetersPerSecond,
    }
}

/// Velocity integration followed by 1 Hz bin-mean resampling.
pub fn integrate_velocity(free_accel: &Series3) -> Result<Series3> {
    resample_mean3(&integrate_velocity_native(free_accel), 1.0)
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Per-sample Euclidean norm.
pub fn velocity_magnitude(v: &Series3) -> TimeSeries {
    TimeSeries {
        start: v.start,
        rate: v.rate,
        values: v.values.iter().map(norm3).collect(),
        unit: v.unit,
    }
}

// ---------------------------------------------------------------------------
// Resampling

fn bin_edges(len: usize, rate: f64, target_rate: f64) -> Vec<(usize, usize)> {
    let mut bins = Vec::new();
    let (mut start, mut current) = (0, 0);
    for i in 0..len {
        let k = ((i as f64 / rate) * target_rate + 1e-9).floor() as usize;
        if k != current {
            bins.push((start, i));
            start = i;
            current = k;
        }
    }
    if len > 0 {
        bins.push((start, len));
    }
    bins
}

/// Mean over each `1/target_rate` bin. Series already at or below the target
/// rate are returned unchanged.
pub fn resample_mean(x: &TimeSeries, target_rate: f64) -> Result<TimeSeries> {
    if !(target_rate > 0.0) {
        return Err(Error::invalid("target rate must be positive"));
    }
    if x.rate <= target_rate {
        return Ok(x.clone());
    }
    let values = bin_edges(x.len(), x.rate, target_rate)
        .into_iter()
        .map(|(a, b)| x.values[a..b].iter().sum::<f64>() / (b - a) as f64)
        .collect();
    Ok(TimeSeries {
        start: x.start,
        rate: target_rate,
        values,
        unit: x.unit,
    })
}

/// Triaxial version of [`resample_mean`].
pub fn resample_mean3(x: &Series3, target_rate: f64) -> Result<Series3> {
    let [a, b, c] = [0, 1, 2].map(|k| resample_mean(&x.axis(k), target_rate));
    let (a, b, c) = (a?, b?, c?);
    Ok(Series3::from_axes(&a, [a.values.clone(), b.values, c.values], x.unit))
}

// ---------------------------------------------------------------------------
// Metabolic proxy

/// Kind of activity for selecting the mechanical efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    General,
    Cycling,
}

/// Whole-body kinetic power in kJ/s from the three segment speeds.
pub fn kinetic_power(
    v_p: &TimeSeries,
    v_l: &TimeSeries,
    v_r: &TimeSeries,
    profile: &SubjectProfile,
    activity: Activity,
) -> Result<TimeSeries> {
    let mu = match activity {
        Activity::General => profile.efficiency_default,
        Activity::Cycling => profile.efficiency_cycling,
    };
    let n = v_p.len().min(v_l.len()).min(v_r.len());
    kinetic_power_with(v_p, v_l, v_r, profile, &vec![mu; n])
}

/// Kinetic power with efficiency taken from the profile's activity labels.
pub fn kinetic_power_labeled(
    v_p: &TimeSeries,
    v_l: &TimeSeries,
    v_r: &TimeSeries,
    profile: &SubjectProfile,
) -> Result<TimeSeries> {
    let n = v_p.len().min(v_l.len()).min(v_r.len());
    let mu: Vec<f64> = (0..n).map(|i| profile.efficiency_at(v_p.time(i))).collect();
    kinetic_power_with(v_p, v_l, v_r, profile, &mu)
}

fn kinetic_power_with(
    v_p: &TimeSeries,
    v_l: &TimeSeries,
    v_r: &TimeSeries,
    profile: &SubjectProfile,
    mu: &[f64],
) -> Result<TimeSeries> {
    if let Some(m) = mu.iter().find(|m| !(**m > 0.0)) {
        return Err(Error::invalid(format!("efficiency must be positive, got {m}")));
    }
    let (m_u, m_l, m_r) = profile.segment_masses();
    let values = mu
        .iter()
        .enumerate()
        .map(|(i, mu)| {
            let (p, l, r) = (v_p.values[i], v_l.values[i], v_r.values[i]);
            0.5 * (m_u * p * p + m_l * l * l + m_r * r * r) / mu / 1000.0
        })
        .collect();
    Ok(v_p.with_values(values, Unit::KjPerSecond))
}

/// Convert kinetic power to O2 and CO2 proxy rates in L/s.
pub fn metabolic_proxy(e: &TimeSeries, rq: f64) -> Result<(TimeSeries, TimeSeries)> {
    if let Some(i) = e.values.iter().position(|v| *v < 0.0) {
        return Err(Error::invalid(format!("negative power {} at sample {i}", e.values[i])));
    }
    let o2: Vec<f64> = e.values.iter().map(|v| v / KJ_PER_LITRE_O2).collect();
    let co2 = o2.iter().map(|v| rq * v).collect();
    Ok((e.with_values(o2, Unit::LitersPerSecond), e.with_values(co2, Unit::LitersPerSecond)))
}

// ---------------------------------------------------------------------------
// Heart rate

/// Heart-rate input in beats per second plus the indices of replaced samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HrInput {
    pub u: TimeSeries,
    pub replaced: Vec<usize>,
}

/// Replace non-positive HR samples, resample to 1 Hz, smooth over 20 s and
/// convert to beats per second.
pub fn hr_to_input(hr: &TimeSeries) -> Result<HrInput> {
    let first_valid = hr
        .values
        .iter()
        .position(|v| *v > 0.0)
        .ok_or_else(|| Error::invalid("heart-rate series has no positive sample"))?;
    let mut replaced = Vec::new();
    let mut last = hr.values[first_valid];
    let mut values = Vec::with_capacity(hr.len());
    for (i, &v) in hr.values.iter().enumerate() {
        if v > 0.0 {
            last = v;
            values.push(v);
        } else {
            replaced.push(i);
            values.push(last);
        }
    }
    let cleaned = hr.with_values(values, Unit::Bpm);
    let resampled = resample_mean(&cleaned, 1.0)?;
    let smoothed = savgol_smooth(&resampled, 20.0, 1)?;
    let u = smoothed.values.iter().map(|v| v / 60.0).collect();
    Ok(HrInput {
        u: smoothed.with_values(u, Unit::Bps),
        replaced,
    })
}

// ---------------------------------------------------------------------------
// Full IMU chain

/// The three body-worn accelerometers.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuTriplet {
    pub pelvis: Series3,
    pub thigh_left: Series3,
    pub thigh_right: Series3,
}

impl ImuTriplet {
    /// Validate shared rate and trim to the common length.
    pub fn aligned(mut self) -> Result<Self> {
        let rate = self.pelvis.rate;
        if self.thigh_left.rate != rate || self.thigh_right.rate != rate {
            return Err(Error::invalid("IMU channels must share one sample rate"));
        }
        let n = self.pelvis.len().min(self.thigh_left.len()).min(self.thigh_right.len());
        for s in [&mut self.pelvis, &mut self.thigh_left, &mut self.thigh_right] {
            s.values.truncate(n);
        }
        Ok(self)
    }
}

/// Gravity removal and the 6 Hz low-pass: free acceleration at native rate.
pub fn free_acceleration(accel: &Series3) -> Result<Series3> {
    butterworth_lowpass3(&remove_gravity(accel)?, 6.0, 4)
}

/// Raw accelerometer to 1 Hz speed: the RMS of the native-rate speed in each
/// one-second bin, so that ½·m·v² is the bin's mean kinetic energy.
pub fn imu_speed(accel: &Series3) -> Result<TimeSeries> {
    let speed = velocity_magnitude(&integrate_velocity_native(&free_acceleration(accel)?));
    let squared = speed.with_values(speed.values.iter().map(|v| v * v).collect(), speed.unit);
    let mean_sq = resample_mean(&squared, 1.0)?;
    Ok(mean_sq.with_values(mean_sq.values.iter().map(|v| v.sqrt()).collect(), speed.unit))
}

/// Model inputs at 1 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub u: Vec<f64>,
    pub rm_o2: Vec<f64>,
    pub rm_co2: Vec<f64>,
    pub hr_replaced: Vec<usize>,
}

/// Full signal-level pipeline from raw IMU and HR to model inputs.
pub fn preprocess(imu: &ImuTriplet, hr: &TimeSeries, profile: &SubjectProfile, rq: f64) -> Result<ModelInputs> {
    let v_p = imu_speed(&imu.pelvis)?;
    let v_l = imu_speed(&imu.thigh_left)?;
    let v_r = imu_speed(&imu.thigh_right)?;
    let e = kinetic_power_labeled(&v_p, &v_l, &v_r, profile)?;
    let (o2, co2) = metabolic_proxy(&e, rq)?;
    let hr_in = hr_to_input(hr)?;
    let n = o2.len().min(hr_in.u.len());
    Ok(ModelInputs {
        u: hr_in.u.values[..n].to_vec(),
        rm_o2: o2.values[..n].to_vec(),
        rm_co2: co2.values[..n].to_vec(),
        hr_replaced: hr_in.replaced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(values: Vec<f64>, rate: f64) -> TimeSeries {
        TimeSeries::new(0.0, rate, values, Unit::Dimensionless).unwrap()
    }

    #[test]
    fn savgol_three_point_center() {
        let out = savgol_smooth(&ts(vec![0.0, 0.0, 10.0, 0.0, 0.0], 1.0), 3.0, 1).unwrap();
        assert!((out.values[2] - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn savgol_preserves_constants_and_ramps() {
        let c = savgol_smooth(&ts(vec![5.0; 40], 1.0), 20.0, 1).unwrap();
        assert!(c.values.iter().all(|v| (v - 5.0).abs() < 1e-12));
        let ramp: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let r = savgol_smooth(&ts(ramp.clone(), 1.0), 20.0, 1).unwrap();
        for (a, b) in r.values.iter().zip(&ramp) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn savgol_rejects_short_window() {
        assert!(savgol_smooth(&ts(vec![1.0; 10], 1.0), 1.0, 1).is_err());
    }

    #[test]
    fn butterworth_rejects_cutoff_at_nyquist() {
        assert!(butterworth_lowpass(&ts(vec![1.0; 10], 12.0), 6.0, 4).is_err());
    }

    #[test]
    fn butterworth_dc_gain() {
        let out = butterworth_lowpass(&ts(vec![3.5; 200], 30.0), 6.0, 4).unwrap();
        assert!(out.values.iter().all(|v| (v - 3.5).abs() < 1e-9));
    }

    #[test]
    fn butterworth_design_matches_analog_prototype() {
        // Bilinear transform maps f to the analog frequency tan(pi f/fs)/tan(pi fc/fs).
        let s = butterworth_design(4, 6.0, 30.0).unwrap();
        for f in [0.5, 1.0, 3.0, 6.0, 9.0, 12.0] {
            let wa = (std::f64::consts::PI * f / 30.0).tan() / (std::f64::consts::PI * 6.0 / 30.0).tan();
            let expect = 1.0 / (1.0 + wa.powi(8)).sqrt();
            assert!((sos_magnitude(&s, f, 30.0) - expect).abs() < 1e-12, "f = {f}");
        }
    }

    #[test]
    fn gravity_removed_from_static_vector() {
        let a = Series3::new(0.0, 30.0, vec![[0.0, 0.0, 9.81]; 300], Unit::MetersPerSecond2).unwrap();
        let out = remove_gravity(&a).unwrap();
        assert!(out.values.iter().flatten().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn trapezoid_on_constant() {
        let a = Series3::new(0.0, 30.0, vec![[1.0, 0.0, 0.0]; 31], Unit::MetersPerSecond2).unwrap();
        let v = integrate_velocity_native(&a);
        assert!((v.values[30][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_on_triangle_pulse() {
        // 0 -> 1 -> 0 over 2 s, then at rest
        let rate = 30.0;
        let a: Vec<[f64; 3]> = (0..=60)
            .map(|i| {
                let t = i as f64 / rate;
                [if t <= 1.0 { t } else { 2.0 - t }, 0.0, 0.0]
            })
            .collect();
        let v = integrate_velocity_native(&Series3::new(0.0, rate, a, Unit::MetersPerSecond2).unwrap());
        assert!((v.values[60][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zupt_zeroes_rest_segment() {
        let rate = 30.0;
        let mut a = vec![[1.0, 0.0, 0.0]; 30];
        a.extend(vec![[0.0, 0.0, 0.0]; 300]);
        let v = integrate_velocity_native(&Series3::new(0.0, rate, a, Unit::MetersPerSecond2).unwrap());
        assert!(v.values[30..].iter().all(|x| x == &[0.0, 0.0, 0.0]));
    }

    #[test]
    fn speeds() {
        let v = Series3::new(
            0.0,
            1.0,
            vec![[3.0, 4.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
            Unit::MetersPerSecond,
        )
        .unwrap();
        let m = velocity_magnitude(&v).values;
        assert_eq!(m[0], 5.0);
        assert_eq!(m[1], 0.0);
        assert!((m[2] - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn resample_bins_are_means() {
        let x = ts((0..60).map(|i| i as f64).collect(), 30.0);
        let r = resample_mean(&x, 1.0).unwrap();
        assert_eq!(r.values, vec![14.5, 44.5]);
    }

    #[test]
    fn kinetic_power_examples() {
        let one = ts(vec![1.0], 1.0);
        let p = SubjectProfile::default();
        let e = kinetic_power(&one, &one, &one, &p, Activity::General).unwrap();
        assert!((e.values[0] - 0.583_333_333).abs() < 1e-8);
        let c = kinetic_power(&one, &one, &one, &p, Activity::Cycling).unwrap();
        assert!((c.values[0] - 1.75).abs() < 1e-12);
        let zero = ts(vec![0.0], 1.0);
        assert_eq!(kinetic_power(&zero, &zero, &zero, &p, Activity::General).unwrap().values[0], 0.0);
    }

    #[test]
    fn kinetic_power_rejects_nonpositive_efficiency() {
        let one = ts(vec![1.0], 1.0);
        let p = SubjectProfile {
            efficiency_default: 0.0,
            ..SubjectProfile::default()
        };
        assert!(kinetic_power(&one, &one, &one, &p, Activity::General).is_err());
    }

    #[test]
    fn proxy_examples() {
        let e = ts(vec![0.0, 0.58333, 19.6], 1.0);
        let (o2, co2) = metabolic_proxy(&e, 0.8).unwrap();
        assert_eq!((o2.values[0], co2.values[0]), (0.0, 0.0));
        assert!((o2.values[1] - 0.029762).abs() < 5e-7);
        assert!((co2.values[1] - 0.8 * 0.58333 / 19.6).abs() < 1e-15);
        assert!((co2.values[1] - 0.023810).abs() < 1e-6);
        assert!((o2.values[2] - 1.0).abs() < 1e-15);
        assert!(metabolic_proxy(&ts(vec![-1.0], 1.0), 0.8).is_err());
    }

    #[test]
    fn hr_conversion_and_replacement() {
        let u = hr_to_input(&ts(vec![60.0; 30], 1.0)).unwrap();
        assert!(u.u.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let u = hr_to_input(&ts(vec![72.0; 30], 1.0)).unwrap();
        assert!(u.u.values.iter().all(|v| (v - 1.2).abs() < 1e-12));
        let mut hr = vec![70.0; 30];
        hr[10] = 0.0;
        let u = hr_to_input(&ts(hr, 1.0)).unwrap();
        assert_eq!(u.replaced, vec![10]);
        assert!((u.u.values[10] - 70.0 / 60.0).abs() < 1e-12);
    }
}
