//! Linear chirp segments, the two- and three-pulse refocused excitation
//! sequences, and their discretization into sampled waveforms.
//!
//! All frequencies are angular (rad/s) and times are in seconds. Every chirp
//! sweeps its carrier from `-C` to `+C`; resonance offsets are handled by the
//! propagator, never baked into the waveform.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI, TAU};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotations::solve_alpha;

/// `A₁² / a₁` below which the π pulse is rejected outright.
pub const ADIABATIC_HARD_RATIO: f64 = 4.0;
/// `A₁² / a₁` below which a warning is logged.
pub const ADIABATIC_WARN_RATIO: f64 = 10.0;
/// Sweep rate in units of `A²` used by the presets.
pub const PRESET_RATE_FACTOR: f64 = 2.7;
pub const DEFAULT_TAPER_FRACTION: f64 = 0.1;
/// Hard cap on the number of samples a waveform may hold.
pub const MAX_SAMPLES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipRole {
    ExciteHalfPi,
    InvertPi,
}

/// One linear chirp: peak amplitude `A`, sweep `[-C, C]`, rate `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpParams {
    /// Peak RF amplitude (rad/s).
    pub amplitude: f64,
    /// Half sweep extent `C` (rad/s).
    pub half_sweep: f64,
    /// Sweep rate `a` (rad/s²).
    pub rate: f64,
    pub taper_fraction: f64,
    pub role: FlipRole,
}

impl ChirpParams {
    pub fn new(
        amplitude: f64,
        half_sweep: f64,
        rate: f64,
        taper_fraction: f64,
        role: FlipRole,
    ) -> Result<Self> {
        let p = ChirpParams { amplitude, half_sweep, rate, taper_fraction, role };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("half sweep", self.half_sweep),
            ("sweep rate", self.rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("chirp {name} must be positive and finite, got {v}")));
            }
        }
        check_taper_fraction(self.taper_fraction)?;
        let t = self.duration();
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!("chirp duration 2C/a = {t} is not a positive number")));
        }
        Ok(())
    }

    /// `T = 2C/a`.
    pub fn duration(&self) -> f64 {
        2.0 * self.half_sweep / self.rate
    }

    /// Carrier phase `-C t + a t²/2`, without range checking.
    #[inline]
    pub fn phase_at(&self, t: f64) -> f64 {
        t * (0.5 * self.rate * t - self.half_sweep)
    }

    /// Instantaneous carrier frequency `ω_c(t) = -C + a t`.
    #[inline]
    pub fn frequency_at(&self, t: f64) -> f64 {
        self.rate * t - self.half_sweep
    }

    /// Time at which the carrier passes `omega`.
    pub fn crossing_time(&self, omega: f64) -> f64 {
        (omega + self.half_sweep) / self.rate
    }

    /// `A² / a`.
    pub fn adiabaticity_ratio(&self) -> f64 {
        self.amplitude * self.amplitude / self.rate
    }
}

fn check_taper_fraction(f: f64) -> Result<()> {
    if !(0.0..0.5).contains(&f) {
        return Err(Error::Domain(format!("taper fraction must lie in [0, 0.5), got {f}")));
    }
    Ok(())
}

/// Phase of a chirp at time `t` into the segment.
pub fn chirp_phase(t: f64, params: &ChirpParams) -> Result<f64> {
    let end = params.duration();
    if !(0.0..=end).contains(&t) {
        return Err(Error::Domain(format!("t = {t} s lies outside the chirp [0, {end}] s")));
    }
    Ok(params.phase_at(t))
}

/// Sweep rate that makes a chirp of amplitude `A` act as a π/2 excitation
/// for the stage I/III tilt `θ₀`: `a = 2A² cot θ₀ / α(θ₀)`.
pub fn sweep_rate_for(theta0: f64, amplitude: f64) -> Result<f64> {
    if !(amplitude.is_finite() && amplitude > 0.0) {
        return Err(Error::Domain(format!("amplitude must be positive, got {amplitude}")));
    }
    let alpha = solve_alpha(theta0)?;
    if alpha < 1e-6 {
        return Err(Error::Domain(format!(
            "stage II angle {alpha:e} is degenerate (theta0 too close to pi/4); sweep rate diverges"
        )));
    }
    Ok(2.0 * amplitude * amplitude / theta0.tan() / alpha)
}

pub fn segment_duration(params: &ChirpParams) -> f64 {
    params.duration()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Chirp(ChirpParams),
    Delay { duration: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match self {
            Segment::Chirp(p) => p.duration(),
            Segment::Delay { duration } => *duration,
        }
    }

    pub fn chirp(&self) -> Option<&ChirpParams> {
        match self {
            Segment::Chirp(p) => Some(p),
            Segment::Delay { .. } => None,
        }
    }
}

/// Ordered chirps and delays making up one pulse sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub label: String,
    pub segments: Vec<Segment>,
}

impl SequenceSpec {
    pub fn new(label: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let spec = SequenceSpec { label: label.into(), segments };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Config("sequence has no segments".into()));
        }
        for seg in &self.segments {
            match seg {
                Segment::Chirp(p) => p.validate()?,
                Segment::Delay { duration } => {
                    if !(duration.is_finite() && *duration > 0.0) {
                        return Err(Error::Config(format!(
                            "delay duration must be positive, got {duration}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn chirps(&self) -> impl Iterator<Item = &ChirpParams> {
        self.segments.iter().filter_map(Segment::chirp)
    }
}

/// Checks `A₁² ≥ 4 a₁` (error) and `A₁² ≥ 10 a₁` (warning) for a π chirp.
pub fn check_inversion_adiabaticity(pi_amplitude: f64, pi_rate: f64) -> Result<f64> {
    let ratio = pi_amplitude * pi_amplitude / pi_rate;
    if !(ratio >= ADIABATIC_HARD_RATIO) {
        return Err(Error::Config(format!(
            "pi chirp is not adiabatic: A1^2/a1 = {ratio:.3} < {ADIABATIC_HARD_RATIO}; \
             raise the pi-pulse amplitude or lower the sweep rate"
        )));
    }
    if ratio < ADIABATIC_WARN_RATIO {
        log::warn!(
            "pi chirp is only marginally adiabatic: A1^2/a1 = {ratio:.3} < {ADIABATIC_WARN_RATIO}"
        );
    }
    Ok(ratio)
}

fn check_band(band: f64, half_sweep: f64) -> Result<()> {
    if !(band > 0.0 && band.is_finite()) {
        return Err(Error::Config(format!("band half-width B must be positive, got {band}")));
    }
    if !(half_sweep > band) {
        return Err(Error::Config(format!(
            "sweep half-width C = {half_sweep} must exceed band half-width B = {band}"
        )));
    }
    Ok(())
}

/// π/2 chirp (duration `T`), π chirp at rate `2a` (duration `T/2`), then a
/// free delay of `T/2`.
pub fn build_two_pulse(
    amplitude: f64,
    pi_amplitude: f64,
    band: f64,
    half_sweep: f64,
    rate: f64,
) -> Result<SequenceSpec> {
    build_two_pulse_tapered(amplitude, pi_amplitude, band, half_sweep, rate, 0.0)
}

/// [`build_two_pulse`] with every chirp edge-tapered.
pub fn build_two_pulse_tapered(
    amplitude: f64,
    pi_amplitude: f64,
    band: f64,
    half_sweep: f64,
    rate: f64,
    taper_fraction: f64,
) -> Result<SequenceSpec> {
    check_band(band, half_sweep)?;
    let excite =
        ChirpParams::new(amplitude, half_sweep, rate, taper_fraction, FlipRole::ExciteHalfPi)?;
    let invert =
        ChirpParams::new(pi_amplitude, half_sweep, 2.0 * rate, taper_fraction, FlipRole::InvertPi)?;
    check_inversion_adiabaticity(pi_amplitude, invert.rate)?;
    let t = excite.duration();
    SequenceSpec::new(
        "two_pulse",
        vec![Segment::Chirp(excite), Segment::Chirp(invert), Segment::Delay { duration: t / 2.0 }],
    )
}

/// Three-chirp sequence: π/2 (`T`), π at `A₁/√2` and rate `a` (`T`), delay
/// `T/2`, π at `A₁` and rate `2a` (`T/2`).
pub fn build_chorus(
    amplitude: f64,
    pi_amplitude: f64,
    band: f64,
    half_sweep: f64,
    rate: f64,
    taper_fraction: f64,
) -> Result<SequenceSpec> {
    check_band(band, half_sweep)?;
    check_taper_fraction(taper_fraction)?;
    let excite =
        ChirpParams::new(amplitude, half_sweep, rate, taper_fraction, FlipRole::ExciteHalfPi)?;
    let center = ChirpParams::new(
        pi_amplitude * FRAC_1_SQRT_2,
        half_sweep,
        rate,
        taper_fraction,
        FlipRole::InvertPi,
    )?;
    let last =
        ChirpParams::new(pi_amplitude, half_sweep, 2.0 * rate, taper_fraction, FlipRole::InvertPi)?;
    check_inversion_adiabaticity(center.amplitude, center.rate)?;
    check_inversion_adiabaticity(last.amplitude, last.rate)?;
    let t = excite.duration();
    let label = if taper_fraction > 0.0 { "chorus_tapered" } else { "chorus" };
    SequenceSpec::new(
        label,
        vec![
            Segment::Chirp(excite),
            Segment::Chirp(center),
            Segment::Delay { duration: t / 2.0 },
            Segment::Chirp(last),
        ],
    )
}

/// Edge taper: `sin²(π s / 2)` ramps over the first and last
/// `⌊taper_fraction · n⌋` samples, 1 elsewhere.
pub fn taper_envelope(n_samples: usize, taper_fraction: f64) -> Result<Vec<f64>> {
    check_taper_fraction(taper_fraction)?;
    let ramp = (taper_fraction * n_samples as f64).floor() as usize;
    let mut gain = vec![1.0; n_samples];
    if ramp == 0 {
        return Ok(gain);
    }
    for i in 0..ramp {
        let g = (FRAC_PI_2 * i as f64 / ramp as f64).sin().powi(2);
        gain[i] = gain[i].min(g);
        let j = n_samples - 1 - i;
        gain[j] = gain[j].min(g);
    }
    Ok(gain)
}

/// How the sample interval is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    /// Bound on the carrier phase advance per sample (rad).
    pub max_phase_step: f64,
    /// Bound on the lab-frame rotation angle per sample at the largest offset (rad).
    pub max_rotation_step: f64,
    /// Largest offset |ω₀| that will be simulated (rad/s).
    pub max_offset: f64,
    /// Explicit sample interval; bypasses both bounds.
    pub dt: Option<f64>,
    pub max_samples: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            max_phase_step: PI / 20.0,
            max_rotation_step: PI / 20.0,
            max_offset: 0.0,
            dt: None,
            max_samples: MAX_SAMPLES,
        }
    }
}

impl SamplingPolicy {
    pub fn for_offsets(max_offset: f64) -> Self {
        SamplingPolicy { max_offset: max_offset.abs(), ..Default::default() }
    }

    pub fn with_dt(dt: f64) -> Self {
        SamplingPolicy { dt: Some(dt), ..Default::default() }
    }

    /// Upper bound on the sample interval for `spec`.
    pub fn max_dt(&self, spec: &SequenceSpec) -> Result<f64> {
        if let Some(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Config(format!("sample interval must be positive, got {dt}")));
            }
            return Ok(dt);
        }
        let mut dt = f64::INFINITY;
        let mut peak_amp: f64 = 0.0;
        for p in spec.chirps() {
            // (C + a dt) dt <= max_phase_step
            let (c, a, q) = (p.half_sweep, p.rate, self.max_phase_step);
            let bound = 2.0 * q / (c + (c * c + 4.0 * a * q).sqrt());
            dt = dt.min(bound);
            peak_amp = peak_amp.max(p.amplitude);
        }
        let field = peak_amp.hypot(self.max_offset);
        if field > 0.0 {
            dt = dt.min(self.max_rotation_step / field);
        }
        if !dt.is_finite() {
            return Err(Error::Config(
                "no field and no offset bound the sample interval; set dt explicitly".into(),
            ));
        }
        Ok(dt)
    }
}

/// Discretized sequence. Sample `i` holds the field over `[i dt, (i+1) dt)`:
/// constant amplitude, phase advancing linearly from `phase[i]` at rate
/// `frequency[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub label: String,
    pub dt: f64,
    /// RF amplitude (rad/s), non-negative.
    pub amplitude: Vec<f64>,
    /// Carrier phase at the start of each sample (rad).
    pub phase: Vec<f64>,
    /// Mean carrier frequency across each sample (rad/s).
    pub frequency: Vec<f64>,
    /// Sample index where each segment starts, plus the total length.
    pub boundaries: Vec<usize>,
}

impl SampledWaveform {
    pub fn len(&self) -> usize {
        self.amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitude.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn segment_range(&self, k: usize) -> std::ops::Range<usize> {
        self.boundaries[k]..self.boundaries[k + 1]
    }

    /// Zero-amplitude waveform of `n` samples.
    pub fn silent(n: usize, dt: f64) -> Self {
        SampledWaveform {
            label: "silent".into(),
            dt,
            amplitude: vec![0.0; n],
            phase: vec![0.0; n],
            frequency: vec![0.0; n],
            boundaries: vec![0, n],
        }
    }

    /// Writes `t_seconds, amplitude_hz, phase_rad` rows behind a `#` header.
    pub fn write_to<W: Write>(&self, mut w: W, metadata: &[(&str, String)]) -> io::Result<()> {
        writeln!(w, "# label: {}", self.label)?;
        writeln!(w, "# dt_s: {}", self.dt)?;
        let b: Vec<String> = self.boundaries.iter().map(usize::to_string).collect();
        writeln!(w, "# segment_boundaries: {}", b.join(","))?;
        for (k, v) in metadata {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "# t_seconds, amplitude_hz, phase_rad")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{}, {}, {}",
                i as f64 * self.dt,
                self.amplitude[i] / TAU,
                self.phase[i] + 0.0
            )?;
        }
        Ok(())
    }
}

/// Sample counts per segment. When every duration is an integer multiple of
/// a common interval no larger than `dt_max`, that interval is used and the
/// boundaries are exact; otherwise boundaries are rounded cumulatively.
fn layout(durations: &[f64], dt_max: f64) -> (f64, Vec<usize>) {
    let shortest = durations.iter().copied().fold(f64::INFINITY, f64::min);
    let m = ((shortest / dt_max) - 1e-9).ceil().max(1.0);
    let unit = shortest / m;
    let counts: Vec<usize> = durations.iter().map(|d| (d / unit).round() as usize).collect();
    let exact = counts
        .iter()
        .zip(durations)
        .all(|(&k, &d)| (k as f64 * unit - d).abs() <= 1e-9 * d);
    if exact {
        return (unit, counts);
    }
    let mut elapsed = 0.0;
    let mut start = 0usize;
    let counts = durations
        .iter()
        .map(|d| {
            elapsed += d;
            let end = (elapsed / dt_max).round() as usize;
            let n = end - start;
            start = end;
            n
        })
        .collect();
    (dt_max, counts)
}

/// Discretizes `spec` according to `policy`.
pub fn sample(spec: &SequenceSpec, policy: &SamplingPolicy) -> Result<SampledWaveform> {
    spec.validate()?;
    let dt_max = policy.max_dt(spec)?;
    let estimate = spec.total_duration() / dt_max;
    if !(estimate <= policy.max_samples as f64) {
        return Err(Error::Resource(format!(
            "sequence of {:.3e} s at dt = {dt_max:.3e} s needs ~{estimate:.3e} samples (limit {})",
            spec.total_duration(),
            policy.max_samples
        )));
    }
    let durations: Vec<f64> = spec.segments.iter().map(Segment::duration).collect();
    let (dt, counts) = layout(&durations, dt_max);
    let total: usize = counts.iter().sum();
    if total > policy.max_samples {
        return Err(Error::Resource(format!(
            "{total} samples exceed the limit of {}",
            policy.max_samples
        )));
    }

    let mut wf = SampledWaveform {
        label: spec.label.clone(),
        dt,
        amplitude: Vec::with_capacity(total),
        phase: Vec::with_capacity(total),
        frequency: Vec::with_capacity(total),
        boundaries: Vec::with_capacity(counts.len() + 1),
    };
    wf.boundaries.push(0);
    for (seg, &n) in spec.segments.iter().zip(&counts) {
        match seg {
            Segment::Delay { .. } => {
                wf.amplitude.extend(std::iter::repeat(0.0).take(n));
                wf.phase.extend(std::iter::repeat(0.0).take(n));
                wf.frequency.extend(std::iter::repeat(0.0).take(n));
            }
            Segment::Chirp(p) => {
                let end = p.duration();
                let gain = taper_envelope(n, p.taper_fraction)?;
                for (j, g) in gain.into_iter().enumerate() {
                    let t0 = (j as f64 * dt).min(end);
                    let t1 = ((j + 1) as f64 * dt).min(end);
                    let (p0, p1) = (p.phase_at(t0), p.phase_at(t1));
                    wf.amplitude.push(p.amplitude * g);
                    wf.phase.push(p0);
                    wf.frequency.push((p1 - p0) / dt);
                }
            }
        }
        wf.boundaries.push(wf.amplitude.len());
    }
    Ok(wf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotations::theta0_from_cot_squared;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const KHZ: f64 = TAU * 1e3;

    fn preset_rate(amp_khz: f64) -> f64 {
        PRESET_RATE_FACTOR * (amp_khz * KHZ).powi(2)
    }

    fn chirp(c_khz: f64, rate: f64) -> ChirpParams {
        ChirpParams::new(KHZ, c_khz * KHZ, rate, 0.0, FlipRole::ExciteHalfPi).unwrap()
    }

    #[test]
    fn chirp_phase_endpoints_and_midpoint() {
        let p = chirp(150.0, preset_rate(1.0));
        let t = p.duration();
        assert_eq!(chirp_phase(0.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(chirp_phase(t, &p).unwrap(), 0.0, epsilon = 1e-9);
        let c = p.half_sweep;
        let mid = chirp_phase(c / p.rate, &p).unwrap();
        assert_abs_diff_eq!(mid, -c * c / (2.0 * p.rate), epsilon = 1e-9 * mid.abs());
    }

    #[test]
    fn chirp_phase_rejects_out_of_segment_times() {
        let p = chirp(150.0, preset_rate(1.0));
        assert!(matches!(chirp_phase(-1e-9, &p), Err(Error::Domain(_))));
        assert!(matches!(chirp_phase(p.duration() * 1.001, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn sweep_rate_reference_values() {
        let a = KHZ;
        let r2 = sweep_rate_for(theta0_from_cot_squared(2.0), a).unwrap() / (a * a);
        assert_abs_diff_eq!(r2, 2.7, epsilon = 0.01);
        let r3 = sweep_rate_for(theta0_from_cot_squared(3.0), a).unwrap() / (a * a);
        assert_abs_diff_eq!(r3, 2.81, epsilon = 0.01);
    }

    #[test]
    fn sweep_rate_degenerate_near_quarter_pi() {
        let err = sweep_rate_for(std::f64::consts::FRAC_PI_4, KHZ).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(sweep_rate_for(1.0, KHZ).is_err());
        assert!(sweep_rate_for(0.5, -1.0).is_err());
    }

    #[test]
    fn segment_durations_from_captions() {
        let t = segment_duration(&chirp(400.0, preset_rate(1.0)));
        assert_abs_diff_eq!(t, 47.15e-3, epsilon = 0.1e-3);
        let t = segment_duration(&chirp(150.0, preset_rate(1.0)));
        assert_abs_diff_eq!(t, 17.68e-3, epsilon = 0.05e-3);
        let t = segment_duration(&chirp(180.0, preset_rate(3.0)));
        assert_abs_diff_eq!(t, 2.36e-3, epsilon = 0.01e-3);
    }

    #[test]
    fn invalid_chirp_params_rejected() {
        assert!(ChirpParams::new(0.0, 1.0, 1.0, 0.0, FlipRole::InvertPi).is_err());
        assert!(ChirpParams::new(1.0, -1.0, 1.0, 0.0, FlipRole::InvertPi).is_err());
        assert!(ChirpParams::new(1.0, 1.0, f64::NAN, 0.0, FlipRole::InvertPi).is_err());
        assert!(ChirpParams::new(1.0, 1.0, 1.0, 0.5, FlipRole::InvertPi).is_err());
    }

    #[test]
    fn two_pulse_layout() {
        let a = preset_rate(1.0);
        let s = build_two_pulse(KHZ, 10.0 * KHZ, 50.0 * KHZ, 400.0 * KHZ, a).unwrap();
        assert_eq!(s.segments.len(), 3);
        let d: Vec<f64> = s.segments.iter().map(Segment::duration).collect();
        assert_abs_diff_eq!(d[1] / d[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d[2] / d[0], 0.5, epsilon = 1e-12);
        // 2T; the caption's 94.13 ms does not equal 2 x 47.15 ms.
        assert_abs_diff_eq!(s.total_duration(), 94.3e-3, epsilon = 0.2e-3);
        assert_abs_diff_eq!(s.total_duration(), 2.0 * d[0], epsilon = 1e-15);
        let pi = s.segments[1].chirp().unwrap();
        assert_eq!(pi.rate, 2.0 * a);
        assert_eq!(pi.role, FlipRole::InvertPi);
    }

    #[test]
    fn two_pulse_delay_is_silent() {
        let s = build_two_pulse(KHZ, 10.0 * KHZ, 50.0 * KHZ, 150.0 * KHZ, preset_rate(1.0)).unwrap();
        let wf = sample(&s, &SamplingPolicy::for_offsets(50.0 * KHZ)).unwrap();
        assert!(wf.amplitude[wf.segment_range(2)].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn chorus_durations_from_captions() {
        let s = build_chorus(KHZ, 10.0 * KHZ, 50.0 * KHZ, 150.0 * KHZ, preset_rate(1.0), 0.0)
            .unwrap();
        assert_abs_diff_eq!(s.total_duration(), 53.05e-3, epsilon = 0.05e-3);
        let s = build_chorus(3.0 * KHZ, 15.0 * KHZ, 150.0 * KHZ, 180.0 * KHZ, preset_rate(3.0), 0.1)
            .unwrap();
        assert_abs_diff_eq!(s.total_duration(), 7.07e-3, epsilon = 0.02e-3);
        assert_eq!(s.label, "chorus_tapered");
    }

    #[test]
    fn chorus_amplitude_and_rate_relations() {
        let s = build_chorus(KHZ, 10.0 * KHZ, 50.0 * KHZ, 150.0 * KHZ, preset_rate(1.0), 0.0)
            .unwrap();
        let center = s.segments[1].chirp().unwrap();
        let last = s.segments[3].chirp().unwrap();
        assert_eq!(center.amplitude, 10.0 * KHZ * FRAC_1_SQRT_2);
        assert_abs_diff_eq!(last.amplitude / center.amplitude, 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(last.rate, 2.0 * center.rate);
        assert_abs_diff_eq!(s.total_duration(), 3.0 * s.segments[0].duration(), epsilon = 1e-15);
    }

    #[test]
    fn non_adiabatic_pi_rejected_with_ratio() {
        let err = build_two_pulse(KHZ, 2.0 * KHZ, 50.0 * KHZ, 150.0 * KHZ, preset_rate(1.0))
            .unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("0.741"), "{msg}");
    }

    #[test]
    fn band_must_fit_inside_sweep() {
        let a = preset_rate(1.0);
        assert!(build_two_pulse(KHZ, 10.0 * KHZ, 200.0 * KHZ, 150.0 * KHZ, a).is_err());
        assert!(build_chorus(KHZ, 10.0 * KHZ, 0.0, 150.0 * KHZ, a, 0.0).is_err());
    }

    #[test]
    fn taper_envelope_cases() {
        assert!(taper_envelope(64, 0.0).unwrap().iter().all(|&g| g == 1.0));
        let g = taper_envelope(100, 0.1).unwrap();
        assert!(g[10..90].iter().all(|&x| x == 1.0));
        assert_eq!(g[0], 0.0);
        assert_eq!(g[99], 0.0);
        assert_abs_diff_eq!(g[5], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[94], 0.5, epsilon = 1e-15);
        assert!(g[9] < 1.0);
        assert!(matches!(taper_envelope(100, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn pure_delay_sampling() {
        let spec = SequenceSpec::new("delay", vec![Segment::Delay { duration: 1e-3 }]).unwrap();
        let wf = sample(&spec, &SamplingPolicy::with_dt(1e-6)).unwrap();
        assert_eq!(wf.len(), 1000);
        assert!(wf.amplitude.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn pure_delay_without_bound_is_config_error() {
        let spec = SequenceSpec::new("delay", vec![Segment::Delay { duration: 1e-3 }]).unwrap();
        assert!(matches!(sample(&spec, &SamplingPolicy::default()), Err(Error::Config(_))));
    }

    #[test]
    fn untapered_chirp_first_sample() {
        let p = chirp(150.0, preset_rate(1.0));
        let spec = SequenceSpec::new("one", vec![Segment::Chirp(p)]).unwrap();
        let wf = sample(&spec, &SamplingPolicy::default()).unwrap();
        assert_eq!(wf.amplitude[0], p.amplitude);
        assert_eq!(wf.phase[0], 0.0);
    }

    #[test]
    fn midpoint_instantaneous_frequency_is_zero() {
        let p = chirp(150.0, preset_rate(1.0));
        let spec = SequenceSpec::new("one", vec![Segment::Chirp(p)]).unwrap();
        let wf = sample(&spec, &SamplingPolicy::default()).unwrap();
        let m = wf.len() / 2;
        let f = (wf.phase[m + 1] - wf.phase[m]) / wf.dt;
        assert!(f.abs() <= p.rate * wf.dt / 2.0 * (1.0 + 1e-6), "f = {f}");
    }

    #[test]
    fn sampled_phase_sweeps_linearly() {
        let p = chirp(150.0, preset_rate(1.0));
        let spec = SequenceSpec::new("one", vec![Segment::Chirp(p)]).unwrap();
        let wf = sample(&spec, &SamplingPolicy::default()).unwrap();
        let n = wf.len();
        let f: Vec<f64> = (0..n - 1).map(|i| (wf.phase[i + 1] - wf.phase[i]) / wf.dt).collect();
        assert_abs_diff_eq!(f[0], -p.half_sweep, epsilon = p.rate * wf.dt);
        assert_abs_diff_eq!(f[n - 2], p.half_sweep, epsilon = 2.0 * p.rate * wf.dt);
        // Least-squares slope over windows clear of the clamped final sample.
        for win in f[..n - 2].chunks_exact(5000) {
            let k = win.len() as f64;
            let xm = (k - 1.0) / 2.0;
            let ym = win.iter().sum::<f64>() / k;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (j, y) in win.iter().enumerate() {
                sxy += (j as f64 - xm) * (y - ym);
                sxx += (j as f64 - xm).powi(2);
            }
            let slope = sxy / sxx / wf.dt;
            assert!(((slope - p.rate) / p.rate).abs() <= 1e-6, "slope {slope}");
        }
        // Per-sample phase advance respects the policy bound.
        let max_step = f.iter().map(|x| (x * wf.dt).abs()).fold(0.0, f64::max);
        assert!(max_step <= PI / 20.0);
    }

    #[test]
    fn preset_boundaries_are_exact() {
        let s = build_chorus(KHZ, 10.0 * KHZ, 50.0 * KHZ, 150.0 * KHZ, preset_rate(1.0), 0.0)
            .unwrap();
        let wf = sample(&s, &SamplingPolicy::for_offsets(50.0 * KHZ)).unwrap();
        for (k, seg) in s.segments.iter().enumerate() {
            let n = wf.segment_range(k).len() as f64;
            assert_abs_diff_eq!(n * wf.dt, seg.duration(), epsilon = 1e-9 * seg.duration());
        }
    }

    #[test]
    fn sample_budget_enforced() {
        let s = build_two_pulse(KHZ, 10.0 * KHZ, 50.0 * KHZ, 400.0 * KHZ, preset_rate(1.0)).unwrap();
        let policy = SamplingPolicy { dt: Some(1e-10), ..Default::default() };
        assert!(matches!(sample(&s, &policy), Err(Error::Resource(_))));
    }

    #[test]
    fn waveform_export_format() {
        let spec = SequenceSpec::new("d", vec![Segment::Delay { duration: 3e-6 }]).unwrap();
        let wf = sample(&spec, &SamplingPolicy::with_dt(1e-6)).unwrap();
        let mut buf = Vec::new();
        wf.write_to(&mut buf, &[("version", "0.1.0".into())]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header: Vec<&str> = text.lines().filter(|l| l.starts_with('#')).collect();
        assert!(header.iter().any(|l| l.starts_with("# label: d")));
        assert!(header.iter().any(|l| l.starts_with("# dt_s: ")));
        assert!(header.iter().any(|l| *l == "# segment_boundaries: 0,3"));
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], "0, 0, 0");
    }

    fn any_sequence() -> impl Strategy<Value = SequenceSpec> {
        let seg = prop_oneof![
            (0.5..5.0f64, 20.0..80.0f64, 0.0..0.45f64).prop_map(|(amp, c, tf)| Segment::Chirp(
                ChirpParams::new(amp * KHZ, c * KHZ, preset_rate(1.0), tf, FlipRole::InvertPi)
                    .unwrap()
            )),
            (1e-4..2e-3f64).prop_map(|d| Segment::Delay { duration: d }),
        ];
        proptest::collection::vec(seg, 1..4)
            .prop_map(|segments| SequenceSpec::new("p", segments).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sampled_duration_matches_spec(spec in any_sequence()) {
            let wf = sample(&spec, &SamplingPolicy::for_offsets(30.0 * KHZ)).unwrap();
            prop_assert!((wf.duration() - spec.total_duration()).abs() <= wf.dt);
            prop_assert_eq!(*wf.boundaries.last().unwrap(), wf.len());
            prop_assert!(wf.amplitude.iter().all(|&a| a >= 0.0));
            prop_assert!(wf.phase.iter().all(|p| p.is_finite()));
            for (k, seg) in spec.segments.iter().enumerate() {
                if let Segment::Delay { .. } = seg {
                    prop_assert!(wf.amplitude[wf.segment_range(k)].iter().all(|&a| a == 0.0));
                }
            }
        }

        #[test]
        fn taper_never_adds_energy(n in 2usize..500, f1 in 0.0..0.49f64, f2 in 0.0..0.49f64) {
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            let a = taper_envelope(n, lo).unwrap();
            let b = taper_envelope(n, hi).unwrap();
            prop_assert!(b.iter().sum::<f64>() <= a.iter().sum::<f64>() + 1e-12);
            prop_assert!(b.iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
    }
}
