//! Closed-form phase-dispersion predictions for chirp excitation followed by
//! chirp refocusing, a quadrature oracle for the accumulated phase, and
//! post-processing of simulated profiles.
//!
//! `Δ` is always a time: the sweep at rate `a` needs `Δ` seconds to move from
//! offset `-B` to `-B + aΔ`.

use std::f64::consts::TAU;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::propagator::{write_profile_rows, ExcitationProfile};
use crate::rotations::MagVector;
use crate::waveform::{ChirpParams, FlipRole};

/// Parameters entering the dispersion formulas (all rad/s, rad/s²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionModel {
    /// π/2 chirp amplitude `A`.
    pub amplitude: f64,
    /// Final π chirp amplitude `A₁`.
    pub pi_amplitude: f64,
    /// Base sweep rate `a`.
    pub rate: f64,
    /// Band half-width `B`.
    pub band: f64,
    /// Sweep half-width `C`.
    pub half_sweep: f64,
    /// `cot θ₀` of the three-stage picture; sets where stage III begins.
    pub cot_theta0: f64,
}

impl DispersionModel {
    pub fn new(amplitude: f64, pi_amplitude: f64, rate: f64, band: f64, half_sweep: f64) -> Result<Self> {
        let m = DispersionModel {
            amplitude,
            pi_amplitude,
            rate,
            band,
            half_sweep,
            cot_theta0: std::f64::consts::SQRT_2,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.amplitude, self.pi_amplitude, self.rate, self.band, self.half_sweep, self.cot_theta0];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Config(format!("dispersion model needs positive finite parameters: {self:?}")));
        }
        if !(self.half_sweep > self.band) {
            return Err(Error::Domain(format!(
                "sweep half-width C = {} must exceed band half-width B = {}",
                self.half_sweep, self.band
            )));
        }
        Ok(())
    }

    /// Time to sweep from `-C` to `-B`: `(C − B)/a`.
    pub fn t0(&self) -> f64 {
        (self.half_sweep - self.band) / self.rate
    }

    /// Time to sweep from `-B` to `C`: `(C + B)/a`.
    pub fn t1(&self) -> f64 {
        (self.half_sweep + self.band) / self.rate
    }

    /// Excitation chirp duration `T = T₀ + T₁`.
    pub fn period(&self) -> f64 {
        2.0 * self.half_sweep / self.rate
    }

    /// Time from resonance crossing to the start of stage III: `A cot θ₀ / a`.
    pub fn stage_three_entry(&self) -> f64 {
        self.amplitude * self.cot_theta0 / self.rate
    }

    pub fn offset_for_delta(&self, delta: f64) -> f64 {
        -self.band + self.rate * delta
    }

    pub fn delta_for_offset(&self, offset: f64) -> f64 {
        (offset + self.band) / self.rate
    }

    /// `Δ` of the far band edge `+B`.
    pub fn edge_delta(&self) -> f64 {
        2.0 * self.band / self.rate
    }

    pub fn excitation_chirp(&self) -> ChirpParams {
        ChirpParams {
            amplitude: self.amplitude,
            half_sweep: self.half_sweep,
            rate: self.rate,
            taper_fraction: 0.0,
            role: FlipRole::ExciteHalfPi,
        }
    }

    /// The refocusing π chirp at rate `2a`.
    pub fn refocusing_chirp(&self) -> ChirpParams {
        ChirpParams {
            amplitude: self.pi_amplitude,
            half_sweep: self.half_sweep,
            rate: 2.0 * self.rate,
            taper_fraction: 0.0,
            role: FlipRole::InvertPi,
        }
    }

    fn check_delta(&self, delta: f64) -> Result<()> {
        let t1 = self.t1();
        if !(delta >= 0.0 && delta < t1) {
            return Err(Error::Domain(format!("delta = {delta} s must lie in [0, T1 = {t1}) s")));
        }
        Ok(())
    }
}

/// `Φ(−B) − Φ(−B + aΔ)` for the excitation chirp:
/// `(a/2)(−Δ² + 2T₁Δ) + (A²/2a) ln(T₁/(T₁ − Δ))`.
pub fn excitation_phase_diff(delta: f64, model: &DispersionModel) -> Result<f64> {
    model.check_delta(delta)?;
    let (a, t1) = (model.rate, model.t1());
    let amp2 = model.amplitude * model.amplitude;
    Ok(0.5 * a * (-delta * delta + 2.0 * t1 * delta) + amp2 / (2.0 * a) * (t1 / (t1 - delta)).ln())
}

/// `Φ₁(−B) − Φ₁(−B + aΔ)` for the π chirp at rate `2a`:
/// `(a/4)(−2Δ² + 2(T₁ − T₀)Δ) + (A₁²/4a) ln(T₁T₀/((T₁ − Δ)(T₀ + Δ)))`.
pub fn inversion_phase_diff(delta: f64, model: &DispersionModel) -> Result<f64> {
    model.check_delta(delta)?;
    let (a, t0, t1) = (model.rate, model.t0(), model.t1());
    let amp2 = model.pi_amplitude * model.pi_amplitude;
    let quad = 0.25 * a * (-2.0 * delta * delta + 2.0 * (t1 - t0) * delta);
    let log = amp2 / (4.0 * a) * (t1 * t0 / ((t1 - delta) * (t0 + delta))).ln();
    Ok(quad + log)
}

/// Dispersion left after excitation, π refocusing and the `T/2` delay:
/// `(A₁²/4a) ln((T₁ − Δ)(T₀ + Δ)/(T₁T₀)) + (A²/2a) ln(T₁/(T₁ − Δ))`.
pub fn combined_residual(delta: f64, model: &DispersionModel) -> Result<f64> {
    model.check_delta(delta)?;
    let (a, t0, t1) = (model.rate, model.t0(), model.t1());
    let a1sq = model.pi_amplitude * model.pi_amplitude;
    let asq = model.amplitude * model.amplitude;
    Ok(a1sq / (4.0 * a) * ((t1 - delta) * (t0 + delta) / (t1 * t0)).ln()
        + asq / (2.0 * a) * (t1 / (t1 - delta)).ln())
}

/// Residual at the far band edge after the second π pulse removes the
/// `A₁` term: `(A²/2a) ln((1 + B/C)/(1 − B/C))`.
pub fn edge_residual(model: &DispersionModel) -> Result<f64> {
    let r = model.band / model.half_sweep;
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Domain(format!("edge residual needs B < C, got B/C = {r}")));
    }
    let asq = model.amplitude * model.amplitude;
    Ok(asq / (2.0 * model.rate) * ((1.0 + r) / (1.0 - r)).ln())
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss-Kronrod quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    if lo == hi {
        return 0.0;
    }
    if hi < lo {
        return -integrate(f, hi, lo, tol);
    }
    let mut stack = vec![(lo, hi, tol, 0u32)];
    let mut total = 0.0;
    while let Some((a, b, local_tol, depth)) = stack.pop() {
        let (value, err) = gauss_kronrod(&f, a, b);
        let noise = 50.0 * f64::EPSILON * value.abs();
        if err <= local_tol.max(noise) || depth >= 60 {
            total += value;
        } else {
            let mid = 0.5 * (a + b);
            stack.push((a, mid, 0.5 * local_tol, depth + 1));
            stack.push((mid, b, 0.5 * local_tol, depth + 1));
        }
    }
    total
}

/// Absolute tolerance of [`numeric_phase_integral`] (rad).
pub const PHASE_INTEGRAL_TOL: f64 = 1e-9;

/// `∫ √((ω₀ − ω_c(t))² + A²) dt` over `[from_t, to_t]` of a chirp, by
/// adaptive quadrature.
pub fn numeric_phase_integral(offset: f64, params: &ChirpParams, from_t: f64, to_t: f64) -> f64 {
    let amp = params.amplitude;
    let integrand = |t: f64| (offset - params.frequency_at(t)).hypot(amp);
    // A kink at the crossing (A = 0) converges much faster when split there.
    let cross = params.crossing_time(offset);
    if from_t < cross && cross < to_t {
        integrate(integrand, from_t, cross, 0.5 * PHASE_INTEGRAL_TOL)
            + integrate(integrand, cross, to_t, 0.5 * PHASE_INTEGRAL_TOL)
    } else {
        integrate(integrand, from_t, to_t, PHASE_INTEGRAL_TOL)
    }
}

/// Quadrature counterpart of [`excitation_phase_diff`]: stage III phase of
/// offset `-B` minus that of `-B + aΔ`, each integrated from its own stage III
/// entry to the end of the chirp.
pub fn quadrature_excitation_phase_diff(delta: f64, model: &DispersionModel) -> Result<f64> {
    model.check_delta(delta)?;
    let p = model.excitation_chirp();
    let end = p.duration();
    let stage3 = |offset: f64| {
        let from = (p.crossing_time(offset) + model.stage_three_entry()).min(end);
        numeric_phase_integral(offset, &p, from, end)
    };
    Ok(stage3(-model.band) - stage3(model.offset_for_delta(delta)))
}

/// Quadrature counterpart of [`inversion_phase_diff`]: whole-pulse phase of
/// the rate-`2a` π chirp at `-B` minus that at `-B + aΔ`.
pub fn quadrature_inversion_phase_diff(delta: f64, model: &DispersionModel) -> Result<f64> {
    model.check_delta(delta)?;
    let p = model.refocusing_chirp();
    let end = p.duration();
    let whole = |offset: f64| numeric_phase_integral(offset, &p, 0.0, end);
    Ok(whole(-model.band) - whole(model.offset_for_delta(delta)))
}

/// Profile after a single global rotation about z.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCorrectedProfile {
    pub source: ExcitationProfile,
    /// Rotation applied to every transverse component (rad).
    pub phase: f64,
    pub states: Vec<MagVector>,
    /// Set when the transverse magnetization sums to zero and no phase
    /// could be determined.
    pub degenerate: bool,
}

impl PhaseCorrectedProfile {
    /// Applies a given zero-order phase to `source`.
    pub fn with_phase(source: ExcitationProfile, phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        let states = source
            .states
            .iter()
            .map(|m| MagVector::new(c * m.mx - s * m.my, s * m.mx + c * m.my, m.mz))
            .collect();
        PhaseCorrectedProfile { source, phase, states, degenerate: false }
    }

    pub fn offsets(&self) -> &[f64] {
        &self.source.offsets
    }

    /// Writes the corrected profile in the propagator's column format.
    pub fn write_to<W: Write>(&self, w: W, metadata: &[(&str, String)]) -> io::Result<()> {
        let mut meta: Vec<(&str, String)> = metadata.to_vec();
        meta.push(("zero_order_phase_rad", self.phase.to_string()));
        write_profile_rows(w, &self.source.label, self.source.dt, &self.source.offsets, &self.states, &meta)
    }
}

/// Zero-order correction maximizing the mean of `Mx`: rotates the resultant
/// transverse vector `Σ(Mx, My)` onto `+x`.
pub fn zero_order_correct(profile: &ExcitationProfile) -> Result<PhaseCorrectedProfile> {
    if profile.is_empty() {
        return Err(Error::Precondition("cannot phase-correct an empty profile".into()));
    }
    let (sx, sy) = profile.states.iter().fold((0.0, 0.0), |(x, y), m| (x + m.mx, y + m.my));
    let scale: f64 = profile.states.iter().map(|m| m.transverse()).sum();
    if sx.hypot(sy) <= 1e-12 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
        let mut out = PhaseCorrectedProfile::with_phase(profile.clone(), 0.0);
        out.degenerate = true;
        return Ok(out);
    }
    Ok(PhaseCorrectedProfile::with_phase(profile.clone(), -sy.atan2(sx)))
}

/// Unwraps a phase sequence by nearest-branch continuation outward from the
/// middle element.
pub fn unwrap_from_center(phases: &[f64]) -> Vec<f64> {
    let mut out = phases.to_vec();
    if out.is_empty() {
        return out;
    }
    let nearest = |prev: f64, raw: f64| raw - TAU * ((raw - prev) / TAU).round();
    let mid = out.len() / 2;
    for i in mid + 1..out.len() {
        out[i] = nearest(out[i - 1], out[i]);
    }
    for i in (0..mid).rev() {
        out[i] = nearest(out[i + 1], out[i]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileMetrics {
    pub n_points: usize,
    pub min_mx: f64,
    pub mean_mx: f64,
    /// Largest |transverse phase| in the band, unwrapped from band center.
    pub max_abs_phase_dev_deg: f64,
    /// Largest |Mz| in the band.
    pub max_mz: f64,
    pub min_transverse: f64,
}

/// Summary statistics of the corrected profile restricted to `[lo, hi]` (rad/s).
pub fn profile_metrics(profile: &PhaseCorrectedProfile, band: (f64, f64)) -> Result<ProfileMetrics> {
    let (lo, hi) = band;
    let slack = 1e-9 * lo.abs().max(hi.abs()).max(1.0);
    let inside: Vec<MagVector> = profile
        .offsets()
        .iter()
        .zip(&profile.states)
        .filter(|(w, _)| **w >= lo - slack && **w <= hi + slack)
        .map(|(_, m)| *m)
        .collect();
    if inside.is_empty() {
        return Err(Error::Precondition(format!("no profile points inside band [{lo}, {hi}]")));
    }
    let raw: Vec<f64> = inside.iter().map(|m| m.transverse_phase()).collect();
    let unwrapped = unwrap_from_center(&raw);
    let n = inside.len();
    Ok(ProfileMetrics {
        n_points: n,
        min_mx: inside.iter().map(|m| m.mx).fold(f64::INFINITY, f64::min),
        mean_mx: inside.iter().map(|m| m.mx).sum::<f64>() / n as f64,
        max_abs_phase_dev_deg: unwrapped.iter().map(|p| p.abs()).fold(0.0, f64::max).to_degrees(),
        max_mz: inside.iter().map(|m| m.mz.abs()).fold(0.0, f64::max),
        min_transverse: inside.iter().map(|m| m.transverse()).fold(f64::INFINITY, f64::min),
    })
}

/// One row of the prediction table; `None` marks an out-of-range `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub delta: f64,
    pub values: Option<PredictionValues>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionValues {
    pub excitation: f64,
    pub inversion: f64,
    pub residual: f64,
    pub edge_residual: f64,
    pub quadrature: f64,
}

pub fn predict_row(delta: f64, model: &DispersionModel) -> PredictionRow {
    let values = (|| -> Result<PredictionValues> {
        Ok(PredictionValues {
            excitation: excitation_phase_diff(delta, model)?,
            inversion: inversion_phase_diff(delta, model)?,
            residual: combined_residual(delta, model)?,
            edge_residual: edge_residual(model)?,
            quadrature: quadrature_excitation_phase_diff(delta, model)?,
        })
    })()
    .ok();
    PredictionRow { delta, values }
}

/// Writes `delta_s, delta_omega_hz, excitation_rad, inversion_rad, residual_rad,
/// edge_residual_rad, quadrature_rad, status` rows.
pub fn write_predictions<W: Write>(
    mut w: W,
    model: &DispersionModel,
    rows: &[PredictionRow],
    metadata: &[(&str, String)],
) -> io::Result<()> {
    writeln!(
        w,
        "# A_hz: {}, A1_hz: {}, a_rad_s2: {}, B_hz: {}, C_hz: {}",
        model.amplitude / TAU,
        model.pi_amplitude / TAU,
        model.rate,
        model.band / TAU,
        model.half_sweep / TAU
    )?;
    writeln!(w, "# T0_s: {}, T1_s: {}", model.t0(), model.t1())?;
    for (k, v) in metadata {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(
        w,
        "# delta_s, delta_omega_hz, excitation_rad, inversion_rad, residual_rad, edge_residual_rad, quadrature_rad, status"
    )?;
    for row in rows {
        let domega = model.rate * row.delta / TAU;
        match &row.values {
            Some(v) => writeln!(
                w,
                "{}, {}, {}, {}, {}, {}, {}, ok",
                row.delta, domega, v.excitation, v.inversion, v.residual, v.edge_residual, v.quadrature
            )?,
            None => writeln!(w, "{}, {}, nan, nan, nan, nan, nan, out_of_range", row.delta, domega)?,
        }
    }
    Ok(())
}
