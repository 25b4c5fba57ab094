//! Acceptance checks shared by the test suite and `chirp-excite selftest`.
//!
//! Heavy simulations are computed once per process and reused. Every
//! propagated state seen here feeds a process-wide norm tracker that the
//! norm-conservation check reports on.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use crate::analysis::{
    edge_residual, profile_metrics, quadrature_excitation_phase_diff, zero_order_correct,
    DispersionModel, ProfileMetrics,
};
use crate::config::{preset, Preset, RunConfig};
use crate::error::Result;
use crate::propagator::{propagate, propagate_observed, rk4_oracle, sweep_offsets, ExcitationProfile, OffsetGrid};
use crate::rotations::{solve_alpha, theta0_from_cot_squared, MagVector};
use crate::waveform::{sample, sweep_rate_for, SampledWaveform, Segment, SequenceSpec};

pub const FLIP_ALPHA_TOL: f64 = 1e-3;
pub const RK4_AGREEMENT_TOL: f64 = 1e-6;
pub const RK4_REFINEMENT: usize = 8;
pub const RK4_ORDER_GAIN: f64 = 4.0;
pub const INVERSION_MZ_MAX: f64 = -0.98;
pub const EXCITATION_MIN_MX: f64 = 0.95;
pub const EXCITATION_MAX_MZ: f64 = 0.15;
pub const DISPERSION_SLACK_DEG: f64 = 5.0;
pub const QUADRATURE_REL_TOL: f64 = 0.05;
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn run(id: u8, name: &'static str, body: impl FnOnce() -> std::result::Result<(bool, String), String>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = body().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

static MAX_NORM_ERROR: AtomicU64 = AtomicU64::new(0);
static STATES_SEEN: AtomicU64 = AtomicU64::new(0);

fn record_norm(m: MagVector) {
    let err = (m.norm() - 1.0).abs();
    let err = if err.is_nan() { f64::INFINITY } else { err };
    // Non-negative floats order the same as their bit patterns.
    MAX_NORM_ERROR.fetch_max(err.to_bits(), Ordering::Relaxed);
    STATES_SEEN.fetch_add(1, Ordering::Relaxed);
}

fn record_profile(p: &ExcitationProfile) {
    p.states.iter().copied().for_each(record_norm);
}

/// Largest `|‖M‖ − 1|` over all states recorded so far, and their count.
pub fn norm_record() -> (f64, u64) {
    (f64::from_bits(MAX_NORM_ERROR.load(Ordering::Relaxed)), STATES_SEEN.load(Ordering::Relaxed))
}

type Cached = std::result::Result<(SampledWaveform, ExcitationProfile), String>;

fn simulate(spec: &SequenceSpec, cfg: &RunConfig, grid: &OffsetGrid) -> Cached {
    let wf = sample(spec, &cfg.sampling_policy()).map_err(|e| e.to_string())?;
    let profile = sweep_offsets(&wf, &grid.offsets(), None).map_err(|e| e.to_string())?;
    record_profile(&profile);
    Ok((wf, profile))
}

fn cached(cell: &'static OnceLock<Cached>, make: impl FnOnce() -> Cached) -> std::result::Result<&'static (SampledWaveform, ExcitationProfile), String> {
    cell.get_or_init(make).as_ref().map_err(Clone::clone)
}

fn preset_run(p: Preset) -> Cached {
    let cfg = preset(p);
    let spec = cfg.build_sequence().map_err(|e| e.to_string())?;
    simulate(&spec, &cfg, &cfg.offset_grid().map_err(|e| e.to_string())?)
}

/// Preset sequence swept over its own grid.
pub fn preset_profile(p: Preset) -> std::result::Result<&'static (SampledWaveform, ExcitationProfile), String> {
    static CELLS: [OnceLock<Cached>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let idx = Preset::ALL.iter().position(|q| *q == p).expect("listed preset");
    cached(&CELLS[idx], || preset_run(p))
}

/// Two-pulse sequence with the fig4b parameters, over the fig4b grid.
pub fn matched_two_pulse_profile() -> std::result::Result<&'static (SampledWaveform, ExcitationProfile), String> {
    static CELL: OnceLock<Cached> = OnceLock::new();
    cached(&CELL, || {
        let cfg = preset(Preset::Fig4b);
        let spec = cfg.two_pulse_sequence().map_err(|e| e.to_string())?;
        simulate(&spec, &cfg, &cfg.offset_grid().map_err(|e| e.to_string())?)
    })
}

/// Each π chirp of the fig4b sequence on its own, swept over the fig4b grid.
pub fn single_inversion_profiles() -> std::result::Result<&'static [(SampledWaveform, ExcitationProfile)], String> {
    static CELL: OnceLock<std::result::Result<Vec<(SampledWaveform, ExcitationProfile)>, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = preset(Preset::Fig4b);
        let grid = cfg.offset_grid().map_err(|e| e.to_string())?;
        let seq = cfg.build_sequence().map_err(|e| e.to_string())?;
        seq.chirps()
            .filter(|p| p.role == crate::waveform::FlipRole::InvertPi)
            .map(|p| {
                let spec = SequenceSpec::new("single_pi", vec![Segment::Chirp(*p)]).map_err(|e| e.to_string())?;
                simulate(&spec, &cfg, &grid)
            })
            .collect()
    })
    .as_ref()
    .map(Vec::as_slice)
    .map_err(Clone::clone)
}

/// Zero-order-corrected metrics over `[−B, B]` of the run's configuration.
pub fn band_metrics(profile: &ExcitationProfile, cfg: &RunConfig) -> Result<ProfileMetrics> {
    let corrected = zero_order_correct(profile)?;
    profile_metrics(&corrected, (-cfg.band(), cfg.band()))
}

fn e<E: fmt::Display>(err: E) -> String {
    err.to_string()
}

#[allow(clippy::approx_constant)]
pub fn flip_condition() -> CheckOutcome {
    run(1, "flip-condition", || {
        let mut ok = true;
        let mut parts = Vec::new();
        for (cot2, alpha_ref, alpha_tol, ratio_ref) in [(2.0, 1.0472, FLIP_ALPHA_TOL, 2.70), (3.0, 1.23, 0.005, 2.81)] {
            let theta0 = theta0_from_cot_squared(cot2);
            let alpha = solve_alpha(theta0).map_err(e)?;
            let ratio = sweep_rate_for(theta0, 1.0).map_err(e)?;
            ok &= (alpha - alpha_ref).abs() <= alpha_tol && (ratio - ratio_ref).abs() <= 0.01;
            parts.push(format!("cot2={cot2}: alpha={alpha:.5} a/A^2={ratio:.4}"));
        }
        Ok((ok, parts.join("; ")))
    })
}

pub fn preset_timing() -> CheckOutcome {
    run(2, "preset-timing", || {
        let t_a = preset(Preset::Fig4a).build_sequence().map_err(e)?.segments[0].duration();
        let total_b = preset(Preset::Fig4b).build_sequence().map_err(e)?.total_duration();
        let total_c = preset(Preset::Fig5).build_sequence().map_err(e)?.total_duration();
        let ok = (t_a * 1e3 - 47.15).abs() <= 0.1
            && (total_b * 1e3 - 53.05).abs() <= 0.05
            && (total_c * 1e3 - 7.07).abs() <= 0.02;
        Ok((
            ok,
            format!(
                "fig4a T={:.3} ms (2T={:.3} ms), fig4b total={:.3} ms, fig5 total={:.4} ms",
                t_a * 1e3,
                2e3 * t_a,
                total_b * 1e3,
                total_c * 1e3
            ),
        ))
    })
}

pub fn edge_residual_check() -> CheckOutcome {
    run(3, "edge-residual", || {
        let khz = TAU * 1e3;
        let m = DispersionModel::new(khz, 10.0 * khz, 2.7 * khz * khz, 50.0 * khz, 150.0 * khz).map_err(e)?;
        let deg = edge_residual(&m).map_err(e)?.to_degrees();
        let closed = (2f64.ln() / 5.4).to_degrees();
        Ok(((deg - 7.0).abs() <= 1.0 && (deg - closed).abs() < 1e-9, format!("{deg:.4} deg (ln2/5.4 = {closed:.4} deg)")))
    })
}

fn rk4_disagreement(wf: &SampledWaveform, offsets: &[f64]) -> f64 {
    use rayon::prelude::*;
    offsets
        .par_iter()
        .map(|&w| {
            let exact = propagate(wf, w, MagVector::Z);
            record_norm(exact);
            exact.max_abs_diff(rk4_oracle(wf, w, MagVector::Z, RK4_REFINEMENT))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

pub fn oracle_equivalence() -> CheckOutcome {
    run(4, "oracle-equivalence", || {
        let cfg = preset(Preset::Fig4b);
        let spec = cfg.build_sequence().map_err(e)?;
        let offsets: Vec<f64> = OffsetGrid::new(cfg.band(), 11).map_err(e)?.offsets();
        let coarse = sample(&spec, &cfg.sampling_policy()).map_err(e)?;
        let mut fine_policy = cfg.sampling_policy();
        fine_policy.dt = Some(coarse.dt / 2.0);
        let fine = sample(&spec, &fine_policy).map_err(e)?;
        let d_coarse = rk4_disagreement(&coarse, &offsets);
        let d_fine = rk4_disagreement(&fine, &offsets);
        let gain = d_coarse / d_fine;
        Ok((
            d_coarse <= RK4_AGREEMENT_TOL && gain >= RK4_ORDER_GAIN,
            format!(
                "max diff {d_coarse:.3e} at dt={:.4e} s, {d_fine:.3e} at dt={:.4e} s, gain {gain:.1}x",
                coarse.dt, fine.dt
            ),
        ))
    })
}

pub fn inversion_property() -> CheckOutcome {
    run(5, "inversion-property", || {
        let runs = single_inversion_profiles()?;
        let worst = runs
            .iter()
            .flat_map(|(_, p)| p.states.iter().map(|m| m.mz))
            .fold(f64::NEG_INFINITY, f64::max);
        let n: Vec<usize> = runs.iter().map(|(_, p)| p.len()).collect();
        Ok((
            runs.len() == 2 && worst <= INVERSION_MZ_MAX,
            format!("{} pi chirps, offsets {n:?}, max Mz = {worst:.5}", runs.len()),
        ))
    })
}

pub fn excitation_quality() -> CheckOutcome {
    run(6, "excitation-quality", || {
        let cfg = preset(Preset::Fig4b);
        let (_, profile) = preset_profile(Preset::Fig4b)?;
        let m = band_metrics(profile, &cfg).map_err(e)?;
        Ok((
            m.min_mx >= EXCITATION_MIN_MX && m.max_mz <= EXCITATION_MAX_MZ,
            format!(
                "{} offsets: min Mx = {:.4} (>= {EXCITATION_MIN_MX}), max |Mz| = {:.4} (<= {EXCITATION_MAX_MZ})",
                m.n_points, m.min_mx, m.max_mz
            ),
        ))
    })
}

pub fn dispersion_ordering() -> CheckOutcome {
    run(7, "dispersion-ordering", || {
        let cfg = preset(Preset::Fig4b);
        let three = band_metrics(&preset_profile(Preset::Fig4b)?.1, &cfg).map_err(e)?;
        let two = band_metrics(&matched_two_pulse_profile()?.1, &cfg).map_err(e)?;
        let bound = edge_residual(&cfg.dispersion_model().map_err(e)?).map_err(e)?.to_degrees() + DISPERSION_SLACK_DEG;
        Ok((
            three.max_abs_phase_dev_deg < two.max_abs_phase_dev_deg && three.max_abs_phase_dev_deg <= bound,
            format!(
                "three-chirp {:.3} deg < two-pulse {:.3} deg; bound {:.3} deg",
                three.max_abs_phase_dev_deg, two.max_abs_phase_dev_deg, bound
            ),
        ))
    })
}

/// Closed-form excitation phase difference versus quadrature at fixed
/// fractions of `T₁`, using `closed_form` as the analytic side.
pub fn analytic_vs_quadrature_with(closed_form: fn(f64, &DispersionModel) -> Result<f64>) -> CheckOutcome {
    run(8, "analytic-vs-quadrature", || {
        let model = preset(Preset::Fig4b).dispersion_model().map_err(e)?;
        let mut worst: f64 = 0.0;
        for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let delta = frac * model.t1();
            let analytic = closed_form(delta, &model).map_err(e)?;
            let numeric = quadrature_excitation_phase_diff(delta, &model).map_err(e)?;
            worst = worst.max(((analytic - numeric) / numeric).abs());
        }
        Ok((worst <= QUADRATURE_REL_TOL, format!("worst relative error {worst:.3e} (<= {QUADRATURE_REL_TOL})")))
    })
}

pub fn analytic_vs_quadrature() -> CheckOutcome {
    analytic_vs_quadrature_with(crate::analysis::excitation_phase_diff)
}

pub fn determinism() -> CheckOutcome {
    run(9, "determinism", || {
        let (wf, _) = preset_profile(Preset::Fig4b)?;
        let grid = preset(Preset::Fig4b).offset_grid().map_err(e)?.offsets();
        let one = sweep_offsets(wf, &grid, Some(1)).map_err(e)?;
        let eight = sweep_offsets(wf, &grid, Some(8)).map_err(e)?;
        record_profile(&one);
        record_profile(&eight);
        let bits = |p: &ExcitationProfile| -> Vec<u64> {
            p.states.iter().flat_map(|m| m.to_array()).map(f64::to_bits).collect()
        };
        let same = bits(&one) == bits(&eight) && one.offsets == eight.offsets;
        Ok((same, format!("{} offsets, 1 vs 8 workers bitwise {}", one.len(), if same { "identical" } else { "different" })))
    })
}

/// Runs every cached simulation, tracks full trajectories at a few offsets,
/// and reports the largest norm error seen in this process.
pub fn norm_conservation() -> CheckOutcome {
    run(10, "norm-conservation", || {
        for p in Preset::ALL {
            preset_profile(p)?;
        }
        matched_two_pulse_profile()?;
        single_inversion_profiles()?;
        let (wf, _) = preset_profile(Preset::Fig4b)?;
        for w in OffsetGrid::new(preset(Preset::Fig4b).band(), 5).map_err(e)?.offsets() {
            let last = propagate_observed(wf, w, MagVector::Z, |_, m| record_norm(m));
            record_norm(last);
        }
        let (worst, count) = norm_record();
        Ok((worst <= NORM_TOL, format!("{count} states, max |norm - 1| = {worst:.3e}")))
    })
}

/// All checks in order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        flip_condition(),
        preset_timing(),
        edge_residual_check(),
        oracle_equivalence(),
        inversion_property(),
        excitation_quality(),
        dispersion_ordering(),
        analytic_vs_quadrature(),
        determinism(),
        norm_conservation(),
    ]
}
