//! Simulation-level properties: refocusing by the free delay, adiabatic
//! following during the excitation chirp, and inversion by any adiabatic
//! π chirp.

use std::f64::consts::TAU;

use chirp_excitation::config::{preset, Preset};
use chirp_excitation::propagator::{propagate, propagate_observed, sweep_offsets, OffsetGrid};
use chirp_excitation::rotations::MagVector;
use chirp_excitation::waveform::{
    check_inversion_adiabaticity, sample, ChirpParams, FlipRole, SampledWaveform, SamplingPolicy, Segment, SequenceSpec,
};
use proptest::prelude::*;

const KHZ: f64 = TAU * 1e3;

/// The first `n` samples of `wf`.
fn prefix(wf: &SampledWaveform, n: usize) -> SampledWaveform {
    SampledWaveform {
        label: wf.label.clone(),
        dt: wf.dt,
        amplitude: wf.amplitude[..n].to_vec(),
        phase: wf.phase[..n].to_vec(),
        frequency: wf.frequency[..n].to_vec(),
        boundaries: wf.boundaries.iter().copied().filter(|&b| b <= n).collect(),
    }
}

/// dφ/dω₀ by central difference over ±1 Hz.
fn phase_slope(wf: &SampledWaveform, offset: f64) -> f64 {
    let h = TAU;
    let lo = propagate(wf, offset - h, MagVector::Z).transverse_phase();
    let hi = propagate(wf, offset + h, MagVector::Z).transverse_phase();
    let mut d = hi - lo;
    d -= TAU * (d / TAU).round();
    d / (2.0 * h)
}

#[test]
fn free_delay_cancels_linear_phase_of_two_pulse() {
    let cfg = preset(Preset::Fig4a);
    let spec = cfg.build_sequence().unwrap();
    let wf = sample(&spec, &cfg.sampling_policy()).unwrap();
    let t = spec.segments[0].duration();
    let before_delay = prefix(&wf, wf.boundaries[2]);
    for khz in [-30.0, -10.0, 0.0, 20.0, 40.0] {
        let pre = phase_slope(&before_delay, khz * KHZ);
        let post = phase_slope(&wf, khz * KHZ);
        assert!((pre + t / 2.0).abs() <= 0.05 * t / 2.0, "pre-delay slope {pre} at {khz} kHz, expected {}", -t / 2.0);
        assert!(post.abs() <= 0.05 * pre.abs(), "post-delay slope {post} vs pre {pre} at {khz} kHz");
    }
}

#[test]
fn magnetization_follows_effective_field_through_stage_one() {
    let cfg = preset(Preset::Fig4b);
    let spec = cfg.build_sequence().unwrap();
    let p = *spec.segments[0].chirp().unwrap();
    let single = SequenceSpec::new("excite", vec![Segment::Chirp(p)]).unwrap();
    let wf = sample(&single, &cfg.sampling_policy()).unwrap();
    // Stage I ends when the sweep reaches −A cot θ₀ with cot²θ₀ = 2.
    let stop = -p.amplitude * 2f64.sqrt();
    let mut worst: f64 = 0.0;
    propagate_observed(&wf, 0.0, MagVector::Z, |i, m| {
        let t = i as f64 * wf.dt;
        if p.frequency_at(t) > stop {
            return;
        }
        let (s, c) = wf.phase[i].sin_cos();
        let field = MagVector::new(p.amplitude * c, p.amplitude * s, -p.frequency_at(t));
        worst = worst.max(m.angle_to(field));
    });
    assert!(worst <= 0.2, "largest angle to the effective field in stage I: {worst:.4} rad");
}

#[test]
fn tapered_preset_excites_its_band() {
    let cfg = preset(Preset::Fig5);
    let spec = cfg.build_sequence().unwrap();
    let wf = sample(&spec, &cfg.sampling_policy()).unwrap();
    let profile = sweep_offsets(&wf, &cfg.offset_grid().unwrap().offsets(), None).unwrap();
    let m = chirp_excitation::checks::band_metrics(&profile, &cfg).unwrap();
    assert_eq!(m.n_points, 51);
    assert!(m.mean_mx >= 0.95, "mean Mx {}", m.mean_mx);
    assert!(profile.max_norm_error() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // The sweep starts well outside the band so the field begins close to +z
    // for every offset in it.
    #[test]
    fn any_adiabatic_pi_chirp_inverts_the_band(
        amp_khz in 3.0f64..8.0,
        ratio in 4.0f64..30.0,
        band_khz in 5.0f64..25.0,
    ) {
        let amp = amp_khz * KHZ;
        let rate = amp * amp / ratio;
        prop_assume!(check_inversion_adiabaticity(amp, rate).is_ok());
        let band = band_khz * KHZ;
        let half_sweep = band + 10.0 * amp;
        let p = ChirpParams::new(amp, half_sweep, rate, 0.0, FlipRole::InvertPi).unwrap();
        let spec = SequenceSpec::new("pi", vec![Segment::Chirp(p)]).unwrap();
        let wf = sample(&spec, &SamplingPolicy::for_offsets(band)).unwrap();
        let grid = OffsetGrid::new(band, 21).unwrap();
        let profile = sweep_offsets(&wf, &grid.offsets(), None).unwrap();
        for (w, m) in profile.offsets.iter().zip(&profile.states) {
            prop_assert!(m.mz <= -0.98, "Mz = {} at {} Hz", m.mz, w / TAU);
        }
    }
}
