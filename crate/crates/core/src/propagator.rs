//! Bloch-equation propagation over resonance offsets.
//!
//! The equation integrated is
//! `Ẋ = (ω₀ Ω_z + A cos φ Ω_x + A sin φ Ω_y) X`, i.e. `Ẋ = F × X` with
//! `F = (A cos φ, A sin φ, ω₀)`. No relaxation.
//!
//! Inside one sample the amplitude is constant and the phase advances
//! linearly at rate `ν`. Moving into a frame rotating about z at `ν` makes
//! the field constant, so each sample is propagated exactly as one fixed-axis
//! rotation followed by a z-rotation by `ν dt`. [`rk4_oracle`] integrates the
//! same field independently with classical Runge-Kutta.

use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rotations::{rotate_about, MagVector};
use crate::waveform::{ChirpParams, SampledWaveform};

/// Symmetric grid of resonance offsets spanning `[-B, B]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetGrid {
    /// Half-bandwidth `B` (rad/s).
    pub half_width: f64,
    pub n_points: usize,
}

impl OffsetGrid {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(Error::Precondition(format!(
                "an offset grid needs at least 2 points, got {n_points}"
            )));
        }
        if !(half_width.is_finite() && half_width >= 0.0) {
            return Err(Error::Precondition(format!(
                "grid half-width must be finite and non-negative, got {half_width}"
            )));
        }
        Ok(OffsetGrid { half_width, n_points })
    }

    /// Grid over `[-B, B]` with the given step; `2B/step` must be an integer.
    pub fn with_step(half_width: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Precondition(format!("grid step must be positive, got {step}")));
        }
        let intervals = 2.0 * half_width / step;
        let rounded = intervals.round();
        if (intervals - rounded).abs() > 1e-6 * intervals.max(1.0) {
            return Err(Error::Precondition(format!(
                "grid step {step} does not divide the span {}",
                2.0 * half_width
            )));
        }
        OffsetGrid::new(half_width, rounded as usize + 1)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n_points - 1) as f64
    }

    pub fn offset(&self, i: usize) -> f64 {
        // Mirror the upper half so the grid is exactly symmetric.
        let last = self.n_points - 1;
        if 2 * i > last {
            return -self.offset(last - i);
        }
        if 2 * i == last {
            return 0.0;
        }
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn offsets(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.offset(i)).collect()
    }
}

/// Final magnetization per offset for one waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationProfile {
    pub label: String,
    /// Offsets ω₀ (rad/s), ascending.
    pub offsets: Vec<f64>,
    pub states: Vec<MagVector>,
    pub dt: f64,
    /// Wall-clock seconds spent in the sweep; informational only.
    pub wall_time: f64,
}

impl ExcitationProfile {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn max_norm_error(&self) -> f64 {
        self.states.iter().map(|m| (m.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Writes `offset_hz, mx, my, mz, phase_deg, transverse_mag` rows.
    pub fn write_to<W: Write>(&self, w: W, metadata: &[(&str, String)]) -> io::Result<()> {
        write_profile_rows(w, &self.label, self.dt, &self.offsets, &self.states, metadata)
    }
}

pub(crate) fn write_profile_rows<W: Write>(
    mut w: W,
    label: &str,
    dt: f64,
    offsets: &[f64],
    states: &[MagVector],
    metadata: &[(&str, String)],
) -> io::Result<()> {
    writeln!(w, "# label: {label}")?;
    writeln!(w, "# dt_s: {dt}")?;
    for (k, v) in metadata {
        writeln!(w, "# {k}: {v}")?;
    }
    writeln!(w, "# offset_hz, mx, my, mz, phase_deg, transverse_mag")?;
    for (off, m) in offsets.iter().zip(states) {
        writeln!(
            w,
            "{}, {}, {}, {}, {}, {}",
            off / std::f64::consts::TAU,
            m.mx,
            m.my,
            m.mz,
            m.transverse_phase().to_degrees() + 0.0,
            m.transverse()
        )?;
    }
    Ok(())
}

/// One piecewise-constant-field step: rotation about
/// `(A cos φ, A sin φ, ω₀)` by its magnitude times `dt`.
#[inline]
pub fn step(state: MagVector, amplitude: f64, phase: f64, offset: f64, dt: f64) -> MagVector {
    let (s, c) = phase.sin_cos();
    let field = MagVector::new(amplitude * c, amplitude * s, offset);
    let strength = field.norm();
    if strength == 0.0 {
        return state;
    }
    rotate_about(state, field.scale(1.0 / strength), strength * dt)
}

#[inline]
fn rotate_z(v: MagVector, angle: f64) -> MagVector {
    let (s, c) = angle.sin_cos();
    MagVector::new(c * v.mx - s * v.my, s * v.mx + c * v.my, v.mz)
}

/// Advances `state` across sample `i` of `wf`.
#[inline]
fn advance(wf: &SampledWaveform, i: usize, offset: f64, state: MagVector) -> MagVector {
    let nu = wf.frequency[i];
    let m = step(state, wf.amplitude[i], wf.phase[i], offset - nu, wf.dt);
    if nu == 0.0 {
        m
    } else {
        rotate_z(m, nu * wf.dt)
    }
}

/// Final rotating-frame magnetization after the whole waveform.
pub fn propagate(wf: &SampledWaveform, offset: f64, initial: MagVector) -> MagVector {
    (0..wf.len()).fold(initial, |m, i| advance(wf, i, offset, m))
}

/// Like [`propagate`], calling `observe(i, state_before_sample_i)` for every
/// sample and returning the final state.
pub fn propagate_observed<F>(wf: &SampledWaveform, offset: f64, initial: MagVector, mut observe: F) -> MagVector
where
    F: FnMut(usize, MagVector),
{
    (0..wf.len()).fold(initial, |m, i| {
        observe(i, m);
        advance(wf, i, offset, m)
    })
}

/// Classical RK4 on the same field, each sample split into `refinement`
/// substeps with the phase interpolated linearly in time. Verification only.
pub fn rk4_oracle(wf: &SampledWaveform, offset: f64, initial: MagVector, refinement: usize) -> MagVector {
    let refinement = refinement.max(1);
    let h = wf.dt / refinement as f64;
    let mut m = initial;
    for i in 0..wf.len() {
        let amp = wf.amplitude[i];
        let (phi0, nu) = (wf.phase[i], wf.frequency[i]);
        if amp == 0.0 && offset == 0.0 {
            continue;
        }
        let field = |tau: f64| {
            let (s, c) = (phi0 + nu * tau).sin_cos();
            MagVector::new(amp * c, amp * s, offset)
        };
        for k in 0..refinement {
            let tau = k as f64 * h;
            let f0 = field(tau);
            let fm = field(tau + 0.5 * h);
            let f1 = field(tau + h);
            let k1 = f0.cross(m);
            let k2 = fm.cross(m + k1.scale(0.5 * h));
            let k3 = fm.cross(m + k2.scale(0.5 * h));
            let k4 = f1.cross(m + k3.scale(h));
            m = m + (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
        }
    }
    m
}

/// `√((ω₀ − ω_c(t))² + A²)` for a chirp at time `t` into the segment.
pub fn effective_field(offset: f64, t: f64, params: &ChirpParams) -> f64 {
    (offset - params.frequency_at(t)).hypot(params.amplitude)
}

/// Smallest `ω̃² / a` over stages I and III: `A²(1 + cot²θ₀) / a`.
/// Values ≥ 1 indicate adiabatic following.
pub fn adiabaticity_margin(params: &ChirpParams, theta0: f64) -> f64 {
    let cot = 1.0 / theta0.tan();
    params.amplitude * params.amplitude * (1.0 + cot * cot) / params.rate
}

/// Worker count for [`sweep_profile_with_threads`]; `None` uses all cores.
pub type Threads = Option<usize>;

/// Propagates every grid offset from `+z`. Output is ordered by offset and
/// independent of scheduling.
pub fn sweep_profile(wf: &SampledWaveform, grid: &OffsetGrid) -> ExcitationProfile {
    sweep_offsets(wf, &grid.offsets(), None).expect("default thread pool")
}

pub fn sweep_profile_with_threads(
    wf: &SampledWaveform,
    grid: &OffsetGrid,
    threads: Threads,
) -> Result<ExcitationProfile> {
    sweep_offsets(wf, &grid.offsets(), threads)
}

/// Sweep over an arbitrary offset list.
pub fn sweep_offsets(wf: &SampledWaveform, offsets: &[f64], threads: Threads) -> Result<ExcitationProfile> {
    let start = Instant::now();
    let run = || -> Vec<MagVector> {
        offsets.par_iter().map(|&w| propagate(wf, w, MagVector::Z)).collect()
    };
    let states = match threads {
        None => run(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Resource(format!("cannot start {n} worker threads: {e}")))?
            .install(run),
    };
    Ok(ExcitationProfile {
        label: wf.label.clone(),
        offsets: offsets.to_vec(),
        states,
        dt: wf.dt,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
