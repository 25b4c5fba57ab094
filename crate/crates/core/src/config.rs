//! Run configuration and the three published parameter sets.
//!
//! Frequencies in a [`RunConfig`] are ordinary frequencies in Hz; they are
//! converted to angular units when sequences are built.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::DispersionModel;
use crate::error::{Error, Result};
use crate::propagator::OffsetGrid;
use crate::waveform::{
    build_chorus, build_two_pulse, check_inversion_adiabaticity, ChirpParams, FlipRole,
    SamplingPolicy, Segment, SequenceSpec, MAX_SAMPLES, PRESET_RATE_FACTOR,
};

/// Edge taper used by the tapered preset. The sin² ramp must finish before
/// the sweep reaches the band edge, i.e. below `(C − B)/2C ≈ 0.083`.
pub const FIG5_TAPER_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    TwoPulse,
    Chorus,
    ChorusTapered,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub half_width_hz: f64,
    pub step_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOverrides {
    pub dt_s: Option<f64>,
    pub max_phase_step_rad: Option<f64>,
    pub max_rotation_step_rad: Option<f64>,
}

/// Segment of a user-defined sequence, frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomSegment {
    Chirp {
        amplitude_hz: f64,
        sweep_hz: f64,
        /// Sweep rate in rad/s²; defaults to the run's sweep rate.
        #[serde(default)]
        rate: Option<f64>,
        #[serde(default)]
        taper_fraction: f64,
        role: FlipRole,
    },
    Delay {
        duration_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    pub sequence: SequenceKind,
    /// π/2 chirp amplitude `A/2π`.
    pub amplitude_hz: f64,
    /// Final π chirp amplitude `A₁/2π`.
    pub pi_amplitude_hz: f64,
    /// Band half-width `B/2π`.
    pub band_hz: f64,
    /// Sweep half-width `C/2π`.
    pub sweep_hz: f64,
    /// Sweep rate as a multiple of `A²`.
    pub rate_factor: f64,
    /// Explicit sweep rate (rad/s²); overrides `rate_factor`.
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub taper_fraction: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub sampling: SamplingOverrides,
    #[serde(default)]
    pub custom: Option<Vec<CustomSegment>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig4a,
    Fig4b,
    Fig5,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Fig4a, Preset::Fig4b, Preset::Fig5];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig4a => "fig4a",
            Preset::Fig4b => "fig4b",
            Preset::Fig5 => "fig5",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig4a" => Ok(Preset::Fig4a),
            "fig4b" => Ok(Preset::Fig4b),
            "fig5" => Ok(Preset::Fig5),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected fig4a, fig4b or fig5)"
            ))),
        }
    }
}

/// The published parameter set for `name`.
pub fn preset(name: Preset) -> RunConfig {
    let base = RunConfig {
        label: name.name().to_string(),
        sequence: SequenceKind::TwoPulse,
        amplitude_hz: 1e3,
        pi_amplitude_hz: 10e3,
        band_hz: 50e3,
        sweep_hz: 400e3,
        rate_factor: PRESET_RATE_FACTOR,
        rate: None,
        taper_fraction: 0.0,
        grid: GridConfig { half_width_hz: 50e3, step_hz: 2e3 },
        sampling: SamplingOverrides::default(),
        custom: None,
    };
    match name {
        Preset::Fig4a => base,
        Preset::Fig4b => RunConfig { sequence: SequenceKind::Chorus, sweep_hz: 150e3, ..base },
        Preset::Fig5 => RunConfig {
            sequence: SequenceKind::ChorusTapered,
            amplitude_hz: 3e3,
            pi_amplitude_hz: 15e3,
            band_hz: 150e3,
            sweep_hz: 180e3,
            taper_fraction: FIG5_TAPER_FRACTION,
            grid: GridConfig { half_width_hz: 150e3, step_hz: 6e3 },
            ..base
        },
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Canonical single-line JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("RunConfig serializes")
    }

    /// Short SHA-256 fingerprint of [`RunConfig::to_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("amplitude_hz", self.amplitude_hz),
            ("pi_amplitude_hz", self.pi_amplitude_hz),
            ("band_hz", self.band_hz),
            ("sweep_hz", self.sweep_hz),
            ("rate_factor", self.rate_factor),
            ("grid.half_width_hz", self.grid.half_width_hz),
            ("grid.step_hz", self.grid.step_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(a) = self.rate {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Config(format!("rate must be positive, got {a}")));
            }
        }
        if !(self.band_hz < self.sweep_hz) {
            return Err(Error::Config(format!(
                "band half-width B = {} Hz must be below sweep half-width C = {} Hz",
                self.band_hz, self.sweep_hz
            )));
        }
        if self.grid.half_width_hz > self.sweep_hz {
            return Err(Error::Config(format!(
                "grid extent {} Hz exceeds the sweep half-width {} Hz",
                self.grid.half_width_hz, self.sweep_hz
            )));
        }
        if !(0.0..0.5).contains(&self.taper_fraction) {
            return Err(Error::Config(format!(
                "taper_fraction must lie in [0, 0.5), got {}",
                self.taper_fraction
            )));
        }
        if self.sequence == SequenceKind::Custom && self.custom.as_ref().is_none_or(Vec::is_empty) {
            return Err(Error::Config("custom sequence selected but no segments given".into()));
        }
        self.offset_grid()?;
        Ok(())
    }

    pub fn amplitude(&self) -> f64 {
        TAU * self.amplitude_hz
    }

    pub fn pi_amplitude(&self) -> f64 {
        TAU * self.pi_amplitude_hz
    }

    pub fn band(&self) -> f64 {
        TAU * self.band_hz
    }

    pub fn half_sweep(&self) -> f64 {
        TAU * self.sweep_hz
    }

    /// Base sweep rate `a` (rad/s²).
    pub fn sweep_rate(&self) -> f64 {
        self.rate.unwrap_or_else(|| self.rate_factor * self.amplitude().powi(2))
    }

    pub fn build_sequence(&self) -> Result<SequenceSpec> {
        let (amp, amp1, band, c, a) =
            (self.amplitude(), self.pi_amplitude(), self.band(), self.half_sweep(), self.sweep_rate());
        let mut spec = match self.sequence {
            SequenceKind::TwoPulse => crate::waveform::build_two_pulse_tapered(
                amp,
                amp1,
                band,
                c,
                a,
                self.taper_fraction,
            )?,
            SequenceKind::Chorus | SequenceKind::ChorusTapered => {
                build_chorus(amp, amp1, band, c, a, self.taper_fraction)?
            }
            SequenceKind::Custom => {
                let segments = self
                    .custom
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|s| self.custom_segment(s))
                    .collect::<Result<Vec<_>>>()?;
                SequenceSpec::new("custom", segments)?
            }
        };
        spec.label = self.label.clone();
        Ok(spec)
    }

    fn custom_segment(&self, seg: &CustomSegment) -> Result<Segment> {
        Ok(match seg {
            CustomSegment::Chirp { amplitude_hz, sweep_hz, rate, taper_fraction, role } => {
                let p = ChirpParams::new(
                    TAU * amplitude_hz,
                    TAU * sweep_hz,
                    rate.unwrap_or_else(|| self.sweep_rate()),
                    *taper_fraction,
                    *role,
                )?;
                if p.role == FlipRole::InvertPi {
                    check_inversion_adiabaticity(p.amplitude, p.rate)?;
                }
                Segment::Chirp(p)
            }
            CustomSegment::Delay { duration_s } => Segment::Delay { duration: *duration_s },
        })
    }

    /// The matched two-pulse sequence (same `A`, `A₁`, `B`, `C`, `a`).
    pub fn two_pulse_sequence(&self) -> Result<SequenceSpec> {
        build_two_pulse(self.amplitude(), self.pi_amplitude(), self.band(), self.half_sweep(), self.sweep_rate())
    }

    pub fn offset_grid(&self) -> Result<OffsetGrid> {
        OffsetGrid::with_step(TAU * self.grid.half_width_hz, TAU * self.grid.step_hz)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sampling_policy(&self) -> SamplingPolicy {
        let mut p = SamplingPolicy::for_offsets(TAU * self.grid.half_width_hz);
        p.max_samples = MAX_SAMPLES;
        p.dt = self.sampling.dt_s;
        if let Some(q) = self.sampling.max_phase_step_rad {
            p.max_phase_step = q;
        }
        if let Some(q) = self.sampling.max_rotation_step_rad {
            p.max_rotation_step = q;
        }
        p
    }

    pub fn dispersion_model(&self) -> Result<DispersionModel> {
        DispersionModel::new(self.amplitude(), self.pi_amplitude(), self.sweep_rate(), self.band(), self.half_sweep())
    }
}
