//! Kaiser tapers and the per-beam adaptive window design.
//!
//! For each beam the design measures how far its half-power edges sit from
//! those of its neighbours, turns that gap into a required mainlobe width,
//! and converts the width into a Kaiser `beta` through the empirical FIR
//! design relations. Beams whose neighbours already overlap keep a
//! rectangular taper.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{steering_vector_with, ArrayGeometry, BeamSet, PhaseReference};
use crate::error::{Error, Result};

/// Zeroth-order modified Bessel function of the first kind, power series.
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Symmetric `length`-point Kaiser window, peak-normalised to 1.
pub fn kaiser_window(length: usize, beta: f64) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::Window("window length must be at least 1".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Window(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    if length == 1 {
        return Ok(vec![1.0]);
    }
    let norm = bessel_i0(beta);
    let span = (length - 1) as f64;
    Ok((0..length)
        .map(|n| {
            let r = (2.0 * n as f64 - span) / span;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect())
}

/// Kaiser `beta` for a required sidelobe attenuation in dB.
pub fn beta_from_attenuation(a_sl: f64) -> f64 {
    if a_sl < 21.0 {
        0.0
    } else if a_sl <= 50.0 {
        let a = a_sl - 21.0;
        0.5842 * a.powf(0.4) + 0.07886 * a
    } else {
        0.1102 * (a_sl - 8.7)
    }
}

/// Lower edge of the middle branch of [`beta_for_product`], where its
/// argument `2.285 x - 13.05` reaches zero (about 5.7112).
pub const BETA_KNEE_LOW: f64 = 13.05 / 2.285;
/// Upper edge of the middle branch of [`beta_for_product`].
pub const BETA_KNEE_HIGH: f64 = 18.4026;

/// Kaiser `beta` as a function of `x = N * delta_omega`, obtained by
/// eliminating the attenuation between the length and `beta` relations.
pub fn beta_for_product(x: f64) -> f64 {
    if x < BETA_KNEE_LOW {
        0.0
    } else if x <= BETA_KNEE_HIGH {
        let a = 2.285 * x - 13.05;
        0.5842 * a.powf(0.4) + 0.07886 * a
    } else {
        0.1102 * (2.285 * x - 0.75)
    }
}

pub fn beta_from_length_and_width(length: usize, delta_omega: f64) -> Result<f64> {
    if length == 0 {
        return Err(Error::Window("window length must be at least 1".into()));
    }
    if !(delta_omega > 0.0) {
        return Err(Error::Window(format!(
            "mainlobe width must be positive, got {delta_omega}"
        )));
    }
    Ok(beta_for_product(length as f64 * delta_omega))
}

/// Mainlobe width (radians of angle) that beam `index` must reach so that
/// its half-power edges meet those of its neighbours, times `margin`.
///
/// The edge beams have a single neighbour; that gap is used on both sides.
/// Overlapping neighbours contribute nothing, so the result never drops
/// below `margin * 2 * hpbw`.
pub fn required_mainlobe_width(index: usize, beam_set: &BeamSet, margin: f64) -> Result<f64> {
    if index >= beam_set.len() {
        return Err(Error::Parameter(format!(
            "beam index {index} out of range for {} beams",
            beam_set.len()
        )));
    }
    if !(margin >= 1.0) {
        return Err(Error::Parameter(format!(
            "margin must be >= 1, got {margin}"
        )));
    }
    let gap = neighbour_gap(index, beam_set).max(0.0);
    Ok(margin * (2.0 * beam_set.hpbw()[index] + 2.0 * (gap / 2.0)))
}

/// Largest half-power gap to either neighbour, `-inf` for a lone beam.
fn neighbour_gap(index: usize, beam_set: &BeamSet) -> f64 {
    let seps = beam_set.separations();
    let before = index.checked_sub(1).and_then(|i| seps.get(i)).copied();
    let after = seps.get(index).copied();
    match (before, after) {
        (Some(a), Some(b)) => a.max(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => f64::NEG_INFINITY,
    }
}

/// Domain in which the required width is handed to the Kaiser relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthDomain {
    /// Angle radians are used directly as the FIR transition width.
    Angle,
    /// Angle width converted to inter-element phase,
    /// `delta_psi = 2 pi (d/lambda) cos(theta) delta_theta`.
    #[default]
    SpatialFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "fraction")]
pub enum LengthPolicy {
    /// All `L` elements active.
    #[default]
    Full,
    /// `round(fraction * L)` active elements, `0.5 < fraction <= 1`.
    Fraction(f64),
}

impl LengthPolicy {
    pub fn active_elements(&self, num_elements: usize) -> Result<usize> {
        match *self {
            LengthPolicy::Full => Ok(num_elements),
            LengthPolicy::Fraction(f) => {
                if !(f > 0.5 && f <= 1.0) {
                    return Err(Error::Window(format!(
                        "length fraction {f} outside (0.5, 1]"
                    )));
                }
                let n = (f * num_elements as f64).round() as usize;
                let n = n.min(num_elements);
                if 2 * n <= num_elements {
                    return Err(Error::Window(format!(
                        "{n} active elements is not more than half of {num_elements}"
                    )));
                }
                Ok(n)
            }
        }
    }
}

/// Position of a shortened window inside the `L`-element aperture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowPlacement {
    #[default]
    Centered,
    Leading,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub beta: f64,
    /// Required mainlobe width in radians of angle (before domain conversion).
    pub target_mainlobe_width: f64,
    pub placement: WindowPlacement,
}

impl WindowSpec {
    pub fn rectangular(length: usize) -> Self {
        Self {
            length,
            beta: 0.0,
            target_mainlobe_width: 0.0,
            placement: WindowPlacement::Centered,
        }
    }

    pub fn is_rectangular(&self) -> bool {
        self.beta == 0.0
    }

    /// Full-aperture taper of `num_elements` samples; elements outside the
    /// active window are zero.
    pub fn taper(&self, num_elements: usize) -> Result<Vec<f64>> {
        if self.length > num_elements {
            return Err(Error::Window(format!(
                "window length {} exceeds {} elements",
                self.length, num_elements
            )));
        }
        let w = kaiser_window(self.length, self.beta)?;
        let start = match self.placement {
            WindowPlacement::Centered => (num_elements - self.length) / 2,
            WindowPlacement::Leading => 0,
        };
        let mut taper = vec![0.0; num_elements];
        taper[start..start + self.length].copy_from_slice(&w);
        Ok(taper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowDesign {
    pub margin: f64,
    pub length_policy: LengthPolicy,
    pub width_domain: WidthDomain,
    pub placement: WindowPlacement,
}

impl Default for WindowDesign {
    fn default() -> Self {
        Self {
            margin: 1.1,
            length_policy: LengthPolicy::Full,
            width_domain: WidthDomain::SpatialFrequency,
            placement: WindowPlacement::Centered,
        }
    }
}

/// One window per beam of `beam_set`.
pub fn design_windows(
    beam_set: &BeamSet,
    geometry: &ArrayGeometry,
    design: &WindowDesign,
) -> Result<Vec<WindowSpec>> {
    let length = design
        .length_policy
        .active_elements(geometry.num_elements())?;
    (0..beam_set.len())
        .map(|m| {
            let width = required_mainlobe_width(m, beam_set, design.margin)?;
            if !(neighbour_gap(m, beam_set) > 0.0) {
                return Ok(WindowSpec {
                    length: geometry.num_elements(),
                    beta: 0.0,
                    target_mainlobe_width: width,
                    placement: design.placement,
                });
            }
            let omega = match design.width_domain {
                WidthDomain::Angle => width,
                WidthDomain::SpatialFrequency => {
                    let cos = beam_set.directions()[m].to_radians().cos();
                    2.0 * PI * geometry.spacing_ratio() * cos * width
                }
            };
            Ok(WindowSpec {
                length,
                beta: beta_from_length_and_width(length, omega)?,
                target_mainlobe_width: width,
                placement: design.placement,
            })
        })
        .collect()
}

/// `diag(taper) * steering_vector(direction)`.
pub fn windowed_weights(
    spec: &WindowSpec,
    geometry: &ArrayGeometry,
    direction: f64,
    reference: PhaseReference,
) -> Result<Vec<Complex64>> {
    let taper = spec.taper(geometry.num_elements())?;
    let steer = steering_vector_with(geometry, direction, reference)?;
    Ok(taper.iter().zip(steer).map(|(w, s)| s * *w).collect())
}

/// A programmed beam: direction, its window and the resulting weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedBeam {
    pub direction: f64,
    pub window: WindowSpec,
    pub weights: Vec<Complex64>,
}

impl WindowedBeam {
    pub fn new(
        direction: f64,
        window: WindowSpec,
        geometry: &ArrayGeometry,
        reference: PhaseReference,
    ) -> Result<Self> {
        let weights = windowed_weights(&window, geometry, direction, reference)?;
        Ok(Self {
            direction,
            window,
            weights,
        })
    }

    /// Real taper magnitudes, i.e. `|weights[k]|`.
    pub fn taper(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.norm()).collect()
    }
}

/// Precomputed directions and windows for one beam count, the table a beam
/// memory would hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTable {
    pub beam_count: usize,
    pub entries: Vec<WindowTableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTableEntry {
    pub beam_index: usize,
    pub direction_deg: f64,
    pub window: WindowSpec,
}

impl WindowTable {
    pub fn new(beam_set: &BeamSet, specs: &[WindowSpec]) -> Self {
        let entries = beam_set
            .directions()
            .iter()
            .zip(specs)
            .enumerate()
            .map(|(i, (&d, s))| WindowTableEntry {
                beam_index: i,
                direction_deg: d,
                window: *s,
            })
            .collect();
        Self {
            beam_count: beam_set.len(),
            entries,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn mean_beta(&self) -> f64 {
        self.entries.iter().map(|e| e.window.beta).sum::<f64>() / self.entries.len().max(1) as f64
    }
}
