//! Uniform linear array geometry, steering vectors, beam positioning and
//! array-factor evaluation.
//!
//! Angles are degrees at every public boundary. Internally everything is
//! expressed in direction-sine space, `u = sin(theta)`, where a ULA pattern
//! depends only on `u - u_beam`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible `cos(theta)`; about 89.94 deg.
pub const END_FIRE_COS: f64 = 1e-3;

/// Default pattern grid resolution in degrees.
pub const DEFAULT_GRID_STEP_DEG: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    num_elements: usize,
    spacing: f64,
    wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::Geometry("need at least one element".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Geometry(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Geometry(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        Ok(Self {
            num_elements,
            spacing,
            wavelength,
        })
    }

    /// Array with the default half-wavelength spacing.
    pub fn half_wavelength(num_elements: usize, wavelength: f64) -> Result<Self> {
        Self::new(num_elements, wavelength / 2.0, wavelength)
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// `d / lambda`
    pub fn spacing_ratio(&self) -> f64 {
        self.spacing / self.wavelength
    }

    /// Same spacing and wavelength with a different element count.
    pub fn with_elements(&self, num_elements: usize) -> Result<Self> {
        Self::new(num_elements, self.spacing, self.wavelength)
    }
}

/// Where the zero-phase point of a beamformer weight vector sits.
///
/// `FirstElement` gives element 0 unit phase. `ArrayCenter` puts the phase
/// centre at the aperture midpoint, which makes the pattern of any real
/// symmetric taper purely real. The two differ only by a per-beam common
/// phase, which matters once several beams are summed coherently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseReference {
    FirstElement,
    #[default]
    ArrayCenter,
}

impl PhaseReference {
    fn origin(self, num_elements: usize) -> f64 {
        match self {
            PhaseReference::FirstElement => 0.0,
            PhaseReference::ArrayCenter => (num_elements as f64 - 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOfView {
    theta_start: f64,
    theta_end: f64,
}

impl FieldOfView {
    pub fn new(theta_start: f64, theta_end: f64) -> Result<Self> {
        let ok = theta_start > -90.0 && theta_start < theta_end && theta_end < 90.0;
        if !ok {
            return Err(Error::FieldOfView {
                start: theta_start,
                end: theta_end,
            });
        }
        Ok(Self {
            theta_start,
            theta_end,
        })
    }

    pub fn start(&self) -> f64 {
        self.theta_start
    }

    pub fn end(&self) -> f64 {
        self.theta_end
    }

    /// Inclusive grid over the field of view.
    pub fn grid(&self, step_deg: f64) -> Vec<f64> {
        angle_grid(self.theta_start, self.theta_end, step_deg)
    }
}

impl Default for FieldOfView {
    fn default() -> Self {
        Self {
            theta_start: -80.0,
            theta_end: 80.0,
        }
    }
}

/// Inclusive, evenly spaced grid; the last point is exactly `end`.
pub fn angle_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let n = ((end - start) / step).round() as usize;
    (0..=n)
        .map(|i| if i == n { end } else { start + i as f64 * step })
        .collect()
}

/// How `count` beams are laid out in sine space across the field of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamPlacement {
    /// `sin(theta_m) = sin(start) + m * span / count` for `m = 1..=count`;
    /// the last beam lands on the FOV end.
    EndAnchored,
    /// Same spacing shifted by half a step (`m - 1/2`), symmetric about the
    /// FOV centre in sine space.
    #[default]
    Centered,
}

/// Beam directions in degrees, end-anchored layout.
pub fn beam_positions(fov: &FieldOfView, count: usize) -> Result<Vec<f64>> {
    beam_positions_with(fov, count, BeamPlacement::EndAnchored)
}

pub fn beam_positions_with(
    fov: &FieldOfView,
    count: usize,
    placement: BeamPlacement,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::Parameter("beam count must be at least 1".into()));
    }
    let s0 = fov.start().to_radians().sin();
    let s1 = fov.end().to_radians().sin();
    let step = (s1 - s0) / count as f64;
    let offset = match placement {
        BeamPlacement::EndAnchored => 0.0,
        BeamPlacement::Centered => 0.5,
    };
    Ok((1..=count)
        .map(|m| {
            if placement == BeamPlacement::EndAnchored && m == count {
                fov.end()
            } else {
                let s = (s0 + (m as f64 - offset) * step).clamp(-1.0, 1.0);
                s.asin().to_degrees()
            }
        })
        .collect())
}

fn check_angle(angle_deg: f64) -> Result<f64> {
    let rad = angle_deg.to_radians();
    if !angle_deg.is_finite() || rad.cos() < END_FIRE_COS {
        return Err(Error::EndFire(angle_deg));
    }
    Ok(rad)
}

/// Steering vector with element 0 as the phase reference.
pub fn steering_vector(geometry: &ArrayGeometry, angle_deg: f64) -> Result<Vec<Complex64>> {
    steering_vector_with(geometry, angle_deg, PhaseReference::FirstElement)
}

/// Element `k` carries phase `-2 pi (d/lambda) (k - k0) sin(angle)`.
pub fn steering_vector_with(
    geometry: &ArrayGeometry,
    angle_deg: f64,
    reference: PhaseReference,
) -> Result<Vec<Complex64>> {
    let u = check_angle(angle_deg)?.sin();
    let k0 = reference.origin(geometry.num_elements());
    let c = -2.0 * PI * geometry.spacing_ratio() * u;
    Ok((0..geometry.num_elements())
        .map(|k| {
            if k as f64 == k0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::cis(c * (k as f64 - k0))
            }
        })
        .collect())
}

fn check_taper(geometry: &ArrayGeometry, taper: Option<&[f64]>) -> Result<()> {
    match taper {
        Some(w) if w.len() != geometry.num_elements() => Err(Error::WeightLength {
            expected: geometry.num_elements(),
            got: w.len(),
        }),
        _ => Ok(()),
    }
}

fn factor_at(geometry: &ArrayGeometry, taper: Option<&[f64]>, k0: f64, delta_u: f64) -> Complex64 {
    let c = -2.0 * PI * geometry.spacing_ratio() * delta_u;
    (0..geometry.num_elements())
        .map(|k| {
            let w = taper.map_or(1.0, |t| t[k]);
            Complex64::from_polar(w, c * (k as f64 - k0))
        })
        .sum()
}

/// Array factor of a single (optionally tapered) beam steered to
/// `beam_angle`, element 0 as phase reference.
pub fn array_factor(
    geometry: &ArrayGeometry,
    beam_angle: f64,
    taper: Option<&[f64]>,
    grid: &[f64],
) -> Result<Vec<Complex64>> {
    array_factor_with(
        geometry,
        beam_angle,
        taper,
        grid,
        PhaseReference::FirstElement,
    )
}

pub fn array_factor_with(
    geometry: &ArrayGeometry,
    beam_angle: f64,
    taper: Option<&[f64]>,
    grid: &[f64],
    reference: PhaseReference,
) -> Result<Vec<Complex64>> {
    check_taper(geometry, taper)?;
    let u0 = check_angle(beam_angle)?.sin();
    let k0 = reference.origin(geometry.num_elements());
    Ok(grid
        .iter()
        .map(|&theta| factor_at(geometry, taper, k0, theta.to_radians().sin() - u0))
        .collect())
}

/// One beam of a cumulative pattern: direction plus optional real taper of
/// length `L` (inactive elements carry zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaperedBeam {
    pub angle_deg: f64,
    pub taper: Option<Vec<f64>>,
}

impl TaperedBeam {
    pub fn uniform(angle_deg: f64) -> Self {
        Self {
            angle_deg,
            taper: None,
        }
    }
}

/// Coherent (phasor) sum of the beams' array factors on `grid`.
pub fn cumulative_factor(
    geometry: &ArrayGeometry,
    beams: &[TaperedBeam],
    grid: &[f64],
    reference: PhaseReference,
) -> Result<Vec<Complex64>> {
    if beams.is_empty() {
        return Err(Error::Empty("cumulative pattern needs at least one beam"));
    }
    let mut total = vec![Complex64::new(0.0, 0.0); grid.len()];
    for beam in beams {
        let f = array_factor_with(
            geometry,
            beam.angle_deg,
            beam.taper.as_deref(),
            grid,
            reference,
        )?;
        for (acc, v) in total.iter_mut().zip(f) {
            *acc += v;
        }
    }
    Ok(total)
}

/// `20 log10 |f|` normalised so that the grid maximum is exactly 0 dB.
pub fn cumulative_pattern(
    geometry: &ArrayGeometry,
    beams: &[TaperedBeam],
    grid: &[f64],
    reference: PhaseReference,
) -> Result<Vec<f64>> {
    let f = cumulative_factor(geometry, beams, grid, reference)?;
    Ok(normalized_db(&f))
}

/// Magnitudes in dB relative to the largest one. Exact zeros map to -400 dB.
pub fn normalized_db(values: &[Complex64]) -> Vec<f64> {
    let db: Vec<f64> = values
        .iter()
        .map(|v| 20.0 * v.norm().max(1e-200).log10())
        .collect();
    let peak = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    db.into_iter().map(|x| (x - peak).max(-400.0)).collect()
}

/// Half-power beamwidth in radians, `0.886 lambda / (L d cos theta)`.
pub fn hpbw(geometry: &ArrayGeometry, beam_angle: f64) -> Result<f64> {
    hpbw_for_elements(geometry, geometry.num_elements(), beam_angle)
}

/// HPBW of an aperture with `active` elements (a shortened window).
pub fn hpbw_for_elements(geometry: &ArrayGeometry, active: usize, beam_angle: f64) -> Result<f64> {
    if active == 0 {
        return Err(Error::Parameter(
            "active element count must be positive".into(),
        ));
    }
    let rad = check_angle(beam_angle)?;
    Ok(0.886 / (active as f64 * geometry.spacing_ratio() * rad.cos()))
}

/// First-null beamwidth approximation: twice the HPBW.
pub fn fnbw(geometry: &ArrayGeometry, beam_angle: f64) -> Result<f64> {
    Ok(2.0 * hpbw(geometry, beam_angle)?)
}

/// Ordered beams with their half-power widths and the gaps between
/// neighbouring half-power edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSet {
    directions: Vec<f64>,
    hpbw: Vec<f64>,
    separations: Vec<f64>,
}

impl BeamSet {
    pub fn new(directions: Vec<f64>, geometry: &ArrayGeometry) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::Empty("beam set needs at least one direction"));
        }
        if directions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter(
                "beam directions must be strictly increasing".into(),
            ));
        }
        let sines: Vec<f64> = directions.iter().map(|d| d.to_radians().sin()).collect();
        if sines.len() > 2 {
            let step = sines[1] - sines[0];
            if sines
                .windows(2)
                .any(|w| ((w[1] - w[0]) - step).abs() > 1e-9)
            {
                return Err(Error::Parameter("beam sines must be equally spaced".into()));
            }
        }
        let hpbw = directions
            .iter()
            .map(|&d| hpbw(geometry, d))
            .collect::<Result<Vec<_>>>()?;
        let separations = edge_gaps(&directions, &hpbw);
        Ok(Self {
            directions,
            hpbw,
            separations,
        })
    }

    pub fn from_fov(
        fov: &FieldOfView,
        count: usize,
        placement: BeamPlacement,
        geometry: &ArrayGeometry,
    ) -> Result<Self> {
        Self::new(beam_positions_with(fov, count, placement)?, geometry)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn hpbw(&self) -> &[f64] {
        &self.hpbw
    }

    /// Cached result of [`hpbw_separations`]; empty for a single beam.
    pub fn separations(&self) -> &[f64] {
        &self.separations
    }
}

fn edge_gaps(directions: &[f64], widths: &[f64]) -> Vec<f64> {
    directions
        .windows(2)
        .zip(widths.windows(2))
        .map(|(d, w)| (d[1].to_radians() - w[1] / 2.0) - (d[0].to_radians() + w[0] / 2.0))
        .collect()
}

/// Gap in radians between the upper half-power edge of beam `m` and the
/// lower edge of beam `m + 1`. Negative when the beams overlap.
pub fn hpbw_separations(beam_set: &BeamSet) -> Result<Vec<f64>> {
    if beam_set.len() < 2 {
        return Err(Error::TooFewBeams {
            needed: 2,
            got: beam_set.len(),
        });
    }
    Ok(edge_gaps(&beam_set.directions, &beam_set.hpbw))
}

/// Numerically measured -3 dB width (radians) of the beam around
/// `beam_angle`, found by walking outwards from the steering direction in
/// `step_deg` increments and interpolating the crossing linearly in power.
pub fn measured_hpbw(
    geometry: &ArrayGeometry,
    beam_angle: f64,
    taper: Option<&[f64]>,
    step_deg: f64,
) -> Result<f64> {
    check_taper(geometry, taper)?;
    let u0 = check_angle(beam_angle)?.sin();
    let k0 = PhaseReference::ArrayCenter.origin(geometry.num_elements());
    let power =
        |theta: f64| factor_at(geometry, taper, k0, theta.to_radians().sin() - u0).norm_sqr();
    let peak = power(beam_angle);
    let half = peak / 2.0;
    let edge = |dir: f64| -> Result<f64> {
        let mut prev_theta = beam_angle;
        let mut prev_p = peak;
        loop {
            let theta = prev_theta + dir * step_deg;
            if theta.abs() >= 90.0 {
                return Err(Error::EndFire(theta));
            }
            let p = power(theta);
            if p <= half {
                let t = (prev_p - half) / (prev_p - p);
                return Ok(prev_theta + dir * step_deg * t);
            }
            prev_theta = theta;
            prev_p = p;
        }
    };
    let hi = edge(1.0)?;
    let lo = edge(-1.0)?;
    Ok((hi - lo).to_radians())
}
