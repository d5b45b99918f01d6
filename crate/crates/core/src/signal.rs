//! Pulsed-radar echo synthesis for staged transmit plans.
//!
//! Each stage of a frame is one CPI in which the stage's beams radiate the
//! same IF pulse train. The receiver sees every target through the stage's
//! effective transmit gain, its receive steering vector, a range delay and a
//! slow-time Doppler progression, plus thermal noise. Stage cubes are summed
//! into one accumulated cube before any angle processing.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{steering_vector_with, ArrayGeometry, PhaseReference};
use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_NOISE};
use crate::scheduler::{RadarTiming, StagePlan};
use crate::window::WindowedBeam;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Phase reference used for receive steering, both when synthesizing echoes
/// and when scanning the angular spectrum.
pub const RECEIVE_REFERENCE: PhaseReference = PhaseReference::ArrayCenter;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarParams {
    pub carrier_frequency: f64,
    pub intermediate_frequency: f64,
    pub sampling_frequency: f64,
    pub bandwidth: f64,
    pub timing: RadarTiming,
    pub transmit_elements: usize,
    pub receive_elements: usize,
    pub temperature: f64,
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            carrier_frequency: 28e9,
            intermediate_frequency: 20e6,
            sampling_frequency: 150e6,
            bandwidth: 20e6,
            timing: RadarTiming::default(),
            transmit_elements: 25,
            receive_elements: 8,
            temperature: 300.0,
        }
    }
}

impl RadarParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_frequency", self.carrier_frequency),
            ("intermediate_frequency", self.intermediate_frequency),
            ("sampling_frequency", self.sampling_frequency),
            ("bandwidth", self.bandwidth),
            ("temperature", self.temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.sampling_frequency <= 2.0 * self.intermediate_frequency {
            return Err(Error::Parameter(format!(
                "sampling frequency {} Hz must exceed twice the IF {} Hz",
                self.sampling_frequency, self.intermediate_frequency
            )));
        }
        if self.transmit_elements == 0 || self.receive_elements == 0 {
            return Err(Error::Parameter("arrays need at least one element".into()));
        }
        self.timing.validate()?;
        if self.pulse_samples() == 0 {
            return Err(Error::Parameter("pulse shorter than one sample".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn transmit_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::half_wavelength(self.transmit_elements, self.wavelength())
    }

    pub fn receive_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::half_wavelength(self.receive_elements, self.wavelength())
    }

    /// Thermal noise power `kTB` in watts.
    pub fn noise_power(&self) -> f64 {
        BOLTZMANN * self.temperature * self.bandwidth
    }

    /// Fast-time samples per PRI.
    pub fn fast_time_len(&self) -> usize {
        (self.timing.pri * self.sampling_frequency * (1.0 + 1e-12)).floor() as usize
    }

    pub fn pulse_samples(&self) -> usize {
        (self.timing.pulse_duration * self.sampling_frequency).round() as usize
    }

    /// Unambiguous range `c * PRI / 2`.
    pub fn max_range(&self) -> f64 {
        SPEED_OF_LIGHT * self.timing.pri / 2.0
    }

    /// First fast-time bin of an echo from `range`.
    pub fn range_bin(&self, range: f64) -> usize {
        (2.0 * range / SPEED_OF_LIGHT * self.sampling_frequency).round() as usize
    }

    pub fn doppler_frequency(&self, velocity: f64) -> f64 {
        2.0 * velocity / self.wavelength()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub range: f64,
    pub velocity: f64,
    pub angle: f64,
    pub rcs_dbsm: f64,
}

impl TargetTruth {
    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) {
            return Err(Error::Parameter(format!(
                "target range must be positive, got {}",
                self.range
            )));
        }
        if !(self.angle.abs() < 90.0) {
            return Err(Error::Parameter(format!(
                "target angle {} outside (-90, 90)",
                self.angle
            )));
        }
        if !self.velocity.is_finite() || !self.rcs_dbsm.is_finite() {
            return Err(Error::Parameter(
                "target velocity and RCS must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Complex gain of one stage toward `angle`: `sum_m b_m^H a_T(angle)`, the
/// stage's windowed cumulative array factor.
pub fn stage_gain(
    stage: &[WindowedBeam],
    geometry: &ArrayGeometry,
    reference: PhaseReference,
    angle: f64,
) -> Result<Complex64> {
    let a = steering_vector_with(geometry, angle, reference)?;
    let mut g = Complex64::new(0.0, 0.0);
    for beam in stage {
        if beam.weights.len() != a.len() {
            return Err(Error::WeightLength {
                expected: a.len(),
                got: beam.weights.len(),
            });
        }
        g += beam
            .weights
            .iter()
            .zip(&a)
            .map(|(w, x)| w.conj() * x)
            .sum::<Complex64>();
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmitGain {
    pub per_stage: Vec<Complex64>,
    pub total: Complex64,
}

pub fn effective_transmit_gain(
    plan: &StagePlan,
    geometry: &ArrayGeometry,
    angle: f64,
) -> Result<TransmitGain> {
    let per_stage = plan
        .stages
        .iter()
        .map(|s| stage_gain(s, geometry, plan.phase_reference, angle))
        .collect::<Result<Vec<_>>>()?;
    let total = per_stage.iter().sum();
    Ok(TransmitGain { per_stage, total })
}

/// Largest `|f_overall|` over `grid`.
pub fn peak_transmit_gain(plan: &StagePlan, geometry: &ArrayGeometry, grid: &[f64]) -> Result<f64> {
    let mut peak: f64 = 0.0;
    for &angle in grid {
        peak = peak.max(effective_transmit_gain(plan, geometry, angle)?.total.norm());
    }
    Ok(peak)
}

/// Column-stacked transmit weights: column `m` holds beam `m`'s weights in
/// rows `m L .. (m + 1) L`, zeros elsewhere.
pub fn transmit_matrix(stage: &[WindowedBeam]) -> Result<DMatrix<Complex64>> {
    let first = stage
        .first()
        .ok_or(Error::Empty("transmit matrix needs at least one beam"))?;
    let l = first.weights.len();
    let m = stage.len();
    let mut out = DMatrix::zeros(l * m, m);
    for (j, beam) in stage.iter().enumerate() {
        if beam.weights.len() != l {
            return Err(Error::WeightLength {
                expected: l,
                got: beam.weights.len(),
            });
        }
        for (k, w) in beam.weights.iter().enumerate() {
            out[(j * l + k, j)] = *w;
        }
    }
    Ok(out)
}

/// Where the echo SNR is pinned.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SnrReference {
    /// Every target gets the nominal SNR when seen at the pattern peak.
    #[default]
    PerTarget,
    /// A target at `range` with `rcs_dbsm` gets the nominal SNR at the
    /// pattern peak; others scale with the radar range equation.
    Fixed { range: f64, rcs_dbsm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrCalibration {
    pub snr_db: f64,
    #[serde(default)]
    pub reference: SnrReference,
}

/// Amplitude scale such that a reference target at the transmit-pattern peak
/// reaches `snr_db` per element and fast-time sample in the accumulated cube,
/// whose noise power is `num_stages * noise_power`.
pub fn calibrate_snr(peak_gain: f64, num_stages: usize, snr_db: f64, noise_power: f64) -> f64 {
    let snr = 10f64.powf(snr_db / 10.0);
    if snr == 0.0 || peak_gain <= 0.0 {
        return 0.0;
    }
    (snr * num_stages as f64 * noise_power).sqrt() / peak_gain
}

/// Per-target amplitudes `A_k` for a plan with the given pattern peak.
pub fn target_amplitudes(
    targets: &[TargetTruth],
    calibration: &SnrCalibration,
    peak_gain: f64,
    num_stages: usize,
    noise_power: f64,
) -> Vec<f64> {
    let scale = calibrate_snr(peak_gain, num_stages, calibration.snr_db, noise_power);
    targets
        .iter()
        .map(|t| match calibration.reference {
            SnrReference::PerTarget => scale,
            SnrReference::Fixed { range, rcs_dbsm } => {
                let rcs = 10f64.powf((t.rcs_dbsm - rcs_dbsm) / 10.0);
                scale * (range / t.range).powi(2) * rcs.sqrt()
            }
        })
        .collect()
}

/// Which fast-time bins a cube stores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FastTime {
    All,
    Bins(Vec<usize>),
}

/// Receive samples indexed by (element, pulse, fast-time bin). Only the bins
/// listed in `bins` are stored; a full cube lists `0..Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    elements: usize,
    pulses: usize,
    fast_time_len: usize,
    bins: Vec<usize>,
    data: Vec<Complex64>,
}

impl DataCube {
    pub fn zeros(
        elements: usize,
        pulses: usize,
        fast_time_len: usize,
        selection: &FastTime,
    ) -> Result<Self> {
        let bins = match selection {
            FastTime::All => (0..fast_time_len).collect(),
            FastTime::Bins(b) => {
                let mut b = b.clone();
                b.sort_unstable();
                b.dedup();
                if let Some(&q) = b.iter().find(|&&q| q >= fast_time_len) {
                    return Err(Error::MissingBin(q));
                }
                b
            }
        };
        let len = elements * pulses * bins.len();
        Ok(Self {
            elements,
            pulses,
            fast_time_len,
            bins,
            data: vec![Complex64::new(0.0, 0.0); len],
        })
    }

    /// `(elements, pulses, fast-time length)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.elements, self.pulses, self.fast_time_len)
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    fn position(&self, bin: usize) -> Result<usize> {
        self.bins
            .binary_search(&bin)
            .map_err(|_| Error::MissingBin(bin))
    }

    fn offset(&self, pos: usize, pulse: usize, element: usize) -> usize {
        (pos * self.pulses + pulse) * self.elements + element
    }

    pub fn get(&self, element: usize, pulse: usize, bin: usize) -> Result<Complex64> {
        let pos = self.position(bin)?;
        Ok(self.data[self.offset(pos, pulse, element)])
    }

    /// Samples of one bin, pulse-major then element.
    pub fn bin_samples(&self, bin: usize) -> Result<&[Complex64]> {
        let pos = self.position(bin)?;
        let n = self.pulses * self.elements;
        Ok(&self.data[pos * n..(pos + 1) * n])
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.data
    }

    /// Total energy per stored bin.
    pub fn bin_energy(&self) -> Vec<f64> {
        let n = self.pulses * self.elements;
        self.data
            .chunks(n.max(1))
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
            .collect()
    }

    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    fn same_layout(&self, other: &DataCube) -> bool {
        self.elements == other.elements
            && self.pulses == other.pulses
            && self.fast_time_len == other.fast_time_len
            && self.bins == other.bins
    }
}

/// Noise for one stage cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Off,
    /// kTB noise drawn from the substream `[noise, trial, stage, bin]`, so a
    /// bin's noise is the same whichever other bins are simulated.
    Thermal {
        seed: u64,
        trial: u64,
        stage: u64,
    },
}

/// One stage's receive cube.
#[allow(clippy::too_many_arguments)]
pub fn simulate_stage_cube(
    stage: &[WindowedBeam],
    reference: PhaseReference,
    targets: &[TargetTruth],
    amplitudes: &[f64],
    params: &RadarParams,
    noise: Noise,
    selection: &FastTime,
) -> Result<DataCube> {
    if stage.is_empty() {
        return Err(Error::Empty("stage has no beams"));
    }
    if amplitudes.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} amplitudes for {} targets",
            amplitudes.len(),
            targets.len()
        )));
    }
    params.validate()?;
    let tx = params.transmit_geometry()?;
    let rx = params.receive_geometry()?;
    let (l_r, p) = (params.receive_elements, params.timing.pulses_per_cpi);
    let mut cube = DataCube::zeros(l_r, p, params.fast_time_len(), selection)?;
    let ns = params.pulse_samples();
    let lambda = params.wavelength();

    for (t, &amp) in targets.iter().zip(amplitudes) {
        t.validate()?;
        if t.range >= params.max_range() {
            return Err(Error::RangeOutOfWindow {
                range_m: t.range,
                max_m: params.max_range(),
            });
        }
        if amp == 0.0 {
            continue;
        }
        let q0 = params.range_bin(t.range);
        let gain = stage_gain(stage, &tx, reference, t.angle)?;
        let a_r = steering_vector_with(&rx, t.angle, RECEIVE_REFERENCE)?;
        let common = gain * amp * Complex64::cis(-4.0 * PI * t.range / lambda);
        let fd = params.doppler_frequency(t.velocity);
        let doppler: Vec<Complex64> = (0..p)
            .map(|i| Complex64::cis(2.0 * PI * fd * i as f64 * params.timing.pri))
            .collect();
        let lo = cube.bins.partition_point(|&q| q < q0);
        let hi = cube.bins.partition_point(|&q| q < q0 + ns);
        for pos in lo..hi {
            let q = cube.bins[pos];
            let if_phase = 2.0 * PI * params.intermediate_frequency * (q - q0) as f64
                / params.sampling_frequency;
            let c = common * Complex64::cis(if_phase);
            for (i, d) in doppler.iter().enumerate() {
                let cd = c * d;
                let base = cube.offset(pos, i, 0);
                for (k, a) in a_r.iter().enumerate() {
                    cube.data[base + k] += cd * a;
                }
            }
        }
    }

    if let Noise::Thermal {
        seed,
        trial,
        stage: stage_index,
    } = noise
    {
        let sigma = (params.noise_power() / 2.0).sqrt();
        let n = p * l_r;
        for pos in 0..cube.bins.len() {
            let mut rng = substream(
                seed,
                &[STREAM_NOISE, trial, stage_index, cube.bins[pos] as u64],
            );
            for z in &mut cube.data[pos * n..(pos + 1) * n] {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *z += Complex64::new(sigma * re, sigma * im);
            }
        }
    }
    Ok(cube)
}

/// Element-wise sum of stage cubes. Angle processing only accepts the result.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedCube {
    cube: DataCube,
    num_stages: usize,
}

impl AccumulatedCube {
    pub fn cube(&self) -> &DataCube {
        &self.cube
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }
}

pub fn accumulate_cubes(cubes: Vec<DataCube>) -> Result<AccumulatedCube> {
    let mut iter = cubes.into_iter();
    let mut acc = iter
        .next()
        .ok_or(Error::Empty("no stage cubes to accumulate"))?;
    let mut num_stages = 1;
    for c in iter {
        if !acc.same_layout(&c) {
            return Err(Error::Shape(format!(
                "cube {:?} with {} bins vs {:?} with {} bins",
                c.shape(),
                c.bins.len(),
                acc.shape(),
                acc.bins.len()
            )));
        }
        for (a, b) in acc.data.iter_mut().zip(c.data) {
            *a += b;
        }
        num_stages += 1;
    }
    Ok(AccumulatedCube {
        cube: acc,
        num_stages,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeSidecar {
    pub shape: [usize; 3],
    pub bins: Vec<usize>,
    pub layout: String,
    pub num_stages: usize,
    pub seed: Option<u64>,
    pub params: RadarParams,
}

/// Write `path` (little-endian complex64: f32 re, f32 im) and `path.json`.
pub fn write_cube(
    path: &Path,
    cube: &AccumulatedCube,
    params: &RadarParams,
    seed: Option<u64>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for z in cube.cube.samples() {
        out.write_all(&(z.re as f32).to_le_bytes())?;
        out.write_all(&(z.im as f32).to_le_bytes())?;
    }
    out.flush()?;
    let (e, p, q) = cube.cube.shape();
    let sidecar = CubeSidecar {
        shape: [e, p, q],
        bins: cube.cube.bins().to_vec(),
        layout: "bin-major, then pulse, then element".into(),
        num_stages: cube.num_stages,
        seed,
        params: *params,
    };
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    std::fs::write(name, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{cumulative_factor, FieldOfView, TaperedBeam};
    use crate::scheduler::{build_stage_plan, FrameAllocation, PlanConfig};
    use approx::assert_relative_eq;

    fn params() -> RadarParams {
        RadarParams::default()
    }

    fn plan(m: usize, n: usize, windowing: bool) -> StagePlan {
        let a = FrameAllocation {
            frame_index: 0,
            sensing_chains: m,
            sensing_duration: 0.0,
            num_stages: n,
            drawn: None,
        };
        let cfg = PlanConfig {
            windowing,
            ..Default::default()
        };
        build_stage_plan(
            &a,
            &FieldOfView::default(),
            &params().transmit_geometry().unwrap(),
            &cfg,
        )
        .unwrap()
    }

    fn target(range: f64, velocity: f64, angle: f64) -> TargetTruth {
        TargetTruth {
            range,
            velocity,
            angle,
            rcs_dbsm: 2.0,
        }
    }

    #[test]
    fn default_params() {
        let p = params();
        p.validate().unwrap();
        assert_eq!(p.fast_time_len(), 3000);
        assert_eq!(p.pulse_samples(), 150);
        assert_relative_eq!(p.noise_power(), 8.28e-14, max_relative = 1e-3);
        assert_relative_eq!(p.wavelength(), 0.010707, max_relative = 1e-4);
        assert_eq!(p.range_bin(450.0), 450);
        let bad = RadarParams {
            sampling_frequency: 40e6,
            ..p
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_beam_gain_is_element_count() {
        let pl = plan(1, 1, false);
        let dir = pl.beam_set.directions()[0];
        let g = effective_transmit_gain(&pl, &params().transmit_geometry().unwrap(), dir).unwrap();
        assert_relative_eq!(g.total.norm(), 25.0, epsilon = 1e-9);
    }

    #[test]
    fn gain_matches_cumulative_factor() {
        let geom = params().transmit_geometry().unwrap();
        let pl = plan(3, 3, true);
        let beams: Vec<TaperedBeam> = pl
            .beams()
            .map(|b| TaperedBeam {
                angle_deg: b.direction,
                taper: Some(b.taper()),
            })
            .collect();
        let grid = FieldOfView::default().grid(0.5);
        let f = cumulative_factor(&geom, &beams, &grid, pl.phase_reference).unwrap();
        for (theta, want) in grid.iter().zip(f) {
            let got = effective_transmit_gain(&pl, &geom, *theta).unwrap().total;
            assert!(
                (got - want).norm() <= 1e-9 * want.norm().max(1.0),
                "{theta}"
            );
        }
    }

    #[test]
    fn raw_three_beams_have_deep_null() {
        let geom = params().transmit_geometry().unwrap();
        let pl = plan(3, 1, false);
        let grid = FieldOfView::default().grid(0.1);
        let peak = peak_transmit_gain(&pl, &geom, &grid).unwrap();
        let min = grid
            .iter()
            .map(|&t| effective_transmit_gain(&pl, &geom, t).unwrap().total.norm())
            .fold(f64::INFINITY, f64::min);
        assert!(20.0 * (min / peak).log10() <= -25.0);
    }

    #[test]
    fn transmit_matrix_columns_are_weights() {
        let pl = plan(3, 1, true);
        let stage = &pl.stages[0];
        let b = transmit_matrix(stage).unwrap();
        assert_eq!(b.shape(), (75, 3));
        for (m, beam) in stage.iter().enumerate() {
            let mut e = DMatrix::zeros(3, 1);
            e[(m, 0)] = Complex64::new(1.0, 0.0);
            let col = &b * e;
            for k in 0..75 {
                let want = if k / 25 == m {
                    beam.weights[k % 25]
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert_eq!(col[(k, 0)], want);
            }
        }
        assert!(transmit_matrix(&[]).is_err());
    }

    #[test]
    fn noiseless_empty_scene_is_zero() {
        let pl = plan(3, 1, false);
        let cube = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[],
            &[],
            &params(),
            Noise::Off,
            &FastTime::All,
        )
        .unwrap();
        assert_eq!(cube.shape(), (8, 32, 3000));
        assert!(cube
            .samples()
            .iter()
            .all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn noise_power_is_ktb() {
        let p = params();
        let pl = plan(3, 1, false);
        let noise = Noise::Thermal {
            seed: 1,
            trial: 0,
            stage: 0,
        };
        let cube = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[],
            &[],
            &p,
            noise,
            &FastTime::All,
        )
        .unwrap();
        assert_relative_eq!(cube.mean_power(), p.noise_power(), max_relative = 0.05);
    }

    #[test]
    fn selected_bins_match_full_cube() {
        let p = params();
        let pl = plan(3, 1, false);
        let t = [target(450.0, 3.0, 10.0)];
        let amp = [1e-6];
        let noise = Noise::Thermal {
            seed: 4,
            trial: 2,
            stage: 0,
        };
        let full = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &t,
            &amp,
            &p,
            noise,
            &FastTime::All,
        )
        .unwrap();
        let sel = FastTime::Bins(vec![500, 10, 450]);
        let part =
            simulate_stage_cube(&pl.stages[0], pl.phase_reference, &t, &amp, &p, noise, &sel)
                .unwrap();
        assert_eq!(part.bins(), &[10, 450, 500]);
        for &q in part.bins() {
            assert_eq!(part.bin_samples(q).unwrap(), full.bin_samples(q).unwrap());
        }
        assert!(matches!(part.get(0, 0, 11), Err(Error::MissingBin(11))));
    }

    #[test]
    fn echo_lands_at_range_bin() {
        let p = params();
        let pl = plan(1, 1, false);
        let dir = pl.beam_set.directions()[0];
        let cube = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[target(450.0, 1.0, dir)],
            &[1.0],
            &p,
            Noise::Off,
            &FastTime::All,
        )
        .unwrap();
        let energy = cube.bin_energy();
        let first = energy.iter().position(|&e| e > 0.0).unwrap();
        let last = energy.iter().rposition(|&e| e > 0.0).unwrap();
        assert_eq!(first, 450);
        assert_eq!(last, 450 + 149);
        // |A g|^2 per sample, times L_R * P samples per bin.
        assert_relative_eq!(energy[500], 625.0 * 8.0 * 32.0, max_relative = 1e-9);
    }

    #[test]
    fn doppler_and_receive_phase() {
        let p = params();
        let pl = plan(1, 1, false);
        let t = target(700.0, 12.5, 33.0);
        let q = p.range_bin(700.0) + 7;
        let cube = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[t],
            &[1.0],
            &p,
            Noise::Off,
            &FastTime::Bins(vec![q]),
        )
        .unwrap();
        let step = Complex64::cis(2.0 * PI * p.doppler_frequency(t.velocity) * p.timing.pri);
        let a_r = steering_vector_with(&p.receive_geometry().unwrap(), t.angle, RECEIVE_REFERENCE)
            .unwrap();
        let z00 = cube.get(0, 0, q).unwrap();
        for i in 0..32 {
            for k in 0..8 {
                let want = z00 / a_r[0] * a_r[k] * step.powu(i as u32);
                assert!((cube.get(k, i, q).unwrap() - want).norm() < 1e-9 * z00.norm());
            }
        }
    }

    #[test]
    fn simulator_is_linear_in_targets() {
        let p = params();
        let pl = plan(3, 1, true);
        let a = target(450.0, 1.0, -21.5);
        let b = target(500.0, -2.0, 7.0);
        let sel = FastTime::Bins((440..720).collect());
        let run = |ts: &[TargetTruth], amps: &[f64]| {
            simulate_stage_cube(
                &pl.stages[0],
                pl.phase_reference,
                ts,
                amps,
                &p,
                Noise::Off,
                &sel,
            )
            .unwrap()
        };
        let ab = run(&[a, b], &[1.0, 2.0]);
        let sa = run(&[a], &[1.0]);
        let sb = run(&[b], &[2.0]);
        for ((x, y), z) in ab.samples().iter().zip(sa.samples()).zip(sb.samples()) {
            assert!((x - (y + z)).norm() < 1e-9);
        }
    }

    #[test]
    fn noise_is_uncorrelated() {
        let p = params();
        let pl = plan(3, 1, false);
        let cube = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[],
            &[],
            &p,
            Noise::Thermal {
                seed: 9,
                trial: 0,
                stage: 0,
            },
            &FastTime::All,
        )
        .unwrap();
        let s = cube.samples();
        let pw = cube.mean_power();
        // Neighbouring elements, neighbouring pulses and neighbouring bins.
        for lag in [1usize, 8, 256] {
            let n = s.len() - lag;
            let c: Complex64 =
                (0..n).map(|i| s[i] * s[i + lag].conj()).sum::<Complex64>() / n as f64;
            assert!(c.norm() / pw < 0.02, "lag {lag}: {}", c.norm() / pw);
        }
    }

    #[test]
    fn range_beyond_window_is_rejected() {
        let pl = plan(1, 1, false);
        let err = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[target(3200.0, 0.0, 0.0)],
            &[1.0],
            &params(),
            Noise::Off,
            &FastTime::All,
        )
        .unwrap_err();
        assert!(matches!(err, Error::RangeOutOfWindow { .. }));
        assert!(simulate_stage_cube(
            &[],
            PhaseReference::ArrayCenter,
            &[],
            &[],
            &params(),
            Noise::Off,
            &FastTime::All
        )
        .is_err());
    }

    #[test]
    fn accumulation() {
        let p = params();
        let pl = plan(3, 3, true);
        let t = [target(450.0, 1.0, 7.0)];
        let sel = FastTime::Bins(vec![460]);
        let one = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &t,
            &[1.0],
            &p,
            Noise::Off,
            &sel,
        )
        .unwrap();
        let single = accumulate_cubes(vec![one.clone()]).unwrap();
        assert_eq!(single.cube(), &one);
        let triple = accumulate_cubes(vec![one.clone(), one.clone(), one.clone()]).unwrap();
        assert_eq!(triple.num_stages(), 3);
        for (a, b) in triple.cube().samples().iter().zip(one.samples()) {
            assert!((a - b * 3.0).norm() < 1e-12);
        }
        let other = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &t,
            &[1.0],
            &p,
            Noise::Off,
            &FastTime::Bins(vec![461]),
        )
        .unwrap();
        assert!(matches!(
            accumulate_cubes(vec![one, other]),
            Err(Error::Shape(_))
        ));
        assert!(accumulate_cubes(vec![]).is_err());
    }

    #[test]
    fn independent_noise_adds_in_power() {
        let p = params();
        let pl = plan(3, 3, false);
        let sel = FastTime::Bins((0..1000).collect());
        let cubes: Vec<DataCube> = (0..3)
            .map(|j| {
                let noise = Noise::Thermal {
                    seed: 3,
                    trial: 0,
                    stage: j,
                };
                simulate_stage_cube(
                    &pl.stages[j as usize],
                    pl.phase_reference,
                    &[],
                    &[],
                    &p,
                    noise,
                    &sel,
                )
                .unwrap()
            })
            .collect();
        let acc = accumulate_cubes(cubes).unwrap();
        assert_relative_eq!(
            acc.cube().mean_power(),
            3.0 * p.noise_power(),
            max_relative = 0.05
        );
    }

    #[test]
    fn calibrated_snr_at_pattern_peak() {
        let p = params();
        let geom = p.transmit_geometry().unwrap();
        let pl = plan(3, 3, true);
        let grid = FieldOfView::default().grid(0.1);
        let peak = peak_transmit_gain(&pl, &geom, &grid).unwrap();
        let peak_angle = *grid
            .iter()
            .max_by(|a, b| {
                let ga = effective_transmit_gain(&pl, &geom, **a)
                    .unwrap()
                    .total
                    .norm();
                let gb = effective_transmit_gain(&pl, &geom, **b)
                    .unwrap()
                    .total
                    .norm();
                ga.partial_cmp(&gb).unwrap()
            })
            .unwrap();
        let t = [target(600.0, 4.0, peak_angle)];
        let cal = SnrCalibration {
            snr_db: 10.0,
            reference: SnrReference::PerTarget,
        };
        let amps = target_amplitudes(&t, &cal, peak, pl.num_stages(), p.noise_power());
        let q0 = p.range_bin(600.0);
        let sel = FastTime::Bins((q0..q0 + 40).collect());
        let signal = accumulate_cubes(
            (0..3)
                .map(|j| {
                    simulate_stage_cube(
                        &pl.stages[j],
                        pl.phase_reference,
                        &t,
                        &amps,
                        &p,
                        Noise::Off,
                        &sel,
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let noisy = accumulate_cubes(
            (0..3)
                .map(|j| {
                    let noise = Noise::Thermal {
                        seed: 77,
                        trial: 0,
                        stage: j as u64,
                    };
                    simulate_stage_cube(
                        &pl.stages[j],
                        pl.phase_reference,
                        &t,
                        &amps,
                        &p,
                        noise,
                        &sel,
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let s = signal.cube().mean_power();
        let n: f64 = noisy
            .cube()
            .samples()
            .iter()
            .zip(signal.cube().samples())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / s.max(1e-300)
            / signal.cube().samples().len() as f64;
        let snr_db = -10.0 * n.log10();
        assert!((snr_db - 10.0).abs() < 0.5, "measured {snr_db} dB");
    }

    #[test]
    fn null_target_is_attenuated() {
        let p = params();
        let geom = p.transmit_geometry().unwrap();
        let pl = plan(3, 1, false);
        let grid = FieldOfView::default().grid(0.1);
        let peak = peak_transmit_gain(&pl, &geom, &grid).unwrap();
        let (null_angle, null_gain) = grid
            .iter()
            .map(|&t| {
                (
                    t,
                    effective_transmit_gain(&pl, &geom, t).unwrap().total.norm(),
                )
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let t = [
            target(400.0, 0.0, null_angle),
            target(400.0, 0.0, pl.beam_set.directions()[1]),
        ];
        let cal = SnrCalibration {
            snr_db: 10.0,
            reference: SnrReference::PerTarget,
        };
        let amps = target_amplitudes(&t, &cal, peak, 1, p.noise_power());
        let sel = FastTime::Bins(vec![p.range_bin(400.0) + 3]);
        let power = |i: usize| {
            simulate_stage_cube(
                &pl.stages[0],
                pl.phase_reference,
                &t[i..=i],
                &amps[i..=i],
                &p,
                Noise::Off,
                &sel,
            )
            .unwrap()
            .mean_power()
        };
        let drop = 10.0 * (power(0) / power(1)).log10();
        let beam_gain = effective_transmit_gain(&pl, &geom, t[1].angle)
            .unwrap()
            .total
            .norm();
        assert_relative_eq!(drop, 20.0 * (null_gain / beam_gain).log10(), epsilon = 1e-6);
        assert!(drop <= -25.0);
    }

    #[test]
    fn zero_snr_gives_noise_only() {
        let cal = SnrCalibration {
            snr_db: f64::NEG_INFINITY,
            reference: SnrReference::PerTarget,
        };
        let amps = target_amplitudes(&[target(300.0, 0.0, 0.0)], &cal, 10.0, 3, 8e-14);
        assert_eq!(amps, vec![0.0]);
    }

    #[test]
    fn fixed_reference_follows_range_equation() {
        let cal = SnrCalibration {
            snr_db: 0.0,
            reference: SnrReference::Fixed {
                range: 500.0,
                rcs_dbsm: 2.0,
            },
        };
        let ts = [
            target(500.0, 0.0, 0.0),
            target(250.0, 0.0, 0.0),
            TargetTruth {
                rcs_dbsm: 12.0,
                ..target(500.0, 0.0, 0.0)
            },
        ];
        let a = target_amplitudes(&ts, &cal, 1.0, 1, 1.0);
        assert_relative_eq!(a[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(a[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(a[2], 10f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn cube_dump() {
        let dir = tempfile::tempdir().unwrap();
        let pl = plan(1, 1, false);
        let c = simulate_stage_cube(
            &pl.stages[0],
            pl.phase_reference,
            &[target(10.0, 0.0, 0.0)],
            &[1.0],
            &params(),
            Noise::Off,
            &FastTime::Bins(vec![70, 71]),
        )
        .unwrap();
        let acc = accumulate_cubes(vec![c]).unwrap();
        let path = dir.path().join("cube.bin");
        write_cube(&path, &acc, &params(), Some(5)).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 2 * 8 * 32 * 8);
        let side: CubeSidecar = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("cube.bin.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(side.shape, [8, 32, 3000]);
        assert_eq!(side.bins, vec![70, 71]);
        assert_eq!(side.seed, Some(5));
    }
}
