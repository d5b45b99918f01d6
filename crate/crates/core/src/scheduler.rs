//! Abstract DFRC scheduler: how many RF chains and CPIs a sensing frame
//! gets, and how the frame's beams are split into stages.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, BeamPlacement, BeamSet, FieldOfView, PhaseReference};
use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_ALLOCATION};
use crate::window::{design_windows, WindowDesign, WindowSpec, WindowTable, WindowedBeam};

/// Total RF chains of the base station.
pub const DEFAULT_TOTAL_CHAINS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarTiming {
    pub pulse_duration: f64,
    pub pri: f64,
    pub pulses_per_cpi: usize,
}

impl RadarTiming {
    pub fn new(pulse_duration: f64, pri: f64, pulses_per_cpi: usize) -> Result<Self> {
        let t = Self {
            pulse_duration,
            pri,
            pulses_per_cpi,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_duration > 0.0 && self.pri > self.pulse_duration) {
            return Err(Error::Parameter(format!(
                "need 0 < pulse duration ({}) < PRI ({})",
                self.pulse_duration, self.pri
            )));
        }
        if self.pulses_per_cpi == 0 {
            return Err(Error::Parameter("need at least one pulse per CPI".into()));
        }
        Ok(())
    }

    pub fn cpi_duration(&self) -> f64 {
        self.pulses_per_cpi as f64 * self.pri
    }
}

impl Default for RadarTiming {
    fn default() -> Self {
        Self {
            pulse_duration: 1e-6,
            pri: 20e-6,
            pulses_per_cpi: 32,
        }
    }
}

/// Whole CPIs that fit in the sensing window; 0 marks an unusable frame.
pub fn num_stages(sensing_duration: f64, timing: &RadarTiming) -> usize {
    if !(sensing_duration > 0.0) {
        return 0;
    }
    // Relative slack absorbs representation error in exact multiples.
    (sensing_duration / timing.cpi_duration() * (1.0 + 1e-12)).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAllocation {
    pub frame_index: usize,
    pub sensing_chains: usize,
    pub sensing_duration: f64,
    pub num_stages: usize,
    /// Raw draw of a random allocation process before clamping.
    pub drawn: Option<u64>,
}

impl FrameAllocation {
    pub fn is_usable(&self) -> bool {
        self.num_stages >= 1 && self.sensing_chains >= 1
    }

    pub fn total_beams(&self) -> usize {
        self.sensing_chains * self.num_stages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AllocationProcess {
    Fixed {
        chains: usize,
    },
    /// Poisson draw clamped to `[1, max_chains]`.
    Poisson {
        lambda: f64,
        max_chains: usize,
    },
}

impl AllocationProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AllocationProcess::Fixed { chains: 0 } => {
                Err(Error::Parameter("fixed allocation needs at least one chain".into()))
            }
            AllocationProcess::Poisson { lambda, max_chains } if !(lambda > 0.0) || max_chains == 0 => {
                Err(Error::Parameter(format!(
                    "poisson allocation needs lambda > 0 and max_chains >= 1 (lambda {lambda}, max {max_chains})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Allocate sensing chains for one frame. Poisson draws use the frame's own
/// substream of `seed`, so frame `i` gets the same draw however frames are
/// visited.
pub fn allocate_chains(
    process: &AllocationProcess,
    frame_index: usize,
    sensing_duration: f64,
    timing: &RadarTiming,
    seed: u64,
) -> Result<FrameAllocation> {
    process.validate()?;
    let (chains, drawn) = match *process {
        AllocationProcess::Fixed { chains } => (chains, None),
        AllocationProcess::Poisson { lambda, max_chains } => {
            let dist = Poisson::new(lambda).map_err(|e| Error::Parameter(e.to_string()))?;
            let mut rng = substream(seed, &[STREAM_ALLOCATION, frame_index as u64]);
            let draw = dist.sample(&mut rng) as u64;
            ((draw as usize).clamp(1, max_chains), Some(draw))
        }
    };
    Ok(FrameAllocation {
        frame_index,
        sensing_chains: chains,
        sensing_duration,
        num_stages: num_stages(sensing_duration, timing),
        drawn,
    })
}

/// How the frame's beams are dealt out to stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionRule {
    /// Stage `j` takes beams `j, j + N_stg, j + 2 N_stg, ...`.
    #[default]
    Interleaved,
    /// Stage `j` takes the `j`-th contiguous block of `M` beams.
    Contiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub windowing: bool,
    pub placement: BeamPlacement,
    pub design: WindowDesign,
    pub partition: PartitionRule,
    pub phase_reference: PhaseReference,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            windowing: true,
            placement: BeamPlacement::default(),
            design: WindowDesign::default(),
            partition: PartitionRule::default(),
            phase_reference: PhaseReference::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub frame_index: usize,
    pub phase_reference: PhaseReference,
    pub beam_set: BeamSet,
    pub windows: Vec<WindowSpec>,
    pub stages: Vec<Vec<WindowedBeam>>,
}

impl StagePlan {
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn beams(&self) -> impl Iterator<Item = &WindowedBeam> {
        self.stages.iter().flatten()
    }

    pub fn window_table(&self) -> WindowTable {
        WindowTable::new(&self.beam_set, &self.windows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn build_stage_plan(
    allocation: &FrameAllocation,
    fov: &FieldOfView,
    geometry: &ArrayGeometry,
    config: &PlanConfig,
) -> Result<StagePlan> {
    if !allocation.is_usable() {
        return Err(Error::NoStages {
            frame: allocation.frame_index,
        });
    }
    let (m, n_stg) = (allocation.sensing_chains, allocation.num_stages);
    let beam_set = BeamSet::from_fov(fov, m * n_stg, config.placement, geometry)?;
    let windows = if config.windowing {
        design_windows(&beam_set, geometry, &config.design)?
    } else {
        vec![WindowSpec::rectangular(geometry.num_elements()); beam_set.len()]
    };
    let beams = beam_set
        .directions()
        .iter()
        .zip(&windows)
        .map(|(&d, w)| WindowedBeam::new(d, *w, geometry, config.phase_reference))
        .collect::<Result<Vec<_>>>()?;

    let mut stages: Vec<Vec<WindowedBeam>> = vec![Vec::with_capacity(m); n_stg];
    for (i, beam) in beams.into_iter().enumerate() {
        let j = match config.partition {
            PartitionRule::Interleaved => i % n_stg,
            PartitionRule::Contiguous => i / m,
        };
        stages[j].push(beam);
    }
    Ok(StagePlan {
        frame_index: allocation.frame_index,
        phase_reference: config.phase_reference,
        beam_set,
        windows,
        stages,
    })
}
