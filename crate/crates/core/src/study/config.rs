use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::array::{FieldOfView, DEFAULT_GRID_STEP_DEG};
use crate::doa::{DEFAULT_ASSOCIATION_DEG, DEFAULT_LOADING};
use crate::error::{Error, Result};
use crate::scheduler::PlanConfig;
use crate::signal::{RadarParams, SnrReference, TargetTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyId {
    Pattern,
    Study1,
    Study2,
    Study3a,
    Study3b,
    Study4,
}

impl StudyId {
    pub const ALL: [StudyId; 6] = [
        StudyId::Pattern,
        StudyId::Study1,
        StudyId::Study2,
        StudyId::Study3a,
        StudyId::Study3b,
        StudyId::Study4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StudyId::Pattern => "pattern",
            StudyId::Study1 => "study1",
            StudyId::Study2 => "study2",
            StudyId::Study3a => "study3a",
            StudyId::Study3b => "study3b",
            StudyId::Study4 => "study4",
        }
    }

    /// Stream tag separating the random draws of different studies.
    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for StudyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownStudy(s.to_string()))
    }
}

/// Beamforming strategy compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// `M` beams in one CPI, no taper.
    #[serde(rename = "raw", alias = "raw-m", alias = "raw-M")]
    Raw,
    /// `M N_stg` beams over `N_stg` CPIs, no taper.
    #[serde(rename = "multistage")]
    Multistage,
    /// `M N_stg` beams over `N_stg` CPIs with per-beam Kaiser windows.
    #[serde(rename = "multistage-windowed")]
    MultistageWindowed,
    /// One beam per transmit element in one CPI.
    #[serde(rename = "optimal-25", alias = "optimal")]
    Optimal,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Raw => "raw",
            Strategy::Multistage => "multistage",
            Strategy::MultistageWindowed => "multistage-windowed",
            Strategy::Optimal => "optimal",
        }
    }

    /// `(chains, stages)` used by this strategy.
    pub fn layout(self, chains: usize, stages: usize, transmit_elements: usize) -> (usize, usize) {
        match self {
            Strategy::Raw => (chains, 1),
            Strategy::Multistage | Strategy::MultistageWindowed => (chains, stages),
            Strategy::Optimal => (transmit_elements, 1),
        }
    }

    pub fn windowed(self) -> bool {
        self == Strategy::MultistageWindowed
    }

    /// Name plus total beam count, e.g. `multistage-windowed-9`.
    pub fn label(self, beams: usize) -> String {
        format!("{}-{}", self.name(), beams)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeMode {
    /// Evaluate each target at a known fast-time bin inside its echo.
    #[default]
    Oracle,
    /// Pick echo windows from the cube's energy profile.
    EnergyPeak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    /// Raw beam counts drawn alongside the staged configurations.
    pub raw_counts: Vec<usize>,
    /// Total beam counts of the window-design sweep.
    pub sweep: Vec<usize>,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            raw_counts: vec![5, 9, 15],
            sweep: vec![9, 12, 15, 18, 21, 24],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Study1Config {
    pub targets: Vec<TargetTruth>,
    pub snr_db: f64,
    pub snr_reference: SnrReference,
    /// Write the first trial's accumulated cube per configuration.
    pub dump_cube: bool,
}

impl Default for Study1Config {
    fn default() -> Self {
        let t = |range, velocity, angle| TargetTruth {
            range,
            velocity,
            angle,
            rcs_dbsm: 2.0,
        };
        Self {
            targets: vec![
                t(450.0, 1.0, -21.5),
                t(500.0, -2.0, 7.0),
                t(550.0, 3.0, 41.0),
            ],
            snr_db: 10.0,
            snr_reference: SnrReference::Fixed {
                range: 500.0,
                rcs_dbsm: 2.0,
            },
            dump_cube: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FovSweepConfig {
    pub range: f64,
    pub velocity: f64,
    pub rcs_dbsm: f64,
    pub snr_db: f64,
    /// Direction step; 2 deg at desk scale, 0.5 deg at full scale.
    pub step_deg: Option<f64>,
}

impl Default for FovSweepConfig {
    fn default() -> Self {
        Self {
            range: 250.0,
            velocity: 1.0,
            rcs_dbsm: 2.0,
            snr_db: 10.0,
            step_deg: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub num_targets: usize,
    pub range: [f64; 2],
    pub velocity: [f64; 2],
    pub rcs_dbsm: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_targets: 3,
            range: [250.0, 1500.0],
            velocity: [-30.0, 30.0],
            rcs_dbsm: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnrSweepConfig {
    pub snr_grid: Vec<f64>,
    pub scenario: ScenarioConfig,
}

impl Default for SnrSweepConfig {
    fn default() -> Self {
        Self {
            snr_grid: vec![-25.0, -15.0, -5.0, 5.0, 15.0, 25.0],
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramesConfig {
    pub frames: usize,
    pub lambda: f64,
    pub max_chains: usize,
    /// Sensing window as a whole number of CPIs.
    pub sensing_cpis: f64,
    pub snr_db: f64,
    pub scenario: ScenarioConfig,
}

impl Default for FramesConfig {
    fn default() -> Self {
        Self {
            frames: 10,
            lambda: 5.0,
            max_chains: 25,
            sensing_cpis: 3.0,
            snr_db: 10.0,
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub radar: RadarParams,
    pub fov: FieldOfView,
    pub configurations: Vec<Strategy>,
    /// Sensing RF chains `M` for the fixed-allocation studies.
    pub chains: usize,
    /// Stages `N_stg` for the fixed-allocation studies.
    pub stages: usize,
    pub plan: PlanConfig,
    pub seed: u64,
    /// Overrides the per-study trial count.
    pub trials: Option<usize>,
    /// Full-scale trial counts and sweep steps.
    pub full: bool,
    pub grid_step_deg: f64,
    /// Extra scan range beyond each FOV edge so edge targets can form peaks.
    pub scan_margin_deg: f64,
    pub loading: f64,
    pub association_deg: f64,
    pub range_mode: RangeMode,
    pub pattern: PatternConfig,
    pub study1: Study1Config,
    pub study3a: FovSweepConfig,
    pub study3b: SnrSweepConfig,
    pub study4: FramesConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            radar: RadarParams::default(),
            fov: FieldOfView::default(),
            configurations: vec![
                Strategy::Raw,
                Strategy::Multistage,
                Strategy::MultistageWindowed,
            ],
            chains: 3,
            stages: 3,
            plan: PlanConfig::default(),
            seed: 1,
            trials: None,
            full: false,
            grid_step_deg: DEFAULT_GRID_STEP_DEG,
            scan_margin_deg: 5.0,
            loading: DEFAULT_LOADING,
            association_deg: DEFAULT_ASSOCIATION_DEG,
            range_mode: RangeMode::Oracle,
            pattern: PatternConfig::default(),
            study1: Study1Config::default(),
            study3a: FovSweepConfig::default(),
            study3b: SnrSweepConfig::default(),
            study4: FramesConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        FieldOfView::new(self.fov.start(), self.fov.end())?;
        if self.configurations.is_empty() {
            return Err(Error::Parameter("no configurations to compare".into()));
        }
        if self.chains == 0 || self.stages == 0 {
            return Err(Error::Parameter(
                "chains and stages must be at least 1".into(),
            ));
        }
        if self.trials == Some(0) {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if !(self.grid_step_deg > 0.0) {
            return Err(Error::Parameter("grid step must be positive".into()));
        }
        if !(self.scan_margin_deg >= 0.0)
            || self.fov.end() + self.scan_margin_deg >= 90.0
            || self.fov.start() - self.scan_margin_deg <= -90.0
        {
            return Err(Error::Parameter(
                "scan margin must keep the scan inside (-90, 90)".into(),
            ));
        }
        if !(self.association_deg > 0.0) {
            return Err(Error::Parameter(
                "association threshold must be positive".into(),
            ));
        }
        if let Some(step) = self.study3a.step_deg {
            if !(step > 0.0) {
                return Err(Error::Parameter("direction step must be positive".into()));
            }
        }
        for s in [&self.study3b.scenario, &self.study4.scenario] {
            if s.num_targets == 0
                || !(s.range[0] > 0.0 && s.range[1] >= s.range[0])
                || s.velocity[1] < s.velocity[0]
            {
                return Err(Error::Parameter("invalid scenario distribution".into()));
            }
        }
        if self.study3b.snr_grid.is_empty() {
            return Err(Error::Parameter("SNR grid is empty".into()));
        }
        if self.study4.frames == 0 || !(self.study4.sensing_cpis > 0.0) {
            return Err(Error::Parameter(
                "study 4 needs frames and a positive sensing window".into(),
            ));
        }
        for t in &self.study1.targets {
            t.validate()?;
        }
        Ok(())
    }

    /// Trial count for `study`: explicit override, else desk or full scale.
    pub fn trials_for(&self, study: StudyId) -> usize {
        if let Some(t) = self.trials {
            return t;
        }
        match (study, self.full) {
            (StudyId::Pattern | StudyId::Study2, _) => 1,
            (StudyId::Study1 | StudyId::Study3a, false) => 50,
            (StudyId::Study1 | StudyId::Study3a, true) => 200,
            (StudyId::Study3b | StudyId::Study4, false) => 200,
            (StudyId::Study3b | StudyId::Study4, true) => 2000,
        }
    }

    pub fn direction_step(&self) -> f64 {
        self.study3a
            .step_deg
            .unwrap_or(if self.full { 0.5 } else { 2.0 })
    }
}
