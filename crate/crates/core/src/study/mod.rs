//! Seeded Monte-Carlo studies and their CSV/JSON outputs.

pub mod config;
pub mod engine;
pub mod output;

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::array::{angle_grid, cumulative_pattern, BeamSet, TaperedBeam};
use crate::doa::MetricsAccumulator;
use crate::error::Result;
use crate::rng::fold_key;
use crate::scheduler::{allocate_chains, AllocationProcess, FrameAllocation, StagePlan};
use crate::signal::{AccumulatedCube, SnrCalibration, SnrReference, TargetTruth};
use crate::window::{design_windows, WindowTable, WindowedBeam};

pub use config::{RangeMode, Strategy, StudyConfig, StudyId};
use engine::{busiest_bin, draw_scenario, prepare, run_trial, Context, Prepared, TrialInput};
pub use output::write_outputs;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternRow {
    pub angle_deg: f64,
    pub config: String,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaRow {
    pub mn_stg: usize,
    pub beam_index: usize,
    pub beam_angle_deg: f64,
    pub beta: f64,
    pub window_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub angle_deg: f64,
    pub config: String,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FovRow {
    pub angle_deg: f64,
    pub config: String,
    pub pd: f64,
    pub rmse_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrRow {
    pub snr_db: f64,
    pub config: String,
    pub pd: f64,
    pub rmse_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRow {
    pub frame_index: usize,
    pub allocated_chains: usize,
    pub config: String,
    pub pd: f64,
    pub rmse_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub trial: usize,
    pub config: String,
    pub truth_index: usize,
    pub truth_deg: f64,
    pub matched: bool,
    pub error_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSummary {
    pub label: String,
    pub frame_index: usize,
    pub chains: usize,
    pub stages: usize,
    pub windows: WindowTable,
}

impl PlanSummary {
    fn from_prepared(p: &Prepared) -> Self {
        Self {
            label: p.label.clone(),
            frame_index: p.plan.frame_index,
            chains: p.chains,
            stages: p.plan.num_stages(),
            windows: p.plan.window_table(),
        }
    }
}

/// Tables produced by a study; empty tables are not written.
#[derive(Debug, Clone, Default)]
pub struct StudyResult {
    pub patterns: Vec<PatternRow>,
    pub betas: Vec<BetaRow>,
    pub spectra: Vec<SpectrumRow>,
    pub fov: Vec<FovRow>,
    pub snr: Vec<SnrRow>,
    pub frames: Vec<FrameRow>,
    pub detections: Vec<DetectionRow>,
    pub plans: Vec<PlanSummary>,
    pub allocations: Vec<FrameAllocation>,
    pub cubes: Vec<(String, AccumulatedCube)>,
    pub trials: usize,
    pub wall_seconds: f64,
}

impl StudyResult {
    /// Smallest pattern gain of one configuration.
    pub fn pattern_min_db(&self, config: &str) -> Option<f64> {
        self.patterns
            .iter()
            .filter(|r| r.config == config)
            .map(|r| r.gain_db)
            .reduce(f64::min)
    }

    pub fn pattern_db_at(&self, config: &str, angle: f64) -> Option<f64> {
        self.patterns
            .iter()
            .filter(|r| r.config == config)
            .min_by(|a, b| {
                (a.angle_deg - angle)
                    .abs()
                    .total_cmp(&(b.angle_deg - angle).abs())
            })
            .map(|r| r.gain_db)
    }
}

pub fn run_study(id: StudyId, cfg: &StudyConfig) -> Result<StudyResult> {
    let start = Instant::now();
    let mut result = match id {
        StudyId::Pattern => run_pattern_study(cfg),
        StudyId::Study1 => run_study1(cfg),
        StudyId::Study2 => run_study2(cfg),
        StudyId::Study3a => run_study3_fov(cfg),
        StudyId::Study3b => run_study3_snr(cfg),
        StudyId::Study4 => run_study4(cfg),
    }?;
    result.wall_seconds = start.elapsed().as_secs_f64();
    Ok(result)
}

fn pattern_rows(
    ctx: &Context,
    label: &str,
    beams: &[WindowedBeam],
    reference: crate::array::PhaseReference,
) -> Result<Vec<PatternRow>> {
    let tapered: Vec<TaperedBeam> = beams
        .iter()
        .map(|b| TaperedBeam {
            angle_deg: b.direction,
            taper: Some(b.taper()),
        })
        .collect();
    let db = cumulative_pattern(&ctx.tx, &tapered, &ctx.pattern_grid, reference)?;
    Ok(ctx
        .pattern_grid
        .iter()
        .zip(db)
        .map(|(&angle_deg, gain_db)| PatternRow {
            angle_deg,
            config: label.to_string(),
            gain_db,
        })
        .collect())
}

fn plan_pattern(ctx: &Context, label: &str, plan: &StagePlan) -> Result<Vec<PatternRow>> {
    let beams: Vec<WindowedBeam> = plan.beams().cloned().collect();
    pattern_rows(ctx, label, &beams, plan.phase_reference)
}

/// Windowed design for `count` beams across the FOV, outside any stage plan.
fn sweep_design(ctx: &Context, count: usize) -> Result<(BeamSet, Vec<WindowedBeam>)> {
    let set = BeamSet::from_fov(&ctx.fov, count, ctx.plan.placement, &ctx.tx)?;
    let specs = design_windows(&set, &ctx.tx, &ctx.plan.design)?;
    let beams = set
        .directions()
        .iter()
        .zip(&specs)
        .map(|(&d, s)| WindowedBeam::new(d, *s, &ctx.tx, ctx.plan.phase_reference))
        .collect::<Result<Vec<_>>>()?;
    Ok((set, beams))
}

fn beta_rows(ctx: &Context, sweep: &[usize]) -> Result<Vec<BetaRow>> {
    let mut rows = Vec::new();
    for &mn in sweep {
        let (set, beams) = sweep_design(ctx, mn)?;
        for (i, (d, b)) in set.directions().iter().zip(&beams).enumerate() {
            rows.push(BetaRow {
                mn_stg: mn,
                beam_index: i,
                beam_angle_deg: *d,
                beta: b.window.beta,
                window_length: b.window.length,
            });
        }
    }
    Ok(rows)
}

/// Cumulative patterns of raw beam sets, the compared configurations and the
/// full 25-beam reference, plus the window-design sweep.
pub fn run_pattern_study(cfg: &StudyConfig) -> Result<StudyResult> {
    let ctx = Context::new(cfg)?;
    let mut result = StudyResult {
        trials: 1,
        ..Default::default()
    };
    let mut prepared: Vec<Prepared> = Vec::new();
    for &n in &cfg.pattern.raw_counts {
        prepared.push(prepare(&ctx, Strategy::Raw, n, 1, 0)?);
    }
    for &s in cfg
        .configurations
        .iter()
        .chain(std::iter::once(&Strategy::Optimal))
    {
        prepared.push(prepare(&ctx, s, cfg.chains, cfg.stages, 0)?);
    }
    let mut seen = std::collections::HashSet::new();
    prepared.retain(|p| seen.insert(p.label.clone()));
    for p in &prepared {
        result
            .patterns
            .extend(plan_pattern(&ctx, &p.label, &p.plan)?);
        result.plans.push(PlanSummary::from_prepared(p));
    }
    result.betas = beta_rows(&ctx, &cfg.pattern.sweep)?;
    Ok(result)
}

/// Window-design sweep over total beam counts with the windowed patterns.
pub fn run_study2(cfg: &StudyConfig) -> Result<StudyResult> {
    let ctx = Context::new(cfg)?;
    let mut result = StudyResult {
        trials: 1,
        ..Default::default()
    };
    for &mn in &cfg.pattern.sweep {
        let (_, beams) = sweep_design(&ctx, mn)?;
        let label = Strategy::MultistageWindowed.label(mn);
        result.patterns.extend(pattern_rows(
            &ctx,
            &label,
            &beams,
            ctx.plan.phase_reference,
        )?);
    }
    let optimal = prepare(&ctx, Strategy::Optimal, cfg.chains, cfg.stages, 0)?;
    result
        .patterns
        .extend(plan_pattern(&ctx, &optimal.label, &optimal.plan)?);
    result.betas = beta_rows(&ctx, &cfg.pattern.sweep)?;
    Ok(result)
}

fn prepare_all(
    ctx: &Context,
    cfg: &StudyConfig,
    chains: usize,
    stages: usize,
    frame: usize,
) -> Result<Vec<Prepared>> {
    cfg.configurations
        .iter()
        .map(|&s| prepare(ctx, s, chains, stages, frame))
        .collect()
}

fn spectrum_rows(label: &str, spectrum: &crate::doa::AngularSpectrum) -> Vec<SpectrumRow> {
    spectrum
        .grid
        .iter()
        .zip(spectrum.normalized_db())
        .map(|(&angle_deg, power_db)| SpectrumRow {
            angle_deg,
            config: label.to_string(),
            power_db,
        })
        .collect()
}

/// Fixed three-target scene scored over repeated noise draws.
pub fn run_study1(cfg: &StudyConfig) -> Result<StudyResult> {
    let ctx = Context::new(cfg)?;
    let trials = cfg.trials_for(StudyId::Study1);
    let targets: &[TargetTruth] = &cfg.study1.targets;
    let snr = SnrCalibration {
        snr_db: cfg.study1.snr_db,
        reference: cfg.study1.snr_reference,
    };
    let spectrum_bin = busiest_bin(targets, &ctx.params);
    let tag = StudyId::Study1.tag();
    let mut result = StudyResult {
        trials,
        ..Default::default()
    };
    for prep in prepare_all(&ctx, cfg, cfg.chains, cfg.stages, 0)? {
        let outcomes = (0..trials)
            .into_par_iter()
            .map(|t| {
                let input = TrialInput {
                    targets,
                    snr,
                    noise_key: fold_key(&[tag, t as u64]),
                    spectrum_bin: if t == 0 { spectrum_bin } else { None },
                    keep_cube: t == 0 && cfg.study1.dump_cube,
                };
                run_trial(&ctx, &prep, &input)
            })
            .collect::<Result<Vec<_>>>()?;
        for (t, out) in outcomes.into_iter().enumerate() {
            for (k, e) in out.errors.iter().enumerate() {
                result.detections.push(DetectionRow {
                    trial: t,
                    config: prep.label.clone(),
                    truth_index: k,
                    truth_deg: targets[k].angle,
                    matched: e.is_some(),
                    error_deg: *e,
                });
            }
            if let Some(s) = &out.spectrum {
                result.spectra.extend(spectrum_rows(&prep.label, s));
            }
            if let Some(c) = out.cube {
                result.cubes.push((prep.label.clone(), c));
            }
        }
        result.plans.push(PlanSummary::from_prepared(&prep));
    }
    Ok(result)
}

/// Single target swept across the FOV.
pub fn run_study3_fov(cfg: &StudyConfig) -> Result<StudyResult> {
    let ctx = Context::new(cfg)?;
    let trials = cfg.trials_for(StudyId::Study3a);
    let directions = angle_grid(cfg.fov.start(), cfg.fov.end(), cfg.direction_step());
    let s = &cfg.study3a;
    let snr = SnrCalibration {
        snr_db: s.snr_db,
        reference: SnrReference::PerTarget,
    };
    let tag = StudyId::Study3a.tag();
    let mut result = StudyResult {
        trials,
        ..Default::default()
    };
    for prep in prepare_all(&ctx, cfg, cfg.chains, cfg.stages, 0)? {
        let errors = (0..directions.len() * trials)
            .into_par_iter()
            .map(|n| {
                let (i, t) = (n / trials, n % trials);
                let target = [TargetTruth {
                    range: s.range,
                    velocity: s.velocity,
                    angle: directions[i],
                    rcs_dbsm: s.rcs_dbsm,
                }];
                let input = TrialInput {
                    targets: &target,
                    snr,
                    noise_key: fold_key(&[tag, i as u64, t as u64]),
                    spectrum_bin: None,
                    keep_cube: false,
                };
                run_trial(&ctx, &prep, &input).map(|o| o.errors[0])
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, chunk) in errors.chunks(trials).enumerate() {
            let mut acc = MetricsAccumulator::default();
            chunk.iter().for_each(|e| acc.add(*e));
            let m = acc.finish();
            result.fov.push(FovRow {
                angle_deg: directions[i],
                config: prep.label.clone(),
                pd: m.pd,
                rmse_deg: m.rmse,
            });
        }
        result.plans.push(PlanSummary::from_prepared(&prep));
    }
    Ok(result)
}

/// Per-scenario target errors for one prepared configuration.
fn score_scenarios(
    ctx: &Context,
    prep: &Prepared,
    scenarios: &[Vec<TargetTruth>],
    snr: SnrCalibration,
    keys: impl Fn(usize) -> u64 + Sync,
) -> Result<MetricsAccumulator> {
    let per = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, targets)| {
            let input = TrialInput {
                targets,
                snr,
                noise_key: keys(i),
                spectrum_bin: None,
                keep_cube: false,
            };
            run_trial(ctx, prep, &input).map(|o| o.errors)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = MetricsAccumulator::default();
    per.iter().flatten().for_each(|e| acc.add(*e));
    Ok(acc)
}

/// Random three-target scenes over an SNR grid.
pub fn run_study3_snr(cfg: &StudyConfig) -> Result<StudyResult> {
    let ctx = Context::new(cfg)?;
    let trials = cfg.trials_for(StudyId::Study3b);
    let tag = StudyId::Study3b.tag();
    let scenarios: Vec<Vec<TargetTruth>> = (0..trials)
        .map(|s| {
            draw_scenario(
                cfg.seed,
                &[tag, 0, s as u64],
                &cfg.study3b.scenario,
                &cfg.fov,
            )
        })
        .collect();
    let mut result = StudyResult {
        trials,
        ..Default::default()
    };
    let prepared = prepare_all(&ctx, cfg, cfg.chains, cfg.stages, 0)?;
    for &snr_db in &cfg.study3b.snr_grid {
        let snr = SnrCalibration {
            snr_db,
            reference: SnrReference::PerTarget,
        };
        for prep in &prepared {
            let m = score_scenarios(&ctx, prep, &scenarios, snr, |s| fold_key(&[tag, s as u64]))?
                .finish();
            result.snr.push(SnrRow {
                snr_db,
                config: prep.label.clone(),
                pd: m.pd,
                rmse_deg: m.rmse,
            });
        }
    }
    result.plans = prepared.iter().map(PlanSummary::from_prepared).collect();
    Ok(result)
}

/// Frames with a random number of sensing RF chains.
pub fn run_study4(cfg: &StudyConfig) -> Result<StudyResult> {
    let ctx = Context::new(cfg)?;
    let trials = cfg.trials_for(StudyId::Study4);
    let f4 = &cfg.study4;
    let tag = StudyId::Study4.tag();
    let process = AllocationProcess::Poisson {
        lambda: f4.lambda,
        max_chains: f4.max_chains,
    };
    let sensing = f4.sensing_cpis * ctx.params.timing.cpi_duration();
    let snr = SnrCalibration {
        snr_db: f4.snr_db,
        reference: SnrReference::PerTarget,
    };
    let mut result = StudyResult {
        trials,
        ..Default::default()
    };
    for frame in 0..f4.frames {
        let alloc = allocate_chains(&process, frame, sensing, &ctx.params.timing, cfg.seed)?;
        result.allocations.push(alloc);
        if !alloc.is_usable() {
            continue;
        }
        let scenarios: Vec<Vec<TargetTruth>> = (0..trials)
            .map(|s| {
                draw_scenario(
                    cfg.seed,
                    &[tag, frame as u64, s as u64],
                    &f4.scenario,
                    &cfg.fov,
                )
            })
            .collect();
        for prep in prepare_all(&ctx, cfg, alloc.sensing_chains, alloc.num_stages, frame)? {
            let m = score_scenarios(&ctx, &prep, &scenarios, snr, |s| {
                fold_key(&[tag, frame as u64, s as u64])
            })?
            .finish();
            result.frames.push(FrameRow {
                frame_index: frame,
                allocated_chains: alloc.sensing_chains,
                config: prep.strategy.name().to_string(),
                pd: m.pd,
                rmse_deg: m.rmse,
            });
            result.plans.push(PlanSummary::from_prepared(&prep));
        }
    }
    Ok(result)
}
