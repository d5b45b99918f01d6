//! One Monte-Carlo trial: synthesize the staged cubes for a scene, run
//! Capon on the chosen range bins and score the estimates.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::array::{angle_grid, ArrayGeometry, FieldOfView};
use crate::doa::{
    associate, capon_spectrum, find_peaks, sample_covariance, AngularSpectrum, RangeSlice, ScanGrid,
};
use crate::error::Result;
use crate::rng::{substream, STREAM_SCENARIO};
use crate::scheduler::{build_stage_plan, FrameAllocation, PlanConfig, StagePlan};
use crate::signal::{
    accumulate_cubes, peak_transmit_gain, simulate_stage_cube, target_amplitudes, AccumulatedCube,
    FastTime, Noise, RadarParams, SnrCalibration, TargetTruth,
};

use super::config::{RangeMode, ScenarioConfig, Strategy, StudyConfig};

/// Shared, read-only state of a study run.
pub struct Context {
    pub params: RadarParams,
    pub tx: ArrayGeometry,
    pub fov: FieldOfView,
    pub pattern_grid: Vec<f64>,
    pub scan: ScanGrid,
    pub plan: PlanConfig,
    pub loading: f64,
    pub threshold: f64,
    pub range_mode: RangeMode,
    pub seed: u64,
}

impl Context {
    pub fn new(cfg: &StudyConfig) -> Result<Self> {
        cfg.validate()?;
        let tx = cfg.radar.transmit_geometry()?;
        let rx = cfg.radar.receive_geometry()?;
        let scan_grid = angle_grid(
            cfg.fov.start() - cfg.scan_margin_deg,
            cfg.fov.end() + cfg.scan_margin_deg,
            cfg.grid_step_deg,
        );
        Ok(Self {
            params: cfg.radar,
            tx,
            fov: cfg.fov,
            pattern_grid: cfg.fov.grid(cfg.grid_step_deg),
            scan: ScanGrid::new(&rx, &scan_grid)?,
            plan: cfg.plan,
            loading: cfg.loading,
            threshold: cfg.association_deg,
            range_mode: cfg.range_mode,
            seed: cfg.seed,
        })
    }
}

/// A strategy's stage plan for one frame, with its pattern peak.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub strategy: Strategy,
    pub label: String,
    pub chains: usize,
    pub plan: StagePlan,
    pub peak_gain: f64,
}

pub fn prepare(
    ctx: &Context,
    strategy: Strategy,
    chains: usize,
    stages: usize,
    frame_index: usize,
) -> Result<Prepared> {
    let (m, n) = strategy.layout(chains, stages, ctx.params.transmit_elements);
    let allocation = FrameAllocation {
        frame_index,
        sensing_chains: m,
        sensing_duration: n as f64 * ctx.params.timing.cpi_duration(),
        num_stages: n,
        drawn: None,
    };
    let cfg = PlanConfig {
        windowing: strategy.windowed(),
        ..ctx.plan
    };
    let plan = build_stage_plan(&allocation, &ctx.fov, &ctx.tx, &cfg)?;
    let peak_gain = peak_transmit_gain(&plan, &ctx.tx, &ctx.pattern_grid)?;
    Ok(Prepared {
        strategy,
        label: strategy.label(m * n),
        chains: m,
        plan,
        peak_gain,
    })
}

/// Fast-time bin where a target is scored and the targets whose echoes
/// share that bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OracleBin {
    pub bin: usize,
    pub present: Vec<usize>,
}

fn present_at(starts: &[usize], ns: usize, q: usize) -> Vec<usize> {
    (0..starts.len())
        .filter(|&i| starts[i] <= q && q < starts[i] + ns)
        .collect()
}

/// For each target, the bin inside its echo shared with the fewest other
/// echoes (earliest on ties).
pub fn oracle_bins(targets: &[TargetTruth], params: &RadarParams) -> Vec<OracleBin> {
    let ns = params.pulse_samples();
    let q_max = params.fast_time_len();
    let starts: Vec<usize> = targets.iter().map(|t| params.range_bin(t.range)).collect();
    starts
        .iter()
        .map(|&q0| {
            let mut best: Option<OracleBin> = None;
            for q in q0..(q0 + ns).min(q_max) {
                let present = present_at(&starts, ns, q);
                if best
                    .as_ref()
                    .is_none_or(|b| present.len() < b.present.len())
                {
                    best = Some(OracleBin { bin: q, present });
                }
            }
            best.unwrap_or(OracleBin {
                bin: q0,
                present: present_at(&starts, ns, q0),
            })
        })
        .collect()
}

/// The bin shared by the most echoes (earliest on ties).
pub fn busiest_bin(targets: &[TargetTruth], params: &RadarParams) -> Option<usize> {
    let ns = params.pulse_samples();
    let starts: Vec<usize> = targets.iter().map(|t| params.range_bin(t.range)).collect();
    let mut best: Option<(usize, usize)> = None;
    for &q0 in &starts {
        for q in q0..(q0 + ns).min(params.fast_time_len()) {
            let n = present_at(&starts, ns, q).len();
            let better = match best {
                None => true,
                Some((bq, bn)) => n > bn || (n == bn && q < bq),
            };
            if better {
                best = Some((q, n));
            }
        }
    }
    best.map(|(q, _)| q)
}

pub struct TrialInput<'a> {
    pub targets: &'a [TargetTruth],
    pub snr: SnrCalibration,
    pub noise_key: u64,
    pub spectrum_bin: Option<usize>,
    pub keep_cube: bool,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    /// Angle error per target, `None` when missed.
    pub errors: Vec<Option<f64>>,
    pub estimates: Vec<Vec<f64>>,
    pub spectrum: Option<AngularSpectrum>,
    pub cube: Option<AccumulatedCube>,
}

fn spectrum_at(ctx: &Context, cube: &AccumulatedCube, bin: usize) -> Result<AngularSpectrum> {
    let slice = RangeSlice::from_cube(cube, bin)?;
    capon_spectrum(&sample_covariance(&slice, ctx.loading)?, &ctx.scan)
}

/// Echo windows picked greedily from the sliding energy of a full cube.
fn energy_peaks(cube: &AccumulatedCube, ns: usize, count: usize) -> Vec<usize> {
    let energy = cube.cube().bin_energy();
    let n = energy.len();
    if n < ns || ns == 0 {
        return Vec::new();
    }
    let mut window: Vec<f64> = Vec::with_capacity(n - ns + 1);
    let mut s: f64 = energy[..ns].iter().sum();
    window.push(s);
    for q in ns..n {
        s += energy[q] - energy[q - ns];
        window.push(s);
    }
    let mut taken = vec![false; window.len()];
    let mut out = Vec::new();
    for _ in 0..count {
        let best = (0..window.len())
            .filter(|&q| !taken[q])
            .max_by(|&a, &b| window[a].total_cmp(&window[b]).then(b.cmp(&a)));
        let Some(q) = best else { break };
        out.push(q);
        let hi = (q + ns).min(window.len());
        taken[q.saturating_sub(ns)..hi].fill(true);
    }
    out
}

pub fn run_trial(ctx: &Context, prep: &Prepared, input: &TrialInput) -> Result<TrialOutcome> {
    let params = &ctx.params;
    let amplitudes = target_amplitudes(
        input.targets,
        &input.snr,
        prep.peak_gain,
        prep.plan.num_stages(),
        params.noise_power(),
    );
    let oracle = oracle_bins(input.targets, params);
    let selection = match ctx.range_mode {
        RangeMode::Oracle if !input.keep_cube => {
            let mut bins: Vec<usize> = oracle.iter().map(|o| o.bin).collect();
            bins.extend(input.spectrum_bin);
            FastTime::Bins(bins)
        }
        _ => FastTime::All,
    };
    let cubes = prep
        .plan
        .stages
        .iter()
        .enumerate()
        .map(|(j, stage)| {
            let noise = Noise::Thermal {
                seed: ctx.seed,
                trial: input.noise_key,
                stage: j as u64,
            };
            simulate_stage_cube(
                stage,
                prep.plan.phase_reference,
                input.targets,
                &amplitudes,
                params,
                noise,
                &selection,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cube = accumulate_cubes(cubes)?;

    let truths: Vec<f64> = input.targets.iter().map(|t| t.angle).collect();
    let mut errors = vec![None; truths.len()];
    let mut estimates = Vec::new();
    match ctx.range_mode {
        RangeMode::Oracle => {
            let mut peaks_by_bin: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            for (k, o) in oracle.iter().enumerate() {
                let key = (o.bin, o.present.len());
                let peaks = match peaks_by_bin.entry(key) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => e.insert(find_peaks(
                        &spectrum_at(ctx, &cube, o.bin)?,
                        o.present.len(),
                    )),
                };
                let present: Vec<f64> = o.present.iter().map(|&i| truths[i]).collect();
                let report = associate(peaks, &present, ctx.threshold)?;
                let own = o
                    .present
                    .iter()
                    .position(|&i| i == k)
                    .expect("target present in its own bin");
                errors[k] = report.match_for(own).map(|m| m.error);
                estimates.push(peaks.clone());
            }
        }
        RangeMode::EnergyPeak => {
            let mut pooled = Vec::new();
            for q in energy_peaks(&cube, params.pulse_samples(), truths.len()) {
                let peaks = find_peaks(&spectrum_at(ctx, &cube, q)?, 1);
                pooled.extend(peaks.iter().copied());
                estimates.push(peaks);
            }
            let report = associate(&pooled, &truths, ctx.threshold)?;
            for m in &report.matches {
                errors[m.truth] = Some(m.error);
            }
        }
    }
    let spectrum = input
        .spectrum_bin
        .map(|b| spectrum_at(ctx, &cube, b))
        .transpose()?;
    Ok(TrialOutcome {
        errors,
        estimates,
        spectrum,
        cube: input.keep_cube.then_some(cube),
    })
}

/// Random scene: uniform ranges, velocities and FOV angles.
pub fn draw_scenario(
    seed: u64,
    keys: &[u64],
    scenario: &ScenarioConfig,
    fov: &FieldOfView,
) -> Vec<TargetTruth> {
    let mut path = vec![STREAM_SCENARIO];
    path.extend_from_slice(keys);
    let mut rng = substream(seed, &path);
    (0..scenario.num_targets)
        .map(|_| TargetTruth {
            range: rng.random_range(scenario.range[0]..=scenario.range[1]),
            velocity: rng.random_range(scenario.velocity[0]..=scenario.velocity[1]),
            angle: rng.random_range(fov.start()..=fov.end()),
            rcs_dbsm: scenario.rcs_dbsm,
        })
        .collect()
}
