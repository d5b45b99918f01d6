use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::scheduler::{AllocationProcess, FrameAllocation};
use crate::signal::write_cube;

use super::{PlanSummary, StudyConfig, StudyId, StudyResult};

fn write_csv<T: Serialize>(
    dir: &Path,
    name: &str,
    rows: &[T],
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    written.push(path);
    Ok(())
}

#[derive(Serialize)]
struct Versions {
    #[serde(rename = "dfrc-beamsim-core")]
    core: &'static str,
}

#[derive(Serialize)]
struct Timings {
    wall_seconds: f64,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    study: StudyId,
    seed: u64,
    full: bool,
    trials: usize,
    config: &'a StudyConfig,
    versions: Versions,
    timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    allocation_process: Option<AllocationProcess>,
    /// Poisson draws outside this range are clamped into it.
    #[serde(skip_serializing_if = "Option::is_none")]
    allocation_clamp: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    allocations: &'a [FrameAllocation],
    outputs: Vec<String>,
}

/// Write the study's CSV tables, `plans.json`, any cube dumps and `run.json`
/// into `dir`. Returns the written paths.
pub fn write_outputs(
    id: StudyId,
    result: &StudyResult,
    cfg: &StudyConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write_csv(dir, "patterns.csv", &result.patterns, &mut written)?;
    write_csv(dir, "beta.csv", &result.betas, &mut written)?;
    write_csv(dir, "spectrum.csv", &result.spectra, &mut written)?;
    write_csv(dir, "pd_rmse_fov.csv", &result.fov, &mut written)?;
    write_csv(dir, "pd_rmse_snr.csv", &result.snr, &mut written)?;
    write_csv(dir, "frames.csv", &result.frames, &mut written)?;
    write_csv(dir, "detections.csv", &result.detections, &mut written)?;
    if !result.plans.is_empty() {
        let path = dir.join("plans.json");
        std::fs::write(
            &path,
            serde_json::to_string_pretty::<[PlanSummary]>(&result.plans)?,
        )?;
        written.push(path);
    }
    for (label, cube) in &result.cubes {
        let path = dir.join(format!("cube_{label}.bin"));
        write_cube(&path, cube, &cfg.radar, Some(cfg.seed))?;
        written.push(path);
    }

    let is_study4 = id == StudyId::Study4;
    let mut outputs: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    outputs.push("run.json".into());
    let manifest = RunManifest {
        study: id,
        seed: cfg.seed,
        full: cfg.full,
        trials: result.trials,
        config: cfg,
        versions: Versions {
            core: env!("CARGO_PKG_VERSION"),
        },
        timings: Timings {
            wall_seconds: result.wall_seconds,
        },
        allocation_process: is_study4.then_some(AllocationProcess::Poisson {
            lambda: cfg.study4.lambda,
            max_chains: cfg.study4.max_chains,
        }),
        allocation_clamp: is_study4.then_some([1, cfg.study4.max_chains]),
        allocations: &result.allocations,
        outputs,
    };
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    written.push(path);
    Ok(written)
}
