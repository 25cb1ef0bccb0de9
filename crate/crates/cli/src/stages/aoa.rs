use std::collections::BTreeSet;
use std::io::Cursor;

use lexsig::signatures::read_signatures_csv;
use lexsig::trajectory::{
    aggregate_seeds, convergence_sweep, extract_aoa, smooth_moving_average, trajectories_from_signatures,
    write_aggregate_csv, write_aoa_csv, write_trajectories_csv, AoAResult, Trajectory,
};
use log::info;
use rayon::prelude::*;

use super::{clear_dir, csv_bytes, Run};
use crate::error::{CliError, Result};
use crate::stamp::{self, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct AoaSummary {
    pub trajectories: usize,
    pub converged: usize,
    pub aggregated: usize,
}

pub fn run_aoa(run: &Run) -> Result<AoaSummary> {
    let cfg = &run.cfg.aoa;
    let sig_stamp = run.stamp(Stage::Signatures)?;
    let stamp = run.stamp(Stage::Aoa)?;
    let layout = &run.layout;
    let body = stamp::read_text(&layout.signatures(), &sig_stamp)?;
    let values =
        read_signatures_csv(Cursor::new(body)).map_err(|e| CliError::from(e).context(layout.signatures().display()))?;
    let trajs = trajectories_from_signatures(&values)?;
    info!("extracting AoA from {} trajectories", trajs.len());

    let smoothed = trajs
        .iter()
        .map(|t| smooth_moving_average(t, cfg.window.min(largest_odd(t.len()))))
        .collect::<Result<Vec<_>, _>>()?;
    let results = run.install(|| {
        trajs
            .par_iter()
            .map(|t| extract_aoa(t, cfg.epsilon_for(t.kind), cfg.window))
            .collect::<Result<Vec<_>, _>>()
    })?;

    // The sweep also feeds the per-epsilon correlations in the report.
    let grid: Vec<f64> = {
        let mut g: Vec<f64> = cfg.epsilon_grid.clone();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g
    };
    let sweep: Vec<AoAResult> = run
        .install(|| {
            trajs
                .par_iter()
                .map(|t| {
                    grid.iter()
                        .map(|&e| extract_aoa(t, e, cfg.window))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })?
        .into_iter()
        .flatten()
        .collect();
    let nonconvergence = convergence_sweep(&trajs, &grid, cfg.window)?;
    let aggregate = aggregate_seeds(&results);

    clear_dir(&layout.root().join("aoa"))?;
    stamp::write_text(
        &layout.trajectories(),
        &stamp,
        &csv_bytes(|b| write_trajectories_csv(b, &trajs))?,
    )?;
    stamp::write_text(
        &layout.smoothed_trajectories(),
        &stamp,
        &csv_bytes(|b| write_trajectories_csv(b, &smoothed))?,
    )?;
    stamp::write_text(&layout.aoa(), &stamp, &csv_bytes(|b| write_aoa_csv(b, &results))?)?;
    stamp::write_text(&layout.aoa_sweep(), &stamp, &csv_bytes(|b| write_aoa_csv(b, &sweep))?)?;
    let sweep_csv = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        for row in &nonconvergence {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    })?;
    stamp::write_text(&layout.nonconvergence(), &stamp, &sweep_csv)?;
    stamp::write_text(
        &layout.aggregate(),
        &stamp,
        &csv_bytes(|b| write_aggregate_csv(b, &aggregate.rows))?,
    )?;
    let excluded_csv = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["word", "family", "polarity", "epsilon", "failed_seeds"])?;
        for row in &aggregate.excluded {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    })?;
    stamp::write_text(&layout.aggregate_excluded(), &stamp, &excluded_csv)?;

    let words: BTreeSet<&str> = aggregate.excluded.iter().map(|e| e.word.as_str()).collect();
    if !words.is_empty() {
        info!(
            "{} words fail to converge in some seed for at least one signature",
            words.len()
        );
    }
    Ok(AoaSummary {
        trajectories: trajs.len(),
        converged: results.iter().filter(|r| r.converged).count(),
        aggregated: aggregate.rows.len(),
    })
}

fn largest_odd(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n.saturating_sub(1).max(1)
    }
}

/// Trajectories as written by [`run_aoa`], raw then smoothed.
pub fn read_trajectories(run: &Run) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let stamp = run.stamp(Stage::Aoa)?;
    let read = |path: std::path::PathBuf| -> Result<Vec<Trajectory>> {
        let body = stamp::read_text(&path, &stamp)?;
        lexsig::trajectory::read_trajectories_csv(Cursor::new(body))
            .map_err(|e| CliError::from(e).context(path.display()))
    };
    Ok((
        read(run.layout.trajectories())?,
        read(run.layout.smoothed_trajectories())?,
    ))
}
