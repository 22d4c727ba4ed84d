//! Averaging-principle experiments: coupled-noise comparison of the
//! fast-oscillation equation with its time average, plus the penalization,
//! increment-modulus and block-freezing diagnostics.

use rayon::prelude::*;

use crate::coefficients::{AveragedCoefficientSet, CoefficientSet};
use crate::error::{invalid, Result};
use crate::grid::{h_norm, path_distance_unchecked, Field};
use crate::noise::{sample_noise_path, NoisePath};
use crate::parallel::mean_and_stderr;
use crate::solver::{solve, ReflectedPath, Reflection, SchemeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingRow {
    pub epsilon: f64,
    /// Mean over paths of `sup_t |ū^ε − ū^0|²_H + ∫ ‖ū^ε − ū^0‖²_V dt`.
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
    /// Per-path squared distances, in path-index order.
    pub distances: Vec<f64>,
}

impl AveragingRow {
    /// Fraction of paths whose squared distance is at least `threshold`.
    pub fn exceedance_fraction(&self, threshold: f64) -> f64 {
        self.distances.iter().filter(|&&d| d >= threshold).count() as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingReport {
    pub rows: Vec<AveragingRow>,
    /// Seed of the noise ensemble shared by both equations in every comparison.
    pub coupling_seed: u64,
}

/// For each `ε` and each of `n` noise paths, solves the fast equation
/// (coefficients at `t/ε`) and the averaged equation on the same increments.
pub fn run_averaging_experiment(
    ms: &CoefficientSet,
    avg: &AveragedCoefficientSet,
    u0: &Field,
    eps_list: &[f64],
    n: usize,
    seed: u64,
    cfg: &SchemeConfig,
) -> Result<AveragingReport> {
    if n == 0 {
        return Err(invalid("averaging.samples", "must be at least 1"));
    }
    if ms.channels() != avg.channels() {
        return Err(crate::Error::DimensionMismatch {
            expected: ms.channels(),
            got: avg.channels(),
        });
    }
    for (i, &eps) in eps_list.iter().enumerate() {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(invalid(
                "averaging.epsilons",
                format!("must be positive, got {eps}"),
            ));
        }
        if eps_list[..i].contains(&eps) {
            return Err(invalid(
                "averaging.epsilons",
                format!("duplicate value {eps}"),
            ));
        }
    }
    let averaged = avg.to_coefficient_set();
    let avg_cfg = cfg.with_time_scale(1.0);
    let (dx, dt) = (cfg.grid.dx(), cfg.mesh.dt());
    let d = ms.channels();

    let slow: Vec<(NoisePath, ReflectedPath)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let noise = sample_noise_path(seed, i, cfg.mesh, d)?;
            let path = solve(&averaged, u0, Some(&noise), None, &avg_cfg)?;
            Ok((noise, path))
        })
        .collect::<Result<_>>()?;

    let rows = eps_list
        .iter()
        .map(|&eps| {
            let fast_cfg = cfg.with_time_scale(eps);
            let distances: Vec<f64> = slow
                .par_iter()
                .map(|(noise, reference)| {
                    let fast = solve(ms, u0, Some(noise), None, &fast_cfg)?;
                    Ok(path_distance_unchecked(fast.states(), reference.states(), dx, dt).squared)
                })
                .collect::<Result<_>>()?;
            let (mean, std_err) = mean_and_stderr(&distances);
            Ok(AveragingRow {
                epsilon: eps,
                mean,
                std_err,
                n,
                distances,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AveragingReport {
        rows,
        coupling_seed: seed,
    })
}

/// Number of whole steps in a time span, tolerant of round-off in `span / dt`.
fn whole_steps(span: f64, dt: f64) -> usize {
    (span / dt + 1e-9).floor() as usize
}

/// `max_s max_{v ∈ [s, s+l]} |u(v) − u(s)|²_H` over mesh points.
pub fn increment_modulus(p: &ReflectedPath, l: f64) -> Result<f64> {
    let mesh = p.mesh();
    if !(l > 0.0 && l < mesh.t_end()) {
        return Err(invalid(
            "modulus.l",
            format!("must lie in (0, {}), got {l}", mesh.t_end()),
        ));
    }
    let lag = whole_steps(l, mesh.dt());
    let dx = p.grid().dx();
    let states = p.states();
    let mut best: f64 = 0.0;
    for s in 0..states.len() {
        for v in s + 1..=(s + lag).min(states.len() - 1) {
            let d: f64 = states[v]
                .values()
                .iter()
                .zip(states[s].values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * dx;
            best = best.max(d);
        }
    }
    Ok(best)
}

/// Block-freezing deviation: with blocks of length `θ` (snapped to whole steps,
/// full blocks only) and the state frozen at each block start,
/// `Σ_b |u(t_b)|_H · |Σ_{s ∈ block b} Δt (f(s/ε, ·, u(t_b)) − f̄(·, u(t_b)))|_H`.
pub fn khasminskii_block_error(
    ms: &CoefficientSet,
    avg: &AveragedCoefficientSet,
    p: &ReflectedPath,
    theta: f64,
    eps: f64,
) -> Result<f64> {
    let mesh = p.mesh();
    if !(theta > 0.0 && theta <= mesh.t_end() * (1.0 + 1e-12)) {
        return Err(invalid(
            "khasminskii.theta",
            format!("must lie in (0, {}], got {theta}", mesh.t_end()),
        ));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid(
            "khasminskii.epsilon",
            format!("must be positive, got {eps}"),
        ));
    }
    let dt = mesh.dt();
    let len = whole_steps(theta, dt).max(1);
    let blocks = mesh.steps() / len;
    let grid = p.grid();
    let xs: Vec<f64> = grid.nodes().collect();
    let mut total = 0.0;
    for b in 0..blocks {
        let k0 = b * len;
        let frozen = p.state(k0);
        let mut acc = vec![0.0; grid.m()];
        for k in k0..k0 + len {
            let s = mesh.t(k) / eps;
            for (i, (&x, &z)) in xs.iter().zip(frozen.values()).enumerate() {
                acc[i] += dt * (ms.f(s, x, z) - avg.f_bar(x, z));
            }
        }
        total += h_norm(frozen, grid)? * h_norm(&Field(acc), grid)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyRow {
    pub n: f64,
    /// Squared path distance between the penalized and projection solutions.
    pub squared_distance: f64,
    /// Smallest value of the penalized solution.
    pub min_value: f64,
}

/// Solves the penalized scheme for each `n` and the projection scheme on the same noise.
pub fn penalization_convergence_probe(
    cs: &CoefficientSet,
    u0: &Field,
    n_list: &[f64],
    noise: &NoisePath,
    cfg: &SchemeConfig,
) -> Result<Vec<PenaltyRow>> {
    let projected = solve(
        cs,
        u0,
        Some(noise),
        None,
        &cfg.with_reflection(Reflection::Projection),
    )?;
    let (dx, dt) = (cfg.grid.dx(), cfg.mesh.dt());
    n_list
        .iter()
        .map(|&n| {
            let pen_cfg = cfg.with_reflection(Reflection::Penalized { n });
            pen_cfg.validate()?;
            let pen = solve(cs, u0, Some(noise), None, &pen_cfg)?;
            Ok(PenaltyRow {
                n,
                squared_distance: path_distance_unchecked(pen.states(), projected.states(), dx, dt)
                    .squared,
                min_value: pen.min_value(),
            })
        })
        .collect()
}
