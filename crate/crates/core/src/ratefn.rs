//! Rate function evaluation by control optimization over the skeleton
//! equation, and sampling probes of its level sets.
//!
//! `Λ(φ) = ½ inf { ∫|h|² : u^{0,h} = φ }` is approximated by minimizing the
//! penalized objective `J_μ(h) = ½ Σ|h_b|² Δt + μ ρ²(u^{0,h}, φ)` over
//! piecewise-constant controls, for a geometric schedule of `μ`. An empty
//! constraint set shows up as a residual floor (`converged = false`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::grid::{path_distance, path_distance_unchecked, Field};
use crate::solver::{solve_skeleton, Control, ReflectedPath, SchemeConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    /// Number of piecewise-constant control blocks.
    pub blocks: usize,
    /// First penalty weight.
    pub mu0: f64,
    /// Penalty growth per stage.
    pub mu_factor: f64,
    pub stages: usize,
    /// Initial step length of the first iteration.
    pub step_size: f64,
    /// Iteration cap per stage.
    pub max_iters: usize,
    /// Squared-distance residual at or below which the result counts as converged.
    pub tol: f64,
    /// Central finite-difference half-width.
    pub fd_step: f64,
    /// Box `|h_b,j| ≤ h_bound` onto which iterates are projected.
    pub h_bound: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            blocks: 8,
            mu0: 1.0,
            mu_factor: 10.0,
            stages: 4,
            step_size: 1.0,
            max_iters: 200,
            tol: 1e-3,
            fd_step: 1e-5,
            h_bound: 1e3,
        }
    }
}

impl RateOptions {
    fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(invalid("ratefn.blocks", "must be at least 1"));
        }
        if self.stages == 0 {
            return Err(invalid("ratefn.stages", "must be at least 1"));
        }
        for (name, v) in [
            ("ratefn.mu0", self.mu0),
            ("ratefn.mu_factor", self.mu_factor),
            ("ratefn.step_size", self.step_size),
            ("ratefn.fd_step", self.fd_step),
            ("ratefn.h_bound", self.h_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("ratefn.tol", "must be nonnegative"));
        }
        Ok(())
    }
}

/// One accepted iterate (iteration 0 of a stage is its starting point).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub stage: usize,
    pub mu: f64,
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFunctionResult {
    /// `½ ∫ |h*|²`
    pub lambda_hat: f64,
    pub h_star: Control,
    /// Squared path distance between the skeleton under `h*` and the target.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

struct Objective<'a> {
    cs: &'a CoefficientSet,
    u0: &'a Field,
    target: &'a [Field],
    cfg: SchemeConfig,
}

impl Objective<'_> {
    /// Squared distance to the target; a blown-up skeleton counts as infinitely far.
    fn residual(&self, h: &Control) -> f64 {
        match solve_skeleton(self.cs, self.u0, h, &self.cfg) {
            Ok(p) => {
                path_distance_unchecked(
                    p.states(),
                    self.target,
                    self.cfg.grid.dx(),
                    self.cfg.mesh.dt(),
                )
                .squared
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn gradient(&self, h: &Control, mu: f64, fd: f64) -> Vec<f64> {
        let n = h.values().len();
        let dt_b = h.block_len();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut plus = h.clone();
                let mut minus = h.clone();
                plus.values_mut()[i] += fd;
                minus.values_mut()[i] -= fd;
                let dr = (self.residual(&plus) - self.residual(&minus)) / (2.0 * fd);
                h.values()[i] * dt_b + mu * dr
            })
            .collect()
    }
}

fn project(values: &mut [f64], bound: f64) {
    for v in values {
        *v = v.clamp(-bound, bound);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Estimates `Λ_{u0}(target)` over controls with `opt.blocks` blocks.
pub fn rate_function(
    cs: &CoefficientSet,
    u0: &Field,
    target: &[Field],
    cfg: &SchemeConfig,
    opt: &RateOptions,
) -> Result<RateFunctionResult> {
    opt.validate()?;
    cfg.validate()?;
    // validates the target against the mesh and grid
    path_distance(target, target, &cfg.grid, &cfg.mesh)?;
    let obj = Objective {
        cs,
        u0,
        target,
        cfg: *cfg,
    };
    // surfaces input errors (negative u0, dimension mismatches) instead of an infinite residual
    solve_skeleton(
        cs,
        u0,
        &Control::zeros(cfg.mesh.t_end(), cs.channels(), opt.blocks)?,
        cfg,
    )?;

    let mut h = Control::zeros(cfg.mesh.t_end(), cs.channels(), opt.blocks)?;
    let mut residual = obj.residual(&h);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut mu = opt.mu0;

    for stage in 0..opt.stages {
        let mut objective = h.energy() + mu * residual;
        history.push(IterationRecord {
            stage,
            mu,
            iteration: 0,
            objective,
            residual,
            energy: h.energy(),
        });
        let mut step = opt.step_size;
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for it in 1..=opt.max_iters {
            let grad = obj.gradient(&h, mu, opt.fd_step);
            let gnorm2 = dot(&grad, &grad);
            if gnorm2 == 0.0 || !gnorm2.is_finite() {
                break;
            }
            // Barzilai-Borwein step from the previous accepted move
            if let Some((s, g_old)) = &prev {
                let y: Vec<f64> = grad.iter().zip(g_old).map(|(a, b)| a - b).collect();
                let sy = dot(s, &y);
                if sy > 0.0 {
                    step = dot(s, s) / sy;
                }
            }
            let mut accepted = None;
            let mut trial_step = step;
            for _ in 0..40 {
                let mut cand = h.clone();
                for (v, g) in cand.values_mut().iter_mut().zip(&grad) {
                    *v -= trial_step * g;
                }
                project(cand.values_mut(), opt.h_bound);
                let moved: Vec<f64> = cand
                    .values()
                    .iter()
                    .zip(h.values())
                    .map(|(a, b)| a - b)
                    .collect();
                let decrease = -dot(&grad, &moved);
                if decrease <= 0.0 {
                    break;
                }
                let r = obj.residual(&cand);
                let j = cand.energy() + mu * r;
                if j <= objective - 1e-4 * decrease {
                    accepted = Some((cand, r, j, moved));
                    break;
                }
                trial_step *= 0.5;
            }
            let Some((cand, r, j, moved)) = accepted else {
                break;
            };
            let rel = (objective - j) / objective.abs().max(f64::MIN_POSITIVE);
            h = cand;
            residual = r;
            objective = j;
            iterations += 1;
            history.push(IterationRecord {
                stage,
                mu,
                iteration: it,
                objective,
                residual,
                energy: h.energy(),
            });
            prev = Some((moved, grad));
            if rel < 1e-10 {
                break;
            }
        }
        mu *= opt.mu_factor;
    }

    Ok(RateFunctionResult {
        lambda_hat: h.energy(),
        converged: residual <= opt.tol,
        h_star: h,
        residual,
        iterations,
        history,
    })
}

/// Sampled members of `Φ_{u0}(M)`: controls with energy at most `M` and their skeleton paths.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetSample {
    pub bound: f64,
    pub members: Vec<(Control, ReflectedPath)>,
}

/// `count` random controls with energies uniform in `[0, M]`.
pub fn sample_controls(
    t_end: f64,
    d: usize,
    blocks: usize,
    m_bound: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Control>> {
    if !(m_bound.is_finite() && m_bound >= 0.0) {
        return Err(invalid(
            "level_set.bound",
            format!("must be nonnegative, got {m_bound}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let raw: Vec<f64> = (0..blocks.max(1) * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let target_energy = m_bound * rng.random::<f64>();
            let h = Control::new(t_end, d, raw)?;
            let e = h.energy();
            Ok(if e > 0.0 && m_bound > 0.0 {
                h.scaled((target_energy / e).sqrt())
            } else {
                h.scaled(0.0)
            })
        })
        .collect()
}

pub fn sample_level_set(
    cs: &CoefficientSet,
    u0: &Field,
    m_bound: f64,
    count: usize,
    seed: u64,
    blocks: usize,
    cfg: &SchemeConfig,
) -> Result<LevelSetSample> {
    if count == 0 {
        return Err(invalid("level_set.count", "must be at least 1"));
    }
    let controls = sample_controls(
        cfg.mesh.t_end(),
        cs.channels(),
        blocks,
        m_bound,
        count,
        seed,
    )?;
    let members = controls
        .into_par_iter()
        .map(|h| solve_skeleton(cs, u0, &h, cfg).map(|p| (h, p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelSetSample {
        bound: m_bound,
        members,
    })
}

/// One-sided Hausdorff estimates between sampled level sets, metric form of the path distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HausdorffEstimate {
    /// `max_φ min_ψ ρ(φ, ψ)` with `φ` from the reference set.
    pub forward: f64,
    /// `max_ψ min_φ ρ(φ, ψ)`.
    pub backward: f64,
}

impl HausdorffEstimate {
    pub fn hausdorff(&self) -> f64 {
        self.forward.max(self.backward)
    }
}

/// For each `u0_n`, compares `Φ̂_{u0}(M)` with `Φ̂_{u0_n}(M)`, both generated
/// by the same sampled controls.
#[allow(clippy::too_many_arguments)]
pub fn level_set_continuity_probe(
    cs: &CoefficientSet,
    u0: &Field,
    u0_sequence: &[Field],
    m_bound: f64,
    count: usize,
    seed: u64,
    blocks: usize,
    cfg: &SchemeConfig,
) -> Result<Vec<HausdorffEstimate>> {
    if u0_sequence.is_empty() {
        return Err(invalid("u0_sequence", "empty"));
    }
    let reference = sample_level_set(cs, u0, m_bound, count, seed, blocks, cfg)?;
    let (dx, dt) = (cfg.grid.dx(), cfg.mesh.dt());
    u0_sequence
        .iter()
        .map(|u0n| {
            let other = reference
                .members
                .par_iter()
                .map(|(h, _)| solve_skeleton(cs, u0n, h, cfg))
                .collect::<Result<Vec<_>>>()?;
            let dist: Vec<Vec<f64>> = reference
                .members
                .par_iter()
                .map(|(_, p)| {
                    other
                        .iter()
                        .map(|q| path_distance_unchecked(p.states(), q.states(), dx, dt).metric())
                        .collect()
                })
                .collect();
            let forward = dist
                .iter()
                .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            let backward = (0..other.len())
                .map(|j| dist.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            Ok(HausdorffEstimate { forward, backward })
        })
        .collect()
}

/// Fails with [`Error::NotConverged`] unless the estimate met its tolerance.
pub fn require_converged(r: &RateFunctionResult) -> Result<f64> {
    if r.converged {
        Ok(r.lambda_hat)
    } else {
        Err(Error::NotConverged {
            residual: r.residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpatialGrid, TimeMesh};
    use crate::solver::solve;
    use std::f64::consts::PI;

    fn setup() -> (CoefficientSet, SchemeConfig) {
        let cfg = SchemeConfig::new(
            SpatialGrid::new(15).unwrap(),
            TimeMesh::new(1.0, 100).unwrap(),
        );
        (CoefficientSet::zero(1).with_constant_sigma(1.0), cfg)
    }

    fn opts() -> RateOptions {
        RateOptions {
            blocks: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_control_target_has_zero_rate() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.field_from(|x| (PI * x).sin());
        let target = solve_skeleton(&cs, &u0, &Control::zeros(1.0, 1, 5).unwrap(), &cfg).unwrap();
        let r = rate_function(&cs, &u0, target.states(), &cfg, &opts()).unwrap();
        assert!(r.lambda_hat <= 1e-3);
        assert!(r.converged && r.residual <= 1e-3);
        assert_eq!(r.lambda_hat, r.h_star.energy());
    }

    #[test]
    fn recovers_generating_control_energy() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.zeros();
        let h = Control::constant(1.0, 5, &[1.0]).unwrap();
        assert_eq!(h.energy(), 0.5);
        let target = solve_skeleton(&cs, &u0, &h, &cfg).unwrap();
        let r = rate_function(&cs, &u0, target.states(), &cfg, &opts()).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        assert!(r.lambda_hat <= 0.55, "{}", r.lambda_hat);
        assert!(r.lambda_hat > 0.3);
    }

    #[test]
    fn objective_decreases_within_each_stage() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.zeros();
        let h = Control::new(1.0, 1, vec![2.0, 0.0, 1.0, 0.5, 0.0]).unwrap();
        let target = solve_skeleton(&cs, &u0, &h, &cfg).unwrap();
        let r = rate_function(&cs, &u0, target.states(), &cfg, &opts()).unwrap();
        assert!(r.converged);
        for w in r.history.windows(2) {
            if w[0].stage == w[1].stage {
                assert!(w[1].objective <= w[0].objective);
            }
        }
    }

    #[test]
    fn quadratic_scaling_in_linear_case() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.zeros();
        let h = Control::constant(1.0, 5, &[0.8]).unwrap();
        let rate = |c: f64| {
            let target = solve_skeleton(&cs, &u0, &h.scaled(c), &cfg).unwrap();
            rate_function(&cs, &u0, target.states(), &cfg, &opts()).unwrap()
        };
        let (r1, r2) = (rate(1.0), rate(2.0));
        assert!(r1.converged && r2.converged);
        assert!(r2.lambda_hat >= r1.lambda_hat);
        let ratio = r2.lambda_hat / r1.lambda_hat;
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
        assert!(r1.lambda_hat <= h.energy() * 1.0001);
    }

    #[test]
    fn unreachable_target_is_not_converged() {
        let (_, cfg) = setup();
        let cs = CoefficientSet::zero(1);
        let u0 = cfg.grid.field_from(|x| (PI * x).sin());
        let flow = solve(&cs, &u0, None, None, &cfg).unwrap();
        let target: Vec<Field> = flow
            .states()
            .iter()
            .map(|u| Field(u.values().iter().map(|v| v + 0.1).collect()))
            .collect();
        let r = rate_function(&cs, &u0, &target, &cfg, &opts()).unwrap();
        assert!(!r.converged);
        assert!(r.residual > 1e-3);
        assert!(require_converged(&r).is_err());
    }

    #[test]
    fn rate_function_rejects_bad_target() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.zeros();
        let target = vec![cfg.grid.zeros(); 3];
        assert!(matches!(
            rate_function(&cs, &u0, &target, &cfg, &opts()),
            Err(Error::MeshMismatch(_))
        ));
    }

    #[test]
    fn level_set_members_respect_bound() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.field_from(|x| (PI * x).sin());
        let a = sample_level_set(&cs, &u0, 2.0, 50, 1, 4, &cfg).unwrap();
        let b = sample_level_set(&cs, &u0, 2.0, 50, 2, 4, &cfg).unwrap();
        assert!(a.members.iter().all(|(h, _)| h.energy() <= 2.0 + 1e-12));
        assert!(b.members.iter().all(|(h, _)| h.energy() <= 2.0 + 1e-12));
        assert_ne!(a.members[0].0, b.members[0].0);
        assert_eq!(a, sample_level_set(&cs, &u0, 2.0, 50, 1, 4, &cfg).unwrap());

        let zero = sample_level_set(&cs, &u0, 0.0, 5, 3, 4, &cfg).unwrap();
        let flow = solve_skeleton(&cs, &u0, &Control::zeros(1.0, 1, 4).unwrap(), &cfg).unwrap();
        assert!(zero
            .members
            .iter()
            .all(|(h, p)| h.energy() == 0.0 && p.states() == flow.states()));
    }

    #[test]
    fn continuity_probe() {
        let (cs, cfg) = setup();
        let u0 = cfg.grid.field_from(|x| (PI * x).sin());
        let same =
            level_set_continuity_probe(&cs, &u0, &[u0.clone(), u0.clone()], 1.0, 10, 5, 4, &cfg)
                .unwrap();
        assert!(same.iter().all(|e| e.hausdorff() == 0.0));

        let bump = cfg.grid.field_from(|x| (PI * x).sin());
        let seq: Vec<Field> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|n| u0.add(&bump.scaled(1.0 / n)))
            .collect();
        let est = level_set_continuity_probe(&cs, &u0, &seq, 1.0, 20, 5, 4, &cfg).unwrap();
        assert!(
            est.windows(2).all(|w| w[1].hausdorff() < w[0].hausdorff()),
            "{est:?}"
        );

        // M = 0: singleton sets
        let est = level_set_continuity_probe(&cs, &u0, &seq[..1], 0.0, 3, 5, 4, &cfg).unwrap();
        let p = solve_skeleton(&cs, &u0, &Control::zeros(1.0, 1, 4).unwrap(), &cfg).unwrap();
        let q = solve_skeleton(&cs, &seq[0], &Control::zeros(1.0, 1, 4).unwrap(), &cfg).unwrap();
        let d = path_distance(p.states(), q.states(), &cfg.grid, &cfg.mesh)
            .unwrap()
            .metric();
        assert!((est[0].forward - d).abs() < 1e-14 && (est[0].backward - d).abs() < 1e-14);
    }
}
