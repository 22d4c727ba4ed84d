//! Rare-event Monte Carlo for the small-noise family, the lower-bound probe,
//! and the uniform-over-controls convergence probe.
//!
//! Path `i` of every estimator uses noise stream `(seed, i)`, so runs at
//! different `ε`, tubes or tilts share common random numbers.

use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::grid::{path_distance, path_distance_unchecked, Field};
use crate::noise::sample_noise_path;
use crate::ratefn::RateFunctionResult;
use crate::solver::{solve, solve_skeleton, Control, SchemeConfig};

/// Log-weights above this are clipped (`e^700` is still finite).
const LOG_WEIGHT_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TubeSense {
    /// `ρ(u, φ) < δ`
    Hit,
    /// `ρ(u, φ) ≥ δ`
    Miss,
}

/// A tube event around a target path, with `ρ` the metric form of the path distance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpec {
    target: Vec<Field>,
    delta: f64,
    sense: TubeSense,
}

impl EventSpec {
    /// `delta = f64::INFINITY` with [`TubeSense::Hit`] is the sure event.
    pub fn new(target: Vec<Field>, delta: f64, sense: TubeSense) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(invalid(
                "event.delta",
                format!("must be positive, got {delta}"),
            ));
        }
        Ok(Self {
            target,
            delta,
            sense,
        })
    }

    pub fn target(&self) -> &[Field] {
        &self.target
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sense(&self) -> TubeSense {
        self.sense
    }

    fn occurs(&self, states: &[Field], dx: f64, dt: f64) -> bool {
        let rho = path_distance_unchecked(states, &self.target, dx, dt).metric();
        match self.sense {
            TubeSense::Hit => rho < self.delta,
            TubeSense::Miss => rho >= self.delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Naive,
    /// Importance sampling with the given tilt control.
    Importance(Control),
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Importance(_) => "importance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RareEventEstimate {
    /// Weighted hit frequency, clipped into `[0, 1]`.
    pub p_hat: f64,
    pub std_err: f64,
    pub n_samples: usize,
    pub epsilon: f64,
    pub method: Method,
    pub seed: u64,
    /// Number of paths on which the event occurred.
    pub hits: usize,
    /// One-sided 95% upper bound: `1 − 0.05^{1/N}` when there are no hits,
    /// `min(1, p_hat + 1.645 std_err)` otherwise.
    pub upper_95: f64,
    /// Empirical mean of the likelihood ratio over all paths (1 for naive).
    pub mean_weight: f64,
    pub weight_std_err: f64,
    /// Whether any log-weight was clipped.
    pub weight_clipped: bool,
}

/// `sqrt((mean(x²) − mean(x)²) / n)`; for 0/1 samples this is the binomial standard error.
fn plugin_std_err(sum: f64, sum_sq: f64, n: usize) -> f64 {
    let n = n as f64;
    let mean = sum / n;
    ((sum_sq / n - mean * mean).max(0.0) / n).sqrt()
}

fn check_common(
    cs: &CoefficientSet,
    u0: &Field,
    eps: f64,
    ev: &EventSpec,
    n: usize,
    cfg: &SchemeConfig,
) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(invalid("epsilon", format!("must be positive, got {eps}")));
    }
    if n == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    cfg.validate()?;
    cfg.grid.check(u0)?;
    if cs.channels() == 0 {
        return Err(invalid("d", "need at least one noise channel"));
    }
    path_distance(&ev.target, &ev.target, &cfg.grid, &cfg.mesh).map(|_| ())
}

fn estimate(
    cs: &CoefficientSet,
    u0: &Field,
    eps: f64,
    ev: &EventSpec,
    tilt: Option<&Control>,
    n: usize,
    seed: u64,
    cfg: &SchemeConfig,
) -> Result<RareEventEstimate> {
    check_common(cs, u0, eps, ev, n, cfg)?;
    let cfg = cfg.with_noise_scale(eps.sqrt());
    let mesh = cfg.mesh;
    let (dx, dt) = (cfg.grid.dx(), mesh.dt());
    let d = cs.channels();
    let inv_sqrt_eps = 1.0 / eps.sqrt();

    let samples: Vec<(bool, f64, bool)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let noise = sample_noise_path(seed, i, mesh, d)?;
            let path = solve(cs, u0, Some(&noise), tilt, &cfg)?;
            let (log_w, clipped) = match tilt {
                None => (0.0, false),
                Some(h) => {
                    let mut stoch = 0.0;
                    let mut quad = 0.0;
                    for k in 0..mesh.steps() {
                        let hk = h.at_step(k, &mesh);
                        let dw = noise.increment(k);
                        for j in 0..d {
                            stoch += hk[j] * dw[j];
                            quad += hk[j] * hk[j] * dt;
                        }
                    }
                    let lw = -inv_sqrt_eps * stoch - quad / (2.0 * eps);
                    if lw > LOG_WEIGHT_CAP {
                        (LOG_WEIGHT_CAP, true)
                    } else {
                        (lw, false)
                    }
                }
            };
            Ok((ev.occurs(path.states(), dx, dt), log_w.exp(), clipped))
        })
        .collect::<Result<_>>()?;

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut w_sum = 0.0;
    let mut w_sum_sq = 0.0;
    let mut hits = 0;
    let mut weight_clipped = false;
    for &(hit, w, clipped) in &samples {
        weight_clipped |= clipped;
        w_sum += w;
        w_sum_sq += w * w;
        if hit {
            hits += 1;
            sum += w;
            sum_sq += w * w;
        }
    }
    let p_raw = sum / n as f64;
    let p_hat = p_raw.clamp(0.0, 1.0);
    let std_err = plugin_std_err(sum, sum_sq, n);
    let upper_95 = if hits == 0 {
        1.0 - 0.05f64.powf(1.0 / n as f64)
    } else {
        (p_hat + 1.645 * std_err).min(1.0)
    };
    Ok(RareEventEstimate {
        p_hat,
        std_err,
        n_samples: n,
        epsilon: eps,
        method: tilt.map_or(Method::Naive, |h| Method::Importance(h.clone())),
        seed,
        hits,
        upper_95,
        mean_weight: w_sum / n as f64,
        weight_std_err: plugin_std_err(w_sum, w_sum_sq, n),
        weight_clipped,
    })
}

/// Plain Monte Carlo with noise scale `√ε`.
pub fn estimate_naive(
    cs: &CoefficientSet,
    u0: &Field,
    eps: f64,
    ev: &EventSpec,
    n: usize,
    seed: u64,
    cfg: &SchemeConfig,
) -> Result<RareEventEstimate> {
    estimate(cs, u0, eps, ev, None, n, seed, cfg)
}

/// Simulates the controlled equation with drift `σ h_tilt` and noise scale `√ε`
/// and reweights each path by the discrete likelihood ratio
/// `exp{−ε^{-1/2} Σ h·ΔW − (2ε)^{-1} Σ |h|² Δt}`, evaluated on the same increments.
#[allow(clippy::too_many_arguments)]
pub fn estimate_importance(
    cs: &CoefficientSet,
    u0: &Field,
    eps: f64,
    ev: &EventSpec,
    h_tilt: &Control,
    n: usize,
    seed: u64,
    cfg: &SchemeConfig,
) -> Result<RareEventEstimate> {
    estimate(cs, u0, eps, ev, Some(h_tilt), n, seed, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundStatus {
    Satisfied,
    Violated,
    /// No path hit the event under either estimator; `eps_log_p` comes from the upper bound.
    ZeroHits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FwRow {
    pub epsilon: f64,
    pub estimate: RareEventEstimate,
    /// `ε log p̂`, or `ε log upper_95` for zero-hit rows.
    pub eps_log_p: f64,
    /// `−(Λ̂ + θ)`
    pub bound: f64,
    pub status: BoundStatus,
}

/// Compares `ε log P(ρ(u^ε, φ) < δ)` with `−(Λ̂(φ) + θ)` for each `ε`,
/// falling back to importance sampling with the minimizing control when the
/// naive estimate has no hits.
#[allow(clippy::too_many_arguments)]
pub fn fw_lower_bound_probe(
    cs: &CoefficientSet,
    u0: &Field,
    rate: &RateFunctionResult,
    target: &[Field],
    delta: f64,
    theta: f64,
    eps_list: &[f64],
    n: usize,
    seed: u64,
    cfg: &SchemeConfig,
) -> Result<Vec<FwRow>> {
    if !rate.converged {
        return Err(Error::NotConverged {
            residual: rate.residual,
        });
    }
    if !(theta >= 0.0) {
        return Err(invalid(
            "theta",
            format!("must be nonnegative, got {theta}"),
        ));
    }
    let ev = EventSpec::new(target.to_vec(), delta, TubeSense::Hit)?;
    let bound = -(rate.lambda_hat + theta);
    eps_list
        .iter()
        .map(|&eps| {
            let mut est = estimate_naive(cs, u0, eps, &ev, n, seed, cfg)?;
            if est.hits == 0 {
                est = estimate_importance(cs, u0, eps, &ev, &rate.h_star, n, seed, cfg)?;
            }
            let (eps_log_p, status) = if est.hits == 0 {
                (eps * est.upper_95.ln(), BoundStatus::ZeroHits)
            } else {
                let v = eps * est.p_hat.ln();
                (
                    v,
                    if v >= bound {
                        BoundStatus::Satisfied
                    } else {
                        BoundStatus::Violated
                    },
                )
            };
            Ok(FwRow {
                epsilon: eps,
                estimate: est,
                eps_log_p,
                bound,
                status,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionRow {
    pub epsilon: f64,
    /// Largest exceedance fraction over all `(u0, ξ)` pairs.
    pub worst_fraction: f64,
    /// Index into `u0_set` of the worst pair.
    pub worst_u0: usize,
    /// Index into `controls` of the worst pair.
    pub worst_control: usize,
    /// Largest mean squared distance over all pairs.
    pub worst_mean: f64,
}

/// For each `ε`, the worst fraction over `(u0, ξ)` of paths whose squared
/// distance between the controlled equation and the skeleton, both driven by
/// `ξ`, is at least `δ`.
#[allow(clippy::too_many_arguments)]
pub fn condition_convergence_probe(
    cs: &CoefficientSet,
    u0_set: &[Field],
    controls: &[Control],
    energy_bound: f64,
    eps_list: &[f64],
    delta: f64,
    n: usize,
    seed: u64,
    cfg: &SchemeConfig,
) -> Result<Vec<ConditionRow>> {
    if u0_set.is_empty() || controls.is_empty() {
        return Err(invalid(
            "condition.family",
            "need at least one initial condition and one control",
        ));
    }
    if n == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    if !(delta > 0.0) {
        return Err(invalid(
            "condition.delta",
            format!("must be positive, got {delta}"),
        ));
    }
    for h in controls {
        // ∫|ξ|² = 2·energy
        if !h.in_ball(energy_bound) {
            return Err(invalid(
                "condition.controls",
                format!(
                    "control with ∫|h|² = {} exceeds bound {energy_bound}",
                    2.0 * h.energy()
                ),
            ));
        }
    }
    let (dx, dt) = (cfg.grid.dx(), cfg.mesh.dt());
    let skeletons = u0_set
        .iter()
        .map(|u0| {
            controls
                .iter()
                .map(|h| solve_skeleton(cs, u0, h, cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    eps_list
        .iter()
        .map(|&eps| {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(invalid("epsilon", format!("must be positive, got {eps}")));
            }
            let ecfg = cfg.with_noise_scale(eps.sqrt());
            let mut row = ConditionRow {
                epsilon: eps,
                worst_fraction: 0.0,
                worst_u0: 0,
                worst_control: 0,
                worst_mean: 0.0,
            };
            for (a, u0) in u0_set.iter().enumerate() {
                for (b, h) in controls.iter().enumerate() {
                    let skel = skeletons[a][b].states();
                    let dists: Vec<f64> = (0..n as u64)
                        .into_par_iter()
                        .map(|i| {
                            let noise = sample_noise_path(seed, i, ecfg.mesh, cs.channels())?;
                            let p = solve(cs, u0, Some(&noise), Some(h), &ecfg)?;
                            Ok(path_distance_unchecked(p.states(), skel, dx, dt).squared)
                        })
                        .collect::<Result<_>>()?;
                    let frac = dists.iter().filter(|&&s| s >= delta).count() as f64 / n as f64;
                    let mean = dists.iter().sum::<f64>() / n as f64;
                    if frac > row.worst_fraction {
                        row.worst_fraction = frac;
                        row.worst_u0 = a;
                        row.worst_control = b;
                    }
                    row.worst_mean = row.worst_mean.max(mean);
                }
            }
            Ok(row)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{SpatialGrid, TimeMesh};
    use std::f64::consts::PI;

    fn setup() -> (CoefficientSet, SchemeConfig, Field) {
        let cfg = SchemeConfig::new(
            SpatialGrid::new(15).unwrap(),
            TimeMesh::new(1.0, 100).unwrap(),
        );
        let u0 = cfg.grid.field_from(|x| (PI * x).sin());
        (CoefficientSet::zero(1).with_constant_sigma(1.0), cfg, u0)
    }

    fn flow(cs: &CoefficientSet, u0: &Field, cfg: &SchemeConfig) -> Vec<Field> {
        solve(cs, u0, None, None, cfg).unwrap().states().to_vec()
    }

    #[test]
    fn trivial_events() {
        let (cs, cfg, u0) = setup();
        let target = flow(&cs, &u0, &cfg);
        let sure = EventSpec::new(target.clone(), f64::INFINITY, TubeSense::Hit).unwrap();
        let e = estimate_naive(&cs, &u0, 0.1, &sure, 50, 1, &cfg).unwrap();
        assert_eq!((e.p_hat, e.std_err, e.hits), (1.0, 0.0, 50));

        let off: Vec<Field> = target
            .iter()
            .map(|u| u.add(&cfg.grid.field_from(|_| 0.5)))
            .collect();
        let tiny = EventSpec::new(off, 1e-12, TubeSense::Hit).unwrap();
        let e = estimate_naive(&cs, &u0, 0.1, &tiny, 50, 1, &cfg).unwrap();
        assert_eq!((e.p_hat, e.hits), (0.0, 0));
        assert!((e.upper_95 - (1.0 - 0.05f64.powf(1.0 / 50.0))).abs() < 1e-15);

        assert!(EventSpec::new(target, 0.0, TubeSense::Hit).is_err());
    }

    #[test]
    fn zero_tilt_matches_naive_exactly() {
        let (cs, cfg, u0) = setup();
        let ev = EventSpec::new(flow(&cs, &u0, &cfg), 0.3, TubeSense::Hit).unwrap();
        let naive = estimate_naive(&cs, &u0, 0.1, &ev, 200, 9, &cfg).unwrap();
        let is = estimate_importance(
            &cs,
            &u0,
            0.1,
            &ev,
            &Control::zeros(1.0, 1, 4).unwrap(),
            200,
            9,
            &cfg,
        )
        .unwrap();
        assert_eq!(naive.p_hat, is.p_hat);
        assert_eq!(naive.std_err, is.std_err);
        assert_eq!(is.mean_weight, 1.0);
        assert!(naive.hits > 0 && naive.hits < 200);
    }

    #[test]
    fn shrinking_tube_never_increases_probability() {
        let (cs, cfg, u0) = setup();
        let target = flow(&cs, &u0, &cfg);
        let mut last = 1.0;
        for delta in [2.0, 1.0, 0.6, 0.4, 0.2] {
            let ev = EventSpec::new(target.clone(), delta, TubeSense::Hit).unwrap();
            let p = estimate_naive(&cs, &u0, 0.2, &ev, 200, 3, &cfg)
                .unwrap()
                .p_hat;
            assert!(p <= last);
            last = p;
        }
    }

    #[test]
    fn hit_and_miss_are_complementary() {
        let (cs, cfg, u0) = setup();
        let target = flow(&cs, &u0, &cfg);
        let hit = EventSpec::new(target.clone(), 0.6, TubeSense::Hit).unwrap();
        let miss = EventSpec::new(target, 0.6, TubeSense::Miss).unwrap();
        let a = estimate_naive(&cs, &u0, 0.1, &hit, 100, 4, &cfg).unwrap();
        let b = estimate_naive(&cs, &u0, 0.1, &miss, 100, 4, &cfg).unwrap();
        assert_eq!(a.hits + b.hits, 100);
    }

    #[test]
    fn unreachable_event_has_zero_probability_under_any_tilt() {
        let (_, cfg, u0) = setup();
        let cs = CoefficientSet::zero(1);
        let off: Vec<Field> = flow(&cs, &u0, &cfg)
            .iter()
            .map(|u| u.add(&cfg.grid.field_from(|_| 0.5)))
            .collect();
        let ev = EventSpec::new(off, 0.1, TubeSense::Hit).unwrap();
        let tilt = Control::constant(1.0, 2, &[3.0]).unwrap();
        let e = estimate_importance(&cs, &u0, 0.1, &ev, &tilt, 50, 2, &cfg).unwrap();
        assert_eq!(e.p_hat, 0.0);
    }

    #[test]
    fn tube_probability_increases_as_noise_vanishes() {
        let (cs, cfg, u0) = setup();
        let ev = EventSpec::new(flow(&cs, &u0, &cfg), 0.6, TubeSense::Hit).unwrap();
        let est: Vec<_> = [0.5, 0.1, 0.02]
            .iter()
            .map(|&eps| estimate_naive(&cs, &u0, eps, &ev, 500, 11, &cfg).unwrap())
            .collect();
        for w in est.windows(2) {
            assert!(
                w[1].p_hat + 2.0 * (w[0].std_err + w[1].std_err) >= w[0].p_hat,
                "{est:?}"
            );
        }
        assert!(est[2].p_hat > est[0].p_hat);
    }

    #[test]
    fn estimates_are_reproducible() {
        let (cs, cfg, u0) = setup();
        let ev = EventSpec::new(flow(&cs, &u0, &cfg), 0.6, TubeSense::Hit).unwrap();
        let tilt = Control::constant(1.0, 2, &[0.3]).unwrap();
        let a = estimate_importance(&cs, &u0, 0.2, &ev, &tilt, 64, 5, &cfg).unwrap();
        let b = estimate_importance(&cs, &u0, 0.2, &ev, &tilt, 64, 5, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn condition_probe_trivial_cases() {
        let (cs, cfg, u0) = setup();
        let controls = vec![
            Control::zeros(1.0, 1, 2).unwrap(),
            Control::constant(1.0, 2, &[1.0]).unwrap(),
        ];
        let rows = condition_convergence_probe(
            &cs,
            std::slice::from_ref(&u0),
            &controls,
            2.0,
            &[0.2, 0.01],
            1e9,
            50,
            1,
            &cfg,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.worst_fraction == 0.0));

        let too_big = vec![Control::constant(1.0, 2, &[3.0]).unwrap()];
        assert!(
            condition_convergence_probe(&cs, &[u0], &too_big, 2.0, &[0.1], 0.1, 10, 1, &cfg)
                .is_err()
        );
    }

    #[test]
    fn fw_probe_requires_converged_rate() {
        let (cs, cfg, u0) = setup();
        let target = flow(&cs, &u0, &cfg);
        let rate = RateFunctionResult {
            lambda_hat: 0.0,
            h_star: Control::zeros(1.0, 1, 1).unwrap(),
            residual: 1.0,
            iterations: 0,
            converged: false,
            history: vec![],
        };
        assert!(matches!(
            fw_lower_bound_probe(&cs, &u0, &rate, &target, 0.5, 0.0, &[0.1], 10, 1, &cfg),
            Err(Error::NotConverged { .. })
        ));
        let rate = RateFunctionResult {
            converged: true,
            residual: 0.0,
            ..rate
        };
        let rows = fw_lower_bound_probe(
            &cs,
            &u0,
            &rate,
            &target,
            0.6,
            10.0,
            &[0.5, 0.1],
            100,
            1,
            &cfg,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.status == BoundStatus::Satisfied));
    }
}
