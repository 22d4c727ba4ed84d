//! Semi-implicit finite-difference solver for the reflected equation
//!
//! ```text
//! du = u_xx dt + d/dx g(t/τ, u) dt + f(t/τ, x, u) dt
//!      + Σ_j σ_j(t/τ, x, u) (h_j(t) dt + κ dW_j) + dK,     u ≥ 0,
//! ```
//!
//! with `τ` the time scale and `κ` the noise scale. Setting `h = 0` gives the
//! small-noise family, `κ = 0` the skeleton, `τ = ε` the fast-oscillation
//! family. The Laplacian is implicit (one tridiagonal solve per step); the
//! other terms are explicit. Reflection is applied after the noise increment,
//! either by projection onto `u ≥ 0` or by the explicit penalty `n u⁻`.

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::grid::{h_norm_sq_unchecked, v_norm_sq_unchecked, Field, SpatialGrid, TimeMesh};
use crate::noise::NoisePath;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reflection {
    /// `u' = max(ũ, 0)`, `dK = u' - ũ`.
    Projection,
    /// `u' = ũ + dt n ũ⁻`, `dK = dt n ũ⁻`; requires `n dt ≤ 1`.
    Penalized { n: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convection {
    /// `[g(u_{i+1}) - g(u_{i-1})] / (2 dx)`
    Central,
    /// One-sided difference against the local characteristic direction.
    Upwind,
}

pub const DEFAULT_BLOWUP_CEILING: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub grid: SpatialGrid,
    pub mesh: TimeMesh,
    pub reflection: Reflection,
    pub convection: Convection,
    /// Coefficients are evaluated at `t / time_scale`.
    pub time_scale: f64,
    /// Multiplier of the Brownian increments (`√ε`).
    pub noise_scale: f64,
    /// Abort when `max |u|` exceeds this.
    pub blowup_ceiling: f64,
}

impl SchemeConfig {
    /// Projection, central convection, no time dilation, unit noise.
    pub fn new(grid: SpatialGrid, mesh: TimeMesh) -> Self {
        Self {
            grid,
            mesh,
            reflection: Reflection::Projection,
            convection: Convection::Central,
            time_scale: 1.0,
            noise_scale: 1.0,
            blowup_ceiling: DEFAULT_BLOWUP_CEILING,
        }
    }

    pub fn with_reflection(mut self, reflection: Reflection) -> Self {
        self.reflection = reflection;
        self
    }

    pub fn with_convection(mut self, convection: Convection) -> Self {
        self.convection = convection;
        self
    }

    pub fn with_time_scale(mut self, time_scale: f64) -> Self {
        self.time_scale = time_scale;
        self
    }

    pub fn with_noise_scale(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn with_blowup_ceiling(mut self, ceiling: f64) -> Self {
        self.blowup_ceiling = ceiling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.time_scale.is_finite() && self.time_scale > 0.0) {
            return Err(invalid(
                "scheme.time_scale",
                format!("must be positive, got {}", self.time_scale),
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(invalid(
                "scheme.noise_scale",
                format!("must be nonnegative, got {}", self.noise_scale),
            ));
        }
        if !(self.blowup_ceiling > 0.0) {
            return Err(invalid("scheme.blowup_ceiling", "must be positive"));
        }
        if let Reflection::Penalized { n } = self.reflection {
            if !(n.is_finite() && n > 0.0) {
                return Err(invalid(
                    "scheme.penalty",
                    format!("must be positive, got {n}"),
                ));
            }
            let n_dt = n * self.mesh.dt();
            if n_dt > 1.0 {
                return Err(Error::Unstable { n_dt });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant control `[0, T] -> R^d` on `blocks` equal blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    t_end: f64,
    d: usize,
    blocks: usize,
    /// Row-major `(block, channel)`.
    values: Vec<f64>,
}

impl Control {
    pub fn new(t_end: f64, d: usize, values: Vec<f64>) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(invalid("control.t_end", "must be positive"));
        }
        if d == 0 || values.is_empty() || !values.len().is_multiple_of(d) {
            return Err(invalid(
                "control.values",
                format!("{} values do not fill blocks of {d} channels", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("control.values", "must be finite"));
        }
        Ok(Self {
            t_end,
            d,
            blocks: values.len() / d,
            values,
        })
    }

    pub fn zeros(t_end: f64, d: usize, blocks: usize) -> Result<Self> {
        Self::new(t_end, d, vec![0.0; d * blocks.max(1)])
    }

    /// Same value `h` on every block.
    pub fn constant(t_end: f64, blocks: usize, h: &[f64]) -> Result<Self> {
        let values = (0..blocks.max(1)).flat_map(|_| h.iter().copied()).collect();
        Self::new(t_end, h.len(), values)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_len(&self) -> f64 {
        self.t_end / self.blocks as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn block(&self, b: usize) -> &[f64] {
        &self.values[b * self.d..(b + 1) * self.d]
    }

    /// `½ Σ_b |h_b|² Δt_b`
    pub fn energy(&self) -> f64 {
        0.5 * self.block_len() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    /// Membership in `D^N`: `∫|h|² ≤ N`.
    pub fn in_ball(&self, n: f64) -> bool {
        2.0 * self.energy() <= n
    }

    pub fn scaled(&self, c: f64) -> Control {
        Control {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// Value on the mesh step `[t_k, t_{k+1})`, by the block containing `t_k`.
    #[inline]
    pub fn at_step(&self, k: usize, mesh: &TimeMesh) -> &[f64] {
        let b = ((k as u128 * self.blocks as u128) / mesh.steps() as u128) as usize;
        self.block(b.min(self.blocks - 1))
    }

    fn check(&self, mesh: &TimeMesh, d: usize) -> Result<()> {
        if (self.t_end - mesh.t_end()).abs() > 1e-12 * mesh.t_end() {
            return Err(Error::MeshMismatch(format!(
                "control horizon {} differs from mesh horizon {}",
                self.t_end,
                mesh.t_end()
            )));
        }
        if self.d != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.d,
            });
        }
        Ok(())
    }
}

/// Thomas factorization of `I - dt Δ_h` (constant tridiagonal matrix).
#[derive(Debug, Clone)]
struct ImplicitHeat {
    r: f64,
    c_prime: Vec<f64>,
    inv_den: Vec<f64>,
}

impl ImplicitHeat {
    fn new(m: usize, dx: f64, dt: f64) -> Self {
        let r = dt / (dx * dx);
        let (a, b, c) = (-r, 1.0 + 2.0 * r, -r);
        let mut c_prime = vec![0.0; m];
        let mut inv_den = vec![0.0; m];
        inv_den[0] = 1.0 / b;
        c_prime[0] = c * inv_den[0];
        for i in 1..m {
            let den = b - a * c_prime[i - 1];
            inv_den[i] = 1.0 / den;
            c_prime[i] = c * inv_den[i];
        }
        Self {
            r,
            c_prime,
            inv_den,
        }
    }

    /// Overwrites `d` with the solution of `(I - dt Δ_h) x = d`.
    fn solve_in_place(&self, d: &mut [f64]) {
        let m = d.len();
        let a = -self.r;
        d[0] *= self.inv_den[0];
        for i in 1..m {
            d[i] = (d[i] - a * d[i - 1]) * self.inv_den[i];
        }
        for i in (0..m - 1).rev() {
            d[i] -= self.c_prime[i] * d[i + 1];
        }
    }
}

/// Reusable step workspace for one configuration.
pub(crate) struct Stepper<'a> {
    cs: &'a CoefficientSet,
    cfg: SchemeConfig,
    heat: ImplicitHeat,
    xs: Vec<f64>,
    flux: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(cs: &'a CoefficientSet, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid;
        Ok(Self {
            cs,
            cfg: *cfg,
            heat: ImplicitHeat::new(grid.m(), grid.dx(), cfg.mesh.dt()),
            xs: grid.nodes().collect(),
            flux: vec![0.0; grid.m() + 2],
            sigma: vec![0.0; cs.channels()],
        })
    }

    /// Advances `u` in place from `t` and writes the reflection increment to `dk`.
    fn advance(&mut self, u: &mut [f64], dk: &mut [f64], t: f64, dw: &[f64], h: &[f64]) {
        let m = u.len();
        let dt = self.cfg.mesh.dt();
        let dx = self.cfg.grid.dx();
        let s = t / self.cfg.time_scale;
        let kappa = self.cfg.noise_scale;
        let cs = self.cs;

        // flux with ghost zeros at both ends
        let g0 = cs.g(s, 0.0);
        self.flux[0] = g0;
        self.flux[m + 1] = g0;
        for i in 0..m {
            self.flux[i + 1] = cs.g(s, u[i]);
        }

        for i in 0..m {
            let z = u[i];
            let conv = match self.cfg.convection {
                Convection::Central => (self.flux[i + 2] - self.flux[i]) / (2.0 * dx),
                Convection::Upwind => {
                    // u_t = g(u)_x transports with speed -g'(u)
                    if -cs.dg_dz(s, z) >= 0.0 {
                        (self.flux[i + 1] - self.flux[i]) / dx
                    } else {
                        (self.flux[i + 2] - self.flux[i + 1]) / dx
                    }
                }
            };
            let x = self.xs[i];
            cs.sigma_into(s, x, z, &mut self.sigma);
            let mut drive = 0.0;
            let mut shock = 0.0;
            for j in 0..self.sigma.len() {
                drive += self.sigma[j] * h[j];
                shock += self.sigma[j] * dw[j];
            }
            u[i] = z + dt * (conv + cs.f(s, x, z) + drive) + kappa * shock;
        }

        self.heat.solve_in_place(u);

        match self.cfg.reflection {
            Reflection::Projection => {
                for i in 0..m {
                    if u[i] < 0.0 {
                        dk[i] = -u[i];
                        u[i] = 0.0;
                    } else {
                        dk[i] = 0.0;
                    }
                }
            }
            Reflection::Penalized { n } => {
                let c = dt * n;
                for i in 0..m {
                    let neg = (-u[i]).max(0.0);
                    dk[i] = c * neg;
                    u[i] += dk[i];
                }
            }
        }
    }
}

/// One time step from `u` at time `t`. Returns the new state and the
/// reflection increment per node.
pub fn step(
    u: &Field,
    t: f64,
    dw: &[f64],
    h: &[f64],
    cs: &CoefficientSet,
    cfg: &SchemeConfig,
) -> Result<(Field, Vec<f64>)> {
    cfg.grid.check(u)?;
    let d = cs.channels();
    if dw.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: dw.len(),
        });
    }
    if h.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: h.len(),
        });
    }
    let mut stepper = Stepper::new(cs, cfg)?;
    let mut next = u.values().to_vec();
    let mut dk = vec![0.0; next.len()];
    stepper.advance(&mut next, &mut dk, t, dw, h);
    check_finite(&next, 0, cfg.blowup_ceiling)?;
    Ok((Field(next), dk))
}

fn check_finite(u: &[f64], step: usize, ceiling: f64) -> Result<()> {
    let mut max_abs: f64 = 0.0;
    for v in u {
        if !v.is_finite() {
            return Err(Error::BlowUp {
                step,
                max_abs: f64::INFINITY,
            });
        }
        max_abs = max_abs.max(v.abs());
    }
    if max_abs > ceiling {
        return Err(Error::BlowUp { step, max_abs });
    }
    Ok(())
}

/// A discrete solution pair `(u, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    config: SchemeConfig,
    states: Vec<Field>,
    /// Row-major `(step, node)`: increment produced by step `k`.
    dk: Vec<f64>,
    h_norm_sq: Vec<f64>,
    v_norm_sq: Vec<f64>,
}

impl ReflectedPath {
    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.config.grid
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.config.mesh
    }

    /// `u_k` for `k = 0..=steps`.
    pub fn states(&self) -> &[Field] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &Field {
        &self.states[k]
    }

    pub fn last(&self) -> &Field {
        self.states
            .last()
            .expect("path has at least the initial state")
    }

    /// Reflection density increment of step `k` (applied to reach `u_{k+1}`).
    pub fn dk(&self, k: usize) -> &[f64] {
        let m = self.config.grid.m();
        &self.dk[k * m..(k + 1) * m]
    }

    /// `|u_k|_H^2` per time node.
    pub fn h_norm_sq(&self) -> &[f64] {
        &self.h_norm_sq
    }

    /// `‖u_k‖_V^2` per time node.
    pub fn v_norm_sq(&self) -> &[f64] {
        &self.v_norm_sq
    }

    pub fn min_value(&self) -> f64 {
        self.states
            .iter()
            .map(Field::min)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Runs the scheme over the whole mesh. `noise = None` means zero increments,
/// `control = None` means `h = 0`.
pub fn solve(
    cs: &CoefficientSet,
    u0: &Field,
    noise: Option<&NoisePath>,
    control: Option<&Control>,
    cfg: &SchemeConfig,
) -> Result<ReflectedPath> {
    let grid = cfg.grid;
    let mesh = cfg.mesh;
    grid.check(u0)?;
    if let Some((node, &value)) = u0.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeInitialCondition { node, value });
    }
    let d = cs.channels();
    if let Some(noise) = noise {
        if noise.mesh() != &mesh {
            return Err(Error::MeshMismatch(
                "noise path mesh differs from scheme mesh".into(),
            ));
        }
        if noise.channels() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: noise.channels(),
            });
        }
    }
    if let Some(h) = control {
        h.check(&mesh, d)?;
    }

    let mut stepper = Stepper::new(cs, cfg)?;
    let m = grid.m();
    let dx = grid.dx();
    let steps = mesh.steps();
    let zeros = vec![0.0; d];

    let mut states = Vec::with_capacity(steps + 1);
    let mut dk = vec![0.0; steps * m];
    let mut h_norm_sq = Vec::with_capacity(steps + 1);
    let mut v_norm_sq = Vec::with_capacity(steps + 1);

    let mut u = u0.values().to_vec();
    h_norm_sq.push(h_norm_sq_unchecked(&u, dx));
    v_norm_sq.push(v_norm_sq_unchecked(&u, dx));
    states.push(u0.clone());
    for k in 0..steps {
        let dw = noise.map_or(zeros.as_slice(), |n| n.increment(k));
        let h = control.map_or(zeros.as_slice(), |c| c.at_step(k, &mesh));
        stepper.advance(&mut u, &mut dk[k * m..(k + 1) * m], mesh.t(k), dw, h);
        check_finite(&u, k, cfg.blowup_ceiling)?;
        h_norm_sq.push(h_norm_sq_unchecked(&u, dx));
        v_norm_sq.push(v_norm_sq_unchecked(&u, dx));
        states.push(Field(u.clone()));
    }
    Ok(ReflectedPath {
        config: *cfg,
        states,
        dk,
        h_norm_sq,
        v_norm_sq,
    })
}

/// Deterministic controlled equation: noise scale 0, control `h`.
pub fn solve_skeleton(
    cs: &CoefficientSet,
    u0: &Field,
    h: &Control,
    cfg: &SchemeConfig,
) -> Result<ReflectedPath> {
    let cfg = cfg.with_noise_scale(0.0);
    solve(cs, u0, None, Some(h), &cfg)
}

/// `dx Σ_{k,i} u_{k+1,i} dK_{k,i}`, the discrete `∫∫ u dK`.
pub fn complementarity_residual(p: &ReflectedPath) -> f64 {
    let m = p.grid().m();
    let acc: f64 = (0..p.mesh().steps())
        .map(|k| {
            p.states[k + 1]
                .values()
                .iter()
                .zip(&p.dk[k * m..(k + 1) * m])
                .map(|(u, dk)| u * dk)
                .sum::<f64>()
        })
        .sum();
    p.grid().dx() * acc
}

/// Total mass `dx Σ dK` of the (nonnegative) reflection measure.
pub fn total_variation_k(p: &ReflectedPath) -> f64 {
    p.grid().dx() * p.dk.iter().map(|v| v.abs()).sum::<f64>()
}

/// `(max_k |u_k|_H^2, Σ_{k<steps} ‖u_k‖_V^2 dt)`
pub fn energy_functional(p: &ReflectedPath) -> (f64, f64) {
    let sup = p.h_norm_sq.iter().copied().fold(0.0, f64::max);
    let steps = p.mesh().steps();
    let int = p.v_norm_sq[..steps].iter().sum::<f64>() * p.mesh().dt();
    (sup, int)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{h_norm, path_distance};
    use crate::noise::sample_noise;
    use std::f64::consts::PI;

    fn cfg(m: usize, t_end: f64, steps: usize) -> SchemeConfig {
        SchemeConfig::new(
            SpatialGrid::new(m).unwrap(),
            TimeMesh::new(t_end, steps).unwrap(),
        )
    }

    /// Dense Gaussian elimination on `I - dt Δ_h`, independent of the Thomas sweep.
    fn dense_heat_solve(rhs: &[f64], r: f64) -> Vec<f64> {
        let m = rhs.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        for i in 0..m {
            a[i][i] = 1.0 + 2.0 * r;
            if i > 0 {
                a[i][i - 1] = -r;
            }
            if i + 1 < m {
                a[i][i + 1] = -r;
            }
            a[i][m] = rhs[i];
        }
        for c in 0..m {
            for r2 in c + 1..m {
                let f = a[r2][c] / a[c][c];
                for k in c..=m {
                    a[r2][k] -= f * a[c][k];
                }
            }
        }
        let mut x = vec![0.0; m];
        for i in (0..m).rev() {
            let s: f64 = (i + 1..m).map(|k| a[i][k] * x[k]).sum();
            x[i] = (a[i][m] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn heat_step_matches_dense_solve() {
        let c = cfg(12, 0.1, 10);
        let cs = CoefficientSet::zero(1);
        let u = c.grid.field_from(|x| (PI * x).sin() + x * x);
        let (next, dk) = step(&u, 0.0, &[0.0], &[0.0], &cs, &c).unwrap();
        let r = c.mesh.dt() / c.grid.dx().powi(2);
        let dense = dense_heat_solve(u.values(), r);
        for (a, b) in next.values().iter().zip(&dense) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(dk.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_state_stays_zero() {
        let c = cfg(8, 1.0, 10);
        let cs = CoefficientSet::zero(2);
        let u = c.grid.zeros();
        let (next, dk) = step(&u, 0.0, &[0.3, -1.0], &[0.0, 0.0], &cs, &c).unwrap();
        assert_eq!(next, u);
        assert!(dk.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_negative_forcing_one_step() {
        let c = cfg(10, 1.0, 100);
        let cs = CoefficientSet::zero(1).with_f(|_, _, _| -1.0);
        let (next, dk) = step(&c.grid.zeros(), 0.0, &[0.0], &[0.0], &cs, &c).unwrap();
        assert!(next.values().iter().all(|v| *v == 0.0));
        // before the projection ũ solves (I - dt Δ) ũ = -dt; compare with the dense oracle
        let r = c.mesh.dt() / c.grid.dx().powi(2);
        let dense = dense_heat_solve(&[-c.mesh.dt(); 10], r);
        for (k, u) in dk.iter().zip(&dense) {
            assert!((k + u).abs() < 1e-15);
        }
    }

    #[test]
    fn heat_flow_matches_analytic() {
        let c = cfg(64, 0.1, 1000);
        let cs = CoefficientSet::zero(1);
        let u0 = c.grid.field_from(|x| (PI * x).sin());
        let p = solve(&cs, &u0, None, None, &c).unwrap();
        let mut worst: f64 = 0.0;
        for (k, u) in p.states().iter().enumerate() {
            let t = c.mesh.t(k);
            let exact = c.grid.field_from(|x| (-PI * PI * t).exp() * (PI * x).sin());
            worst = worst.max(h_norm(&u.sub(&exact), &c.grid).unwrap());
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn negative_initial_condition_rejected() {
        let c = cfg(4, 1.0, 4);
        let cs = CoefficientSet::zero(1);
        let u0 = Field(vec![0.0, -0.1, 0.0, 0.0]);
        assert_eq!(
            solve(&cs, &u0, None, None, &c),
            Err(Error::NegativeInitialCondition {
                node: 1,
                value: -0.1
            })
        );
    }

    #[test]
    fn unstable_penalty_rejected() {
        let c = cfg(4, 1.0, 1000).with_reflection(Reflection::Penalized { n: 1e4 });
        assert!(matches!(c.validate(), Err(Error::Unstable { .. })));
        let cs = CoefficientSet::zero(1);
        assert!(solve(&cs, &c.grid.zeros(), None, None, &c).is_err());
    }

    #[test]
    fn blowup_is_reported_with_step() {
        let c = cfg(8, 1.0, 100).with_blowup_ceiling(10.0);
        let cs = CoefficientSet::zero(1).with_f(|_, _, _| 100.0);
        let err = solve(&cs, &c.grid.zeros(), None, None, &c).unwrap_err();
        assert!(matches!(err, Error::BlowUp { step, .. } if step < 100));
    }

    #[test]
    fn forcing_test_reflection_mass() {
        let c = cfg(32, 1.0, 1000);
        let cs = CoefficientSet::zero(1).with_f(|_, _, _| -1.0);
        let p = solve(&cs, &c.grid.zeros(), None, None, &c).unwrap();
        assert_eq!(p.min_value(), 0.0);
        assert_eq!(complementarity_residual(&p), 0.0);
        // u stays 0, so every step reflects ũ = -dt (I - dt Δ)^{-1} 1 and the
        // mass is T dx Σ_i [(I - dt Δ)^{-1} 1]_i (boundary layers of width √dt)
        let r = c.mesh.dt() / c.grid.dx().powi(2);
        let oracle = c.grid.dx() * dense_heat_solve(&vec![1.0; 32], r).iter().sum::<f64>();
        let tv = total_variation_k(&p);
        assert!((tv - oracle).abs() < 1e-9, "{tv} vs {oracle}");
        assert!((tv - 0.9298695954).abs() < 1e-8);

        let fine = cfg(32, 1.0, 2000);
        let tv_fine =
            total_variation_k(&solve(&cs, &fine.grid.zeros(), None, None, &fine).unwrap());
        assert!((tv_fine - tv).abs() / tv < 0.02);
    }

    #[test]
    fn projection_with_noise_is_nonnegative() {
        let c = cfg(16, 1.0, 500);
        let cs = CoefficientSet::zero(1).with_constant_sigma(1.0);
        let noise = sample_noise(3, c.mesh, 1).unwrap();
        let p = solve(&cs, &c.grid.zeros(), Some(&noise), None, &c).unwrap();
        assert!(p.min_value() >= 0.0);
        assert_eq!(complementarity_residual(&p), 0.0);
        assert!(total_variation_k(&p) > 0.0);
    }

    #[test]
    fn penalized_residual_decreases_with_n() {
        let base = cfg(16, 1.0, 1000);
        let cs = CoefficientSet::zero(1).with_f(|_, _, _| -1.0);
        let res = |n: f64| {
            let c = base.with_reflection(Reflection::Penalized { n });
            complementarity_residual(&solve(&cs, &c.grid.zeros(), None, None, &c).unwrap()).abs()
        };
        assert!(res(1000.0) < res(100.0));
    }

    #[test]
    fn zero_path_has_zero_diagnostics() {
        let c = cfg(6, 1.0, 20);
        let p = solve(&CoefficientSet::zero(1), &c.grid.zeros(), None, None, &c).unwrap();
        assert_eq!(total_variation_k(&p), 0.0);
        assert_eq!(complementarity_residual(&p), 0.0);
        assert_eq!(energy_functional(&p), (0.0, 0.0));
    }

    #[test]
    fn skeleton_heat_flow_and_determinism() {
        let c = cfg(32, 0.2, 400);
        let cs = CoefficientSet::zero(1).with_constant_sigma(1.0);
        let u0 = c.grid.field_from(|x| (PI * x).sin());
        let h = Control::zeros(0.2, 1, 4).unwrap();
        let a = solve_skeleton(&cs, &u0, &h, &c).unwrap();
        let b = solve_skeleton(&cs, &u0, &h, &c).unwrap();
        assert_eq!(a, b);
        let t = 0.2;
        let exact = c.grid.field_from(|x| (-PI * PI * t).exp() * (PI * x).sin());
        assert!(h_norm(&a.last().sub(&exact), &c.grid).unwrap() < 5e-3);
    }

    #[test]
    fn skeleton_constant_control_reaches_poisson_profile() {
        // stationary -u'' = c, u(0)=u(1)=0 gives c x (1-x) / 2, max c/8
        let c = cfg(63, 2.0, 2000);
        let cs = CoefficientSet::zero(1).with_constant_sigma(1.0);
        let level = 1.5;
        let h = Control::constant(2.0, 1, &[level]).unwrap();
        let p = solve_skeleton(&cs, &c.grid.zeros(), &h, &c).unwrap();
        let peak = p.last().max_abs();
        assert!((peak - level / 8.0).abs() / (level / 8.0) < 0.05, "{peak}");
    }

    #[test]
    fn energy_of_heat_flow() {
        // ∫_0^T ‖e^{-π² t} sin(πx)‖_V^2 dt = (1 - e^{-2π² T}) / 4
        let c = cfg(128, 0.5, 5000);
        let cs = CoefficientSet::zero(1);
        let u0 = c.grid.field_from(|x| (PI * x).sin());
        let p = solve(&cs, &u0, None, None, &c).unwrap();
        let (sup, int) = energy_functional(&p);
        let exact = (1.0 - (-2.0 * PI * PI * 0.5f64).exp()) / 4.0;
        assert!((int - exact).abs() / exact < 0.01, "{int} vs {exact}");
        assert!((sup - 0.5).abs() < 1e-3);

        let p2 = solve(&cs, &u0.scaled(2.0), None, None, &c).unwrap();
        let (sup2, int2) = energy_functional(&p2);
        assert!((sup2 - 4.0 * sup).abs() < 1e-12 * sup2);
        assert!((int2 - 4.0 * int).abs() < 1e-12 * int2);
    }

    #[test]
    fn heat_flows_distance_is_attained_at_start() {
        let c = cfg(32, 0.3, 300);
        let cs = CoefficientSet::zero(1);
        let s = c.grid.field_from(|x| (PI * x).sin());
        let p = solve(&cs, &s, None, None, &c).unwrap();
        let q = solve(&cs, &s.scaled(2.0), None, None, &c).unwrap();
        let d = path_distance(p.states(), q.states(), &c.grid, &c.mesh).unwrap();
        assert!((d.sup_h - h_norm(&s, &c.grid).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn upwind_scheme_stays_stable_on_steep_front() {
        let c = cfg(64, 0.5, 2000).with_convection(Convection::Upwind);
        let cs = CoefficientSet::zero(1).with_g(|_, z| 5.0 * z * z, |_, z| 10.0 * z);
        let u0 = c.grid.field_from(|x| if x < 0.5 { 2.0 } else { 0.0 });
        let p = solve(&cs, &u0, None, None, &c).unwrap();
        assert!(p.min_value() >= 0.0);
        assert!(p.last().max_abs() < 2.0);
    }

    #[test]
    fn control_basics() {
        let h = Control::new(2.0, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(h.blocks(), 2);
        // ½ (1 + 4) * 1
        assert_eq!(h.energy(), 2.5);
        assert!(h.in_ball(5.0) && !h.in_ball(4.9));
        let mesh = TimeMesh::new(2.0, 10).unwrap();
        assert_eq!(h.at_step(4, &mesh), &[1.0, 0.0]);
        assert_eq!(h.at_step(5, &mesh), &[0.0, 2.0]);
        assert!(Control::new(1.0, 2, vec![1.0]).is_err());
    }
}
