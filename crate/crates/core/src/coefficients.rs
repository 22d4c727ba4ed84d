//! Coefficient sets `(g, f, sigma_j)`, builtin families, time averaging and
//! sampling-based audits of the growth and monotonicity assumptions.
//!
//! Coefficients are opaque callables. `g(t, z)` is the convection flux (its
//! spatial derivative enters the equation), `f(t, x, z)` the reaction term and
//! `sigma_j(t, x, z)` the multiplier of the `j`-th Brownian channel.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

pub type FluxFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ReactionFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Writes `sigma_1..sigma_d` at `(t, x, z)` into the output slice.
pub type NoiseFn = Arc<dyn Fn(f64, f64, f64, &mut [f64]) + Send + Sync>;
/// Time-independent `(x, z) -> R`.
pub type SpaceFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Time-independent `(x, z) -> R^d` written into the output slice.
pub type SpaceNoiseFn = Arc<dyn Fn(f64, f64, &mut [f64]) + Send + Sync>;

/// Evaluable coefficients of the reflected equation.
#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    d: usize,
    g: FluxFn,
    dg_dz: FluxFn,
    f: ReactionFn,
    sigma: NoiseFn,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// All coefficients identically zero, `d` noise channels.
    pub fn zero(d: usize) -> Self {
        assert!(d >= 1, "coefficient set needs at least one noise channel");
        Self {
            name: "zero".into(),
            d,
            g: Arc::new(|_, _| 0.0),
            dg_dz: Arc::new(|_, _| 0.0),
            f: Arc::new(|_, _, _| 0.0),
            sigma: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Sets the flux together with its analytic `z`-derivative.
    pub fn with_g(
        mut self,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dg_dz: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.g = Arc::new(g);
        self.dg_dz = Arc::new(dg_dz);
        self
    }

    pub fn with_f(mut self, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn with_sigma(
        mut self,
        sigma: impl Fn(f64, f64, f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma = Arc::new(sigma);
        self
    }

    /// Every channel equal to `level`.
    pub fn with_constant_sigma(self, level: f64) -> Self {
        self.with_sigma(move |_, _, _, out: &mut [f64]| out.fill(level))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn g(&self, t: f64, z: f64) -> f64 {
        (self.g)(t, z)
    }

    #[inline]
    pub fn dg_dz(&self, t: f64, z: f64) -> f64 {
        (self.dg_dz)(t, z)
    }

    #[inline]
    pub fn f(&self, t: f64, x: f64, z: f64) -> f64 {
        (self.f)(t, x, z)
    }

    #[inline]
    pub fn sigma_into(&self, t: f64, x: f64, z: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.d);
        (self.sigma)(t, x, z, out)
    }

    pub fn sigma(&self, t: f64, x: f64, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.sigma_into(t, x, z, &mut out);
        out
    }
}

/// Shape of the `z`-dependence of the noise coefficients in builtin families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaShape {
    /// `sigma_j = level * m_j(x)`
    Constant,
    /// `sigma_j = level * m_j(x) * (1 + z/(1+|z|)) / 2`, bounded and 1-Lipschitz in `z`.
    Saturating,
}

/// Reaction and noise profile of the builtin Burgers family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    /// `f = c1 * z / (1 + z^2) + c2`
    pub c1: f64,
    pub c2: f64,
    pub sigma_level: f64,
    pub shape: SigmaShape,
    pub d: usize,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            c1: 0.0,
            c2: 0.0,
            sigma_level: 1.0,
            shape: SigmaShape::Constant,
            d: 1,
        }
    }
}

/// Spatial mode multiplying channel `j` (0-based): `1` for the first channel,
/// `cos(j pi x)` afterwards.
#[inline]
fn channel_mode(j: usize, x: f64) -> f64 {
    if j == 0 {
        1.0
    } else {
        (j as f64 * std::f64::consts::PI * x).cos()
    }
}

fn profile_sigma(
    profile: &NoiseProfile,
) -> impl Fn(f64, f64, f64, &mut [f64]) + Send + Sync + 'static {
    let level = profile.sigma_level;
    let shape = profile.shape;
    move |_t, x, z, out: &mut [f64]| {
        let zf = match shape {
            SigmaShape::Constant => 1.0,
            SigmaShape::Saturating => 0.5 * (1.0 + z / (1.0 + z.abs())),
        };
        for (j, o) in out.iter_mut().enumerate() {
            *o = level * channel_mode(j, x) * zf;
        }
    }
}

/// Burgers-type set: `g(t, z) = a_g z^2 / 2`, reaction and noise from `profile`.
pub fn make_burgers_set(a_g: f64, profile: &NoiseProfile) -> CoefficientSet {
    let (c1, c2) = (profile.c1, profile.c2);
    CoefficientSet::zero(profile.d.max(1))
        .with_name(format!("burgers(a_g={a_g})"))
        .with_g(move |_, z| 0.5 * a_g * z * z, move |_, z| a_g * z)
        .with_f(move |_, _, z| c1 * z / (1.0 + z * z) + c2)
        .with_sigma(profile_sigma(profile))
}

/// Time-independent coefficients `(f_bar, sigma_bar)` paired with the
/// time-dependent set they average.
#[derive(Clone)]
pub struct AveragedCoefficientSet {
    f_bar: SpaceFn,
    sigma_bar: SpaceNoiseFn,
    source: CoefficientSet,
    t_hat_used: f64,
}

impl fmt::Debug for AveragedCoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AveragedCoefficientSet")
            .field("source", &self.source)
            .field("t_hat_used", &self.t_hat_used)
            .finish_non_exhaustive()
    }
}

impl AveragedCoefficientSet {
    pub fn new(
        f_bar: SpaceFn,
        sigma_bar: SpaceNoiseFn,
        source: CoefficientSet,
        t_hat_used: f64,
    ) -> Self {
        Self {
            f_bar,
            sigma_bar,
            source,
            t_hat_used,
        }
    }

    pub fn source(&self) -> &CoefficientSet {
        &self.source
    }

    /// Averaging horizon; `f64::INFINITY` for exact limits.
    pub fn t_hat_used(&self) -> f64 {
        self.t_hat_used
    }

    pub fn channels(&self) -> usize {
        self.source.channels()
    }

    #[inline]
    pub fn f_bar(&self, x: f64, z: f64) -> f64 {
        (self.f_bar)(x, z)
    }

    #[inline]
    pub fn sigma_bar_into(&self, x: f64, z: f64, out: &mut [f64]) {
        (self.sigma_bar)(x, z, out)
    }

    pub fn sigma_bar(&self, x: f64, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.channels()];
        self.sigma_bar_into(x, z, &mut out);
        out
    }

    /// Coefficient set of the averaged equation: the flux of the source with
    /// `f_bar` and `sigma_bar` in place of `f` and `sigma`.
    pub fn to_coefficient_set(&self) -> CoefficientSet {
        let f_bar = self.f_bar.clone();
        let sigma_bar = self.sigma_bar.clone();
        CoefficientSet {
            name: format!("avg[{}]", self.source.name),
            d: self.source.d,
            g: self.source.g.clone(),
            dg_dz: self.source.dg_dz.clone(),
            f: Arc::new(move |_, x, z| f_bar(x, z)),
            sigma: Arc::new(move |_, x, z, out: &mut [f64]| sigma_bar(x, z, out)),
        }
    }
}

/// Ingredients of a decaying multiscale family: the averaged coefficients and
/// bounded Lipschitz perturbation shapes `b_f`, `b_sigma`.
#[derive(Clone)]
pub struct MultiscaleBase {
    pub name: String,
    pub d: usize,
    pub g: FluxFn,
    pub dg_dz: FluxFn,
    pub f_bar: SpaceFn,
    pub sigma_bar: SpaceNoiseFn,
    pub b_f: SpaceFn,
    pub b_sigma: SpaceNoiseFn,
}

impl fmt::Debug for MultiscaleBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiscaleBase")
            .field("name", &self.name)
            .field("d", &self.d)
            .finish_non_exhaustive()
    }
}

/// Parameters of the builtin decaying family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayingParams {
    pub a_g: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma_level: f64,
    /// Constant value of each `b_sigma_j`.
    pub sigma_perturbation: f64,
    pub d: usize,
}

impl Default for DecayingParams {
    fn default() -> Self {
        Self {
            a_g: 0.5,
            c1: 1.0,
            c2: 1.0,
            sigma_level: 0.5,
            sigma_perturbation: 0.5,
            d: 1,
        }
    }
}

impl MultiscaleBase {
    /// Burgers flux, `f_bar = c1 z/(1+z^2) + c2`, constant-in-z `sigma_bar`,
    /// `b_f = 1` and `b_sigma_j = sigma_perturbation`.
    pub fn decaying(p: &DecayingParams) -> Self {
        let DecayingParams {
            a_g,
            c1,
            c2,
            sigma_level,
            sigma_perturbation,
            d,
        } = *p;
        Self {
            name: "decaying".into(),
            d: d.max(1),
            g: Arc::new(move |_, z| 0.5 * a_g * z * z),
            dg_dz: Arc::new(move |_, z| a_g * z),
            f_bar: Arc::new(move |_, z| c1 * z / (1.0 + z * z) + c2),
            sigma_bar: Arc::new(move |x, _, out: &mut [f64]| {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = sigma_level * channel_mode(j, x);
                }
            }),
            b_f: Arc::new(|_, _| 1.0),
            b_sigma: Arc::new(move |_, _, out: &mut [f64]| out.fill(sigma_perturbation)),
        }
    }

    /// The exact averaged set (`t_hat_used = inf`) for `source`, which must
    /// have been built from this base.
    pub fn exact_average(&self, source: &CoefficientSet) -> AveragedCoefficientSet {
        AveragedCoefficientSet::new(
            self.f_bar.clone(),
            self.sigma_bar.clone(),
            source.clone(),
            f64::INFINITY,
        )
    }
}

/// `f(s,x,z) = f_bar(x,z) + amplitude * b_f(x,z) * (1+s)^(-beta)` and likewise
/// for each `sigma_j`.
pub fn make_multiscale_set(
    base: &MultiscaleBase,
    beta: f64,
    amplitude: f64,
) -> Result<CoefficientSet> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    let f_bar = base.f_bar.clone();
    let b_f = base.b_f.clone();
    let sigma_bar = base.sigma_bar.clone();
    let b_sigma = base.b_sigma.clone();
    let d = base.d;
    let sigma: NoiseFn = Arc::new(move |s, x, z, out: &mut [f64]| {
        sigma_bar(x, z, out);
        if amplitude != 0.0 {
            let decay = amplitude * (1.0 + s).powf(-beta);
            let mut pert = [0.0; 8];
            if d <= pert.len() {
                b_sigma(x, z, &mut pert[..d]);
                for (o, b) in out.iter_mut().zip(&pert[..d]) {
                    *o += decay * b;
                }
            } else {
                let mut pert = vec![0.0; d];
                b_sigma(x, z, &mut pert);
                for (o, b) in out.iter_mut().zip(&pert) {
                    *o += decay * b;
                }
            }
        }
    });
    Ok(CoefficientSet {
        name: format!("{}(beta={beta},amp={amplitude})", base.name),
        d,
        g: base.g.clone(),
        dg_dz: base.dg_dz.clone(),
        f: Arc::new(move |s, x, z| {
            let fb = f_bar(x, z);
            if amplitude == 0.0 {
                fb
            } else {
                fb + amplitude * b_f(x, z) * (1.0 + s).powf(-beta)
            }
        }),
        sigma,
    })
}

/// Composite Simpson rule on `[a, b]` with `n` subintervals (rounded up to even).
pub fn simpson(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Cesàro averages `(1/T) ∫_0^T f(s,x,z) ds` (and the same for each
/// `sigma_j`), evaluated lazily by Simpson quadrature.
pub fn average_coefficients(
    cs: &CoefficientSet,
    t_hat: f64,
    quad_steps: usize,
) -> Result<AveragedCoefficientSet> {
    if !(t_hat.is_finite() && t_hat > 0.0) {
        return Err(invalid("t_hat", format!("must be positive, got {t_hat}")));
    }
    let src_f = cs.clone();
    let src_s = cs.clone();
    let d = cs.channels();
    let f_bar: SpaceFn =
        Arc::new(move |x, z| simpson(|s| src_f.f(s, x, z), 0.0, t_hat, quad_steps) / t_hat);
    let sigma_bar: SpaceNoiseFn = Arc::new(move |x, z, out: &mut [f64]| {
        let mut buf = vec![0.0; d];
        for (j, o) in out.iter_mut().enumerate() {
            *o = simpson(
                |s| {
                    src_s.sigma_into(s, x, z, &mut buf);
                    buf[j]
                },
                0.0,
                t_hat,
                quad_steps,
            ) / t_hat;
        }
    });
    Ok(AveragedCoefficientSet::new(
        f_bar,
        sigma_bar,
        cs.clone(),
        t_hat,
    ))
}

/// `kappa_hat(T) = max_{x,z} (1/T) ∫_0^T (|f - f_bar|^2 + sum_j |sigma_j - sigma_bar_j|^2) ds / (1 + z^2)`
/// for each `T` in `t_hat_list`.
pub fn estimate_kappa(
    cs: &CoefficientSet,
    avg: &AveragedCoefficientSet,
    t_hat_list: &[f64],
    z_samples: &[f64],
    x_samples: &[f64],
    quad_steps: usize,
) -> Result<Vec<(f64, f64)>> {
    if z_samples.is_empty() || x_samples.is_empty() {
        return Err(invalid("samples", "need at least one x and one z sample"));
    }
    if t_hat_list.is_empty() {
        return Err(invalid("t_hat_list", "empty"));
    }
    if t_hat_list.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(invalid("t_hat_list", "entries must be positive"));
    }
    if t_hat_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t_hat_list", "must be strictly increasing"));
    }
    let d = cs.channels();
    let mut sig = vec![0.0; d];
    let mut sig_bar = vec![0.0; d];
    let mut out = Vec::with_capacity(t_hat_list.len());
    for &t_hat in t_hat_list {
        let mut kappa: f64 = 0.0;
        for &x in x_samples {
            for &z in z_samples {
                let fb = avg.f_bar(x, z);
                avg.sigma_bar_into(x, z, &mut sig_bar);
                let dev = simpson(
                    |s| {
                        let df = cs.f(s, x, z) - fb;
                        cs.sigma_into(s, x, z, &mut sig);
                        let ds: f64 = sig
                            .iter()
                            .zip(&sig_bar)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        df * df + ds
                    },
                    0.0,
                    t_hat,
                    quad_steps,
                ) / t_hat;
                kappa = kappa.max(dev / (1.0 + z * z));
            }
        }
        out.push((t_hat, kappa));
    }
    Ok(out)
}

/// Sampling box for audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditBox {
    pub t: (f64, f64),
    pub x: (f64, f64),
    pub z: (f64, f64),
}

impl AuditBox {
    pub fn new(t: (f64, f64), x: (f64, f64), z: (f64, f64)) -> Self {
        Self { t, x, z }
    }

    fn scaled_z(&self, factor: f64) -> Self {
        Self {
            z: (self.z.0 * factor, self.z.1 * factor),
            ..*self
        }
    }
}

/// Which assumption a ratio belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// `|dg/dz| <= L_g (1 + |z|)`
    FluxDerivative,
    /// one-sided Lipschitz bound of `f`
    ReactionMonotone,
    /// `|f|^2 <= L_f (1 + |z|^2)`
    ReactionGrowth,
    /// `sum_j |sigma_j(z) - sigma_j(z')|^2 <= L_sigma |z - z'|^2`
    NoiseLipschitz,
    /// `sum_j |sigma_j|^2 <= L_sigma (1 + |z|^2)`
    NoiseGrowth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub t: f64,
    pub x: f64,
    pub z: f64,
    pub z_prime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub assumption: Assumption,
    pub witness: Witness,
    /// Ratio at the witness.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub l_g_hat: f64,
    pub l_f_monotone_hat: f64,
    pub l_f_growth_hat: f64,
    pub l_sigma_hat: f64,
    pub violations: Vec<Violation>,
    pub n_samples: usize,
}

const ASSUMPTIONS: [Assumption; 5] = [
    Assumption::FluxDerivative,
    Assumption::ReactionMonotone,
    Assumption::ReactionGrowth,
    Assumption::NoiseLipschitz,
    Assumption::NoiseGrowth,
];

#[derive(Clone, Copy)]
struct Sample {
    t: f64,
    x: f64,
    z: f64,
    z_prime: f64,
}

fn ratios(cs: &CoefficientSet, s: &Sample, a: &mut [f64], b: &mut [f64]) -> [f64; 5] {
    let Sample { t, x, z, z_prime } = *s;
    let dz = z - z_prime;
    let flux = cs.dg_dz(t, z).abs() / (1.0 + z.abs());
    let fz = cs.f(t, x, z);
    let monotone = if dz != 0.0 {
        dz * (fz - cs.f(t, x, z_prime)) / (dz * dz)
    } else {
        f64::NEG_INFINITY
    };
    let growth = fz * fz / (1.0 + z * z);
    cs.sigma_into(t, x, z, a);
    cs.sigma_into(t, x, z_prime, b);
    let lip = if dz != 0.0 {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            / (dz * dz)
    } else {
        0.0
    };
    let sgrowth = a.iter().map(|p| p * p).sum::<f64>() / (1.0 + z * z);
    [flux, monotone, growth, lip, sgrowth]
}

fn sup_ratios(cs: &CoefficientSet, samples: &[Sample], bx: &AuditBox) -> ([f64; 5], [Sample; 5]) {
    let d = cs.channels();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut best = [f64::NEG_INFINITY; 5];
    let mut arg = [samples[0]; 5];
    let zmid = 0.5 * (bx.z.0 + bx.z.1);
    for s in samples {
        // unit-box sample mapped into this box
        let s = Sample {
            z: s.z * 0.5 * (bx.z.1 - bx.z.0) + zmid,
            z_prime: s.z_prime * 0.5 * (bx.z.1 - bx.z.0) + zmid,
            ..*s
        };
        let r = ratios(cs, &s, &mut a, &mut b);
        for i in 0..5 {
            if r[i].is_nan() || r[i] == f64::INFINITY {
                if best[i] != f64::INFINITY {
                    best[i] = f64::INFINITY;
                    arg[i] = s;
                }
            } else if r[i] > best[i] {
                best[i] = r[i];
                arg[i] = s;
            }
        }
    }
    (best, arg)
}

/// Sampled estimates of the constants in the flux, reaction and noise
/// assumptions over `bx`, with a growth probe on the box enlarged 2x and 4x
/// in `z`: a ratio that keeps growing by more than 50% per doubling is
/// reported as a violation together with its worst sample.
pub fn audit_assumptions(
    cs: &CoefficientSet,
    bx: &AuditBox,
    n_samples: usize,
    seed: u64,
) -> AuditReport {
    let n = n_samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    // z, z' are stored on [-1, 1] and mapped into each (scaled) box; the
    // extreme corners are always included.
    let mut samples: Vec<Sample> = (0..n)
        .map(|_| Sample {
            t: draw(&mut rng, bx.t),
            x: draw(&mut rng, bx.x),
            z: rng.random_range(-1.0..=1.0),
            z_prime: rng.random_range(-1.0..=1.0),
        })
        .collect();
    for (z, zp) in [(1.0, -1.0), (-1.0, 1.0), (1.0, 0.0), (-1.0, 0.0)] {
        samples.push(Sample {
            t: bx.t.1,
            x: 0.5 * (bx.x.0 + bx.x.1),
            z,
            z_prime: zp,
        });
    }

    let (r1, arg1) = sup_ratios(cs, &samples, bx);
    let (r2, _) = sup_ratios(cs, &samples, &bx.scaled_z(2.0));
    let (r4, arg4) = sup_ratios(cs, &samples, &bx.scaled_z(4.0));

    let mut violations = Vec::new();
    for i in 0..5 {
        let unbounded = r1[i] > 0.0 && r2[i] > 1.5 * r1[i] && r4[i] > 1.5 * r2[i];
        if r1[i] == f64::INFINITY {
            let s = arg1[i];
            violations.push(Violation {
                assumption: ASSUMPTIONS[i],
                witness: Witness {
                    t: s.t,
                    x: s.x,
                    z: s.z,
                    z_prime: s.z_prime,
                },
                ratio: r1[i],
            });
        } else if unbounded {
            let s = arg4[i];
            violations.push(Violation {
                assumption: ASSUMPTIONS[i],
                witness: Witness {
                    t: s.t,
                    x: s.x,
                    z: s.z,
                    z_prime: s.z_prime,
                },
                ratio: r4[i],
            });
        }
    }
    let clamp = |v: f64| v.max(0.0);
    AuditReport {
        l_g_hat: clamp(r1[0]),
        l_f_monotone_hat: clamp(r1[1]),
        l_f_growth_hat: clamp(r1[2]),
        l_sigma_hat: clamp(r1[3].max(r1[4])),
        violations,
        n_samples: samples.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(zmax: f64) -> AuditBox {
        AuditBox::new((0.0, 1.0), (0.0, 1.0), (-zmax, zmax))
    }

    #[test]
    fn burgers_flux_derivative() {
        let cs = make_burgers_set(1.0, &NoiseProfile::default());
        assert_eq!(cs.dg_dz(0.0, 3.0), 3.0);
        let zero = make_burgers_set(0.0, &NoiseProfile::default());
        assert_eq!(zero.g(0.3, 7.0), 0.0);
    }

    #[test]
    fn flux_derivative_matches_finite_differences() {
        let cs = make_burgers_set(1.7, &NoiseProfile::default());
        for z in [-3.0, -0.5, 0.0, 0.25, 4.0] {
            let h = 1e-5;
            let fd = (cs.g(0.0, z + h) - cs.g(0.0, z - h)) / (2.0 * h);
            assert!((fd - cs.dg_dz(0.0, z)).abs() < 1e-6);
        }
    }

    #[test]
    fn audit_flux_constant() {
        // sampled max of |a z| / (1 + |z|) is a * zmax / (1 + zmax)
        let cs = make_burgers_set(2.0, &NoiseProfile::default());
        let rep = audit_assumptions(&cs, &unit_box(10.0), 4000, 1);
        let oracle = 2.0 * 10.0 / 11.0;
        assert!(
            (rep.l_g_hat - oracle).abs() / oracle < 0.01,
            "{}",
            rep.l_g_hat
        );
        assert!(rep.l_g_hat <= 2.0);

        let cs = CoefficientSet::zero(1).with_g(|_, z| 0.5 * z * z, |_, z| z);
        let rep = audit_assumptions(&cs, &unit_box(5.0), 4000, 2);
        assert!((rep.l_g_hat - 5.0 / 6.0).abs() < 1e-3 * 5.0 / 6.0 + 1e-12);
        assert!(rep.violations.is_empty(), "{:?}", rep.violations);
    }

    #[test]
    fn audit_decreasing_drift_is_monotone() {
        let cs = CoefficientSet::zero(1).with_f(|_, _, z| -z);
        let rep = audit_assumptions(&cs, &unit_box(3.0), 1000, 3);
        // the ratio is exactly -1; the report clamps estimates at 0
        assert_eq!(rep.l_f_monotone_hat, 0.0);
        assert!(rep.violations.is_empty());
    }

    #[test]
    fn audit_flags_quadratic_noise() {
        let cs = CoefficientSet::zero(1).with_sigma(|_, _, z, out: &mut [f64]| out[0] = z * z);
        let rep = audit_assumptions(&cs, &unit_box(5.0), 500, 4);
        let growth = rep
            .violations
            .iter()
            .find(|v| v.assumption == Assumption::NoiseGrowth)
            .expect("noise growth violation");
        // witness at the corner of the 4x box
        assert!(growth.witness.z.abs() > 15.0);
        assert!(rep
            .violations
            .iter()
            .any(|v| v.assumption == Assumption::NoiseLipschitz));
    }

    #[test]
    fn multiscale_zero_amplitude_is_average() {
        let base = MultiscaleBase::decaying(&DecayingParams::default());
        assert!(make_multiscale_set(&base, 0.0, 1.0).is_err());
        let cs = make_multiscale_set(&base, 0.5, 0.0).unwrap();
        for s in [0.0, 1.0, 1e3] {
            assert_eq!(cs.f(s, 0.3, 2.0), (base.f_bar)(0.3, 2.0));
        }
        let cs = make_multiscale_set(&base, 0.5, 1.0).unwrap();
        assert!((cs.f(1e12, 0.3, 2.0) - (base.f_bar)(0.3, 2.0)).abs() < 1e-5);
    }

    #[test]
    fn multiscale_time_average_closed_form() {
        // (1/T) ∫ (1+s)^{-1} ds = ln(1+T)/T; at T = 100 that is 0.046151...
        let closed = (101f64).ln() / 100.0;
        assert!((closed - 0.04615).abs() < 1e-5);
        let quad = simpson(|s| 1.0 / (1.0 + s), 0.0, 100.0, 20_000) / 100.0;
        assert!((quad - closed).abs() < 1e-8);
    }

    #[test]
    fn averaging_time_constant_is_exact() {
        let cs = make_burgers_set(
            1.0,
            &NoiseProfile {
                c1: 2.0,
                c2: 0.3,
                sigma_level: 0.7,
                shape: SigmaShape::Saturating,
                d: 2,
            },
        );
        let avg = average_coefficients(&cs, 5.0, 10).unwrap();
        for (x, z) in [(0.2, -1.0), (0.7, 3.0)] {
            assert!((avg.f_bar(x, z) - cs.f(0.0, x, z)).abs() < 1e-14);
            let sb = avg.sigma_bar(x, z);
            let s = cs.sigma(0.0, x, z);
            for j in 0..2 {
                assert!((sb[j] - s[j]).abs() < 1e-14);
            }
        }
        assert!(average_coefficients(&cs, 0.0, 10).is_err());
    }

    #[test]
    fn averaging_decaying_perturbation() {
        let base = MultiscaleBase::decaying(&DecayingParams::default());
        let cs = make_multiscale_set(&base, 0.5, 1.0).unwrap();
        let t_hat = 1e4;
        let avg = average_coefficients(&cs, t_hat, 40_000).unwrap();
        // (1/T) ∫ (1+s)^{-1/2} ds = 2 (sqrt(1+T) - 1) / T
        let expected = 2.0 * ((1.0 + t_hat).sqrt() - 1.0) / t_hat;
        let dev = avg.f_bar(0.5, 1.0) - (base.f_bar)(0.5, 1.0);
        assert!(dev.abs() <= 2e-2);
        assert!((dev - expected).abs() < 1e-6, "{dev} vs {expected}");
    }

    #[test]
    fn averaging_is_linear() {
        let a = CoefficientSet::zero(1).with_f(|s, x, z| (s).sin() * x + z);
        let b = CoefficientSet::zero(1).with_f(|s, _, z| (1.0 + s).recip() * z * z);
        let sum = CoefficientSet::zero(1)
            .with_f(|s, x, z| 2.0 * ((s).sin() * x + z) + 3.0 * (1.0 + s).recip() * z * z);
        let (ta, tb, ts) = (
            average_coefficients(&a, 7.0, 400).unwrap(),
            average_coefficients(&b, 7.0, 400).unwrap(),
            average_coefficients(&sum, 7.0, 400).unwrap(),
        );
        let (x, z) = (0.4, 1.3);
        let lhs = ts.f_bar(x, z);
        let rhs = 2.0 * ta.f_bar(x, z) + 3.0 * tb.f_bar(x, z);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    fn kappa_inputs() -> (Vec<f64>, Vec<f64>) {
        let z: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.5).collect();
        let x = vec![0.1, 0.5, 0.9];
        (z, x)
    }

    #[test]
    fn kappa_zero_for_time_constant() {
        let base = MultiscaleBase::decaying(&DecayingParams::default());
        let cs = make_multiscale_set(&base, 0.5, 0.0).unwrap();
        let avg = base.exact_average(&cs);
        let (z, x) = kappa_inputs();
        let k = estimate_kappa(&cs, &avg, &[10.0, 100.0], &z, &x, 1000).unwrap();
        assert!(k.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn kappa_closed_form_and_monotone() {
        let params = DecayingParams::default();
        let base = MultiscaleBase::decaying(&params);
        let cs = make_multiscale_set(&base, 0.5, 1.0).unwrap();
        let avg = base.exact_average(&cs);
        let (z, x) = kappa_inputs();
        let k = estimate_kappa(&cs, &avg, &[1e2, 1e3, 1e4], &z, &x, 20_000).unwrap();
        // b_f = 1, b_sigma = 0.5: squared deviation (1 + 0.25) (1+s)^{-1}, max at z = 0
        let factor = 1.0 + params.sigma_perturbation.powi(2) * params.d as f64;
        for (t, kh) in &k {
            let closed = factor * (1.0 + t).ln() / t;
            assert!(
                (kh - closed).abs() / closed < 0.10,
                "T={t}: {kh} vs {closed}"
            );
        }
        assert!(k.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn kappa_errors() {
        let cs = CoefficientSet::zero(1);
        let avg = average_coefficients(&cs, 1.0, 4).unwrap();
        assert!(estimate_kappa(&cs, &avg, &[1.0], &[], &[0.5], 4).is_err());
        assert!(estimate_kappa(&cs, &avg, &[2.0, 1.0], &[0.0], &[0.5], 4).is_err());
    }

    #[test]
    fn kappa_invariant_under_channel_relabeling() {
        let p = DecayingParams {
            d: 2,
            ..Default::default()
        };
        let mut base = MultiscaleBase::decaying(&p);
        base.b_sigma = Arc::new(|x, _, out: &mut [f64]| {
            out[0] = 0.3;
            out[1] = x;
        });
        let cs = make_multiscale_set(&base, 0.5, 1.0).unwrap();
        let avg = base.exact_average(&cs);
        let swap = |inner: CoefficientSet| {
            let c = inner.clone();
            inner.with_sigma(move |t, x, z, out: &mut [f64]| {
                let s = c.sigma(t, x, z);
                out[0] = s[1];
                out[1] = s[0];
            })
        };
        let cs_sw = swap(cs.clone());
        let avg_sw = average_coefficients(&cs_sw, 1.0, 2).unwrap();
        let sb = avg.sigma_bar.clone();
        let avg_sw = AveragedCoefficientSet::new(
            avg.f_bar.clone(),
            Arc::new(move |x, z, out: &mut [f64]| {
                let mut tmp = [0.0; 2];
                sb(x, z, &mut tmp);
                out[0] = tmp[1];
                out[1] = tmp[0];
            }),
            avg_sw.source().clone(),
            f64::INFINITY,
        );
        let (z, x) = kappa_inputs();
        let a = estimate_kappa(&cs, &avg, &[50.0], &z, &x, 2000).unwrap();
        let b = estimate_kappa(&cs_sw, &avg_sw, &[50.0], &z, &x, 2000).unwrap();
        assert!((a[0].1 - b[0].1).abs() < 1e-14);
    }

    #[test]
    fn averaged_constants_respect_source_bounds() {
        // averaged coefficients inherit the one-sided Lipschitz constant, and
        // the growth/Lipschitz bounds with factors 2 and 3
        let p = DecayingParams {
            c1: 1.5,
            c2: 0.5,
            sigma_level: 0.8,
            sigma_perturbation: 0.4,
            d: 2,
            a_g: 1.0,
        };
        let base = MultiscaleBase::decaying(&p);
        let cs = make_multiscale_set(&base, 0.5, 1.0).unwrap();
        let bx = AuditBox::new((0.0, 50.0), (0.0, 1.0), (-4.0, 4.0));
        let src = audit_assumptions(&cs, &bx, 3000, 11);
        let avg = base.exact_average(&cs).to_coefficient_set();
        let bar = audit_assumptions(&avg, &bx, 3000, 11);
        let tol = 1e-2;
        assert!(bar.l_f_monotone_hat <= src.l_f_monotone_hat + tol);
        assert!(bar.l_f_growth_hat <= 2.0 * src.l_f_growth_hat + tol);
        assert!(bar.l_sigma_hat <= 3.0 * src.l_sigma_hat + tol);
        assert!(src.violations.is_empty() && bar.violations.is_empty());
    }
}
