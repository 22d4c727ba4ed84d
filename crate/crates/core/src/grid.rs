//! Spatial grid, time mesh, discrete H/V norms and the path metric.
//!
//! The unit interval carries `m` interior nodes `x_i = i * dx`, `dx = 1/(m+1)`;
//! boundary values are implicitly zero (homogeneous Dirichlet). A path is a
//! slice of [`Field`]s, one per time node `t_k = k * dt`, `k = 0..=steps`.

use crate::error::{invalid, Error, Result};

/// Interior nodes of a uniform grid on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    m: usize,
    dx: f64,
}

impl SpatialGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(invalid(
                "grid.m",
                format!("need at least 2 interior nodes, got {m}"),
            ));
        }
        Ok(Self {
            m,
            dx: 1.0 / (m as f64 + 1.0),
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Coordinate of interior node `i` (0-based, so node `i` sits at `(i+1)*dx`).
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.x(i))
    }

    /// Samples `f` at the interior nodes.
    pub fn field_from(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.nodes().map(f).collect())
    }

    pub fn zeros(&self) -> Field {
        Field(vec![0.0; self.m])
    }

    pub(crate) fn check(&self, u: &Field) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: u.len(),
            });
        }
        Ok(())
    }
}

/// Values of a state `u(t, .)` at the interior nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Field(pub Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field(self.0.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, other: &Field) -> Field {
        Field(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Field) -> Field {
        Field(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Uniform time mesh on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMesh {
    t_end: f64,
    steps: usize,
    dt: f64,
}

impl TimeMesh {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(invalid(
                "mesh.t_end",
                format!("must be positive, got {t_end}"),
            ));
        }
        if steps == 0 {
            return Err(invalid("mesh.steps", "must be at least 1"));
        }
        Ok(Self {
            t_end,
            steps,
            dt: t_end / steps as f64,
        })
    }

    /// Mesh with step as close to `dt` as possible while landing exactly on `t_end`.
    pub fn with_dt(t_end: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("mesh.dt", format!("must be positive, got {dt}")));
        }
        let steps = (t_end / dt).round().max(1.0) as usize;
        Self::new(t_end, steps)
    }

    #[inline]
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_k`; the last node returns `t_end` exactly.
    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }
}

/// `(dx * sum u_i^2)^(1/2)`, the discrete L2 norm.
pub fn h_norm(u: &Field, grid: &SpatialGrid) -> Result<f64> {
    grid.check(u)?;
    Ok(h_norm_sq_unchecked(u.values(), grid.dx()).sqrt())
}

/// Discrete H^1_0 seminorm with ghost zeros at both ends.
pub fn v_norm(u: &Field, grid: &SpatialGrid) -> Result<f64> {
    grid.check(u)?;
    Ok(v_norm_sq_unchecked(u.values(), grid.dx()).sqrt())
}

#[inline]
pub(crate) fn h_norm_sq_unchecked(u: &[f64], dx: f64) -> f64 {
    dx * u.iter().map(|v| v * v).sum::<f64>()
}

#[inline]
pub(crate) fn v_norm_sq_unchecked(u: &[f64], dx: f64) -> f64 {
    let m = u.len();
    if m == 0 {
        return 0.0;
    }
    let mut acc = u[0] * u[0] + u[m - 1] * u[m - 1];
    for w in u.windows(2) {
        let d = w[1] - w[0];
        acc += d * d;
    }
    acc / dx
}

#[inline]
fn diff_norms_sq(p: &[f64], q: &[f64], dx: f64) -> (f64, f64) {
    let m = p.len();
    let mut h = 0.0;
    let mut v = 0.0;
    let mut prev = 0.0;
    for i in 0..m {
        let e = p[i] - q[i];
        h += e * e;
        let d = e - prev;
        v += d * d;
        prev = e;
    }
    v += prev * prev;
    (dx * h, v / dx)
}

/// Components of the distance between two discrete paths in
/// `C([0,T], H) ∩ L^2([0,T], V)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathDistance {
    /// `max_k |p_k - q_k|_H`
    pub sup_h: f64,
    /// `(sum_{k<steps} ||p_k - q_k||_V^2 dt)^(1/2)`
    pub l2_v: f64,
    /// `sup_h^2 + l2_v^2`, the canonical squared distance.
    pub squared: f64,
}

impl PathDistance {
    /// Metric form `sup_h + l2_v`.
    pub fn metric(&self) -> f64 {
        self.sup_h + self.l2_v
    }
}

fn check_path(p: &[Field], grid: &SpatialGrid, mesh: &TimeMesh, which: &str) -> Result<()> {
    if p.len() != mesh.steps() + 1 {
        return Err(Error::MeshMismatch(format!(
            "{which} has {} time nodes, mesh expects {}",
            p.len(),
            mesh.steps() + 1
        )));
    }
    p.iter().try_for_each(|u| grid.check(u))
}

pub fn path_distance(
    p: &[Field],
    q: &[Field],
    grid: &SpatialGrid,
    mesh: &TimeMesh,
) -> Result<PathDistance> {
    check_path(p, grid, mesh, "first path")?;
    check_path(q, grid, mesh, "second path")?;
    Ok(path_distance_unchecked(p, q, grid.dx(), mesh.dt()))
}

pub(crate) fn path_distance_unchecked(p: &[Field], q: &[Field], dx: f64, dt: f64) -> PathDistance {
    let n = p.len();
    let mut sup_h2: f64 = 0.0;
    let mut int_v2 = 0.0;
    for k in 0..n {
        let (h2, v2) = diff_norms_sq(p[k].values(), q[k].values(), dx);
        sup_h2 = sup_h2.max(h2);
        if k + 1 < n {
            int_v2 += v2 * dt;
        }
    }
    PathDistance {
        sup_h: sup_h2.sqrt(),
        l2_v: int_v2.sqrt(),
        squared: sup_h2 + int_v2,
    }
}

/// Exponentially weighted squared distances.
///
/// With `w_k = exp(-alpha * sum_{m<k} (1 + vp_m + vq_m) dt)` returns
/// `(max_k w_k |p_k - q_k|_H^2, sum_{k<steps} w_k ||p_k - q_k||_V^2 dt)`.
/// `vpath_p`/`vpath_q` hold the squared V-norms of each path per time node.
/// `alpha = 0` gives the unweighted quantities.
pub fn exp_weighted_sup(
    p: &[Field],
    q: &[Field],
    vpath_p: &[f64],
    vpath_q: &[f64],
    alpha: f64,
    grid: &SpatialGrid,
    mesh: &TimeMesh,
) -> Result<(f64, f64)> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(invalid(
            "alpha",
            format!("must be finite and nonnegative, got {alpha}"),
        ));
    }
    check_path(p, grid, mesh, "first path")?;
    check_path(q, grid, mesh, "second path")?;
    let n = mesh.steps() + 1;
    if vpath_p.len() != n || vpath_q.len() != n {
        return Err(Error::MeshMismatch(format!(
            "V-norm series have lengths {}/{}, mesh expects {n}",
            vpath_p.len(),
            vpath_q.len()
        )));
    }
    let dt = mesh.dt();
    let mut exponent = 0.0;
    let mut sup_h2: f64 = 0.0;
    let mut int_v2 = 0.0;
    for k in 0..n {
        let w = (-alpha * exponent).exp();
        let (h2, v2) = diff_norms_sq(p[k].values(), q[k].values(), grid.dx());
        sup_h2 = sup_h2.max(w * h2);
        if k + 1 < n {
            int_v2 += w * v2 * dt;
            exponent += (1.0 + vpath_p[k] + vpath_q[k]) * dt;
        }
    }
    Ok((sup_h2, int_v2))
}
