//! Seeded Brownian increments.
//!
//! Every path draws from its own ChaCha8 stream selected by `(seed, path_index)`,
//! so path `i` of an ensemble is identical whether the ensemble is generated
//! serially or in parallel, and independent of how many other paths exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::grid::TimeMesh;

/// `d` channels of Brownian increments on a time mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    mesh: TimeMesh,
    d: usize,
    seed: u64,
    path_index: u64,
    /// Row-major `(step, channel)`.
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Increments `ΔW_{k, .}` over `[t_k, t_{k+1}]`.
    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.d..(k + 1) * self.d]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increments of one channel across all steps.
    pub fn channel(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.increments.iter().skip(j).step_by(self.d).copied()
    }

    /// A path with all increments zero.
    pub fn zeros(mesh: TimeMesh, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d", "need at least one noise channel"));
        }
        Ok(Self {
            mesh,
            d,
            seed: 0,
            path_index: 0,
            increments: vec![0.0; mesh.steps() * d],
        })
    }
}

/// Noise path 0 of the ensemble keyed by `seed`.
pub fn sample_noise(seed: u64, mesh: TimeMesh, d: usize) -> Result<NoisePath> {
    sample_noise_path(seed, 0, mesh, d)
}

/// Noise path `path_index` of the ensemble keyed by `seed`.
pub fn sample_noise_path(
    seed: u64,
    path_index: u64,
    mesh: TimeMesh,
    d: usize,
) -> Result<NoisePath> {
    if d == 0 {
        return Err(invalid("d", "need at least one noise channel"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let sd = mesh.dt().sqrt();
    let increments = (0..mesh.steps() * d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    Ok(NoisePath {
        mesh,
        d,
        seed,
        path_index,
        increments,
    })
}

/// Derives an independent 64-bit seed from a master seed and a label (splitmix64 finalizer).
pub fn derive_seed(master: u64, label: u64) -> u64 {
    let mut z = master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_distinctness() {
        let mesh = TimeMesh::new(1.0, 100).unwrap();
        let a = sample_noise(7, mesh, 2).unwrap();
        let b = sample_noise(7, mesh, 2).unwrap();
        let c = sample_noise(8, mesh, 2).unwrap();
        let other_path = sample_noise_path(7, 1, mesh, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.increments(), c.increments());
        assert_ne!(a.increments(), other_path.increments());
    }

    #[test]
    fn empirical_variance_matches_dt() {
        let mesh = TimeMesh::new(10.0, 100_000).unwrap();
        let dt = mesh.dt();
        assert!((dt - 1e-4).abs() < 1e-18);
        let noise = sample_noise(2024, mesh, 1).unwrap();
        let n = noise.increments().len() as f64;
        let mean = noise.increments().iter().sum::<f64>() / n;
        let var = noise
            .increments()
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((var / dt - 1.0).abs() < 0.05, "variance ratio {}", var / dt);
    }

    #[test]
    fn channels_are_interleaved() {
        let mesh = TimeMesh::new(1.0, 3).unwrap();
        let noise = sample_noise(1, mesh, 2).unwrap();
        let ch1: Vec<f64> = noise.channel(1).collect();
        assert_eq!(
            ch1,
            vec![
                noise.increment(0)[1],
                noise.increment(1)[1],
                noise.increment(2)[1]
            ]
        );
        assert!(sample_noise(1, mesh, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
