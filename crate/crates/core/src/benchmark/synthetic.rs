//! Stochastic block model graphs with Gaussian community features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SigilError};
use crate::graph::{synthesize_views, MultiViewGraph, View};
use crate::matrix::{Csr, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub communities: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Scale of the community mean vectors; node features add unit-variance noise.
    pub separation: f64,
    pub views: usize,
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 300,
            communities: 3,
            p_intra: 0.1,
            p_inter: 0.01,
            feature_dim: 16,
            separation: 1.0,
            views: 2,
            mask_prob: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SigilError::InvalidConfig(m));
        for (name, p) in [("p_intra", self.p_intra), ("p_inter", self.p_inter)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.communities < 2 {
            return bad(format!("need at least 2 communities, got {}", self.communities));
        }
        if self.n < self.communities {
            return bad(format!("{} nodes cannot hold {} communities", self.n, self.communities));
        }
        if self.feature_dim == 0 {
            return bad("feature dimension must be positive".into());
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be >= 0, got {}", self.separation));
        }
        Ok(())
    }

    /// Community of node `i`: contiguous, near-equal blocks.
    pub fn community_of(&self, i: usize) -> usize {
        i * self.communities / self.n
    }
}

/// Single-view SBM graph plus community labels.
pub fn generate_single_view(spec: &SyntheticSpec) -> Result<(View, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let community: Vec<usize> = (0..spec.n).map(|i| spec.community_of(i)).collect();
    let mut trip = Vec::new();
    for i in 0..spec.n {
        for j in (i + 1)..spec.n {
            let p = if community[i] == community[j] { spec.p_intra } else { spec.p_inter };
            if rng.random_bool(p) {
                trip.push((i, j, 1.0));
                trip.push((j, i, 1.0));
            }
        }
    }
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let means: Vec<Vec<f64>> =
        (0..spec.communities).map(|_| (0..spec.feature_dim).map(|_| spec.separation * normal()).collect()).collect();
    let x = Matrix::from_fn(spec.n, spec.feature_dim, |i, j| means[community[i]][j] + normal());
    Ok((View::new(Csr::from_triplets(spec.n, &trip), x)?, community))
}

/// SBM graph expanded to `spec.views` masked views.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiViewGraph> {
    let (view, _) = generate_single_view(spec)?;
    synthesize_views(&view, spec.views, spec.mask_prob, spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
}
