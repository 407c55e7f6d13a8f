use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Pool;
use crate::error::{LabError, Result};

/// Sampling weights over the three pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub mono_weight: u32,
    pub mv_weight_a: u32,
    pub mv_weight_b: u32,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec {
            mono_weight: 20,
            mv_weight_a: 1,
            mv_weight_b: 1,
        }
    }
}

impl MixSpec {
    pub const MONO_ONLY: MixSpec = MixSpec {
        mono_weight: 1,
        mv_weight_a: 0,
        mv_weight_b: 0,
    };

    pub fn weight(&self, pool: Pool) -> u32 {
        match pool {
            Pool::Mono => self.mono_weight,
            Pool::MvA => self.mv_weight_a,
            Pool::MvB => self.mv_weight_b,
        }
    }
}

/// Group indices available in each pool, with the number of views each
/// group holds.
#[derive(Clone, Debug, Default)]
pub struct Pools {
    pub mono: Vec<(usize, usize)>,
    pub mv_a: Vec<(usize, usize)>,
    pub mv_b: Vec<(usize, usize)>,
}

impl Pools {
    pub fn get(&self, pool: Pool) -> &[(usize, usize)] {
        match pool {
            Pool::Mono => &self.mono,
            Pool::MvA => &self.mv_a,
            Pool::MvB => &self.mv_b,
        }
    }
}

/// One sampled training item: a group and the views taken from it, the
/// first being the reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Draw {
    pub pool: Pool,
    pub group: usize,
    pub views: Vec<usize>,
}

impl Draw {
    pub fn is_multiview(&self) -> bool {
        self.pool != Pool::Mono
    }
}

pub const MIN_MV_VIEWS: usize = 2;
pub const MAX_MV_VIEWS: usize = 8;

/// Categorical draws over pools by `spec`, a uniform group within the pool,
/// and for multi-view pools 2–8 distinct views in random order.
pub fn sample_batch(pools: &Pools, spec: MixSpec, batch_size: usize, seed: u64) -> Result<Vec<Draw>> {
    let order = [Pool::Mono, Pool::MvA, Pool::MvB];
    let weights: Vec<u32> = order.iter().map(|&p| spec.weight(p)).collect();
    for &p in &order {
        if spec.weight(p) > 0 && pools.get(p).is_empty() {
            return Err(LabError::Config(format!("pool {p:?} is empty")));
        }
    }
    let dist = WeightedIndex::new(&weights).map_err(|e| LabError::Config(format!("mix weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let pool = order[dist.sample(&mut rng)];
        let members = pools.get(pool);
        let (group, nviews) = members[rng.random_range(0..members.len())];
        let views = if pool == Pool::Mono {
            vec![0]
        } else {
            if nviews < MIN_MV_VIEWS {
                return Err(LabError::Config(format!("group {group} has {nviews} views")));
            }
            let n = rng.random_range(MIN_MV_VIEWS..=nviews.min(MAX_MV_VIEWS));
            sample(&mut rng, nviews, n).into_vec()
        };
        out.push(Draw { pool, group, views });
    }
    Ok(out)
}
