//! Static matrix-factorization baseline trained with BPR on pooled data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{sample_bpr_batch, ObservedItems};

use super::ModelError;

#[derive(Clone, Debug, PartialEq)]
pub struct MfConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 16,
            learning_rate: 0.05,
            l2: 1e-4,
            epochs: 30,
            init_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MatrixFactorization {
    pub dim: usize,
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

impl MatrixFactorization {
    /// SGD over uniformly sampled BPR triples, `pairs.len()` triples per epoch.
    pub fn train(
        num_users: usize,
        num_items: usize,
        pairs: &[(usize, usize)],
        config: &MfConfig,
    ) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal =
            Normal::new(0.0, config.init_std).map_err(|e| ModelError::Config(e.to_string()))?;
        let d = config.dim;
        let mut mf = MatrixFactorization {
            dim: d,
            users: (0..num_users * d)
                .map(|_| normal.sample(&mut rng))
                .collect(),
            items: (0..num_items * d)
                .map(|_| normal.sample(&mut rng))
                .collect(),
        };
        let observed = ObservedItems::from_pairs(num_users, pairs.iter().copied());
        let lr = config.learning_rate;
        for _ in 0..config.epochs {
            let batch = sample_bpr_batch(pairs, &observed, num_items, pairs.len(), &mut rng)?;
            for t in batch.triples {
                let (u, p, n) = (t.user * d, t.pos * d, t.neg * d);
                let mut x = 0.0;
                for k in 0..d {
                    x += mf.users[u + k] * (mf.items[p + k] - mf.items[n + k]);
                }
                // d/dx of -ln sigmoid(x)
                let g = -1.0 / (1.0 + x.exp());
                for k in 0..d {
                    let wu = mf.users[u + k];
                    let hp = mf.items[p + k];
                    let hn = mf.items[n + k];
                    mf.users[u + k] -= lr * (g * (hp - hn) + config.l2 * wu);
                    mf.items[p + k] -= lr * (g * wu + config.l2 * hp);
                    mf.items[n + k] -= lr * (-g * wu + config.l2 * hn);
                }
            }
        }
        if !mf.users.iter().chain(&mf.items).all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite(
                "matrix factorization diverged".into(),
            ));
        }
        Ok(mf)
    }

    pub fn score(&self, user: usize, item: usize) -> f64 {
        let d = self.dim;
        self.users[user * d..(user + 1) * d]
            .iter()
            .zip(&self.items[item * d..(item + 1) * d])
            .map(|(a, b)| a * b)
            .sum()
    }
}
