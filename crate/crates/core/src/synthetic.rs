//! Synthetic interaction logs with controllable popularity drift.
//!
//! Items are partitioned into groups. Every month has a weight per group;
//! an interaction picks a uniform user, a group from that month's weights,
//! then an item of the group, preferring items of the user's taste cluster.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::time::{month_index, month_start};
use crate::data::{DataError, Interaction, InteractionLog};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftProfile {
    /// Every group keeps the same weight in every month.
    Stationary,
    /// One evergreen group plus trend groups that switch on one after
    /// another and then fade.
    #[default]
    Drifting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_users: usize,
    pub num_items: usize,
    /// Training months; the cut falls right after them.
    pub num_slices: usize,
    /// Extra months generated after the cut (validation, then test).
    pub val_months: usize,
    pub test_months: usize,
    pub interactions_per_slice: usize,
    /// Number of item groups, the evergreen group included.
    pub num_groups: usize,
    /// Taste clusters shared by users and items.
    pub num_clusters: usize,
    /// Probability that an item is drawn from the user's cluster within the group.
    pub preference: f64,
    /// Weight of the evergreen group relative to a trend group at its onset.
    pub evergreen_weight: f64,
    /// Per-month decay factor of a trend group after its onset.
    pub decay: f64,
    /// Onset month of every trend group; `None` spreads the onsets evenly
    /// over the training months, starting at month 0.
    pub onsets: Option<Vec<usize>>,
    pub profile: DriftProfile,
    /// Let a user interact with the same item more than once.
    pub allow_repeats: bool,
    /// First month, `YYYY-MM`.
    pub start: String,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_users: 300,
            num_items: 200,
            num_slices: 6,
            val_months: 1,
            test_months: 1,
            interactions_per_slice: 1500,
            num_groups: 7,
            num_clusters: 4,
            preference: 0.8,
            evergreen_weight: 0.3,
            decay: 0.5,
            onsets: None,
            profile: DriftProfile::Drifting,
            allow_repeats: false,
            start: "2020-01".to_string(),
            seed: 0,
        }
    }
}

/// Generated log plus ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub log: InteractionLog,
    /// Group of every item (index 0 is the evergreen group when drifting).
    pub item_group: Vec<usize>,
    /// Taste cluster of every user and item.
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
    /// `weights[month][group]`, normalized per month.
    pub weights: Vec<Vec<f64>>,
    /// Start of the first month after the training months.
    pub cut_time: i64,
}

impl SyntheticSpec {
    pub fn total_months(&self) -> usize {
        self.num_slices + self.val_months + self.test_months
    }

    fn onsets(&self) -> Vec<usize> {
        match &self.onsets {
            Some(o) => o.clone(),
            None => {
                let trends = self.num_groups.saturating_sub(1).max(1);
                (0..self.num_groups.saturating_sub(1))
                    .map(|j| j * self.num_slices / trends)
                    .collect()
            }
        }
    }

    /// Normalized group weights for every month.
    pub fn weights(&self) -> Vec<Vec<f64>> {
        let months = self.total_months();
        let onsets = self.onsets();
        (0..months)
            .map(|t| {
                let mut w: Vec<f64> = match self.profile {
                    DriftProfile::Stationary => vec![1.0; self.num_groups],
                    DriftProfile::Drifting => std::iter::once(self.evergreen_weight)
                        .chain((1..self.num_groups).map(|g| {
                            let onset = onsets[g - 1];
                            if t < onset {
                                0.0
                            } else {
                                self.decay.powi((t - onset) as i32)
                            }
                        }))
                        .collect(),
                };
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                w
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.num_items == 0 || self.num_users == 0 {
            return bad("need at least one user and one item");
        }
        if self.num_groups == 0 || self.num_groups > self.num_items {
            return bad("need between 1 and num_items groups");
        }
        if self.num_clusters == 0 {
            return bad("need at least one cluster");
        }
        if self.num_slices == 0 || self.interactions_per_slice == 0 {
            return bad("need at least one slice with interactions");
        }
        if !(0.0..=1.0).contains(&self.preference) {
            return bad("preference must lie in [0, 1]");
        }
        if !(self.evergreen_weight >= 0.0 && self.decay >= 0.0) {
            return bad("weights must be nonnegative");
        }
        if self.profile == DriftProfile::Drifting {
            let onsets = self.onsets();
            if onsets.len() + 1 != self.num_groups {
                return bad("onsets must list one month per trend group");
            }
            if self.evergreen_weight == 0.0 && onsets.iter().all(|&o| o > 0) {
                return bad("month 0 has no active group");
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticData, DataError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let first = month_index(crate::data::time::parse_time(&self.start)?);
        let item_group: Vec<usize> = (0..self.num_items)
            .map(|i| i * self.num_groups / self.num_items)
            .collect();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.num_groups];
        for (i, &g) in item_group.iter().enumerate() {
            members[g].push(i);
        }
        let item_cluster: Vec<usize> = (0..self.num_items)
            .map(|i| {
                let g = item_group[i];
                let pos = members[g].iter().position(|&x| x == i).expect("member");
                pos % self.num_clusters
            })
            .collect();
        let user_cluster: Vec<usize> = (0..self.num_users).map(|u| u % self.num_clusters).collect();
        // members[g] split by cluster
        let by_cluster: Vec<Vec<Vec<usize>>> = members
            .iter()
            .map(|m| {
                let mut c = vec![Vec::new(); self.num_clusters];
                for &i in m {
                    c[item_cluster[i]].push(i);
                }
                c
            })
            .collect();

        let weights = self.weights();
        let mut seen = vec![false; self.num_users * self.num_items];
        let mut interactions =
            Vec::with_capacity(self.total_months() * self.interactions_per_slice);
        for (t, w) in weights.iter().enumerate() {
            let dist = WeightedIndex::new(w).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
            let start = month_start(first + t as i64);
            let end = month_start(first + t as i64 + 1);
            for _ in 0..self.interactions_per_slice {
                let (user, item) = self
                    .draw(&mut rng, &dist, &members, &by_cluster, &user_cluster, &seen)
                    .ok_or_else(|| {
                        DataError::InvalidSpec("catalogue exhausted without repeats".into())
                    })?;
                if !self.allow_repeats {
                    seen[user * self.num_items + item] = true;
                }
                interactions.push(Interaction {
                    user,
                    item,
                    timestamp: rng.random_range(start..end),
                });
            }
        }
        let log = InteractionLog::from_indexed(self.num_users, self.num_items, interactions)?;
        Ok(SyntheticData {
            log,
            item_group,
            user_cluster,
            item_cluster,
            weights,
            cut_time: month_start(first + self.num_slices as i64),
        })
    }
}

impl SyntheticSpec {
    /// One (user, item) draw; without repeats, items the user already has are
    /// excluded and the draw restarts when a group has nothing left.
    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        dist: &WeightedIndex<f64>,
        members: &[Vec<usize>],
        by_cluster: &[Vec<Vec<usize>>],
        user_cluster: &[usize],
        seen: &[bool],
    ) -> Option<(usize, usize)> {
        const ATTEMPTS: usize = 1000;
        for _ in 0..ATTEMPTS {
            let user = rng.random_range(0..self.num_users);
            let g = dist.sample(rng);
            let free = |items: &[usize]| -> Vec<usize> {
                items
                    .iter()
                    .copied()
                    .filter(|&i| self.allow_repeats || !seen[user * self.num_items + i])
                    .collect()
            };
            let all = free(&members[g]);
            if all.is_empty() {
                continue;
            }
            let own = free(&by_cluster[g][user_cluster[user]]);
            let item = if !own.is_empty() && rng.random::<f64>() < self.preference {
                own[rng.random_range(0..own.len())]
            } else {
                all[rng.random_range(0..all.len())]
            };
            return Some((user, item));
        }
        None
    }
}

impl SyntheticData {
    /// Writes `interactions.tsv` and `item_groups.tsv` (`item<TAB>group`) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir)?;
        self.log.write(&dir.join("interactions.tsv"), b'\t')?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("item_groups.tsv"))?);
        for (i, g) in self.item_group.iter().enumerate() {
            writeln!(f, "{}\t{g}", self.log.item_id(i))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Interactions per `(month, group)`.
    pub fn group_counts(&self, num_months: usize, num_groups: usize) -> Vec<Vec<usize>> {
        let first = month_index(self.log.interactions()[0].timestamp);
        let mut counts = vec![vec![0; num_groups]; num_months];
        for x in self.log.interactions() {
            let m = (month_index(x.timestamp) - first) as usize;
            counts[m][self.item_group[x.item]] += 1;
        }
        counts
    }
}
