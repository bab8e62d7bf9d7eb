use rand::Rng;

use super::DataError;

/// Retries before a negative is accepted regardless of observation status.
pub const NEGATIVE_RETRY_CAP: usize = 100;

/// One `(user, positive item, negative item)` training example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Sorted, deduplicated item set per user.
#[derive(Clone, Debug, Default)]
pub struct ObservedItems {
    per_user: Vec<Vec<usize>>,
}

impl ObservedItems {
    pub fn from_pairs<I>(num_users: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut per_user = vec![Vec::new(); num_users];
        for (u, i) in pairs {
            per_user[u].push(i);
        }
        for items in &mut per_user {
            items.sort_unstable();
            items.dedup();
        }
        ObservedItems { per_user }
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.per_user
            .get(user)
            .is_some_and(|items| items.binary_search(&item).is_ok())
    }

    pub fn items(&self, user: usize) -> &[usize] {
        &self.per_user[user]
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }
}

/// A sampled batch plus how many negatives hit the retry cap.
#[derive(Clone, Debug)]
pub struct BprBatch {
    pub triples: Vec<BprTriple>,
    pub retry_cap_hits: usize,
}

/// Draws `batch_size` triples: positives uniformly (with replacement) from
/// `positives`, negatives uniformly from items unobserved by the user.
pub fn sample_bpr_batch<R: Rng + ?Sized>(
    positives: &[(usize, usize)],
    observed: &ObservedItems,
    num_items: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<BprBatch, DataError> {
    if positives.is_empty() {
        return Err(DataError::EmptySlice);
    }
    if num_items < 2 {
        return Err(DataError::TooFewItems(num_items));
    }
    let mut triples = Vec::with_capacity(batch_size);
    let mut retry_cap_hits = 0;
    for _ in 0..batch_size {
        let (user, pos) = positives[rng.random_range(0..positives.len())];
        let mut neg = None;
        for _ in 0..NEGATIVE_RETRY_CAP {
            let j = rng.random_range(0..num_items);
            if j != pos && !observed.contains(user, j) {
                neg = Some(j);
                break;
            }
        }
        let neg = match neg {
            Some(j) => j,
            None => {
                retry_cap_hits += 1;
                // any item other than the positive
                let j = rng.random_range(0..num_items - 1);
                if j >= pos {
                    j + 1
                } else {
                    j
                }
            }
        };
        triples.push(BprTriple { user, pos, neg });
    }
    if retry_cap_hits > 0 {
        log::debug!("negative sampling hit the retry cap {retry_cap_hits} time(s)");
    }
    Ok(BprBatch {
        triples,
        retry_cap_hits,
    })
}
