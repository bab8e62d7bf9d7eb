use serde::{Deserialize, Serialize};

use crate::data::TimeSlicedDataset;
use crate::meta::{Branch, TrajectoryRecord};

/// `sum_k ||dtheta^k||^2 + (dL^k)^2` over one trajectory.
pub fn path_length(record: &TrajectoryRecord) -> f64 {
    record
        .steps
        .iter()
        .map(|s| s.delta.iter().map(|d| d * d).sum::<f64>() + s.loss_delta().powi(2))
        .sum()
}

/// Squared distance between the L2-normalized versions of `a` and `b`;
/// `None` when either vector is zero.
pub fn normalized_shift(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    Some(
        a.iter()
            .zip(b)
            .map(|(x, y)| (x / na - y / nb).powi(2))
            .sum(),
    )
}

/// Mean normalized shift of a group of items between two row-major item
/// tables of width `dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupShift {
    pub mean: Option<f64>,
    pub counted: usize,
    pub skipped: usize,
}

pub fn embedding_shift(prev: &[f64], current: &[f64], dim: usize, items: &[usize]) -> GroupShift {
    let mut sum = 0.0;
    let mut counted = 0;
    let mut skipped = 0;
    for &i in items {
        let row = |t: &[f64]| t[i * dim..(i + 1) * dim].to_vec();
        match normalized_shift(&row(prev), &row(current)) {
            Some(s) => {
                sum += s;
                counted += 1;
            }
            None => skipped += 1,
        }
    }
    GroupShift {
        mean: (counted > 0).then(|| sum / counted as f64),
        counted,
        skipped,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub branch: String,
    pub group: usize,
    pub slice: usize,
    pub value: f64,
    pub skipped: usize,
}

/// Shift series for every group: row `slice = t` compares slice `t` with
/// slice `t - 1`. `tables[t]` holds the item rows of slice `t`'s final
/// representation. A single slice yields no rows.
pub fn shift_series(
    branch: Branch,
    tables: &[Vec<f64>],
    dim: usize,
    groups: &[PopularityGroup],
) -> Vec<ShiftRow> {
    let mut rows = Vec::new();
    if dim == 0 {
        return rows;
    }
    for (g, group) in groups.iter().enumerate() {
        for t in 1..tables.len() {
            let s = embedding_shift(&tables[t - 1], &tables[t], dim, &group.items);
            if let Some(value) = s.mean {
                rows.push(ShiftRow {
                    branch: branch.to_string(),
                    group: g,
                    slice: t,
                    value,
                    skipped: s.skipped,
                });
            }
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityGroup {
    pub peak_slice: usize,
    pub items: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopularityGroups {
    pub groups: Vec<PopularityGroup>,
    /// `(group, slice, share)`: the group's interactions in the slice divided
    /// by its interactions over all slices.
    pub curves: Vec<(usize, usize, f64)>,
}

/// Groups items by the slice where their interaction count peaks (earliest
/// slice on ties) and keeps the `top_n` most-interacted items per group.
pub fn popularity_groups(dataset: &TimeSlicedDataset, top_n: usize) -> PopularityGroups {
    let n_items = dataset.num_items();
    let n_slices = dataset.num_slices();
    let mut counts = vec![vec![0usize; n_slices]; n_items];
    for (t, s) in dataset.slices().iter().enumerate() {
        for &(_, i) in &s.pairs {
            counts[i][t] += 1;
        }
    }
    let mut by_peak: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_slices];
    for (i, c) in counts.iter().enumerate() {
        let total: usize = c.iter().sum();
        if total == 0 {
            continue;
        }
        let max = *c.iter().max().expect("non-empty");
        let peak = c.iter().position(|&v| v == max).expect("max exists");
        by_peak[peak].push((total, i));
    }
    let mut groups = Vec::new();
    let mut curves = Vec::new();
    for (peak, mut members) in by_peak.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        members.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        members.truncate(top_n);
        let mut items: Vec<usize> = members.iter().map(|m| m.1).collect();
        items.sort_unstable();
        let g = groups.len();
        let per_slice: Vec<usize> = (0..n_slices)
            .map(|t| items.iter().map(|&i| counts[i][t]).sum())
            .collect();
        let total: usize = per_slice.iter().sum();
        for (t, c) in per_slice.into_iter().enumerate() {
            curves.push((g, t, c as f64 / total as f64));
        }
        groups.push(PopularityGroup {
            peak_slice: peak,
            items,
        });
    }
    PopularityGroups { groups, curves }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::TrajectoryStep;

    #[test]
    fn shift_examples() {
        assert_eq!(normalized_shift(&[1.0, 2.0], &[1.0, 2.0]), Some(0.0));
        assert!((normalized_shift(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!((normalized_shift(&[0.0, 2.0], &[0.0, -1.0]).unwrap() - 4.0).abs() < 1e-15);
        assert_eq!(normalized_shift(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn zero_rows_are_skipped_and_counted() {
        let prev = vec![1.0, 0.0, 0.0, 0.0];
        let cur = vec![0.0, 1.0, 1.0, 0.0];
        let s = embedding_shift(&prev, &cur, 2, &[0, 1]);
        assert_eq!((s.counted, s.skipped), (1, 1));
        assert!((s.mean.unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn path_length_example() {
        let rec = TrajectoryRecord {
            steps: vec![TrajectoryStep {
                loss: 1.0,
                loss_after: 1.0,
                gradient: vec![0.0, 0.0],
                delta: vec![0.3, 0.4],
            }],
        };
        assert!((path_length(&rec) - 0.25).abs() < 1e-15);
        assert_eq!(path_length(&TrajectoryRecord::default()), 0.0);
    }

    #[test]
    fn single_slice_has_no_shift_rows() {
        let groups = vec![PopularityGroup {
            peak_slice: 0,
            items: vec![0],
        }];
        assert!(shift_series(Branch::Otl, &[vec![1.0]], 1, &groups).is_empty());
    }
}
