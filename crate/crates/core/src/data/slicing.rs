use super::time::{add_months, month_index, month_start};
use super::{DataError, Interaction, InteractionLog};

/// All training interactions falling in one calendar bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSlice {
    /// Bucket number: months since 1970-01 divided by the granularity.
    pub bucket: i64,
    /// Inclusive start (unix seconds).
    pub start: i64,
    /// Exclusive end (unix seconds); never past the cut time.
    pub end: i64,
    /// Indices into the log's interaction list.
    pub interactions: Vec<usize>,
    /// `(user, item)` pairs of the slice, in the same order.
    pub pairs: Vec<(usize, usize)>,
}

impl TimeSlice {
    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Temporal split of a log into ordered training slices plus validation and
/// test windows.
#[derive(Clone, Debug)]
pub struct TimeSlicedDataset {
    log: InteractionLog,
    slices: Vec<TimeSlice>,
    granularity_months: u32,
    cut_time: i64,
    val_window_months: u32,
    val_end: i64,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Buckets interactions before `cut_time` into calendar slices of
/// `granularity_months` (aligned to 1970-01 in UTC). Interactions in
/// `[cut_time, cut_time + val_window_months)` are validation; later ones are test.
pub fn slice_by_time(
    log: InteractionLog,
    granularity_months: u32,
    cut_time: i64,
    val_window_months: u32,
) -> Result<TimeSlicedDataset, DataError> {
    if granularity_months == 0 {
        return Err(DataError::InvalidGranularity);
    }
    let val_end = add_months(cut_time, val_window_months);
    let g = granularity_months as i64;

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut slices: Vec<TimeSlice> = Vec::new();
    for (idx, x) in log.interactions().iter().enumerate() {
        if x.timestamp >= val_end {
            test.push(idx);
            continue;
        }
        if x.timestamp >= cut_time {
            val.push(idx);
            continue;
        }
        train.push(idx);
        let bucket = month_index(x.timestamp).div_euclid(g);
        // interactions are time-sorted, so buckets arrive in order
        if slices.last().map(|s| s.bucket) != Some(bucket) {
            let start = month_start(bucket * g);
            let end = month_start((bucket + 1) * g).min(cut_time);
            slices.push(TimeSlice {
                bucket,
                start,
                end,
                interactions: Vec::new(),
                pairs: Vec::new(),
            });
        }
        let slice = slices.last_mut().unwrap();
        slice.interactions.push(idx);
        slice.pairs.push((x.user, x.item));
    }
    if train.is_empty() {
        return Err(DataError::NoTrainingData { cut_time });
    }
    // Buckets with no events never get created, so every slice is non-empty.
    // Report calendar gaps, which is where an empty bucket would have been.
    for w in slices.windows(2) {
        if w[1].bucket > w[0].bucket + 1 {
            log::warn!(
                "dropped {} empty time slice(s) between buckets {} and {}",
                w[1].bucket - w[0].bucket - 1,
                w[0].bucket,
                w[1].bucket
            );
        }
    }
    Ok(TimeSlicedDataset {
        log,
        slices,
        granularity_months,
        cut_time,
        val_window_months,
        val_end,
        train,
        val,
        test,
    })
}

impl TimeSlicedDataset {
    pub fn log(&self) -> &InteractionLog {
        &self.log
    }

    pub fn slices(&self) -> &[TimeSlice] {
        &self.slices
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn num_users(&self) -> usize {
        self.log.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.log.num_items()
    }

    pub fn granularity_months(&self) -> u32 {
        self.granularity_months
    }

    pub fn cut_time(&self) -> i64 {
        self.cut_time
    }

    pub fn val_window_months(&self) -> u32 {
        self.val_window_months
    }

    /// Exclusive end of the validation window.
    pub fn val_end(&self) -> i64 {
        self.val_end
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn interactions_at<'a>(
        &'a self,
        indices: &'a [usize],
    ) -> impl Iterator<Item = &'a Interaction> + 'a {
        indices.iter().map(move |&i| &self.log.interactions()[i])
    }

    pub fn train_pairs(&self) -> Vec<(usize, usize)> {
        self.interactions_at(&self.train)
            .map(|x| (x.user, x.item))
            .collect()
    }

    pub fn val_pairs(&self) -> Vec<(usize, usize)> {
        self.interactions_at(&self.val)
            .map(|x| (x.user, x.item))
            .collect()
    }

    pub fn test_pairs(&self) -> Vec<(usize, usize)> {
        self.interactions_at(&self.test)
            .map(|x| (x.user, x.item))
            .collect()
    }

    pub fn all_pairs(&self) -> Vec<(usize, usize)> {
        self.log
            .interactions()
            .iter()
            .map(|x| (x.user, x.item))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::time::parse_time;
    use super::*;

    fn log_at(dates: &[&str]) -> InteractionLog {
        let rows = dates
            .iter()
            .enumerate()
            .map(|(k, d)| {
                (
                    format!("u{k}"),
                    "x".to_string(),
                    parse_time(d).unwrap() + 3600,
                )
            })
            .collect::<Vec<_>>();
        InteractionLog::from_raw(rows).unwrap()
    }

    #[test]
    fn same_month_same_slice() {
        let log = log_at(&["2017-05-15", "2017-05-20"]);
        let ds = slice_by_time(log, 1, parse_time("2017-06").unwrap(), 6).unwrap();
        assert_eq!(ds.num_slices(), 1);
        assert_eq!(ds.slices()[0].len(), 2);
    }

    #[test]
    fn two_month_bucket_merges_jan_and_feb() {
        let log = log_at(&["2016-01-03", "2016-02-27", "2016-03-01"]);
        let ds = slice_by_time(log, 2, parse_time("2017-01").unwrap(), 6).unwrap();
        assert_eq!(ds.num_slices(), 2);
        assert_eq!(ds.slices()[0].len(), 2);
    }

    #[test]
    fn cut_and_windows() {
        let log = log_at(&["2017-05-31", "2017-06-01", "2017-11-30", "2017-12-01"]);
        let cut = parse_time("2017/06").unwrap();
        let ds = slice_by_time(log, 1, cut, 6).unwrap();
        assert_eq!(ds.train_indices().len(), 1);
        assert_eq!(ds.val_indices().len(), 2);
        assert_eq!(ds.test_indices().len(), 1);
        assert!(ds
            .interactions_at(ds.train_indices())
            .all(|x| x.timestamp < cut));
        assert!(ds.slices().iter().all(|s| s.end <= cut));
    }

    #[test]
    fn gaps_are_dropped_not_kept_empty() {
        let log = log_at(&["2017-01-10", "2017-04-10"]);
        let ds = slice_by_time(log, 1, parse_time("2017-06").unwrap(), 6).unwrap();
        assert_eq!(ds.num_slices(), 2);
        assert!(ds.slices().iter().all(|s| !s.is_empty()));
    }

    #[test]
    fn no_training_data_is_an_error() {
        let log = log_at(&["2018-01-10"]);
        assert!(matches!(
            slice_by_time(log, 1, parse_time("2017-06").unwrap(), 6),
            Err(DataError::NoTrainingData { .. })
        ));
    }

    #[test]
    fn zero_granularity_rejected() {
        let log = log_at(&["2017-01-10"]);
        assert!(slice_by_time(log, 0, parse_time("2017-06").unwrap(), 6).is_err());
    }
}
