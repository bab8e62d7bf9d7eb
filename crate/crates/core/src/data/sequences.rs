use super::{InteractionLog, TimeSlicedDataset};

/// Items a user interacted with before a reference time, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserSequence {
    pub user: usize,
    pub items: Vec<usize>,
}

impl UserSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Per-user histories strictly before `reference_time`, keeping the
/// `max_seq_len` most recent items. Indexed by user.
pub fn user_sequences(
    dataset: &TimeSlicedDataset,
    reference_time: i64,
    max_seq_len: usize,
) -> Vec<UserSequence> {
    sequences_from_log(dataset.log(), reference_time, max_seq_len)
}

pub fn sequences_from_log(
    log: &InteractionLog,
    reference_time: i64,
    max_seq_len: usize,
) -> Vec<UserSequence> {
    let mut seqs: Vec<UserSequence> = (0..log.num_users())
        .map(|user| UserSequence {
            user,
            items: Vec::new(),
        })
        .collect();
    for x in log.interactions() {
        if x.timestamp >= reference_time {
            break;
        }
        seqs[x.user].items.push(x.item);
    }
    for s in &mut seqs {
        if s.items.len() > max_seq_len {
            s.items.drain(..s.items.len() - max_seq_len);
        }
    }
    seqs
}
