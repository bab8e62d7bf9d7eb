use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::DataError;

/// One observed user-item event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Seconds since the unix epoch.
    pub timestamp: i64,
}

/// Delimited-text reader settings.
#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b'\t',
            has_header: false,
        }
    }
}

/// Deduplicated interactions with dense user and item indices.
///
/// Interactions are kept in canonical order: by timestamp, then user, then
/// item. Indices are assigned in order of first appearance in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    users: Vec<String>,
    items: Vec<String>,
}

impl InteractionLog {
    /// Builds a log from raw `(user, item, timestamp)` rows.
    pub fn from_raw<I>(rows: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (String, String, i64)>,
    {
        let mut rows: Vec<(String, String, i64)> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        rows.sort_by(|a, b| (a.2, &a.0, &a.1).cmp(&(b.2, &b.0, &b.1)));
        rows.dedup();

        let mut user_index: HashMap<String, usize> = HashMap::new();
        let mut item_index: HashMap<String, usize> = HashMap::new();
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut interactions = Vec::with_capacity(rows.len());
        for (u, i, t) in rows {
            let user = *user_index.entry(u.clone()).or_insert_with(|| {
                users.push(u);
                users.len() - 1
            });
            let item = *item_index.entry(i.clone()).or_insert_with(|| {
                items.push(i);
                items.len() - 1
            });
            interactions.push(Interaction {
                user,
                item,
                timestamp: t,
            });
        }
        Ok(InteractionLog {
            interactions,
            users,
            items,
        })
    }

    /// Builds a log from already-indexed interactions. Raw ids become the
    /// decimal indices prefixed with `u` and `i`.
    pub fn from_indexed(
        num_users: usize,
        num_items: usize,
        mut interactions: Vec<Interaction>,
    ) -> Result<Self, DataError> {
        if interactions.is_empty() {
            return Err(DataError::Empty);
        }
        for x in &interactions {
            if x.user >= num_users || x.item >= num_items {
                return Err(DataError::IndexOutOfRange {
                    user: x.user,
                    item: x.item,
                });
            }
        }
        interactions.sort_by_key(|x| (x.timestamp, x.user, x.item));
        interactions.dedup();
        Ok(InteractionLog {
            interactions,
            users: (0..num_users).map(|u| format!("u{u}")).collect(),
            items: (0..num_items).map(|i| format!("i{i}")).collect(),
        })
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn user_id(&self, index: usize) -> &str {
        &self.users[index]
    }

    pub fn item_id(&self, index: usize) -> &str {
        &self.items[index]
    }

    pub fn item_index(&self, raw: &str) -> Option<usize> {
        self.items.iter().position(|s| s == raw)
    }

    pub fn user_index(&self, raw: &str) -> Option<usize> {
        self.users.iter().position(|s| s == raw)
    }

    pub fn time_range(&self) -> (i64, i64) {
        (
            self.interactions.first().map(|x| x.timestamp).unwrap_or(0),
            self.interactions.last().map(|x| x.timestamp).unwrap_or(0),
        )
    }

    /// Writes the log in its canonical order using raw ids.
    pub fn write(&self, path: &Path, delimiter: u8) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        let sep = delimiter as char;
        for x in &self.interactions {
            writeln!(
                w,
                "{}{sep}{}{sep}{}",
                self.users[x.user], self.items[x.item], x.timestamp
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Persists the raw-to-index maps as `users.tsv` and `items.tsv` in `dir`.
    pub fn write_id_maps(&self, dir: &Path) -> Result<(), DataError> {
        for (name, ids) in [("users.tsv", &self.users), ("items.tsv", &self.items)] {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            for (idx, raw) in ids.iter().enumerate() {
                writeln!(w, "{raw}\t{idx}")?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Reads `user<delim>item<delim>unix_seconds` rows.
pub fn ingest(path: &Path, options: &IngestOptions) -> Result<InteractionLog, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::Io(std::io::Error::other(e.to_string())))?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DataError::Malformed {
                line,
                reason: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 3 {
            return Err(DataError::Malformed {
                line,
                reason: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let ts = record[2]
            .trim()
            .parse::<i64>()
            .map_err(|_| DataError::Malformed {
                line,
                reason: format!("timestamp {:?} is not an integer", &record[2]),
            })?;
        rows.push((
            record[0].trim().to_string(),
            record[1].trim().to_string(),
            ts,
        ));
    }
    let log = InteractionLog::from_raw(rows)?;
    log::info!(
        "ingested {}: {} users, {} items, {} actions",
        path.display(),
        log.num_users(),
        log.num_items(),
        log.len()
    );
    Ok(log)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_row() {
        let f = file_with("a\tx\t100\n");
        let log = ingest(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!((log.num_users(), log.num_items(), log.len()), (1, 1, 1));
    }

    #[test]
    fn exact_duplicates_collapse() {
        let f = file_with("a\tx\t100\na\tx\t100\na\tx\t200\n");
        let log = ingest(f.path(), &IngestOptions::default()).unwrap();
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = file_with("a\tx\t100\nb\ty\n");
        match ingest(f.path(), &IngestOptions::default()) {
            Err(DataError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let f = file_with("a\tx\t100\nb\ty\tlater\n");
        assert!(matches!(
            ingest(f.path(), &IngestOptions::default()),
            Err(DataError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = file_with("");
        assert!(matches!(
            ingest(f.path(), &IngestOptions::default()),
            Err(DataError::Empty)
        ));
    }

    #[test]
    fn header_and_custom_delimiter() {
        let f = file_with("user,item,ts\nb,y,5\na,x,3\n");
        let opts = IngestOptions {
            delimiter: b',',
            has_header: true,
        };
        let log = ingest(f.path(), &opts).unwrap();
        assert_eq!(log.len(), 2);
        // canonical order puts the earlier event first
        assert_eq!(log.user_id(log.interactions()[0].user), "a");
        assert!(log
            .interactions()
            .windows(2)
            .all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn id_maps_are_written() {
        let log = InteractionLog::from_raw(vec![("a".into(), "x".into(), 1)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        log.write_id_maps(dir.path()).unwrap();
        let users = std::fs::read_to_string(dir.path().join("users.tsv")).unwrap();
        assert_eq!(users, "a\t0\n");
    }
}
