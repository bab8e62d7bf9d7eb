use std::io::Write;
use std::path::Path;

use leaprec_core::data::{ingest, slice_by_time};
use leaprec_core::{InteractionLog, TimeSlicedDataset};
use serde::Serialize;

use crate::{CliError, RunConfig};

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))
}

/// Writes `header` then one line per row.
pub fn write_csv<I, R>(path: &Path, header: &str, rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: AsRef<str>,
{
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for r in rows {
        writeln!(f, "{}", r.as_ref())?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Saves the exact configuration next to the outputs.
pub fn write_config(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    std::fs::write(dir.join("config.txt"), config.to_text())?;
    Ok(())
}

pub fn load_log(config: &RunConfig) -> Result<InteractionLog, CliError> {
    let path = config.require_data()?;
    let log = ingest(path, &config.ingest_options())?;
    log::info!(
        "{}: {} users, {} items, {} interactions",
        path.display(),
        log.num_users(),
        log.num_items(),
        log.len()
    );
    Ok(log)
}

pub fn slice_log(
    log: InteractionLog,
    config: &RunConfig,
    granularity_months: u32,
) -> Result<TimeSlicedDataset, CliError> {
    let ds = slice_by_time(
        log,
        granularity_months,
        config.cut_time()?,
        config.val_months,
    )?;
    log::info!(
        "{} training slices, {} validation and {} test interactions",
        ds.num_slices(),
        ds.val_indices().len(),
        ds.test_indices().len()
    );
    Ok(ds)
}

pub fn load_dataset(config: &RunConfig) -> Result<TimeSlicedDataset, CliError> {
    let log = load_log(config)?;
    slice_log(log, config, config.train.granularity_months)
}
