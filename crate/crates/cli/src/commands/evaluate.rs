use std::path::PathBuf;

use clap::Args;
use leaprec_core::experiment::test_report;
use leaprec_core::model::Checkpoint;

use crate::output::{create_dir, load_dataset, write_json};
use crate::{CliError, RunArgs};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    /// Write `report.json` here as well as printing it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &EvaluateArgs) -> Result<(), CliError> {
    let config = args.run.resolve(None)?;
    if !args.checkpoint.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint {} does not exist",
            args.checkpoint.display()
        )));
    }
    let ck = Checkpoint::load(&args.checkpoint)?;
    let dataset = load_dataset(&config)?;
    ck.check_dims(dataset.num_users(), dataset.num_items())?;
    let mut report = test_report(
        &dataset,
        &ck.gtl,
        &ck.otl,
        &ck.model,
        &config.eval,
        config.history_scope(),
    )?;
    report.config_hash = Some(ck.config_hash.clone());
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &args.out {
        let dir = crate::output_dir(Some(dir), "evaluate", &ck.config_hash);
        create_dir(&dir)?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(())
}
