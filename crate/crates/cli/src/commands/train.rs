use leaprec_core::experiment::{fit, TrainedModel};
use leaprec_core::model::Checkpoint;
use serde::Serialize;

use crate::output::{create_dir, load_dataset, write_config, write_csv, write_json};
use crate::{output_dir, CliError, RunConfig, TrainArgs};

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config_hash: &'a str,
    meta_mode: String,
    seed: u64,
    num_slices: usize,
    epochs_run: usize,
    selected_epoch: usize,
    best_validation_ndcg5: Option<f64>,
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let config = args.run.resolve(None)?;
    let hash = config.hash();
    let dir = output_dir(args.out.as_deref(), "train", &hash);
    let dataset = load_dataset(&config)?;
    config.train.validate()?;
    create_dir(&dir)?;
    write_config(&dir, &config)?;

    let trained = fit(&dataset, &config.train, &config.eval)?;
    write_outputs(&dir, &config, &hash, &trained)?;
    println!("{}", dir.display());
    Ok(())
}

pub fn write_outputs(
    dir: &std::path::Path,
    config: &RunConfig,
    hash: &str,
    trained: &TrainedModel,
) -> Result<(), CliError> {
    let out = &trained.output;
    trained
        .deployment_checkpoint(hash)
        .save(&dir.join("deployment.ckpt"))?;
    trained.meta_checkpoint(hash).save(&dir.join("meta.ckpt"))?;
    write_csv(
        &dir.join("losses.csv"),
        "epoch,slice,step,loss",
        out.losses
            .iter()
            .map(|r| format!("{},{},{},{}", r.epoch, r.slice, r.step, r.loss)),
    )?;
    let mode = config.train.meta_mode.to_string();
    write_csv(
        &dir.join("paths.csv"),
        "mode,epoch,slice,branch,d2",
        out.paths
            .iter()
            .map(|p| format!("{mode},{},{},{},{}", p.epoch, p.slice, p.branch, p.d2)),
    )?;
    write_csv(
        &dir.join("validation.csv"),
        "epoch,ndcg5",
        out.validation.iter().map(|(e, v)| format!("{e},{v}")),
    )?;
    if let Some(slices) = out.selected_slices() {
        let sdir = dir.join("slices");
        create_dir(&sdir)?;
        for s in slices {
            Checkpoint {
                kind: "slice".into(),
                config_hash: hash.into(),
                model: trained.model.clone(),
                gtl: trained.gtl.with_values(s.gamma_final.clone()),
                otl: trained.otl.with_values(s.omega_final.clone()),
            }
            .save(&sdir.join(format!("slice_{:03}.ckpt", s.slice)))?;
        }
    }
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            config_hash: hash,
            meta_mode: mode,
            seed: config.train.seed,
            num_slices: out.losses.iter().map(|r| r.slice + 1).max().unwrap_or(0),
            epochs_run: out.epochs_run,
            selected_epoch: out.selected_epoch,
            best_validation_ndcg5: out
                .validation
                .iter()
                .find(|(e, _)| *e == out.selected_epoch)
                .map(|(_, v)| *v),
        },
    )?;
    Ok(())
}
