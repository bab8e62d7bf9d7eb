use std::path::PathBuf;

use clap::Args;
use leaprec_core::data::build_graph;
use leaprec_core::eval::{popularity_groups, shift_series};
use leaprec_core::experiment::propagated_items;
use leaprec_core::meta::Branch;
use leaprec_core::model::Checkpoint;

use crate::output::{create_dir, load_dataset, write_csv};
use crate::{CliError, RunArgs, RunConfig};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `train --record-slice-params`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub overrides: RunArgs,
    /// Items kept per popularity group.
    #[arg(long, default_value_t = 100)]
    pub top_n: usize,
    /// Defaults to `<run>/analysis`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &AnalyzeArgs) -> Result<(), CliError> {
    let base_path = args.run.join("config.txt");
    let base = if base_path.is_file() {
        Some(RunConfig::load(&base_path)?)
    } else {
        None
    };
    let config = args.overrides.resolve(base)?;
    let sdir = args.run.join("slices");
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&sdir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
            .collect(),
        Err(_) => Vec::new(),
    };
    if files.is_empty() {
        return Err(CliError::Usage(format!(
            "no recorded slice parameters under {}; train with --record-slice-params",
            sdir.display()
        )));
    }
    files.sort();
    let dataset = load_dataset(&config)?;
    let graph = build_graph(
        dataset.num_users(),
        dataset.num_items(),
        dataset.train_pairs(),
    )?;
    let groups = popularity_groups(&dataset, args.top_n);

    let mut tables = (Vec::new(), Vec::new());
    let mut dims = (0, 0);
    for f in &files {
        let ck = Checkpoint::load(f)?;
        ck.check_dims(dataset.num_users(), dataset.num_items())?;
        dims = (ck.gtl.shape().dim, ck.otl.shape().dim);
        tables.0.push(propagated_items(&ck.gtl, &graph)?);
        tables.1.push(propagated_items(&ck.otl, &graph)?);
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join("analysis"));
    create_dir(&out)?;
    for (branch, t, d) in [
        (Branch::Gtl, &tables.0, dims.0),
        (Branch::Otl, &tables.1, dims.1),
    ] {
        let rows = shift_series(branch, t, d, &groups.groups);
        write_csv(
            &out.join(format!("shift_{branch}.csv")),
            "group,slice,value",
            rows.iter()
                .map(|r| format!("{},{},{}", r.group, r.slice, r.value)),
        )?;
    }
    write_csv(
        &out.join("popularity.csv"),
        "group,slice,value",
        groups.curves.iter().map(|(g, t, v)| format!("{g},{t},{v}")),
    )?;
    write_csv(
        &out.join("groups.csv"),
        "group,peak_slice,items",
        groups.groups.iter().enumerate().map(|(g, grp)| {
            let items: Vec<String> = grp
                .items
                .iter()
                .map(|&i| dataset.log().item_id(i).to_string())
                .collect();
            format!("{g},{},{}", grp.peak_slice, items.join(" "))
        }),
    )?;
    println!("{}", out.display());
    Ok(())
}
