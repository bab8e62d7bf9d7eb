use std::path::PathBuf;

use clap::{Args, ValueEnum};
use leaprec_core::experiment::{fit, test_report};
use leaprec_core::InteractionLog;
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{create_dir, load_log, slice_log, write_config, write_csv, write_json};
use crate::{output_dir, CliError, RunArgs, RunConfig};

/// Dimension splits at a total of 128, scaled to the configured total.
pub const DIM_SPLITS: [(usize, usize); 5] = [(128, 0), (121, 40), (91, 91), (40, 121), (0, 128)];
pub const K_VALUES: [usize; 4] = [1, 5, 10, 20];
pub const GRANULARITIES: [u32; 3] = [1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    Dims,
    K,
    Granularity,
}

impl Grid {
    fn name(self) -> &'static str {
        match self {
            Grid::Dims => "dims",
            Grid::K => "k",
            Grid::Granularity => "granularity",
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Families to sweep.
    #[arg(long, value_delimiter = ',', default_value = "dims,k,granularity")]
    pub grids: Vec<Grid>,
    /// Total dimension the splits are scaled to.
    #[arg(long, default_value_t = 128)]
    pub total_dim: usize,
    /// Explicit `gtl:otl` splits instead of the scaled defaults.
    #[arg(long, value_delimiter = ',')]
    pub dims: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub k_values: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub granularities: Vec<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub grid: &'static str,
    pub gtl_dim: usize,
    pub otl_dim: usize,
    pub inner_steps: usize,
    pub granularity_months: u32,
    pub ndcg5: f64,
    pub hr5: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Monotonicity {
    pub grid: &'static str,
    /// Swept value and NDCG@5, in sweep order.
    pub points: Vec<(f64, f64)>,
    pub non_decreasing: bool,
    pub non_increasing: bool,
    pub argmax: f64,
}

/// `round(split * total / 128)` for each default split.
pub fn scaled_splits(total: usize) -> Vec<(usize, usize)> {
    let scale = |d: usize| ((d * total) as f64 / 128.0).round() as usize;
    DIM_SPLITS
        .iter()
        .map(|&(g, o)| (scale(g), scale(o)))
        .collect()
}

fn parse_split(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("dimension split must be GTL:OTL, got {s:?}"));
    let (g, o) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        g.trim().parse().map_err(|_| bad())?,
        o.trim().parse().map_err(|_| bad())?,
    ))
}

/// Every configuration of the requested families, in sweep order.
pub fn expand(base: &RunConfig, args: &AblateArgs) -> Result<Vec<(Grid, RunConfig)>, CliError> {
    let mut out = Vec::new();
    for &grid in &args.grids {
        match grid {
            Grid::Dims => {
                let splits = if args.dims.is_empty() {
                    scaled_splits(args.total_dim)
                } else {
                    args.dims
                        .iter()
                        .map(|s| parse_split(s))
                        .collect::<Result<_, _>>()?
                };
                for (g, o) in splits {
                    let mut c = base.clone();
                    c.train.gtl_dim = g;
                    c.train.otl_dim = o;
                    out.push((grid, c));
                }
            }
            Grid::K => {
                let ks = if args.k_values.is_empty() {
                    K_VALUES.to_vec()
                } else {
                    args.k_values.clone()
                };
                for k in ks {
                    let mut c = base.clone();
                    c.train.inner_steps = k;
                    out.push((grid, c));
                }
            }
            Grid::Granularity => {
                let gs = if args.granularities.is_empty() {
                    GRANULARITIES.to_vec()
                } else {
                    args.granularities.clone()
                };
                for g in gs {
                    let mut c = base.clone();
                    c.train.granularity_months = g;
                    out.push((grid, c));
                }
            }
        }
    }
    for (_, c) in &out {
        c.train.validate()?;
    }
    Ok(out)
}

fn run_one(log: &InteractionLog, grid: Grid, config: &RunConfig) -> Result<AblationRow, CliError> {
    let dataset = slice_log(log.clone(), config, config.train.granularity_months)?;
    let trained = fit(&dataset, &config.train, &config.eval)?;
    let mut eval = config.eval.clone();
    if !eval.ks.contains(&5) {
        eval.ks.push(5);
    }
    let report = test_report(
        &dataset,
        &trained.gtl,
        &trained.otl,
        &trained.model,
        &eval,
        config.history_scope(),
    )?;
    Ok(AblationRow {
        grid: grid.name(),
        gtl_dim: config.train.gtl_dim,
        otl_dim: config.train.otl_dim,
        inner_steps: config.train.inner_steps,
        granularity_months: config.train.granularity_months,
        ndcg5: report.ndcg(5),
        hr5: report.hr(5),
        mrr: report.mrr(),
    })
}

/// Direction of NDCG@5 along each swept family other than the dimension splits.
pub fn monotonicity(rows: &[AblationRow]) -> Vec<Monotonicity> {
    let mut out = Vec::new();
    for grid in [Grid::K, Grid::Granularity] {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.grid == grid.name())
            .map(|r| {
                let x = match grid {
                    Grid::K => r.inner_steps as f64,
                    _ => r.granularity_months as f64,
                };
                (x, r.ndcg5)
            })
            .collect();
        if points.is_empty() {
            continue;
        }
        let argmax = points
            .iter()
            .fold(points[0], |best, &p| if p.1 > best.1 { p } else { best })
            .0;
        out.push(Monotonicity {
            grid: grid.name(),
            non_decreasing: points.windows(2).all(|w| w[1].1 >= w[0].1),
            non_increasing: points.windows(2).all(|w| w[1].1 <= w[0].1),
            argmax,
            points,
        });
    }
    out
}

pub fn run(args: &AblateArgs) -> Result<(), CliError> {
    let base = args.run.resolve(None)?;
    let configs = expand(&base, args)?;
    if configs.is_empty() {
        return Err(CliError::Usage("empty ablation grid".into()));
    }
    let hash = base.hash();
    let dir = output_dir(args.out.as_deref(), "ablate", &hash);
    let log = load_log(&base)?;
    create_dir(&dir)?;
    write_config(&dir, &base)?;

    let rows: Vec<AblationRow> = configs
        .par_iter()
        .enumerate()
        .map(|(i, (grid, c))| {
            let run_dir = dir.join("runs").join(format!("{i:02}-{}", grid.name()));
            create_dir(&run_dir)?;
            write_config(&run_dir, c)?;
            let row = run_one(&log, *grid, c)?;
            write_json(&run_dir.join("result.json"), &row)?;
            Ok(row)
        })
        .collect::<Result<_, CliError>>()?;

    write_csv(
        &dir.join("ablation.csv"),
        "grid,gtl_dim,otl_dim,inner_steps,granularity_months,ndcg@5,hr@5,mrr",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.grid,
                r.gtl_dim,
                r.otl_dim,
                r.inner_steps,
                r.granularity_months,
                r.ndcg5,
                r.hr5,
                r.mrr
            )
        }),
    )?;
    let mono = monotonicity(&rows);
    write_csv(
        &dir.join("monotonicity.csv"),
        "grid,value,ndcg@5,delta",
        mono.iter().flat_map(|m| {
            m.points.iter().enumerate().map(move |(j, &(x, y))| {
                let d = if j == 0 { 0.0 } else { y - m.points[j - 1].1 };
                format!("{},{x},{y},{d}", m.grid)
            })
        }),
    )?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config_hash: &'a str,
        seed: u64,
        runs: usize,
        monotonicity: &'a [Monotonicity],
    }
    write_json(
        &dir.join("summary.json"),
        &Summary {
            config_hash: &hash,
            seed: base.train.seed,
            runs: rows.len(),
            monotonicity: &mono,
        },
    )?;
    println!("{}", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_scale_with_total() {
        assert_eq!(scaled_splits(128), DIM_SPLITS.to_vec());
        assert_eq!(
            scaled_splits(16),
            vec![(16, 0), (15, 5), (11, 11), (5, 15), (0, 16)]
        );
    }

    #[test]
    fn monotonic_flags() {
        let row = |k, y| AblationRow {
            grid: "k",
            gtl_dim: 1,
            otl_dim: 1,
            inner_steps: k,
            granularity_months: 1,
            ndcg5: y,
            hr5: 0.0,
            mrr: 0.0,
        };
        let m = monotonicity(&[row(1, 0.1), row(5, 0.2), row(10, 0.2)]);
        assert_eq!(m.len(), 1);
        assert!(m[0].non_decreasing && !m[0].non_increasing);
        assert_eq!(m[0].argmax, 5.0);
    }
}
