use std::path::PathBuf;

use clap::{Args, ValueEnum};
use leaprec_core::data::time::format_date;
use leaprec_core::synthetic::{DriftProfile, SyntheticSpec};
use leaprec_core::DataError;
use sha2::{Digest, Sha256};

use crate::output::{create_dir, write_json};
use crate::{output_dir, CliError};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Profile {
    Stationary,
    Drifting,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "drifting")]
    pub profile: Profile,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    /// Training months before the cut.
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub val_months: Option<usize>,
    #[arg(long)]
    pub test_months: Option<usize>,
    #[arg(long)]
    pub per_slice: Option<usize>,
    /// Item groups including the evergreen group.
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub preference: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub evergreen: Option<f64>,
    /// Onset month of each trend group, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub onsets: Option<Vec<usize>>,
    /// First month, YYYY-MM.
    #[arg(long)]
    pub start: Option<String>,
    /// Let a user interact with the same item more than once.
    #[arg(long)]
    pub allow_repeats: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl GenerateArgs {
    pub fn spec(&self) -> SyntheticSpec {
        let d = SyntheticSpec::default();
        SyntheticSpec {
            num_users: self.users.unwrap_or(d.num_users),
            num_items: self.items.unwrap_or(d.num_items),
            num_slices: self.slices.unwrap_or(d.num_slices),
            val_months: self.val_months.unwrap_or(d.val_months),
            test_months: self.test_months.unwrap_or(d.test_months),
            interactions_per_slice: self.per_slice.unwrap_or(d.interactions_per_slice),
            num_groups: self.groups.unwrap_or(d.num_groups),
            num_clusters: self.clusters.unwrap_or(d.num_clusters),
            preference: self.preference.unwrap_or(d.preference),
            evergreen_weight: self.evergreen.unwrap_or(d.evergreen_weight),
            decay: self.decay.unwrap_or(d.decay),
            onsets: self.onsets.clone(),
            profile: match self.profile {
                Profile::Stationary => DriftProfile::Stationary,
                Profile::Drifting => DriftProfile::Drifting,
            },
            allow_repeats: self.allow_repeats,
            start: self.start.clone().unwrap_or(d.start),
            seed: self.seed,
        }
    }
}

pub fn run(args: &GenerateArgs) -> Result<(), CliError> {
    let spec = args.spec();
    let spec_json = serde_json::to_string(&spec).map_err(|e| CliError::Other(e.to_string()))?;
    let hash = hex::encode(Sha256::digest(spec_json.as_bytes()))[..16].to_string();
    let dir = output_dir(args.out.as_deref(), "generate", &hash);
    let data = spec.generate().map_err(|e| match e {
        DataError::InvalidSpec(m) => CliError::Usage(format!("invalid synthetic spec: {m}")),
        other => other.into(),
    })?;
    create_dir(&dir)?;
    data.write(&dir)?;
    write_json(&dir.join("synthetic.json"), &spec)?;
    let data_path = std::fs::canonicalize(dir.join("interactions.tsv"))?;
    let cut = format_date(data.cut_time);
    std::fs::write(
        dir.join("run.txt"),
        format!(
            "data = {}\ncut = {}\nval_months = {}\n",
            data_path.display(),
            &cut[..7],
            spec.val_months
        ),
    )?;
    println!("{}", dir.display());
    log::info!("{} interactions, cut {}", data.log.len(), cut);
    Ok(())
}
