//! Experiment runner for the vulab laboratory.
//!
//! A run loads an [`ExperimentConfig`], executes its campaigns in order and
//! writes one JSON report per campaign, the CSV data files, `manifest.json`
//! and `metadata.json`. Only the metadata carries timestamps, so two runs of
//! the same config produce identical reports, data and manifest.

pub mod campaigns;
pub mod config;
pub mod report;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{Campaign, ConfigError, ExperimentConfig};
pub use report::{report_schema_version, CampaignReport, Manifest, Status};

/// Exit status for an unusable command line or configuration.
pub const EXIT_USAGE: i32 = 3;

/// Reports and manifest of one run, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub reports: Vec<CampaignReport>,
    pub manifest: Manifest,
}

impl ReportBundle {
    pub fn exit_code(&self) -> i32 {
        self.manifest.exit_code
    }

    pub fn report(&self, campaign: Campaign) -> Option<&CampaignReport> {
        self.reports.iter().find(|r| r.campaign == campaign.name())
    }
}

/// Runs `campaigns` (in the given order) for the problem in `cfg`; problem
/// files are resolved against `base_dir`.
pub fn run(cfg: &ExperimentConfig, campaigns: &[Campaign], base_dir: &Path) -> Result<ReportBundle, ConfigError> {
    cfg.validate()?;
    let model = cfg.load_model(base_dir)?;
    let env = campaigns::Env::new(cfg, &model);
    let reports: Vec<CampaignReport> = campaigns.iter().map(|&c| campaigns::run_campaign(&env, c)).collect();
    let manifest = Manifest::build(model.name(), &reports);
    Ok(ReportBundle { reports, manifest })
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema_version: &'static str,
    tool_version: &'static str,
    started: String,
    finished: String,
    threads: usize,
    config: &'a ExperimentConfig,
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes the bundle into `out`, returning the paths written.
pub fn write_bundle(
    out: &Path,
    bundle: &ReportBundle,
    cfg: &ExperimentConfig,
    started: chrono::DateTime<chrono::Utc>,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: &str| -> io::Result<()> {
        let path = out.join(name);
        fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    for r in &bundle.reports {
        put(&format!("{}.json", r.campaign), &to_json(r))?;
        for f in &r.files {
            put(&f.name, &f.contents)?;
        }
    }
    put("manifest.json", &to_json(&bundle.manifest))?;
    let meta = Metadata {
        schema_version: report_schema_version(),
        tool_version: env!("CARGO_PKG_VERSION"),
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        threads: rayon::current_num_threads(),
        config: cfg,
    };
    put("metadata.json", &to_json(&meta))?;
    Ok(written)
}

/// Output directory: the command line wins over the config, then `vulab-out`.
pub fn output_dir(cli: Option<&Path>, cfg: &ExperimentConfig, base_dir: &Path) -> PathBuf {
    match (cli, &cfg.output_dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => base_dir.join(p),
        (None, None) => PathBuf::from("vulab-out"),
    }
}

/// Caps the global worker pool at `VULAB_THREADS` when it is set.
pub fn init_threads() -> Result<(), String> {
    match std::env::var("VULAB_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| format!("VULAB_THREADS must be a positive integer, got {v:?}"))?;
            if n == 0 {
                return Err("VULAB_THREADS must be at least 1".into());
            }
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
        }
        Err(_) => Ok(()),
    }
}
