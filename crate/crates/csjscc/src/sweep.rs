//! Compression-ratio x SNR sweeps and their CSV form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use csjscc_core::metrics::{self, MetricsRecord};

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::trainer::{self, TrainConfig};

pub const CSV_HEADER: &str =
    "ratio_nominal,ratio_realized,snr_train_db,snr_test_db,repeats,mean_psnr_db,mean_ssim,images,config_hash";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub ratio_nominal: f64,
    pub record: MetricsRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub config_hash: String,
    /// One trained checkpoint per ratio, in ratio order.
    pub checkpoints: Vec<PathBuf>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            csv_line(&mut out, row.ratio_nominal, &row.record, &self.config_hash);
        }
        out
    }
}

/// Append one CSV line for `record`.
pub fn csv_line(out: &mut String, ratio_nominal: f64, r: &MetricsRecord, config_hash: &str) {
    writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        ratio_nominal,
        r.compression_ratio,
        r.snr_train_db,
        r.snr_test_db,
        r.repeats,
        r.mean_psnr_db,
        r.mean_ssim,
        r.images,
        config_hash
    )
    .expect("writing to a String");
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, text).map_err(Error::io(path))
}

/// Train one model per ratio at `channel.snr_train_db` and evaluate it at
/// every `channel.snr_test_db`. Checkpoints go to `checkpoint_dir` when given.
pub fn sweep(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    checkpoint_dir: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<SweepResult> {
    if cfg.sweep.ratios.is_empty() || cfg.channel.snr_test_db.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    cfg.validate()?;
    let mut images = dataset.test.clone();
    if cfg.eval.max_images > 0 {
        images.truncate(cfg.eval.max_images);
    }
    let config_hash = cfg.hash();
    // Resolve every point before training so a bad ratio fails fast.
    let points = cfg
        .sweep
        .ratios
        .iter()
        .map(|&r| {
            Ok((
                r,
                cfg.architecture
                    .with_c_last(cfg.architecture.c_last_for(r)?)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for (index, (ratio, arch)) in points.into_iter().enumerate() {
        progress(&format!("ratio {ratio}: c_last {}", arch.c_last));
        let mut tc = TrainConfig::from_experiment(cfg, arch);
        tc.checkpoint_path = checkpoint_dir.map(|d| d.join(format!("sweep_{index}.ckpt")));
        let outcome = trainer::train_loop(&tc, &dataset.train, &dataset.validation, |_| {})?;
        if let Some(p) = &tc.checkpoint_path {
            checkpoints.push(p.clone());
        }
        let report = eval::evaluate(
            &outcome.checkpoint,
            &images,
            &cfg.channel.snr_test_db,
            cfg.eval.repeats,
            cfg.seed,
        )?;
        for record in report.records {
            rows.push(SweepRow {
                ratio_nominal: ratio,
                record,
            });
        }
    }
    Ok(SweepResult {
        rows,
        config_hash,
        checkpoints,
    })
}

/// `k / n` for an `H x W` input under `cfg`'s architecture with ratio `r`.
pub fn realized_ratio(
    cfg: &ExperimentConfig,
    ratio: f64,
    height: usize,
    width: usize,
) -> Result<f64> {
    let arch = cfg
        .architecture
        .with_c_last(cfg.architecture.c_last_for(ratio)?)?;
    Ok(metrics::compression_ratio(&arch, height, width)?)
}
