use std::fs;
use std::path::Path;
use std::time::Instant;

use super::config::TrainConfig;
use crate::data::{derive_seed, epoch_order, iterate, kfold_split, oracle_transform, Dataset, FoldAssignment, SamplePair, Split};
use crate::error::{FreaError, Result};
use crate::frea_unet::{checkpoint, Ablation, ForwardOptions, FreaUnetModel, GateMode};
use crate::image_ops::{denormalize, ImageFile};
use crate::objectives::{evaluate_pair, record_loss, LossBreakdown, LossWeights, MetricRow, MetricsReport, Targets};
use crate::tensor::{Adam, Tape, Tensor};

/// Anything that maps a sample's MR image to a PET estimate in intensity units.
pub trait Predictor {
    fn predict(&mut self, sample: &SamplePair) -> Result<ImageFile>;
}

impl Predictor for FreaUnetModel {
    fn predict(&mut self, sample: &SamplePair) -> Result<ImageFile> {
        let out = self.forward(&sample.mr)?;
        denormalize(&out.final_out, sample.q)
    }
}

/// The generating transform of the synthetic data, usable as a perfect model.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&mut self, sample: &SamplePair) -> Result<ImageFile> {
        oracle_transform(&sample.mr_image)
    }
}

/// Learning rate for a 0-based epoch.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    if !config.lr_decay {
        return config.lr;
    }
    let hold = config.epochs / 2;
    let decay = config.epochs - hold;
    let past = epoch.saturating_sub(hold) as f64;
    config.lr * (1.0 - past / (decay as f64 + 1.0))
}

/// Trains a fresh model on `train` for `config.epochs` epochs, one sample
/// per step. `on_epoch` sees each epoch's averaged losses.
pub fn fit(
    config: &TrainConfig,
    train: &[&SamplePair],
    on_epoch: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<(FreaUnetModel, Vec<LossBreakdown>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(FreaError::Dataset("empty training split".into()));
    }
    let mut model = FreaUnetModel::build(config.effective_model())?;
    model.train();
    let weights = LossWeights::from_config(model.config());
    let mut adam = Adam::new(config.lr, config.beta1, config.beta2, config.adam_eps);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        adam.set_lr(lr_at(config, epoch));
        let mut losses = Vec::with_capacity(train.len());
        for sample in epoch_order(train, config.shuffle_seed, epoch) {
            let mut tape = Tape::new();
            let opts = ForwardOptions {
                gates: GateMode::Learned,
                dropout_seed: derive_seed(config.shuffle_seed, 3, step),
                update_stats: true,
            };
            let graph = model.forward_graph(&mut tape, &sample.mr, &opts)?;
            let targets = Targets {
                pet: &sample.pet,
                pet_low: &sample.pet_low,
                pet_high: &sample.pet_high,
            };
            let (loss, breakdown) = record_loss(&mut tape, &graph, targets, weights)?;
            if !breakdown.total.is_finite() {
                return Err(FreaError::NonFiniteLoss {
                    epoch: epoch + 1,
                    sample: sample.subject_id.clone(),
                });
            }
            tape.backward(loss)?;
            let grads: Vec<Tensor> = graph.params.iter().map(|v| tape.grad_or_zeros(*v)).collect();
            adam.step(model.params_mut(), &grads)?;
            losses.push(breakdown);
            step += 1;
        }
        let avg = LossBreakdown::average(&losses).expect("non-empty epoch");
        on_epoch(epoch + 1, &avg);
        history.push(avg);
    }
    model.eval();
    Ok((model, history))
}

/// Metrics of `predictor` on `samples`, all attributed to `fold`.
pub fn evaluate(
    predictor: &mut dyn Predictor,
    samples: &[&SamplePair],
    fold: usize,
    mask_threshold: f64,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(FreaError::Dataset("empty evaluation split".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let syn = predictor.predict(s)?;
        rows.push(MetricRow {
            sample_id: s.subject_id.clone(),
            fold,
            metrics: evaluate_pair(&s.pet_image, &syn, mask_threshold)?,
        });
    }
    MetricsReport::from_rows(rows, mask_threshold)
}

/// Outcome of training and testing one cross-validation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub losses: Vec<LossBreakdown>,
    pub report: MetricsReport,
    pub checkpoint_hash: String,
}

/// Everything a cross-validation run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config_text: String,
    pub folds: FoldAssignment,
    pub rounds: Vec<RoundRecord>,
    /// All test samples pooled across rounds.
    pub aggregate: MetricsReport,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Plain-text summary: config echo, per-round metrics and the pooled result.
    pub fn summary(&self) -> String {
        let mut out = String::from("# config\n");
        out.push_str(&self.config_text);
        out.push_str("\n# rounds\n");
        for r in &self.rounds {
            let last = r.losses.last().map_or(f64::NAN, |l| l.total);
            out.push_str(&format!(
                "round {}: n={} {} final_loss={:.6} checkpoint={}\n",
                r.round,
                r.report.rows.len(),
                mean_std_line(&r.report),
                last,
                r.checkpoint_hash
            ));
        }
        out.push_str(&format!("\n# aggregate\n{}\n", mean_std_line(&self.aggregate)));
        out.push_str(&format!("wall_clock_secs={:.1}\n", self.wall_clock_secs));
        out
    }
}

fn mean_std_line(r: &MetricsReport) -> String {
    format!(
        "MAE {:.2} ± {:.2}  PSNR {:.2} ± {:.2}  SSIM {:.3} ± {:.3}",
        r.mean.mae, r.std.mae, r.mean.psnr, r.std.psnr, r.mean.ssim, r.std.ssim
    )
}

/// Trains on every fold except `round` and tests on that fold.
pub fn train_round(
    config: &TrainConfig,
    dataset: &Dataset,
    folds: &FoldAssignment,
    round: usize,
    on_epoch: &mut dyn FnMut(usize, &LossBreakdown),
) -> Result<(FreaUnetModel, RoundRecord)> {
    let train = iterate(dataset, folds, round, Split::Train, config.shuffle_seed, 0)?;
    let test = iterate(dataset, folds, round, Split::Test, config.shuffle_seed, 0)?;
    let (mut model, losses) = fit(config, &train, on_epoch)?;
    let bytes = checkpoint::to_bytes(&model);
    let checkpoint_hash = checkpoint::content_hash(&bytes);
    if let Some(dir) = &config.out_dir {
        write_file(&dir.join(format!("round{round}.ckpt")), &bytes)?;
    }
    let report = evaluate(&mut model, &test, round, config.mask_threshold)?;
    if let Some(dir) = &config.out_dir {
        report.write_csv(dir.join(format!("round{round}.csv")))?;
    }
    Ok((
        model,
        RoundRecord {
            round,
            losses,
            report,
            checkpoint_hash,
        },
    ))
}

pub fn cross_validate(
    config: &TrainConfig,
    dataset: &Dataset,
    on_epoch: &mut dyn FnMut(usize, usize, &LossBreakdown),
) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let folds = kfold_split(dataset, config.k, config.data_seed)?;
    let mut rounds = Vec::with_capacity(config.k);
    for round in 0..config.k {
        let (_, rec) = train_round(config, dataset, &folds, round, &mut |e, l| on_epoch(round, e, l))?;
        rounds.push(rec);
    }
    let aggregate = MetricsReport::merge(&rounds.iter().map(|r| r.report.clone()).collect::<Vec<_>>())?;
    let record = RunRecord {
        config_text: config.to_text(),
        folds,
        rounds,
        aggregate,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &config.out_dir {
        record.aggregate.write_csv(dir.join("metrics.csv"))?;
        write_file(&dir.join("summary.txt"), record.summary().as_bytes())?;
    }
    Ok(record)
}

/// Cross-validation results for each arm of the ablation matrix.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub arms: Vec<(Ablation, RunRecord)>,
}

impl AblationReport {
    /// One row per arm with MAE, PSNR and SSIM as mean ± std over test samples.
    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:>16} {:>16} {:>16}\n", "Method", "MAE", "PSNR", "SSIM");
        for (arm, rec) in &self.arms {
            let (m, s) = (&rec.aggregate.mean, &rec.aggregate.std);
            out.push_str(&format!(
                "{:<20} {:>16} {:>16} {:>16}\n",
                arm.label(),
                format!("{:.2} ± {:.2}", m.mae, s.mae),
                format!("{:.2} ± {:.2}", m.psnr, s.psnr),
                format!("{:.3} ± {:.3}", m.ssim, s.ssim),
            ));
        }
        out
    }
}

/// Runs the same cross-validation for all four arms with identical seeds.
/// Each arm writes into its own subdirectory of `out_dir`.
pub fn ablate(
    config: &TrainConfig,
    dataset: &Dataset,
    on_epoch: &mut dyn FnMut(Ablation, usize, usize, &LossBreakdown),
) -> Result<AblationReport> {
    let mut arms = Vec::with_capacity(4);
    for arm in Ablation::ALL {
        let mut c = config.clone();
        c.ablation = Some(arm);
        c.out_dir = config.out_dir.as_ref().map(|d| d.join(arm.name()));
        let rec = cross_validate(&c, dataset, &mut |r, e, l| on_epoch(arm, r, e, l))?;
        arms.push((arm, rec));
    }
    let report = AblationReport { arms };
    if let Some(dir) = &config.out_dir {
        write_file(&dir.join("ablation.txt"), report.table().as_bytes())?;
    }
    Ok(report)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| FreaError::io(path, e))
}
