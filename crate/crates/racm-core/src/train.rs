//! Mini-batch training with Adam and early stopping, plus the checkpoint
//! and training-log artifact formats.
//!
//! Every stochastic choice derives from the run seed through named streams,
//! so a repeated run reproduces the same batches, the same updates, and
//! byte-identical artifacts.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bytes;
use crate::corpus::TokenizedPost;
use crate::error::{CoreError, Result};
use crate::eval::metrics_at_k;
use crate::matrix::Matrix;
use crate::model::{
    bce_loss_on_tape, bce_scalar, forward_on_tape, init_params, param_layout, predict,
    select_neighbors, target_row, ModelConfig, NeighborSet,
};
use crate::params::ParamStore;
use crate::retrieval::KnowledgeSource;
use crate::rng;
use crate::tape::Tape;

const CKPT_MAGIC: &[u8; 8] = b"RACMCKP1";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs without a validation-loss
    /// improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 4,
            max_epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CoreError::InvalidConfig(
                "learning rate must be positive and finite".into(),
            ));
        }
        for (what, v) in [
            ("batch size", self.batch_size),
            ("max epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(CoreError::InvalidConfig(format!("{what} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers are keyed by parameter name and
/// updated in lexicographic order, so a step is a deterministic function of
/// the gradient buffers.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: std::collections::BTreeMap<String, Matrix>,
    v: std::collections::BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Default::default(),
            v: Default::default(),
        }
    }

    /// Apply one update from the gradients currently accumulated in `theta`.
    /// Parameters whose gradient is all zero still advance their moments;
    /// that matches the usual dense-Adam semantics.
    pub fn step(&mut self, theta: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in theta.iter_mut() {
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(p.value.rows(), p.value.cols()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(p.value.rows(), p.value.cols()));
            for i in 0..p.value.rows() {
                for j in 0..p.value.cols() {
                    let g = p.grad.get(i, j);
                    let mi = self.beta1 * m.get(i, j) + (1.0 - self.beta1) * g;
                    let vi = self.beta2 * v.get(i, j) + (1.0 - self.beta2) * g * g;
                    m.set(i, j, mi);
                    v.set(i, j, vi);
                    let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                    p.value.set(i, j, p.value.get(i, j) - update);
                }
            }
        }
    }
}

/// One line of the training log. Losses are means per post; F1 values are
/// validation macro averages as fractions in [0,1]. `wall_ms` is measured
/// but stripped from serialized logs so artifacts stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub f1_at_1: f64,
    pub f1_at_5: f64,
    #[serde(skip_serializing, default)]
    pub wall_ms: Option<u64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch, not the last one.
    pub theta: ParamStore,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub stopped_early: bool,
}

fn mean_valid_metrics(
    posts: &[TokenizedPost],
    theta: &ParamStore,
    ks: Option<&KnowledgeSource>,
    cfg: &ModelConfig,
) -> Result<(f64, f64, f64)> {
    let mut loss_sum = 0.0;
    let mut f1_1 = 0.0;
    let mut f1_5 = 0.0;
    for post in posts {
        let pred = predict(post, theta, ks, cfg)?;
        let targets = target_row(&post.tag_indices, cfg.tag_count);
        loss_sum += bce_scalar(&[pred.probs.clone()], &targets)?;
        let (_, _, a) = metrics_at_k(&pred.ranking, &post.tag_indices, 1)?;
        let (_, _, b) = metrics_at_k(&pred.ranking, &post.tag_indices, 5)?;
        f1_1 += a;
        f1_5 += b;
    }
    let n = posts.len() as f64;
    Ok((loss_sum / n, f1_1 / n, f1_5 / n))
}

/// Train all parameters from scratch. Per epoch: rebuild the knowledge
/// source from the training split with the current parameters (when
/// retrieval is on), shuffle, sweep mini-batches, then score the validation
/// split. Stops early once validation loss has not improved for
/// `patience` consecutive epochs and returns the best-validation snapshot.
pub fn train(
    train_posts: &[TokenizedPost],
    valid_posts: &[TokenizedPost],
    cfg: &ModelConfig,
    tcfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    if train_posts.is_empty() {
        return Err(CoreError::CorpusTooSmall("training split is empty".into()));
    }
    if valid_posts.is_empty() {
        return Err(CoreError::CorpusTooSmall(
            "validation split is empty (early stopping needs one)".into(),
        ));
    }
    let ids: HashSet<&str> = train_posts.iter().map(|p| p.id.as_str()).collect();
    if ids.len() != train_posts.len() {
        return Err(CoreError::CorpusTooSmall(
            "training split repeats a post id".into(),
        ));
    }

    let mut theta = init_params(cfg, tcfg.seed)?;
    let mut adam = Adam::new(tcfg.learning_rate);
    let mut log = Vec::new();
    let mut best_valid = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_theta = theta.clone();
    let mut since_improve = 0usize;
    let mut stopped_early = false;

    for epoch in 0..tcfg.max_epochs {
        let t0 = Instant::now();
        let ks = if cfg.effective_k() > 0 {
            Some(KnowledgeSource::build(train_posts, &theta)?)
        } else {
            None
        };

        let mut order: Vec<usize> = (0..train_posts.len()).collect();
        order.shuffle(&mut rng::stream(tcfg.seed, &format!("shuffle/{epoch}")));

        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let mut prob_nodes = Vec::with_capacity(batch.len());
            let mut targets = Matrix::zeros(batch.len(), cfg.tag_count);
            for (row, &pi) in batch.iter().enumerate() {
                let post = &train_posts[pi];
                let neighbors: NeighborSet =
                    select_neighbors(post, &theta, ks.as_ref(), cfg)?;
                let fwd = forward_on_tape(&mut tape, &theta, post, &neighbors, cfg)?;
                prob_nodes.push(fwd.probs);
                for &t in &post.tag_indices {
                    targets.set(row, t, 1.0);
                }
            }
            let loss = bce_loss_on_tape(&mut tape, &prob_nodes, &targets)?;
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(CoreError::Diverged { epoch, batch: batch_idx });
            }
            theta.zero_grads();
            tape.backward(loss)?;
            tape.export_grads(&mut theta)?;
            adam.step(&mut theta);
            loss_sum += loss_value * batch.len() as f64;
        }
        let train_loss = loss_sum / train_posts.len() as f64;

        let (valid_loss, f1_at_1, f1_at_5) =
            mean_valid_metrics(valid_posts, &theta, ks.as_ref(), cfg)?;
        if !valid_loss.is_finite() {
            // The last step of the epoch poisoned the parameters; point past
            // the final batch since every batch loss itself was finite.
            return Err(CoreError::Diverged {
                epoch,
                batch: order.chunks(tcfg.batch_size).count(),
            });
        }

        log.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            f1_at_1,
            f1_at_5,
            wall_ms: Some(t0.elapsed().as_millis() as u64),
        });

        if valid_loss < best_valid {
            best_valid = valid_loss;
            best_epoch = epoch;
            best_theta = theta.clone();
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve >= tcfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        theta: best_theta,
        log,
        best_epoch,
        best_valid_loss: best_valid,
        stopped_early,
    })
}

/// Configuration snapshot embedded in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

/// Write parameters plus their configuration snapshot. The layout is: magic,
/// version, meta JSON, parameter count, then each parameter as name, rows,
/// cols, row-major f64 values, with a trailing CRC32.
pub fn save_checkpoint(
    path: &Path,
    theta: &ParamStore,
    cfg: &ModelConfig,
    tcfg: &TrainingConfig,
) -> Result<()> {
    let meta = CheckpointMeta { model: cfg.clone(), training: tcfg.clone() };
    let meta_json = serde_json::to_string(&meta)
        .map_err(|e| CoreError::Parse(format!("checkpoint meta: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    bytes::put_u32(&mut buf, CKPT_VERSION);
    bytes::put_str(&mut buf, &meta_json);
    bytes::put_u32(&mut buf, theta.len() as u32);
    for (name, p) in theta.iter() {
        bytes::put_str(&mut buf, name);
        bytes::put_u32(&mut buf, p.value.rows() as u32);
        bytes::put_u32(&mut buf, p.value.cols() as u32);
        bytes::put_matrix(&mut buf, &p.value);
    }
    bytes::seal(&mut buf);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Read a checkpoint back and confirm it carries exactly the parameters its
/// own configuration calls for, with matching shapes.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, CheckpointMeta)> {
    let buf = std::fs::read(path)?;
    let mut cur = bytes::open(&buf, CKPT_MAGIC)?;
    let version = cur.u32("version")?;
    if version != CKPT_VERSION {
        return Err(CoreError::BadFile {
            offset: CKPT_MAGIC.len(),
            reason: format!("unsupported version {version}"),
        });
    }
    let meta_json = cur.string("config snapshot")?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_json)
        .map_err(|e| CoreError::Parse(format!("checkpoint meta: {e}")))?;
    meta.model.validate()?;
    meta.training.validate()?;
    let count = cur.u32("parameter count")? as usize;
    let mut theta = ParamStore::new();
    for _ in 0..count {
        let name = cur.string("parameter name")?;
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
            return Err(CoreError::BadFile {
                offset: cur.pos,
                reason: format!("implausible shape {rows}x{cols} for {name:?}"),
            });
        }
        let value = cur.matrix(rows, cols, &name)?;
        theta.insert(&name, value)?;
    }
    cur.finish()?;

    let layout = param_layout(&meta.model);
    if layout.len() != theta.len() {
        return Err(CoreError::BadFile {
            offset: 0,
            reason: format!(
                "checkpoint holds {} parameters, configuration calls for {}",
                theta.len(),
                layout.len()
            ),
        });
    }
    for (name, rows, cols, _) in &layout {
        if !theta.contains(name) {
            return Err(CoreError::BadFile {
                offset: 0,
                reason: format!("checkpoint is missing parameter {name:?}"),
            });
        }
        if theta.value(name).shape() != (*rows, *cols) {
            return Err(CoreError::BadFile {
                offset: 0,
                reason: format!(
                    "parameter {name:?} has shape {:?}, configuration calls for ({rows}, {cols})",
                    theta.value(name).shape()
                ),
            });
        }
    }
    Ok((theta, meta))
}

/// Write the training log as one JSON object per line. Wall-clock times are
/// not serialized, keeping reruns byte-identical.
pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in log {
        let line = serde_json::to_string(rec)
            .map_err(|e| CoreError::Parse(format!("log record: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;
    use crate::testutil::{micro_config, micro_post};

    #[test]
    fn adam_moves_toward_lower_loss_on_a_quadratic() {
        // Minimize (x - 3)^2 by hand-feeding its gradient.
        let mut theta = ParamStore::new();
        theta.insert("x", Matrix::zeros(1, 1)).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            theta.zero_grads();
            let x = theta.value("x").get(0, 0);
            let g = Matrix::from_vec(1, 1, vec![2.0 * (x - 3.0)]);
            theta.accumulate_grad("x", &g).unwrap();
            adam.step(&mut theta);
        }
        let x = theta.value("x").get(0, 0);
        assert!((x - 3.0).abs() < 1e-2, "x={x}");
    }

    fn one_post_corpus() -> Vec<TokenizedPost> {
        vec![micro_post("only", 2)]
    }

    #[test]
    fn single_post_overfit_drives_loss_to_zero() {
        let cfg = micro_config(Ablation::NoRa, 0);
        let tcfg = TrainingConfig {
            learning_rate: 0.05,
            batch_size: 4,
            max_epochs: 100,
            patience: 100,
            seed: 3,
        };
        let posts = one_post_corpus();
        let out = train(&posts, &posts, &cfg, &tcfg).unwrap();
        assert_eq!(out.log.len(), 100);
        let final_loss = out.log.last().unwrap().train_loss;
        let bound = 0.01 * cfg.tag_count as f64 * std::f64::consts::LN_2;
        assert!(final_loss < bound, "final {final_loss} vs bound {bound}");
        // Monotone non-increasing after a short warmup.
        for w in out.log[10..].windows(2) {
            assert!(
                w[1].train_loss <= w[0].train_loss + 1e-9,
                "rise at epoch {}: {} -> {}",
                w[1].epoch,
                w[0].train_loss,
                w[1].train_loss
            );
        }
    }

    #[test]
    fn rising_validation_loss_stops_exactly_at_patience() {
        // Validation post shares the training post's tokens but carries the
        // complementary tag set, so fitting the training post drives the
        // validation loss up from the first epoch.
        let cfg = micro_config(Ablation::NoRa, 0);
        let tcfg = TrainingConfig {
            learning_rate: 0.5,
            batch_size: 4,
            max_epochs: 50,
            patience: 2,
            seed: 7,
        };
        let train_posts = vec![micro_post("t", 1)];
        let mut valid_post = micro_post("t", 1);
        valid_post.id = "v".into();
        let truth: Vec<usize> = (0..cfg.tag_count)
            .filter(|t| !train_posts[0].tag_indices.contains(t))
            .collect();
        valid_post.tag_indices = truth;
        let out = train(&train_posts, &[valid_post], &cfg, &tcfg).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.best_epoch, 0);
        // Epoch 0 improves over the empty history; two rising epochs follow.
        assert_eq!(out.log.len(), 3);
        assert!(out.log[1].valid_loss >= out.log[0].valid_loss);
        assert!(out.log[2].valid_loss >= out.log[1].valid_loss);
    }

    #[test]
    fn same_seed_reproduces_logs_and_checkpoints() {
        let cfg = micro_config(Ablation::Full, 1);
        let tcfg = TrainingConfig {
            learning_rate: 0.01,
            batch_size: 2,
            max_epochs: 4,
            patience: 10,
            seed: 21,
        };
        let posts: Vec<TokenizedPost> =
            (0..6).map(|i| micro_post(&format!("p{i}"), i as u32)).collect();
        let valid: Vec<TokenizedPost> =
            (0..2).map(|i| micro_post(&format!("v{i}"), (i + 3) as u32)).collect();
        let a = train(&posts, &valid, &cfg, &tcfg).unwrap();
        let b = train(&posts, &valid, &cfg, &tcfg).unwrap();
        assert_eq!(
            a.log.iter().map(|r| (r.epoch, r.train_loss, r.valid_loss)).collect::<Vec<_>>(),
            b.log.iter().map(|r| (r.epoch, r.train_loss, r.valid_loss)).collect::<Vec<_>>()
        );

        let dir = std::env::temp_dir().join("racm-train-determinism");
        std::fs::create_dir_all(&dir).unwrap();
        let pa = dir.join("a.ckpt");
        let pb = dir.join("b.ckpt");
        save_checkpoint(&pa, &a.theta, &cfg, &tcfg).unwrap();
        save_checkpoint(&pb, &b.theta, &cfg, &tcfg).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

        let la = dir.join("a.log");
        let lb = dir.join("b.log");
        write_log(&la, &a.log).unwrap();
        write_log(&lb, &b.log).unwrap();
        assert_eq!(std::fs::read(&la).unwrap(), std::fs::read(&lb).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn checkpoint_round_trip_preserves_values_and_meta() {
        let cfg = micro_config(Ablation::Full, 2);
        let tcfg = TrainingConfig::default();
        let theta = init_params(&cfg, 9).unwrap();
        let dir = std::env::temp_dir().join("racm-ckpt-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &theta, &cfg, &tcfg).unwrap();
        let (loaded, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.model, cfg);
        assert_eq!(meta.training, tcfg);
        assert_eq!(loaded.len(), theta.len());
        for (name, p) in theta.iter() {
            assert_eq!(loaded.value(name).data(), p.value.data(), "{name}");
        }

        // A corrupted byte inside a parameter block must be caught by the
        // checksum, and a truncated file must not pass.
        let mut bad = std::fs::read(&path).unwrap();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x10;
        let bad_path = dir.join("bad.ckpt");
        std::fs::write(&bad_path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint(&bad_path),
            Err(CoreError::BadFile { .. })
        ));
        std::fs::write(&bad_path, &bad[..mid]).unwrap();
        assert!(load_checkpoint(&bad_path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn log_serialization_omits_wall_time() {
        let rec = EpochRecord {
            epoch: 0,
            train_loss: 1.5,
            valid_loss: 2.0,
            f1_at_1: 0.25,
            f1_at_5: 0.5,
            wall_ms: Some(1234),
        };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(!line.contains("wall"));
        assert!(line.contains("\"epoch\":0"));
    }

    #[test]
    fn empty_splits_are_rejected() {
        let cfg = micro_config(Ablation::NoRa, 0);
        let tcfg = TrainingConfig::default();
        let posts = one_post_corpus();
        assert!(train(&[], &posts, &cfg, &tcfg).is_err());
        assert!(train(&posts, &[], &cfg, &tcfg).is_err());
    }
}
