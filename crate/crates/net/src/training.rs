//! Two-phase training: first on true blur fields, then on the emulated
//! (propagated) estimates, with Adam and a step learning-rate schedule.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svbr_core::dataset::Sample;
use svbr_core::metrics::{ssim_loss, ssim_loss_with_grad, SsimConfig};
use svbr_core::{BlurField, ImageGrid};

use crate::blocks::Mode;
use crate::error::{NetError, Result};
use crate::network::{images_to_tensor, maps_to_tensor, tensor_to_images, Network};
use crate::params::{Grads, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub phase_a_epochs: usize,
    pub phase_b_epochs: usize,
    pub seed: u64,
    pub split_ratio: f64,
    /// Stops after this many optimizer steps in total, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr0: 1e-3,
            lr_drop_every: 20,
            lr_drop_factor: 10.0,
            phase_a_epochs: 32,
            phase_b_epochs: 32,
            seed: 0,
            split_ratio: 0.8,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.lr0 > 0.0
            && self.lr0.is_finite()
            && self.lr_drop_every > 0
            && self.lr_drop_factor > 0.0
            && self.lr_drop_factor.is_finite()
            && self.phase_a_epochs + self.phase_b_epochs > 0
            && self.split_ratio > 0.0
            && self.split_ratio < 1.0
            && self.max_steps != Some(0);
        if ok {
            Ok(())
        } else {
            Err(NetError::Config(format!(
                "invalid training configuration {self:?}"
            )))
        }
    }
}

/// `lr0 / factor^floor(epoch / every)`; `epoch` counts from the start of the
/// current phase.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = (epoch / cfg.lr_drop_every.max(1)) as i32;
    cfg.lr0 / cfg.lr_drop_factor.powi(drops)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    h: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len()
    {
        return Err(NetError::Shape(format!(
            "Adam update of {} parameters with {} gradients and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let c1 = 1.0 - h.beta1.powi(state.t as i32);
    let c2 = 1.0 - h.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

/// Adam over every trainable entry of a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    states: Vec<Option<AdamState>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            hyper: AdamHyper::default(),
            states: store
                .iter()
                .map(|(_, p)| p.trainable.then(|| AdamState::new(p.data.len())))
                .collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        if grads.len() != self.states.len() || store.len() != self.states.len() {
            return Err(NetError::Shape(
                "optimizer built for a different network".into(),
            ));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            if let Some(state) = self.states[id.index()].as_mut() {
                adam_step(store.data_mut(id), grads.get(id), state, lr, &self.hyper)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// True blur fields.
    A,
    /// Propagated estimates.
    B,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::A => "A",
            Phase::B => "B",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapVariant {
    True,
    Matting,
    Dt,
}

impl MapVariant {
    pub fn field(self, sample: &Sample) -> &BlurField {
        match self {
            MapVariant::True => &sample.field_true,
            MapVariant::Matting => &sample.field_matting,
            MapVariant::Dt => &sample.field_dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: usize,
        /// Epoch within the phase; the learning rate is a function of it.
        epoch: usize,
        phase: Phase,
        lr: f64,
        loss: f64,
        batch: Vec<String>,
        variants: Vec<MapVariant>,
    },
    Epoch {
        epoch: usize,
        global_epoch: usize,
        phase: Phase,
        lr: f64,
        train_loss: f64,
        val_loss: Option<f64>,
        /// Order in which the training samples were visited.
        permutation: Vec<usize>,
    },
    Abort {
        step: usize,
        epoch: usize,
        phase: Phase,
        batch: Vec<String>,
        reason: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Step { .. }))
    }

    pub fn epochs(&self) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Epoch { .. }))
    }

    pub fn step_losses(&self) -> Vec<f64> {
        self.steps()
            .filter_map(|r| match r {
                LogRecord::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("log record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| NetError::Input(format!("log line {}: {e}", i + 1)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| NetError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| NetError::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss within the last phase that ran; the final
    /// state when there is no validation data.
    pub best: Network,
    pub best_epoch: Option<(Phase, usize)>,
    pub best_val_loss: Option<f64>,
    pub steps: usize,
}

fn batch_loss_and_grads(
    net: &Network,
    batch: &[(&ImageGrid, &BlurField, &ImageGrid)],
) -> Result<(f64, Grads, Vec<crate::blocks::BnStat>)> {
    let blurry: Vec<&ImageGrid> = batch.iter().map(|b| b.0).collect();
    let maps: Vec<&BlurField> = batch.iter().map(|b| b.1).collect();
    let (x, m) = (images_to_tensor(&blurry)?, maps_to_tensor(&maps)?);
    let (y, cache, stats) = net.forward_batch(&x, &m, Mode::Train)?;
    if !y.is_finite() {
        return Ok((f64::NAN, Grads::zeros_like(net.params()), stats));
    }
    let preds = tensor_to_images(&y)?;
    let pairs: Vec<_> = preds.iter().zip(batch.iter().map(|b| b.2)).collect();
    let (loss, dpred) = ssim_loss_with_grad(&pairs, &SsimConfig::default())?;
    if !loss.is_finite() {
        return Ok((loss, Grads::zeros_like(net.params()), stats));
    }
    let refs: Vec<&ImageGrid> = dpred.iter().collect();
    let grads = net.backward(&cache, &images_to_tensor(&refs)?);
    Ok((loss, grads, stats))
}

/// Eval-mode SSIM loss averaged over samples and the given map variants.
pub fn evaluate_loss(
    net: &Network,
    samples: &[&Sample],
    variants: &[MapVariant],
) -> Result<Option<f64>> {
    if samples.is_empty() || variants.is_empty() {
        return Ok(None);
    }
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for s in samples {
        for v in variants {
            preds.push(net.forward(&s.blurry, v.field(s), Mode::Eval)?);
            targets.push(&s.sharp);
        }
    }
    let pairs: Vec<_> = preds.iter().zip(targets).collect();
    Ok(Some(ssim_loss(&pairs, &SsimConfig::default())?))
}

fn check_samples(samples: &[&Sample]) -> Result<()> {
    for s in samples {
        let (h, w) = (s.sharp.height(), s.sharp.width());
        let fields = [&s.field_true, &s.field_matting, &s.field_dt];
        if s.blurry.shape() != s.sharp.shape() || fields.iter().any(|f| f.shape() != (h, w)) {
            return Err(NetError::Input(format!(
                "record {} has inconsistent shapes",
                s.id
            )));
        }
    }
    Ok(())
}

/// Trains `net` in place and appends every step, epoch and abort record to
/// `log`, so that a partial log survives a failed run.
pub fn train_logged(
    net: &mut Network,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::EmptyDataset("no training records".into()));
    }
    check_samples(train_set)?;
    check_samples(val_set)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut step = 0usize;
    let mut global_epoch = 0usize;
    let mut best: Option<(f64, Phase, usize, Network)> = None;
    let phases = [
        (Phase::A, cfg.phase_a_epochs),
        (Phase::B, cfg.phase_b_epochs),
    ];

    'phases: for (phase, epochs) in phases {
        if epochs == 0 {
            continue;
        }
        // Only the last phase that runs supplies the retained checkpoint.
        best = None;
        // Fresh optimizer state per phase.
        let mut adam = Adam::new(net.params());
        for epoch in 0..epochs {
            let lr = lr_schedule(cfg, epoch);
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            let variants: Vec<MapVariant> = order
                .iter()
                .map(|_| match phase {
                    Phase::A => MapVariant::True,
                    Phase::B if rng.random_bool(0.5) => MapVariant::Matting,
                    Phase::B => MapVariant::Dt,
                })
                .collect();
            let mut epoch_loss = 0.0;
            let mut epoch_batches = 0usize;
            let mut stopped = false;
            for (chunk, chunk_variants) in order
                .chunks(cfg.batch_size)
                .zip(variants.chunks(cfg.batch_size))
            {
                let batch: Vec<_> = chunk
                    .iter()
                    .zip(chunk_variants)
                    .map(|(&i, v)| {
                        let s = train_set[i];
                        (&s.blurry, v.field(s), &s.sharp)
                    })
                    .collect();
                let ids: Vec<String> = chunk.iter().map(|&i| train_set[i].id.clone()).collect();
                let (loss, grads, stats) = batch_loss_and_grads(net, &batch)?;
                if !loss.is_finite() || !grads.is_finite() {
                    let reason = if loss.is_finite() {
                        "non-finite gradient"
                    } else {
                        "non-finite loss"
                    };
                    log.records.push(LogRecord::Abort {
                        step,
                        epoch,
                        phase,
                        batch: ids.clone(),
                        reason: reason.into(),
                    });
                    return Err(NetError::NonFiniteLoss {
                        step,
                        epoch,
                        phase: phase.as_str().into(),
                        batch: ids,
                    });
                }
                adam.step(net.params_mut(), &grads, lr)?;
                net.apply_bn_stats(&stats);
                net.params_mut().round_to_f32();
                log.records.push(LogRecord::Step {
                    step,
                    epoch,
                    phase,
                    lr,
                    loss,
                    batch: ids,
                    variants: chunk_variants.to_vec(),
                });
                step += 1;
                epoch_loss += loss;
                epoch_batches += 1;
                if cfg.max_steps.is_some_and(|m| step >= m) {
                    stopped = true;
                    break;
                }
            }

            let val_variants: &[MapVariant] = match phase {
                Phase::A => &[MapVariant::True],
                Phase::B => &[MapVariant::Matting, MapVariant::Dt],
            };
            let val_loss = evaluate_loss(net, val_set, val_variants)?;
            let train_loss = epoch_loss / epoch_batches.max(1) as f64;
            log::info!(
                "phase {} epoch {epoch} lr {lr:e}: train loss {train_loss:.5}, validation loss {}",
                phase.as_str(),
                val_loss.map_or("n/a".to_string(), |v| format!("{v:.5}"))
            );
            log.records.push(LogRecord::Epoch {
                epoch,
                global_epoch,
                phase,
                lr,
                train_loss,
                val_loss,
                permutation: order,
            });
            global_epoch += 1;
            if let Some(v) = val_loss {
                if best.as_ref().is_none_or(|(b, ..)| v < *b) {
                    best = Some((v, phase, epoch, net.clone()));
                }
            }
            if stopped {
                break 'phases;
            }
        }
    }

    Ok(match best {
        Some((v, phase, epoch, best_net)) => TrainOutcome {
            best: best_net,
            best_epoch: Some((phase, epoch)),
            best_val_loss: Some(v),
            steps: step,
        },
        None => TrainOutcome {
            best: net.clone(),
            best_epoch: None,
            best_val_loss: None,
            steps: step,
        },
    })
}

pub fn train(
    net: &mut Network,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, TrainLog)> {
    let mut log = TrainLog::default();
    let outcome = train_logged(net, train_set, val_set, cfg, &mut log)?;
    Ok((outcome, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::encode_checkpoint;
    use crate::network::NetworkConfig;
    use std::collections::BTreeMap;
    use svbr_core::dataset::{synthesize_samples, SourceImage, SynthConfig};
    use svbr_core::kernels::default_pattern_bank;
    use svbr_core::scenes::textured_scene;

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let images: Vec<SourceImage> = (0..n as u64)
            .map(|i| SourceImage {
                id: format!("src{i}"),
                image: textured_scene(32, 32, seed + i),
            })
            .collect();
        let cfg = SynthConfig {
            patterns_per_image: 1,
            seed,
            ..SynthConfig::default()
        };
        synthesize_samples(&images, &default_pattern_bank(), &cfg)
            .unwrap()
            .0
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            lr_drop_every: 2,
            phase_a_epochs: 3,
            phase_b_epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(&cfg, 0), 1e-3);
        assert_eq!(lr_schedule(&cfg, 19), 1e-3);
        assert!((lr_schedule(&cfg, 20) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(&cfg, 45) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut st = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut st, 1e-3, &AdamHyper::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // m_hat = g and v_hat = g^2 after one step, so the update is
        // lr * g / (|g| + eps).
        for g in [1.0, -0.25, 40.0] {
            let mut p = vec![2.0];
            let mut st = AdamState::new(1);
            adam_step(&mut p, &[g], &mut st, 1e-3, &AdamHyper::default()).unwrap();
            let expected = 2.0 - 1e-3 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15, "g={g}");
            assert!(((2.0 - p[0]).abs() - 1e-3).abs() < 1e-10);
        }
    }

    #[test]
    fn adam_rejects_mismatched_lengths() {
        let mut st = AdamState::new(2);
        assert!(adam_step(
            &mut [0.0, 0.0],
            &[1.0],
            &mut st,
            1e-3,
            &AdamHyper::default()
        )
        .is_err());
        assert!(adam_step(&mut [0.0], &[1.0], &mut st, 1e-3, &AdamHyper::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr0: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                split_ratio: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr_drop_every: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                max_steps: Some(0),
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn training_contract_holds() {
        let data = samples(4, 30);
        let train_set: Vec<&Sample> = data[..3].iter().collect();
        let val_set: Vec<&Sample> = data[3..].iter().collect();
        let cfg = quick_cfg();
        let mut net = Network::new(NetworkConfig::tiny(), 1).unwrap();
        let (outcome, log) = train(&mut net, &train_set, &val_set, &cfg).unwrap();

        // 3 samples in batches of 2 make two steps per epoch.
        assert_eq!(outcome.steps, 12);
        assert_eq!(log.epochs().count(), 6);
        let mut last_step = None;
        let mut b_variants = Vec::new();
        for r in log.steps() {
            let LogRecord::Step {
                step,
                epoch,
                phase,
                lr,
                loss,
                variants,
                ..
            } = r
            else {
                unreachable!()
            };
            assert!(last_step.is_none_or(|s| *step > s));
            last_step = Some(*step);
            assert_eq!(*lr, lr_schedule(&cfg, *epoch));
            assert!((0.0..=2.0).contains(loss), "loss {loss}");
            match phase {
                Phase::A => assert!(variants.iter().all(|v| *v == MapVariant::True)),
                Phase::B => b_variants.extend(variants.iter().copied()),
            }
        }
        assert!(b_variants.iter().all(|v| *v != MapVariant::True));
        assert!(b_variants.contains(&MapVariant::Matting) && b_variants.contains(&MapVariant::Dt));
        for r in log.epochs() {
            let LogRecord::Epoch {
                epoch,
                lr,
                permutation,
                val_loss,
                ..
            } = r
            else {
                unreachable!()
            };
            assert_eq!(*lr, lr_schedule(&cfg, *epoch));
            let mut p = permutation.clone();
            p.sort_unstable();
            assert_eq!(p, vec![0, 1, 2]);
            assert!(val_loss.is_some());
        }
        // The retained network comes from phase B and matches its logged
        // validation loss.
        let (phase, _) = outcome.best_epoch.unwrap();
        assert_eq!(phase, Phase::B);
        let v = evaluate_loss(
            &outcome.best,
            &val_set,
            &[MapVariant::Matting, MapVariant::Dt],
        )
        .unwrap();
        assert_eq!(v, outcome.best_val_loss);

        let back = TrainLog::parse_jsonl(&log.to_jsonl()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn training_is_deterministic() {
        let data = samples(3, 40);
        let refs: Vec<&Sample> = data.iter().collect();
        let cfg = TrainConfig {
            phase_b_epochs: 1,
            ..quick_cfg()
        };
        let run = || {
            let mut net = Network::new(NetworkConfig::tiny(), 2).unwrap();
            let (outcome, log) = train(&mut net, &refs[..2], &refs[2..], &cfg).unwrap();
            (
                encode_checkpoint(&outcome.best, &BTreeMap::new()),
                log.to_jsonl(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn max_steps_stops_early() {
        let data = samples(2, 50);
        let refs: Vec<&Sample> = data.iter().collect();
        let cfg = TrainConfig {
            batch_size: 1,
            max_steps: Some(3),
            ..quick_cfg()
        };
        let mut net = Network::new(NetworkConfig::tiny(), 3).unwrap();
        let (outcome, log) = train(&mut net, &refs, &[], &cfg).unwrap();
        assert_eq!(outcome.steps, 3);
        assert_eq!(log.steps().count(), 3);
        assert!(outcome.best_epoch.is_none());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut net = Network::new(NetworkConfig::tiny(), 4).unwrap();
        let err = train(&mut net, &[], &[], &quick_cfg()).unwrap_err();
        assert!(matches!(err, NetError::EmptyDataset(_)));
    }

    #[test]
    fn non_finite_loss_aborts_with_record() {
        let data = samples(2, 60);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut net = Network::new(NetworkConfig::tiny(), 5).unwrap();
        let id = net.params().find("out.conv.b").unwrap();
        net.params_mut().data_mut(id)[0] = f64::NAN;
        let mut log = TrainLog::default();
        let err = train_logged(&mut net, &refs, &[], &quick_cfg(), &mut log).unwrap_err();
        assert!(
            matches!(err, NetError::NonFiniteLoss { step: 0, .. }),
            "{err}"
        );
        assert!(matches!(
            log.records.last(),
            Some(LogRecord::Abort { step: 0, .. })
        ));
        assert_eq!(log.steps().count(), 0);
    }
}
