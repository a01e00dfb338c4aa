use std::collections::BTreeMap;
use std::io::Write;

use svbr_core::dataset::{load_dataset, Sample, Split};
use svbr_net::checkpoint::save_checkpoint;
use svbr_net::training::{train_logged, LogRecord, TrainConfig, TrainLog};
use svbr_net::{NetError, Network, NetworkConfig};

use super::say;
use crate::{CliError, CliResult, Profile, TrainArgs};

/// Resolved settings: profile defaults overridden by explicit flags.
pub fn resolve(args: &TrainArgs) -> (NetworkConfig, TrainConfig) {
    let (net, mut tc) = match args.profile {
        Profile::Full => (NetworkConfig::default(), TrainConfig::default()),
        Profile::Toy => (
            NetworkConfig::toy(),
            TrainConfig {
                batch_size: 2,
                phase_a_epochs: 3,
                phase_b_epochs: 3,
                ..TrainConfig::default()
            },
        ),
    };
    let net = NetworkConfig {
        depth: args.depth.unwrap_or(net.depth),
        base_width: args.base_width.unwrap_or(net.base_width),
    };
    tc.batch_size = args.batch_size.unwrap_or(tc.batch_size);
    tc.phase_a_epochs = args.phase_a.unwrap_or(tc.phase_a_epochs);
    tc.phase_b_epochs = args.phase_b.unwrap_or(tc.phase_b_epochs);
    tc.lr0 = args.lr.unwrap_or(tc.lr0);
    tc.lr_drop_every = args.lr_drop_every.unwrap_or(tc.lr_drop_every);
    tc.max_steps = args.max_steps.or(tc.max_steps);
    tc.seed = args.seed;
    (net, tc)
}

pub fn run(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let (net_cfg, cfg) = resolve(args);
    net_cfg.validate()?;
    cfg.validate()?;
    let samples = load_dataset(&args.dataset)?;
    if samples.is_empty() {
        return Err(CliError::Input(format!(
            "dataset {} has no records",
            args.dataset.display()
        )));
    }
    let (h, w) = (samples[0].sharp.height(), samples[0].sharp.width());
    net_cfg.check_input_size(h, w)?;

    let mut train_set: Vec<&Sample> = samples.iter().filter(|s| s.split == Split::Train).collect();
    let val_set: Vec<&Sample> = samples.iter().filter(|s| s.split == Split::Val).collect();
    if train_set.is_empty() {
        log::warn!("no training split in the dataset; training on every record");
        train_set = samples.iter().collect();
    }
    say(
        out,
        format!(
            "training depth {} base width {} on {} records ({} validation), {}x{}",
            net_cfg.depth,
            net_cfg.base_width,
            train_set.len(),
            val_set.len(),
            h,
            w
        ),
    )?;

    let mut net = Network::new(net_cfg, cfg.seed)?;
    let mut log = TrainLog::default();
    let result = train_logged(&mut net, &train_set, &val_set, &cfg, &mut log);
    // The log is written even when training aborted, for diagnosis.
    if let Some(path) = &args.log_out {
        log.write(path)?;
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e @ NetError::NonFiniteLoss { .. }) => {
            if let Some(LogRecord::Abort { reason, .. }) = log.records.last() {
                say(out, format!("aborted: {reason}"))?;
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };

    let mut notes = BTreeMap::new();
    notes.insert("seed".to_string(), cfg.seed.to_string());
    notes.insert("steps".to_string(), outcome.steps.to_string());
    if let Some((phase, epoch)) = outcome.best_epoch {
        notes.insert("best_phase".to_string(), phase.as_str().to_string());
        notes.insert("best_epoch".to_string(), epoch.to_string());
    }
    if let Some(v) = outcome.best_val_loss {
        notes.insert("best_val_loss".to_string(), format!("{v:e}"));
    }
    save_checkpoint(&args.checkpoint_out, &outcome.best, &notes)?;

    let losses = log.step_losses();
    let (first, last) = (
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
    );
    say(
        out,
        format!(
            "steps {} initial loss {first:.5} final loss {last:.5}",
            outcome.steps
        ),
    )?;
    match (outcome.best_epoch, outcome.best_val_loss) {
        (Some((phase, epoch)), Some(v)) => say(
            out,
            format!(
                "best validation loss {v:.5} at phase {} epoch {epoch}",
                phase.as_str()
            ),
        )?,
        _ => say(out, "no validation split; kept the final weights")?,
    }
    say(
        out,
        format!("checkpoint written to {}", args.checkpoint_out.display()),
    )
}
