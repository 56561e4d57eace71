//! The two-stage training plan: which task and which loss set is active at
//! every iteration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::losses::{LossBundle, Stage};
use crate::masks::TaskKind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Opposite task first, then the target task.
    InNOut,
    /// Target task in both stages.
    Baseline,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::InNOut => "innout",
            Strategy::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "innout" | "in-n-out" => Ok(Strategy::InNOut),
            "baseline" => Ok(Strategy::Baseline),
            _ => Err(Error::invalid(format!("unknown strategy {s:?} (expected innout or baseline)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    target_task: TaskKind,
    strategy: Strategy,
    n_pretrain: u64,
    k_finetune: u64,
    pretrain_loss: LossBundle,
    finetune_loss: LossBundle,
}

impl Schedule {
    pub fn new(
        target_task: TaskKind,
        strategy: Strategy,
        n_pretrain: u64,
        k_finetune: u64,
        pretrain_loss: LossBundle,
        finetune_loss: LossBundle,
    ) -> Result<Schedule> {
        let mut problems = Vec::new();
        if pretrain_loss.stage() != Stage::Pretrain {
            problems.push("first-stage loss bundle must be a pretraining bundle".to_string());
        }
        if finetune_loss.stage() != Stage::Finetune {
            problems.push("second-stage loss bundle must be a fine-tuning bundle".to_string());
        }
        if n_pretrain.checked_add(k_finetune).is_none_or(|t| t == 0) {
            problems.push(format!("schedule length N + K = {n_pretrain} + {k_finetune} is empty or overflows"));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Schedule {
            target_task,
            strategy,
            n_pretrain,
            k_finetune,
            pretrain_loss,
            finetune_loss,
        })
    }

    pub fn target_task(&self) -> TaskKind {
        self.target_task
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn n_pretrain(&self) -> u64 {
        self.n_pretrain
    }

    pub fn k_finetune(&self) -> u64 {
        self.k_finetune
    }

    pub fn pretrain_loss(&self) -> &LossBundle {
        &self.pretrain_loss
    }

    pub fn finetune_loss(&self) -> &LossBundle {
        &self.finetune_loss
    }

    pub fn total(&self) -> u64 {
        self.n_pretrain + self.k_finetune
    }

    /// Task trained during the first stage.
    pub fn pretrain_task(&self) -> TaskKind {
        match self.strategy {
            Strategy::InNOut => self.target_task.opposite(),
            Strategy::Baseline => self.target_task,
        }
    }

    fn check(&self, i: u64) -> Result<()> {
        if i < self.total() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "iteration {i} outside schedule of {} iterations",
                self.total()
            )))
        }
    }

    pub fn stage_for_iteration(&self, i: u64) -> Result<Stage> {
        self.check(i)?;
        Ok(if i < self.n_pretrain { Stage::Pretrain } else { Stage::Finetune })
    }

    pub fn task_for_iteration(&self, i: u64) -> Result<TaskKind> {
        Ok(match self.stage_for_iteration(i)? {
            Stage::Pretrain => self.pretrain_task(),
            Stage::Finetune => self.target_task,
        })
    }

    pub fn loss_bundle_for_iteration(&self, i: u64) -> Result<&LossBundle> {
        Ok(match self.stage_for_iteration(i)? {
            Stage::Pretrain => &self.pretrain_loss,
            Stage::Finetune => &self.finetune_loss,
        })
    }

    /// `(stage, task, first iteration, end iteration)` for each non-empty stage.
    pub fn stages(&self) -> Vec<(Stage, TaskKind, u64, u64)> {
        let mut out = Vec::new();
        if self.n_pretrain > 0 {
            out.push((Stage::Pretrain, self.pretrain_task(), 0, self.n_pretrain));
        }
        if self.k_finetune > 0 {
            out.push((Stage::Finetune, self.target_task, self.n_pretrain, self.total()));
        }
        out
    }
}

/// Builds a schedule from an epoch budget. The first stage gets
/// `round(split * total_epochs)` whole epochs, the second gets the rest.
/// Baseline ignores `split` and spends the whole budget on the target task
/// in a single fine-tuning stage.
pub fn epoch_schedule_adapter(
    total_epochs: u64,
    split: f64,
    iters_per_epoch: u64,
    strategy: Strategy,
    target_task: TaskKind,
    pretrain_loss: LossBundle,
    finetune_loss: LossBundle,
) -> Result<Schedule> {
    let mut problems = Vec::new();
    if !(split > 0.0 && split < 1.0) {
        problems.push(format!("schedule.split must lie strictly between 0 and 1, got {split}"));
    }
    if total_epochs == 0 {
        problems.push("schedule.epochs must be positive".to_string());
    }
    if iters_per_epoch == 0 {
        problems.push("iterations per epoch must be positive".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let (n, k) = match strategy {
        Strategy::InNOut => {
            let first = (split * total_epochs as f64).round() as u64;
            if first == 0 || first >= total_epochs {
                return Err(Error::Config(vec![format!(
                    "split {split} of {total_epochs} epochs leaves an empty stage ({first} + {})",
                    total_epochs.saturating_sub(first)
                )]));
            }
            (first * iters_per_epoch, (total_epochs - first) * iters_per_epoch)
        }
        Strategy::Baseline => (0, total_epochs * iters_per_epoch),
    };
    Schedule::new(target_task, strategy, n, k, pretrain_loss, finetune_loss)
}
