use serde::{Deserialize, Serialize};

use crate::error::{LxlError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub extent: usize,
    pub epochs: usize,
    /// Fraction of the stage's epochs over which new blocks fade in.
    pub fade_fraction: f64,
    pub discriminator_width: usize,
}

/// Progressive growth plan: extents double from stage to stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSchedule {
    pub stages: Vec<StageSpec>,
}

pub const BASE_DISCRIMINATOR_WIDTH: usize = 64;

impl GrowthSchedule {
    /// Stages from `base` doubling up to `final_extent`, with discriminator width doubling from 64
    /// and fade-in over the first half of each stage.
    pub fn doubling(base: usize, final_extent: usize, epochs: &[usize]) -> Result<GrowthSchedule> {
        let mut stages = Vec::new();
        let mut e = base;
        while e <= final_extent && base > 0 {
            stages.push(e);
            e *= 2;
        }
        if stages.last() != Some(&final_extent) {
            return Err(LxlError::Config(format!("{final_extent} is not {base} times a power of two")));
        }
        if epochs.len() != stages.len() {
            return Err(LxlError::Config(format!(
                "schedule has {} stages but {} epoch budgets",
                stages.len(),
                epochs.len()
            )));
        }
        let schedule = GrowthSchedule {
            stages: stages
                .iter()
                .zip(epochs)
                .enumerate()
                .map(|(i, (&extent, &epochs))| StageSpec {
                    extent,
                    epochs,
                    fade_fraction: 0.5,
                    discriminator_width: BASE_DISCRIMINATOR_WIDTH << i,
                })
                .collect(),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// 7 → 14 → 28.
    pub fn desk(epochs: [usize; 3]) -> GrowthSchedule {
        GrowthSchedule::doubling(7, 28, &epochs).expect("valid desk schedule")
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn final_extent(&self) -> usize {
        self.stages.last().map_or(0, |s| s.extent)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.stages.first().ok_or_else(|| LxlError::Config("schedule has no stages".into()))?;
        if first.extent == 0 {
            return Err(LxlError::Config("stage extent must be positive".into()));
        }
        for w in self.stages.windows(2) {
            if w[1].extent != 2 * w[0].extent {
                return Err(LxlError::Config(format!(
                    "stage extent {} does not double the previous {}",
                    w[1].extent, w[0].extent
                )));
            }
            if w[1].discriminator_width < w[0].discriminator_width {
                return Err(LxlError::Config("discriminator width must not shrink".into()));
            }
        }
        for s in &self.stages {
            if s.epochs == 0 || s.discriminator_width == 0 || !(0.0..=1.0).contains(&s.fade_fraction) {
                return Err(LxlError::Config(format!("invalid stage at extent {}", s.extent)));
            }
        }
        Ok(())
    }

    /// Fails unless the final stage matches the dataset extent.
    pub fn check_dataset(&self, extent: usize) -> Result<()> {
        self.validate()?;
        if self.final_extent() != extent {
            return Err(LxlError::Config(format!(
                "schedule ends at {} but the dataset extent is {extent}",
                self.final_extent()
            )));
        }
        Ok(())
    }
}
