use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Tge,
    Decoder,
    Mmf,
    Head,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Tge => "tge",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Mmf => "mmf",
            ParamGroup::Head => "head",
        })
    }
}

/// Loss weights `(λ_c, λ_f, λ_d)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub ce: f64,
    pub focal: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub stage: u8,
    pub trainable: BTreeSet<ParamGroup>,
    pub lambdas: Lambdas,
    pub epochs: usize,
    pub base_lr: f64,
    /// Fraction of the stage's steps spent warming up.
    pub warmup_frac: f64,
    pub batch_size: usize,
}

pub const DEFAULT_EPOCHS: usize = 20;
/// Base learning rate for plain gradient descent.
pub const DEFAULT_BASE_LR: f64 = 0.5;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_WARMUP_FRAC: f64 = 0.05;

fn expected(stage: u8) -> Option<(Vec<ParamGroup>, Lambdas)> {
    use ParamGroup::*;
    let only_ce = Lambdas { ce: 1.0, focal: 0.0, dice: 0.0 };
    match stage {
        1 => Some((vec![Tge, Head], only_ce)),
        2 => Some((vec![Decoder, Mmf, Head], Lambdas { ce: 1.0, focal: 1.0, dice: 1.0 })),
        3 => Some((vec![Tge, Mmf, Head], only_ce)),
        _ => None,
    }
}

impl StagePlan {
    pub fn standard(stage: u8, epochs: usize, base_lr: f64) -> Result<Self> {
        let (groups, lambdas) =
            expected(stage).ok_or_else(|| Error::Input(format!("stage {stage} outside 1..=3")))?;
        Ok(StagePlan {
            stage,
            trainable: groups.into_iter().collect(),
            lambdas,
            epochs,
            base_lr,
            warmup_frac: DEFAULT_WARMUP_FRAC,
            batch_size: DEFAULT_BATCH,
        })
    }

    /// The three standard stages in order.
    pub fn standard_sequence(epochs: usize, base_lr: f64) -> [StagePlan; 3] {
        [1, 2, 3].map(|s| StagePlan::standard(s, epochs, base_lr).expect("valid stage"))
    }

    pub fn validate(&self) -> Result<()> {
        let (groups, lambdas) = expected(self.stage)
            .ok_or_else(|| Error::Input(format!("stage {} outside 1..=3", self.stage)))?;
        let want: BTreeSet<ParamGroup> = groups.into_iter().collect();
        if self.trainable != want || self.lambdas != lambdas {
            return Err(Error::Input(format!(
                "stage {} must train {want:?} with weights {lambdas:?}",
                self.stage
            )));
        }
        if self.batch_size == 0 || !(self.base_lr >= 0.0) || !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(Error::Input(format!("invalid optimisation settings in stage {}", self.stage)));
        }
        Ok(())
    }

    /// Whether the answer head sees expert knowledge. The first stage trains
    /// the enhancer alone and feeds zeros in its place.
    pub fn uses_expert(&self) -> bool {
        self.stage != 1
    }

    pub fn trains(&self, g: ParamGroup) -> bool {
        self.trainable.contains(&g)
    }

    /// `λ_c·L_c + λ_f·L_f + λ_d·L_d`.
    pub fn total_loss(&self, l_c: f64, l_f: f64, l_d: f64) -> f64 {
        total_loss(l_c, l_f, l_d, self)
    }
}

pub fn total_loss(l_c: f64, l_f: f64, l_d: f64, plan: &StagePlan) -> f64 {
    let l = plan.lambdas;
    l.ce * l_c + l.focal * l_f + l.dice * l_d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_plans_validate() {
        for p in StagePlan::standard_sequence(20, 5e-4) {
            p.validate().unwrap();
        }
        assert!(StagePlan::standard(4, 1, 1.0).is_err());
        let mut p = StagePlan::standard(3, 1, 1.0).unwrap();
        p.trainable.insert(ParamGroup::Decoder);
        assert!(p.validate().is_err());
    }

    #[test]
    fn total_loss_weights() {
        let s1 = StagePlan::standard(1, 1, 1.0).unwrap();
        assert_eq!(s1.total_loss(0.7, 5.0, 9.0), 0.7);
        let s2 = StagePlan::standard(2, 1, 1.0).unwrap();
        assert_eq!(s2.total_loss(1.0, 2.0, 3.0), 6.0);
    }
}
