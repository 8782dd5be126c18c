use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State the surviving weights return to after each pruning step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rewinding {
    /// Parameters at initialization.
    Initial,
    /// Parameters after the warm-up epochs of the first cycle.
    Warm,
    /// Best-validation parameters of the cycle just finished.
    Best,
    /// Keep training from where the cycle ended.
    No,
}

/// Value given to a weight when it is reintroduced during growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// Its value at initialization.
    Original,
    /// A fresh draw from its initialization distribution.
    Random,
    /// Its value at the end of the cycle that pruned it.
    Old,
    /// Its value in the best state of the cycle that pruned it.
    Top,
}

/// Per-weight update scaling during growth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// Only weights introduced in the current step move.
    Freezing,
    /// Plain SGD for every weight.
    Identical,
    /// Weights introduced at step `k` are scaled by `f^k`.
    Dynamic,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn keyword(self) -> &'static str {
                match self { $($ty::$variant => $kw),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.keyword())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($kw => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Rewinding { Initial => "initial", Warm => "warm", Best => "best", No => "no" });
keyword_enum!(Initialization { Original => "original", Random => "random", Old => "old", Top => "top" });
keyword_enum!(UpdateScheme { Freezing => "freezing", Identical => "identical", Dynamic => "dynamic" });

/// One `(rewinding, initialization, update)` combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub rewinding: Rewinding,
    pub initialization: Initialization,
    pub update: UpdateScheme,
}

impl Strategy {
    /// Best rewinding, random reinitialization, identical updates.
    pub const HIGHLIGHTED: Strategy = Strategy {
        rewinding: Rewinding::Best,
        initialization: Initialization::Random,
        update: UpdateScheme::Identical,
    };

    /// Every combination of the three scheme families.
    pub fn all() -> Vec<Strategy> {
        let mut out = Vec::new();
        for &rewinding in Rewinding::ALL {
            for &initialization in Initialization::ALL {
                for &update in UpdateScheme::ALL {
                    out.push(Strategy {
                        rewinding,
                        initialization,
                        update,
                    });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.rewinding, self.initialization, self.update)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.rewinding, self.initialization, self.update)
    }
}

/// Parses `R:I:U`, e.g. `best:random:identical`.
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let [r, i, u] = parts.as_slice() else {
            return Err(Error::Config(format!(
                "strategy `{s}` must look like rewinding:initialization:update"
            )));
        };
        Ok(Strategy {
            rewinding: r.parse()?,
            initialization: i.parse()?,
            update: u.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Pruning cycles.
    pub n: usize,
    /// Growth steps.
    pub m: usize,
    pub epochs_per_cycle: usize,
    /// Optional per-cycle epoch counts, `n + m` entries, overriding
    /// `epochs_per_cycle`.
    pub epoch_schedule: Option<Vec<usize>>,
    pub prune_fraction: f64,
    pub rewinding: Rewinding,
    pub initialization: Initialization,
    pub update: UpdateScheme,
    pub dynamic_factor: f64,
    pub warmup_epochs: usize,
    /// Append a final growth step that reactivates every weight.
    pub restore_full_capacity: bool,
    pub early_stop_within_cycle: bool,
    pub patience: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            n: 4,
            m: 4,
            epochs_per_cycle: 5,
            epoch_schedule: None,
            prune_fraction: 0.2,
            rewinding: Rewinding::Best,
            initialization: Initialization::Random,
            update: UpdateScheme::Identical,
            dynamic_factor: 0.5,
            warmup_epochs: 3,
            restore_full_capacity: false,
            early_stop_within_cycle: false,
            patience: 3,
        }
    }
}

impl CurriculumConfig {
    pub fn strategy(&self) -> Strategy {
        Strategy {
            rewinding: self.rewinding,
            initialization: self.initialization,
            update: self.update,
        }
    }

    pub fn with_strategy(mut self, s: Strategy) -> Self {
        self.rewinding = s.rewinding;
        self.initialization = s.initialization;
        self.update = s.update;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must both be at least 1".into()));
        }
        let max_m = self.n + usize::from(self.restore_full_capacity);
        if self.m > max_m {
            return Err(Error::Config(format!(
                "m = {} exceeds the {max_m} available growth targets",
                self.m
            )));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction < 1.0) {
            return Err(Error::Config(format!(
                "prune_fraction {} outside (0, 1)",
                self.prune_fraction
            )));
        }
        if !(self.dynamic_factor >= 0.0) || !self.dynamic_factor.is_finite() {
            return Err(Error::Config(format!(
                "dynamic_factor {} must be a finite non-negative number",
                self.dynamic_factor
            )));
        }
        if let Some(schedule) = &self.epoch_schedule {
            if schedule.len() != self.n + self.m {
                return Err(Error::Config(format!(
                    "epoch_schedule has {} entries, expected n + m = {}",
                    schedule.len(),
                    self.n + self.m
                )));
            }
        }
        Ok(())
    }

    /// Epochs of cycle `i` (1-based over all `n + m` cycles).
    pub fn epochs(&self, i: usize) -> usize {
        self.epoch_schedule
            .as_ref()
            .and_then(|s| s.get(i - 1).copied())
            .unwrap_or(self.epochs_per_cycle)
    }

    /// Within-cycle early stopping patience for a pruning or growth cycle.
    /// Runs without rewinding always use their full epoch budget.
    pub fn cycle_patience(&self, pruning: bool) -> Option<usize> {
        let fixed_budget = pruning && self.rewinding == Rewinding::No;
        (self.early_stop_within_cycle && !fixed_budget).then_some(self.patience)
    }
}
