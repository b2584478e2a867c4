use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::LabeledSet;
use crate::rng::RngStream;

/// Cap on the semi-supervised anomaly budget.
pub const SEMI_BUDGET_CAP: usize = 5000;
/// Default semi-supervised budget as a share of available anomalies; the
/// validation set must mirror the training set, so this stays below one half.
pub const SEMI_BUDGET_SHARE: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    Shots(usize),
    Semi { budget: Option<usize> },
}

impl Setting {
    /// Number of training anomalies given `available` labeled anomalies.
    pub fn anomaly_count(&self, available: usize) -> usize {
        match *self {
            Setting::Shots(k) => k,
            Setting::Semi { budget: Some(b) } => b,
            Setting::Semi { budget: None } => {
                SEMI_BUDGET_CAP.min((available as f64 * SEMI_BUDGET_SHARE).floor() as usize)
            }
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Shots(k) => write!(f, "{k}-shot"),
            Setting::Semi { budget: None } => f.write_str("semi"),
            Setting::Semi { budget: Some(b) } => write!(f, "semi:{b}"),
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown setting {s:?} (expected e.g. 10-shot or semi[:N])"));
        if let Some(k) = s.strip_suffix("-shot") {
            let k = k.parse().map_err(|_| bad())?;
            return if k == 0 { Err(bad()) } else { Ok(Setting::Shots(k)) };
        }
        if s == "semi" {
            return Ok(Setting::Semi { budget: None });
        }
        if let Some(b) = s.strip_prefix("semi:") {
            return Ok(Setting::Semi {
                budget: Some(b.parse().map_err(|_| bad())?),
            });
        }
        Err(bad())
    }
}

/// One train / validation / test partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_pos: Vec<usize>,
    pub train_neg: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub setting: Setting,
    pub seed: u64,
}

impl SplitSpec {
    pub fn train(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.train_pos.iter().chain(&self.train_neg).copied().collect();
        t.sort_unstable();
        t
    }

    pub fn train_set(&self, labels: &[u8]) -> Result<LabeledSet> {
        LabeledSet::from_nodes(&self.train(), labels)
    }

    pub fn valid_set(&self, labels: &[u8]) -> Result<LabeledSet> {
        LabeledSet::from_nodes(&self.valid, labels)
    }
}

/// Samples a split whose training anomaly rate matches the overall rate:
/// `shots` anomalies plus `round(shots·(1−r)/r)` normals, a validation set of
/// the same composition, and everything else as test.
pub fn make_split(labels: &[u8], setting: Setting, seed: u64) -> Result<SplitSpec> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] == 1);
    if pos.is_empty() {
        return Err(Error::InsufficientLabels("anomaly rate is zero".into()));
    }
    let rate = pos.len() as f64 / labels.len() as f64;
    let k = setting.anomaly_count(pos.len());
    if k == 0 || 2 * k > pos.len() {
        return Err(Error::InsufficientLabels(format!(
            "{setting} needs {} anomalies for train+valid, graph has {}",
            2 * k.max(1),
            pos.len()
        )));
    }
    let n_neg = (k as f64 * (1.0 - rate) / rate).round() as usize;
    if 2 * n_neg > neg.len() {
        return Err(Error::InsufficientLabels(format!(
            "{setting} needs {} normal nodes for train+valid, graph has {}",
            2 * n_neg,
            neg.len()
        )));
    }
    let mut rng = RngStream::derive(seed, 0x5_9117);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    let train_pos = sorted(pos[..k].to_vec());
    let train_neg = sorted(neg[..n_neg].to_vec());
    let valid = sorted(pos[k..2 * k].iter().chain(&neg[n_neg..2 * n_neg]).copied().collect());
    let test = sorted(pos[2 * k..].iter().chain(&neg[2 * n_neg..]).copied().collect());
    Ok(SplitSpec {
        train_pos,
        train_neg,
        valid,
        test,
        setting,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize, anomalies: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < anomalies)).collect()
    }

    #[test]
    fn rate_matched_negatives() {
        let s = make_split(&labels(1000, 100), Setting::Shots(10), 1).unwrap();
        assert_eq!(s.train_pos.len(), 10);
        assert_eq!(s.train_neg.len(), 90);
        assert_eq!(s.valid.len(), 100);
        let s = make_split(&labels(100, 50), Setting::Shots(10), 1).unwrap();
        assert_eq!(s.train_neg.len(), 10);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            make_split(&labels(50, 0), Setting::Shots(1), 0),
            Err(Error::InsufficientLabels(_))
        ));
        assert!(make_split(&labels(500, 15), Setting::Shots(10), 0).is_err());
    }

    #[test]
    fn semi_default_budget() {
        let s = make_split(&labels(1000, 100), Setting::Semi { budget: None }, 3).unwrap();
        assert_eq!(s.train_pos.len(), 40);
        let s = make_split(&labels(1000, 100), Setting::Semi { budget: Some(25) }, 3).unwrap();
        assert_eq!(s.train_pos.len(), 25);
    }

    #[test]
    fn setting_strings() {
        for s in ["10-shot", "20-shot", "semi", "semi:100"] {
            assert_eq!(s.parse::<Setting>().unwrap().to_string(), s);
        }
        assert!("0-shot".parse::<Setting>().is_err());
        assert!("few".parse::<Setting>().is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_disjoint_and_exact(anoms in 20usize..80, extra in 0usize..400, shots in 1usize..10, seed in any::<u64>()) {
            let l = labels(anoms + extra + 50, anoms);
            let s = make_split(&l, Setting::Shots(shots), seed).unwrap();
            prop_assert_eq!(s.train_pos.len(), shots);
            prop_assert!(s.train_pos.iter().all(|&i| l[i] == 1));
            prop_assert!(s.train_neg.iter().all(|&i| l[i] == 0));
            let mut all: Vec<usize> = s.train().into_iter().chain(s.valid.iter().copied()).chain(s.test.iter().copied()).collect();
            let total = all.len();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), total);
            prop_assert_eq!(total, l.len());
            prop_assert_eq!(s.valid.len(), s.train().len());
            prop_assert_eq!(make_split(&l, Setting::Shots(shots), seed).unwrap(), s);
        }
    }
}
