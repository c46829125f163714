//! Chronological train/validation/test ranges.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::config::SplitRule;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl Split {
    /// Validation and test sizes are rounded shares of `n`; training takes
    /// the rest. With the default 171/40/40 rule and `n = 251` this is the
    /// exact 171/40/40 split.
    pub fn new(n: usize, rule: &SplitRule) -> CliResult<Split> {
        let total = rule.train + rule.valid + rule.test;
        let share = |w: f64| ((n as f64) * w / total).round() as usize;
        let n_valid = share(rule.valid);
        let n_test = share(rule.test);
        if n_valid + n_test >= n {
            return Err(CliError::Data(format!("n = {n} is too short for split {rule:?}")));
        }
        let n_train = n - n_valid - n_test;
        Ok(Split {
            train: 0..n_train,
            valid: n_train..n_train + n_valid,
            test: n_train + n_valid..n,
        })
    }

    pub fn n(&self) -> usize {
        self.test.end
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_rule_on_a_trading_year() {
        let s = Split::new(251, &SplitRule::default()).unwrap();
        assert_eq!((s.train, s.valid, s.test), (0..171, 171..211, 211..251));
    }

    #[test]
    fn too_short() {
        let thirds = SplitRule { train: 1.0, valid: 1.0, test: 1.0 };
        assert!(Split::new(2, &thirds).is_err());
        assert_eq!(Split::new(2, &SplitRule::default()).unwrap().train, 0..2);
    }

    proptest! {
        #[test]
        fn ranges_are_ordered_and_cover(n in 3usize..2000, a in 0.5f64..10.0, b in 0.0f64..5.0, c in 0.0f64..5.0) {
            let rule = SplitRule { train: a, valid: b, test: c };
            if let Ok(s) = Split::new(n, &rule) {
                prop_assert_eq!(s.train.start, 0);
                prop_assert!(!s.train.is_empty());
                prop_assert_eq!(s.train.end, s.valid.start);
                prop_assert_eq!(s.valid.end, s.test.start);
                prop_assert_eq!(s.test.end, n);
            }
        }
    }
}
