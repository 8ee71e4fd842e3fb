use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    pub fn is_subject_disjoint(&self) -> bool {
        self.splits
            .iter()
            .all(|s| s.train.iter().all(|t| !s.test.contains(t)))
    }
}

/// Draws `n_splits` independent train/test partitions of `subjects`.
///
/// Subjects are sorted and deduplicated first. Each split takes `n_test`
/// distinct subjects with a partial Fisher-Yates pass (position `i` swaps
/// with `i + below(len - i)`) over a fresh copy of the sorted list, drawing
/// from one [`Stream`] seeded with `seed`. Splits do not constrain each
/// other, so a subject may be tested in several splits.
pub fn make_splits(subjects: &[String], n_splits: usize, n_test: usize, seed: u64) -> Result<SplitPlan> {
    let mut pool: Vec<String> = subjects.to_vec();
    pool.sort();
    pool.dedup();
    if pool.len() <= n_test || n_test == 0 {
        return Err(Error::config(format!(
            "need more than {n_test} subjects (and n_test > 0), got {}",
            pool.len()
        )));
    }
    let mut rng = Stream::new(seed);
    let splits = (0..n_splits)
        .map(|_| {
            let mut order = pool.clone();
            for i in 0..n_test {
                let j = i + rng.below(order.len() - i);
                order.swap(i, j);
            }
            let mut test = order[..n_test].to_vec();
            let mut train = order[n_test..].to_vec();
            test.sort();
            train.sort();
            Split { train, test }
        })
        .collect();
    Ok(SplitPlan { seed, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{i:02}")).collect()
    }

    #[test]
    fn seventeen_subjects_give_fourteen_three() {
        let plan = make_splits(&subjects(17), 10, 3, 1).unwrap();
        assert_eq!(plan.splits.len(), 10);
        for s in &plan.splits {
            assert_eq!((s.train.len(), s.test.len()), (14, 3));
        }
        assert!(plan.is_subject_disjoint());
    }

    #[test]
    fn single_split_of_four() {
        let plan = make_splits(&subjects(4), 1, 3, 9).unwrap();
        let s = &plan.splits[0];
        assert_eq!(s.train.len(), 1);
        assert!(!s.test.contains(&s.train[0]));
    }

    #[test]
    fn too_few_subjects() {
        assert!(matches!(make_splits(&subjects(3), 1, 3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn seeds_reproduce_and_vary() {
        let subj = subjects(17);
        let base = make_splits(&subj, 10, 3, 0).unwrap();
        assert_eq!(base, make_splits(&subj, 10, 3, 0).unwrap());
        for seed in 1..=100 {
            assert_ne!(base.splits, make_splits(&subj, 10, 3, seed).unwrap().splits);
        }
    }
}
