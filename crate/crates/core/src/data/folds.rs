//! Unshuffled contiguous k-fold plans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_items: usize,
    pub k: usize,
    pub folds: Vec<Fold>,
}

/// Fold `i` tests on `[i·n/k, (i+1)·n/k)` and trains on the rest, both in
/// file order.
pub fn make_folds(n_items: usize, k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be >= 2, got {k}")));
    }
    if !n_items.is_multiple_of(k) {
        return Err(Error::NotDivisible {
            op: "make_folds",
            detail: format!("{n_items} items cannot be split into {k} equal folds"),
        });
    }
    let size = n_items / k;
    let folds = (0..k)
        .map(|i| {
            let test = (i * size..(i + 1) * size).collect();
            let train = (0..i * size).chain((i + 1) * size..n_items).collect();
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan { n_items, k, folds })
}

impl FoldPlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_by_five() {
        let p = make_folds(100, 5).unwrap();
        assert_eq!(p.folds[0].test, (0..20).collect::<Vec<_>>());
        assert_eq!(p.folds[4].test, (80..100).collect::<Vec<_>>());
        assert!(p.folds.iter().all(|f| f.train.len() == 80 && f.test.len() == 20));
    }

    #[test]
    fn ten_by_five() {
        let p = make_folds(10, 5).unwrap();
        for (i, f) in p.folds.iter().enumerate() {
            assert_eq!(f.test, vec![2 * i, 2 * i + 1]);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(make_folds(10, 3), Err(Error::NotDivisible { .. })));
        assert!(make_folds(10, 1).is_err());
    }

    #[test]
    fn json_export_lists_indices() {
        let json = make_folds(4, 2).unwrap().to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["n_items"], 4);
        assert_eq!(v["folds"][1]["test"], serde_json::json!([2, 3]));
        assert_eq!(v["folds"][1]["train"], serde_json::json!([0, 1]));
    }
}
