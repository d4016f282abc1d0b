//! Attention-guided pruning: keep the `ceil(M * p)` most salient patches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PatchMatrix;

/// Which side of the interaction is pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PruneSide {
    #[default]
    Query,
    Doc,
    Both,
}

impl PruneSide {
    pub fn prunes_query(self) -> bool {
        matches!(self, PruneSide::Query | PruneSide::Both)
    }

    pub fn prunes_docs(self) -> bool {
        matches!(self, PruneSide::Doc | PruneSide::Both)
    }
}

impl std::str::FromStr for PruneSide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" | "query-only" => Ok(PruneSide::Query),
            "doc" | "doc-only" => Ok(PruneSide::Doc),
            "both" => Ok(PruneSide::Both),
            other => Err(Error::InvalidConfig(format!("unknown prune side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    p: f64,
    pub side: PruneSide,
}

impl PruneConfig {
    /// `p` is the retained fraction and must lie in `(0, 1]`.
    pub fn new(p: f64, side: PruneSide) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "retention fraction must be in (0, 1], got {p}"
            )));
        }
        Ok(Self { p, side })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            p: 1.0,
            side: PruneSide::Query,
        }
    }
}

/// `ceil(m * p)` clamped to `[1, m]`.
pub fn compute_budget(m: usize, p: f64) -> usize {
    // Decimal fractions such as 0.7 are not exact in binary; without the
    // slack 10 * 0.7 would round up to 8.
    let raw = (m as f64 * p - 1e-9).ceil();
    (raw.max(1.0) as usize).min(m.max(1))
}

/// Indices of the retained patches, in original order.
pub fn retained_indices(attention: &[f32], p: f64) -> Vec<usize> {
    let budget = compute_budget(attention.len(), p);
    let mut order: Vec<usize> = (0..attention.len()).collect();
    order.sort_by(|&a, &b| attention[b].total_cmp(&attention[a]).then(a.cmp(&b)));
    order.truncate(budget);
    order.sort_unstable();
    order
}

pub fn prune(pm: &PatchMatrix, p: f64) -> PatchMatrix {
    if p >= 1.0 {
        return pm.clone();
    }
    pm.select_rows(&retained_indices(pm.attention(), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(attention: Vec<f32>) -> PatchMatrix {
        let data: Vec<f32> = (0..attention.len()).map(|i| i as f32).collect();
        PatchMatrix::new(1, 1, data, attention).unwrap()
    }

    #[test]
    fn budget_examples() {
        assert_eq!(compute_budget(50, 0.4), 20);
        assert_eq!(compute_budget(50, 0.6), 30);
        assert_eq!(compute_budget(1, 0.01), 1);
        assert_eq!(compute_budget(7, 0.8), 6);
        assert_eq!(compute_budget(10, 0.45), 5);
        assert_eq!(compute_budget(10, 0.7), 7);
        assert_eq!(compute_budget(3, 1.0), 3);
    }

    #[test]
    fn p_must_be_in_unit_interval() {
        assert!(PruneConfig::new(0.0, PruneSide::Query).is_err());
        assert!(PruneConfig::new(1.5, PruneSide::Query).is_err());
        assert!(PruneConfig::new(f64::NAN, PruneSide::Query).is_err());
        assert!(PruneConfig::new(1.0, PruneSide::Query).is_ok());
    }

    #[test]
    fn keeps_most_salient_in_original_order() {
        let pm = matrix(vec![0.1, 0.9, 0.3, 0.8, 0.2]);
        let pruned = prune(&pm, 0.4);
        assert_eq!(pruned.data(), &[1.0, 3.0]);
        assert_eq!(pruned.attention(), &[0.9, 0.8]);
    }

    #[test]
    fn ties_prefer_earlier_patches() {
        assert_eq!(retained_indices(&[0.5, 0.5, 0.5, 0.5], 0.5), vec![0, 1]);
    }

    #[test]
    fn fifty_patches_at_sixty_percent() {
        let att: Vec<f32> = (0..50).map(|i| ((i * 37) % 50) as f32).collect();
        assert_eq!(prune(&matrix(att), 0.6).num_patches(), 30);
    }

    #[test]
    fn full_retention_is_identity() {
        let pm = matrix(vec![0.3, 0.1, 0.2]);
        assert_eq!(prune(&pm, 1.0), pm);
    }

    proptest! {
        #[test]
        fn retained_dominate_discarded(
            att in prop::collection::vec(0u8..6, 1..80),
            p1 in 0.01f64..=1.0,
            p2 in 0.01f64..=1.0,
        ) {
            let att: Vec<f32> = att.into_iter().map(f32::from).collect();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let kept = retained_indices(&att, lo);
            prop_assert_eq!(kept.len(), compute_budget(att.len(), lo));
            let discarded: Vec<usize> = (0..att.len()).filter(|i| !kept.contains(i)).collect();
            let min_kept = kept.iter().map(|&i| att[i]).fold(f32::INFINITY, f32::min);
            let max_dropped = discarded.iter().map(|&i| att[i]).fold(f32::NEG_INFINITY, f32::max);
            prop_assert!(min_kept >= max_dropped);
            // equal weights: kept ones come first by index
            for &d in &discarded {
                for &k in &kept {
                    if att[k] == att[d] {
                        prop_assert!(k < d);
                    }
                }
            }
            let wider = retained_indices(&att, hi);
            prop_assert!(kept.iter().all(|i| wider.contains(i)));
        }
    }
}
