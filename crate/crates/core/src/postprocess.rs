//! Attribution-guided reclassification of non-Trojan predictions.
//!
//! A node predicted non-Trojan moves to the Trojan set when its top-n
//! attribution sum is at least `N` times the summed non-Trojan rank profile
//! (C1), or when the distance between its sum and the summed Trojan rank
//! profile passes the threshold `T_h` (C2). One pass, one direction.

use serde::{Deserialize, Serialize};

use crate::explain::{rank_average, TopNTable};

pub const DEFAULT_MULTIPLIER: f64 = 2.0;
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum C2Mode {
    /// `|sum − ΣK| ≥ T_h`.
    #[default]
    AtLeast,
    /// `|sum − ΣK| ≤ T_h`.
    AtMost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcessConfig {
    pub multiplier: f64,
    pub threshold: f64,
    pub top_n: usize,
    pub c2_mode: C2Mode,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig {
            multiplier: DEFAULT_MULTIPLIER,
            threshold: DEFAULT_THRESHOLD,
            top_n: crate::explain::DEFAULT_TOP_N,
            c2_mode: C2Mode::AtLeast,
        }
    }
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum PostProcessError {
    #[error("F_0 has {rows} rows for {nodes} non-Trojan predictions")]
    AlignmentError { rows: usize, nodes: usize },
    #[error("invalid post-processing config: {0}")]
    InvalidConfig(String),
}

impl PostProcessConfig {
    pub fn validate(&self) -> Result<(), PostProcessError> {
        if !(self.multiplier > 0.0) {
            return Err(PostProcessError::InvalidConfig(format!("multiplier {} must be positive", self.multiplier)));
        }
        if !(self.threshold >= 0.0) {
            return Err(PostProcessError::InvalidConfig(format!("threshold {} must be non-negative", self.threshold)));
        }
        if self.top_n == 0 {
            return Err(PostProcessError::InvalidConfig("top-n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Rank-averaged class profiles, frozen before any switching.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Profiles {
    pub non_trojan: Option<Vec<f64>>,
    pub trojan: Option<Vec<f64>>,
}

impl Profiles {
    pub fn from_tables(f0: &TopNTable, f1: &TopNTable) -> Self {
        Profiles { non_trojan: rank_average(f0).ok(), trojan: rank_average(f1).ok() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEntry {
    pub node: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wire: Option<String>,
    pub row_sum: f64,
    pub c1: bool,
    /// `None` when there is no Trojan profile to compare against.
    pub c2: Option<bool>,
    pub trigger: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reclassified {
    pub non_trojan: Vec<usize>,
    pub trojan: Vec<usize>,
    pub switched: Vec<SwitchEntry>,
    pub non_trojan_profile_sum: Option<f64>,
    pub trojan_profile_sum: Option<f64>,
}

pub fn reclassify(
    p0: &[usize],
    p1: &[usize],
    f0: &TopNTable,
    profiles: &Profiles,
    cfg: &PostProcessConfig,
) -> Result<Reclassified, PostProcessError> {
    cfg.validate()?;
    if f0.len() != p0.len() || f0.rows.iter().zip(p0).any(|(r, &n)| r.node != n) {
        return Err(PostProcessError::AlignmentError { rows: f0.len(), nodes: p0.len() });
    }
    let v_sum = profiles.non_trojan.as_ref().map(|v| v.iter().sum::<f64>());
    let k_sum = profiles.trojan.as_ref().map(|k| k.iter().sum::<f64>());
    let mut non_trojan = Vec::with_capacity(p0.len());
    let mut trojan = p1.to_vec();
    let mut switched = Vec::new();
    for row in &f0.rows {
        let s = row.sum();
        let c1 = v_sum.is_some_and(|v| s >= cfg.multiplier * v);
        let c2 = k_sum.map(|k| {
            let d = (s - k).abs();
            match cfg.c2_mode {
                C2Mode::AtLeast => d >= cfg.threshold,
                C2Mode::AtMost => d <= cfg.threshold,
            }
        });
        let c2_hit = c2 == Some(true);
        if c1 || c2_hit {
            trojan.push(row.node);
            let trigger = match (c1, c2_hit) {
                (true, true) => "C1+C2",
                (true, false) => "C1",
                _ => "C2",
            };
            switched.push(SwitchEntry { node: row.node, wire: None, row_sum: s, c1, c2, trigger: trigger.into() });
        } else {
            non_trojan.push(row.node);
        }
    }
    trojan.sort_unstable();
    Ok(Reclassified { non_trojan, trojan, switched, non_trojan_profile_sum: v_sum, trojan_profile_sum: k_sum })
}

/// `{"switched": [...]}` in `P_0` order.
pub fn postprocess_report(log: &[SwitchEntry]) -> serde_json::Value {
    serde_json::json!({ "switched": log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::TopNRow;

    fn table(rows: &[(usize, &[f64])]) -> TopNTable {
        TopNTable {
            n: rows.first().map_or(2, |r| r.1.len()),
            rows: rows
                .iter()
                .map(|(node, s)| TopNRow { node: *node, scores: s.to_vec(), features: (0..s.len()).map(Some).collect() })
                .collect(),
        }
    }

    #[test]
    fn no_switch_when_thresholds_unmet() {
        let f0 = table(&[(0, &[0.3, 0.2]), (2, &[0.25, 0.25])]);
        let f1 = table(&[(1, &[0.3, 0.25])]);
        let profiles = Profiles::from_tables(&f0, &f1);
        let r = reclassify(&[0, 2], &[1], &f0, &profiles, &PostProcessConfig::default()).unwrap();
        assert!(r.switched.is_empty());
        assert_eq!(r.non_trojan, vec![0, 2]);
        assert_eq!(r.trojan, vec![1]);
        assert_eq!(postprocess_report(&r.switched).to_string(), r#"{"switched":[]}"#);
    }

    #[test]
    fn c1_switch_by_hand() {
        // V = [(0.1+0.1+0.7)/3, (0.0+0.1+0.2)/3] → ΣV = 0.4; node 7 sums 0.9 = 2.25·ΣV
        let f0 = table(&[(3, &[0.1, 0.0]), (5, &[0.1, 0.1]), (7, &[0.7, 0.2])]);
        let profiles = Profiles::from_tables(&f0, &TopNTable::new(2));
        let cfg = PostProcessConfig { multiplier: 2.0, ..PostProcessConfig::default() };
        let r = reclassify(&[3, 5, 7], &[], &f0, &profiles, &cfg).unwrap();
        assert_eq!(r.trojan, vec![7]);
        assert_eq!(r.non_trojan, vec![3, 5]);
        assert_eq!(r.switched.len(), 1);
        let e = &r.switched[0];
        assert!(e.c1 && e.c2.is_none() && e.trigger == "C1");
        let json = postprocess_report(&r.switched);
        assert_eq!(json["switched"][0]["node"], 7);
        assert_eq!(json["switched"][0]["c1"], true);
    }

    #[test]
    fn c2_literal_and_flipped() {
        let f0 = table(&[(0, &[0.1, 0.0]), (1, &[0.45, 0.0]), (2, &[0.1, 0.05])]);
        let f1 = table(&[(3, &[0.3, 0.2])]);
        let profiles = Profiles::from_tables(&f0, &f1);
        let cfg = PostProcessConfig { multiplier: 100.0, ..PostProcessConfig::default() };
        let r = reclassify(&[0, 1, 2], &[3], &f0, &profiles, &cfg).unwrap();
        // ΣK = 0.5: distances 0.4, 0.05, 0.35
        assert_eq!(r.trojan, vec![0, 2, 3]);
        assert_eq!(r.switched.iter().map(|e| e.node).collect::<Vec<_>>(), vec![0, 2]);
        let flipped = PostProcessConfig { c2_mode: C2Mode::AtMost, ..cfg };
        let r = reclassify(&[0, 1, 2], &[3], &f0, &profiles, &flipped).unwrap();
        assert_eq!(r.trojan, vec![1, 3]);
    }

    #[test]
    fn misaligned_and_empty_inputs() {
        let f0 = table(&[(0, &[0.1, 0.0])]);
        let profiles = Profiles::from_tables(&f0, &TopNTable::new(2));
        let cfg = PostProcessConfig::default();
        assert_eq!(
            reclassify(&[0, 1], &[], &f0, &profiles, &cfg),
            Err(PostProcessError::AlignmentError { rows: 1, nodes: 2 })
        );
        assert!(reclassify(&[4], &[], &f0, &profiles, &cfg).is_err());
        let empty = Profiles::from_tables(&TopNTable::new(2), &TopNTable::new(2));
        let r = reclassify(&[], &[1, 2], &TopNTable::new(2), &empty, &cfg).unwrap();
        assert_eq!(r.trojan, vec![1, 2]);
        assert!(r.switched.is_empty());
    }

    #[test]
    fn config_validation() {
        let bad = PostProcessConfig { multiplier: 0.0, ..PostProcessConfig::default() };
        assert!(matches!(bad.validate(), Err(PostProcessError::InvalidConfig(_))));
        let bad = PostProcessConfig { threshold: -1.0, ..PostProcessConfig::default() };
        assert!(bad.validate().is_err());
        let bad = PostProcessConfig { top_n: 0, ..PostProcessConfig::default() };
        assert!(bad.validate().is_err());
    }
}
