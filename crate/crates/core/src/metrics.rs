//! Pearson correlation, MSE and the per-pair error comparison of the two
//! networks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pearson {
    pub r: f64,
    /// One of the inputs had zero variance; `r` is reported as 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson: length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson: need at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Pearson {
            r: 0.0,
            degenerate: true,
        });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Pearson { r, degenerate: false })
}

pub fn mse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mse: lengths {} and {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub gold: f64,
    pub backbone: f64,
    pub gcn: f64,
}

impl PairRecord {
    /// `|f_B - y| - |f_A - y|`; negative when the backbone is closer.
    pub fn error_gap(&self) -> f64 {
        (self.backbone - self.gold).abs() - (self.gcn - self.gold).abs()
    }
}

/// Orders pairs by [`PairRecord::error_gap`] ascending, so backbone-favoured
/// pairs come first. Ties keep id order.
pub fn diagnostic_sort(records: &[PairRecord]) -> Vec<String> {
    let mut order: Vec<&PairRecord> = records.iter().collect();
    order.sort_by(|a, b| a.error_gap().total_cmp(&b.error_gap()).then_with(|| a.id.cmp(&b.id)));
    order.into_iter().map(|r| r.id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub backbone_pearson: Pearson,
    pub backbone_mse: f64,
    pub gcn_pearson: Pearson,
    pub gcn_mse: f64,
    pub per_pair: Vec<PairRecord>,
}

impl EvalReport {
    pub fn new(per_pair: Vec<PairRecord>) -> Result<Self> {
        let gold: Vec<f64> = per_pair.iter().map(|r| r.gold).collect();
        let fb: Vec<f64> = per_pair.iter().map(|r| r.backbone).collect();
        let fa: Vec<f64> = per_pair.iter().map(|r| r.gcn).collect();
        Ok(EvalReport {
            n: per_pair.len(),
            backbone_pearson: pearson(&fb, &gold)?,
            backbone_mse: mse(&fb, &gold)?,
            gcn_pearson: pearson(&fa, &gold)?,
            gcn_mse: mse(&fa, &gold)?,
            per_pair,
        })
    }

    /// `network,pearson,degenerate,mse,n`
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("network,pearson,degenerate,mse,n\n");
        let _ = writeln!(
            s,
            "backbone,{},{},{},{}",
            self.backbone_pearson.r, self.backbone_pearson.degenerate, self.backbone_mse, self.n
        );
        let _ = writeln!(
            s,
            "gcn,{},{},{},{}",
            self.gcn_pearson.r, self.gcn_pearson.degenerate, self.gcn_mse, self.n
        );
        s
    }

    /// Plot data in diagnostic order: `rank  id  gold  backbone  gcn`.
    pub fn diagnostic_tsv(&self) -> String {
        let order = diagnostic_sort(&self.per_pair);
        let mut s = String::from("rank\tid\tgold\tbackbone\tgcn\n");
        for (rank, id) in order.iter().enumerate() {
            let r = self
                .per_pair
                .iter()
                .find(|r| &r.id == id)
                .expect("id from same records");
            let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", rank + 1, r.id, r.gold, r.backbone, r.gcn);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().r - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().r + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().r - 0.8).abs() < 1e-12);
        let flat = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            flat,
            Pearson {
                r: 0.0,
                degenerate: true
            }
        );
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    fn rec(id: &str, gold: f64, backbone: f64, gcn: f64) -> PairRecord {
        PairRecord {
            id: id.into(),
            gold,
            backbone,
            gcn,
        }
    }

    #[test]
    fn diagnostic_order() {
        let recs = vec![
            rec("c", 3.0, 1.0, 3.0), // gcn exact
            rec("a", 2.0, 3.0, 3.0), // tie
            rec("b", 2.0, 3.0, 3.0), // tie
            rec("d", 4.0, 4.0, 2.0), // backbone exact
        ];
        assert_eq!(diagnostic_sort(&recs), ["d", "a", "b", "c"]);
    }

    #[test]
    fn report_files() {
        let r = EvalReport::new(vec![rec("a", 1.0, 1.0, 2.0), rec("b", 3.0, 2.0, 3.0)]).unwrap();
        assert_eq!(r.backbone_mse, 0.5);
        assert!(r.summary_csv().starts_with("network,pearson"));
        assert_eq!(r.diagnostic_tsv().lines().count(), 3);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn affine_invariance(xs in prop::collection::vec(-10.0..10.0f64, 3..30), a in 0.1..5.0f64, b in -5.0..5.0f64, seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * 0.5 + ((i as u64 * 7919 + seed) % 13) as f64).collect();
            let r = pearson(&xs, &ys).unwrap();
            prop_assume!(!r.degenerate);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let flipped: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
            prop_assert!((pearson(&scaled, &ys).unwrap().r - r.r).abs() < 1e-9);
            prop_assert!((pearson(&flipped, &ys).unwrap().r + r.r).abs() < 1e-9);
        }

        #[test]
        fn sort_is_permutation(gaps in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64, 0.0..5.0f64), 0..20)) {
            let recs: Vec<PairRecord> = gaps.iter().enumerate().map(|(i, &(g, b, a))| rec(&format!("p{i:02}"), g, b, a)).collect();
            let mut ids = diagnostic_sort(&recs);
            ids.sort();
            let mut expected: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
        }
    }
}
