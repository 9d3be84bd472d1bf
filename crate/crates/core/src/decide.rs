//! Discoveries from lfdr's or p-values, and scoring against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GroundTruth;

/// How the lfdr's of a candidate rejection set are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BfdrRule {
    /// Running average of the sorted lfdr's (the Bayesian FDR of the set).
    #[default]
    Mean,
    /// Running sum, a much stricter criterion.
    Sum,
}

impl BfdrRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Some(BfdrRule::Mean),
            "sum" => Some(BfdrRule::Sum),
            _ => None,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Ascending order, ties broken by index.
fn ascending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

/// Largest prefix of the sorted lfdr's whose running mean (or sum) stays within `alpha`.
///
/// Returned indices are sorted.
pub fn bfdr_select(lfdrs: &[f64], alpha: f64, rule: BfdrRule) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    if let Some(x) = lfdrs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::invalid(format!("lfdr {x} outside [0, 1]")));
    }
    let order = ascending(lfdrs);
    let mut sum = 0.0;
    let mut take = 0;
    for (j, &i) in order.iter().enumerate() {
        sum += lfdrs[i];
        let stat = match rule {
            BfdrRule::Mean => sum / (j + 1) as f64,
            BfdrRule::Sum => sum,
        };
        if stat <= alpha {
            take = j + 1;
        }
    }
    let mut out = order[..take].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Benjamini–Hochberg step-up procedure. Returned indices are sorted.
pub fn bh_procedure(pvals: &[f64], alpha: f64) -> Result<Vec<usize>> {
    check_alpha(alpha)?;
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvals.len() as f64;
    let order = ascending(pvals);
    let k = order
        .iter()
        .enumerate()
        .rev()
        .find(|(j, &i)| pvals[i] <= (j + 1) as f64 * alpha / m)
        .map_or(0, |(j, _)| j + 1);
    let mut out = order[..k].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// False discovery proportion and power of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub fdp: f64,
    pub power: f64,
    pub true_discoveries: usize,
    pub false_discoveries: usize,
}

pub fn score(discovered: &[usize], truth: &GroundTruth) -> Result<Score> {
    if let Some(&i) = discovered.iter().find(|&&i| i >= truth.len()) {
        return Err(Error::invalid(format!(
            "discovery index {i} outside the grid"
        )));
    }
    let true_disc = discovered
        .iter()
        .filter(|&&i| truth.is_alternative(i))
        .count();
    let false_disc = discovered.len() - true_disc;
    Ok(Score {
        fdp: false_disc as f64 / discovered.len().max(1) as f64,
        power: true_disc as f64 / truth.n_alternative().max(1) as f64,
        true_discoveries: true_disc,
        false_discoveries: false_disc,
    })
}

/// Discoveries at one level, with their realized BFDR and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub discovered: Vec<usize>,
    pub nominal_alpha: f64,
    pub realized_bfdr: f64,
    pub score: Option<Score>,
}

impl DecisionReport {
    pub fn from_lfdrs(
        lfdrs: &[f64],
        alpha: f64,
        rule: BfdrRule,
        truth: Option<&GroundTruth>,
    ) -> Result<Self> {
        let discovered = bfdr_select(lfdrs, alpha, rule)?;
        let realized_bfdr = if discovered.is_empty() {
            0.0
        } else {
            discovered.iter().map(|&i| lfdrs[i]).sum::<f64>() / discovered.len() as f64
        };
        let score = truth.map(|t| score(&discovered, t)).transpose()?;
        Ok(DecisionReport {
            discovered,
            nominal_alpha: alpha,
            realized_bfdr,
            score,
        })
    }
}
