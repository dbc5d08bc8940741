use serde::{Deserialize, Serialize};

use crate::bottleneck::ScoreMatrix;
use crate::error::{param, Error, Result};
use crate::synthgen::LaggedAdjacency;

/// Mann-Whitney AUROC with mid-ranks for ties: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return param("auroc: scores and labels differ in length");
    }
    if scores.iter().any(|s| s.is_nan()) {
        return param("auroc: NaN score");
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuroc(format!("{n_pos} positives and {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of positive ranks, ties sharing the average rank (1-based)
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        let pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid * pos as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// How lagged scores and truth are lined up before ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagConvention {
    /// Pick from the two lag depths: collapse truth by any-lag OR for static
    /// scores, max-collapse scores for static truth, flat grid otherwise.
    #[default]
    Auto,
    /// Rank every `(effect, cause, lag)` cell; the shallower side is padded
    /// with zero scores or absent edges.
    Flat,
    /// Compare on `(effect, cause)` pairs: truth by any-lag OR, scores by max
    /// over lags.
    Pairwise,
}

impl LagConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            LagConvention::Auto => "auto",
            LagConvention::Flat => "flat",
            LagConvention::Pairwise => "pairwise",
        }
    }

    /// The concrete convention used for the given lag depths.
    pub fn resolve(self, score_lag: usize, truth_lag: usize) -> LagConvention {
        match self {
            LagConvention::Auto if score_lag == 1 || truth_lag == 1 => LagConvention::Pairwise,
            LagConvention::Auto if truth_lag > score_lag => LagConvention::Pairwise,
            LagConvention::Auto => LagConvention::Flat,
            other => other,
        }
    }
}

impl std::str::FromStr for LagConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LagConvention::Auto),
            "flat" => Ok(LagConvention::Flat),
            "pairwise" => Ok(LagConvention::Pairwise),
            _ => param(format!("unknown lag convention {s:?}")),
        }
    }
}

/// AUROC over off-diagonal cells with the default lag convention.
pub fn auroc_flat_lag(scores: &ScoreMatrix, truth: &LaggedAdjacency) -> Result<f64> {
    auroc_with(scores, truth, LagConvention::Auto)
}

/// Scores and labels of the off-diagonal cells compared under `conv`.
pub fn aligned_cells(scores: &ScoreMatrix, truth: &LaggedAdjacency, conv: LagConvention) -> Result<(Vec<f64>, Vec<bool>)> {
    let k = scores.k();
    if truth.k() != k {
        return param(format!("score matrix has K={k}, truth has K={}", truth.k()));
    }
    let mut s = Vec::new();
    let mut l = Vec::new();
    match conv.resolve(scores.max_lag(), truth.max_lag()) {
        LagConvention::Pairwise => {
            let sc = scores.collapse_max_over_lags();
            let tr = truth.collapse_any_lag();
            for i in 0..k {
                for j in 0..k {
                    if i != j {
                        s.push(sc.get(i, j, 1));
                        l.push(tr.get(i, j, 1));
                    }
                }
            }
        }
        _ => {
            let depth = scores.max_lag().max(truth.max_lag());
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    for tau in 1..=depth {
                        s.push(if tau <= scores.max_lag() { scores.get(i, j, tau) } else { 0.0 });
                        l.push(tau <= truth.max_lag() && truth.get(i, j, tau));
                    }
                }
            }
        }
    }
    Ok((s, l))
}

pub fn auroc_with(scores: &ScoreMatrix, truth: &LaggedAdjacency, conv: LagConvention) -> Result<f64> {
    let (s, l) = aligned_cells(scores, truth, conv)?;
    auroc(&s, &l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, la) in scores.iter().zip(labels) {
            for (b, lb) in scores.iter().zip(labels) {
                if *la && !*lb {
                    den += 1.0;
                    num += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    fn truth3() -> LaggedAdjacency {
        let mut t = LaggedAdjacency::empty(3, 1).unwrap();
        t.set(0, 1, 1, true);
        t
    }

    #[test]
    fn perfect_and_tied() {
        let truth = truth3();
        let s = ScoreMatrix::from_fn(3, 1, |i, j, _| if truth.get(i, j, 1) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(auroc_flat_lag(&s, &truth).unwrap(), 1.0);
        let flat = ScoreMatrix::from_fn(3, 1, |_, _, _| 0.4).unwrap();
        assert_eq!(auroc_flat_lag(&flat, &truth).unwrap(), 0.5);
    }

    #[test]
    fn three_variable_example() {
        // one-based pair (1,2) is cell (0, 1)
        let truth = truth3();
        let vals = [((0, 1), 0.9), ((1, 0), 0.3), ((0, 2), 0.3), ((2, 0), 0.1), ((1, 2), 0.5), ((2, 1), 0.2)];
        let get = |m: &[((usize, usize), f64)], i, j| m.iter().find(|(p, _)| *p == (i, j)).map(|x| x.1).unwrap_or(0.0);
        let s = ScoreMatrix::from_fn(3, 1, |i, j, _| get(&vals, i, j)).unwrap();
        assert_eq!(auroc_flat_lag(&s, &truth).unwrap(), 1.0);
        let swapped = [((0, 1), 0.3), ((1, 0), 0.9), ((0, 2), 0.3), ((2, 0), 0.1), ((1, 2), 0.5), ((2, 1), 0.2)];
        let s = ScoreMatrix::from_fn(3, 1, |i, j, _| get(&swapped, i, j)).unwrap();
        let (sc, lb) = aligned_cells(&s, &truth, LagConvention::Auto).unwrap();
        let a = auroc_flat_lag(&s, &truth).unwrap();
        assert_eq!(a, oracle(&sc, &lb));
        // two negatives above, one tie, two below
        assert_eq!(a, 2.5 / 5.0);
    }

    #[test]
    fn undefined_when_one_class() {
        let truth = LaggedAdjacency::empty(3, 1).unwrap();
        let s = ScoreMatrix::from_fn(3, 1, |_, _, _| 1.0).unwrap();
        assert!(matches!(auroc_flat_lag(&s, &truth), Err(Error::UndefinedAuroc(_))));
    }

    #[test]
    fn conventions() {
        let mut truth = LaggedAdjacency::empty(3, 2).unwrap();
        truth.set(0, 1, 2, true);
        // static scores against lagged truth: the pair counts as positive
        let s = ScoreMatrix::from_fn(3, 1, |i, j, _| if (i, j) == (0, 1) { 1.0 } else { 0.1 }).unwrap();
        assert_eq!(auroc_flat_lag(&s, &truth).unwrap(), 1.0);
        // lagged scores putting mass on the wrong lag lose under flat but not pairwise
        let s2 = ScoreMatrix::from_fn(3, 2, |i, j, tau| if (i, j, tau) == (0, 1, 1) { 1.0 } else { 0.1 }).unwrap();
        assert_eq!(auroc_with(&s2, &truth, LagConvention::Pairwise).unwrap(), 1.0);
        assert!(auroc_with(&s2, &truth, LagConvention::Flat).unwrap() < 0.5);
        assert_eq!(LagConvention::Auto.resolve(2, 2), LagConvention::Flat);
        assert_eq!(LagConvention::Auto.resolve(3, 1), LagConvention::Pairwise);
    }
}
