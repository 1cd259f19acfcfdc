use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of queries whose gold is within the first `k` entries of its
/// ranked list. A gold missing from the list is a miss.
pub fn hits_at_k<T: PartialEq>(ranked: &[Vec<T>], golds: &[T], k: usize) -> Result<f64> {
    if ranked.is_empty() {
        return Err(Error::Contract("hits@k over an empty query set".into()));
    }
    if ranked.len() != golds.len() {
        return Err(Error::shape(format!("{} ranked lists for {} golds", ranked.len(), golds.len())));
    }
    if k == 0 {
        return Err(Error::Contract("hits@k needs k >= 1".into()));
    }
    let hits = ranked
        .iter()
        .zip(golds)
        .filter(|(list, g)| list.iter().take(k).any(|x| x == *g))
        .count();
    Ok(hits as f64 / ranked.len() as f64)
}

/// Hits from 1-based gold ranks (`None` = not retrieved).
pub fn hits_from_ranks(ranks: &[Option<usize>], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / ranks.len() as f64
}

/// Hits@1/3/10 as fractions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Hits {
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl Hits {
    pub fn from_ranks(ranks: &[Option<usize>]) -> Self {
        Hits {
            hits1: hits_from_ranks(ranks, 1),
            hits3: hits_from_ranks(ranks, 3),
            hits10: hits_from_ranks(ranks, 10),
        }
    }

    /// Unweighted mean.
    pub fn mean(items: &[Hits]) -> Self {
        if items.is_empty() {
            return Hits::default();
        }
        let n = items.len() as f64;
        Hits {
            hits1: items.iter().map(|h| h.hits1).sum::<f64>() / n,
            hits3: items.iter().map(|h| h.hits3).sum::<f64>() / n,
            hits10: items.iter().map(|h| h.hits10).sum::<f64>() / n,
        }
    }

    /// As percentages rounded to two decimals.
    pub fn percent(&self) -> Self {
        let p = |x: f64| (x * 10000.0).round() / 100.0;
        Hits {
            hits1: p(self.hits1),
            hits3: p(self.hits3),
            hits10: p(self.hits10),
        }
    }
}

/// Queries grouped by gold answer length (in tokens).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub length: usize,
    pub count: usize,
    /// Percentages.
    pub hits: Hits,
    /// Fewer than `threshold` queries: left out of the headline report.
    pub excluded: bool,
}

/// Buckets queries by gold answer length. `gold_lengths[i]` is the token
/// length of query i's gold and `ranks[i]` its 1-based rank.
pub fn length_report(ranks: &[Option<usize>], gold_lengths: &[usize], threshold: usize) -> Result<Vec<LengthBucket>> {
    if ranks.len() != gold_lengths.len() {
        return Err(Error::shape("length_report: ranks and lengths differ"));
    }
    let mut groups: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    for (r, &l) in ranks.iter().zip(gold_lengths) {
        groups.entry(l).or_default().push(*r);
    }
    Ok(groups
        .into_iter()
        .map(|(length, rs)| LengthBucket {
            length,
            count: rs.len(),
            hits: Hits::from_ranks(&rs).percent(),
            excluded: rs.len() < threshold,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_place_gold() {
        let ranked = vec![vec![5, 7, 9]];
        assert_eq!(hits_at_k(&ranked, &[7], 1).unwrap(), 0.0);
        assert_eq!(hits_at_k(&ranked, &[7], 3).unwrap(), 1.0);
        assert_eq!(hits_at_k(&ranked, &[7], 10).unwrap(), 1.0);
        assert_eq!(hits_at_k(&ranked, &[4], 10).unwrap(), 0.0);
        assert!(hits_at_k::<u32>(&[], &[], 1).is_err());
    }

    #[test]
    fn buckets() {
        let b = length_report(&[Some(1), None, Some(2)], &[1, 1, 1], 10).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].count, 3);
        assert!(b[0].excluded);
        let b = length_report(&[Some(1), None, Some(2)], &[1, 2, 2], 2).unwrap();
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 3);
        assert!(b[0].excluded && !b[1].excluded);
        assert_eq!(b[1].hits.hits3, 50.0);
    }

    #[test]
    fn percent_rounding() {
        let h = Hits {
            hits1: 0.123456,
            hits3: 2.0 / 3.0,
            hits10: 1.0,
        };
        assert_eq!(h.percent().hits1, 12.35);
        assert_eq!(h.percent().hits3, 66.67);
        assert_eq!(h.percent().hits10, 100.0);
    }
}
