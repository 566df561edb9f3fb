//! Winner-pays-bid greedy matching auction over a fixed item arrival order.
//!
//! Each arriving item goes to the unmatched feasible buyer with the highest
//! strictly positive bid; ties go to the lowest buyer index. A zero bid never
//! wins, so bidding zero is the same as not participating.

use serde::Serialize;

use crate::covering::{descending_sum, Matching};
use crate::error::{Error, Result};
use crate::instance::Instance;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BidProfile {
    pub bids: Vec<f64>,
}

impl BidProfile {
    pub fn new(bids: Vec<f64>) -> Self {
        BidProfile { bids }
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    /// Copy of the profile with buyer `i` bidding `bid`.
    pub fn with_bid(&self, i: usize, bid: f64) -> BidProfile {
        let mut bids = self.bids.clone();
        bids[i] = bid;
        BidProfile { bids }
    }

    pub fn check_for(&self, inst: &Instance) -> Result<()> {
        if self.bids.len() != inst.n_buyers {
            return Err(Error::Parameter(format!(
                "bid profile has {} entries but instance has {} buyers",
                self.bids.len(),
                inst.n_buyers
            )));
        }
        if let Some((i, b)) = self
            .bids
            .iter()
            .enumerate()
            .find(|(_, b)| !b.is_finite() || **b < 0.0)
        {
            return Err(Error::Parameter(format!(
                "bid of buyer {i} is not a finite non-negative real: {b}"
            )));
        }
        Ok(())
    }
}

impl From<Vec<f64>> for BidProfile {
    fn from(bids: Vec<f64>) -> Self {
        BidProfile { bids }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub matching: Matching,
    /// Winning bid on each item, 0 when unsold.
    pub item_revenues: Vec<f64>,
    /// 1 iff the buyer is matched.
    pub allocation: Vec<u8>,
    pub payments: Vec<f64>,
    pub revenue: f64,
}

impl Outcome {
    pub fn is_matched(&self, buyer: usize) -> bool {
        self.allocation[buyer] == 1
    }

    pub fn matched_count(&self) -> usize {
        self.matching.len()
    }

    /// Revenue summed from the buyer side, `sum_i b_i * x_i`.
    pub fn buyer_side_revenue(&self) -> f64 {
        descending_sum(self.payments.iter().copied())
    }
}

/// Critical bid of one buyer: the infimum own bid at which the buyer is
/// matched, others fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriticalBid {
    Threshold {
        value: f64,
        wins_at_threshold: bool,
    },
    /// The buyer has no edges and can never be matched.
    Unmatchable,
}

impl CriticalBid {
    pub fn value(&self) -> Option<f64> {
        match *self {
            CriticalBid::Threshold { value, .. } => Some(value),
            CriticalBid::Unmatchable => None,
        }
    }

    /// Threshold, with unmatchable buyers at `+inf`.
    pub fn value_or_infinity(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }

    /// Weight used in covering right-hand sides; unmatchable buyers get 0.
    pub fn covering_weight(&self) -> f64 {
        self.value().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct CriticalBids {
    pub thresholds: Vec<CriticalBid>,
}

impl CriticalBids {
    pub fn covering_weights(&self) -> Vec<f64> {
        self.thresholds
            .iter()
            .map(CriticalBid::covering_weight)
            .collect()
    }
}

/// Winner of each item (indexed by item), given item adjacency lists sorted
/// by buyer index.
pub(crate) fn allocate(
    item_neighbors: &[Vec<usize>],
    arrival_order: &[usize],
    n_buyers: usize,
    bids: &[f64],
) -> Vec<Option<usize>> {
    let mut taken = vec![false; n_buyers];
    let mut winner = vec![None; item_neighbors.len()];
    for &item in arrival_order {
        let mut best: Option<usize> = None;
        for &b in &item_neighbors[item] {
            if taken[b] || bids[b] <= 0.0 {
                continue;
            }
            // Strict comparison keeps the lowest index on ties since the
            // neighbor list is ascending.
            if best.is_none_or(|w| bids[b] > bids[w]) {
                best = Some(b);
            }
        }
        if let Some(b) = best {
            taken[b] = true;
            winner[item] = Some(b);
        }
    }
    winner
}

fn outcome_from_winners(n_buyers: usize, winners: &[Option<usize>], bids: &[f64]) -> Outcome {
    let mut allocation = vec![0u8; n_buyers];
    let mut item_revenues = vec![0.0; winners.len()];
    let mut pairs = Vec::new();
    for (item, w) in winners.iter().enumerate() {
        if let Some(b) = *w {
            allocation[b] = 1;
            item_revenues[item] = bids[b];
            pairs.push((b, item));
        }
    }
    let payments: Vec<f64> = (0..n_buyers)
        .map(|b| if allocation[b] == 1 { bids[b] } else { 0.0 })
        .collect();
    let revenue = descending_sum(item_revenues.iter().copied());
    Outcome {
        matching: Matching::from_pairs(pairs),
        item_revenues,
        allocation,
        payments,
        revenue,
    }
}

pub fn run_auction(inst: &Instance, bids: &BidProfile) -> Result<Outcome> {
    bids.check_for(inst)?;
    let adj = inst.item_neighbors();
    let winners = allocate(&adj, &inst.arrival_order, inst.n_buyers, &bids.bids);
    Ok(outcome_from_winners(inst.n_buyers, &winners, &bids.bids))
}

/// Price item `j` fetches when buyer `i` is removed from the market
/// (0 if `j` goes unsold).
pub fn counterfactual_price(inst: &Instance, bids: &BidProfile, i: usize, j: usize) -> Result<f64> {
    bids.check_for(inst)?;
    if j >= inst.n_items {
        return Err(Error::Parameter(format!(
            "item {j} out of range (n_items={})",
            inst.n_items
        )));
    }
    let reduced = inst.without_buyer(i)?;
    let mut rest = bids.bids.clone();
    rest.remove(i);
    let adj = reduced.item_neighbors();
    let winners = allocate(&adj, &reduced.arrival_order, reduced.n_buyers, &rest);
    Ok(winners[j].map_or(0.0, |b| rest[b]))
}

/// Counterfactual prices for every edge, in the instance's edge order.
pub fn edge_counterfactual_prices(inst: &Instance, bids: &BidProfile) -> Result<Vec<f64>> {
    bids.check_for(inst)?;
    let mut cache: Vec<Option<Vec<Option<usize>>>> = vec![None; inst.n_buyers];
    let mut reduced_bids: Vec<Vec<f64>> = vec![Vec::new(); inst.n_buyers];
    inst.edges
        .iter()
        .map(|&(i, j)| {
            if cache[i].is_none() {
                let reduced = inst.without_buyer(i)?;
                let mut rest = bids.bids.clone();
                rest.remove(i);
                let adj = reduced.item_neighbors();
                cache[i] = Some(allocate(
                    &adj,
                    &reduced.arrival_order,
                    reduced.n_buyers,
                    &rest,
                ));
                reduced_bids[i] = rest;
            }
            let winners = cache[i].as_ref().expect("filled above");
            Ok(winners[j].map_or(0.0, |b| reduced_bids[i][b]))
        })
        .collect()
}

/// Exact critical bid of buyer `i`.
///
/// Buyer `i`'s allocation depends on its own bid only through comparisons
/// with the other bids, so it is constant between consecutive breakpoints
/// `{0} ∪ {b_k : k != i}`. Probing every breakpoint, the midpoint of every
/// gap, and one point above the largest breakpoint recovers the whole step
/// function.
pub fn critical_bid(inst: &Instance, bids: &BidProfile, i: usize) -> Result<CriticalBid> {
    bids.check_for(inst)?;
    if i >= inst.n_buyers {
        return Err(Error::Parameter(format!(
            "buyer {i} out of range (n_buyers={})",
            inst.n_buyers
        )));
    }
    let adj = inst.item_neighbors();
    critical_bid_with(&adj, inst, &bids.bids, i)
}

fn critical_bid_with(
    adj: &[Vec<usize>],
    inst: &Instance,
    bids: &[f64],
    i: usize,
) -> Result<CriticalBid> {
    if !adj.iter().any(|list| list.binary_search(&i).is_ok()) {
        return Ok(CriticalBid::Unmatchable);
    }

    let mut breakpoints: Vec<f64> = bids
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i)
        .map(|(_, &b)| b)
        .chain(std::iter::once(0.0))
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();

    // (probe, Some(index) if the probe is a breakpoint)
    let mut probes: Vec<(f64, Option<usize>)> = Vec::with_capacity(2 * breakpoints.len());
    for (k, &p) in breakpoints.iter().enumerate() {
        probes.push((p, Some(k)));
        let next = breakpoints.get(k + 1).copied().unwrap_or(2.0 * p + 1.0);
        probes.push((p + (next - p) / 2.0, None));
    }

    let mut trial = bids.to_vec();
    let mut wins_at = |b: f64| {
        trial[i] = b;
        allocate(adj, &inst.arrival_order, inst.n_buyers, &trial).contains(&Some(i))
    };

    let outcomes: Vec<bool> = probes.iter().map(|&(p, _)| wins_at(p)).collect();
    let first_win = match outcomes.iter().position(|&w| w) {
        Some(k) => k,
        None => {
            // Above every other bid the buyer must be matched.
            let (top, _) = *probes.last().expect("at least the zero breakpoint");
            return Err(Error::NonMonotone {
                buyer: i,
                winning_bid: f64::NAN,
                losing_bid: top,
            });
        }
    };
    if let Some(k) = outcomes[first_win..].iter().position(|&w| !w) {
        return Err(Error::NonMonotone {
            buyer: i,
            winning_bid: probes[first_win].0,
            losing_bid: probes[first_win + k].0,
        });
    }

    Ok(match probes[first_win] {
        // Gap below lost and this breakpoint wins: closed at the threshold.
        (p, Some(_)) => CriticalBid::Threshold {
            value: p,
            wins_at_threshold: true,
        },
        // The gap wins but the breakpoint below it lost.
        (_, None) => CriticalBid::Threshold {
            value: probes[first_win - 1].0,
            wins_at_threshold: false,
        },
    })
}

pub fn all_critical_bids(inst: &Instance, bids: &BidProfile) -> Result<CriticalBids> {
    bids.check_for(inst)?;
    let adj = inst.item_neighbors();
    let thresholds = (0..inst.n_buyers)
        .map(|i| critical_bid_with(&adj, inst, &bids.bids, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(CriticalBids { thresholds })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two buyers, two items; buyer 0 likes both items, buyer 1 only item 0.
    fn instance_c() -> Instance {
        Instance::unit(2, 2, vec![(0, 0), (0, 1), (1, 0)]).unwrap()
    }

    fn two_buyers_one_item() -> Instance {
        Instance::unit(2, 1, vec![(0, 0), (1, 0)]).unwrap()
    }

    #[test]
    fn single_buyer_pays_bid() {
        let inst = Instance::unit(1, 1, vec![(0, 0)]).unwrap();
        let out = run_auction(&inst, &vec![0.5].into()).unwrap();
        assert_eq!(out.matching.pairs(), vec![(0, 0)]);
        assert_eq!(out.item_revenues, vec![0.5]);
        assert_eq!(out.revenue, 0.5);
    }

    #[test]
    fn instance_c_starves_second_item() {
        let out = run_auction(&instance_c(), &vec![0.9, 0.5].into()).unwrap();
        assert_eq!(out.matching.pairs(), vec![(0, 0)]);
        assert_eq!(out.item_revenues, vec![0.9, 0.0]);
        assert_eq!(out.allocation, vec![1, 0]);
        assert_eq!(out.payments, vec![0.9, 0.0]);
        assert_eq!(out.revenue, 0.9);
    }

    #[test]
    fn zero_bids_never_win() {
        let inst = gen_full(3, 3);
        let out = run_auction(&inst, &vec![0.0; 3].into()).unwrap();
        assert!(out.matching.is_empty());
        assert_eq!(out.revenue, 0.0);
    }

    fn gen_full(nb: usize, ni: usize) -> Instance {
        let edges = (0..nb).flat_map(|b| (0..ni).map(move |j| (b, j))).collect();
        Instance::unit(nb, ni, edges).unwrap()
    }

    #[test]
    fn bid_length_mismatch() {
        assert!(matches!(
            run_auction(&instance_c(), &vec![0.1].into()),
            Err(Error::Parameter(_))
        ));
        assert!(run_auction(&instance_c(), &vec![0.1, -1.0].into()).is_err());
    }

    #[test]
    fn counterfactual_prices_on_instance_c() {
        let inst = instance_c();
        let bids: BidProfile = vec![0.9, 0.5].into();
        assert_eq!(counterfactual_price(&inst, &bids, 1, 0).unwrap(), 0.9);
        assert_eq!(counterfactual_price(&inst, &bids, 0, 0).unwrap(), 0.5);
        assert_eq!(counterfactual_price(&inst, &bids, 0, 1).unwrap(), 0.0);
        assert!(counterfactual_price(&inst, &bids, 2, 0).is_err());
        assert!(counterfactual_price(&inst, &bids, 0, 2).is_err());
        assert_eq!(
            edge_counterfactual_prices(&inst, &bids).unwrap(),
            vec![0.5, 0.0, 0.9]
        );
    }

    #[test]
    fn tie_break_critical_bids() {
        let inst = two_buyers_one_item();
        let bids: BidProfile = vec![0.7, 0.4].into();
        assert_eq!(
            critical_bid(&inst, &bids, 0).unwrap(),
            CriticalBid::Threshold {
                value: 0.4,
                wins_at_threshold: true
            }
        );
        assert_eq!(
            critical_bid(&inst, &bids, 1).unwrap(),
            CriticalBid::Threshold {
                value: 0.7,
                wins_at_threshold: false
            }
        );
    }

    #[test]
    fn instance_c_critical_bids() {
        let cb = all_critical_bids(&instance_c(), &vec![0.9, 0.5].into()).unwrap();
        assert_eq!(cb.thresholds[0].value(), Some(0.0));
        assert_eq!(cb.thresholds[1].value(), Some(0.9));
        assert_eq!(cb.covering_weights(), vec![0.0, 0.9]);
    }

    #[test]
    fn lone_buyer_threshold_is_zero() {
        let inst = Instance::unit(1, 1, vec![(0, 0)]).unwrap();
        let cb = all_critical_bids(&inst, &vec![0.3].into()).unwrap();
        assert_eq!(
            cb.thresholds,
            vec![CriticalBid::Threshold {
                value: 0.0,
                wins_at_threshold: false
            }]
        );
    }

    #[test]
    fn degree_zero_buyers_are_unmatchable() {
        let inst = Instance::unit(3, 2, vec![]).unwrap();
        let cb = all_critical_bids(&inst, &vec![0.3, 0.2, 0.1].into()).unwrap();
        assert!(cb.thresholds.iter().all(|t| *t == CriticalBid::Unmatchable));
        assert_eq!(cb.thresholds[0].value_or_infinity(), f64::INFINITY);
        assert_eq!(cb.thresholds[0].covering_weight(), 0.0);
    }

    #[test]
    fn deleting_a_buyer_equals_zero_bid() {
        let inst = instance_c();
        let bids: BidProfile = vec![0.9, 0.5].into();
        for i in 0..2 {
            let zeroed = run_auction(&inst, &bids.with_bid(i, 0.0)).unwrap();
            for j in 0..2 {
                assert_eq!(
                    counterfactual_price(&inst, &bids, i, j).unwrap(),
                    zeroed.item_revenues[j]
                );
            }
        }
    }
}
