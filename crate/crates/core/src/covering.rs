//! Revenue covering of the greedy matching auction, checked against exact
//! matching oracles, and the `1 - 1/e` value-covering deviation distribution.
//!
//! With `mu = 1`, for every bid profile and every feasible matching `M`:
//!
//! ```text
//! revenue  >=  sum_{(i,j) in M} r_j  >=  sum_{(i,j) in M} t_i
//! ```
//!
//! where `r_j` is the price item `j` fetches and `t_i` the critical bid of
//! buyer `i`. The right end maximized over `M` is the covering right-hand side.

use std::collections::BTreeSet;
use std::f64::consts::E;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::mechanism::{all_critical_bids, run_auction, BidProfile};

/// Absolute tolerance for covering verdicts.
pub const COVERING_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance for each link of the proof chain.
pub const CHAIN_TOLERANCE: f64 = 1e-12;
/// Largest edge count [`enumerate_matchings`] accepts.
pub const MAX_ENUMERATION_EDGES: usize = 24;

/// `1 - 1/e`, the value-covering constant and the top of the deviation
/// distribution's support for unit value.
pub const ONE_MINUS_INV_E: f64 = 1.0 - 1.0 / E;

/// Sum in descending order of the terms.
///
/// Every total in this crate goes through here. Two sums over the same
/// multiset are bit-identical, and rounded addition is monotone, so a sum
/// over a componentwise-dominating sorted sequence is never smaller. This
/// lets oracle comparisons be exact rather than tolerance based.
pub fn descending_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = terms.into_iter().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v.into_iter().fold(0.0, |acc, x| acc + x)
}

/// A set of (buyer, item) pairs, kept sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Matching {
    pairs: BTreeSet<(usize, usize)>,
}

impl Serialize for Matching {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.pairs.iter())
    }
}

impl Matching {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Matching {
            pairs: pairs.into_iter().collect(),
        }
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, buyer: usize, item: usize) -> bool {
        self.pairs.contains(&(buyer, item))
    }

    pub fn buyers(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|&(b, _)| b)
    }

    pub fn items(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().map(|&(_, j)| j)
    }

    /// Buyer indicator vector `x`.
    pub fn buyer_indicator(&self, n_buyers: usize) -> Vec<u8> {
        let mut x = vec![0; n_buyers];
        for b in self.buyers() {
            x[b] = 1;
        }
        x
    }

    /// `sum_{i matched} weights[i]`.
    pub fn weight(&self, buyer_weights: &[f64]) -> f64 {
        descending_sum(self.buyers().map(|b| buyer_weights[b]))
    }

    pub fn check_feasible(&self, inst: &Instance) -> Result<()> {
        let mut buyers = BTreeSet::new();
        let mut items = BTreeSet::new();
        for &(b, j) in &self.pairs {
            if !inst.has_edge(b, j) {
                return Err(Error::Parameter(format!("pair ({b},{j}) is not an edge")));
            }
            if !buyers.insert(b) {
                return Err(Error::Parameter(format!("buyer {b} matched twice")));
            }
            if !items.insert(j) {
                return Err(Error::Parameter(format!("item {j} matched twice")));
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self, inst: &Instance) -> bool {
        self.check_feasible(inst).is_ok()
    }

    /// True iff no edge has both endpoints unmatched.
    pub fn is_maximal(&self, inst: &Instance) -> bool {
        let buyers: BTreeSet<usize> = self.buyers().collect();
        let items: BTreeSet<usize> = self.items().collect();
        inst.edges
            .iter()
            .all(|(b, j)| buyers.contains(b) || items.contains(j))
    }
}

/// Every feasible matching, each exactly once, starting with the empty one.
///
/// Matchings are produced as strictly increasing sequences of edge indices
/// by depth-first search, so memory stays `O(|E|)`.
pub struct Matchings {
    edges: Vec<(usize, usize)>,
    stack: Vec<usize>,
    buyer_used: Vec<bool>,
    item_used: Vec<bool>,
    started: bool,
    done: bool,
}

impl Matchings {
    fn fits(&self, e: usize) -> bool {
        let (b, j) = self.edges[e];
        !self.buyer_used[b] && !self.item_used[j]
    }

    fn first_fit_from(&self, start: usize) -> Option<usize> {
        (start..self.edges.len()).find(|&e| self.fits(e))
    }

    fn set(&mut self, e: usize, used: bool) {
        let (b, j) = self.edges[e];
        self.buyer_used[b] = used;
        self.item_used[j] = used;
    }

    fn current(&self) -> Matching {
        Matching::from_pairs(self.stack.iter().map(|&e| self.edges[e]))
    }
}

impl Iterator for Matchings {
    type Item = Matching;

    fn next(&mut self) -> Option<Matching> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(Matching::new());
        }
        let start = self.stack.last().map_or(0, |&e| e + 1);
        if let Some(e) = self.first_fit_from(start) {
            self.set(e, true);
            self.stack.push(e);
            return Some(self.current());
        }
        while let Some(last) = self.stack.pop() {
            self.set(last, false);
            if let Some(e) = self.first_fit_from(last + 1) {
                self.set(e, true);
                self.stack.push(e);
                return Some(self.current());
            }
        }
        self.done = true;
        None
    }
}

pub fn enumerate_matchings(inst: &Instance) -> Result<Matchings> {
    if inst.edges.len() > MAX_ENUMERATION_EDGES {
        return Err(Error::SizeGuard {
            what: "edge count",
            actual: inst.edges.len() as u128,
            limit: MAX_ENUMERATION_EDGES as u128,
            hint: "use max_weight_feasible_matching instead",
        });
    }
    Ok(Matchings {
        edges: inst.edges.clone(),
        stack: Vec::new(),
        buyer_used: vec![false; inst.n_buyers],
        item_used: vec![false; inst.n_items],
        started: false,
        done: false,
    })
}

/// Maximum-weight matching when every edge of buyer `i` weighs
/// `buyer_weights[i]`.
///
/// Matchable buyer sets form a transversal matroid, so adding buyers in
/// decreasing weight order whenever an augmenting path exists is optimal.
/// Only comparisons touch the weights; the returned total is a
/// [`descending_sum`] and matches the brute-force maximum bit for bit.
pub fn max_weight_feasible_matching(
    inst: &Instance,
    buyer_weights: &[f64],
) -> Result<(Matching, f64)> {
    if buyer_weights.len() != inst.n_buyers {
        return Err(Error::Parameter(format!(
            "{} weights for {} buyers",
            buyer_weights.len(),
            inst.n_buyers
        )));
    }
    if let Some((i, w)) = buyer_weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::Parameter(format!(
            "weight of buyer {i} is not a finite non-negative real: {w}"
        )));
    }

    let adj = inst.buyer_neighbors();
    let mut order: Vec<usize> = (0..inst.n_buyers)
        .filter(|&b| buyer_weights[b] > 0.0)
        .collect();
    order.sort_by(|&a, &b| {
        buyer_weights[b]
            .total_cmp(&buyer_weights[a])
            .then(a.cmp(&b))
    });

    let mut item_owner: Vec<Option<usize>> = vec![None; inst.n_items];
    let mut visited = vec![false; inst.n_items];
    for &b in &order {
        visited.fill(false);
        augment(b, &adj, &mut item_owner, &mut visited);
    }

    let matching = Matching::from_pairs(
        item_owner
            .iter()
            .enumerate()
            .filter_map(|(j, owner)| owner.map(|b| (b, j))),
    );
    let weight = matching.weight(buyer_weights);
    Ok((matching, weight))
}

/// Kuhn's augmenting-path search from `buyer`.
fn augment(
    buyer: usize,
    adj: &[Vec<usize>],
    item_owner: &mut [Option<usize>],
    visited: &mut [bool],
) -> bool {
    for &j in &adj[buyer] {
        if visited[j] {
            continue;
        }
        visited[j] = true;
        if item_owner[j].is_none_or(|other| augment(other, adj, item_owner, visited)) {
            item_owner[j] = Some(buyer);
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringReport {
    pub mu: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub witness_matching: Matching,
    pub holds: bool,
    pub slack: f64,
}

pub fn verify_revenue_covering(
    inst: &Instance,
    bids: &BidProfile,
    mu: f64,
) -> Result<CoveringReport> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
    }
    let outcome = run_auction(inst, bids)?;
    let critical = all_critical_bids(inst, bids)?;
    let (witness_matching, rhs) = max_weight_feasible_matching(inst, &critical.covering_weights())?;
    let lhs = mu * outcome.revenue;
    let slack = lhs - rhs;
    Ok(CoveringReport {
        mu,
        lhs,
        rhs,
        witness_matching,
        holds: slack >= -COVERING_TOLERANCE,
        slack,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub sum_winning_bids: f64,
    pub matched_item_revenue: f64,
    pub critical_surplus: f64,
    pub holds: bool,
}

pub fn verify_chain(inst: &Instance, bids: &BidProfile, m: &Matching) -> Result<ChainReport> {
    m.check_feasible(inst)?;
    let outcome = run_auction(inst, bids)?;
    let critical = all_critical_bids(inst, bids)?;
    Ok(chain_report(
        &outcome.item_revenues,
        outcome.revenue,
        &critical.covering_weights(),
        m,
    ))
}

/// Chain check with the auction outcome and critical bids already computed.
pub fn chain_report(
    item_revenues: &[f64],
    revenue: f64,
    critical_weights: &[f64],
    m: &Matching,
) -> ChainReport {
    let matched_item_revenue = descending_sum(m.items().map(|j| item_revenues[j]));
    let critical_surplus = m.weight(critical_weights);
    ChainReport {
        sum_winning_bids: revenue,
        matched_item_revenue,
        critical_surplus,
        holds: revenue >= matched_item_revenue - CHAIN_TOLERANCE
            && matched_item_revenue >= critical_surplus - CHAIN_TOLERANCE,
    }
}

/// Quantile of the deviation bid distribution with density `1/(v-b)` on
/// `[0, v(1-1/e)]`: `b(u) = v(1 - e^{-u})`.
pub fn smoothness_bid_sample(v: f64, u: f64) -> Result<f64> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Parameter(format!(
            "value must be finite and >= 0, got {v}"
        )));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Parameter(format!("u must lie in [0,1], got {u}")));
    }
    Ok(-v * (-u).exp_m1())
}

/// `F(b) = ln(v / (v - b))` on the support, clamped outside it.
pub fn smoothness_cdf(v: f64, b: f64) -> f64 {
    if b <= 0.0 {
        0.0
    } else if b >= v * ONE_MINUS_INV_E {
        1.0
    } else {
        -(-b / v).ln_1p()
    }
}

pub fn smoothness_density(v: f64, b: f64) -> f64 {
    if (0.0..=v * ONE_MINUS_INV_E).contains(&b) {
        1.0 / (v - b)
    } else {
        0.0
    }
}

/// Expected utility of the randomized deviation against threshold `t`,
/// `E_b[(v - b) 1{b >= t}]`, in closed form.
pub fn value_covering_lhs(v: f64, t: f64) -> f64 {
    let top = ONE_MINUS_INV_E * v;
    if t <= top {
        top - t
    } else {
        0.0
    }
}

/// The same expectation by composite Simpson quadrature of
/// `(v - b) f(b)` over `[t, v(1-1/e)]`.
pub fn value_covering_quadrature(v: f64, t: f64, panels: usize) -> f64 {
    let top = ONE_MINUS_INV_E * v;
    let lo = t.max(0.0);
    if lo >= top {
        return 0.0;
    }
    let n = (panels.max(1) * 2) as f64;
    let h = (top - lo) / n;
    let g = |b: f64| (v - b) * smoothness_density(v, b);
    let mut acc = g(lo) + g(top);
    for k in 1..(n as usize) {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(lo + k as f64 * h);
    }
    acc * h / 3.0
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and `cdf`. Sorts `samples` in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            ((k + 1) as f64 / n - f).max(f - k as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueCoveringPoint {
    pub threshold: f64,
    pub closed_form: f64,
    pub quadrature: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueCoveringReport {
    pub value: f64,
    pub points: Vec<ValueCoveringPoint>,
    pub max_abs_error: f64,
    pub samples: usize,
    pub ks_statistic: f64,
    pub ks_tolerance: f64,
    pub holds: bool,
}

/// Tolerance between closed form and quadrature.
pub const VALUE_COVERING_TOLERANCE: f64 = 1e-6;
/// KS bound for the sampler at `10^6` draws.
pub const KS_TOLERANCE: f64 = 0.002;

/// KS verdict threshold for `n` draws: [`KS_TOLERANCE`], widened to the
/// asymptotic 99.9% critical value `1.949 / sqrt(n)` for smaller samples.
pub fn ks_tolerance(n: usize) -> f64 {
    KS_TOLERANCE.max(1.949 / (n as f64).sqrt())
}

/// Compares closed form and quadrature on `n_thresholds` evenly spaced
/// thresholds in `[0, v(1-1/e)]`, and the sampler against `F` on `samples`
/// uniform draws.
pub fn value_covering_check(
    v: f64,
    n_thresholds: usize,
    samples: usize,
    rng: &mut impl rand::Rng,
) -> Result<ValueCoveringReport> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::Parameter(format!("value must be positive, got {v}")));
    }
    if n_thresholds < 2 || samples == 0 {
        return Err(Error::Parameter(
            "need at least 2 thresholds and 1 sample".into(),
        ));
    }
    let top = ONE_MINUS_INV_E * v;
    let points: Vec<ValueCoveringPoint> = (0..n_thresholds)
        .map(|k| {
            let t = top * k as f64 / (n_thresholds - 1) as f64;
            let closed_form = value_covering_lhs(v, t);
            let quadrature = value_covering_quadrature(v, t, 64);
            ValueCoveringPoint {
                threshold: t,
                closed_form,
                quadrature,
                abs_error: (closed_form - quadrature).abs(),
            }
        })
        .collect();
    let max_abs_error = points.iter().map(|p| p.abs_error).fold(0.0, f64::max);

    let mut draws = (0..samples)
        .map(|_| smoothness_bid_sample(v, rng.gen::<f64>()))
        .collect::<Result<Vec<_>>>()?;
    let ks = ks_statistic(&mut draws, |b| smoothness_cdf(v, b));
    let ks_tol = ks_tolerance(samples);

    Ok(ValueCoveringReport {
        value: v,
        points,
        max_abs_error,
        samples,
        ks_statistic: ks,
        ks_tolerance: ks_tol,
        holds: max_abs_error <= VALUE_COVERING_TOLERANCE && ks < ks_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::gen_triangular;

    fn instance_c() -> Instance {
        Instance::unit(2, 2, vec![(0, 0), (0, 1), (1, 0)]).unwrap()
    }

    #[test]
    fn enumerate_small_cases() {
        let single = Instance::unit(1, 1, vec![(0, 0)]).unwrap();
        let all: Vec<Matching> = enumerate_matchings(&single).unwrap().collect();
        assert_eq!(all, vec![Matching::new(), Matching::from_pairs([(0, 0)])]);

        let all: Vec<Matching> = enumerate_matchings(&instance_c()).unwrap().collect();
        assert_eq!(all.len(), 5);
        assert!(all.contains(&Matching::from_pairs([(0, 1), (1, 0)])));
        assert!(all.contains(&Matching::new()));

        let empty = Instance::unit(2, 2, vec![]).unwrap();
        assert_eq!(enumerate_matchings(&empty).unwrap().count(), 1);
    }

    #[test]
    fn enumeration_refuses_large_graphs() {
        let inst = crate::instance::gen_random(5, 5, 1.0, 0.0, 1.0, 0).unwrap();
        assert!(matches!(
            enumerate_matchings(&inst),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn max_weight_examples() {
        let (m, w) = max_weight_feasible_matching(&gen_triangular(3).unwrap(), &[1.0; 3]).unwrap();
        assert_eq!(w, 3.0);
        assert_eq!(m.len(), 3);

        let (m, w) = max_weight_feasible_matching(&instance_c(), &[0.0, 0.9]).unwrap();
        assert_eq!(w, 0.9);
        assert!(m.contains(1, 0));

        let (_, w) = max_weight_feasible_matching(&instance_c(), &[0.0, 0.0]).unwrap();
        assert_eq!(w, 0.0);

        assert!(max_weight_feasible_matching(&instance_c(), &[-1.0, 0.0]).is_err());
        assert!(max_weight_feasible_matching(&instance_c(), &[1.0]).is_err());
    }

    #[test]
    fn covering_tight_on_instance_c() {
        let bids: BidProfile = vec![0.9, 0.5].into();
        let r = verify_revenue_covering(&instance_c(), &bids, 1.0).unwrap();
        assert_eq!((r.lhs, r.rhs, r.slack), (0.9, 0.9, 0.0));
        assert!(r.holds);
        assert!(r.witness_matching.contains(1, 0));

        let r = verify_revenue_covering(&instance_c(), &bids, 0.99).unwrap();
        assert!(!r.holds);
        assert!((r.lhs - 0.891).abs() < 1e-15);

        assert!(verify_revenue_covering(&instance_c(), &bids, 0.0).is_err());
    }

    #[test]
    fn covering_single_buyer() {
        let inst = Instance::unit(1, 1, vec![(0, 0)]).unwrap();
        let r = verify_revenue_covering(&inst, &vec![0.37].into(), 1.0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.37, 0.0));
        assert!(r.holds);
    }

    #[test]
    fn chain_examples() {
        let inst = instance_c();
        let bids: BidProfile = vec![0.9, 0.5].into();
        let r = verify_chain(&inst, &bids, &Matching::from_pairs([(0, 1), (1, 0)])).unwrap();
        assert_eq!(
            (
                r.sum_winning_bids,
                r.matched_item_revenue,
                r.critical_surplus
            ),
            (0.9, 0.9, 0.9)
        );
        assert!(r.holds);

        let r = verify_chain(&inst, &bids, &Matching::new()).unwrap();
        assert_eq!((r.matched_item_revenue, r.critical_surplus), (0.0, 0.0));
        assert!(r.holds);

        let r = verify_chain(&inst, &bids, &Matching::from_pairs([(1, 0)])).unwrap();
        assert_eq!(
            (
                r.sum_winning_bids,
                r.matched_item_revenue,
                r.critical_surplus
            ),
            (0.9, 0.9, 0.9)
        );

        let bad = Matching::from_pairs([(1, 1)]);
        assert!(verify_chain(&inst, &bids, &bad).is_err());
        let double = Matching::from_pairs([(0, 0), (0, 1)]);
        assert!(verify_chain(&inst, &bids, &double).is_err());
    }

    #[test]
    fn sampler_endpoints() {
        assert_eq!(smoothness_bid_sample(1.0, 0.0).unwrap(), 0.0);
        assert!((smoothness_bid_sample(1.0, 1.0).unwrap() - 0.632_120_558_828_557_7).abs() < 1e-15);
        let b = smoothness_bid_sample(2.0, 0.5).unwrap();
        assert!((b - 0.786_938_680_574_733).abs() < 1e-12);
        assert!((smoothness_cdf(2.0, b) - 0.5).abs() < 1e-12);
        assert!(smoothness_bid_sample(1.0, 1.5).is_err());
        assert!(smoothness_bid_sample(-1.0, 0.5).is_err());
    }

    #[test]
    fn value_covering_closed_form() {
        assert!((value_covering_lhs(1.0, 0.0) - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!((value_covering_lhs(1.0, 0.3) - 0.332_120_558_828_557_7).abs() < 1e-12);
        assert_eq!(value_covering_lhs(1.0, 0.9), 0.0);
        assert_eq!(value_covering_quadrature(1.0, 0.9, 16), 0.0);
    }

    #[test]
    fn ks_tolerance_pins_at_a_million() {
        assert_eq!(ks_tolerance(1_000_000), KS_TOLERANCE);
        assert!(ks_tolerance(10_000) > 0.019);
    }

    #[test]
    fn descending_sum_is_order_free() {
        let a = descending_sum([0.1, 0.7, 0.2, 1e-17]);
        let b = descending_sum([1e-17, 0.2, 0.1, 0.7]);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
