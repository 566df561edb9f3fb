//! RANKING, its bid-based equivalent, competitive-ratio estimation, the
//! non-strategic greedy baseline and optimal offline benchmarks.

use std::collections::VecDeque;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::covering::{max_weight_feasible_matching, smoothness_bid_sample, Matching};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::mechanism::{allocate, run_auction, BidProfile, Outcome};

/// Largest buyer count for [`exact_ranking_expectation`].
pub const MAX_EXACT_BUYERS: usize = 8;

/// Buyer indices from highest to lowest priority.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct PriorityOrder {
    perm: Vec<usize>,
}

impl PriorityOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &b in &perm {
            match seen.get_mut(b) {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::Parameter(format!(
                        "priority order is not a permutation of 0..{}: {perm:?}",
                        perm.len()
                    )))
                }
            }
        }
        Ok(PriorityOrder { perm })
    }

    pub fn identity(n: usize) -> Self {
        PriorityOrder {
            perm: (0..n).collect(),
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    /// `rank[b]` is the position of buyer `b` (0 = highest priority).
    fn ranks(&self) -> Vec<usize> {
        let mut rank = vec![0; self.perm.len()];
        for (pos, &b) in self.perm.iter().enumerate() {
            rank[b] = pos;
        }
        rank
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub mean_matched: f64,
    pub opt: f64,
    pub ratio: f64,
    /// Standard error of `ratio`: sample standard deviation of the per-trial
    /// ratios over `sqrt(trials)`.
    pub std_error: f64,
    pub trials: usize,
    pub seed: u64,
}

impl RatioEstimate {
    /// Standard error on the matched-count scale.
    pub fn matched_std_error(&self) -> f64 {
        self.std_error * self.opt
    }
}

/// CSV row for ratio experiments.
#[derive(Debug, Clone, Serialize)]
pub struct RatioRow<'a> {
    pub instance_id: &'a str,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub mean_matched: f64,
    pub opt: f64,
    pub ratio: f64,
    pub std_error: f64,
}

impl RatioEstimate {
    pub fn row<'a>(&self, instance_id: &'a str, n: usize) -> RatioRow<'a> {
        RatioRow {
            instance_id,
            n,
            trials: self.trials,
            seed: self.seed,
            mean_matched: self.mean_matched,
            opt: self.opt,
            ratio: self.ratio,
            std_error: self.std_error,
        }
    }
}

fn ranking_count(adj: &[Vec<usize>], arrival: &[usize], rank: &[usize]) -> usize {
    let mut taken = vec![false; rank.len()];
    let mut count = 0;
    for &item in arrival {
        if let Some(&b) = adj[item]
            .iter()
            .filter(|&&b| !taken[b])
            .min_by_key(|&&b| rank[b])
        {
            taken[b] = true;
            count += 1;
        }
    }
    count
}

/// Each arriving item goes to its highest-priority unmatched feasible buyer.
pub fn run_ranking(inst: &Instance, order: &PriorityOrder) -> Result<Matching> {
    if order.perm.len() != inst.n_buyers {
        return Err(Error::Parameter(format!(
            "priority order covers {} buyers, instance has {}",
            order.perm.len(),
            inst.n_buyers
        )));
    }
    let rank = order.ranks();
    let adj = inst.item_neighbors();
    let mut taken = vec![false; inst.n_buyers];
    let mut pairs = Vec::new();
    for &item in &inst.arrival_order {
        if let Some(&b) = adj[item]
            .iter()
            .filter(|&&b| !taken[b])
            .min_by_key(|&&b| rank[b])
        {
            taken[b] = true;
            pairs.push((b, item));
        }
    }
    Ok(Matching::from_pairs(pairs))
}

/// Runs the auction with unit-value deviation bids `b_i = 1 - e^{-u_i}` and
/// RANKING with priority by decreasing `u`. Both matchings are returned; the
/// caller compares them.
///
/// Every `u_i` must lie in `(0, 1]` (a zero bid would drop out) and the bids
/// must be pairwise distinct.
pub fn ranking_via_bids(inst: &Instance, u: &[f64]) -> Result<(Outcome, Matching)> {
    if u.len() != inst.n_buyers {
        return Err(Error::Parameter(format!(
            "{} draws for {} buyers",
            u.len(),
            inst.n_buyers
        )));
    }
    if let Some(x) = u.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::Parameter(format!("draw {x} outside (0,1]")));
    }
    let bids = u
        .iter()
        .map(|&x| smoothness_bid_sample(1.0, x))
        .collect::<Result<Vec<_>>>()?;

    let mut sorted = bids.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::ResampleRequired(
            "two buyers drew the same bid".into(),
        ));
    }

    let mut perm: Vec<usize> = (0..inst.n_buyers).collect();
    perm.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
    let order = PriorityOrder::new(perm)?;

    let outcome = run_auction(inst, &BidProfile::new(bids))?;
    let ranked = run_ranking(inst, &order)?;
    Ok((outcome, ranked))
}

/// `n` draws in `(0, 1]`, redrawn until their deviation bids are distinct.
pub fn sample_distinct_draws<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..n).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let mut bids: Vec<f64> = u.iter().map(|&x| -(-x).exp_m1()).collect();
        bids.sort_by(f64::total_cmp);
        if bids.windows(2).all(|w| w[0] != w[1]) {
            return u;
        }
    }
}

/// Expected RANKING size over all `n!` priority orders.
pub fn exact_ranking_expectation(inst: &Instance) -> Result<f64> {
    let n = inst.n_buyers;
    if n > MAX_EXACT_BUYERS {
        return Err(Error::SizeGuard {
            what: "buyer count",
            actual: n as u128,
            limit: MAX_EXACT_BUYERS as u128,
            hint: "use estimate_competitive_ratio instead",
        });
    }
    let adj = inst.item_neighbors();
    let mut total: u64 = 0;
    let mut count: u64 = 0;
    let mut rank = vec![0; n];
    for perm in (0..n).permutations(n) {
        for (pos, &b) in perm.iter().enumerate() {
            rank[b] = pos;
        }
        total += ranking_count(&adj, &inst.arrival_order, &rank) as u64;
        count += 1;
    }
    Ok(total as f64 / count as f64)
}

/// Monte Carlo estimate of `E|RANKING| / OPT`. Trial `k` draws its priority
/// order from stream `k` of a ChaCha generator keyed by `seed`, so results
/// do not depend on thread scheduling.
pub fn estimate_competitive_ratio(
    inst: &Instance,
    trials: usize,
    seed: u64,
) -> Result<RatioEstimate> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    let opt = optimal_matching_size(inst);
    if opt == 0 {
        return Err(Error::UndefinedRatio);
    }
    let adj = inst.item_neighbors();
    let n = inst.n_buyers;

    // Integer moments merge associatively and exactly.
    let (sum, sum_sq) = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut rank = vec![0; n];
            for (pos, &b) in perm.iter().enumerate() {
                rank[b] = pos;
            }
            let c = ranking_count(&adj, &inst.arrival_order, &rank) as u64;
            (c, c * c)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let t = trials as f64;
    let opt_f = opt as f64;
    let mean_matched = sum as f64 / t;
    let var = if trials > 1 {
        // Exact in integers: t * sum_sq - sum^2 = t (t-1) s^2.
        let num = (trials as u128) * (sum_sq as u128) - (sum as u128) * (sum as u128);
        num as f64 / (t * (t - 1.0))
    } else {
        0.0
    };
    Ok(RatioEstimate {
        mean_matched,
        opt: opt_f,
        ratio: mean_matched / opt_f,
        std_error: var.sqrt() / t.sqrt() / opt_f,
        trials,
        seed,
    })
}

/// Greedy for non-strategic buyers: the auction with every bid equal to 1.
pub fn greedy_nonstrategic(inst: &Instance) -> Matching {
    let adj = inst.item_neighbors();
    let bids = vec![1.0; inst.n_buyers];
    let winners = allocate(&adj, &inst.arrival_order, inst.n_buyers, &bids);
    Matching::from_pairs(
        winners
            .iter()
            .enumerate()
            .filter_map(|(j, w)| w.map(|b| (b, j))),
    )
}

/// Maximum matching size by Hopcroft–Karp.
pub fn optimal_matching_size(inst: &Instance) -> usize {
    hopcroft_karp(inst.n_buyers, inst.n_items, &inst.buyer_neighbors()).len()
}

/// `max sum_i v_i x_i` over feasible matchings.
pub fn optimal_welfare(inst: &Instance) -> f64 {
    max_weight_feasible_matching(inst, &inst.values)
        .expect("validated instance values are valid weights")
        .1
}

/// Maximum-cardinality matching as (buyer, item) pairs.
pub fn hopcroft_karp(n_left: usize, n_right: usize, adj: &[Vec<usize>]) -> Vec<(usize, usize)> {
    const INF: usize = usize::MAX;
    let mut pair_left: Vec<Option<usize>> = vec![None; n_left];
    let mut pair_right: Vec<Option<usize>> = vec![None; n_right];
    let mut dist = vec![INF; n_left];

    fn dfs(
        u: usize,
        adj: &[Vec<usize>],
        pair_left: &mut [Option<usize>],
        pair_right: &mut [Option<usize>],
        dist: &mut [usize],
    ) -> bool {
        for &v in &adj[u] {
            let ok = match pair_right[v] {
                None => true,
                Some(w) => dist[w] == dist[u] + 1 && dfs(w, adj, pair_left, pair_right, dist),
            };
            if ok {
                pair_left[u] = Some(v);
                pair_right[v] = Some(u);
                return true;
            }
        }
        dist[u] = INF;
        false
    }

    loop {
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if pair_left[u].is_none() {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = INF;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                match pair_right[v] {
                    None => found = true,
                    Some(w) if dist[w] == INF => {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                    _ => {}
                }
            }
        }
        if !found {
            break;
        }
        for u in 0..n_left {
            if pair_left[u].is_none() {
                dfs(u, adj, &mut pair_left, &mut pair_right, &mut dist);
            }
        }
    }

    pair_left
        .iter()
        .enumerate()
        .filter_map(|(u, v)| v.map(|v| (u, v)))
        .collect()
}
