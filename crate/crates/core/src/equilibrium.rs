//! Complete-information pure ε-equilibria of the greedy matching auction on
//! a discrete bid grid, and the welfare bounds they must satisfy.

use rayon::prelude::*;
use serde::Serialize;

use crate::covering::ONE_MINUS_INV_E;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::mechanism::{all_critical_bids, allocate, run_auction, BidProfile};
use crate::ranking::optimal_welfare;

/// Largest number of grid profiles [`find_pure_equilibria`] will scan.
pub const MAX_PROFILES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GameConfig {
    pub inst: Instance,
    pub values: Vec<f64>,
    pub grid_step: f64,
    pub epsilon: f64,
}

impl GameConfig {
    /// Game over the instance's own buyer values.
    pub fn new(inst: Instance, grid_step: f64, epsilon: f64) -> Result<Self> {
        let values = inst.values.clone();
        Self::with_values(inst, values, grid_step, epsilon)
    }

    pub fn with_values(
        inst: Instance,
        values: Vec<f64>,
        grid_step: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(grid_step.is_finite() && grid_step > 0.0) {
            return Err(Error::Parameter(format!(
                "grid_step must be positive, got {grid_step}"
            )));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be >= 0, got {epsilon}"
            )));
        }
        // Re-validates the value vector along with the rest of the instance.
        let inst = inst.with_values(values.clone())?;
        Ok(GameConfig {
            inst,
            values,
            grid_step,
            epsilon,
        })
    }

    pub fn n_buyers(&self) -> usize {
        self.inst.n_buyers
    }

    /// Number of grid points `0, h, 2h, .., k h` with `k h <= max value`.
    pub fn grid_len(&self) -> usize {
        let top = self.values.iter().copied().fold(0.0, f64::max);
        // Absorb representation error in e.g. 1.0 / 0.05.
        (top / self.grid_step + 1e-9).floor() as usize + 1
    }

    pub fn grid_point(&self, k: usize) -> f64 {
        k as f64 * self.grid_step
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_len()).map(|k| self.grid_point(k)).collect()
    }

    /// Grid index of `bid`, if it is exactly a grid point.
    pub fn grid_index(&self, bid: f64) -> Option<usize> {
        let k = (bid / self.grid_step).round();
        if k < 0.0 || k as usize >= self.grid_len() {
            return None;
        }
        (self.grid_point(k as usize) == bid).then_some(k as usize)
    }

    /// Default welfare allowance for discretization: one grid step plus
    /// `epsilon` per buyer.
    pub fn default_slack(&self) -> f64 {
        (self.epsilon + self.grid_step) * self.n_buyers() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub profiles: Vec<BidProfile>,
    pub welfares: Vec<f64>,
    pub opt_welfare: f64,
    /// `min(welfares) / opt_welfare`; `None` when no equilibrium exists on
    /// the grid. Defined as 1 when `opt_welfare` is 0.
    pub min_ratio: Option<f64>,
}

fn check_buyer(cfg: &GameConfig, i: usize) -> Result<()> {
    if i >= cfg.n_buyers() {
        return Err(Error::Parameter(format!(
            "buyer {i} out of range (n_buyers={})",
            cfg.n_buyers()
        )));
    }
    Ok(())
}

/// Winner-pays-bid utility `(v_i - b_i) x_i`.
pub fn utility(cfg: &GameConfig, bids: &BidProfile, i: usize) -> Result<f64> {
    check_buyer(cfg, i)?;
    let out = run_auction(&cfg.inst, bids)?;
    Ok(if out.is_matched(i) {
        cfg.values[i] - bids.bids[i]
    } else {
        0.0
    })
}

struct Evaluator<'a> {
    cfg: &'a GameConfig,
    adj: Vec<Vec<usize>>,
}

impl<'a> Evaluator<'a> {
    fn new(cfg: &'a GameConfig) -> Self {
        Evaluator {
            cfg,
            adj: cfg.inst.item_neighbors(),
        }
    }

    fn allocation(&self, bids: &[f64]) -> Vec<bool> {
        let mut x = vec![false; self.cfg.n_buyers()];
        for b in allocate(
            &self.adj,
            &self.cfg.inst.arrival_order,
            self.cfg.n_buyers(),
            bids,
        )
        .into_iter()
        .flatten()
        {
            x[b] = true;
        }
        x
    }

    fn utility(&self, bids: &[f64], i: usize) -> f64 {
        if self.allocation(bids)[i] {
            self.cfg.values[i] - bids[i]
        } else {
            0.0
        }
    }

    /// Lowest grid bid maximizing buyer `i`'s utility.
    fn best_response(&self, bids: &[f64], i: usize) -> (f64, f64) {
        let mut trial = bids.to_vec();
        let mut best = (0.0, f64::NEG_INFINITY);
        for k in 0..self.cfg.grid_len() {
            let b = self.cfg.grid_point(k);
            trial[i] = b;
            let u = self.utility(&trial, i);
            if u > best.1 {
                best = (b, u);
            }
        }
        best
    }

    fn is_equilibrium(&self, bids: &[f64]) -> bool {
        let x = self.allocation(bids);
        (0..self.cfg.n_buyers()).all(|i| {
            let current = if x[i] {
                self.cfg.values[i] - bids[i]
            } else {
                0.0
            };
            current >= self.best_response(bids, i).1 - self.cfg.epsilon
        })
    }
}

/// Exhaustive best response over the grid; ties resolve to the lowest bid.
pub fn best_response(cfg: &GameConfig, bids: &BidProfile, i: usize) -> Result<(f64, f64)> {
    check_buyer(cfg, i)?;
    bids.check_for(&cfg.inst)?;
    Ok(Evaluator::new(cfg).best_response(&bids.bids, i))
}

pub fn verify_epsilon_equilibrium(cfg: &GameConfig, bids: &BidProfile) -> Result<bool> {
    bids.check_for(&cfg.inst)?;
    if let Some((i, b)) = bids
        .bids
        .iter()
        .enumerate()
        .find(|(_, &b)| cfg.grid_index(b).is_none())
    {
        return Err(Error::Parameter(format!(
            "bid {b} of buyer {i} is off the grid"
        )));
    }
    Ok(Evaluator::new(cfg).is_equilibrium(&bids.bids))
}

/// Scans every grid profile and keeps the ε-equilibria, in lexicographic
/// order of grid indices (buyer 0 most significant).
pub fn find_pure_equilibria(cfg: &GameConfig) -> Result<EquilibriumResult> {
    let g = cfg.grid_len() as u128;
    let n = cfg.n_buyers();
    let total = (0..n)
        .try_fold(1u128, |acc, _| acc.checked_mul(g))
        .unwrap_or(u128::MAX);
    if total > MAX_PROFILES {
        return Err(Error::SizeGuard {
            what: "grid profile count",
            actual: total,
            limit: MAX_PROFILES,
            hint: "use a coarser grid_step",
        });
    }

    let eval = Evaluator::new(cfg);
    let grid = cfg.grid();
    let decode = |mut idx: u64| {
        let mut bids = vec![0.0; n];
        for slot in bids.iter_mut().rev() {
            *slot = grid[(idx % g as u64) as usize];
            idx /= g as u64;
        }
        bids
    };

    let found: Vec<(BidProfile, f64)> = (0..total as u64)
        .into_par_iter()
        .filter_map(|idx| {
            let bids = decode(idx);
            eval.is_equilibrium(&bids).then(|| {
                let x = eval.allocation(&bids);
                let welfare = crate::covering::descending_sum(
                    (0..n).filter(|&i| x[i]).map(|i| cfg.values[i]),
                );
                (BidProfile::new(bids), welfare)
            })
        })
        .collect();

    let opt_welfare = optimal_welfare(&cfg.inst);
    let min_welfare = found.iter().map(|(_, w)| *w).reduce(f64::min);
    let min_ratio = min_welfare.map(|w| {
        if opt_welfare > 0.0 {
            w / opt_welfare
        } else {
            1.0
        }
    });
    let (profiles, welfares) = found.into_iter().unzip();
    Ok(EquilibriumResult {
        profiles,
        welfares,
        opt_welfare,
        min_ratio,
    })
}

/// `min_ratio >= (1 - 1/e) / mu - slack`. Vacuously true without equilibria.
pub fn verify_poa_bound(result: &EquilibriumResult, mu: f64, slack: f64) -> bool {
    result
        .min_ratio
        .is_none_or(|r| r >= ONE_MINUS_INV_E / mu - slack)
}

/// Profiles whose welfare falls below `(1 - 1/e) / mu * opt - welfare_slack`,
/// as indices into `result.profiles`.
pub fn poa_welfare_violations(
    result: &EquilibriumResult,
    mu: f64,
    welfare_slack: f64,
) -> Vec<usize> {
    let floor = ONE_MINUS_INV_E / mu * result.opt_welfare - welfare_slack;
    result
        .welfares
        .iter()
        .enumerate()
        .filter(|(_, &w)| w < floor)
        .map(|(k, _)| k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfValueEntry {
    pub buyer: usize,
    pub deviation_utility: f64,
    /// `None` for buyers without edges (threshold `+inf`).
    pub critical_bid: Option<f64>,
    pub holds: bool,
}

/// Per-buyer check of `u_i(v_i / 2, b_-i) >= v_i / 2 - t_i`.
pub fn half_value_deviation_entries(
    cfg: &GameConfig,
    bids: &BidProfile,
) -> Result<Vec<HalfValueEntry>> {
    bids.check_for(&cfg.inst)?;
    let critical = all_critical_bids(&cfg.inst, bids)?;
    let eval = Evaluator::new(cfg);
    Ok((0..cfg.n_buyers())
        .map(|i| {
            let half = cfg.values[i] / 2.0;
            let mut dev = bids.bids.clone();
            dev[i] = half;
            let u_dev = eval.utility(&dev, i);
            let t = critical.thresholds[i].value();
            let holds = t.is_none_or(|t| u_dev >= half - t);
            HalfValueEntry {
                buyer: i,
                deviation_utility: u_dev,
                critical_bid: t,
                holds,
            }
        })
        .collect())
}

pub fn half_value_deviation_check(cfg: &GameConfig, bids: &BidProfile) -> Result<bool> {
    Ok(half_value_deviation_entries(cfg, bids)?
        .iter()
        .all(|e| e.holds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(grid: f64, eps: f64) -> GameConfig {
        GameConfig::new(Instance::unit(1, 1, vec![(0, 0)]).unwrap(), grid, eps).unwrap()
    }

    fn duel(values: Vec<f64>, grid: f64, eps: f64) -> GameConfig {
        let inst = Instance::unit(2, 1, vec![(0, 0), (1, 0)]).unwrap();
        GameConfig::with_values(inst, values, grid, eps).unwrap()
    }

    fn instance_c() -> Instance {
        Instance::unit(2, 2, vec![(0, 0), (0, 1), (1, 0)]).unwrap()
    }

    #[test]
    fn utility_examples() {
        let cfg = single(0.1, 0.0);
        assert!((utility(&cfg, &vec![0.4].into(), 0).unwrap() - 0.6).abs() < 1e-15);

        let cfg = GameConfig::new(instance_c(), 0.1, 0.0).unwrap();
        let bids: BidProfile = vec![0.9, 0.5].into();
        assert!((utility(&cfg, &bids, 0).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(utility(&cfg, &bids, 1).unwrap(), 0.0);
        assert!(utility(&cfg, &bids, 2).is_err());
    }

    #[test]
    fn best_response_examples() {
        let cfg = single(0.1, 0.0);
        let (b, u) = best_response(&cfg, &vec![0.5].into(), 0).unwrap();
        assert_eq!(b, 0.1);
        assert!((u - 0.9).abs() < 1e-15);

        let cfg = duel(vec![1.0, 0.5], 0.1, 0.0);
        let (b, u) = best_response(&cfg, &vec![0.0, 0.5].into(), 0).unwrap();
        assert_eq!(cfg.grid_index(b), Some(5));
        assert!((u - 0.5).abs() < 1e-12);

        let lonely =
            GameConfig::new(Instance::unit(2, 1, vec![(0, 0)]).unwrap(), 0.1, 0.0).unwrap();
        let (b, u) = best_response(&lonely, &vec![0.3, 0.2].into(), 1).unwrap();
        assert_eq!((b, u), (0.0, 0.0));
    }

    #[test]
    fn epsilon_equilibrium_examples() {
        let cfg = single(0.1, 0.0);
        assert!(verify_epsilon_equilibrium(&cfg, &vec![0.1].into()).unwrap());
        assert!(!verify_epsilon_equilibrium(&cfg, &vec![cfg.grid_point(9)].into()).unwrap());
        assert!(verify_epsilon_equilibrium(&cfg, &vec![0.123].into()).is_err());

        let cfg = duel(vec![1.0, 0.5], 0.1, 0.0);
        let half = cfg.grid_point(5);
        assert!(verify_epsilon_equilibrium(&cfg, &vec![half, half].into()).unwrap());
    }

    #[test]
    fn single_buyer_equilibria() {
        let cfg = single(0.25, 0.0);
        let r = find_pure_equilibria(&cfg).unwrap();
        assert_eq!(r.profiles, vec![BidProfile::new(vec![0.25])]);
        assert_eq!(r.welfares, vec![1.0]);
        assert_eq!(r.min_ratio, Some(1.0));
    }

    #[test]
    fn stronger_buyer_always_wins() {
        let cfg = duel(vec![1.0, 0.5], 0.05, 0.0);
        let r = find_pure_equilibria(&cfg).unwrap();
        assert!(!r.profiles.is_empty());
        assert!(r.welfares.iter().all(|&w| w == 1.0));
        assert_eq!(r.min_ratio, Some(1.0));
    }

    #[test]
    fn search_space_guard() {
        let inst = Instance::unit(6, 1, (0..6).map(|b| (b, 0)).collect()).unwrap();
        let cfg = GameConfig::new(inst, 0.01, 0.0).unwrap();
        assert!(matches!(
            find_pure_equilibria(&cfg),
            Err(Error::SizeGuard { .. })
        ));
    }

    #[test]
    fn poa_bound_arithmetic() {
        let mk = |r: f64| EquilibriumResult {
            profiles: vec![],
            welfares: vec![],
            opt_welfare: 1.0,
            min_ratio: Some(r),
        };
        assert!(verify_poa_bound(&mk(1.0), 1.0, 0.0));
        assert!(verify_poa_bound(&mk(0.63), 1.0, 0.01));
        assert!(!verify_poa_bound(&mk(0.5), 1.0, 0.01));
    }

    #[test]
    fn half_value_examples() {
        let cfg = single(0.1, 0.0);
        let e = half_value_deviation_entries(&cfg, &vec![0.7].into()).unwrap();
        assert_eq!(e[0].deviation_utility, 0.5);
        assert_eq!(e[0].critical_bid, Some(0.0));
        assert!(e[0].holds);

        let cfg = duel(vec![1.0, 1.0], 0.1, 0.0);
        let e = half_value_deviation_entries(&cfg, &vec![0.3, 0.8].into()).unwrap();
        assert_eq!(e[0].deviation_utility, 0.0);
        assert_eq!(e[0].critical_bid, Some(0.8));
        assert!(half_value_deviation_check(&cfg, &vec![0.3, 0.8].into()).unwrap());
    }

    #[test]
    fn config_validation() {
        let inst = Instance::unit(1, 1, vec![(0, 0)]).unwrap();
        assert!(GameConfig::new(inst.clone(), 0.0, 0.0).is_err());
        assert!(GameConfig::new(inst.clone(), 0.1, -1.0).is_err());
        assert!(GameConfig::with_values(inst, vec![1.0, 2.0], 0.1, 0.0).is_err());
        assert_eq!(single(0.05, 0.0).grid_len(), 21);
    }
}
