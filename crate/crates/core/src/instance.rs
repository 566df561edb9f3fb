//! Bipartite market model: offline buyers, online items, feasibility edges.
//!
//! Buyers are indexed `0..n_buyers`, items `0..n_items`. Items are processed
//! in `arrival_order`. A buyer's value does not depend on the item.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub n_buyers: usize,
    pub n_items: usize,
    pub edges: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    pub arrival_order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

#[derive(Deserialize)]
struct RawInstance {
    n_buyers: usize,
    n_items: usize,
    edges: Vec<(usize, usize)>,
    #[serde(default)]
    values: Option<Vec<f64>>,
    arrival_order: Vec<usize>,
}

impl Instance {
    /// Builds an instance and rejects it unless every invariant holds.
    pub fn new(
        n_buyers: usize,
        n_items: usize,
        edges: Vec<(usize, usize)>,
        values: Vec<f64>,
        arrival_order: Vec<usize>,
    ) -> Result<Self> {
        let inst = Instance {
            n_buyers,
            n_items,
            edges,
            values,
            arrival_order,
        };
        inst.check()?;
        Ok(inst)
    }

    /// Unit values and the identity arrival order.
    pub fn unit(n_buyers: usize, n_items: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(
            n_buyers,
            n_items,
            edges,
            vec![1.0; n_buyers],
            (0..n_items).collect(),
        )
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(b, j) in &self.edges {
            if b >= self.n_buyers {
                violations.push(format!(
                    "buyer index out of range: edge ({b},{j}) with n_buyers={}",
                    self.n_buyers
                ));
            }
            if j >= self.n_items {
                violations.push(format!(
                    "item index out of range: edge ({b},{j}) with n_items={}",
                    self.n_items
                ));
            }
            if !seen.insert((b, j)) {
                violations.push(format!("duplicate edge ({b},{j})"));
            }
        }

        if self.values.len() != self.n_buyers {
            violations.push(format!(
                "values has length {} but n_buyers={}",
                self.values.len(),
                self.n_buyers
            ));
        }
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                violations.push(format!(
                    "value of buyer {i} is not a finite non-negative real: {v}"
                ));
            }
        }

        let mut hit = vec![false; self.n_items];
        let mut is_perm = self.arrival_order.len() == self.n_items;
        for &j in &self.arrival_order {
            match hit.get_mut(j) {
                Some(h) if !*h => *h = true,
                _ => is_perm = false,
            }
        }
        if !is_perm {
            violations.push(format!(
                "arrival_order is not a permutation of 0..{}: {:?}",
                self.n_items, self.arrival_order
            ));
        }

        ValidationReport {
            ok: violations.is_empty(),
            violations,
        }
    }

    fn check(&self) -> Result<()> {
        let report = self.validate();
        if report.ok {
            Ok(())
        } else {
            Err(Error::Validation(report.violations))
        }
    }

    /// Feasible buyers of each item, in increasing buyer order.
    pub fn item_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_items];
        for &(b, j) in &self.edges {
            adj[j].push(b);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Feasible items of each buyer, in increasing item order.
    pub fn buyer_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_buyers];
        for &(b, j) in &self.edges {
            adj[b].push(j);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, buyer: usize) -> usize {
        self.edges.iter().filter(|&&(b, _)| b == buyer).count()
    }

    pub fn has_edge(&self, buyer: usize, item: usize) -> bool {
        self.edges.contains(&(buyer, item))
    }

    /// The market with `buyer` removed. Later buyers shift down by one, so
    /// relative index order (and hence tie-breaking) is preserved.
    pub fn without_buyer(&self, buyer: usize) -> Result<Instance> {
        if buyer >= self.n_buyers {
            return Err(Error::Parameter(format!(
                "buyer {buyer} out of range (n_buyers={})",
                self.n_buyers
            )));
        }
        let shift = |b: usize| if b > buyer { b - 1 } else { b };
        Ok(Instance {
            n_buyers: self.n_buyers - 1,
            n_items: self.n_items,
            edges: self
                .edges
                .iter()
                .filter(|&&(b, _)| b != buyer)
                .map(|&(b, j)| (shift(b), j))
                .collect(),
            values: self
                .values
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != buyer)
                .map(|(_, &v)| v)
                .collect(),
            arrival_order: self.arrival_order.clone(),
        })
    }

    pub fn with_values(mut self, values: Vec<f64>) -> Result<Instance> {
        self.values = values;
        self.check()?;
        Ok(self)
    }

    pub fn with_arrival_order(mut self, order: Vec<usize>) -> Result<Instance> {
        self.arrival_order = order;
        self.check()?;
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        self.check()?;
        Ok(serde_json::to_string_pretty(self).expect("instance serialization is infallible"))
    }

    /// Parses the instance text format. `values` defaults to all ones.
    /// Unknown top-level keys (e.g. `bids`) are ignored.
    pub fn from_json(text: &str) -> Result<Instance> {
        let raw: RawInstance = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let values = raw.values.unwrap_or_else(|| vec![1.0; raw.n_buyers]);
        Instance::new(
            raw.n_buyers,
            raw.n_items,
            raw.edges,
            values,
            raw.arrival_order,
        )
    }

    /// SHA-256 over the compact serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("instance serialization is infallible");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }
}

pub fn validate_instance(inst: &Instance) -> ValidationReport {
    inst.validate()
}

pub fn serialize(inst: &Instance) -> Result<String> {
    inst.to_json()
}

pub fn parse(text: &str) -> Result<Instance> {
    Instance::from_json(text)
}

/// Random market: each buyer/item pair is an edge independently with
/// probability `edge_prob`, values i.i.d. uniform on `[value_low, value_high]`,
/// uniformly random arrival order. Fully determined by `seed`.
pub fn gen_random(
    n_buyers: usize,
    n_items: usize,
    edge_prob: f64,
    value_low: f64,
    value_high: f64,
    seed: u64,
) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_random_with(
        &mut rng, n_buyers, n_items, edge_prob, value_low, value_high,
    )
}

/// As [`gen_random`], drawing from a caller-supplied generator.
pub fn gen_random_with<R: Rng + ?Sized>(
    rng: &mut R,
    n_buyers: usize,
    n_items: usize,
    edge_prob: f64,
    value_low: f64,
    value_high: f64,
) -> Result<Instance> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::Parameter(format!(
            "edge_prob must lie in [0,1], got {edge_prob}"
        )));
    }
    if !(value_low.is_finite()
        && value_high.is_finite()
        && 0.0 <= value_low
        && value_low <= value_high)
    {
        return Err(Error::Parameter(format!(
            "value range must satisfy 0 <= low <= high, got [{value_low}, {value_high}]"
        )));
    }

    let mut edges = Vec::new();
    for b in 0..n_buyers {
        for j in 0..n_items {
            // gen_bool(1.0) is always true and gen_bool(0.0) always false.
            if rng.gen_bool(edge_prob) {
                edges.push((b, j));
            }
        }
    }
    let values = (0..n_buyers)
        .map(|_| rng.gen_range(value_low..=value_high))
        .collect();
    let mut arrival_order: Vec<usize> = (0..n_items).collect();
    arrival_order.shuffle(rng);

    Instance::new(n_buyers, n_items, edges, values, arrival_order)
}

/// Upper-triangular market: buyer `i` can take item `j` iff `i >= j`, unit
/// values, items arrive `0, 1, .., n-1`. The identity matching is perfect.
pub fn gen_triangular(n: usize) -> Result<Instance> {
    if n == 0 {
        return Err(Error::Parameter("triangular instance needs n >= 1".into()));
    }
    let edges = (0..n).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    Instance::unit(n, n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(
        n_buyers: usize,
        n_items: usize,
        edges: Vec<(usize, usize)>,
        order: Vec<usize>,
    ) -> Instance {
        Instance {
            n_buyers,
            n_items,
            edges,
            values: vec![1.0; n_buyers],
            arrival_order: order,
        }
    }

    #[test]
    fn minimal_instance_is_valid() {
        let r = raw(1, 1, vec![(0, 0)], vec![0]).validate();
        assert!(r.ok);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn item_out_of_range() {
        let r = raw(1, 1, vec![(0, 5)], vec![0]).validate();
        assert!(!r.ok);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].contains("item index out of range"));
    }

    #[test]
    fn repeated_arrival_is_not_a_permutation() {
        let r = raw(1, 2, vec![], vec![0, 0]).validate();
        assert!(!r.ok);
        assert_eq!(r.violations.len(), 1);
        assert!(r.violations[0].contains("not a permutation"));
    }

    #[test]
    fn duplicate_edges_and_bad_values_are_reported() {
        let mut inst = raw(2, 1, vec![(0, 0), (0, 0)], vec![0]);
        inst.values = vec![-1.0, f64::NAN];
        let r = inst.validate();
        assert_eq!(r.violations.len(), 3, "{:?}", r.violations);
    }

    #[test]
    fn random_generator_extremes() {
        let full = gen_random(4, 5, 1.0, 0.0, 1.0, 3).unwrap();
        assert_eq!(full.edges.len(), 20);
        let empty = gen_random(4, 5, 0.0, 0.0, 1.0, 3).unwrap();
        assert!(empty.edges.is_empty());
        assert_eq!(
            gen_random(6, 6, 0.5, 0.2, 0.7, 11),
            gen_random(6, 6, 0.5, 0.2, 0.7, 11)
        );
        assert!(full.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn random_generator_rejects_bad_parameters() {
        assert!(matches!(
            gen_random(2, 2, 1.5, 0.0, 1.0, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            gen_random(2, 2, 0.5, 1.0, 0.5, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            gen_random(2, 2, 0.5, -0.1, 0.5, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn triangular_small_cases() {
        assert_eq!(gen_triangular(1).unwrap().edges, vec![(0, 0)]);
        assert_eq!(
            gen_triangular(2).unwrap().edges,
            vec![(0, 0), (1, 0), (1, 1)]
        );
        assert_eq!(gen_triangular(3).unwrap().edges.len(), 6);
        assert!(gen_triangular(0).is_err());
    }

    #[test]
    fn round_trip_triangular() {
        let inst = gen_triangular(2).unwrap();
        assert_eq!(parse(&serialize(&inst).unwrap()).unwrap(), inst);
    }

    #[test]
    fn missing_arrival_order_is_a_parse_error() {
        let err = parse(r#"{"n_buyers":1,"n_items":1,"edges":[[0,0]]}"#).unwrap_err();
        match err {
            Error::Parse { message, line, .. } => {
                assert!(message.contains("arrival_order"));
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_edge_surfaces_as_validation_error() {
        let err =
            parse(r#"{"n_buyers":1,"n_items":1,"edges":[[0,9]],"arrival_order":[0]}"#).unwrap_err();
        assert!(matches!(err, Error::Validation(v) if v[0].contains("item index out of range")));
    }

    #[test]
    fn values_default_to_one() {
        let inst =
            parse(r#"{"n_buyers":3,"n_items":1,"edges":[],"arrival_order":[0],"bids":[1,2,3]}"#)
                .unwrap();
        assert_eq!(inst.values, vec![1.0; 3]);
    }

    #[test]
    fn removing_a_buyer_shifts_indices() {
        let inst = Instance::unit(3, 2, vec![(0, 0), (1, 1), (2, 0)]).unwrap();
        let sub = inst.without_buyer(1).unwrap();
        assert_eq!(sub.n_buyers, 2);
        assert_eq!(sub.edges, vec![(0, 0), (1, 0)]);
        assert!(inst.without_buyer(3).is_err());
    }
}
