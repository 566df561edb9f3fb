//! Simulation and verification toolkit for online bipartite matching
//! auctions.
//!
//! * [`instance`]: market model, validation, generators, JSON format.
//! * [`mechanism`]: greedy winner-pays-bid auction, critical bids and
//!   counterfactual prices.
//! * [`covering`]: revenue-covering and proof-chain checks with exact
//!   matching oracles; the `1 - 1/e` deviation distribution.
//! * [`ranking`]: RANKING, its bid-based equivalent, competitive ratios.
//! * [`equilibrium`]: grid best responses, pure ε-equilibria, welfare bounds.
//! * [`cli`]: the `matchcover` command line.

pub mod cli;
pub mod covering;
pub mod equilibrium;
pub mod error;
pub mod instance;
pub mod mechanism;
pub mod ranking;

pub use covering::{ChainReport, CoveringReport, Matching};
pub use error::{Error, Result};
pub use instance::{Instance, ValidationReport};
pub use mechanism::{BidProfile, CriticalBid, CriticalBids, Outcome};
pub use ranking::{PriorityOrder, RatioEstimate};
