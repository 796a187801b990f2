//! Revenue analysis for multi-stage (dynamic) auctions with i.i.d. buyers.
//!
//! - [`dist_core`]: distributions, order statistics, hazard rates, virtual values.
//! - [`myerson`]: one-shot optimal auctions with ironing.
//! - [`dynamic_lp`]: the revenue-maximizing LP over report histories.
//! - [`duality_flows`]: dual flows, induced virtual values and Lagrangian bounds.
//! - [`mhr_bounds`]: order-statistic inequalities for monotone-hazard-rate values.
//! - [`competition`]: VCG revenue, competition complexity scans and worked instances.

pub mod acceptance;
pub mod competition;
pub mod dist_core;
pub mod duality_flows;
pub mod error;
pub mod dynamic_lp;
pub mod mhr_bounds;
pub mod myerson;
pub mod quadrature;

pub use error::{Error, Result};
