//! Decentralised mean-field learning on grid worlds.
//!
//! A population of agents shares a finite grid and learns, online and from
//! a single continuing run, policies that are in equilibrium with the
//! population's own state distribution. Each agent trains a private
//! Q-network with a Munchausen regression target, estimates the empirical
//! state distribution from local counts spread by gossip, and periodically
//! exchanges policy parameters with physical neighbours, adopting the most
//! promising ones by softmax choice.
//!
//! Module map:
//!
//! * [`env`]: grids, tasks, rewards, observations.
//! * [`graphs`]: radius-based communication and visibility graphs.
//! * [`mfest`]: gossip estimation of the empirical distribution.
//! * [`nn`]: from-scratch MLP, Munchausen loss, backprop, Adam.
//! * [`learner`]: the outer training loop and architecture variants.
//! * [`metrics`]: discounted returns and approximate exploitability.
//! * [`config`]: experiment configuration files.
//! * [`runner`]: multi-trial orchestration, CSV/JSON persistence.
//! * [`plot`]: SVG plots of metric curves.
//!
//! Smallest possible run:
//!
//! ```
//! use mfgmesh::env::{GridConfig, TaskKind};
//! use mfgmesh::learner::{Hyper, Population};
//!
//! let grid = GridConfig::new(4, 4, TaskKind::Cluster, 3)?;
//! let hyper = Hyper {
//!     k_iters: 1, m_steps: 4, l_steps: 2, e_steps: 2, nu: 1, batch_size: 2,
//!     ..Hyper::default()
//! };
//! let mut population = Population::new(grid, hyper, 0)?;
//! let (mean_return, _std) = population.run_iteration(0)?;
//! assert!(mean_return.is_finite());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod config;
pub mod env;
pub mod graphs;
pub mod learner;
pub mod metrics;
pub mod mfest;
pub mod nn;
pub mod plot;
pub mod runner;
