//! Participation dynamics for federated learning with network effects.
//!
//! Clients join a federation when the expected improvement in their
//! estimate outweighs their cost. The crate computes those utility gains,
//! runs the best-response dynamic, finds and classifies the self-fulfilling
//! coalition sizes, and plans subsidies that push the coalition to its
//! largest equilibrium.

pub mod cli;
pub mod dynamics;
pub mod equilibria;
pub mod format;
pub mod model;
pub mod payment;
pub mod utility;
pub mod verifier;
