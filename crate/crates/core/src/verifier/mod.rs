//! Brute-force reference implementations and randomized cross-check
//! batteries.
//!
//! The references in [`brute`] are coded straight from the definitions and
//! do not call the dynamics, equilibria or payment modules, so agreement
//! between the two is meaningful.

pub mod battery;
pub mod brute;
pub mod rng;

pub use battery::{
    check_scenario, generate_battery, generate_increasing_homogeneous, generate_scenario,
    run_battery, run_knapsack_battery, run_payment_battery, BatteryLimits, CheckOutcome,
    Counterexample, VerificationReport,
};
pub use brute::{
    brute_force_curve, brute_force_fixed_points, brute_force_knapsack, brute_force_limit,
    brute_force_min_kickstart, BruteError, Kickstart,
};
pub use rng::Lcg;
