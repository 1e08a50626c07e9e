//! Action-unit pattern analysis: annotation model, synthetic data, pattern
//! mining, evaluation metrics, imbalance statistics and a small CNN stack.

pub mod analytics;
pub mod au_model;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod pattern_mining;
pub mod rng;
pub mod synthgen;
