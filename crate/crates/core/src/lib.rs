//! Causal preference optimization of generative sequence policies from
//! direct outcome data.
//!
//! The crate pairs three value objectives for a text-generating policy with
//! a simulator of randomized text experiments in which every quantity of
//! interest can be computed exactly:
//!
//! * **CPO** maximizes the importance-weighted value estimate over a
//!   randomized dataset ([`estimators::v_ipw`]).
//! * **DR-CPO** maximizes the doubly robust estimate, which adds an
//!   outcome-model term and stays unbiased when either the randomization
//!   density or the outcome model is right ([`estimators::v_dr`]).
//! * **OO-RLHF** maximizes the outcome-model term alone
//!   ([`estimators::v_out`]).
//!
//! Policies are tabular autoregressive softmax models over fixed-length
//! texts ([`policy::Policy`]), so densities, gradients and the true value
//! `V(f)` ([`simulator::true_value`]) are exact.
//!
//! Runnable walkthroughs live in `examples/`; the `cpo` binary drives full
//! experiments from a TOML config.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod config;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod optimizer;
pub mod outcome_model;
pub mod policy;
pub mod runner;
pub mod seeds;
pub mod simulator;
pub mod textspace;

pub use error::{Error, Result};
pub use estimators::{v_dr, v_ipw, v_out, Density, ValueEstimate, WeightOptions};
pub use optimizer::{train, Objective, TrainConfig};
pub use outcome_model::OutcomeModel;
pub use policy::Policy;
pub use simulator::{confound, run_experiment, true_value, ConfounderSpec, LabeledDataset, Population};
pub use textspace::{enumerate_texts, featurize, Text, Vocab};
