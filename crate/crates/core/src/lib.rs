//! Audit toolkit for elicited probabilities: can the numbers an agent verbalizes
//! be the subjective beliefs of *any* (prospect-theoretic) random-utility
//! maximizer acting on them?
//!
//! The crate has three layers:
//!
//! - Ground truth and controls: discrete Bayesian networks with exact inference
//!   ([`bayesnet`]) and simulated rational/irrational agents ([`agents`]) whose
//!   verdicts are known by construction.
//! - Statistical primitives ([`estimators`]): mixed discrete-continuous kNN
//!   conditional mutual information, local-permutation p-values, group
//!   bootstrap CIs, exact one-sided Fisher tests, PAVA isotonic regression,
//!   and a deterministic gradient-boosted tree classifier with grouped CV.
//! - The audit battery ([`audits`]): conditional-independence, predictive
//!   sufficiency, monotone pairwise choice, prompt consistency, and
//!   law-of-iterated-expectation coherence, each returning a serializable
//!   result, plus table emitters ([`report`]).
//!
//! [`elicit`] renders prompt templates, talks to chat-completion endpoints and
//! persists campaigns; [`records`] holds the on-disk record schema shared by
//! everything.
//!
//! Everything downstream of a seed is deterministic: all sampling goes through
//! explicit [`rng`] substreams, so identical seeds give byte-identical outputs
//! regardless of thread count.

pub mod agents;
pub mod audits;
pub mod bayesnet;
pub mod elicit;
pub mod estimators;
pub mod records;
pub mod report;
pub mod rng;
pub mod schema;

pub use records::{ActionLabel, Dataset, DecisionRecord, LieTriple, Schema};
