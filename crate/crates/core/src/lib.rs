//! Federated semantic-vector embeddings over simulated edge sites.
//!
//! The crate is organised around three workflows:
//!
//! 1. **Joint training** — sites report local vocabularies, a coordinator
//!    merges them and initialises a shared embedding model, and synchronous
//!    rounds of local training + sample-weighted averaging produce one model
//!    whose vectors live in a common space ([`federation`]).
//! 2. **Space mapping** — sites train independently and a small MLP is fitted
//!    per (source, target) pair on vectors inferred from a shared public
//!    corpus, so queries can be translated between otherwise incompatible
//!    vector spaces ([`mapper`]).
//! 3. **Cross-site search and evaluation** — vector queries fan out to sites,
//!    ranked lists merge deterministically, and result overlap against a
//!    centralized baseline is scored with top-k intersection and Pearson
//!    correlation ([`search`], [`evaluation`]).
//!
//! [`corpus`] holds text/graph ingestion and biased random walks,
//! [`embedding`] the from-scratch negative-sampling trainer, and
//! [`orchestrator`] end-to-end scenarios plus the in-process message runtime
//! that stands in for real site-to-coordinator transport.
//!
//! Everything is deterministic given a seed: RNG streams are ChaCha8 keyed by
//! (seed, purpose label), collections with observable order are sorted, and
//! reruns of a scenario produce byte-identical models and reports.

pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod federation;
pub mod mapper;
pub mod orchestrator;
pub mod rng;
pub mod search;
