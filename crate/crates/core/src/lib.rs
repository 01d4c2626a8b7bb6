//! Feature hashing (the hashing trick) together with the tools to check how
//! well it preserves norms: closed-form tradeoff bounds, exhaustive exact
//! oracles for tiny instances, and a seeded Monte-Carlo grid harness.

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod projection;
pub mod rng_hash;

pub use error::{Error, Result};
pub use projection::{BucketSign, FeatureHasher, SparseVector};
