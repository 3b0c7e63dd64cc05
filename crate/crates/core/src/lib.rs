//! Heat-kernel network embeddings for knowledge-graph entities, retrofitting of
//! base KG embeddings toward them, and filtered link-prediction evaluation.
//!
//! The pipeline is:
//!
//! ```text
//! triples -> undirected graph -> normalized Laplacian -> heat matrix Psi
//!         -> pair sampler (shared neighbourhood | structural role) -> node embeddings F
//! triples -> TransE / DistMult / ComplEx -> (Q_hat, W_hat)
//! (Q_hat, F) -> retrofit -> Q -> relearn relations -> (Q, W) -> MRR / Hits@k
//! ```

pub mod cluster;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kge;
pub mod netembed;
pub mod retrofit;
pub mod synthetic;

pub use error::{Error, Result};
