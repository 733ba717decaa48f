//! Landmark patch matching with spatial neighborhood graphs.
//!
//! Each landmark patch is embedded together with the clique formed by its
//! `K` spatially nearest same-frame neighbors. A GNN produces vertex and
//! graph embeddings, and a block-structured bilinear discriminator compares
//! the vertex embedding of one patch with the graph embedding of the other.
//!
//! Module map:
//!
//! | module | contents |
//! |---|---|
//! | [`tensorcore`] | dense tensors, reverse-mode tape, Adam, gradient checks, checkpoints |
//! | [`scenegen`] | synthetic street scenes, frames, patches, manifests, pair labels |
//! | [`graphbuild`] | K-NN neighbor selection and clique construction |
//! | [`featurize`] | patch descriptors (fixed histogram projection, tiny conv net) |
//! | [`gnn`] | GCN / GAT / GraphSAGE layers and graph embedding |
//! | [`matcher`] | ensemble embeddings, discriminator, loss, training, metrics, ablations |
//! | [`theory`] | exact finite-support checks of the information-distance bounds |
//! | [`apps`] | place recognition with Sinkhorn assignment, stereo landmark depth |
//! | [`config`] | run configuration |

pub mod apps;
pub mod config;
pub mod error;
pub mod featurize;
pub mod gnn;
pub mod graphbuild;
pub mod matcher;
pub mod rng;
pub mod scenegen;
pub mod tensorcore;
pub mod theory;

pub use error::{Error, Result};
