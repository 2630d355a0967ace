//! Shared linear algebra: dense matrices, PCA, symmetric eigensolvers,
//! exact kNN search, minimum-cost assignment.

mod eig;
mod hungarian;
mod knn;
mod mat;
mod pca;
mod sparse;

pub use eig::{eig_sym_dense, eig_sym_sparse, EigenPairs};
pub use hungarian::hungarian;
pub use knn::{knn, KnnResult};
pub use mat::{dot, norm, squared_distance, Mat};
pub use pca::{pca, Pca};
pub use sparse::{SparseSym, SparseSymBuilder};
