//! Exact batched k-nearest-neighbor search with buffer k-d trees.
//!
//! Queries descend a shallow top tree lazily: each one is parked in the
//! buffer of the leaf it reaches, and full buffers are scanned in bulk by a
//! simulated memory-constrained device that streams the leaf structure in
//! chunks through two command queues. Brute-force and classic k-d tree
//! engines give identical results and serve as baselines.

pub mod brute;
pub mod buffer_tree;
pub mod device;
pub mod error;
pub mod io;
pub mod kdtree;
pub mod neighbors;
pub mod points;
pub mod scheduler;

pub use brute::{brute_knn, brute_knn_chunked, brute_knn_counted};
pub use buffer_tree::{lazy_search, BufferConfig, BufferKdTree};
pub use device::{Device, DeviceSpec};
pub use error::{Error, Result};
pub use kdtree::KdTree;
pub use neighbors::{Neighbor, NeighborList, SearchParams};
pub use points::{sq_euclidean, PointMatrix};
pub use scheduler::{chunk_queries, plan_chunks, run_multi_device, ChunkPlan, DeviceFleet};
