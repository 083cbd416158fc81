//! Buffer k-d tree: a shallow pointer-less top tree over a leaf structure of
//! rearranged reference points, searched lazily in large batches.

mod search;
mod tree;

pub use search::{
    find_leaf_batch, lazy_search, process_all_buffers, BufferConfig, Census, LazySearch, LeafStep,
    ProcessOutcome, QueryBuffers, QueryQueues, QueryState, SearchOutput, SearchStats,
};
pub use tree::{BufferKdTree, LeafStructure, TopTree};

#[cfg(test)]
mod tests;
