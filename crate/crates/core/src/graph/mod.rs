//! Skeleton topologies and the partitioned adjacency built from them.

mod adjacency;
mod topology;

pub use adjacency::{
    build_adjacency, normalize_partition, normalize_self, partition, Partition, PartitionedAdjacency, PARTITION_EPSILON,
};
pub use topology::SkeletonTopology;
