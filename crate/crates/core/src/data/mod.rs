//! Datasets, heterogeneous partitioning across benign clients, and the
//! per-client auxiliary holdout.

mod idx;
mod partition;
mod synthetic;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use partition::{
    partition, partition_dirichlet, partition_iid, partition_label_skew, split_auxiliary,
    AuxiliarySplit, ClientSplit, HeterogeneityScheme, PartitionPlan,
};
pub use synthetic::{blob_means, gen_synthetic_blobs};
