#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dinewton/types.hpp"

namespace dinewton {

/// A full dataset: design matrix X (d x n, one sample per column) plus labels.
struct SparseDataset {
  Index n = 0;  // samples
  Index d = 0;  // features
  SpMat X;      // d x n, column-major
  Vector labels;
};

enum class PartitionMode { BySamples, ByFeatures };

/// Contiguous balanced split of [0, n) or [0, d) into m blocks whose sizes
/// differ by at most one.
struct Partition {
  PartitionMode mode;
  std::vector<Index> boundaries;  // m+1 monotone offsets

  Index blocks() const { return static_cast<Index>(boundaries.size()) - 1; }
  Index begin(Index j) const { return boundaries[j]; }
  Index size(Index j) const { return boundaries[j + 1] - boundaries[j]; }
};

Partition make_partition(PartitionMode mode, Index extent, Index blocks);

/// One node's slice of the dataset.
///
/// BySamples: local is d x n_j (columns = this node's samples), labels holds
/// the n_j local labels, offset is the first global sample index.
/// ByFeatures: local is d_j x n (rows = this node's features, all samples),
/// labels holds all n labels, offset is the first global feature index.
struct DatasetShard {
  int node_id = 0;
  PartitionMode mode = PartitionMode::BySamples;
  Index global_n = 0;
  Index global_d = 0;
  Index offset = 0;
  SpMat local;
  Vector labels;

  Index local_samples() const {
    return mode == PartitionMode::BySamples ? local.cols() : global_n;
  }
  Index local_features() const {
    return mode == PartitionMode::BySamples ? global_d : local.rows();
  }
};

/// Parse libsvm text: `label idx:val idx:val ...` per line, 1-based strictly
/// ascending indices. d is the largest index seen, n the line count.
SparseDataset parse_libsvm(std::istream& in);

/// Load from a file path; names ending in `.gz` are gunzipped first.
SparseDataset load_libsvm_file(const std::string& path);

std::vector<DatasetShard> partition(const SparseDataset& ds, Index m,
                                    PartitionMode mode);

}  // namespace dinewton
