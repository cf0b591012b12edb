#pragma once

#include "osproto/core.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace osproto {

enum class Pool { base, val, test };

struct Split {
  std::vector<int> base;
  std::vector<int> val;
  std::vector<int> test;

  const std::vector<int>& pool(Pool p) const;
};

/// Labeled inputs, one example per column of `inputs`.
///
/// Category ids are the integers 0..n_categories-1; `split` partitions them.
struct Dataset {
  Eigen::Index dim = 0;
  int n_categories = 0;
  Mat inputs;
  std::vector<int> labels;
  Split split;

  Eigen::Index size() const { return inputs.cols(); }
  /// Example indices of every category, in file order.
  const std::vector<std::vector<int>>& by_category() const { return by_category_; }
  /// All example indices belonging to categories of `p`, in category-then-file order.
  std::vector<int> pool_examples(Pool p) const;

  /// Rebuilds the per-category index and checks every invariant.
  void finalize();

 private:
  std::vector<std::vector<int>> by_category_;
};

struct SyntheticSpec {
  int n_categories = 100;
  int per_category = 60;
  Eigen::Index dim = 16;
  double mean_scale = 1.0;
  double intra_scale = 0.3;
  std::array<double, 3> split_fractions{0.64, 0.16, 0.20};
  std::uint64_t seed = 0;
};

/// Gaussian clusters: means ~ N(0, mean_scale^2 I), samples = mean + N(0, intra_scale^2 I).
Dataset gen_synthetic(const SyntheticSpec& spec);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct EpisodeShape {
  int n_way = 5;
  int k_shot = 1;
  int q_closed = 15;  // per closed category
  int n_open = 5;     // open categories
  int q_open = 15;    // per open category
};

/// One N-way K-shot open-set task. Closed labels are 0..N-1 in the order of
/// `closed_categories`; support columns are grouped by label, K per label.
struct Task {
  int n_way = 0;
  int k_shot = 0;
  Mat support;
  std::vector<int> support_labels;
  Mat closed_queries;
  std::vector<int> closed_labels;
  Mat open_queries;
  std::vector<int> closed_categories;
  std::vector<int> open_categories;

  // Dataset example indices backing each column.
  std::vector<int> support_index;
  std::vector<int> closed_index;
  std::vector<int> open_index;
};

Task sample_episode(const Dataset& ds, Pool pool, const EpisodeShape& shape, RngStream& rng);

/// `m` distinct base-split examples (uniform, without replacement), one per column.
/// With `category_limit >= 0`, only the first `category_limit` base categories are eligible.
Mat sample_base_openset(const Dataset& ds, int m, RngStream& rng, int category_limit = -1);

struct PseudoPartition {
  Mat retained_support;
  std::vector<int> retained_labels;  // original closed labels, never == held_out
  Mat pseudo_open_support;
  int held_out = -1;
};

/// Holds out one closed category (uniformly) as a pseudo open set.
PseudoPartition pseudo_partition(const Task& task, RngStream& rng);

}  // namespace osproto
