#pragma once

#include "osproto/data.hpp"
#include "osproto/encoder.hpp"
#include "osproto/eval.hpp"
#include "osproto/stage1.hpp"
#include "osproto/stage2.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace osproto {

/// Every knob of a pipeline run. Keys in config files and long CLI flags share
/// one spelling (e.g. `lr-encoder = 2e-4` and `--lr-encoder 2e-4`).
struct ExperimentConfig {
  // paths
  std::filesystem::path data;
  std::filesystem::path init;        // encoder checkpoint for meta-train
  std::filesystem::path checkpoint;  // Stage-1 checkpoint for evaluate/ablate/report
  std::filesystem::path pretrained;  // pretrained encoder for the stage2-only variant
  std::filesystem::path out_dir = ".";
  std::string out;  // primary output file name for gen-data / pretrain / meta-train

  SyntheticSpec synthetic{};
  PretrainConfig pretrain{};  // layer_dims are rebuilt from dim, hidden, feature_dim
  std::vector<Eigen::Index> hidden{64, 64};
  Eigen::Index feature_dim = 16;
  std::uint64_t seed = 0;

  Stage1Config stage1{};
  Stage2Config stage2{};
  EvalVariant variant = EvalVariant::oal_ofl;
  HeadKind head = HeadKind::euclidean;
  int n_way = 5;
  int k_shot = 1;
  int queries = 15;
  int open_ways = 0;  // 0 mirrors n_way
  int task_count = 100;
  int workers = 1;
  int base_category_limit = -1;

  std::string sweep;
  std::vector<std::string> values;
  std::vector<std::string> report_variants{"stage2-only", "stage1-only", "oal-ofl"};

  /// Episode shape shared by Stage-1 and test episodes.
  EpisodeShape episode_shape() const;
  /// Stage1Config with shape and seed filled in from the shared fields.
  Stage1Config stage1_config() const;
  EvalConfig eval_config() const;
  PretrainConfig pretrain_config(Eigen::Index input_dim) const;
  void validate() const;
};

/// Applies one `key = value` setting; throws on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);
/// All recognized keys.
const std::vector<std::string>& config_keys();

/// Parses `key = value` lines with `#` comments.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path);

/// Canonical `key = value` dump (stable order), used for provenance hashing.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

/// The paper-scale schedule: 20,000 Stage-1 episodes and 300 Stage-2 iterations.
ExperimentConfig paper_defaults();

}  // namespace osproto
