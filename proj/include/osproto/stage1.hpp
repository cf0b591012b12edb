#pragma once

#include "osproto/data.hpp"
#include "osproto/encoder.hpp"
#include "osproto/oshead.hpp"

#include <filesystem>
#include <vector>

namespace osproto {

struct Stage1Config {
  int episodes = 2000;
  EpisodeShape shape{};
  double lr_encoder = 2e-4;
  double lr_head = 2e-5;
  double lr_decay_factor = 0.5;
  int lr_decay_interval = 0;  // 0 selects episodes / 5
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  void validate() const;
  int effective_decay_interval() const;
  /// Learning-rate multiplier in effect at (0-based) episode e.
  double lr_scale(int episode) const;
};

struct Stage1LogRow {
  int episode = 0;  // 1-based
  double loss = 0.0;
  double lr_encoder = 0.0;
  double lr_head = 0.0;
  double a = 0.0;
  double b = 0.0;
};

/// Encoder plus open-set head: the product of meta-training.
struct Stage1Model {
  EncoderParams encoder;
  OpenSetHead head;
};

struct Stage1Result {
  Stage1Model model;
  std::vector<Stage1LogRow> log;
};

/// Episodic open-set-aware meta-training on the base split. Episode e samples
/// from stream ("stage1", e); c_phi is initialized from ("stage1-init", 0).
Stage1Result meta_train(const Dataset& ds, const EncoderParams& encoder_init,
                        const Stage1Config& config);

/// CSV `episode,loss,lr_encoder,lr_head`.
void write_stage1_log(const std::vector<Stage1LogRow>& log, const std::filesystem::path& path);

}  // namespace osproto
