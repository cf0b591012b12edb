#pragma once

#include "osproto/encoder.hpp"
#include "osproto/oshead.hpp"
#include "osproto/stage2.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace osproto {

/// Text checkpoint: header `OSPROTO-CKPT v1`, then `key = value` lines with
/// tensors stored row-major as shortest round-trip decimals.
struct Checkpoint {
  EncoderParams encoder;
  std::optional<OpenSetHead> head;
  std::optional<TaskClassifier> classifier;
  std::string config_hash;
  std::uint64_t seed = 0;
  long episodes = 0;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr const char* kCheckpointHeader = "OSPROTO-CKPT v1";

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

}  // namespace osproto
