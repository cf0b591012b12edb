#pragma once

#include "osproto/checkpoint.hpp"
#include "osproto/config.hpp"
#include "osproto/eval.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace osproto {

/// Expands `cfg.sweep` over `cfg.values` into labeled evaluation configs.
///
/// Sweeps: `base-categories` (0 runs lite, L > 0 runs oal-ofl restricted to L
/// base categories), `head` (euclidean | linear), `lite` (pseudo+freeze |
/// pseudo | freeze | none), `stage` (any evaluate variant).
std::vector<std::pair<std::string, ExperimentConfig>> expand_sweep(const ExperimentConfig& cfg);

/// Loads the models a config refers to and runs evaluate_tasks.
MetricsReport run_evaluation(const ExperimentConfig& cfg, const Dataset& ds);

/// Entry point shared by the CLI binary and tests. `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace osproto
