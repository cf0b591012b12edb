#pragma once

#include "osproto/data.hpp"
#include "osproto/stage1.hpp"
#include "osproto/stage2.hpp"

#include <array>
#include <filesystem>
#include <string_view>
#include <vector>

namespace osproto {

/// Top-1 accuracy with the argmax taken over closed entries only (rows = classes).
double top1_acc(const Mat& probs, const std::vector<int>& labels);

/// Pairwise (Mann-Whitney) AUROC; ties count one half.
double auroc(const std::vector<double>& open_scores, const std::vector<double>& closed_scores);

/// Open iff p(open) strictly exceeds every closed probability.
bool threshold_free_detect(const Vec& probs);

/// F1 with open as the positive class; 0 when there are no positives at all.
double f1_open(const std::vector<bool>& decisions, const std::vector<bool>& truths);

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;
};

/// Mean and 1.96 * sample_std / sqrt(n).
MeanCi ci95(const std::vector<double>& values);

enum class EvalVariant { oal_ofl, lite, naive, stage1_only, stage2_only };

EvalVariant parse_eval_variant(std::string_view s);
std::string_view to_string(EvalVariant v);

struct TaskMetrics {
  double acc = 0.0;
  double auroc = 0.0;
  double detect_acc = 0.0;
  double f1 = 0.0;
};

inline constexpr int kHistogramBins = 20;

struct Histogram {
  std::array<long, kHistogramBins> closed{};
  std::array<long, kHistogramBins> open{};

  void add(double p_open, bool is_open);
  long total() const;
};

struct MetricsReport {
  std::vector<TaskMetrics> per_task;
  MeanCi acc, auroc, detect_acc, f1;
  Histogram histogram;
  int task_count = 0;

  bool operator==(const MetricsReport& other) const;
};

struct EvalConfig {
  EvalVariant variant = EvalVariant::oal_ofl;
  EpisodeShape shape{};
  Stage2Config stage2{};  // variant / seed fields are set per task
  HeadKind head = HeadKind::euclidean;
  int task_count = 100;
  int workers = 1;
  std::uint64_t master_seed = 0;
};

/// Per-task quantities computed from predictions on Q and the open queries.
TaskMetrics task_metrics(const Prediction& closed, const std::vector<int>& closed_labels,
                         const Prediction& open, Histogram* hist = nullptr);

/// Task t samples a novel-test episode from ("eval-task", t), initializes the
/// classifier from `model`, runs the chosen Stage-2 variant, and scores Q and
/// the open queries. For stage2_only, `model.encoder` should be the pretrained
/// encoder; its open column is redrawn from ("stage2-only-init", t) and (a, b) = (1, 0).
///
/// The report does not depend on `config.workers`.
MetricsReport evaluate_tasks(const Dataset& ds, const Stage1Model& model, const EvalConfig& config);

MetricsReport aggregate(std::vector<TaskMetrics> per_task, const Histogram& hist);

/// `task,acc,auroc,detect_acc,f1` rows followed by `mean,...` and `ci95,...` footer rows.
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);
/// `bin_lo,bin_hi,closed_count,open_count`.
void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path);

}  // namespace osproto
