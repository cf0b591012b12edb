#include "osproto/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace osproto {

double top1_acc(const Mat& probs, const std::vector<int>& labels) {
  require(probs.cols() > 0 && !labels.empty(), "top1_acc: empty input");
  require(std::size_t(probs.cols()) == labels.size(), "top1_acc: row/label count mismatch");
  const auto n = probs.rows() - 1;
  require(n >= 1, "top1_acc: no closed entries");
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    require(labels[std::size_t(j)] >= 0 && labels[std::size_t(j)] < n,
            "top1_acc: label is not a closed class");
    Eigen::Index best;
    probs.col(j).head(n).maxCoeff(&best);
    if (best == labels[std::size_t(j)]) ++hits;
  }
  return double(hits) / double(labels.size());
}

double auroc(const std::vector<double>& open_scores, const std::vector<double>& closed_scores) {
  require(!open_scores.empty() && !closed_scores.empty(), "auroc: empty score list");
  // Sort closed scores once; each open score then counts strictly-lower and
  // equal closed scores by binary search. Same value as the pairwise sum.
  std::vector<double> closed = closed_scores;
  std::sort(closed.begin(), closed.end());
  double wins = 0.0;
  for (double s : open_scores) {
    const auto lo = std::lower_bound(closed.begin(), closed.end(), s);
    const auto hi = std::upper_bound(lo, closed.end(), s);
    wins += double(lo - closed.begin()) + 0.5 * double(hi - lo);
  }
  return wins / (double(open_scores.size()) * double(closed.size()));
}

bool threshold_free_detect(const Vec& probs) {
  const auto n = probs.size() - 1;
  require(n >= 1, "threshold_free_detect: no closed entries");
  return probs(n) > probs.head(n).maxCoeff();
}

double f1_open(const std::vector<bool>& decisions, const std::vector<bool>& truths) {
  require(decisions.size() == truths.size(), "f1_open: length mismatch");
  require(!decisions.empty(), "f1_open: empty input");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i] && truths[i]) ++tp;
    else if (decisions[i]) ++fp;
    else if (truths[i]) ++fn;
  }
  const long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

MeanCi ci95(const std::vector<double>& values) {
  require(!values.empty(), "ci95: empty input");
  const double n = double(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  MeanCi r{sum / n, 0.0};
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.half_width = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

EvalVariant parse_eval_variant(std::string_view s) {
  if (s == "oal-ofl") return EvalVariant::oal_ofl;
  if (s == "lite") return EvalVariant::lite;
  if (s == "naive") return EvalVariant::naive;
  if (s == "stage1-only") return EvalVariant::stage1_only;
  if (s == "stage2-only") return EvalVariant::stage2_only;
  throw Error("unknown variant '" + std::string(s) +
              "' (expected oal-ofl|lite|naive|stage1-only|stage2-only)");
}

std::string_view to_string(EvalVariant v) {
  switch (v) {
    case EvalVariant::oal_ofl: return "oal-ofl";
    case EvalVariant::lite: return "lite";
    case EvalVariant::naive: return "naive";
    case EvalVariant::stage1_only: return "stage1-only";
    case EvalVariant::stage2_only: return "stage2-only";
  }
  return "?";
}

void Histogram::add(double p_open, bool is_open) {
  auto bin = static_cast<int>(std::floor(p_open * kHistogramBins));
  bin = std::clamp(bin, 0, kHistogramBins - 1);
  (is_open ? open : closed)[std::size_t(bin)] += 1;
}

long Histogram::total() const {
  long t = 0;
  for (int i = 0; i < kHistogramBins; ++i) t += closed[std::size_t(i)] + open[std::size_t(i)];
  return t;
}

bool MetricsReport::operator==(const MetricsReport& o) const {
  auto same = [](const MeanCi& x, const MeanCi& y) {
    return x.mean == y.mean && x.half_width == y.half_width;
  };
  if (task_count != o.task_count || per_task.size() != o.per_task.size()) return false;
  for (std::size_t i = 0; i < per_task.size(); ++i) {
    const auto &x = per_task[i], &y = o.per_task[i];
    if (x.acc != y.acc || x.auroc != y.auroc || x.detect_acc != y.detect_acc || x.f1 != y.f1)
      return false;
  }
  return same(acc, o.acc) && same(auroc, o.auroc) && same(detect_acc, o.detect_acc) &&
         same(f1, o.f1) && histogram.closed == o.histogram.closed &&
         histogram.open == o.histogram.open;
}

TaskMetrics task_metrics(const Prediction& closed, const std::vector<int>& closed_labels,
                         const Prediction& open, Histogram* hist) {
  TaskMetrics m;
  m.acc = top1_acc(closed.probs, closed_labels);
  const std::vector<double> cs(closed.open_score.begin(), closed.open_score.end());
  const std::vector<double> os(open.open_score.begin(), open.open_score.end());
  m.auroc = auroc(os, cs);

  std::vector<bool> decisions, truths;
  for (const auto* pred : {&closed, &open}) {
    const bool is_open = pred == &open;
    for (Eigen::Index j = 0; j < pred->probs.cols(); ++j) {
      const Vec p = pred->probs.col(j);
      decisions.push_back(threshold_free_detect(p));
      truths.push_back(is_open);
      if (hist) hist->add(p(p.size() - 1), is_open);
    }
  }
  std::size_t right = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) right += decisions[i] == truths[i];
  m.detect_acc = double(right) / double(decisions.size());
  m.f1 = f1_open(decisions, truths);
  return m;
}

MetricsReport aggregate(std::vector<TaskMetrics> per_task, const Histogram& hist) {
  MetricsReport r;
  r.task_count = int(per_task.size());
  std::vector<double> acc, au, det, f1;
  for (const auto& t : per_task) {
    acc.push_back(t.acc);
    au.push_back(t.auroc);
    det.push_back(t.detect_acc);
    f1.push_back(t.f1);
  }
  r.acc = ci95(acc);
  r.auroc = ci95(au);
  r.detect_acc = ci95(det);
  r.f1 = ci95(f1);
  r.per_task = std::move(per_task);
  r.histogram = hist;
  return r;
}

namespace {

struct TaskOutcome {
  TaskMetrics metrics;
  Histogram hist;
};

TaskOutcome run_task(const Dataset& ds, const Stage1Model& model, const EvalConfig& config,
                     int t) {
  auto task_rng = rng_stream(config.master_seed, "eval-task", std::uint64_t(t));
  const Task task = sample_episode(ds, Pool::test, config.shape, task_rng);

  Stage2Config s2 = config.stage2;
  s2.seed = hash64("stage2-task:" + std::to_string(t), config.master_seed);

  TaskClassifier clf = init_classifier(task, model, config.head);
  EncoderParams enc = model.encoder;
  switch (config.variant) {
    case EvalVariant::stage1_only:
      break;
    case EvalVariant::oal_ofl: {
      s2.variant = Stage2Variant::oal_ofl;
      auto r = transfer_oal_ofl(task, ds, enc, clf, s2);
      enc = std::move(r.encoder);
      clf = std::move(r.classifier);
      break;
    }
    case EvalVariant::stage2_only: {
      auto init_rng = rng_stream(config.master_seed, "stage2-only-init", std::uint64_t(t));
      const auto dim = clf.w.rows();
      clf.w.col(clf.n_way()) = normal_matrix(init_rng, dim, 1, 1.0 / std::sqrt(double(dim)));
      clf.a = 1.0;
      clf.b = 0.0;
      s2.variant = Stage2Variant::oal_ofl;
      auto r = transfer_oal_ofl(task, ds, enc, clf, s2);
      enc = std::move(r.encoder);
      clf = std::move(r.classifier);
      break;
    }
    case EvalVariant::lite: {
      s2.variant = Stage2Variant::lite;
      auto r = transfer_lite(task, enc, clf, s2);
      enc = std::move(r.encoder);
      clf = std::move(r.classifier);
      break;
    }
    case EvalVariant::naive: {
      s2.variant = Stage2Variant::naive;
      auto r = transfer_naive(task, enc, clf, s2);
      enc = std::move(r.encoder);
      clf = std::move(r.classifier);
      break;
    }
  }
  TaskOutcome out;
  const auto closed = predict(enc, clf, task.closed_queries);
  const auto open = predict(enc, clf, task.open_queries);
  out.metrics = task_metrics(closed, task.closed_labels, open, &out.hist);
  return out;
}

}  // namespace

MetricsReport evaluate_tasks(const Dataset& ds, const Stage1Model& model, const EvalConfig& config) {
  require(config.task_count >= 1, "evaluate: task_count must be positive");
  require(config.workers >= 1, "evaluate: workers must be positive");
  require(config.shape.n_open >= 1 && config.shape.q_open >= 1 && config.shape.q_closed >= 1,
          "evaluate: test episodes need closed and open queries");
  model.encoder.validate();

  std::vector<std::optional<TaskOutcome>> outcomes(std::size_t(config.task_count));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::optional<std::pair<int, std::string>> failure;

  auto worker = [&] {
    for (int t = next++; t < config.task_count; t = next++) {
      try {
        outcomes[std::size_t(t)] = run_task(ds, model, config, t);
      } catch (const std::exception& e) {
        std::lock_guard lock(err_mu);
        if (!failure || t < failure->first) failure = std::make_pair(t, std::string(e.what()));
      }
    }
  };
  const int n_threads = std::min(config.workers, config.task_count);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (failure)
    throw Error("evaluate: task " + std::to_string(failure->first) + " failed: " + failure->second);

  // Reduce in task order.
  std::vector<TaskMetrics> per_task;
  Histogram hist;
  for (const auto& o : outcomes) {
    per_task.push_back(o->metrics);
    for (int b = 0; b < kHistogramBins; ++b) {
      hist.closed[std::size_t(b)] += o->hist.closed[std::size_t(b)];
      hist.open[std::size_t(b)] += o->hist.open[std::size_t(b)];
    }
  }
  return aggregate(std::move(per_task), hist);
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write metrics file " + path.string());
  out << "task,acc,auroc,detect_acc,f1\n";
  for (std::size_t t = 0; t < report.per_task.size(); ++t) {
    const auto& m = report.per_task[t];
    out << t << ',' << format_double(m.acc) << ',' << format_double(m.auroc) << ','
        << format_double(m.detect_acc) << ',' << format_double(m.f1) << '\n';
  }
  out << "mean," << format_double(report.acc.mean) << ',' << format_double(report.auroc.mean)
      << ',' << format_double(report.detect_acc.mean) << ',' << format_double(report.f1.mean)
      << '\n';
  out << "ci95," << format_double(report.acc.half_width) << ','
      << format_double(report.auroc.half_width) << ','
      << format_double(report.detect_acc.half_width) << ','
      << format_double(report.f1.half_width) << '\n';
}

void write_histogram_csv(const Histogram& hist, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write histogram file " + path.string());
  out << "bin_lo,bin_hi,closed_count,open_count\n";
  for (int b = 0; b < kHistogramBins; ++b)
    out << format_double(double(b) / kHistogramBins) << ','
        << format_double(double(b + 1) / kHistogramBins) << ',' << hist.closed[std::size_t(b)]
        << ',' << hist.open[std::size_t(b)] << '\n';
}

}  // namespace osproto
