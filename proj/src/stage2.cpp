#include "osproto/stage2.hpp"

#include <cmath>

namespace osproto {

HeadKind parse_head_kind(std::string_view s) {
  if (s == "euclidean") return HeadKind::euclidean;
  if (s == "linear") return HeadKind::linear;
  throw Error("unknown head kind '" + std::string(s) + "' (expected euclidean|linear)");
}

std::string_view to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "euclidean"; }

namespace {

OpenSetHead open_part(const TaskClassifier& clf) {
  return {clf.w.col(clf.n_way()), clf.a, clf.b};
}

void check_classifier(const TaskClassifier& clf, const Mat& features) {
  require(clf.w.cols() >= 2, "classifier: needs at least one closed column plus the open column");
  require(clf.w.rows() == features.rows(), "classifier: feature dim mismatch (" +
                                               std::to_string(features.rows()) + " vs " +
                                               std::to_string(clf.w.rows()) + ")");
  if (clf.kind == HeadKind::linear)
    require(clf.linear_bias.size() == clf.w.cols(), "classifier: linear bias size mismatch");
}

}  // namespace

Mat classifier_logits(const TaskClassifier& clf, const Mat& features) {
  check_classifier(clf, features);
  const int n = clf.n_way();
  if (clf.kind == HeadKind::linear) {
    Mat logits = (clf.w.transpose() * features).colwise() + clf.linear_bias;
    if (clf.closed_only) return logits.topRows(n);
    return logits;
  }
  if (clf.closed_only) {
    Mat logits(n, features.cols());
    for (int c = 0; c < n; ++c) logits.row(c) = -sq_distances(features, clf.w.col(c)).transpose();
    return logits;
  }
  return open_set_logits(features, clf.w.leftCols(n), open_part(clf));
}

void classifier_logits_backward(const TaskClassifier& clf, const Mat& features,
                                const Mat& grad_logits, ClassifierGradient& grad,
                                Mat& grad_features) {
  check_classifier(clf, features);
  const int n = clf.n_way();
  const auto rows = clf.closed_only ? n : n + 1;
  require(grad_logits.rows() == rows && grad_logits.cols() == features.cols(),
          "classifier backward: gradient shape mismatch");
  if (grad.w.size() == 0) grad.w = Mat::Zero(clf.w.rows(), clf.w.cols());
  if (grad.linear_bias.size() == 0) grad.linear_bias = Vec::Zero(clf.w.cols());
  if (grad_features.size() == 0) grad_features = Mat::Zero(features.rows(), features.cols());

  if (clf.kind == HeadKind::linear) {
    grad.w.leftCols(rows) += features * grad_logits.transpose();
    grad.linear_bias.head(rows) += grad_logits.rowwise().sum();
    grad_features += clf.w.leftCols(rows) * grad_logits;
    return;
  }
  Mat g = Mat::Zero(n + 1, features.cols());
  g.topRows(rows) = grad_logits;
  auto hg = HeadGradient::zeros(clf.w.rows(), n);
  open_set_logits_backward(features, clf.w.leftCols(n), open_part(clf), g, hg, grad_features);
  grad.w.leftCols(n) += hg.prototypes;
  grad.w.col(n) += hg.c_phi;
  grad.a += hg.a;
  grad.b += hg.b;
}

TaskClassifier init_classifier(const Task& task, const Stage1Model& model, HeadKind kind) {
  require(task.support.cols() > 0, "init_classifier: empty support set");
  const int n = task.n_way;
  const Mat feats = forward_batch(model.encoder, task.support);
  require(model.head.c_phi.size() == feats.rows(), "init_classifier: c_phi dim != feature dim");
  TaskClassifier clf;
  clf.w.resize(feats.rows(), n + 1);
  clf.w.leftCols(n) = class_means(feats, task.support_labels, n);
  clf.w.col(n) = model.head.c_phi;
  clf.a = model.head.a;
  clf.b = model.head.b;
  clf.kind = kind;
  clf.linear_bias = Vec::Zero(n + 1);
  return clf;
}

void Stage2Config::validate() const {
  require(iterations >= 0, "stage2: iterations must be >= 0");
  require(lr_encoder > 0.0, "stage2: encoder learning rate must be positive");
  require(m_open >= 0, "stage2: m_open must be >= 0");
}

double Stage2Config::classifier_lr() const {
  if (lr_classifier > 0.0) return lr_classifier;
  return variant == Stage2Variant::oal_ofl ? 2e-3 : 2e-4;
}

namespace {

Mat concat(const Mat& a, const Mat& b) {
  Mat out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

/// Weighted CE gradients: each (column, target, weight) triple contributes
/// weight * CE(logits.col, target).
struct CeTerm {
  int target;
  double weight;
};

double ce_logit_grads(const Mat& logits, const std::vector<CeTerm>& terms, Mat& grad) {
  grad = Mat::Zero(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const auto& t = terms[std::size_t(j)];
    loss += t.weight * accumulate_ce_grad(logits.col(j), t.target, t.weight, grad.col(j));
  }
  return loss;
}

Stage2Gradient ce_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                            const Mat& inputs, const std::vector<CeTerm>& terms) {
  const auto pass = forward_pass(encoder, inputs);
  const Mat logits = classifier_logits(clf, pass.output());
  Mat g;
  Stage2Gradient out;
  out.loss = ce_logit_grads(logits, terms, g);
  Mat grad_features;
  classifier_logits_backward(clf, pass.output(), g, out.classifier, grad_features);
  out.encoder = backward(encoder, pass, grad_features).params;
  return out;
}

std::vector<int> restricted_columns(int n_way, int held_out) {
  std::vector<int> cols;
  for (int c = 0; c <= n_way; ++c)
    if (c != held_out) cols.push_back(c);
  return cols;
}

TaskClassifier select_columns(const TaskClassifier& clf, const std::vector<int>& cols) {
  TaskClassifier sub = clf;
  sub.w = clf.w(Eigen::all, cols);
  if (clf.kind == HeadKind::linear) sub.linear_bias = clf.linear_bias(cols);
  return sub;
}

ClassifierGradient scatter_columns(const ClassifierGradient& sub, const TaskClassifier& full,
                                   const std::vector<int>& cols) {
  ClassifierGradient g;
  g.w = Mat::Zero(full.w.rows(), full.w.cols());
  g.linear_bias = Vec::Zero(full.w.cols());
  for (std::size_t i = 0; i < cols.size(); ++i) {
    g.w.col(cols[i]) = sub.w.col(Eigen::Index(i));
    g.linear_bias(cols[i]) = sub.linear_bias(Eigen::Index(i));
  }
  g.a = sub.a;
  g.b = sub.b;
  return g;
}

struct ClassifierOpt {
  Mat closed, open, a, b, bias;
};

void apply_update(EncoderParams& encoder, TaskClassifier& clf, const Stage2Gradient& grad,
                  OptState& enc_state, ClassifierOpt& clf_state, const Stage2Config& config) {
  const SgdHyper enc_hyper{config.lr_encoder, config.momentum, config.weight_decay};
  const SgdHyper clf_hyper{config.classifier_lr(), config.momentum, config.weight_decay};
  const int n = clf.n_way();
  sgd_step(encoder, grad.encoder, enc_state, enc_hyper);
  sgd_step(clf.w.leftCols(n), grad.classifier.w.leftCols(n), clf_state.closed, clf_hyper, "w_closed");
  if (clf.closed_only) return;
  if (!clf.frozen_open)
    sgd_step(clf.w.col(n), grad.classifier.w.col(n), clf_state.open, clf_hyper, "w_open");
  if (clf.kind == HeadKind::linear) {
    sgd_step(clf.linear_bias, grad.classifier.linear_bias, clf_state.bias, clf_hyper,
             "linear_bias");
  } else {
    sgd_step(clf.a, grad.classifier.a, clf_state.a, clf_hyper, "a");
    sgd_step(clf.b, grad.classifier.b, clf_state.b, clf_hyper, "b");
  }
}

void check_finite_loss(double loss, int iteration) {
  if (!std::isfinite(loss))
    throw Error("stage2: non-finite loss at iteration " + std::to_string(iteration + 1));
}

}  // namespace

Stage2Gradient oal_ofl_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                                 const Task& task, const Mat& base_open) {
  const auto ns = task.support.cols();
  const auto nb = base_open.cols();
  require(ns > 0, "oal_ofl: empty support set");
  std::vector<CeTerm> terms;
  for (int y : task.support_labels) terms.push_back({y, 1.0 / double(ns)});
  for (Eigen::Index j = 0; j < nb; ++j) terms.push_back({clf.n_way(), 1.0 / double(nb)});
  return ce_gradients(encoder, clf, nb > 0 ? concat(task.support, base_open) : task.support,
                      terms);
}

Stage2Gradient lite_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                              const PseudoPartition& part) {
  const int n = clf.n_way();
  require(part.held_out >= 0 && part.held_out < n, "lite: held-out class out of range");
  const auto cols = restricted_columns(n, part.held_out);
  const TaskClassifier sub = select_columns(clf, cols);
  const int open_target = sub.n_way();

  const auto nr = part.retained_support.cols();
  const auto np = part.pseudo_open_support.cols();
  std::vector<CeTerm> terms;
  for (int y : part.retained_labels)
    terms.push_back({y < part.held_out ? y : y - 1, 1.0 / double(nr)});
  for (Eigen::Index j = 0; j < np; ++j) terms.push_back({open_target, 1.0 / double(np)});
  auto g = ce_gradients(encoder, sub, concat(part.retained_support, part.pseudo_open_support),
                        terms);
  g.classifier = scatter_columns(g.classifier, clf, cols);
  return g;
}

Mat lite_restricted_probabilities(const EncoderParams& encoder, const TaskClassifier& clf,
                                  int held_out, const Mat& inputs) {
  const TaskClassifier sub = select_columns(clf, restricted_columns(clf.n_way(), held_out));
  return softmax_cols(classifier_logits(sub, forward_batch(encoder, inputs)));
}

Stage2Gradient support_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                                 const Task& task) {
  const auto ns = task.support.cols();
  require(ns > 0, "support CE: empty support set");
  std::vector<CeTerm> terms;
  for (int y : task.support_labels) terms.push_back({y, 1.0 / double(ns)});
  return ce_gradients(encoder, clf, task.support, terms);
}

Stage2Result transfer_oal_ofl(const Task& task, const Dataset& ds, const EncoderParams& encoder,
                              const TaskClassifier& init, const Stage2Config& config) {
  config.validate();
  require(!ds.split.base.empty(), "transfer_oal_ofl: base split is empty");
  Stage2Result r{encoder, init, {}};
  r.classifier.closed_only = false;
  const int m = config.m_open > 0 ? config.m_open : task.n_way * task.k_shot;
  OptState enc_state;
  ClassifierOpt clf_state;
  for (int it = 0; it < config.iterations; ++it) {
    auto rng = rng_stream(config.seed, "stage2-open", std::uint64_t(it));
    const Mat base = sample_base_openset(ds, m, rng, config.base_category_limit);
    const auto g = oal_ofl_gradients(r.encoder, r.classifier, task, base);
    check_finite_loss(g.loss, it);
    r.losses.push_back(g.loss);
    apply_update(r.encoder, r.classifier, g, enc_state, clf_state, config);
  }
  return r;
}

Stage2Result transfer_lite(const Task& task, const EncoderParams& encoder,
                           const TaskClassifier& init, const Stage2Config& config) {
  config.validate();
  require(task.n_way >= 2, "transfer_lite: need n_way >= 2");
  Stage2Result r{encoder, init, {}};
  r.classifier.closed_only = false;
  r.classifier.frozen_open = config.lite_freeze;
  OptState enc_state;
  ClassifierOpt clf_state;
  for (int it = 0; it < config.iterations; ++it) {
    Stage2Gradient g;
    if (config.lite_pseudo) {
      auto rng = rng_stream(config.seed, "stage2-pseudo", std::uint64_t(it));
      g = lite_gradients(r.encoder, r.classifier, pseudo_partition(task, rng));
    } else {
      g = support_gradients(r.encoder, r.classifier, task);
    }
    check_finite_loss(g.loss, it);
    r.losses.push_back(g.loss);
    apply_update(r.encoder, r.classifier, g, enc_state, clf_state, config);
  }
  return r;
}

Stage2Result transfer_naive(const Task& task, const EncoderParams& encoder,
                            const TaskClassifier& init, const Stage2Config& config) {
  config.validate();
  Stage2Result r{encoder, init, {}};
  r.classifier.closed_only = true;
  OptState enc_state;
  ClassifierOpt clf_state;
  for (int it = 0; it < config.iterations; ++it) {
    const auto g = support_gradients(r.encoder, r.classifier, task);
    check_finite_loss(g.loss, it);
    r.losses.push_back(g.loss);
    apply_update(r.encoder, r.classifier, g, enc_state, clf_state, config);
  }
  return r;
}

Prediction predict(const EncoderParams& encoder, const TaskClassifier& clf, const Mat& inputs) {
  const int n = clf.n_way();
  const Mat logits = classifier_logits(clf, forward_batch(encoder, inputs));
  Prediction p;
  if (clf.closed_only) {
    p.probs = Mat::Zero(n + 1, inputs.cols());
    p.probs.topRows(n) = softmax_cols(logits);
    p.open_score = -p.probs.topRows(n).colwise().maxCoeff().transpose();
  } else {
    p.probs = softmax_cols(logits);
    p.open_score = p.probs.row(n).transpose();
  }
  return p;
}

}  // namespace osproto
