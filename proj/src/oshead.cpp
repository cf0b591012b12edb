#include "osproto/oshead.hpp"

#include <cmath>

namespace osproto {

OpenSetHead OpenSetHead::init(Eigen::Index dim, RngStream& rng) {
  OpenSetHead h;
  h.c_phi = normal_matrix(rng, dim, 1, 1.0 / std::sqrt(double(dim)));
  return h;
}

PrototypeSet prototypes(const std::vector<Mat>& groups) {
  require(!groups.empty(), "prototypes: no groups");
  const auto dim = groups.front().rows();
  PrototypeSet out;
  out.prototypes.resize(dim, Eigen::Index(groups.size()));
  for (std::size_t n = 0; n < groups.size(); ++n) {
    require(groups[n].cols() > 0, "prototypes: group " + std::to_string(n) + " is empty");
    require(groups[n].rows() == dim, "prototypes: inconsistent feature dims");
    out.prototypes.col(Eigen::Index(n)) = groups[n].rowwise().mean();
    out.category_ids.push_back(int(n));
  }
  return out;
}

Mat class_means(const Mat& features, const std::vector<int>& labels, int n_way) {
  require(std::size_t(features.cols()) == labels.size(), "class_means: label count mismatch");
  require(n_way >= 1, "class_means: n_way must be positive");
  Mat sums = Mat::Zero(features.rows(), n_way);
  Vec counts = Vec::Zero(n_way);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    require(labels[j] >= 0 && labels[j] < n_way, "class_means: label out of range");
    sums.col(labels[j]) += features.col(Eigen::Index(j));
    counts(labels[j]) += 1.0;
  }
  for (int n = 0; n < n_way; ++n) {
    require(counts(n) > 0, "class_means: category " + std::to_string(n) + " has no examples");
    sums.col(n) /= counts(n);
  }
  return sums;
}

Mat layer_task_norm(const Mat& protos, double epsilon) {
  require(protos.cols() >= 1, "layer_task_norm: empty prototype set");
  const Vec mean = protos.rowwise().mean();
  const Mat centered = protos.colwise() - mean;
  const Vec sigma = (centered.array().square().rowwise().mean()).sqrt().matrix();
  return (centered.array().colwise() / (sigma.array() + epsilon)).matrix();
}

PrototypeSet layer_task_norm(const PrototypeSet& protos, double epsilon) {
  return {layer_task_norm(protos.prototypes, epsilon), protos.category_ids};
}

Mat layer_task_norm_backward(const Mat& protos, const Mat& grad_out, double epsilon) {
  require(protos.rows() == grad_out.rows() && protos.cols() == grad_out.cols(),
          "layer_task_norm_backward: shape mismatch");
  const double n = double(protos.cols());
  const Vec mean = protos.rowwise().mean();
  const Mat centered = protos.colwise() - mean;
  const Vec sigma = (centered.array().square().rowwise().mean()).sqrt().matrix();
  Mat grad_in(protos.rows(), protos.cols());
  for (Eigen::Index j = 0; j < protos.rows(); ++j) {
    const double s = sigma(j) + epsilon;
    const double g_mean = grad_out.row(j).mean();
    grad_in.row(j) = (grad_out.row(j).array() - g_mean) / s;
    // sigma is not differentiable at 0; the centered values vanish there as well.
    if (sigma(j) > 0.0) {
      const double gu = grad_out.row(j).dot(centered.row(j));
      grad_in.row(j) -= centered.row(j) * (gu / (n * sigma(j) * s * s));
    }
  }
  return grad_in;
}

Mat open_set_logits(const Mat& features, const Mat& protos, const OpenSetHead& head) {
  require(protos.rows() == features.rows(), "open_set_logits: prototype dim != feature dim");
  require(head.c_phi.size() == features.rows(), "open_set_logits: c_phi dim != feature dim");
  const auto n = protos.cols();
  Mat logits(n + 1, features.cols());
  for (Eigen::Index c = 0; c < n; ++c)
    logits.row(c) = -sq_distances(features, protos.col(c)).transpose();
  logits.row(n) = (-(head.a * sq_distances(features, head.c_phi).array() + head.b)).transpose();
  return logits;
}

Vec class_probabilities(const Vec& feature, const PrototypeSet& protos, const OpenSetHead& head) {
  require(protos.size() >= 1, "class_probabilities: no prototypes");
  return softmax(open_set_logits(feature, protos.prototypes, head).col(0));
}

double ce_loss(const Vec& probs, int label) {
  require(label >= 0 && label < probs.size(),
          "ce_loss: label " + std::to_string(label) + " out of range");
  return -std::log(probs(label));
}

namespace {

double log_sum_exp(const Vec& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

Vec without(const Vec& v, Eigen::Index drop) {
  Vec out(v.size() - 1);
  out << v.head(drop), v.tail(v.size() - drop - 1);
  return out;
}

}  // namespace

double masked_open_probability(const Vec& logits, int true_label) {
  const auto n = logits.size() - 1;
  require(n >= 1, "masked loss: no closed classes");
  require(true_label >= 0 && true_label < n, "masked loss: true label must be a closed class");
  const Vec rest = without(logits, true_label);
  return softmax(rest)(rest.size() - 1);
}

double masked_ce_loss(const Vec& feature, const PrototypeSet& protos, const OpenSetHead& head,
                      int true_label) {
  require(protos.size() >= 1, "masked_ce_loss: N must be positive");
  const Vec logits = open_set_logits(feature, protos.prototypes, head).col(0);
  require(true_label >= 0 && true_label < protos.size(),
          "masked_ce_loss: true label must be a closed class");
  const Vec rest = without(logits, true_label);
  return log_sum_exp(rest) - rest(rest.size() - 1);
}

double accumulate_ce_grad(const Vec& logits, int label, double weight, Eigen::Ref<Vec> grad) {
  require(label >= 0 && label < logits.size(), "ce: label out of range");
  const Vec p = softmax(logits);
  grad += weight * p;
  grad(label) -= weight;
  return log_sum_exp(logits) - logits(label);
}

double accumulate_masked_grad(const Vec& logits, int true_label, double weight,
                              Eigen::Ref<Vec> grad) {
  const auto n = logits.size() - 1;
  require(true_label >= 0 && true_label < n, "masked loss: true label must be a closed class");
  const Vec rest = without(logits, true_label);
  const Vec q = softmax(rest);
  for (Eigen::Index k = 0, r = 0; k <= n; ++k) {
    if (k == true_label) continue;
    grad(k) += weight * q(r++);
  }
  grad(n) -= weight;
  return log_sum_exp(rest) - rest(rest.size() - 1);
}

HeadGradient HeadGradient::zeros(Eigen::Index dim, Eigen::Index n_way) {
  return {Mat::Zero(dim, n_way), Vec::Zero(dim), 0.0, 0.0};
}

void open_set_logits_backward(const Mat& features, const Mat& protos, const OpenSetHead& head,
                              const Mat& grad_logits, HeadGradient& grad, Mat& grad_features) {
  const auto n = protos.cols();
  require(grad_logits.rows() == n + 1 && grad_logits.cols() == features.cols(),
          "open_set_logits_backward: gradient shape mismatch");
  if (grad_features.size() == 0) grad_features = Mat::Zero(features.rows(), features.cols());
  // Closed logit -||f - c||^2: d/dc = 2 (f - c), d/df = 2 (c - f).
  for (Eigen::Index c = 0; c < n; ++c) {
    const Mat diff = features.colwise() - protos.col(c);
    const auto g = grad_logits.row(c);
    grad.prototypes.col(c) += 2.0 * (diff * g.transpose());
    grad_features -= 2.0 * (diff.array().rowwise() * g.array()).matrix();
  }
  // Open logit -(a ||f - c_phi||^2 + b).
  const Mat diff = features.colwise() - head.c_phi;
  const auto g = grad_logits.row(n);
  const Vec dist = diff.colwise().squaredNorm().transpose();
  grad.a -= g.dot(dist);
  grad.b -= g.sum();
  grad.c_phi += 2.0 * head.a * (diff * g.transpose());
  grad_features -= 2.0 * head.a * (diff.array().rowwise() * g.array()).matrix();
}

namespace {

void check_episode(const EpisodeFeatures& ep, const OpenSetHead& head) {
  require(ep.n_way >= 1, "stage1: n_way must be positive");
  require(ep.closed.cols() > 0, "stage1: episode has no closed queries");
  require(ep.open.cols() > 0, "stage1: episode has no open queries");
  require(std::size_t(ep.closed.cols()) == ep.closed_labels.size(),
          "stage1: closed label count mismatch");
  require(ep.support.rows() == ep.closed.rows() && ep.open.rows() == ep.closed.rows(),
          "stage1: feature dims differ");
  require(head.c_phi.size() == ep.closed.rows(), "stage1: c_phi dim != feature dim");
}

struct LogitGrads {
  Stage1Loss loss;
  Mat closed;
  Mat open;
};

LogitGrads episode_logit_grads(const Mat& protos, const EpisodeFeatures& ep,
                               const OpenSetHead& head) {
  const auto n = protos.cols();
  const Mat closed_logits = open_set_logits(ep.closed, protos, head);
  const Mat open_logits = open_set_logits(ep.open, protos, head);
  LogitGrads out{{}, Mat::Zero(n + 1, ep.closed.cols()), Mat::Zero(n + 1, ep.open.cols())};
  const double wq = 1.0 / double(ep.closed.cols());
  const double wo = 1.0 / double(ep.open.cols());
  for (Eigen::Index j = 0; j < ep.closed.cols(); ++j) {
    const int y = ep.closed_labels[std::size_t(j)];
    out.loss.closed_ce += wq * accumulate_ce_grad(closed_logits.col(j), y, wq, out.closed.col(j));
    out.loss.masked += wq * accumulate_masked_grad(closed_logits.col(j), y, wq, out.closed.col(j));
  }
  for (Eigen::Index j = 0; j < ep.open.cols(); ++j)
    out.loss.open_ce +=
        wo * accumulate_ce_grad(open_logits.col(j), int(n), wo, out.open.col(j));
  return out;
}

}  // namespace

Stage1Loss stage1_episode_loss(const EpisodeFeatures& ep, const OpenSetHead& head,
                               double epsilon) {
  check_episode(ep, head);
  const Mat protos = layer_task_norm(class_means(ep.support, ep.support_labels, ep.n_way), epsilon);
  return episode_logit_grads(protos, ep, head).loss;
}

Stage1FeatureGradient stage1_feature_gradients(const EpisodeFeatures& ep, const OpenSetHead& head,
                                               double epsilon) {
  check_episode(ep, head);
  const Mat raw = class_means(ep.support, ep.support_labels, ep.n_way);
  const Mat protos = layer_task_norm(raw, epsilon);
  const auto lg = episode_logit_grads(protos, ep, head);

  auto hg = HeadGradient::zeros(protos.rows(), protos.cols());
  Stage1FeatureGradient out;
  out.loss = lg.loss;
  open_set_logits_backward(ep.closed, protos, head, lg.closed, hg, out.closed);
  open_set_logits_backward(ep.open, protos, head, lg.open, hg, out.open);
  out.c_phi = hg.c_phi;
  out.a = hg.a;
  out.b = hg.b;

  const Mat grad_raw = layer_task_norm_backward(raw, hg.prototypes, epsilon);
  Vec counts = Vec::Zero(ep.n_way);
  for (int y : ep.support_labels) counts(y) += 1.0;
  out.support.resize(ep.support.rows(), ep.support.cols());
  for (std::size_t j = 0; j < ep.support_labels.size(); ++j) {
    const int y = ep.support_labels[j];
    out.support.col(Eigen::Index(j)) = grad_raw.col(y) / counts(y);
  }
  return out;
}

namespace {

Mat concat_cols(std::initializer_list<const Mat*> parts) {
  Eigen::Index cols = 0;
  for (const auto* p : parts) cols += p->cols();
  Mat out(parts.begin()[0]->rows(), cols);
  Eigen::Index at = 0;
  for (const auto* p : parts) {
    out.middleCols(at, p->cols()) = *p;
    at += p->cols();
  }
  return out;
}

}  // namespace

EpisodeFeatures encode_episode(const Task& task, const EncoderParams& encoder) {
  EpisodeFeatures ep;
  ep.n_way = task.n_way;
  ep.support = forward_batch(encoder, task.support);
  ep.support_labels = task.support_labels;
  ep.closed = forward_batch(encoder, task.closed_queries);
  ep.closed_labels = task.closed_labels;
  ep.open = forward_batch(encoder, task.open_queries);
  return ep;
}

double stage1_loss(const Task& task, const EncoderParams& encoder, const OpenSetHead& head,
                   double epsilon) {
  return stage1_episode_loss(encode_episode(task, encoder), head, epsilon).total();
}

Stage1Gradient stage1_gradients(const Task& task, const EncoderParams& encoder,
                                const OpenSetHead& head, double epsilon) {
  // One batched pass over support, closed and open inputs.
  const Mat inputs = concat_cols({&task.support, &task.closed_queries, &task.open_queries});
  const auto pass = forward_pass(encoder, inputs);
  const auto ns = task.support.cols(), nq = task.closed_queries.cols(),
             no = task.open_queries.cols();

  EpisodeFeatures ep;
  ep.n_way = task.n_way;
  ep.support = pass.output().leftCols(ns);
  ep.support_labels = task.support_labels;
  ep.closed = pass.output().middleCols(ns, nq);
  ep.closed_labels = task.closed_labels;
  ep.open = pass.output().rightCols(no);

  const auto fg = stage1_feature_gradients(ep, head, epsilon);
  const Mat grad_features = concat_cols({&fg.support, &fg.closed, &fg.open});
  Stage1Gradient out;
  out.loss = fg.loss;
  out.encoder = backward(encoder, pass, grad_features).params;
  out.c_phi = fg.c_phi;
  out.a = fg.a;
  out.b = fg.b;
  return out;
}

}  // namespace osproto
