#pragma once

#include "osproto/core.hpp"
#include "osproto/data.hpp"
#include "osproto/encoder.hpp"

#include <vector>

namespace osproto {

// Throughout, closed classes are indexed 0..N-1 and the open class is index N
// (the last entry of every probability / logit vector).

inline constexpr double kLayerTaskNormEps = 1e-5;

/// Learnable open-set prototype with calibration scalars for its distance.
struct OpenSetHead {
  Vec c_phi;
  double a = 1.0;
  double b = 0.0;

  /// c_phi ~ N(0, 1/D) per coordinate, (a, b) = (1, 0).
  static OpenSetHead init(Eigen::Index dim, RngStream& rng);
  bool operator==(const OpenSetHead& o) const {
    return identical(c_phi, o.c_phi) && a == o.a && b == o.b;
  }
};

struct PrototypeSet {
  Mat prototypes;  // D x N, one column per closed category
  std::vector<int> category_ids;

  Eigen::Index size() const { return prototypes.cols(); }
};

/// Mean feature of each group; group n is a D x K_n matrix.
PrototypeSet prototypes(const std::vector<Mat>& groups);
/// Mean feature per label for columns of `features` labeled 0..n_way-1.
Mat class_means(const Mat& features, const std::vector<int>& labels, int n_way);

/// Per-dimension standardization across the prototype set (population std).
Mat layer_task_norm(const Mat& protos, double epsilon = kLayerTaskNormEps);
PrototypeSet layer_task_norm(const PrototypeSet& protos, double epsilon = kLayerTaskNormEps);
/// Vector-Jacobian product of layer_task_norm at `protos`.
Mat layer_task_norm_backward(const Mat& protos, const Mat& grad_out,
                             double epsilon = kLayerTaskNormEps);

/// (N+1) x B logits: -d(c_n, f) for closed classes, -(a d(c_phi, f) + b) for the open class.
Mat open_set_logits(const Mat& features, const Mat& protos, const OpenSetHead& head);

Vec class_probabilities(const Vec& feature, const PrototypeSet& protos, const OpenSetHead& head);

double ce_loss(const Vec& probs, int label);

/// Open-class probability of the softmax restricted to all logits except `true_label`.
double masked_open_probability(const Vec& logits, int true_label);
double masked_ce_loss(const Vec& feature, const PrototypeSet& protos, const OpenSetHead& head,
                      int true_label);

/// Adds weight * d(CE)/d(logits) into `grad`; returns CE.
double accumulate_ce_grad(const Vec& logits, int label, double weight, Eigen::Ref<Vec> grad);
/// Adds weight * d(masked CE)/d(logits) into `grad`; returns the masked CE.
double accumulate_masked_grad(const Vec& logits, int true_label, double weight,
                              Eigen::Ref<Vec> grad);

struct HeadGradient {
  Mat prototypes;
  Vec c_phi;
  double a = 0.0;
  double b = 0.0;

  static HeadGradient zeros(Eigen::Index dim, Eigen::Index n_way);
};

/// Backpropagates logit gradients through open_set_logits, accumulating into
/// `grad` and `grad_features`.
void open_set_logits_backward(const Mat& features, const Mat& protos, const OpenSetHead& head,
                              const Mat& grad_logits, HeadGradient& grad, Mat& grad_features);

/// Encoded episode: features are columns, labels index closed categories.
struct EpisodeFeatures {
  int n_way = 0;
  Mat support;
  std::vector<int> support_labels;
  Mat closed;
  std::vector<int> closed_labels;
  Mat open;
};

struct Stage1Loss {
  double open_ce = 0.0;    // mean CE of open queries toward the open class
  double closed_ce = 0.0;  // mean CE of closed queries
  double masked = 0.0;     // mean masked CE of closed queries
  double total() const { return open_ce + closed_ce + masked; }
};

Stage1Loss stage1_episode_loss(const EpisodeFeatures& ep, const OpenSetHead& head,
                               double epsilon = kLayerTaskNormEps);

struct Stage1FeatureGradient {
  Stage1Loss loss;
  Mat support;
  Mat closed;
  Mat open;
  Vec c_phi;
  double a = 0.0;
  double b = 0.0;
};

Stage1FeatureGradient stage1_feature_gradients(const EpisodeFeatures& ep, const OpenSetHead& head,
                                               double epsilon = kLayerTaskNormEps);

EpisodeFeatures encode_episode(const Task& task, const EncoderParams& encoder);
double stage1_loss(const Task& task, const EncoderParams& encoder, const OpenSetHead& head,
                   double epsilon = kLayerTaskNormEps);

struct Stage1Gradient {
  Stage1Loss loss;
  EncoderParams encoder;
  Vec c_phi;
  double a = 0.0;
  double b = 0.0;
};

/// Full analytic gradient of the episode loss through prototypes,
/// layer_task_norm and the encoder.
Stage1Gradient stage1_gradients(const Task& task, const EncoderParams& encoder,
                                const OpenSetHead& head, double epsilon = kLayerTaskNormEps);

}  // namespace osproto
