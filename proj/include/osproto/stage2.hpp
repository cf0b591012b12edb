#pragma once

#include "osproto/data.hpp"
#include "osproto/encoder.hpp"
#include "osproto/oshead.hpp"
#include "osproto/stage1.hpp"

#include <string_view>
#include <vector>

namespace osproto {

enum class HeadKind { euclidean, linear };

HeadKind parse_head_kind(std::string_view s);
std::string_view to_string(HeadKind k);

/// Per-task (N+1)-way classifier. Column N of `w` is the open-set classifier.
struct TaskClassifier {
  Mat w;
  double a = 1.0;
  double b = 0.0;
  HeadKind kind = HeadKind::euclidean;
  Vec linear_bias;  // N+1 entries, linear head only
  bool frozen_open = false;
  /// Closed-set-only baseline: the open column takes no part in the softmax.
  bool closed_only = false;

  int n_way() const { return int(w.cols()) - 1; }
  bool operator==(const TaskClassifier& o) const {
    return identical(w, o.w) && a == o.a && b == o.b && kind == o.kind &&
           identical(linear_bias, o.linear_bias) && frozen_open == o.frozen_open &&
           closed_only == o.closed_only;
  }
};

/// Logits for every column of `features`: (N+1) x B, or N x B when closed_only.
Mat classifier_logits(const TaskClassifier& clf, const Mat& features);

struct ClassifierGradient {
  Mat w;
  double a = 0.0;
  double b = 0.0;
  Vec linear_bias;
};

void classifier_logits_backward(const TaskClassifier& clf, const Mat& features,
                                const Mat& grad_logits, ClassifierGradient& grad,
                                Mat& grad_features);

/// w_n = support prototype under the Stage-1 encoder (no layer_task_norm),
/// w_{N+1} = c_phi, (a, b) carried over.
TaskClassifier init_classifier(const Task& task, const Stage1Model& model,
                               HeadKind kind = HeadKind::euclidean);

enum class Stage2Variant { oal_ofl, lite, naive };

struct Stage2Config {
  int iterations = 300;
  double lr_encoder = 2e-4;
  double lr_classifier = 0.0;  // <= 0 selects the variant default
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int m_open = 0;  // base open-set samples per iteration; 0 selects N*K
  Stage2Variant variant = Stage2Variant::oal_ofl;
  std::uint64_t seed = 0;
  int base_category_limit = -1;  // restrict base sampling to the first L base categories
  bool lite_pseudo = true;
  bool lite_freeze = true;

  void validate() const;
  double classifier_lr() const;
};

struct Stage2Result {
  EncoderParams encoder;
  TaskClassifier classifier;
  std::vector<double> losses;  // one per iteration, before its update
};

struct Stage2Gradient {
  double loss = 0.0;
  EncoderParams encoder;
  ClassifierGradient classifier;
};

/// Mean support CE (labels 0..N-1) plus mean CE of `base_open` toward the open class.
Stage2Gradient oal_ofl_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                                 const Task& task, const Mat& base_open);

/// Restricted head for one pseudo-partition: the held-out closed column is
/// excluded; retained support targets its own class, pseudo-open support the open class.
Stage2Gradient lite_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                              const PseudoPartition& part);
/// Probabilities of the restricted head for `inputs`; rows follow the kept closed
/// classes in increasing order, then the open class.
Mat lite_restricted_probabilities(const EncoderParams& encoder, const TaskClassifier& clf,
                                  int held_out, const Mat& inputs);

/// Support-only CE; (N+1)-way, or N-way when clf.closed_only.
Stage2Gradient support_gradients(const EncoderParams& encoder, const TaskClassifier& clf,
                                 const Task& task);

Stage2Result transfer_oal_ofl(const Task& task, const Dataset& ds, const EncoderParams& encoder,
                              const TaskClassifier& init, const Stage2Config& config);
Stage2Result transfer_lite(const Task& task, const EncoderParams& encoder,
                           const TaskClassifier& init, const Stage2Config& config);
Stage2Result transfer_naive(const Task& task, const EncoderParams& encoder,
                            const TaskClassifier& init, const Stage2Config& config);

struct Prediction {
  Mat probs;       // (N+1) x B; the open row is 0 for closed-only classifiers
  Vec open_score;  // p(open), or -max closed probability for closed-only classifiers
};

Prediction predict(const EncoderParams& encoder, const TaskClassifier& clf, const Mat& inputs);

}  // namespace osproto
