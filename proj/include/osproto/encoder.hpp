#pragma once

#include "osproto/core.hpp"
#include "osproto/data.hpp"

#include <string>
#include <vector>

namespace osproto {

/// MLP feature encoder: ReLU on hidden layers, identity on the output layer.
///
/// weights[l] is (layer_dims[l+1] x layer_dims[l]); biases[l] has layer_dims[l+1] entries.
/// The same struct carries parameter gradients.
struct EncoderParams {
  std::vector<Eigen::Index> layer_dims;
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  Eigen::Index input_dim() const { return layer_dims.front(); }
  Eigen::Index feature_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }

  /// Zero-valued parameters of the given shape.
  static EncoderParams zeros(const std::vector<Eigen::Index>& layer_dims);
  EncoderParams zeros_like() const { return zeros(layer_dims); }

  EncoderParams& operator+=(const EncoderParams& other);
  bool operator==(const EncoderParams& other) const;

  /// Throws unless shapes agree with layer_dims and every entry is finite.
  void validate() const;
};

/// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
EncoderParams init_encoder(const std::vector<Eigen::Index>& layer_dims, RngStream& rng);

/// Cached activations of a batched forward pass; activations[0] is the input.
struct ForwardPass {
  std::vector<Mat> activations;
  const Mat& output() const { return activations.back(); }
};

ForwardPass forward_pass(const EncoderParams& params, const Mat& inputs);
Mat forward_batch(const EncoderParams& params, const Mat& inputs);
Vec forward(const EncoderParams& params, const Vec& x);

struct EncoderGradient {
  EncoderParams params;
  Mat inputs;
};

/// Gradient of sum_b <grad_features.col(b), f(x_b)> w.r.t. parameters and inputs.
EncoderGradient backward(const EncoderParams& params, const ForwardPass& pass,
                         const Mat& grad_features);
EncoderGradient backward(const EncoderParams& params, const Vec& x, const Vec& grad_feature);

struct SgdHyper {
  double lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Per-tensor velocity buffers, zero-initialized on first touch.
class OptState {
 public:
  Mat& slot(std::size_t i, Eigen::Index rows, Eigen::Index cols);
  std::size_t size() const { return velocity_.size(); }
  const Mat& velocity(std::size_t i) const { return velocity_.at(i); }

 private:
  std::vector<Mat> velocity_;
};

/// Nesterov SGD with coupled weight decay:
///   g' = g + wd * p;  v <- mu * v + g';  p <- p - lr * (g' + mu * v)
void sgd_step(Eigen::Ref<Mat> param, const Eigen::Ref<const Mat>& grad, Mat& velocity,
              const SgdHyper& hyper, const std::string& name);
void sgd_step(double& param, double grad, Mat& velocity, const SgdHyper& hyper,
              const std::string& name);
void sgd_step(EncoderParams& params, const EncoderParams& grads, OptState& state,
              const SgdHyper& hyper);

struct PretrainConfig {
  std::vector<Eigen::Index> layer_dims{16, 64, 64, 16};
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct PretrainResult {
  EncoderParams encoder;
  double train_accuracy = 0.0;  // of the discarded linear head, after the last epoch
  std::vector<double> epoch_loss;
};

/// Trains encoder + linear softmax head over all base categories with minibatch CE.
PretrainResult pretrain(const Dataset& ds, const PretrainConfig& config, std::uint64_t seed);

}  // namespace osproto
