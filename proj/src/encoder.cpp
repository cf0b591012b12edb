#include "osproto/encoder.hpp"

#include <cmath>
#include <numeric>

namespace osproto {

EncoderParams EncoderParams::zeros(const std::vector<Eigen::Index>& layer_dims) {
  require(layer_dims.size() >= 2, "encoder: need at least input and output dims");
  EncoderParams p;
  p.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    require(layer_dims[l] >= 1 && layer_dims[l + 1] >= 1, "encoder: layer dims must be positive");
    p.weights.push_back(Mat::Zero(layer_dims[l + 1], layer_dims[l]));
    p.biases.push_back(Vec::Zero(layer_dims[l + 1]));
  }
  return p;
}

EncoderParams& EncoderParams::operator+=(const EncoderParams& other) {
  require(layer_dims == other.layer_dims, "encoder: shape mismatch in accumulation");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

bool EncoderParams::operator==(const EncoderParams& other) const {
  if (layer_dims != other.layer_dims) return false;
  for (std::size_t l = 0; l < weights.size(); ++l)
    if (!identical(weights[l], other.weights[l]) || !identical(biases[l], other.biases[l]))
      return false;
  return true;
}

void EncoderParams::validate() const {
  require(layer_dims.size() >= 2, "encoder: need at least input and output dims");
  require(weights.size() + 1 == layer_dims.size() && biases.size() == weights.size(),
          "encoder: layer count does not match layer_dims");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto tag = std::to_string(l);
    require(weights[l].rows() == layer_dims[l + 1] && weights[l].cols() == layer_dims[l],
            "encoder: W" + tag + " shape mismatch");
    require(biases[l].size() == layer_dims[l + 1], "encoder: b" + tag + " shape mismatch");
    require(weights[l].allFinite(), "encoder: W" + tag + " not finite");
    require(biases[l].allFinite(), "encoder: b" + tag + " not finite");
  }
}

EncoderParams init_encoder(const std::vector<Eigen::Index>& layer_dims, RngStream& rng) {
  auto p = EncoderParams::zeros(layer_dims);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(layer_dims[l]));
    p.weights[l] = normal_matrix(rng, layer_dims[l + 1], layer_dims[l], stddev);
  }
  return p;
}

ForwardPass forward_pass(const EncoderParams& params, const Mat& inputs) {
  require(inputs.rows() == params.input_dim(),
          "encoder forward: input dim " + std::to_string(inputs.rows()) + " != " +
              std::to_string(params.input_dim()));
  ForwardPass pass;
  pass.activations.reserve(params.num_layers() + 1);
  pass.activations.push_back(inputs);
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    Mat z = (params.weights[l] * pass.activations.back()).colwise() + params.biases[l];
    if (l + 1 < params.num_layers()) z = z.cwiseMax(0.0);
    pass.activations.push_back(std::move(z));
  }
  return pass;
}

Mat forward_batch(const EncoderParams& params, const Mat& inputs) {
  return forward_pass(params, inputs).output();
}

Vec forward(const EncoderParams& params, const Vec& x) {
  return forward_batch(params, x).col(0);
}

EncoderGradient backward(const EncoderParams& params, const ForwardPass& pass,
                         const Mat& grad_features) {
  require(pass.activations.size() == params.num_layers() + 1, "encoder backward: stale pass");
  require(grad_features.rows() == params.feature_dim() &&
              grad_features.cols() == pass.output().cols(),
          "encoder backward: gradient shape mismatch");
  EncoderGradient out{params.zeros_like(), Mat()};
  Mat delta = grad_features;
  for (std::size_t l = params.num_layers(); l-- > 0;) {
    // Hidden outputs are ReLU(z); z > 0 exactly where the activation is positive.
    if (l + 1 < params.num_layers())
      delta = delta.cwiseProduct((pass.activations[l + 1].array() > 0.0).cast<double>().matrix());
    out.params.weights[l].noalias() = delta * pass.activations[l].transpose();
    out.params.biases[l] = delta.rowwise().sum();
    delta = params.weights[l].transpose() * delta;
  }
  out.inputs = std::move(delta);
  return out;
}

EncoderGradient backward(const EncoderParams& params, const Vec& x, const Vec& grad_feature) {
  return backward(params, forward_pass(params, x), Mat(grad_feature));
}

Mat& OptState::slot(std::size_t i, Eigen::Index rows, Eigen::Index cols) {
  if (velocity_.size() <= i) velocity_.resize(i + 1);
  Mat& v = velocity_[i];
  if (v.size() == 0) v = Mat::Zero(rows, cols);
  require(v.rows() == rows && v.cols() == cols, "optimizer: velocity shape changed");
  return v;
}

void sgd_step(Eigen::Ref<Mat> param, const Eigen::Ref<const Mat>& grad, Mat& velocity,
              const SgdHyper& hyper, const std::string& name) {
  require(param.rows() == grad.rows() && param.cols() == grad.cols(),
          "sgd_step: gradient shape mismatch for " + name);
  require(grad.allFinite(), "sgd_step: non-finite gradient in " + name);
  if (velocity.size() == 0) velocity = Mat::Zero(param.rows(), param.cols());
  require(velocity.rows() == param.rows() && velocity.cols() == param.cols(),
          "sgd_step: velocity shape mismatch for " + name);
  const Mat decayed = grad + hyper.weight_decay * param;
  velocity = hyper.momentum * velocity + decayed;
  param -= hyper.lr * (decayed + hyper.momentum * velocity);
}

void sgd_step(double& param, double grad, Mat& velocity, const SgdHyper& hyper,
              const std::string& name) {
  Eigen::Map<Mat> p(&param, 1, 1);
  sgd_step(p, Mat::Constant(1, 1, grad), velocity, hyper, name);
}

void sgd_step(EncoderParams& params, const EncoderParams& grads, OptState& state,
              const SgdHyper& hyper) {
  require(params.layer_dims == grads.layer_dims, "sgd_step: encoder gradient shape mismatch");
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    auto& w = params.weights[l];
    auto& b = params.biases[l];
    sgd_step(w, grads.weights[l], state.slot(2 * l, w.rows(), w.cols()), hyper,
             "W" + std::to_string(l));
    sgd_step(b, grads.biases[l], state.slot(2 * l + 1, b.size(), 1), hyper,
             "b" + std::to_string(l));
  }
}

PretrainResult pretrain(const Dataset& ds, const PretrainConfig& config, std::uint64_t seed) {
  require(ds.size() > 0, "pretrain: empty dataset");
  require(static_cast<int>(ds.split.base.size()) >= 2, "pretrain: need at least 2 base categories");
  require(config.layer_dims.front() == ds.dim, "pretrain: encoder input dim != dataset dim");
  require(config.batch_size >= 1, "pretrain: batch size must be positive");

  auto init_rng = rng_stream(seed, "pretrain-init", 0);
  PretrainResult result;
  result.encoder = init_encoder(config.layer_dims, init_rng);

  // Base categories map to head rows in split order.
  std::vector<int> head_row(ds.n_categories, -1);
  for (std::size_t i = 0; i < ds.split.base.size(); ++i) head_row[ds.split.base[i]] = int(i);
  const auto classes = static_cast<Eigen::Index>(ds.split.base.size());
  const auto feat = result.encoder.feature_dim();

  auto head_rng = rng_stream(seed, "pretrain-head", 0);
  Mat head_w = normal_matrix(head_rng, classes, feat, 1.0 / std::sqrt(double(feat)));
  Vec head_b = Vec::Zero(classes);

  std::vector<int> order = ds.pool_examples(Pool::base);
  const SgdHyper hyper{config.lr, config.momentum, config.weight_decay};
  OptState enc_state;
  Mat head_w_vel, head_b_vel;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto shuffle_rng = rng_stream(seed, "pretrain-shuffle", std::uint64_t(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const auto stop = std::min(order.size(), start + std::size_t(config.batch_size));
      const auto bs = static_cast<Eigen::Index>(stop - start);
      Mat x(ds.dim, bs);
      std::vector<int> y(bs);
      for (Eigen::Index j = 0; j < bs; ++j) {
        x.col(j) = ds.inputs.col(order[start + j]);
        y[j] = head_row[ds.labels[order[start + j]]];
      }
      const auto pass = forward_pass(result.encoder, x);
      const Mat logits = (head_w * pass.output()).colwise() + head_b;
      Mat g = softmax_cols(logits);
      for (Eigen::Index j = 0; j < bs; ++j) {
        loss_sum -= std::log(g(y[j], j));
        g(y[j], j) -= 1.0;
      }
      g /= double(bs);
      const Mat grad_hw = g * pass.output().transpose();
      const Vec grad_hb = g.rowwise().sum();
      const auto enc_grad = backward(result.encoder, pass, head_w.transpose() * g);
      sgd_step(result.encoder, enc_grad.params, enc_state, hyper);
      sgd_step(head_w, grad_hw, head_w_vel, hyper, "head_w");
      sgd_step(head_b, grad_hb, head_b_vel, hyper, "head_b");
    }
    result.epoch_loss.push_back(loss_sum / double(order.size()));
  }

  if (config.epochs > 0) {
    Mat x(ds.dim, Eigen::Index(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j) x.col(Eigen::Index(j)) = ds.inputs.col(order[j]);
    const Mat logits = (head_w * forward_batch(result.encoder, x)).colwise() + head_b;
    std::size_t correct = 0;
    for (std::size_t j = 0; j < order.size(); ++j) {
      Eigen::Index best;
      logits.col(Eigen::Index(j)).maxCoeff(&best);
      if (best == head_row[ds.labels[order[j]]]) ++correct;
    }
    result.train_accuracy = double(correct) / double(order.size());
  }
  return result;
}

}  // namespace osproto
