#include "osproto/stage1.hpp"

#include <cmath>
#include <fstream>

namespace osproto {

void Stage1Config::validate() const {
  require(episodes >= 0, "stage1: episodes must be >= 0");
  require(lr_encoder > 0.0 && lr_head > 0.0, "stage1: learning rates must be positive");
  require(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0, "stage1: decay factor must be in (0,1]");
  require(lr_decay_interval >= 0, "stage1: decay interval must be >= 0");
  require(shape.n_open >= 1 && shape.q_open >= 1 && shape.q_closed >= 1,
          "stage1: episodes need closed and open queries");
}

int Stage1Config::effective_decay_interval() const {
  if (lr_decay_interval > 0) return lr_decay_interval;
  return std::max(1, episodes / 5);
}

double Stage1Config::lr_scale(int episode) const {
  return std::pow(lr_decay_factor, double(episode / effective_decay_interval()));
}

Stage1Result meta_train(const Dataset& ds, const EncoderParams& encoder_init,
                        const Stage1Config& config) {
  config.validate();
  encoder_init.validate();
  require(encoder_init.input_dim() == ds.dim, "meta_train: encoder input dim != dataset dim");

  Stage1Result result;
  result.model.encoder = encoder_init;
  auto init_rng = rng_stream(config.seed, "stage1-init", 0);
  result.model.head = OpenSetHead::init(encoder_init.feature_dim(), init_rng);
  auto& enc = result.model.encoder;
  auto& head = result.model.head;

  OptState enc_state;
  Mat v_phi, v_a, v_b;
  result.log.reserve(std::size_t(config.episodes));
  for (int e = 0; e < config.episodes; ++e) {
    auto rng = rng_stream(config.seed, "stage1", std::uint64_t(e));
    const Task task = sample_episode(ds, Pool::base, config.shape, rng);
    const auto grad = stage1_gradients(task, enc, head);
    const double loss = grad.loss.total();
    if (!std::isfinite(loss))
      throw Error("meta_train: non-finite loss at episode " + std::to_string(e + 1));

    const double scale = config.lr_scale(e);
    const SgdHyper enc_hyper{config.lr_encoder * scale, config.momentum, config.weight_decay};
    const SgdHyper head_hyper{config.lr_head * scale, config.momentum, config.weight_decay};
    sgd_step(enc, grad.encoder, enc_state, enc_hyper);
    sgd_step(head.c_phi, grad.c_phi, v_phi, head_hyper, "c_phi");
    sgd_step(head.a, grad.a, v_a, head_hyper, "a");
    sgd_step(head.b, grad.b, v_b, head_hyper, "b");

    result.log.push_back({e + 1, loss, enc_hyper.lr, head_hyper.lr, head.a, head.b});
  }
  return result;
}

void write_stage1_log(const std::vector<Stage1LogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write log " + path.string());
  out << "episode,loss,lr_encoder,lr_head\n";
  for (const auto& row : log)
    out << row.episode << ',' << format_double(row.loss) << ',' << format_double(row.lr_encoder)
        << ',' << format_double(row.lr_head) << '\n';
}

}  // namespace osproto
