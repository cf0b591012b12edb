#include "osproto/experiment.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

namespace osproto {

namespace fs = std::filesystem;

std::vector<std::pair<std::string, ExperimentConfig>> expand_sweep(const ExperimentConfig& cfg) {
  require(!cfg.sweep.empty(), "ablate: --sweep is required");
  require(!cfg.values.empty(), "ablate: --values is required");
  std::vector<std::pair<std::string, ExperimentConfig>> runs;
  for (const auto& v : cfg.values) {
    ExperimentConfig c = cfg;
    if (cfg.sweep == "base-categories") {
      std::size_t used = 0;
      int limit = -1;
      try {
        limit = std::stoi(v, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      require(used == v.size() && limit >= 0, "ablate: base-categories values must be >= 0");
      if (limit == 0) {
        c.variant = EvalVariant::lite;
        c.base_category_limit = -1;
      } else {
        c.variant = EvalVariant::oal_ofl;
        c.base_category_limit = limit;
      }
    } else if (cfg.sweep == "head") {
      c.variant = EvalVariant::oal_ofl;
      c.head = parse_head_kind(v);
    } else if (cfg.sweep == "lite") {
      c.variant = EvalVariant::lite;
      if (v == "pseudo+freeze") {
        c.stage2.lite_pseudo = true, c.stage2.lite_freeze = true;
      } else if (v == "pseudo") {
        c.stage2.lite_pseudo = true, c.stage2.lite_freeze = false;
      } else if (v == "freeze") {
        c.stage2.lite_pseudo = false, c.stage2.lite_freeze = true;
      } else if (v == "none") {
        c.stage2.lite_pseudo = false, c.stage2.lite_freeze = false;
      } else {
        throw Error("ablate: lite values are pseudo+freeze|pseudo|freeze|none, got '" + v + "'");
      }
    } else if (cfg.sweep == "stage") {
      c.variant = parse_eval_variant(v);
    } else {
      throw Error("ablate: unknown sweep '" + cfg.sweep +
                  "' (expected base-categories|head|lite|stage)");
    }
    runs.emplace_back(v, std::move(c));
  }
  return runs;
}

MetricsReport run_evaluation(const ExperimentConfig& cfg, const Dataset& ds) {
  require(!cfg.checkpoint.empty() || !cfg.pretrained.empty(), "evaluate: --checkpoint is required");
  Stage1Model model;
  if (cfg.variant == EvalVariant::stage2_only) {
    const auto ck = load_checkpoint(cfg.pretrained.empty() ? cfg.checkpoint : cfg.pretrained);
    model.encoder = ck.encoder;
    model.head.c_phi = Vec::Zero(ck.encoder.feature_dim());
  } else {
    require(!cfg.checkpoint.empty(), "evaluate: --checkpoint is required");
    const auto ck = load_checkpoint(cfg.checkpoint);
    require(ck.head.has_value(),
            "evaluate: checkpoint " + cfg.checkpoint.string() + " has no open-set head");
    model.encoder = ck.encoder;
    model.head = *ck.head;
  }
  require(model.encoder.input_dim() == ds.dim, "evaluate: encoder input dim != dataset dim");
  return evaluate_tasks(ds, model, cfg.eval_config());
}

namespace {

fs::path output_path(const ExperimentConfig& cfg, const std::string& fallback) {
  fs::create_directories(cfg.out_dir);
  return cfg.out_dir / (cfg.out.empty() ? fallback : cfg.out);
}

Dataset require_data(const ExperimentConfig& cfg) {
  require(!cfg.data.empty(), "--data is required");
  return load_dataset(cfg.data);
}

void print_summary(std::ostream& out, const std::string& label, const MetricsReport& r) {
  out << label << ": tasks=" << r.task_count << " acc=" << r.acc.mean << " +- "
      << r.acc.half_width << " auroc=" << r.auroc.mean << " +- " << r.auroc.half_width
      << " detect_acc=" << r.detect_acc.mean << " f1=" << r.f1.mean << '\n';
}

int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out) {
  SyntheticSpec spec = cfg.synthetic;
  spec.seed = cfg.seed;
  const auto path = output_path(cfg, "data.txt");
  const auto ds = gen_synthetic(spec);
  save_dataset(ds, path);
  out << "wrote " << ds.size() << " examples (" << ds.split.base.size() << "/"
      << ds.split.val.size() << "/" << ds.split.test.size() << " categories) to " << path.string()
      << '\n';
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg, std::ostream& out) {
  const auto ds = require_data(cfg);
  const auto result = pretrain(ds, cfg.pretrain_config(ds.dim), cfg.seed);
  Checkpoint ck;
  ck.encoder = result.encoder;
  ck.config_hash = config_hash(cfg);
  ck.seed = cfg.seed;
  const auto path = output_path(cfg, "pretrain.ckpt");
  save_checkpoint(path, ck);
  out << "pretrained encoder: train_acc=" << result.train_accuracy << " -> " << path.string()
      << '\n';
  return 0;
}

int cmd_meta_train(const ExperimentConfig& cfg, std::ostream& out) {
  const auto ds = require_data(cfg);
  EncoderParams init;
  if (!cfg.init.empty()) {
    init = load_checkpoint(cfg.init).encoder;
  } else {
    auto rng = rng_stream(cfg.seed, "stage1-encoder-init", 0);
    init = init_encoder(cfg.pretrain_config(ds.dim).layer_dims, rng);
  }
  const auto result = meta_train(ds, init, cfg.stage1_config());
  Checkpoint ck;
  ck.encoder = result.model.encoder;
  ck.head = result.model.head;
  ck.config_hash = config_hash(cfg);
  ck.seed = cfg.seed;
  ck.episodes = cfg.stage1.episodes;
  const auto path = output_path(cfg, "stage1.ckpt");
  save_checkpoint(path, ck);
  write_stage1_log(result.log, cfg.out_dir / "stage1_loss.csv");
  out << "meta-trained " << cfg.stage1.episodes << " episodes: a=" << ck.head->a
      << " b=" << ck.head->b << " -> " << path.string() << '\n';
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, std::ostream& out) {
  const auto ds = require_data(cfg);
  const auto report = run_evaluation(cfg, ds);
  fs::create_directories(cfg.out_dir);
  const std::string name(to_string(cfg.variant));
  write_metrics_csv(report, cfg.out_dir / ("metrics_" + name + ".csv"));
  write_histogram_csv(report.histogram, cfg.out_dir / ("hist_" + name + ".csv"));
  print_summary(out, name, report);
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, std::ostream& out) {
  const auto ds = require_data(cfg);
  const auto runs = expand_sweep(cfg);
  fs::create_directories(cfg.out_dir);
  std::ofstream summary(cfg.out_dir / ("ablate_" + cfg.sweep + "_summary.csv"), std::ios::binary);
  require(bool(summary), "cannot write ablation summary");
  summary << "value,variant,acc,acc_ci95,auroc,auroc_ci95,detect_acc,f1\n";
  for (const auto& [label, run_cfg] : runs) {
    const auto report = run_evaluation(run_cfg, ds);
    write_metrics_csv(report, cfg.out_dir / ("ablate_" + cfg.sweep + "_" + label + ".csv"));
    summary << label << ',' << to_string(run_cfg.variant) << ',' << format_double(report.acc.mean)
            << ',' << format_double(report.acc.half_width) << ','
            << format_double(report.auroc.mean) << ',' << format_double(report.auroc.half_width)
            << ',' << format_double(report.detect_acc.mean) << ','
            << format_double(report.f1.mean) << '\n';
    print_summary(out, cfg.sweep + "=" + label + " (" + std::string(to_string(run_cfg.variant)) + ")",
                  report);
  }
  return 0;
}

int cmd_report(const ExperimentConfig& cfg, std::ostream& out) {
  const auto ds = require_data(cfg);
  fs::create_directories(cfg.out_dir);
  for (const auto& v : cfg.report_variants) {
    ExperimentConfig c = cfg;
    c.variant = parse_eval_variant(v);
    const auto report = run_evaluation(c, ds);
    write_histogram_csv(report.histogram, cfg.out_dir / ("hist_" + v + ".csv"));
    print_summary(out, v, report);
  }
  return 0;
}

const std::map<std::string, std::string>& command_help() {
  static const std::map<std::string, std::string> help = {
      {"gen-data", "Generate a synthetic Gaussian-cluster dataset"},
      {"pretrain", "Pretrain the encoder with a linear head over base categories"},
      {"meta-train", "Open-set-aware episodic meta-training (Stage-1)"},
      {"evaluate", "Per-task transfer and open-set evaluation of one variant"},
      {"ablate", "Evaluate a sweep of variants / settings"},
      {"report", "Open-probability histograms for several variants"},
  };
  return help;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot open-set recognition with open-set prototypes"};
  app.require_subcommand(1);
  std::string config_file;
  std::map<std::string, std::map<std::string, std::string>> flag_values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, desc] : command_help()) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_file, "key = value config file; flags override it");
    auto& store = flag_values[name];
    for (const auto& key : config_keys()) sub->add_option("--" + key, store[key]);
    subs[name] = sub;
  }

  std::vector<std::string> argv_store{"osproto"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    std::string command;
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) command = name;

    ExperimentConfig cfg;
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    auto* sub = subs.at(command);
    for (const auto& key : config_keys())
      if (sub->count("--" + key) > 0) apply_setting(cfg, key, flag_values[command][key]);
    cfg.validate();

    if (command == "gen-data") return cmd_gen_data(cfg, out);
    if (command == "pretrain") return cmd_pretrain(cfg, out);
    if (command == "meta-train") return cmd_meta_train(cfg, out);
    if (command == "evaluate") return cmd_evaluate(cfg, out);
    if (command == "ablate") return cmd_ablate(cfg, out);
    if (command == "report") return cmd_report(cfg, out);
    throw Error("unknown command");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace osproto
