#include "mmsf/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "mmsf/datagen.hpp"
#include "mmsf/errors.hpp"
#include "mmsf/metrics.hpp"
#include "mmsf/model.hpp"
#include "mmsf/trainer.hpp"

namespace fs = std::filesystem;

namespace mmsf::cli {

namespace {

std::vector<int> parse_sizes(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

void cmd_gen(const std::string& kind, const std::string& config_path,
             const std::string& out_dir) {
  io::RunConfig cfg = config_path.empty() ? io::RunConfig{} : io::load_config_file(config_path);
  if (kind == "classification") {
    auto data = data::make_classification(cfg.gen_classification, cfg.seed);
    data::write_classification(data, out_dir);
    std::cout << "wrote " << data.bags.size() << " bags to " << out_dir << "\n";
  } else if (kind == "survival") {
    auto data = data::make_survival(cfg.gen_survival, cfg.seed);
    data::write_survival(data, out_dir);
    std::cout << "wrote " << data.bags.size() << " patients to " << out_dir << "\n";
  } else {
    throw ConfigError("gen: kind must be classification|survival");
  }
}

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir) {
  io::RunConfig cfg = io::load_config_file(config_path);
  train::TrainResult result;
  if (cfg.task == objectives::Task::Classification) {
    auto data = data::load_classification(data_dir);
    result = train::train_classification(data, cfg);
  } else {
    auto data = data::load_survival(data_dir, cfg.clinical.fields);
    result = train::train_survival(data, cfg);
  }
  fs::create_directories(out_dir);
  io::save_checkpoint((fs::path(out_dir) / "checkpoint.mmck").string(), result.best);
  io::write_text_file((fs::path(out_dir) / "history.csv").string(),
                      train::history_csv(result));
  std::cout << "best " << result.metric_name << " = "
            << io::format_double(result.best_metric) << " at epoch " << result.best_epoch
            << " (" << result.epochs_run << " epochs run)\n";
}

void cmd_eval(const std::string& ck_path, const std::string& data_dir,
              const std::string& out_dir) {
  io::Checkpoint ck = io::load_checkpoint(ck_path);
  fs::create_directories(out_dir);
  auto pc = metrics::param_count(ck.store);
  std::string m = "metric,value\n";
  if (ck.config.task == objectives::Task::Classification) {
    auto data = data::load_classification(data_dir);
    auto [train_idx, val_idx] = train::split_indices(data.bags.size(), ck.config);
    auto ev = train::eval_classification(ck, data, val_idx);
    m += "acc," + io::format_double(ev.acc) + "\n";
    m += "auc," + io::format_double(ev.auc) + "\n";
    m += "n_val," + std::to_string(val_idx.size()) + "\n";
    std::cout << "acc = " << ev.acc << ", auc = " << ev.auc << "\n";
  } else {
    auto data = data::load_survival(data_dir, ck.config.clinical.fields);
    auto [train_idx, val_idx] = train::split_indices(data.bags.size(), ck.config);
    auto ev = train::eval_survival(ck, data, val_idx);
    m += "c_index," + io::format_double(ev.c_index) + "\n";
    m += "n_val," + std::to_string(val_idx.size()) + "\n";
    // Median-risk stratification, KM curves, log-rank.
    auto groups = metrics::stratify_by_risk(ev.risks);
    std::vector<objectives::SurvivalLabel> high, low;
    for (size_t i = 0; i < groups.size(); ++i)
      (groups[i] ? high : low).push_back(ev.labels[i]);
    std::vector<io::NamedKmCurve> curves;
    if (!high.empty()) curves.emplace_back("high", metrics::km_estimate(high));
    if (!low.empty()) curves.emplace_back("low", metrics::km_estimate(low));
    io::write_km_csv((fs::path(out_dir) / "km.csv").string(), curves);
    io::write_km_svg((fs::path(out_dir) / "km.svg").string(), curves);
    try {
      auto lr = metrics::log_rank(high, low);
      m += "logrank_chi2," + io::format_double(lr.chi_square) + "\n";
      m += "logrank_p," + io::format_double(lr.p_value) + "\n";
    } catch (const DataError&) {
      m += "logrank_chi2,nan\nlogrank_p,nan\n";
    }
    std::cout << "c-index = " << ev.c_index << "\n";
  }
  m += "param_count," + std::to_string(pc.scalars) + "\n";
  m += "model_size_mb," + io::format_double(pc.megabytes()) + "\n";
  io::write_text_file((fs::path(out_dir) / "eval_metrics.csv").string(), m);
}

void cmd_scores(const std::string& ck_path, const std::string& bag_path,
                const std::string& out_csv) {
  io::Checkpoint ck = io::load_checkpoint(ck_path);
  graph::PatchBag bag = io::read_bag(bag_path);
  graph::SpatialGraph g;
  if (ck.config.graph.enabled)
    g = graph::build_graph(bag, ck.config.graph.tau_spatial, ck.config.graph.tau_tissue);
  num::ParameterStore<float> store = ck.store;
  model::Model<float> net(ck.config, bag.feature_dim(), ck.schema, store);
  ad::Tape<float> tape;
  model::Ctx<float> ctx(tape, store);
  auto scores = net.patch_scores(ctx, bag, ck.config.graph.enabled ? &g : nullptr);
  std::string out = "patch_index,x,y,score\n";
  for (int i = 0; i < bag.num_patches(); ++i) {
    out += std::to_string(i) + "," + io::format_double(double(bag.coords(i, 0))) + "," +
           io::format_double(double(bag.coords(i, 1))) + "," +
           io::format_double(double(scores(i, 0))) + "\n";
  }
  io::write_text_file(out_csv, out);
  std::cout << "wrote " << bag.num_patches() << " patch scores to " << out_csv << "\n";
}

void cmd_probe(const std::string& sizes_csv, const std::string& out_csv, int width,
               int depth) {
  mil::SsmBlockConfig cfg;
  cfg.depth = depth;
  cfg.state_dim = 16;
  auto rep = mil::probe_complexity(parse_sizes(sizes_csv), width, cfg, 42);
  std::string out = "n,seconds,doubling_ratio\n";
  for (size_t i = 0; i < rep.points.size(); ++i) {
    out += std::to_string(rep.points[i].n) + "," +
           io::format_double(rep.points[i].seconds) + ",";
    if (i > 0) out += io::format_double(rep.doubling_ratios[i - 1]);
    out += "\n";
  }
  io::write_text_file(out_csv, out);
  std::cout << "fitted exponent p = " << rep.fitted_exponent << "\n";
  for (size_t i = 0; i + 1 < rep.points.size(); ++i)
    std::cout << rep.points[i].n << " -> " << rep.points[i + 1].n << ": ratio "
              << rep.doubling_ratios[i] << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"multitask multimodal bag-of-patches pipeline"};
  app.require_subcommand(1);

  std::string gen_kind, config_path, data_dir, out_dir, ck_path, bag_path, out_csv;
  std::string sizes = "4096,8192,16384";
  int probe_width = 32, probe_depth = 2;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("kind", gen_kind, "classification|survival")->required();
  gen->add_option("--config", config_path, "run config file");
  gen->add_option("--out", out_dir, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model (task from config)");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  eval->add_option("--checkpoint", ck_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--out", out_dir, "output directory")->required();

  auto* scores = app.add_subcommand("scores", "export per-patch selection scores");
  scores->add_option("--checkpoint", ck_path, "checkpoint file")->required();
  scores->add_option("--bag", bag_path, "bag feature file")->required();
  scores->add_option("--out", out_csv, "output csv")->required();

  auto* probe = app.add_subcommand("probe-complexity", "time the encoder across bag sizes");
  probe->add_option("--sizes", sizes, "comma-separated sizes (each >= 1024)");
  probe->add_option("--out", out_csv, "output csv")->required();
  probe->add_option("--width", probe_width, "encoder width");
  probe->add_option("--depth", probe_depth, "encoder depth");

  std::vector<const char*> argv;
  argv.push_back("mmsf");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(int(argv.size()), argv.data());
    if (*gen) cmd_gen(gen_kind, config_path, out_dir);
    if (*train) cmd_train(config_path, data_dir, out_dir);
    if (*eval) cmd_eval(ck_path, data_dir, out_dir);
    if (*scores) cmd_scores(ck_path, bag_path, out_csv);
    if (*probe) cmd_probe(sizes, out_csv, probe_width, probe_depth);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mmsf::cli
