#include "mmsf/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mmsf/errors.hpp"

namespace mmsf::io {

void TrainerConfig::validate() const {
  if (epochs < 1) throw ConfigError("trainer.epochs must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("trainer.gamma must be in (0,1)");
  if (min_lr > base_lr) throw ConfigError("trainer.min_lr must be <= base_lr");
  if (!(split_fraction > 0.0 && split_fraction < 1.0))
    throw ConfigError("trainer.split_fraction must be in (0,1)");
  if (warmup_epochs < 0 || step_size < 1 || patience < 1)
    throw ConfigError("trainer schedule values out of range");
  if (base_lr <= 0.0 || weight_decay < 0.0) throw ConfigError("trainer lr/decay out of range");
}

void RunConfig::validate() const {
  trainer.validate();
  loss.validate();
  fusion.validate();
  mil.block.validate();
  if (mil.lambda < 1) throw ConfigError("mil.lambda must be >= 1");
  graph.encoder.validate();
  if (!(graph.tau_spatial > 0.0)) throw ConfigError("graph.tau_spatial must be > 0");
  if (graph.tau_tissue < -1.0 || graph.tau_tissue > 1.0)
    throw ConfigError("graph.tau_tissue must be in [-1,1]");
  if (clinical.enabled && clinical.fields.empty())
    throw ConfigError("clinical.enabled requires clinical.fields");
  if (clinical.hidden_dim < 1) throw ConfigError("clinical.hidden_dim must be >= 1");
}

std::vector<clinical::FieldSpec> parse_field_specs(const std::string& text) {
  std::vector<clinical::FieldSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto pos = item.find(':');
    if (pos == std::string::npos)
      throw ConfigError("clinical.fields entry '" + item + "' must be name:kind");
    clinical::FieldSpec spec;
    spec.name = item.substr(0, pos);
    std::string kind = item.substr(pos + 1);
    if (kind == "numeric")
      spec.kind = clinical::FieldKind::Numeric;
    else if (kind == "categorical")
      spec.kind = clinical::FieldKind::Categorical;
    else
      throw ConfigError("clinical field kind '" + kind + "' must be numeric|categorical");
    if (spec.name.empty()) throw ConfigError("clinical field with empty name");
    out.push_back(std::move(spec));
  }
  return out;
}

std::string format_field_specs(const std::vector<clinical::FieldSpec>& fields) {
  std::string s;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) s += ",";
    s += fields[i].name;
    s += fields[i].kind == clinical::FieldKind::Numeric ? ":numeric" : ":categorical";
  }
  return s;
}

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse number '" + v + "'");
  }
}

int64_t to_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    long long d = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': cannot parse integer '" + v + "'");
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': cannot parse bool '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"task.type",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.task = objectives::parse_task(v);
       }},
      {"task.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.seed = uint64_t(to_int(v, k));
       }},
      {"graph.enabled",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.enabled = to_bool(v, k);
       }},
      {"graph.tau_spatial",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.tau_spatial = to_double(v, k);
       }},
      {"graph.tau_tissue",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.tau_tissue = to_double(v, k);
       }},
      {"graph.model",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "gcn")
           c.graph.encoder.model_kind = graph::GraphEncoderConfig::Kind::GCN;
         else if (v == "gat")
           c.graph.encoder.model_kind = graph::GraphEncoderConfig::Kind::GAT;
         else
           throw ConfigError("key '" + k + "': expected gcn|gat, got '" + v + "'");
       }},
      {"graph.hidden_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.encoder.hidden_dim = int(to_int(v, k));
       }},
      {"graph.out_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.encoder.out_dim = int(to_int(v, k));
       }},
      {"graph.heads",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.encoder.heads = int(to_int(v, k));
       }},
      {"graph.leaky_slope",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.encoder.leaky_slope = to_double(v, k);
       }},
      {"graph.dropout",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.graph.encoder.dropout = to_double(v, k);
       }},
      {"clinical.enabled",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.clinical.enabled = to_bool(v, k);
       }},
      {"clinical.hidden_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.clinical.hidden_dim = int(to_int(v, k));
       }},
      {"clinical.reserve_unknown",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.clinical.reserve_unknown = to_bool(v, k);
       }},
      {"clinical.fields",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.clinical.fields = parse_field_specs(v);
       }},
      {"fusion.mode",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.fusion.mode = fusion::fusion_mode(v);
       }},
      {"fusion.reduction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fusion.reduction = int(to_int(v, k));
       }},
      {"fusion.gate_bias",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.fusion.gate_bias = to_bool(v, k);
       }},
      {"mil.lambda",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.mil.lambda = int(to_int(v, k));
       }},
      {"mil.depth",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.mil.block.depth = int(to_int(v, k));
       }},
      {"mil.state_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.mil.block.state_dim = int(to_int(v, k));
       }},
      {"mil.conv_width",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.mil.block.conv_width = int(to_int(v, k));
       }},
      {"mil.expand",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.mil.block.expand = int(to_int(v, k));
       }},
      {"loss.lambda_reg",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.loss.lambda_reg = to_double(v, k);
       }},
      {"loss.l2_initial",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.loss.l2_initial = to_double(v, k);
       }},
      {"loss.l2_max",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.loss.l2_max = to_double(v, k);
       }},
      {"loss.recon_weight",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.loss.recon_weight = to_double(v, k);
       }},
      {"trainer.epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.epochs = int(to_int(v, k));
       }},
      {"trainer.base_lr",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.base_lr = to_double(v, k);
       }},
      {"trainer.weight_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.weight_decay = to_double(v, k);
       }},
      {"trainer.warmup_epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.warmup_epochs = int(to_int(v, k));
       }},
      {"trainer.step_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.step_size = int(to_int(v, k));
       }},
      {"trainer.gamma",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.gamma = to_double(v, k);
       }},
      {"trainer.min_lr",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.min_lr = to_double(v, k);
       }},
      {"trainer.patience",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.patience = int(to_int(v, k));
       }},
      {"trainer.split_fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.split_fraction = to_double(v, k);
       }},
      {"trainer.beta1",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.beta1 = to_double(v, k);
       }},
      {"trainer.beta2",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.beta2 = to_double(v, k);
       }},
      {"trainer.adam_eps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.trainer.adam_eps = to_double(v, k);
       }},
      {"paths.data_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"paths.out_dir",
       [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"gen_classification.n_bags",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.n_bags = int(to_int(v, k));
       }},
      {"gen_classification.n_patches",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.n_patches = int(to_int(v, k));
       }},
      {"gen_classification.feature_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.feature_dim = int(to_int(v, k));
       }},
      {"gen_classification.tumor_fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.tumor_fraction = to_double(v, k);
       }},
      {"gen_classification.shift",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.shift = to_double(v, k);
       }},
      {"gen_classification.coord_stride",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.coord_stride = to_double(v, k);
       }},
      {"gen_classification.base_norm_scale",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_classification.base_norm_scale = to_double(v, k);
       }},
      {"gen_survival.n_patients",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.n_patients = int(to_int(v, k));
       }},
      {"gen_survival.n_patches",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.n_patches = int(to_int(v, k));
       }},
      {"gen_survival.feature_dim",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.feature_dim = int(to_int(v, k));
       }},
      {"gen_survival.censor_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.censor_rate = to_double(v, k);
       }},
      {"gen_survival.hot_fraction_min",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.hot_fraction_min = to_double(v, k);
       }},
      {"gen_survival.hot_fraction_max",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.hot_fraction_max = to_double(v, k);
       }},
      {"gen_survival.shift",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.shift = to_double(v, k);
       }},
      {"gen_survival.w_img",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.w_img = to_double(v, k);
       }},
      {"gen_survival.w_spatial",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.w_spatial = to_double(v, k);
       }},
      {"gen_survival.w_clinical",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.w_clinical = to_double(v, k);
       }},
      {"gen_survival.w_interaction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.w_interaction = to_double(v, k);
       }},
      {"gen_survival.risk_scale",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.risk_scale = to_double(v, k);
       }},
      {"gen_survival.base_time",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.base_time = to_double(v, k);
       }},
      {"gen_survival.coord_stride",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.coord_stride = to_double(v, k);
       }},
      {"gen_survival.base_norm_scale",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.base_norm_scale = to_double(v, k);
       }},
      {"gen_survival.missing_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.gen_survival.missing_rate = to_double(v, k);
       }},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    std::string full = section + "." + key;
    auto it = key_table().find(full);
    if (it == key_table().end())
      throw ConfigError("unknown key '" + full + "'");
    it->second(cfg, full, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string RunConfig::canonical_text() const {
  std::ostringstream o;
  o << "[task]\n";
  o << "type = " << objectives::to_string(task) << "\n";
  o << "seed = " << seed << "\n\n";
  o << "[graph]\n";
  o << "enabled = " << (graph.enabled ? "true" : "false") << "\n";
  o << "tau_spatial = " << fmt_double(graph.tau_spatial) << "\n";
  o << "tau_tissue = " << fmt_double(graph.tau_tissue) << "\n";
  o << "model = "
    << (graph.encoder.model_kind == graph::GraphEncoderConfig::Kind::GCN ? "gcn" : "gat")
    << "\n";
  o << "hidden_dim = " << graph.encoder.hidden_dim << "\n";
  o << "out_dim = " << graph.encoder.out_dim << "\n";
  o << "heads = " << graph.encoder.heads << "\n";
  o << "leaky_slope = " << fmt_double(graph.encoder.leaky_slope) << "\n";
  o << "dropout = " << fmt_double(graph.encoder.dropout) << "\n\n";
  o << "[clinical]\n";
  o << "enabled = " << (clinical.enabled ? "true" : "false") << "\n";
  o << "hidden_dim = " << clinical.hidden_dim << "\n";
  o << "reserve_unknown = " << (clinical.reserve_unknown ? "true" : "false") << "\n";
  o << "fields = " << format_field_specs(clinical.fields) << "\n\n";
  o << "[fusion]\n";
  o << "mode = " << fusion::to_string(fusion.mode) << "\n";
  o << "reduction = " << fusion.reduction << "\n";
  o << "gate_bias = " << (fusion.gate_bias ? "true" : "false") << "\n\n";
  o << "[mil]\n";
  o << "lambda = " << mil.lambda << "\n";
  o << "depth = " << mil.block.depth << "\n";
  o << "state_dim = " << mil.block.state_dim << "\n";
  o << "conv_width = " << mil.block.conv_width << "\n";
  o << "expand = " << mil.block.expand << "\n\n";
  o << "[loss]\n";
  o << "lambda_reg = " << fmt_double(loss.lambda_reg) << "\n";
  o << "l2_initial = " << fmt_double(loss.l2_initial) << "\n";
  o << "l2_max = " << fmt_double(loss.l2_max) << "\n";
  o << "recon_weight = " << fmt_double(loss.recon_weight) << "\n\n";
  o << "[trainer]\n";
  o << "epochs = " << trainer.epochs << "\n";
  o << "base_lr = " << fmt_double(trainer.base_lr) << "\n";
  o << "weight_decay = " << fmt_double(trainer.weight_decay) << "\n";
  o << "warmup_epochs = " << trainer.warmup_epochs << "\n";
  o << "step_size = " << trainer.step_size << "\n";
  o << "gamma = " << fmt_double(trainer.gamma) << "\n";
  o << "min_lr = " << fmt_double(trainer.min_lr) << "\n";
  o << "patience = " << trainer.patience << "\n";
  o << "split_fraction = " << fmt_double(trainer.split_fraction) << "\n";
  o << "beta1 = " << fmt_double(trainer.beta1) << "\n";
  o << "beta2 = " << fmt_double(trainer.beta2) << "\n";
  o << "adam_eps = " << fmt_double(trainer.adam_eps) << "\n\n";
  o << "[paths]\n";
  o << "data_dir = " << data_dir << "\n";
  o << "out_dir = " << out_dir << "\n\n";
  o << "[gen_classification]\n";
  o << "n_bags = " << gen_classification.n_bags << "\n";
  o << "n_patches = " << gen_classification.n_patches << "\n";
  o << "feature_dim = " << gen_classification.feature_dim << "\n";
  o << "tumor_fraction = " << fmt_double(gen_classification.tumor_fraction) << "\n";
  o << "shift = " << fmt_double(gen_classification.shift) << "\n";
  o << "coord_stride = " << fmt_double(gen_classification.coord_stride) << "\n";
  o << "base_norm_scale = " << fmt_double(gen_classification.base_norm_scale) << "\n\n";
  o << "[gen_survival]\n";
  o << "n_patients = " << gen_survival.n_patients << "\n";
  o << "n_patches = " << gen_survival.n_patches << "\n";
  o << "feature_dim = " << gen_survival.feature_dim << "\n";
  o << "censor_rate = " << fmt_double(gen_survival.censor_rate) << "\n";
  o << "hot_fraction_min = " << fmt_double(gen_survival.hot_fraction_min) << "\n";
  o << "hot_fraction_max = " << fmt_double(gen_survival.hot_fraction_max) << "\n";
  o << "shift = " << fmt_double(gen_survival.shift) << "\n";
  o << "w_img = " << fmt_double(gen_survival.w_img) << "\n";
  o << "w_spatial = " << fmt_double(gen_survival.w_spatial) << "\n";
  o << "w_clinical = " << fmt_double(gen_survival.w_clinical) << "\n";
  o << "w_interaction = " << fmt_double(gen_survival.w_interaction) << "\n";
  o << "risk_scale = " << fmt_double(gen_survival.risk_scale) << "\n";
  o << "base_time = " << fmt_double(gen_survival.base_time) << "\n";
  o << "coord_stride = " << fmt_double(gen_survival.coord_stride) << "\n";
  o << "base_norm_scale = " << fmt_double(gen_survival.base_norm_scale) << "\n";
  o << "missing_rate = " << fmt_double(gen_survival.missing_rate) << "\n";
  return o.str();
}

}  // namespace mmsf::io
