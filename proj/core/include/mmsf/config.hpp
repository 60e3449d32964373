#pragma once

#include <string>
#include <vector>

#include "mmsf/clinical.hpp"
#include "mmsf/fusion.hpp"
#include "mmsf/graph.hpp"
#include "mmsf/mil.hpp"
#include "mmsf/objectives.hpp"

namespace mmsf::io {

struct TrainerConfig {
  int epochs = 50;
  double base_lr = 1e-4;
  double weight_decay = 1e-5;
  int warmup_epochs = 5;
  int step_size = 2;
  double gamma = 0.6;
  double min_lr = 1e-8;
  int patience = 10;
  double split_fraction = 0.8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  void validate() const;
};

struct GraphSection {
  bool enabled = true;
  double tau_spatial = 640.0;  // 2.5 x default 256-px patch stride
  double tau_tissue = 0.75;
  graph::GraphEncoderConfig encoder;
};

struct ClinicalSection {
  bool enabled = false;
  int hidden_dim = 512;
  bool reserve_unknown = false;
  std::vector<clinical::FieldSpec> fields;
};

struct MilSection {
  int lambda = 512;
  mil::SsmBlockConfig block;
};

struct GenClassificationSection {
  int n_bags = 200;
  int n_patches = 256;
  int feature_dim = 32;
  double tumor_fraction = 0.1;
  double shift = 2.0;
  double coord_stride = 256.0;
  double base_norm_scale = 2.0;
};

struct GenSurvivalSection {
  int n_patients = 300;
  int n_patches = 64;
  int feature_dim = 32;
  double censor_rate = 0.3;
  double hot_fraction_min = 0.05;
  double hot_fraction_max = 0.30;
  double shift = 3.0;
  double w_img = 1.0;
  double w_spatial = 0.0;
  double w_clinical = 1.0;
  double w_interaction = 0.0;  // cross-modal product s_spatial * s_clinical
  double risk_scale = 2.5;
  double base_time = 1000.0;
  double coord_stride = 256.0;
  double base_norm_scale = 2.0;
  double missing_rate = 0.0;
};

// The full run configuration: a sectioned key-value document, strictly
// validated (unknown sections or keys are rejected), defaults matching the
// published hyperparameter catalog.
struct RunConfig {
  objectives::Task task = objectives::Task::Classification;
  uint64_t seed = 42;
  GraphSection graph;
  ClinicalSection clinical;
  fusion::FusionConfig fusion;
  MilSection mil;
  objectives::LossConfig loss;
  TrainerConfig trainer;
  std::string data_dir;
  std::string out_dir;
  GenClassificationSection gen_classification;
  GenSurvivalSection gen_survival;

  void validate() const;
  // Canonical serialization: every key, fixed order. Parsing it back yields
  // an identical config; used for checkpoint snapshots.
  std::string canonical_text() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

std::string format_field_specs(const std::vector<clinical::FieldSpec>& fields);
std::vector<clinical::FieldSpec> parse_field_specs(const std::string& text);

}  // namespace mmsf::io
