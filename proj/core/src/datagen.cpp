#include "mmsf/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "mmsf/errors.hpp"
#include "mmsf/rng.hpp"

namespace fs = std::filesystem;

namespace mmsf::data {

namespace {

// Row-major grid coordinates (raster order) with the given pixel stride.
num::Mat<float> grid_coords(int n, double stride) {
  int side = int(std::ceil(std::sqrt(double(n))));
  num::Mat<float> coords(n, 2);
  for (int i = 0; i < n; ++i) {
    coords(i, 0) = float(double(i % side) * stride);
    coords(i, 1) = float(double(i / side) * stride);
  }
  return coords;
}

// Base feature: scale * all-ones direction plus unit Gaussian noise. The
// shared offset keeps typical pairwise cosine around 0.8 so the tissue
// threshold behaves like it does on real embeddings.
num::Mat<float> base_features(int n, int d, double scale, Rng& rng) {
  num::Mat<float> f(n, d);
  for (auto& v : f.data) v = float(scale + rng.normal());
  return f;
}

std::vector<double> random_unit(int d, Rng& rng) {
  std::vector<double> u(static_cast<size_t>(d));
  double norm = 0;
  for (auto& v : u) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : u) v /= norm;
  return u;
}

// Indices of the k grid-nearest patches to a seed patch (contiguous blob).
std::vector<int> cluster_indices(const num::Mat<float>& coords, int center, int k) {
  int n = coords.rows;
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  double cx = coords(center, 0), cy = coords(center, 1);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    double da = (coords(a, 0) - cx) * (coords(a, 0) - cx) +
                (coords(a, 1) - cy) * (coords(a, 1) - cy);
    double db = (coords(b, 0) - cx) * (coords(b, 0) - cx) +
                (coords(b, 1) - cy) * (coords(b, 1) - cy);
    if (da != db) return da < db;
    return a < b;
  });
  idx.resize(size_t(std::min(n, k)));
  return idx;
}

std::vector<int> scattered_indices(int n, int k, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  idx.resize(size_t(std::min(n, k)));
  return idx;
}

void add_shift(num::Mat<float>& f, const std::vector<int>& rows,
               const std::vector<double>& dir, double shift) {
  for (int r : rows)
    for (int c = 0; c < f.cols; ++c) f(r, c) += float(shift * dir[size_t(c)]);
}

std::string sample_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%05d", prefix, i);
  return buf;
}

}  // namespace

ClassificationData make_classification(const io::GenClassificationSection& g, uint64_t seed) {
  if (g.n_bags < 4) throw ConfigError("gen_classification.n_bags must be >= 4");
  if (g.n_patches < 1 || g.feature_dim < 1)
    throw ConfigError("gen_classification: bag dims must be >= 1");
  ClassificationData out;
  Rng root(seed);
  std::vector<double> tumor_dir = random_unit(g.feature_dim, root);
  for (int i = 0; i < g.n_bags; ++i) {
    Rng rng = Rng(seed).fork(uint64_t(i) + 1);
    graph::PatchBag bag;
    bag.bag_id = sample_id("bag", i);
    bag.coords = grid_coords(g.n_patches, g.coord_stride);
    bag.features = base_features(g.n_patches, g.feature_dim, g.base_norm_scale, rng);
    int label = i % 2;
    if (label == 1 && g.tumor_fraction > 0.0) {
      int k = int(std::ceil(g.tumor_fraction * double(g.n_patches)));
      int center = int(rng.below(uint64_t(g.n_patches)));
      add_shift(bag.features, cluster_indices(bag.coords, center, k), tumor_dir, g.shift);
    }
    out.ids.push_back(bag.bag_id);
    out.labels.push_back(label);
    out.bags.push_back(std::move(bag));
  }
  return out;
}

SurvivalData make_survival(const io::GenSurvivalSection& g, uint64_t seed) {
  if (g.n_patients < 20) throw ConfigError("gen_survival.n_patients must be >= 20");
  if (g.censor_rate < 0.0 || g.censor_rate >= 1.0)
    throw ConfigError("gen_survival.censor_rate must be in [0,1)");
  SurvivalData out;
  out.fields = {{"age", clinical::FieldKind::Numeric},
                {"marker", clinical::FieldKind::Numeric},
                {"sex", clinical::FieldKind::Categorical},
                {"stage", clinical::FieldKind::Categorical}};

  Rng root(seed);
  std::vector<double> hot_dir = random_unit(g.feature_dim, root);
  const bool spatial_mode = g.w_spatial != 0.0;
  const double frac_mid = 0.5 * (g.hot_fraction_min + g.hot_fraction_max);
  const double frac_sd =
      std::max(1e-12, (g.hot_fraction_max - g.hot_fraction_min) / std::sqrt(12.0));
  const char* sexes[2] = {"female", "male"};
  const char* stages[4] = {"I", "II", "III", "IV"};
  const double sex_eff[2] = {-0.3, 0.3};
  const double stage_eff[4] = {-1.0, -0.3, 0.3, 1.0};

  struct Draw {
    double frac, s_img, s_sp, s_cl;
    int clustered;
    std::vector<std::string> clin;
  };
  std::vector<Draw> draws;
  std::vector<double> raw_risk;
  for (int i = 0; i < g.n_patients; ++i) {
    Rng rng = Rng(seed).fork(uint64_t(i) + 1);
    Draw d;
    // When the spatial channel carries weight, the hot fraction is fixed so
    // only the arrangement is informative.
    d.frac = spatial_mode ? frac_mid : rng.uniform(g.hot_fraction_min, g.hot_fraction_max);
    d.s_img = spatial_mode ? 0.0 : (d.frac - frac_mid) / frac_sd;
    d.clustered = i % 2;
    d.s_sp = d.clustered ? 1.0 : -1.0;
    double age = rng.normal(62.0, 10.0);
    double marker = rng.normal(1.0, 0.5);
    int sex = int(rng.below(2));
    int stage = int(rng.below(4));
    d.s_cl = 0.5 * (age - 62.0) / 10.0 + 0.4 * (marker - 1.0) / 0.5 + sex_eff[sex] +
             stage_eff[stage];
    d.clin = {io::format_double(age), io::format_double(marker), sexes[sex], stages[stage]};
    if (g.missing_rate > 0.0)
      for (auto& cell : d.clin)
        if (rng.uniform01() < g.missing_rate) cell = "";
    raw_risk.push_back(g.w_img * d.s_img + g.w_spatial * d.s_sp + g.w_clinical * d.s_cl +
                       g.w_interaction * d.s_sp * d.s_cl);
    draws.push_back(std::move(d));
  }

  // Standardize the latent risk over the cohort so risk_scale is the hazard
  // log-ratio per SD.
  double mean = 0;
  for (double r : raw_risk) mean += r;
  mean /= double(raw_risk.size());
  double var = 0;
  for (double r : raw_risk) var += (r - mean) * (r - mean);
  var /= double(raw_risk.size());
  double sd = var > 0 ? std::sqrt(var) : 1.0;

  for (int i = 0; i < g.n_patients; ++i) {
    Rng rng = Rng(seed).fork(0x5u + uint64_t(i));
    const Draw& d = draws[size_t(i)];
    double z = (raw_risk[size_t(i)] - mean) / sd;

    graph::PatchBag bag;
    bag.bag_id = sample_id("p", i);
    bag.coords = grid_coords(g.n_patches, g.coord_stride);
    bag.features = base_features(g.n_patches, g.feature_dim, g.base_norm_scale, rng);
    int k = std::max(1, int(std::lround(d.frac * double(g.n_patches))));
    std::vector<int> hot =
        d.clustered ? cluster_indices(bag.coords, int(rng.below(uint64_t(g.n_patches))), k)
                    : scattered_indices(g.n_patches, k, rng);
    add_shift(bag.features, hot, hot_dir, g.shift);

    objectives::SurvivalLabel lab;
    double u = rng.uniform01();
    while (u <= 0.0) u = rng.uniform01();
    double rate = std::exp(g.risk_scale * z) / g.base_time;
    lab.time = -std::log(u) / rate;
    if (rng.uniform01() < g.censor_rate) {
      lab.event = 0;
      lab.time *= rng.uniform01();
    } else {
      lab.event = 1;
    }

    out.ids.push_back(bag.bag_id);
    out.bags.push_back(std::move(bag));
    out.labels.push_back(lab);
    out.clinical_rows.push_back(d.clin);
    out.true_risk.push_back(z);
    out.s_img.push_back(d.s_img);
    out.s_spatial.push_back(d.s_sp);
    out.s_clinical.push_back(d.s_cl);
  }
  return out;
}

void write_classification(const ClassificationData& data, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "bags");
  std::string labels = "id,bag,label\n";
  for (size_t i = 0; i < data.bags.size(); ++i) {
    std::string rel = "bags/" + data.ids[i] + ".pbag";
    io::write_bag((fs::path(dir) / rel).string(), data.bags[i]);
    labels += data.ids[i] + "," + rel + "," + std::to_string(data.labels[i]) + "\n";
  }
  io::write_text_file((fs::path(dir) / "labels.csv").string(), labels);
}

void write_survival(const SurvivalData& data, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "bags");
  std::string surv = "id,bag,time,event\n";
  std::string clin = "id";
  for (const auto& f : data.fields) clin += "," + f.name;
  clin += "\n";
  std::string truth = "id,s_img,s_spatial,s_clinical,risk\n";
  for (size_t i = 0; i < data.bags.size(); ++i) {
    std::string rel = "bags/" + data.ids[i] + ".pbag";
    io::write_bag((fs::path(dir) / rel).string(), data.bags[i]);
    surv += data.ids[i] + "," + rel + "," + io::format_double(data.labels[i].time) + "," +
            std::to_string(data.labels[i].event) + "\n";
    clin += data.ids[i];
    for (const auto& cell : data.clinical_rows[i]) clin += "," + cell;
    clin += "\n";
    truth += data.ids[i] + "," + io::format_double(data.s_img[i]) + "," +
             io::format_double(data.s_spatial[i]) + "," +
             io::format_double(data.s_clinical[i]) + "," +
             io::format_double(data.true_risk[i]) + "\n";
  }
  io::write_text_file((fs::path(dir) / "survival.csv").string(), surv);
  io::write_text_file((fs::path(dir) / "clinical.csv").string(), clin);
  io::write_text_file((fs::path(dir) / "truth.csv").string(), truth);
}

ClassificationData load_classification(const std::string& dir) {
  io::Dataset ds = io::load_dataset(dir, objectives::Task::Classification);
  ClassificationData out;
  for (const auto& s : ds.classification) {
    out.ids.push_back(s.id);
    out.labels.push_back(s.label);
    out.bags.push_back(io::read_bag(s.bag_path));
  }
  return out;
}

SurvivalData load_survival(const std::string& dir,
                           const std::vector<clinical::FieldSpec>& fields) {
  io::Dataset ds = io::load_dataset(dir, objectives::Task::Survival);
  SurvivalData out;
  out.fields = fields;
  for (const auto& s : ds.survival) {
    out.ids.push_back(s.id);
    out.labels.push_back(s.label);
    out.bags.push_back(io::read_bag(s.bag_path));
    out.clinical_rows.push_back(fields.empty() ? std::vector<std::string>{}
                                               : ds.clinical_row_for(s.id, fields));
  }
  return out;
}

}  // namespace mmsf::data
