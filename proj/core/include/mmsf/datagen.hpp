#pragma once

#include <string>
#include <vector>

#include "mmsf/clinical.hpp"
#include "mmsf/config.hpp"
#include "mmsf/graph.hpp"
#include "mmsf/io.hpp"
#include "mmsf/objectives.hpp"

namespace mmsf::data {

// In-memory datasets consumed by the trainer; the CLI round-trips them
// through the on-disk formats.

struct ClassificationData {
  std::vector<std::string> ids;
  std::vector<graph::PatchBag> bags;
  std::vector<int> labels;
};

struct SurvivalData {
  std::vector<std::string> ids;
  std::vector<graph::PatchBag> bags;
  std::vector<objectives::SurvivalLabel> labels;
  std::vector<clinical::FieldSpec> fields;
  std::vector<std::vector<std::string>> clinical_rows;  // aligned with fields
  // Ground truth from generation (empty when loaded from disk without truth):
  std::vector<double> true_risk, s_img, s_spatial, s_clinical;
};

// Synthetic classification bags: negative bags draw patches from a common
// Gaussian around a fixed base direction; positive bags implant a contiguous
// spatial cluster of mean-shifted patches, so both the max-instance path and
// the spatial-graph path carry signal. Labels alternate (balanced).
ClassificationData make_classification(const io::GenClassificationSection& g, uint64_t seed);

// Synthetic survival cohort. Latent risk combines three standardized signals:
//   s_img      hot-patch fraction (image-feature summary)
//   s_spatial  +-1 for clustered vs scattered hot patches (graph-only signal;
//              when weighted, the hot fraction is held fixed)
//   s_clinical linear combination of the clinical fields
// Times are exponential with rate proportional to exp(risk_scale * risk);
// censoring flips delta to 0 with the configured rate and scales the time by
// an independent uniform draw.
SurvivalData make_survival(const io::GenSurvivalSection& g, uint64_t seed);

void write_classification(const ClassificationData& data, const std::string& dir);
void write_survival(const SurvivalData& data, const std::string& dir);

ClassificationData load_classification(const std::string& dir);
SurvivalData load_survival(const std::string& dir, const std::vector<clinical::FieldSpec>& fields);

}  // namespace mmsf::data
