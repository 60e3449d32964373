#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmsf/clinical.hpp"
#include "mmsf/config.hpp"
#include "mmsf/graph.hpp"
#include "mmsf/metrics.hpp"
#include "mmsf/param_store.hpp"

namespace mmsf::io {

// ---------------------------------------------------------------------------
// bag feature files
// ---------------------------------------------------------------------------
//
// Binary layout (little-endian):
//   "PBAG" | version u16 | N u32 | d u32 | N*d float32 row-major | N x (x,y) float32
// Total size is exactly 14 + 4*N*d + 8*N bytes. Read errors are distinct:
// bad magic, version mismatch, truncation.

constexpr uint16_t kBagFormatVersion = 1;

void write_bag(const std::string& path, const graph::PatchBag& bag);
graph::PatchBag read_bag(const std::string& path);

// ---------------------------------------------------------------------------
// text / csv
// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Simple comma-split CSV (fields in this project never contain commas).
std::vector<std::vector<std::string>> read_csv(const std::string& path);

std::string format_double(double v);  // %.17g, round-trip exact

// ---------------------------------------------------------------------------
// datasets on disk
// ---------------------------------------------------------------------------
//
// Classification dataset directory:
//   bags/<id>.pbag, labels.csv (id,bag,label)
// Survival dataset directory:
//   bags/<id>.pbag, survival.csv (id,bag,time,event),
//   clinical.csv (id,<field>...), truth.csv (id,latent risk components)

struct ClassificationSample {
  std::string id;
  std::string bag_path;  // absolute or dataset-relative
  int label = 0;
};

struct SurvivalSample {
  std::string id;
  std::string bag_path;
  objectives::SurvivalLabel label;
};

struct Dataset {
  objectives::Task task = objectives::Task::Classification;
  std::string dir;
  std::vector<ClassificationSample> classification;
  std::vector<SurvivalSample> survival;
  std::vector<std::string> clinical_header;  // first column is the id
  std::unordered_map<std::string, std::vector<std::string>> clinical_rows;

  size_t size() const {
    return task == objectives::Task::Classification ? classification.size()
                                                    : survival.size();
  }
  // Clinical row for a patient projected onto the given field names.
  std::vector<std::string> clinical_row_for(const std::string& id,
                                            const std::vector<clinical::FieldSpec>& fields) const;
};

Dataset load_dataset(const std::string& dir, objectives::Task task);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
//
// Binary "MMCK" file: config snapshot, fitted clinical schema, named float32
// parameter arrays with Adam moments, step counter, best-metric record.
// Reload reproduces forward outputs bit-identically.

constexpr uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  clinical::ClinicalSchema schema;
  num::ParameterStore<float> store;
  double best_metric = 0.0;
  int best_epoch = -1;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Kaplan-Meier exports
// ---------------------------------------------------------------------------

using NamedKmCurve = std::pair<std::string, metrics::KmCurve>;

// CSV columns: time,S,lower,upper,n_at_risk,group
void write_km_csv(const std::string& path, const std::vector<NamedKmCurve>& groups);

// Minimal step-function plot with shaded confidence bands.
void write_km_svg(const std::string& path, const std::vector<NamedKmCurve>& groups);

}  // namespace mmsf::io
