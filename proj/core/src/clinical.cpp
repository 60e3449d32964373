#include "mmsf/clinical.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mmsf/errors.hpp"

namespace mmsf::clinical {

int ClinicalSchema::effective_count() const {
  int n = int(fields.size());
  for (const auto& f : fields)
    if (f.has_presence_flag) ++n;
  return n;
}

std::vector<int> ClinicalSchema::effective_dims() const {
  std::vector<int> d;
  for (const auto& f : fields) d.push_back(f.encoded_dim());
  for (const auto& f : fields)
    if (f.has_presence_flag) d.push_back(1);
  return d;
}

namespace {

double parse_numeric(const std::string& s, const std::string& field) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    if (!std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("field '" + field + "': cannot parse numeric value '" + s + "'");
  }
}

}  // namespace

ClinicalSchema fit_schema(const std::vector<std::vector<std::string>>& rows,
                          const std::vector<FieldSpec>& specs, bool reserve_unknown) {
  if (rows.empty()) throw DataError("fit_schema: no records");
  {
    std::set<std::string> names;
    for (const auto& s : specs)
      if (!names.insert(s.name).second)
        throw SchemaError("duplicate field name '" + s.name + "'");
  }
  for (const auto& r : rows)
    if (r.size() != specs.size())
      throw SchemaError("record width does not match declared fields");

  ClinicalSchema schema;
  for (size_t k = 0; k < specs.size(); ++k) {
    FieldDesc d;
    d.name = specs[k].name;
    d.kind = specs[k].kind;
    bool any_missing = false;
    if (d.kind == FieldKind::Numeric) {
      std::vector<double> vals;
      for (const auto& r : rows) {
        if (r[k].empty()) {
          any_missing = true;
          continue;
        }
        vals.push_back(parse_numeric(r[k], d.name));
      }
      if (vals.size() < 2)
        throw DataError("field '" + d.name + "': needs >= 2 numeric training values");
      double mean = 0;
      for (double v : vals) mean += v;
      mean /= double(vals.size());
      double var = 0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= double(vals.size());  // population variance
      if (var <= 0.0)
        throw DataError("field '" + d.name + "': constant numeric training column");
      d.mean = mean;
      d.stddev = std::sqrt(var);
      d.has_presence_flag = any_missing || reserve_unknown;
    } else {
      std::set<std::string> vocab;
      for (const auto& r : rows) {
        if (r[k].empty())
          any_missing = true;
        else
          vocab.insert(r[k]);
      }
      d.vocab.assign(vocab.begin(), vocab.end());
      d.has_unknown = any_missing || reserve_unknown;
      if (d.encoded_dim() < 2)
        throw DataError("field '" + d.name + "': categorical needs >= 2 categories");
    }
    schema.fields.push_back(std::move(d));
  }
  return schema;
}

EncodedRecord encode_record(const ClinicalSchema& schema,
                            const std::vector<std::string>& row) {
  if (row.size() != schema.fields.size())
    throw SchemaError("record width does not match schema");
  EncodedRecord rec;
  std::vector<double> flags;
  for (size_t k = 0; k < schema.fields.size(); ++k) {
    const FieldDesc& f = schema.fields[k];
    if (f.kind == FieldKind::Numeric) {
      num::Mat<double> v(1, 1);
      bool present = !row[k].empty();
      v(0, 0) = present ? (parse_numeric(row[k], f.name) - f.mean) / f.stddev : 0.0;
      rec.values.push_back(std::move(v));
      rec.hot_index.push_back(-1);
      if (f.has_presence_flag) flags.push_back(present ? 1.0 : 0.0);
    } else {
      int dim = f.encoded_dim();
      int idx;
      if (row[k].empty()) {
        if (!f.has_unknown)
          throw SchemaError("field '" + f.name + "': missing value and no unknown bucket");
        idx = dim - 1;
      } else {
        auto it = std::lower_bound(f.vocab.begin(), f.vocab.end(), row[k]);
        if (it != f.vocab.end() && *it == row[k]) {
          idx = int(it - f.vocab.begin());
        } else if (f.has_unknown) {
          idx = dim - 1;
        } else {
          throw SchemaError("field '" + f.name + "': unseen category '" + row[k] +
                            "' and no unknown bucket");
        }
      }
      num::Mat<double> v(1, dim);
      v(0, idx) = 1.0;
      rec.values.push_back(std::move(v));
      rec.hot_index.push_back(idx);
    }
  }
  for (double fl : flags) {
    num::Mat<double> v(1, 1);
    v(0, 0) = fl;
    rec.values.push_back(std::move(v));
    rec.hot_index.push_back(-1);
  }
  return rec;
}

}  // namespace mmsf::clinical
