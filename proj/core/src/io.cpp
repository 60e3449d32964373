#include "mmsf/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmsf/errors.hpp"

namespace fs = std::filesystem;

namespace mmsf::io {

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }
void put_str(std::string& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out += s;
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string what;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw TruncatedFileError(what);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string read_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary(const std::string& path, const std::string& bytes) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// bag files
// ---------------------------------------------------------------------------

void write_bag(const std::string& path, const graph::PatchBag& bag) {
  bag.validate();
  std::string out;
  out.reserve(14 + bag.features.size() * 4 + size_t(bag.coords.rows) * 8);
  out += "PBAG";
  put_u16(out, kBagFormatVersion);
  put_u32(out, uint32_t(bag.features.rows));
  put_u32(out, uint32_t(bag.features.cols));
  for (float v : bag.features.data) put_f32(out, v);
  for (int i = 0; i < bag.coords.rows; ++i) {
    put_f32(out, bag.coords(i, 0));
    put_f32(out, bag.coords(i, 1));
  }
  write_binary(path, out);
}

graph::PatchBag read_bag(const std::string& path) {
  std::string buf = read_binary(path);
  Reader r{buf, 0, "bag file '" + path + "'"};
  r.need(4);
  if (buf.compare(0, 4, "PBAG") != 0)
    throw BadMagicError("'" + path + "' is not a bag file");
  r.pos = 4;
  uint16_t version = r.u16();
  if (version != kBagFormatVersion)
    throw VersionMismatchError("bag file '" + path + "' has version " +
                               std::to_string(version));
  uint32_t n = r.u32();
  uint32_t d = r.u32();
  if (n == 0 || d == 0) throw DataError("bag file '" + path + "' has empty dims");
  graph::PatchBag bag;
  bag.features = num::Mat<float>(int(n), int(d));
  bag.coords = num::Mat<float>(int(n), 2);
  for (auto& v : bag.features.data) v = r.f32();
  for (uint32_t i = 0; i < n; ++i) {
    bag.coords(int(i), 0) = r.f32();
    bag.coords(int(i), 1) = r.f32();
  }
  if (r.pos != buf.size())
    throw DataError("bag file '" + path + "' has trailing bytes");
  bag.bag_id = fs::path(path).stem().string();
  return bag;
}

// ---------------------------------------------------------------------------
// text / csv
// ---------------------------------------------------------------------------

void write_text_file(const std::string& path, const std::string& content) {
  write_binary(path, content);
}

std::string read_text_file(const std::string& path) { return read_binary(path); }

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::string text = read_binary(path);
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(cell);
    if (!line.empty() && line.back() == ',') row.push_back("");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

std::vector<std::string> Dataset::clinical_row_for(
    const std::string& id, const std::vector<clinical::FieldSpec>& fields) const {
  auto it = clinical_rows.find(id);
  if (it == clinical_rows.end())
    throw DataError("no clinical row for patient '" + id + "'");
  std::vector<std::string> out;
  for (const auto& f : fields) {
    int col = -1;
    for (size_t c = 1; c < clinical_header.size(); ++c)
      if (clinical_header[c] == f.name) {
        col = int(c);
        break;
      }
    if (col < 0) throw SchemaError("clinical.csv has no column '" + f.name + "'");
    out.push_back(it->second[size_t(col)]);
  }
  return out;
}

Dataset load_dataset(const std::string& dir, objectives::Task task) {
  Dataset ds;
  ds.task = task;
  ds.dir = dir;
  if (task == objectives::Task::Classification) {
    auto rows = read_csv((fs::path(dir) / "labels.csv").string());
    if (rows.empty() || rows[0] != std::vector<std::string>{"id", "bag", "label"})
      throw DataError("labels.csv: expected header id,bag,label");
    for (size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() != 3) throw DataError("labels.csv: bad row " + std::to_string(i));
      ClassificationSample s;
      s.id = rows[i][0];
      s.bag_path = (fs::path(dir) / rows[i][1]).string();
      s.label = std::stoi(rows[i][2]);
      if (s.label != 0 && s.label != 1) throw DataError("labels.csv: label must be 0/1");
      ds.classification.push_back(std::move(s));
    }
    if (ds.classification.empty()) throw DataError("labels.csv: no samples");
    return ds;
  }
  auto rows = read_csv((fs::path(dir) / "survival.csv").string());
  if (rows.empty() || rows[0] != std::vector<std::string>{"id", "bag", "time", "event"})
    throw DataError("survival.csv: expected header id,bag,time,event");
  for (size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 4) throw DataError("survival.csv: bad row " + std::to_string(i));
    SurvivalSample s;
    s.id = rows[i][0];
    s.bag_path = (fs::path(dir) / rows[i][1]).string();
    s.label.time = std::stod(rows[i][2]);
    s.label.event = std::stoi(rows[i][3]);
    if (s.label.event != 0 && s.label.event != 1)
      throw DataError("survival.csv: event must be 0/1");
    ds.survival.push_back(std::move(s));
  }
  if (ds.survival.empty()) throw DataError("survival.csv: no samples");
  auto clin_path = fs::path(dir) / "clinical.csv";
  if (fs::exists(clin_path)) {
    auto crows = read_csv(clin_path.string());
    if (crows.empty()) throw DataError("clinical.csv: empty");
    ds.clinical_header = crows[0];
    for (size_t i = 1; i < crows.size(); ++i) {
      if (crows[i].size() != ds.clinical_header.size())
        throw DataError("clinical.csv: ragged row " + std::to_string(i));
      ds.clinical_rows[crows[i][0]] = crows[i];
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out += "MMCK";
  put_u16(out, kCheckpointVersion);
  put_str(out, ck.config.canonical_text());
  put_u32(out, uint32_t(ck.schema.fields.size()));
  for (const auto& f : ck.schema.fields) {
    put_str(out, f.name);
    out.push_back(f.kind == clinical::FieldKind::Numeric ? char(0) : char(1));
    put_f64(out, f.mean);
    put_f64(out, f.stddev);
    out.push_back(char(f.has_unknown));
    out.push_back(char(f.has_presence_flag));
    put_u32(out, uint32_t(f.vocab.size()));
    for (const auto& v : f.vocab) put_str(out, v);
  }
  put_u32(out, uint32_t(ck.store.count()));
  for (const auto& e : ck.store.entries()) {
    put_str(out, e.name);
    put_u32(out, uint32_t(e.value.rows));
    put_u32(out, uint32_t(e.value.cols));
    for (float v : e.value.data) put_f32(out, v);
    for (float v : e.m.data) put_f32(out, v);
    for (float v : e.v.data) put_f32(out, v);
  }
  put_u64(out, uint64_t(ck.store.step));
  put_f64(out, ck.best_metric);
  put_u32(out, uint32_t(ck.best_epoch));
  write_binary(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string buf = read_binary(path);
  Reader r{buf, 0, "checkpoint '" + path + "'"};
  r.need(4);
  if (buf.compare(0, 4, "MMCK") != 0)
    throw BadMagicError("'" + path + "' is not a checkpoint");
  r.pos = 4;
  uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw VersionMismatchError("checkpoint '" + path + "' has version " +
                               std::to_string(version));
  Checkpoint ck;
  ck.config = parse_config(r.str());
  uint32_t nf = r.u32();
  for (uint32_t i = 0; i < nf; ++i) {
    clinical::FieldDesc f;
    f.name = r.str();
    r.need(1);
    f.kind = buf[r.pos++] == 0 ? clinical::FieldKind::Numeric
                               : clinical::FieldKind::Categorical;
    f.mean = r.f64();
    f.stddev = r.f64();
    r.need(2);
    f.has_unknown = buf[r.pos++] != 0;
    f.has_presence_flag = buf[r.pos++] != 0;
    uint32_t nv = r.u32();
    for (uint32_t k = 0; k < nv; ++k) f.vocab.push_back(r.str());
    ck.schema.fields.push_back(std::move(f));
  }
  uint32_t np = r.u32();
  for (uint32_t i = 0; i < np; ++i) {
    std::string name = r.str();
    uint32_t rows = r.u32(), cols = r.u32();
    num::Mat<float> value(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& v : value.data) v = r.f32();
    int id = ck.store.add(name, std::move(value));
    auto& e = ck.store.at(id);
    for (auto& v : e.m.data) v = r.f32();
    for (auto& v : e.v.data) v = r.f32();
  }
  ck.store.step = int64_t(r.u64());
  ck.best_metric = r.f64();
  ck.best_epoch = int(r.u32());
  if (r.pos != buf.size())
    throw DataError("checkpoint '" + path + "' has trailing bytes");
  return ck;
}

// ---------------------------------------------------------------------------
// KM exports
// ---------------------------------------------------------------------------

void write_km_csv(const std::string& path, const std::vector<NamedKmCurve>& groups) {
  std::string out = "time,S,lower,upper,n_at_risk,group\n";
  for (const auto& [name, km] : groups) {
    for (size_t i = 0; i < km.time.size(); ++i) {
      out += format_double(km.time[i]);
      out += ",";
      out += format_double(km.surv[i]);
      out += ",";
      out += format_double(km.lower[i]);
      out += ",";
      out += format_double(km.upper[i]);
      out += ",";
      out += std::to_string(km.at_risk[i]);
      out += ",";
      out += name;
      out += "\n";
    }
  }
  write_text_file(path, out);
}

void write_km_svg(const std::string& path, const std::vector<NamedKmCurve>& groups) {
  const double w = 640, h = 420, ml = 60, mr = 20, mt = 20, mb = 50;
  double tmax = 1.0;
  for (const auto& [name, km] : groups)
    for (double t : km.time) tmax = std::max(tmax, t);

  auto sx = [&](double t) { return ml + (w - ml - mr) * (t / tmax); };
  auto sy = [&](double s) { return mt + (h - mt - mb) * (1.0 - s); };
  const char* colors[] = {"#d62728", "#2ca02c", "#1f77b4", "#9467bd"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  o << "<line x1=\"" << ml << "\" y1=\"" << sy(0) << "\" x2=\"" << w - mr << "\" y2=\""
    << sy(0) << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << sy(0) << "\" x2=\"" << ml << "\" y2=\"" << mt
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double s = i / 5.0;
    o << "<text x=\"" << ml - 8 << "\" y=\"" << sy(s) + 4
      << "\" font-size=\"11\" text-anchor=\"end\">" << s << "</text>\n";
    double t = tmax * i / 5.0;
    o << "<text x=\"" << sx(t) << "\" y=\"" << h - mb + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << int(t) << "</text>\n";
  }
  o << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
    << "\" font-size=\"12\" text-anchor=\"middle\">time (days)</text>\n";

  int gi = 0;
  for (const auto& [name, km] : groups) {
    const char* color = colors[gi % 4];
    // band polygon: upper forward steps, lower backward
    o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
    for (size_t i = 0; i < km.time.size(); ++i) {
      double t0 = km.time[i];
      double t1 = i + 1 < km.time.size() ? km.time[i + 1] : tmax;
      o << sx(t0) << "," << sy(km.upper[i]) << " " << sx(t1) << "," << sy(km.upper[i]) << " ";
    }
    for (size_t i = km.time.size(); i-- > 0;) {
      double t0 = km.time[i];
      double t1 = i + 1 < km.time.size() ? km.time[i + 1] : tmax;
      o << sx(t1) << "," << sy(km.lower[i]) << " " << sx(t0) << "," << sy(km.lower[i]) << " ";
    }
    o << "\"/>\n";
    // step curve
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < km.time.size(); ++i) {
      double t0 = km.time[i];
      double t1 = i + 1 < km.time.size() ? km.time[i + 1] : tmax;
      o << sx(t0) << "," << sy(km.surv[i]) << " " << sx(t1) << "," << sy(km.surv[i]) << " ";
    }
    o << "\"/>\n";
    o << "<text x=\"" << w - mr - 8 << "\" y=\"" << mt + 16 + 16 * gi
      << "\" font-size=\"12\" text-anchor=\"end\" fill=\"" << color << "\">" << name
      << "</text>\n";
    ++gi;
  }
  o << "</svg>\n";
  write_text_file(path, o.str());
}

}  // namespace mmsf::io
