#include "mmsf/graph.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mmsf/errors.hpp"

namespace mmsf::graph {

void PatchBag::validate() const {
  if (features.rows < 1) throw DataError("bag '" + bag_id + "' is empty");
  if (coords.rows != features.rows || coords.cols != 2)
    throw ShapeError("bag '" + bag_id + "': coords must be N x 2 matching features");
  if (!features.all_finite()) throw DataError("bag '" + bag_id + "': non-finite features");
}

void SpatialGraph::finalize() {
  degree.assign(size_t(num_vertices), 0);
  for (auto [u, v] : edges) {
    degree[size_t(u)]++;
    degree[size_t(v)]++;
  }
  adj_offsets.assign(size_t(num_vertices) + 1, 0);
  for (int i = 0; i < num_vertices; ++i)
    adj_offsets[size_t(i) + 1] = adj_offsets[size_t(i)] + degree[size_t(i)] + 1;
  adj.assign(size_t(adj_offsets.back()), 0);
  std::vector<int> cursor(adj_offsets.begin(), adj_offsets.end() - 1);
  for (int i = 0; i < num_vertices; ++i) adj[size_t(cursor[size_t(i)]++)] = i;  // self
  for (auto [u, v] : edges) {
    adj[size_t(cursor[size_t(u)]++)] = v;
    adj[size_t(cursor[size_t(v)]++)] = u;
  }
  for (int i = 0; i < num_vertices; ++i)
    std::sort(adj.begin() + adj_offsets[size_t(i)], adj.begin() + adj_offsets[size_t(i) + 1]);
}

bool SpatialGraph::has_edge(int u, int v) const {
  if (u == v) return false;
  int e0 = adj_offsets[size_t(u)], e1 = adj_offsets[size_t(u) + 1];
  return std::binary_search(adj.begin() + e0, adj.begin() + e1, v);
}

namespace {

struct CellKey {
  int64_t x, y;
  bool operator==(const CellKey& o) const { return x == o.x && y == o.y; }
};

struct CellHash {
  size_t operator()(const CellKey& k) const {
    uint64_t h = uint64_t(k.x) * 0x9e3779b97f4a7c15ULL ^ uint64_t(k.y) * 0xc2b2ae3d27d4eb4fULL;
    h ^= h >> 29;
    return size_t(h);
  }
};

double cosine_double(const num::Mat<float>& f, int i, int j) {
  const float* a = f.row_ptr(i);
  const float* b = f.row_ptr(j);
  double ab = 0, aa = 0, bb = 0;
  for (int c = 0; c < f.cols; ++c) {
    ab += double(a[c]) * double(b[c]);
    aa += double(a[c]) * double(a[c]);
    bb += double(b[c]) * double(b[c]);
  }
  if (aa == 0.0 || bb == 0.0)
    throw DegenerateInputError("build_graph: zero-norm patch feature");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace

SpatialGraph build_graph(const PatchBag& bag, double tau_spatial, double tau_tissue) {
  bag.validate();
  if (!(tau_spatial > 0.0)) throw ConfigError("build_graph: tau_spatial must be > 0");
  if (tau_tissue < -1.0 || tau_tissue > 1.0)
    throw ConfigError("build_graph: tau_tissue must be in [-1, 1]");

  const int n = bag.num_patches();
  SpatialGraph g;
  g.num_vertices = n;

  // Uniform grid with cell side tau_spatial; candidate pairs live in the
  // 3x3 cell neighborhood.
  std::unordered_map<CellKey, std::vector<int>, CellHash> cells;
  cells.reserve(size_t(n) * 2);
  auto key_of = [&](int i) {
    return CellKey{int64_t(std::floor(double(bag.coords(i, 0)) / tau_spatial)),
                   int64_t(std::floor(double(bag.coords(i, 1)) / tau_spatial))};
  };
  for (int i = 0; i < n; ++i) cells[key_of(i)].push_back(i);

  const double tau2 = tau_spatial * tau_spatial;
  for (int i = 0; i < n; ++i) {
    CellKey k = key_of(i);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy) {
        auto it = cells.find(CellKey{k.x + dx, k.y + dy});
        if (it == cells.end()) continue;
        for (int j : it->second) {
          if (j <= i) continue;  // each unordered pair once
          double ddx = double(bag.coords(i, 0)) - double(bag.coords(j, 0));
          double ddy = double(bag.coords(i, 1)) - double(bag.coords(j, 1));
          if (ddx * ddx + ddy * ddy >= tau2) continue;
          if (cosine_double(bag.features, i, j) > tau_tissue) g.edges.emplace_back(i, j);
        }
      }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.finalize();
  return g;
}

void GraphEncoderConfig::validate() const {
  if (hidden_dim < 1 || out_dim < 1) throw ConfigError("graph encoder dims must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("graph dropout must be in [0,1)");
  if (model_kind == Kind::GAT) {
    if (heads < 1) throw ConfigError("graph heads must be >= 1");
    if (hidden_dim % heads != 0)
      throw ConfigError("graph hidden_dim must be divisible by heads");
  }
}

}  // namespace mmsf::graph
