// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "shortcut/mappings.hpp"

#include <stdexcept>
#include <string>

#include "shortcut/binary_io.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/parallel.hpp"

namespace shortcut {

const char* to_string(MapKind kind) noexcept {
  switch (kind) {
    case MapKind::kMat: return "mat";
    case MapKind::kId: return "id";
    case MapKind::kAttn: return "attn";
    case MapKind::kFfn: return "ffn";
    case MapKind::kLn1: return "ln1";
    case MapKind::kLn2: return "ln2";
  }
  return "unknown";
}

MapKind map_kind_from_string(std::string_view name) {
  for (MapKind k : {MapKind::kMat, MapKind::kId, MapKind::kAttn, MapKind::kFfn, MapKind::kLn1,
                    MapKind::kLn2}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown map kind '" + std::string(name) + "'");
}

bool is_submodule(MapKind kind) noexcept {
  return kind != MapKind::kMat && kind != MapKind::kId;
}

LayerMap LayerMap::identity(std::size_t source, std::size_t target, std::size_t dimension) {
  LayerMap m;
  m.kind = MapKind::kId;
  m.source_layer = source;
  m.target_layer = target;
  m.dimension = dimension;
  return m;
}

std::vector<double> LayerMap::apply(std::span<const double> h) const {
  if (h.size() != dimension) {
    throw DimensionError("apply_map: vector of length " + std::to_string(h.size()) +
                         " for a map of dimension " + std::to_string(dimension));
  }
  if (kind == MapKind::kId) return {h.begin(), h.end()};
  auto y = matvec(matrix, h);
  for (std::size_t i = 0; i < bias.size(); ++i) y[i] += bias[i];
  return y;
}

std::vector<double> LayerMap::apply(std::span<const float> h) const {
  const std::vector<double> wide(h.begin(), h.end());
  return apply(std::span<const double>(wide));
}

Matrix LayerMap::apply_rows(const Matrix& rows) const {
  if (rows.cols() != dimension) {
    throw DimensionError("apply_map: rows of width " + std::to_string(rows.cols()) +
                         " for a map of dimension " + std::to_string(dimension));
  }
  if (kind == MapKind::kId) return rows;
  Matrix out = matmul_transposed(rows, matrix);
  if (!bias.empty()) {
    for (std::size_t i = 0; i < out.rows(); ++i) {
      auto r = out.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
    }
  }
  return out;
}

void MapGrid::add(LayerMap map) {
  if (map.dimension != d_hidden_) {
    throw DimensionError("MapGrid::add: map dimension " + std::to_string(map.dimension) +
                         " != grid d_h " + std::to_string(d_hidden_));
  }
  const Key key{map.kind, map.source_layer, map.target_layer};
  if (auto it = index_.find(key); it != index_.end()) {
    maps_[it->second] = std::move(map);
    return;
  }
  index_.emplace(key, maps_.size());
  maps_.push_back(std::move(map));
}

const LayerMap* MapGrid::find(MapKind kind, std::size_t source, std::size_t target) const {
  const auto it = index_.find(Key{kind, source, target});
  return it == index_.end() ? nullptr : &maps_[it->second];
}

const LayerMap& MapGrid::at(MapKind kind, std::size_t source, std::size_t target) const {
  if (const LayerMap* m = find(kind, source, target)) return *m;
  throw std::out_of_range(std::string("no ") + to_string(kind) + " map for " +
                          std::to_string(source) + " -> " + std::to_string(target));
}

namespace {

bool has_varying_column(const Matrix& y) {
  for (std::size_t c = 0; c < y.cols(); ++c) {
    for (std::size_t i = 1; i < y.rows(); ++i) {
      if (y(i, c) != y(0, c)) return true;
    }
  }
  return false;
}

LayerMap fit_matrices(MapKind kind, std::size_t source, std::size_t target, const Matrix& x,
                      const Matrix& y, const FitOptions& options) {
  if (x.rows() < 2) {
    throw std::invalid_argument("fit: need at least 2 training records, have " +
                                std::to_string(x.rows()));
  }
  auto solution = solve_least_squares(
      x, y, LeastSquaresOptions{.ridge = options.ridge, .fit_intercept = options.fit_intercept});
  LayerMap map;
  map.kind = kind;
  map.source_layer = source;
  map.target_layer = target;
  map.dimension = x.cols();
  map.matrix = std::move(solution.coefficients);
  map.bias = std::move(solution.intercept);
  map.fit.n_train = x.rows();
  map.fit.ridge = options.ridge;
  map.fit.route = solution.route;

  const Matrix predicted = map.apply_rows(x);
  double objective = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double e = predicted.values()[i] - y.values()[i];
    objective += e * e;
  }
  map.fit.objective = objective;
  if (has_varying_column(y)) {
    const R2Score r2 = r2_coordinate_averaged(predicted, y);
    map.fit.r2_in_sample = r2.value;
    map.fit.r2_skipped = r2.skipped_coordinates;
  } else {
    // Constant target (e.g. a silenced sub-module): 1 for an exact fit.
    map.fit.r2_in_sample = objective == 0.0 ? 1.0 : 0.0;
    map.fit.r2_skipped = y.cols();
  }
  return map;
}

std::string pair_name(std::size_t source, std::size_t target) {
  return "(" + std::to_string(source) + ", " + std::to_string(target) + ")";
}

}  // namespace

LayerMap fit_layer_map(const TraceSet& train, std::size_t source, std::size_t target,
                       const FitOptions& options) {
  if (!(source < target) || target > train.meta.n_layers) {
    throw std::invalid_argument("fit_layer_map: need 0 <= source < target <= L, got " +
                                pair_name(source, target));
  }
  return fit_matrices(MapKind::kMat, source, target, train.layer_matrix(source),
                      train.layer_matrix(target), options);
}

namespace {

MapGrid fit_pairs(const TraceSet& train,
                  const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                  const FitOptions& options) {
  // Layer matrices are shared by many pairs; build them once.
  std::vector<Matrix> layers;
  layers.reserve(train.meta.n_layers + 1);
  for (std::size_t l = 0; l <= train.meta.n_layers; ++l) layers.push_back(train.layer_matrix(l));

  std::vector<LayerMap> fitted(pairs.size());
  FitOptions inner = options;
  inner.threads = 1;
  parallel_for(pairs.size(), options.threads, [&](std::size_t i) {
    const auto [s, t] = pairs[i];
    try {
      fitted[i] = fit_matrices(MapKind::kMat, s, t, layers[s], layers[t], inner);
    } catch (const std::exception& e) {
      throw std::runtime_error("fit of pair " + pair_name(s, t) + " failed: " + e.what());
    }
  });
  MapGrid grid(train.meta.n_layers, train.meta.d_hidden);
  for (auto& m : fitted) grid.add(std::move(m));
  return grid;
}

}  // namespace

MapGrid fit_all_pairs(const TraceSet& train, const FitOptions& options) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t s = 0; s < train.meta.n_layers; ++s) {
    for (std::size_t t = s + 1; t <= train.meta.n_layers; ++t) pairs.emplace_back(s, t);
  }
  return fit_pairs(train, pairs, options);
}

MapGrid fit_target_column(const TraceSet& train, std::size_t target, const FitOptions& options) {
  if (target > train.meta.n_layers) throw std::invalid_argument("fit_target_column: target > L");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t s = 0; s < target; ++s) pairs.emplace_back(s, target);
  return fit_pairs(train, pairs, options);
}

std::vector<LayerMap> fit_submodule_maps(const TraceSet& train, ReplacementKind kind,
                                         std::size_t first_layer, std::size_t last_layer,
                                         const FitOptions& options) {
  if (!train.meta.has_submodules) {
    throw std::invalid_argument(
        "fit_submodule_maps: traces lack sub-module taps (collect with tap_submodules)");
  }
  if (first_layer < 1 || last_layer > train.meta.n_layers || first_layer > last_layer) {
    throw std::invalid_argument("fit_submodule_maps: layer range must lie in [1, L]");
  }
  struct Job {
    MapKind kind;
    std::size_t layer;
    TapSlot input;
    TapSlot output;
  };
  std::vector<Job> jobs;
  for (std::size_t l = first_layer; l <= last_layer; ++l) {
    switch (kind) {
      case ReplacementKind::kAttn:
        jobs.push_back({MapKind::kAttn, l, TapSlot::kLn1Out, TapSlot::kAttnOut});
        break;
      case ReplacementKind::kFfn:
        jobs.push_back({MapKind::kFfn, l, TapSlot::kLn2Out, TapSlot::kFfnOut});
        break;
      case ReplacementKind::kLn1Ln2:
        jobs.push_back({MapKind::kLn1, l, TapSlot::kLn1In, TapSlot::kLn1Out});
        jobs.push_back({MapKind::kLn2, l, TapSlot::kLn2In, TapSlot::kLn2Out});
        break;
    }
  }
  std::vector<LayerMap> out(jobs.size());
  FitOptions inner = options;
  inner.threads = 1;
  parallel_for(jobs.size(), options.threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    try {
      out[i] = fit_matrices(job.kind, job.layer, job.layer, train.tap_matrix(job.layer, job.input),
                            train.tap_matrix(job.layer, job.output), inner);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("fit of ") + to_string(job.kind) + " map for layer " +
                               std::to_string(job.layer) + " failed: " + e.what());
    }
  });
  return out;
}

MapGrid submodule_grid(const TraceSet& train, ReplacementKind kind, const FitOptions& options) {
  MapGrid grid(train.meta.n_layers, train.meta.d_hidden);
  if (train.meta.n_layers == 0) return grid;
  for (auto& m : fit_submodule_maps(train, kind, 1, train.meta.n_layers, options)) {
    grid.add(std::move(m));
  }
  return grid;
}

BlockReplacement to_replacement(const MapGrid& grid, ReplacementKind kind) {
  BlockReplacement r;
  r.kind = kind;
  for (const auto& m : grid.maps()) {
    if (!m.bias.empty()) {
      throw std::invalid_argument("to_replacement: sub-module maps with intercepts are unsupported");
    }
    switch (m.kind) {
      case MapKind::kAttn:
        if (kind == ReplacementKind::kAttn) r.primary.emplace(m.target_layer, m.matrix);
        break;
      case MapKind::kFfn:
        if (kind == ReplacementKind::kFfn) r.primary.emplace(m.target_layer, m.matrix);
        break;
      case MapKind::kLn1:
        if (kind == ReplacementKind::kLn1Ln2) r.primary.emplace(m.target_layer, m.matrix);
        break;
      case MapKind::kLn2:
        if (kind == ReplacementKind::kLn1Ln2) r.secondary.emplace(m.target_layer, m.matrix);
        break;
      default:
        break;
    }
  }
  return r;
}

void require_compatible(const MapGrid& grid, const TraceMetadata& traces) {
  if (grid.d_hidden() != traces.d_hidden) {
    throw DimensionError("map file has d_h = " + std::to_string(grid.d_hidden()) +
                         " but traces have d_h = " + std::to_string(traces.d_hidden));
  }
  if (grid.n_layers() != traces.n_layers) {
    throw DimensionError("map file has L = " + std::to_string(grid.n_layers()) +
                         " but traces have L = " + std::to_string(traces.n_layers));
  }
}

// ---------------------------------------------------------------------------
// SCMAP container

namespace {

constexpr std::string_view kMagic = "SCMAP";

FormatError malformed(const std::string& what) {
  return FormatError(FormatError::Kind::kMalformed, "map file: " + what);
}

const char* route_name(SolverRoute r) {
  return r == SolverRoute::kCholesky ? "cholesky" : "orthogonal";
}

}  // namespace

std::string serialize_maps(const MapGrid& grid) {
  nlohmann::json j = grid.extra().is_object() ? grid.extra() : nlohmann::json::object();
  j["n_layers"] = grid.n_layers();
  j["d_hidden"] = grid.d_hidden();
  j["maps"] = nlohmann::json::array();
  for (const auto& m : grid.maps()) {
    j["maps"].push_back({{"kind", to_string(m.kind)},
                         {"source", m.source_layer},
                         {"target", m.target_layer},
                         {"has_matrix", !m.matrix.empty()},
                         {"has_bias", !m.bias.empty()},
                         {"n_train", m.fit.n_train},
                         {"ridge", m.fit.ridge},
                         {"objective", m.fit.objective},
                         {"r2_in_sample", m.fit.r2_in_sample},
                         {"r2_skipped", m.fit.r2_skipped},
                         {"route", route_name(m.fit.route)}});
  }
  io::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kMapFormatVersion);
  const std::string header = j.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  for (const auto& m : grid.maps()) {
    for (double v : m.matrix.values()) w.f64(v);
    for (double v : m.bias) w.f64(v);
  }
  return w.release();
}

MapGrid deserialize_maps(std::string_view bytes) {
  io::ByteReader r(bytes, "map file");
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) {
    throw FormatError(FormatError::Kind::kBadMagic, "map file: bad magic (expected SCMAP)");
  }
  const auto version = r.u16();
  if (version != kMapFormatVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch,
                      "map file: version " + std::to_string(version) + ", expected " +
                          std::to_string(kMapFormatVersion));
  }
  const auto header_len = r.u32();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw malformed(std::string("metadata: ") + e.what());
  }

  std::vector<LayerMap> maps;
  std::size_t n_layers = 0;
  std::size_t d = 0;
  std::size_t payload = 0;
  try {
    n_layers = j.at("n_layers").get<std::size_t>();
    d = j.at("d_hidden").get<std::size_t>();
    for (const auto& e : j.at("maps")) {
      LayerMap m;
      m.kind = map_kind_from_string(e.at("kind").get<std::string>());
      m.source_layer = e.at("source").get<std::size_t>();
      m.target_layer = e.at("target").get<std::size_t>();
      m.dimension = d;
      m.fit.n_train = e.value("n_train", std::size_t{0});
      m.fit.ridge = e.value("ridge", 0.0);
      m.fit.objective = e.value("objective", 0.0);
      m.fit.r2_in_sample = e.value("r2_in_sample", 0.0);
      m.fit.r2_skipped = e.value("r2_skipped", std::size_t{0});
      m.fit.route = e.value("route", std::string("cholesky")) == "orthogonal"
                        ? SolverRoute::kOrthogonal
                        : SolverRoute::kCholesky;
      const bool has_matrix = e.value("has_matrix", m.kind != MapKind::kId);
      if (has_matrix) {
        m.matrix = Matrix(d, d);
        payload += d * d;
      }
      if (e.value("has_bias", false)) {
        m.bias.resize(d);
        payload += d;
      }
      if (m.kind != MapKind::kId && !is_submodule(m.kind) &&
          !(m.source_layer < m.target_layer && m.target_layer <= n_layers)) {
        throw std::invalid_argument("cross-layer map with invalid layers");
      }
      maps.push_back(std::move(m));
    }
  } catch (const std::exception& e) {
    throw malformed(std::string("metadata: ") + e.what());
  }
  if (r.remaining() < payload * 8) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "map file: truncated, expected " + std::to_string(payload * 8) +
                          " matrix bytes, have " + std::to_string(r.remaining()));
  }
  for (auto& m : maps) {
    for (double& v : m.matrix.values()) v = r.f64();
    for (double& v : m.bias) v = r.f64();
  }
  if (r.remaining() != 0) throw malformed("trailing bytes after last matrix");

  MapGrid grid(n_layers, d);
  for (const auto& [key, value] : j.items()) {
    if (key != "n_layers" && key != "d_hidden" && key != "maps") grid.extra()[key] = value;
  }
  for (auto& m : maps) grid.add(std::move(m));
  return grid;
}

void save_maps(const MapGrid& grid, const std::filesystem::path& path) {
  io::write_file(path, serialize_maps(grid));
}

MapGrid load_maps(const std::filesystem::path& path) {
  return deserialize_maps(io::read_file(path));
}

}  // namespace shortcut
