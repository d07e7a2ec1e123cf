// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "shortcut/linalg.hpp"
#include "shortcut/model.hpp"
#include "shortcut/traces.hpp"

namespace shortcut {

/// mat: learned cross-layer cast; id: the identity baseline; the rest are
/// per-block sub-module maps (source == target == owning layer).
enum class MapKind { kMat, kId, kAttn, kFfn, kLn1, kLn2 };

const char* to_string(MapKind kind) noexcept;
MapKind map_kind_from_string(std::string_view name);
bool is_submodule(MapKind kind) noexcept;

struct FitInfo {
  std::size_t n_train = 0;
  double ridge = 0.0;
  /// In-sample Σ‖A·x − y‖².
  double objective = 0.0;
  double r2_in_sample = 0.0;
  std::size_t r2_skipped = 0;
  SolverRoute route = SolverRoute::kCholesky;

  friend bool operator==(const FitInfo&, const FitInfo&) = default;
};

struct LayerMap {
  MapKind kind = MapKind::kMat;
  std::size_t source_layer = 0;
  std::size_t target_layer = 0;
  std::size_t dimension = 0;
  /// dimension × dimension; empty for kId.
  Matrix matrix;
  /// Only present when fit with an intercept.
  std::vector<double> bias;
  FitInfo fit;

  static LayerMap identity(std::size_t source, std::size_t target, std::size_t dimension);

  std::vector<double> apply(std::span<const double> h) const;
  std::vector<double> apply(std::span<const float> h) const;
  /// Applies the map to every row.
  Matrix apply_rows(const Matrix& rows) const;

  friend bool operator==(const LayerMap&, const LayerMap&) = default;
};

inline std::vector<double> apply_map(const LayerMap& map, std::span<const double> h) {
  return map.apply(h);
}

/// A set of fitted maps for one model shape, keyed by (kind, source, target).
class MapGrid {
 public:
  MapGrid() = default;
  MapGrid(std::size_t n_layers, std::size_t d_hidden) : n_layers_(n_layers), d_hidden_(d_hidden) {}

  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t d_hidden() const noexcept { return d_hidden_; }
  std::size_t size() const noexcept { return maps_.size(); }
  const std::vector<LayerMap>& maps() const noexcept { return maps_; }

  /// Replaces any existing map with the same key.
  void add(LayerMap map);
  const LayerMap* find(MapKind kind, std::size_t source, std::size_t target) const;
  const LayerMap& at(MapKind kind, std::size_t source, std::size_t target) const;

  nlohmann::json& extra() noexcept { return extra_; }
  const nlohmann::json& extra() const noexcept { return extra_; }

  friend bool operator==(const MapGrid&, const MapGrid&) = default;

 private:
  using Key = std::tuple<MapKind, std::size_t, std::size_t>;
  std::size_t n_layers_ = 0;
  std::size_t d_hidden_ = 0;
  std::vector<LayerMap> maps_;
  std::map<Key, std::size_t> index_;
  nlohmann::json extra_ = nlohmann::json::object();
};

struct FitOptions {
  double ridge = 0.0;
  bool fit_intercept = false;
  std::size_t threads = 1;
};

/// Least-squares cast from h^source to h^target over all training records.
LayerMap fit_layer_map(const TraceSet& train, std::size_t source, std::size_t target,
                       const FitOptions& options = {});

/// Every pair 0 ≤ ℓ < ℓ′ ≤ L: L(L+1)/2 maps.
MapGrid fit_all_pairs(const TraceSet& train, const FitOptions& options = {});

/// Only the column ℓ → target for ℓ < target.
MapGrid fit_target_column(const TraceSet& train, std::size_t target,
                          const FitOptions& options = {});

/// One map per layer in [first_layer, last_layer] (two for kLn1Ln2).
/// attn: attention output on ln1 output; ffn: FFN output on ln2 output;
/// ln1/ln2: layer-norm output on layer-norm input.
std::vector<LayerMap> fit_submodule_maps(const TraceSet& train, ReplacementKind kind,
                                         std::size_t first_layer, std::size_t last_layer,
                                         const FitOptions& options = {});

MapGrid submodule_grid(const TraceSet& train, ReplacementKind kind, const FitOptions& options = {});

/// Sub-module maps of `kind` in the form consumed by forward_from_layer.
BlockReplacement to_replacement(const MapGrid& grid, ReplacementKind kind);

/// Throws DimensionError when the grid's d_h or L disagrees with the traces.
void require_compatible(const MapGrid& grid, const TraceMetadata& traces);

/// Map file: magic "SCMAP", u16 version, u32-length JSON metadata, then
/// f64 little-endian matrices (and biases) in metadata order.
std::string serialize_maps(const MapGrid& grid);
MapGrid deserialize_maps(std::string_view bytes);
void save_maps(const MapGrid& grid, const std::filesystem::path& path);
MapGrid load_maps(const std::filesystem::path& path);

inline constexpr std::uint16_t kMapFormatVersion = 1;

}  // namespace shortcut
