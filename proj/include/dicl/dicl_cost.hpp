#pragma once

#include <array>
#include <cstdlib>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dicl/layers.hpp"

namespace dicl {

inline constexpr int kMaxDisplacement = 3;
inline constexpr std::size_t kWindow = 2 * kMaxDisplacement + 1;   // U = V = 7
inline constexpr std::size_t kHypotheses = kWindow * kWindow;      // N = 49

/// Integer displacement hypothesis; u is horizontal, v vertical.
struct Displacement {
  int u = 0;
  int v = 0;

  /// Slot (i, j) = (u + 3, v + 3) flattened as i * 7 + j.
  std::size_t index() const {
    return static_cast<std::size_t>(u + kMaxDisplacement) * kWindow + static_cast<std::size_t>(v + kMaxDisplacement);
  }
  static Displacement from_index(std::size_t index);
  bool in_window() const { return std::abs(u) <= kMaxDisplacement && std::abs(v) <= kMaxDisplacement; }
  friend bool operator==(const Displacement&, const Displacement&) = default;
};

/// All 49 hypotheses in slot order: (-3,-3), (-3,-2), ..., (3,3).
const std::array<Displacement, kHypotheses>& all_displacements();

/// Learned costs, N x 49 x h x w, slot k holding Displacement::from_index(k).
struct CostVolume {
  Var costs;
  std::size_t level = 0;

  std::size_t batch() const { return costs->value.dim(0); }
  std::size_t height() const { return costs->value.dim(2); }
  std::size_t width() const { return costs->value.dim(3); }
  /// Copy of the cost map for one hypothesis, N x 1 x h x w.
  Tensor slice(Displacement d) const;
};

/// F1 || F2(p + d) along channels, with zero padding where p + d leaves the
/// map. F1, F2: N x C x h x w; result N x 2C x h x w.
Var concat_displaced(const Var& f1, const Var& f2, Displacement d);

/// concat_displaced for every displacement in `ds`, stacked along the batch
/// axis as [n][k]: result (N * |ds|) x 2C x h x w.
Var stack_displaced(const Var& f1, const Var& f2, std::span<const Displacement> ds);

/// Shared 2D matching net G: six layers, BN + ReLU on all but the last.
class MatchingNet {
 public:
  using Specs = std::array<ConvSpec, 6>;

  /// [64,96,3,1] [96,128,3,2] [128,128,3,1] [128,64,3,1] [64,32,4,2]^T [32,1,3,1]
  static Specs dicl_specs();

  explicit MatchingNet(std::mt19937_64& rng, const Specs& specs = dicl_specs());

  /// F_u: B x 64 x h x w with even h, w -> B x 1 x h x w. If
  /// `activation_sizes` is given, the element count of every layer output is
  /// appended to it.
  Var operator()(const Var& fu, Mode mode, std::vector<std::size_t>* activation_sizes = nullptr);

  const Specs& specs() const { return specs_; }
  const std::array<ConvLayer, 6>& layers() const { return layers_; }
  void collect(const std::string& prefix, ParamList& out);

 private:
  Specs specs_;
  std::array<ConvLayer, 6> layers_;
  std::array<BatchNormLayer, 5> norms_;
};

/// C(p, u) = G(F_u)(p) for a single concatenated map.
Var matching_cost(const Var& fu, MatchingNet& net, Mode mode);

/// Applies the same net to every hypothesis. `order` only changes the
/// evaluation order; the returned volume is always in slot order.
CostVolume build_cost_volume(const Var& f1, const Var& f2, MatchingNet& net, Mode mode,
                             std::optional<std::span<const Displacement>> order = std::nullopt);

}  // namespace dicl
