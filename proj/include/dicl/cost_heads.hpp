#pragma once

// Interchangeable cost heads. Every head maps a feature pair (N x 32 x h x w
// each) to an N x 49 x h x w cost volume in slot order, lower = better.

#include <array>
#include <memory>
#include <random>
#include <string>
#include <string_view>

#include "dicl/dicl_cost.hpp"

namespace dicl {

enum class CostHeadKind { dot, cosine, mlp3, reduced_dicl, dicl };

inline constexpr std::array<CostHeadKind, 5> kAllCostHeads{CostHeadKind::dot, CostHeadKind::cosine,
                                                           CostHeadKind::mlp3, CostHeadKind::reduced_dicl,
                                                           CostHeadKind::dicl};

/// "dot", "cosine", "mlp3", "reduced-dicl", "dicl"
std::string to_string(CostHeadKind kind);
/// Accepts the names above; "reduced_dicl" is also allowed.
CostHeadKind parse_cost_head(std::string_view name);

class CostHead {
 public:
  virtual ~CostHead() = default;
  virtual CostHeadKind kind() const = 0;
  virtual CostVolume cost_volume(const Var& f1, const Var& f2, Mode mode) = 0;
  /// Heads with a stride-2 down/up pair need even spatial extents.
  virtual bool needs_even_extent() const { return false; }
  virtual void collect(const std::string& /*prefix*/, ParamList& /*out*/) {}
};

std::unique_ptr<CostHead> make_cost_head(CostHeadKind kind, std::mt19937_64& rng);

enum class Similarity { dot, cosine };

/// Similarity of F1(p) and F2(p + d) for each d in `ds`: N x |ds| x h x w.
/// Out-of-range F2 samples are zero vectors. Cosine uses
/// <a, b> / (|a| |b| + 1e-9).
Var similarity_volume(const Var& f1, const Var& f2, std::span<const Displacement> ds, Similarity kind);

/// <F1(p), F2(p + d)>, N x 1 x h x w.
Var dot_similarity(const Var& f1, const Var& f2, Displacement d);
/// Cosine similarity of F1(p) and F2(p + d), N x 1 x h x w.
Var cosine_similarity(const Var& f1, const Var& f2, Displacement d);

/// Negated non-learned similarity over the full window.
class SimilarityHead final : public CostHead {
 public:
  explicit SimilarityHead(Similarity kind) : kind_(kind) {}
  CostHeadKind kind() const override { return kind_ == Similarity::dot ? CostHeadKind::dot : CostHeadKind::cosine; }
  CostVolume cost_volume(const Var& f1, const Var& f2, Mode mode) override;

 private:
  Similarity kind_;
};

/// Per-pixel MLP 64 -> 64 -> 64 -> 1 with ReLU between layers, i.e. three
/// 1x1 convolutions shared across pixels and hypotheses.
class Mlp3Head final : public CostHead {
 public:
  static constexpr std::size_t kHidden = 64;

  explicit Mlp3Head(std::mt19937_64& rng);
  CostHeadKind kind() const override { return CostHeadKind::mlp3; }
  CostVolume cost_volume(const Var& f1, const Var& f2, Mode mode) override;
  void collect(const std::string& prefix, ParamList& out) override;

  /// Scores a concatenated map F_u: B x 64 x h x w -> B x 1 x h x w.
  Var score(const Var& fu) const;
  std::array<ConvLayer, 3>& layers() { return layers_; }

 private:
  std::array<ConvLayer, 3> layers_;
};

/// DICL matching net applied to every hypothesis. `reduced` swaps in the
/// variant with 1x1 kernels (and a 2x2 stride-2 transposed layer).
class MatchingNetHead final : public CostHead {
 public:
  MatchingNetHead(std::mt19937_64& rng, bool reduced);
  CostHeadKind kind() const override { return reduced_ ? CostHeadKind::reduced_dicl : CostHeadKind::dicl; }
  CostVolume cost_volume(const Var& f1, const Var& f2, Mode mode) override;
  bool needs_even_extent() const override { return true; }
  void collect(const std::string& prefix, ParamList& out) override { net_.collect(prefix, out); }

  MatchingNet& net() { return net_; }

 private:
  bool reduced_;
  MatchingNet net_;
};

/// [64,96,1,1] [96,128,1,2] [128,128,1,1] [128,64,1,1] [64,32,2,2]^T [32,1,1,1]
MatchingNet::Specs reduced_dicl_specs();

/// Reduced matching net applied to one concatenated map.
Var reduced_dicl_cost(const Var& fu, MatchingNet& net, Mode mode);
/// Three-layer MLP applied to one concatenated map.
Var mlp3_cost(const Var& fu, const Mlp3Head& head);

}  // namespace dicl
