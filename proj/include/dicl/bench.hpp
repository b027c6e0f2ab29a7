#pragma once

// Closed-form parameter/memory accounting for three ways of processing a
// K-channel feature volume over a U x V window, plus d_peak histograms and
// DAP kernel dumps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dicl/dicl_cost.hpp"
#include "dicl/flow_head.hpp"

namespace dicl {

enum class SchemeKind { conv4d, vcn_separable, dicl };

inline constexpr std::array<SchemeKind, 3> kAllSchemes{SchemeKind::dicl, SchemeKind::vcn_separable,
                                                       SchemeKind::conv4d};

std::string to_string(SchemeKind kind);
/// "conv4d", "vcn" / "vcn_separable", "dicl"
SchemeKind parse_scheme_kind(std::string_view name);

struct CostingScheme {
  SchemeKind kind = SchemeKind::dicl;
  std::uint64_t K = 64;
  std::uint64_t U = kWindow;
  std::uint64_t V = kWindow;
  std::uint64_t h = 1;
  std::uint64_t w = 1;

  void validate() const;
};

/// Kernel weights of one 3x3(x3x3) layer: 81 K^2, 18 K^2 or 9 K.
std::uint64_t per_layer_params(const CostingScheme& scheme);
/// Live activation elements of one layer: K U V h w, or K h w for dicl.
std::uint64_t inference_memory(const CostingScheme& scheme);

struct AccountingRow {
  SchemeKind kind;
  std::uint64_t params;
  std::uint64_t params_ratio;  // relative to dicl
  std::uint64_t memory;
  std::uint64_t memory_ratio;  // relative to dicl
};

/// dicl, vcn_separable, conv4d rows for one configuration.
std::vector<AccountingRow> accounting_table(std::uint64_t K, std::uint64_t U, std::uint64_t V, std::uint64_t h,
                                            std::uint64_t w);
/// Header: scheme,K,U,V,h,w,params,params_ratio,memory,memory_ratio
void write_accounting_csv(std::ostream& out, const std::vector<AccountingRow>& rows, std::uint64_t K, std::uint64_t U,
                          std::uint64_t V, std::uint64_t h, std::uint64_t w);

struct HistogramSpec {
  double bin_width = 0.001;
  double lo = 0.0;
  double hi = 1.0;

  std::size_t bins() const;
};

struct Histogram {
  HistogramSpec spec;
  std::vector<std::uint64_t> counts;
  double median = 0.0;
  std::size_t total = 0;

  double bin_start(std::size_t i) const;
};

/// Values must lie in [lo, hi]; hi falls into the last bin. Throws on empty
/// input.
Histogram dpeak_histogram(std::span<const double> values, const HistogramSpec& spec = {});
/// Header: bin_start,count
void write_histogram_csv(std::ostream& out, const Histogram& hist);

/// d_peak values of N x 49 x h x w probabilities at pixels where `mask`
/// (N x 1 x h x w) is nonzero; every pixel when `mask` is empty.
std::vector<double> dpeak_values(const Tensor& probs, const Tensor& mask = {});

/// kernel_00.png ... kernel_48.png (row k of W as a 7x7 image, min-max
/// normalized, white = high) and dap_weights.csv with the raw 49x49 values.
void dump_dap_kernels(const DapParams& dap, const std::filesystem::path& dir);
/// 49 x 49 matrix from dap_weights.csv.
Tensor read_dap_csv(const std::filesystem::path& path);
/// Row k of W as 7 x 7 bytes, pixel (y, x) holding displacement
/// (x - 3, y - 3), min-max normalized (constant rows map to 0).
std::vector<std::uint8_t> dap_kernel_image(const Tensor& matrix, std::size_t k);

struct ActivationProbe {
  std::vector<std::size_t> layer_elements;  // per layer, per hypothesis
  std::size_t peak = 0;
  std::uint64_t formula = 0;  // dicl inference_memory for K = 64
};

/// Runs one matching_cost call on a 64 x h x w input and records every layer
/// output's element count.
ActivationProbe probe_matching_activations(MatchingNet& net, std::size_t h, std::size_t w);

}  // namespace dicl
