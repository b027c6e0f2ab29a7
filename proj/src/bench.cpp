#include "dicl/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dicl/flowdata.hpp"

namespace dicl {

std::string to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::conv4d: return "conv4d";
    case SchemeKind::vcn_separable: return "vcn_separable";
    case SchemeKind::dicl: return "dicl";
  }
  return "?";
}

SchemeKind parse_scheme_kind(std::string_view name) {
  if (name == "conv4d") return SchemeKind::conv4d;
  if (name == "vcn" || name == "vcn_separable") return SchemeKind::vcn_separable;
  if (name == "dicl") return SchemeKind::dicl;
  throw std::invalid_argument("unknown costing scheme '" + std::string(name) + "' (expected conv4d, vcn or dicl)");
}

void CostingScheme::validate() const {
  if (K == 0 || U == 0 || V == 0 || h == 0 || w == 0) {
    throw std::invalid_argument("costing scheme extents must be positive");
  }
}

std::uint64_t per_layer_params(const CostingScheme& s) {
  s.validate();
  switch (s.kind) {
    case SchemeKind::conv4d: return 81 * s.K * s.K;
    case SchemeKind::vcn_separable: return 18 * s.K * s.K;
    case SchemeKind::dicl: return 9 * s.K;
  }
  throw std::invalid_argument("unknown costing scheme");
}

std::uint64_t inference_memory(const CostingScheme& s) {
  s.validate();
  switch (s.kind) {
    case SchemeKind::conv4d:
    case SchemeKind::vcn_separable: return s.K * s.U * s.V * s.h * s.w;
    case SchemeKind::dicl: return s.K * s.h * s.w;
  }
  throw std::invalid_argument("unknown costing scheme");
}

std::vector<AccountingRow> accounting_table(std::uint64_t K, std::uint64_t U, std::uint64_t V, std::uint64_t h,
                                            std::uint64_t w) {
  const CostingScheme base{SchemeKind::dicl, K, U, V, h, w};
  const std::uint64_t p0 = per_layer_params(base), m0 = inference_memory(base);
  std::vector<AccountingRow> rows;
  for (SchemeKind kind : kAllSchemes) {
    CostingScheme s = base;
    s.kind = kind;
    const std::uint64_t p = per_layer_params(s), m = inference_memory(s);
    rows.push_back({kind, p, p / p0, m, m / m0});
  }
  return rows;
}

void write_accounting_csv(std::ostream& out, const std::vector<AccountingRow>& rows, std::uint64_t K, std::uint64_t U,
                          std::uint64_t V, std::uint64_t h, std::uint64_t w) {
  out << "scheme,K,U,V,h,w,params,params_ratio,memory,memory_ratio\n";
  for (const auto& r : rows) {
    out << to_string(r.kind) << ',' << K << ',' << U << ',' << V << ',' << h << ',' << w << ',' << r.params << ','
        << r.params_ratio << ',' << r.memory << ',' << r.memory_ratio << '\n';
  }
}

// ---------------------------------------------------------------------------
// Histograms

std::size_t HistogramSpec::bins() const {
  if (!(bin_width > 0.0) || !(hi > lo)) throw std::invalid_argument("histogram needs bin_width > 0 and hi > lo");
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround((hi - lo) / bin_width)));
}

double Histogram::bin_start(std::size_t i) const {
  return spec.lo + (spec.hi - spec.lo) * static_cast<double>(i) / static_cast<double>(counts.size());
}

Histogram dpeak_histogram(std::span<const double> values, const HistogramSpec& spec) {
  if (values.empty()) throw std::invalid_argument("dpeak_histogram: no values");
  Histogram hist{spec, std::vector<std::uint64_t>(spec.bins()), 0.0, values.size()};
  const double n = static_cast<double>(hist.counts.size());
  for (double v : values) {
    if (!(v >= spec.lo && v <= spec.hi)) {
      throw std::invalid_argument("dpeak_histogram: value " + std::to_string(v) + " outside the histogram range");
    }
    const auto bin = static_cast<std::size_t>(std::floor((v - spec.lo) * n / (spec.hi - spec.lo)));
    ++hist.counts[std::min(bin, hist.counts.size() - 1)];
  }
  hist.median = median(std::vector<double>(values.begin(), values.end()));
  return hist;
}

void write_histogram_csv(std::ostream& out, const Histogram& hist) {
  out << "bin_start,count\n";
  char buf[64];
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g,", hist.bin_start(i));
    out << buf << hist.counts[i] << '\n';
  }
}

std::vector<double> dpeak_values(const Tensor& probs, const Tensor& mask) {
  const Tensor d = d_peak(probs);
  if (!mask.empty() && !mask.same_shape(d)) {
    throw ShapeError("dpeak_values: mask " + shape_string(mask.shape()) + " does not match " +
                     shape_string(d.shape()));
  }
  std::vector<double> out;
  out.reserve(d.numel());
  for (std::size_t i = 0; i < d.numel(); ++i)
    if (mask.empty() || mask[i] != 0.0) out.push_back(d[i]);
  return out;
}

// ---------------------------------------------------------------------------
// DAP kernels

std::vector<std::uint8_t> dap_kernel_image(const Tensor& matrix, std::size_t k) {
  if (matrix.shape() != Shape{kHypotheses, kHypotheses} || k >= kHypotheses) {
    throw ShapeError("dap_kernel_image: expected a 49x49 matrix and row < 49");
  }
  const double* row = matrix.data() + k * kHypotheses;
  const auto [lo, hi] = std::minmax_element(row, row + kHypotheses);
  const double range = *hi - *lo;
  std::vector<std::uint8_t> px(kHypotheses);
  // Image pixel (y, x) shows displacement (u, v) = (x - 3, y - 3).
  for (std::size_t s = 0; s < kHypotheses; ++s) {
    const Displacement d = Displacement::from_index(s);
    const std::size_t pixel = static_cast<std::size_t>(d.v + kMaxDisplacement) * kWindow +
                              static_cast<std::size_t>(d.u + kMaxDisplacement);
    px[pixel] = range > 0.0 ? static_cast<std::uint8_t>(std::lround((row[s] - *lo) / range * 255.0)) : 0;
  }
  return px;
}

void dump_dap_kernels(const DapParams& dap, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Tensor m = dap.matrix();
  for (std::size_t k = 0; k < kHypotheses; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "kernel_%02zu.png", k);
    write_gray_png(dir / name, kWindow, kWindow, dap_kernel_image(m, k));
  }
  const auto csv = dir / "dap_weights.csv";
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot open " + csv.string() + " for writing");
  char buf[40];
  for (std::size_t r = 0; r < kHypotheses; ++r) {
    for (std::size_t c = 0; c < kHypotheses; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m[r * kHypotheses + c]);
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write to " + csv.string() + " failed");
}

Tensor read_dap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Tensor m({kHypotheses, kHypotheses});
  std::string line;
  std::size_t r = 0;
  while (std::getline(in, line) && r < kHypotheses) {
    std::istringstream cells(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(cells, cell, ',')) {
      if (c >= kHypotheses) throw std::runtime_error(path.string() + ": too many columns in row " + std::to_string(r));
      m[r * kHypotheses + c++] = std::stod(cell);
    }
    if (c != kHypotheses) throw std::runtime_error(path.string() + ": row " + std::to_string(r) + " has " +
                                                   std::to_string(c) + " columns");
    ++r;
  }
  if (r != kHypotheses) throw std::runtime_error(path.string() + ": expected 49 rows");
  return m;
}

// ---------------------------------------------------------------------------

ActivationProbe probe_matching_activations(MatchingNet& net, std::size_t h, std::size_t w) {
  NoGradGuard guard;
  ActivationProbe probe;
  const std::size_t in = net.specs()[0].in_channels;
  net(constant(Tensor({1, in, h, w})), Mode::eval, &probe.layer_elements);
  probe.peak = *std::max_element(probe.layer_elements.begin(), probe.layer_elements.end());
  probe.formula = inference_memory({SchemeKind::dicl, in, kWindow, kWindow, h, w});
  return probe;
}

}  // namespace dicl
