// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. The training budget defaults to kDefaultIters and can be
// overridden with DICL_ACCEPT_ITERS.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dicl/bench.hpp"
#include "dicl/commands.hpp"
#include "dicl/ops.hpp"
#include "dicl/training.hpp"
#include "support/gradcheck.hpp"

using namespace dicl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kDefaultIters = 600;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "failed: " + what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Forwards to std::cout and timestamps the first and last "[dicl]" log line.
class TimedLog : public std::streambuf {
 public:
  std::optional<Clock::time_point> first, last;

 protected:
  int overflow(int c) override {
    if (c == EOF) return 0;
    std::cout.put(static_cast<char>(c));
    if (c == '\n') {
      if (line_.starts_with("[dicl]")) {
        if (!first) first = Clock::now();
        last = Clock::now();
      }
      line_.clear();
    } else {
      line_.push_back(static_cast<char>(c));
    }
    return c;
  }
  int sync() override {
    std::cout.flush();
    return 0;
  }

 private:
  std::string line_;
};

// ---------------------------------------------------------------------------

Verdict gradient_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checks = 0, entries = 0, restepped = 0;
  const auto record = [&](const testing::GradCheckResult& r, const std::string& what) {
    worst = std::max(worst, r.max_error);
    ++checks;
    entries += r.checked;
    restepped += r.restepped;
    v.require(r.max_error <= 1e-5, what + " (" + r.worst + ")");
  };

  for (std::uint64_t seed : {101, 102, 103}) {
    std::mt19937_64 rng(seed);
    const ConvSpec c = conv_spec(3, 4, 3, 2);
    record(testing::gradcheck([&](const auto& x) { return conv2d(x[0], x[1], x[2], c); },
                              {Tensor::randn({2, 3, 8, 8}, rng), Tensor::randn(c.weight_shape(), rng),
                               Tensor::randn(c.bias_shape(), rng)},
                              seed),
           "conv2d");
    const ConvSpec d = deconv_spec(4, 2, 4, 2);
    record(testing::gradcheck([&](const auto& x) { return deconv2d(x[0], x[1], x[2], d); },
                              {Tensor::randn({2, 4, 4, 4}, rng), Tensor::randn(d.weight_shape(), rng),
                               Tensor::randn(d.bias_shape(), rng)},
                              seed),
           "deconv2d");
    BatchNormState st(4);
    record(testing::gradcheck([&](const auto& x) { return batchnorm2d(x[0], x[1], x[2], st, Mode::train); },
                              {Tensor::randn({2, 4, 4, 4}, rng), Tensor::randn({4}, rng), Tensor::randn({4}, rng)},
                              seed),
           "batchnorm2d");
    record(testing::gradcheck([](const auto& x) { return relu(x[0]); }, {Tensor::randn({4, 8, 8}, rng)}, seed),
           "relu");
    record(testing::gradcheck([](const auto& x) { return bilinear_warp(x[0], x[1]).warped; },
                              {Tensor::randn({1, 4, 8, 8}, rng), Tensor::randn({1, 2, 8, 8}, rng, 1.5)}, seed),
           "bilinear_warp");
    record(testing::gradcheck([](const auto& x) { return softmax(x[0], 1); }, {Tensor::randn({1, 4, 8, 8}, rng, 2.0)},
                              seed),
           "softmax");
    record(testing::gradcheck(
               [](const auto& x) { return dap_reweight({x[0], 0}, DapParams{x[1], x[2]}).costs; },
               {Tensor::randn({1, kHypotheses, 2, 2}, rng), Tensor::randn({kHypotheses, kHypotheses, 1, 1}, rng, 0.3),
                Tensor::randn({kHypotheses}, rng)},
               seed),
           "dap_reweight");
    record(testing::gradcheck([](const auto& x) { return soft_argmin2d({x[0], 0}).flow; },
                              {Tensor::randn({1, kHypotheses, 2, 2}, rng, 2.0)}, seed),
           "soft_argmin2d");

    ContextNet net(rng);
    for (auto& l : net.layers()) l.weight->value = Tensor::randn(l.weight->value.shape(), rng, 0.2);
    record(testing::gradcheck([&](const auto& x) { return context_refine(x[0], x[1], net); },
                              {Tensor::randn({1, 2, 4, 4}, rng), Tensor::randn({1, 32, 4, 4}, rng)}, seed),
           "context_refine");

    // The pyramid needs a 64x64 frame; its finest prediction is 16x16.
    const Tensor gt = Tensor::randn({1, 2, 64, 64}, rng, 2.0);
    Tensor valid({1, 1, 64, 64}, 1.0);
    for (std::size_t i = 0; i < 200; ++i) valid[rng() % valid.numel()] = 0.0;
    std::vector<Tensor> preds;
    for (std::size_t k = 0; k < kPyramidLevels; ++k)
      preds.push_back(Tensor::randn({1, 2, 64 / level_stride(k), 64 / level_stride(k)}, rng));
    record(testing::gradcheck(
               [&](const auto& x) {
                 PyramidOutput o;
                 for (std::size_t k = 0; k < kPyramidLevels; ++k) o.flows[k] = x[k];
                 return multi_level_loss(o, gt, valid);
               },
               preds, seed),
           "multi_level_loss");

    for (CostHeadKind kind : kAllCostHeads) {
      auto head = make_cost_head(kind, rng);
      const Var f1 = parameter(Tensor::randn({1, kFeatureChannels, 4, 4}, rng));
      const Var f2 = parameter(Tensor::randn({1, kFeatureChannels, 4, 4}, rng));
      ParamList params;
      head->collect("h", params);
      std::vector<Var> vars{f1, f2};
      for (const auto& p : params.params)
        if (p.name.find("weight") != std::string::npos) vars.push_back(p.var);
      record(testing::gradcheck_vars([&] { return head->cost_volume(f1, f2, Mode::train).costs; }, vars, seed, 16),
             "cost head " + to_string(kind));
    }
  }
  const double secs = seconds_since(t0);
  v.require(secs < 120.0, "runtime " + num(secs) + " s >= 120 s");
  v.note(std::to_string(checks) + " checks (" + std::to_string(entries) + " entries, " + std::to_string(restepped) +
         " retried at a smaller step near a ReLU kink) over 3 seeds, max rel error " + num(worst, 3) + ", " +
         num(secs, 3) + " s");
  return v;
}

Verdict accounting() {
  Verdict v;
  for (std::uint64_t K : {16, 64, 128}) {
    const auto rows = accounting_table(K, 7, 7, 64, 96);
    const std::string k = "K=" + std::to_string(K);
    v.require(rows[0].params == 9 * K && rows[1].params == 18 * K * K && rows[2].params == 81 * K * K,
              k + " params formulas");
    v.require(rows[0].params_ratio == 1 && rows[1].params_ratio == 2 * K && rows[2].params_ratio == 9 * K,
              k + " params ratios");
    v.require(rows[0].memory == K * 64 * 96 && rows[1].memory == K * 49 * 64 * 96 && rows[2].memory == rows[1].memory,
              k + " memory formulas");
    v.require(rows[0].memory_ratio == 1 && rows[1].memory_ratio == 49 && rows[2].memory_ratio == 49,
              k + " memory ratios");
  }
  const auto r64 = accounting_table(64, 7, 7, 64, 96);
  v.note("K=64: params 576 / " + std::to_string(r64[1].params) + " / " + std::to_string(r64[2].params) +
         ", memory " + std::to_string(r64[0].memory) + " vs " + std::to_string(r64[1].memory));
  return v;
}

Verdict matching_net_structure() {
  Verdict v;
  std::mt19937_64 rng(3);
  MatchingNet net(rng);
  // out * in * k * k + out per convolution, from the layer list.
  const std::size_t layers[6][4] = {{96, 64, 3, 3},  {128, 96, 3, 3}, {128, 128, 3, 3},
                                    {64, 128, 3, 3}, {32, 64, 4, 4},  {1, 32, 3, 3}};
  std::size_t hand = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    const std::size_t n = layers[i][0] * layers[i][1] * layers[i][2] * layers[i][3] + layers[i][0];
    if (i < 5) hand += 2 * layers[i][0];  // BN scale and shift
    hand += n;
    const auto& l = net.layers()[i];
    v.require(l.weight->value.numel() + l.bias->value.numel() == n, "layer " + std::to_string(i + 1) + " count");
  }
  const std::size_t first = net.layers()[0].weight->value.numel() + net.layers()[0].bias->value.numel();
  v.require(first == 55392, "layer 1 has " + std::to_string(first) + " affine parameters");
  ParamList params;
  net.collect("g", params);
  v.require(params.scalar_count() == hand,
            "enumerated " + std::to_string(params.scalar_count()) + " vs hand " + std::to_string(hand));
  for (std::size_t h : {8, 16, 32})
    for (std::size_t w : {8, 16, 32}) {
      NoGradGuard guard;
      const Var out = matching_cost(constant(Tensor::randn({1, 64, h, w}, rng)), net, Mode::eval);
      v.require(out->value.shape() == Shape{1, 1, h, w}, "output extent at " + std::to_string(h) + "x" + std::to_string(w));
    }
  v.note("layer 1 " + std::to_string(first) + ", total " + std::to_string(params.scalar_count()) +
         " (hand " + std::to_string(hand) + "), 1xhxw preserved for h, w in {8, 16, 32}");
  return v;
}

Verdict soft_argmin_contracts() {
  Verdict v;
  const SoftArgmin uni = soft_argmin2d({constant(Tensor({1, kHypotheses, 3, 3}, 0.4)), 0});
  double worst = 0.0;
  for (double f : uni.flow->value.values()) worst = std::max(worst, std::abs(f));
  v.require(worst <= 1e-12, "uniform costs give |flow| " + num(worst));

  double dom = 0.0;
  for (const Displacement d : all_displacements()) {
    Tensor c({1, kHypotheses, 1, 1}, 20.0);
    c[d.index()] = 0.0;
    const SoftArgmin s = soft_argmin2d({constant(c), 0});
    dom = std::max({dom, std::abs(s.flow->value[0] - d.u), std::abs(s.flow->value[1] - d.v)});
  }
  v.require(dom <= 1e-6, "dominant displacement error " + num(dom));

  std::mt19937_64 rng(4);
  bool in_range = true;
  for (int t = 0; t < 20; ++t) {
    const SoftArgmin s = soft_argmin2d({constant(Tensor::randn({2, kHypotheses, 4, 4}, rng, 10.0)), 0});
    for (double f : s.flow->value.values()) in_range = in_range && f >= -3.0 && f <= 3.0;
  }
  v.require(in_range, "flow outside [-3, 3]^2");

  Tensor bi({1, kHypotheses, 1, 1}, 30.0);
  bi[Displacement{-3, -2}.index()] = 0.0;
  bi[Displacement{3, 2}.index()] = 0.0;
  const SoftArgmin m = soft_argmin2d({constant(bi), 0});
  const double mid = std::max(std::abs(m.flow->value[0]), std::abs(m.flow->value[1]));
  v.require(mid <= 1e-12, "bimodal midpoint off by " + num(mid));
  v.note("uniform " + num(worst) + ", dominant (gap 20) " + num(dom, 3) + ", bimodal (-3,-2)/(3,2) -> (" +
         num(m.flow->value[0]) + ", " + num(m.flow->value[1]) + ")");
  return v;
}

Verdict dap_contracts(const fs::path& dir) {
  Verdict v;
  std::mt19937_64 rng(5);
  ModelConfig with, without;
  without.use_dap = false;
  std::mt19937_64 r1(7), r2(7);
  FlowModel a(with, r1), b(without, r2);
  const Tensor i1 = Tensor::uniform({2, 3, 64, 128}, rng, 0, 1), i2 = Tensor::uniform({2, 3, 64, 128}, rng, 0, 1);
  for (Mode mode : {Mode::train, Mode::eval}) {
    const PyramidOutput p = a.forward(i1, i2, mode), q = b.forward(i1, i2, mode);
    bool same = bit_equal(p.full_res->value, q.full_res->value);
    for (std::size_t k = 0; k < kPyramidLevels; ++k)
      same = same && bit_equal(p.flows[k]->value, q.flows[k]->value) && bit_equal(p.probs[k]->value, q.probs[k]->value);
    v.require(same, std::string("identity DAP pipeline differs in ") + (mode == Mode::train ? "train" : "eval"));
  }

  fs::remove_all(dir);
  dump_dap_kernels(DapParams::identity(), dir);
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(dir)) pngs += e.path().extension() == ".png";
  v.require(pngs == kHypotheses, std::to_string(pngs) + " kernel images");
  bool one_hot = true;
  for (std::size_t k = 0; k < kHypotheses; ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "kernel_%02zu.png", k);
    const RgbImage img = read_png(dir / name);
    const Displacement d = Displacement::from_index(k);
    std::size_t hot = 0;
    for (std::size_t y = 0; y < 7; ++y)
      for (std::size_t x = 0; x < 7; ++x) {
        const bool here = static_cast<int>(x) - 3 == d.u && static_cast<int>(y) - 3 == d.v;
        hot += img.at(y, x, 0) == 255;
        one_hot = one_hot && img.at(y, x, 0) == (here ? 255 : 0);
      }
    one_hot = one_hot && hot == 1 && img.width == 7 && img.height == 7;
  }
  v.require(one_hot, "identity kernels are not one-hot at their own displacement");

  double worst = 0.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 g(seed);
    const Tensor m = Tensor::randn({kHypotheses, kHypotheses}, g, 0.3), bias = Tensor::randn({kHypotheses}, g);
    const Tensor c = Tensor::randn({2, kHypotheses, 3, 4}, g);
    const Tensor out = dap_reweight({constant(c), 0}, DapParams::from_matrix(m, bias)).costs->value;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 4; ++x)
          for (std::size_t u = 0; u < kHypotheses; ++u) {
            double s = bias[u];
            for (std::size_t k = 0; k < kHypotheses; ++k) s += m[u * kHypotheses + k] * c.at(n, k, y, x);
            worst = std::max(worst, std::abs(out.at(n, u, y, x) - s));
          }
  }
  v.require(worst <= 1e-12, "matvec oracle error " + num(worst));
  v.note("identity pipeline bit-identical, " + std::to_string(pngs) + " one-hot kernels, matvec error " + num(worst, 3));
  return v;
}

Verdict io_and_metrics(const fs::path& dir) {
  Verdict v;
  fs::create_directories(dir);
  std::mt19937_64 rng(9);
  Tensor f = Tensor::randn({2, 6, 5}, rng, 20.0);
  for (double& x : f.values()) x = static_cast<float>(x);
  write_flo(dir / "rt.flo", f);
  v.require(bit_equal(read_flo(dir / "rt.flo"), f), "random field round trip");
  const std::string bytes = slurp(dir / "rt.flo");
  float magic = 0.0f;
  std::memcpy(&magic, bytes.data(), 4);
  v.require(magic == 202021.25f, "stored magic");

  std::string fixture(20, '\0');
  const float head = 202021.25f, u = 1.5f, w = -2.5f;
  const std::int32_t one = 1;
  std::memcpy(fixture.data(), &head, 4);
  std::memcpy(fixture.data() + 4, &one, 4);
  std::memcpy(fixture.data() + 8, &one, 4);
  std::memcpy(fixture.data() + 12, &u, 4);
  std::memcpy(fixture.data() + 16, &w, 4);
  {
    std::ofstream out(dir / "fixture.flo", std::ios::binary);
    out << fixture;
  }
  const Tensor fx = read_flo(dir / "fixture.flo");
  v.require(fx.shape() == Shape{2, 1, 1} && fx[0] == 1.5 && fx[1] == -2.5, "1x1 fixture");

  Tensor bad = Tensor({2, 4, 4});
  Tensor pred({2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    pred[i] = 3.0;
    pred[16 + i] = 4.0;
  }
  const Tensor all({1, 4, 4}, 1.0);
  const double e = epe(pred, bad, all);
  v.require(e == 5.0, "constant (3,4) error gives EPE " + num(e, 17));

  const auto field = [](double a, double b) {
    Tensor t({2, 1, 1});
    t[0] = a;
    t[1] = b;
    return t;
  };
  const Tensor one_px({1, 1, 1}, 1.0);
  v.require(fl_all(field(14.0, 0.0), field(10.0, 0.0), one_px) == 1.0, "4 px at magnitude 10 is an outlier");
  v.require(fl_all(field(104.0, 0.0), field(100.0, 0.0), one_px) == 0.0, "4 px at magnitude 100 is an inlier");
  v.note("flo round trip bit-exact, fixture (1.5, -2.5), EPE " + num(e) + ", Fl-all rule cases exact");
  return v;
}

// ---------------------------------------------------------------------------

RunConfig toy_config(const fs::path& out, std::size_t iters) {
  RunConfig cfg;
  cfg.iters = iters;
  cfg.eval_every = 100;
  cfg.out_dir = out;
  return cfg;
}

struct TrainingOutcomes {
  std::vector<AblationRow> rows;
  double dicl_seconds = 0.0;
  double dicl_initial = 0.0;
  double dicl_final = 0.0;
  double dpeak_with = 0.0;
  double dpeak_without = 0.0;
  double nodap_epe = 0.0;
  double identical_flow = 0.0;
};

TrainingOutcomes run_training(const fs::path& root, std::size_t iters) {
  TrainingOutcomes o;
  TimedLog buf;
  std::ostream log(&buf);
  const RunConfig cfg = toy_config(root / "ablation", iters);
  o.rows = cmd_ablate(cfg, log);
  if (buf.first && buf.last) o.dicl_seconds = std::chrono::duration<double>(*buf.last - *buf.first).count();
  for (const auto& r : o.rows)
    if (r.head == CostHeadKind::dicl) {
      o.dicl_initial = r.initial_epe;
      o.dicl_final = r.heldout_epe;
    }

  RunConfig nodap = toy_config(root / "dicl_nodap", iters);
  nodap.model.use_dap = false;
  std::unique_ptr<FlowModel> without;
  o.nodap_epe = cmd_train(nodap, std::cout, &without).final_epe;
  FlowModel with = load_model(cfg.out_dir / "dicl" / "model_final.ckpt");
  const auto heldout = heldout_set(cfg);
  o.dpeak_with = heldout_dpeak_median(with, heldout);
  o.dpeak_without = heldout_dpeak_median(*without, heldout);

  // Identical frames through the trained model.
  const Tensor flow = with.predict(heldout[0].img1, heldout[0].img1);
  const std::size_t l = flow.numel() / 2;
  for (std::size_t i = 0; i < l; ++i) o.identical_flow += std::hypot(flow[i], flow[l + i]);
  o.identical_flow /= static_cast<double>(l);
  return o;
}

Verdict toy_training(const TrainingOutcomes& o, std::size_t iters) {
  Verdict v;
  v.require(iters <= 2000, "budget " + std::to_string(iters) + " > 2000 iterations");
  v.require(o.dicl_final <= 1.0, "held-out EPE " + num(o.dicl_final) + " > 1.0");
  v.require(o.dicl_seconds <= 1800.0, "runtime " + num(o.dicl_seconds) + " s > 30 min");
  v.require(o.dicl_initial > 2.0, "untrained EPE " + num(o.dicl_initial) + " is not several pixels");
  v.note("DICL " + std::to_string(iters) + " iterations: held-out EPE " + num(o.dicl_initial) + " -> " +
         num(o.dicl_final) + " in " + num(o.dicl_seconds) + " s; identical frames mean |flow| " +
         num(o.identical_flow, 3) + " px");
  return v;
}

Verdict ablation_direction(const TrainingOutcomes& o) {
  Verdict v;
  std::map<CostHeadKind, double> epe;
  std::string table;
  for (const auto& r : o.rows) {
    epe[r.head] = r.heldout_epe;
    table += (table.empty() ? "" : ", ") + to_string(r.head) + " " + num(r.heldout_epe);
    v.require(r.status == "ok", to_string(r.head) + " " + r.status);
  }
  v.require(o.rows.size() == 5, std::to_string(o.rows.size()) + " rows");
  const double d = epe[CostHeadKind::dicl];
  for (CostHeadKind k : {CostHeadKind::mlp3, CostHeadKind::dot, CostHeadKind::cosine})
    v.require(d < epe[k], "DICL not below " + to_string(k));
  v.require(d <= 0.9 * epe[CostHeadKind::dot], "DICL not 10% below dot");
  v.note(table);
  return v;
}

Verdict dap_multimodality(const TrainingOutcomes& o) {
  Verdict v;
  Tensor onehot({1, kHypotheses, 1, 1});
  onehot[20] = 1.0;
  v.require(d_peak(onehot)[0] == 1.0, "one-hot d_peak");
  v.require(d_peak(Tensor({1, kHypotheses, 1, 1}, 1.0 / 49.0))[0] == 0.0, "uniform d_peak");
  v.require(o.dpeak_with >= o.dpeak_without,
            "median d_peak with DAP " + num(o.dpeak_with) + " < without " + num(o.dpeak_without));
  v.note("median held-out d_peak with DAP " + num(o.dpeak_with) + ", without " + num(o.dpeak_without) +
         " (no-DAP EPE " + num(o.nodap_epe) + ")");
  return v;
}

Verdict determinism(const fs::path& root) {
  Verdict v;
  const auto tiny = [&](const std::string& name) {
    RunConfig cfg = toy_config(root / name, 4);
    cfg.eval_every = 2;
    cfg.heldout = 2;
    cfg.bn_recalib = 2;
    return cfg;
  };
  std::ostringstream sink;
  cmd_train(tiny("train_a"), sink);
  cmd_train(tiny("train_b"), sink);
  for (const char* f : {"loss.csv", "heldout.csv"}) {
    const std::string a = slurp(root / "train_a" / f), b = slurp(root / "train_b" / f);
    v.require(!a.empty() && a == b, std::string("train ") + f);
  }
  cmd_ablate(tiny("ablate_a"), sink);
  cmd_ablate(tiny("ablate_b"), sink);
  v.require(slurp(root / "ablate_a" / "ablation.csv") == slurp(root / "ablate_b" / "ablation.csv"), "ablation.csv");
  for (CostHeadKind k : kAllCostHeads)
    v.require(slurp(root / "ablate_a" / to_string(k) / "loss.csv") == slurp(root / "ablate_b" / to_string(k) / "loss.csv"),
              "ablation " + to_string(k) + " loss.csv");
  v.note("train loss/held-out CSVs and ablation CSVs byte-identical across reruns");
  return v;
}

}  // namespace

int main() {
  std::size_t iters = kDefaultIters;
  if (const char* env = std::getenv("DICL_ACCEPT_ITERS")) iters = std::stoul(env);
  const fs::path root = fs::path(DICL_ACCEPT_DIR);
  fs::create_directories(root);

  std::vector<std::pair<std::string, std::function<Verdict()>>> quick{
      {"gradient suite", gradient_suite},
      {"per-layer accounting", accounting},
      {"matching-net structure", matching_net_structure},
      {"soft-argmin contracts", soft_argmin_contracts},
      {"DAP contracts", [&] { return dap_contracts(root / "dap_identity"); }},
  };
  std::vector<std::string> report;
  bool all = true;
  const auto emit = [&](std::size_t id, const std::string& name, Verdict v) {
    all = all && v.pass;
    const std::string line =
        std::string(v.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " (" + name + "): " + v.detail;
    report.push_back(line);
    std::cout << line << std::endl;
  };
  const auto guarded = [](const std::function<Verdict()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Verdict v;
      v.require(false, std::string("exception: ") + e.what());
      return v;
    }
  };

  for (std::size_t i = 0; i < quick.size(); ++i) emit(i + 1, quick[i].first, guarded(quick[i].second));

  std::optional<TrainingOutcomes> trained;
  std::string train_error;
  try {
    trained = run_training(root, iters);
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  const auto with_training = [&](std::function<Verdict(const TrainingOutcomes&)> f) {
    return [&, f]() {
      if (!trained) {
        Verdict v;
        v.require(false, "training failed: " + train_error);
        return v;
      }
      return f(*trained);
    };
  };
  emit(6, "toy end-to-end training", guarded(with_training([&](const auto& o) { return toy_training(o, iters); })));
  emit(7, "ablation direction", guarded(with_training(ablation_direction)));
  emit(8, "DAP multi-modality direction", guarded(with_training(dap_multimodality)));
  emit(9, "I/O and metrics", guarded([&] { return io_and_metrics(root / "io"); }));
  emit(10, "determinism", guarded([&] { return determinism(root / "determinism"); }));

  std::cout << "\nSummary\n";
  std::ofstream file(root / "acceptance_report.txt");
  for (const auto& line : report) {
    std::cout << line << '\n';
    file << line << '\n';
  }
  return all ? 0 : 1;
}
