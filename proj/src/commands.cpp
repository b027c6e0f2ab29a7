#include "dicl/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "dicl/bench.hpp"
#include "dicl/training.hpp"

namespace dicl {

// ---------------------------------------------------------------------------
// RunConfig

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(s);
  while (std::getline(in, cell, sep)) out.push_back(trim(cell));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_switch(const std::string& key, const std::string& value) {
  if (value == "on" || value == "true" || value == "1") return true;
  if (value == "off" || value == "false" || value == "0") return false;
  throw std::invalid_argument("config key '" + key + "' expects on/off, got '" + value + "'");
}

std::pair<std::size_t, std::size_t> parse_extent(const std::string& key, const std::string& value) {
  const auto x = value.find('x');
  if (x == std::string::npos) throw std::invalid_argument("config key '" + key + "' expects HxW, got '" + value + "'");
  return {parse_number<std::size_t>(key, value.substr(0, x)), parse_number<std::size_t>(key, value.substr(x + 1))};
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "size") {
    std::tie(height, width) = parse_extent(key, value);
  } else if (key == "head") {
    model.head = parse_cost_head(value);
  } else if (key == "dap") {
    model.use_dap = parse_switch(key, value);
  } else if (key == "context") {
    model.use_context = parse_switch(key, value);
  } else if (key == "context_levels") {
    if (value != "all" && value != "finest") throw std::invalid_argument("context_levels must be all or finest");
    model.context_all_levels = value == "all";
  } else if (key == "lr") {
    lr = parse_number<double>(key, value);
  } else if (key == "iters") {
    iters = parse_number<std::size_t>(key, value);
  } else if (key == "batch") {
    batch = parse_number<std::size_t>(key, value);
  } else if (key == "lr_milestones") {
    lr_milestones.clear();
    if (value != "none")
      for (const auto& m : split(value, ',')) lr_milestones.push_back(parse_number<double>(key, m));
  } else if (key == "lr_gamma") {
    lr_gamma = parse_number<double>(key, value);
  } else if (key == "bn_recalib") {
    bn_recalib = parse_number<std::size_t>(key, value);
  } else if (key == "loss_weights") {
    const auto parts = split(value, ',');
    if (parts.size() != kPyramidLevels) throw std::invalid_argument("loss_weights needs exactly 5 values");
    for (std::size_t k = 0; k < kPyramidLevels; ++k) loss_weights[k] = parse_number<double>(key, parts[k]);
  } else if (key == "max_mag") {
    max_mag = parse_number<double>(key, value);
  } else if (key == "motions") {
    motions.clear();
    for (const auto& m : split(value, ',')) motions.push_back(parse_motion_kind(m));
  } else if (key == "heldout") {
    heldout = parse_number<std::size_t>(key, value);
  } else if (key == "eval_every") {
    eval_every = parse_number<std::size_t>(key, value);
  } else if (key == "out_dir") {
    out_dir = value;
  } else if (key == "checkpoint") {
    checkpoint = value;
  } else if (key == "predictor") {
    if (value != "model" && value != "oracle" && value != "zero") {
      throw std::invalid_argument("predictor must be model, oracle or zero");
    }
    predictor = value;
  } else if (key == "dataset") {
    dataset = value;
  } else if (key == "bench_k") {
    bench_k = parse_number<std::uint64_t>(key, value);
  } else if (key == "bench_window") {
    bench_window = parse_number<std::uint64_t>(key, value);
  } else if (key == "bench_map") {
    std::tie(bench_h, bench_w) = parse_extent(key, value);
  } else {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite nonnegative number");
  if (batch == 0) throw std::invalid_argument("batch must be at least 1");
  for (double m : lr_milestones)
    if (!(m > 0.0 && m <= 1.0)) throw std::invalid_argument("lr_milestones must be fractions in (0, 1]");
  if (!(lr_gamma > 0.0) || !std::isfinite(lr_gamma)) throw std::invalid_argument("lr_gamma must be positive");
  if (motions.empty()) throw std::invalid_argument("motions must list at least one kind");
  if (heldout == 0) throw std::invalid_argument("heldout must be at least 1");
  if (eval_every == 0) throw std::invalid_argument("eval_every must be at least 1");
  if (!(max_mag >= 0.0) || max_mag > static_cast<double>(std::min(height, width)) / 4.0) {
    throw std::invalid_argument("max_mag must lie in [0, min(H, W) / 4]");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "seed=" << seed << '\n' << "size=" << height << 'x' << width << '\n' << model.to_text();
  out << "lr=" << fmt(lr) << '\n' << "iters=" << iters << '\n' << "batch=" << batch << '\n' << "lr_milestones=";
  if (lr_milestones.empty()) out << "none";
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) out << (i ? "," : "") << fmt(lr_milestones[i]);
  out << '\n' << "lr_gamma=" << fmt(lr_gamma) << '\n' << "bn_recalib=" << bn_recalib << '\n' << "loss_weights=";
  for (std::size_t k = 0; k < kPyramidLevels; ++k) out << (k ? "," : "") << fmt(loss_weights[k]);
  out << '\n' << "max_mag=" << fmt(max_mag) << '\n' << "motions=";
  for (std::size_t i = 0; i < motions.size(); ++i) out << (i ? "," : "") << to_string(motions[i]);
  out << '\n'
      << "heldout=" << heldout << '\n'
      << "eval_every=" << eval_every << '\n'
      << "out_dir=" << out_dir.string() << '\n'
      << "checkpoint=" << checkpoint.string() << '\n'
      << "predictor=" << predictor << '\n'
      << "dataset=" << dataset << '\n'
      << "bench_k=" << bench_k << '\n'
      << "bench_window=" << bench_window << '\n'
      << "bench_map=" << bench_h << 'x' << bench_w << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Data

namespace {

std::uint64_t mix(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

FlowBatch padded(FlowBatch b) {
  b.img1 = pad_to_multiple(b.img1).image;
  b.img2 = pad_to_multiple(b.img2).image;
  b.gt_flow = pad_to_multiple(b.gt_flow).image;
  b.valid = pad_to_multiple(b.valid).image;
  return b;
}

}  // namespace

SeedStreams derive_seeds(std::uint64_t seed) {
  std::mt19937_64 master(seed);
  SeedStreams s{};
  s.data = master();
  s.init = master();
  s.heldout = master();
  return s;
}

FlowSample training_sample(const RunConfig& cfg, std::uint64_t data_seed, std::size_t index) {
  return gen_synthetic(mix(data_seed, index), cfg.motions[index % cfg.motions.size()], cfg.height, cfg.width,
                       cfg.max_mag);
}

std::vector<FlowSample> heldout_set(const RunConfig& cfg) {
  const std::uint64_t base = derive_seeds(cfg.seed).heldout;
  std::vector<FlowSample> out;
  const std::string prefix = "translation:";
  if (cfg.dataset == "synthetic") {
    for (std::size_t i = 0; i < cfg.heldout; ++i) {
      out.push_back(gen_synthetic(mix(base, i), cfg.motions[i % cfg.motions.size()], cfg.height, cfg.width,
                                  cfg.max_mag));
    }
  } else if (cfg.dataset.starts_with(prefix)) {
    const auto parts = split(cfg.dataset.substr(prefix.size()), ',');
    if (parts.size() != 2) throw std::invalid_argument("dataset translation:U,V needs two numbers");
    const double u = parse_number<double>("dataset", parts[0]), v = parse_number<double>("dataset", parts[1]);
    for (std::size_t i = 0; i < cfg.heldout; ++i) out.push_back(gen_translation(mix(base, i), cfg.height, cfg.width, u, v));
  } else {
    throw std::invalid_argument("unknown dataset '" + cfg.dataset + "' (expected synthetic or translation:U,V)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

EvalResult evaluate_model(FlowModel& model, const std::vector<FlowSample>& samples) {
  EvalResult total;
  for (const auto& s : samples) {
    const EvalResult r = evaluate(model.predict(s.img1, s.img2), s.gt_flow, s.valid);
    total.epe += r.epe;
    total.fl_all += r.fl_all;
  }
  total.epe /= static_cast<double>(samples.size());
  total.fl_all /= static_cast<double>(samples.size());
  return total;
}

namespace {

std::vector<double> sample_dpeaks(FlowModel& model, const FlowSample& s) {
  NoGradGuard guard;
  const PyramidOutput out = model.forward(pad_to_multiple(s.img1).image, pad_to_multiple(s.img2).image, Mode::eval);
  const Tensor& probs = out.probs[0]->value;
  const Tensor valid = pad_to_multiple(s.valid).image;
  const Tensor mask = min_pool(valid.reshaped({1, 1, valid.dim(1), valid.dim(2)}), level_stride(0));
  return dpeak_values(probs, mask);
}

}  // namespace

double heldout_dpeak_median(FlowModel& model, const std::vector<FlowSample>& samples) {
  std::vector<double> all;
  for (const auto& s : samples) {
    const auto v = sample_dpeaks(model, s);
    all.insert(all.end(), v.begin(), v.end());
  }
  return median(std::move(all));
}

// ---------------------------------------------------------------------------
// train

TrainResult cmd_train(const RunConfig& cfg, std::ostream& log, std::unique_ptr<FlowModel>* model_out) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  const SeedStreams seeds = derive_seeds(cfg.seed);
  std::mt19937_64 init_rng(seeds.init);
  auto model = std::make_unique<FlowModel>(cfg.model, init_rng);
  Adam optimizer(model->parameters(), {cfg.lr});
  const std::vector<FlowSample> heldout = heldout_set(cfg);
  const std::string echo = cfg.to_text();

  const auto batch_at = [&](std::size_t index) {
    std::vector<FlowSample> samples;
    for (std::size_t j = 0; j < cfg.batch; ++j) samples.push_back(training_sample(cfg, seeds.data, index * cfg.batch + j));
    return padded(stack(samples));
  };
  // The first bn_recalib training batches, reused at every evaluation.
  std::vector<FlowBatch> calibration;
  for (std::size_t i = 0; i < cfg.bn_recalib; ++i) calibration.push_back(batch_at(i));

  TrainResult result;
  const auto record_heldout = [&](std::size_t iter) {
    recalibrate_batchnorm(*model, calibration);
    const EvalResult r = evaluate_model(*model, heldout);
    result.heldout.push_back({iter, r.epe, r.fl_all});
    log << "[" << to_string(cfg.model.head) << "] iter " << iter << " held-out EPE " << r.epe << " Fl-all "
        << r.fl_all << std::endl;
    return r.epe;
  };

  result.initial_epe = result.best_epe = record_heldout(0);
  save_checkpoint(cfg.out_dir / "model_best.ckpt", *model, echo);
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    optimizer.options().lr = scheduled_lr(cfg.lr, it, cfg.iters, cfg.lr_milestones, cfg.lr_gamma);
    try {
      result.losses.push_back(train_step(*model, optimizer, batch_at(it), cfg.loss_weights));
    } catch (const TrainingDiverged& e) {
      result.diverged = true;
      result.diagnostic = e.what();
      log << "training diverged: " << e.what() << std::endl;
      save_checkpoint(cfg.out_dir / "model_last_good.ckpt", *model, echo);
      break;
    }
    const std::size_t done = it + 1;
    if (done % cfg.eval_every == 0 || done == cfg.iters) {
      const double e = record_heldout(done);
      if (e < result.best_epe) {
        result.best_epe = e;
        save_checkpoint(cfg.out_dir / "model_best.ckpt", *model, echo);
      }
    }
  }
  if (result.diverged) record_heldout(result.losses.size());
  result.final_epe = result.heldout.back().epe;
  save_checkpoint(cfg.out_dir / "model_final.ckpt", *model, echo);

  std::ofstream loss_csv(cfg.out_dir / "loss.csv");
  loss_csv << "iter,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) loss_csv << i + 1 << ',' << fmt(result.losses[i]) << '\n';
  std::ofstream heldout_csv(cfg.out_dir / "heldout.csv");
  heldout_csv << "iter,epe,fl_all\n";
  for (const auto& p : result.heldout) heldout_csv << p.iter << ',' << fmt(p.epe) << ',' << fmt(p.fl_all) << '\n';
  if (!loss_csv || !heldout_csv) throw std::runtime_error("cannot write CSV reports under " + cfg.out_dir.string());

  if (model_out) *model_out = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// eval

std::vector<EvalRow> cmd_eval(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::unique_ptr<FlowModel> model;
  if (cfg.predictor == "model") {
    if (cfg.checkpoint.empty()) throw std::invalid_argument("eval with predictor=model needs a checkpoint");
    model = std::make_unique<FlowModel>(load_model(cfg.checkpoint));
  }
  const std::vector<FlowSample> samples = heldout_set(cfg);
  std::vector<EvalRow> rows;
  EvalRow mean{"mean", 0.0, 0.0, std::nullopt};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FlowSample& s = samples[i];
    Tensor pred;
    std::optional<double> dpeak;
    if (model) {
      pred = model->predict(s.img1, s.img2);
      dpeak = median(sample_dpeaks(*model, s));
    } else if (cfg.predictor == "oracle") {
      pred = s.gt_flow;
    } else {
      pred = Tensor::zeros_like(s.gt_flow);
    }
    const EvalResult r = evaluate(pred, s.gt_flow, s.valid);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    rows.push_back({name, r.epe, r.fl_all, dpeak});
    mean.epe += r.epe;
    mean.fl_all += r.fl_all;
    if (dpeak) mean.dpeak_median = mean.dpeak_median.value_or(0.0) + *dpeak;
  }
  const double n = static_cast<double>(samples.size());
  mean.epe /= n;
  mean.fl_all /= n;
  if (mean.dpeak_median) *mean.dpeak_median /= n;
  rows.push_back(mean);

  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "eval.csv");
  csv << "sample,epe,fl_all,dpeak_median\n";
  for (const auto& r : rows) {
    csv << r.sample << ',' << fmt(r.epe) << ',' << fmt(r.fl_all) << ',' << (r.dpeak_median ? fmt(*r.dpeak_median) : "")
        << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write " + (cfg.out_dir / "eval.csv").string());
  log << "EPE " << mean.epe << " Fl-all " << mean.fl_all;
  if (mean.dpeak_median) log << " mean per-sample median d_peak " << *mean.dpeak_median;
  log << " over " << samples.size() << " samples" << std::endl;
  return rows;
}

// ---------------------------------------------------------------------------
// infer

Tensor cmd_infer(const RunConfig& cfg, const std::filesystem::path& img1, const std::filesystem::path& img2,
                 const std::filesystem::path& prefix, std::ostream& log) {
  if (cfg.checkpoint.empty()) throw std::invalid_argument("infer needs a checkpoint");
  FlowModel model = load_model(cfg.checkpoint);
  const RgbImage a = read_png(img1), b = read_png(img2);
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("frame sizes differ: " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                                " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  const Tensor flow = model.predict(to_tensor(a), to_tensor(b));
  if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
  const std::filesystem::path flo = prefix.string() + ".flo", png = prefix.string() + "_color.png";
  write_flo(flo, flow);
  write_png(png, flow_to_color(flow));
  log << "wrote " << flo.string() << " and " << png.string() << std::endl;
  return flow;
}

// ---------------------------------------------------------------------------
// ablate

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  std::vector<AblationRow> rows;
  for (CostHeadKind head : kAllCostHeads) {
    RunConfig sub = cfg;
    sub.model.head = head;
    sub.out_dir = cfg.out_dir / to_string(head);
    const TrainResult r = cmd_train(sub, log);
    const HeldoutPoint& last = r.heldout.back();
    rows.push_back({head, r.initial_epe, last.epe, last.fl_all, r.diverged ? "diverged" : "ok"});
  }
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "ablation.csv");
  csv << "head,initial_epe,heldout_epe,heldout_fl_all,status\n";
  for (const auto& r : rows) {
    csv << to_string(r.head) << ',' << fmt(r.initial_epe) << ',' << fmt(r.heldout_epe) << ',' << fmt(r.heldout_fl_all)
        << ',' << r.status << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write " + (cfg.out_dir / "ablation.csv").string());
  return rows;
}

// ---------------------------------------------------------------------------
// bench

void cmd_bench(const RunConfig& cfg, std::ostream& log) {
  const std::uint64_t K = cfg.bench_k, U = cfg.bench_window, V = cfg.bench_window;
  const auto rows = accounting_table(K, U, V, cfg.bench_h, cfg.bench_w);
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "bench.csv");
  write_accounting_csv(csv, rows, K, U, V, cfg.bench_h, cfg.bench_w);
  if (!csv) throw std::runtime_error("cannot write " + (cfg.out_dir / "bench.csv").string());
  write_accounting_csv(log, rows, K, U, V, cfg.bench_h, cfg.bench_w);

  if (cfg.checkpoint.empty()) return;
  FlowModel model = load_model(cfg.checkpoint);
  std::vector<double> values;
  for (const auto& s : heldout_set(cfg)) {
    const auto v = sample_dpeaks(model, s);
    values.insert(values.end(), v.begin(), v.end());
  }
  const Histogram hist = dpeak_histogram(values);
  std::ofstream hcsv(cfg.out_dir / "dpeak_hist.csv");
  write_histogram_csv(hcsv, hist);
  if (!hcsv) throw std::runtime_error("cannot write " + (cfg.out_dir / "dpeak_hist.csv").string());
  log << "median d_peak " << hist.median << " over " << hist.total << " pixels" << std::endl;
  if (model.config().use_dap) {
    for (std::size_t k = 0; k < kPyramidLevels; ++k)
      dump_dap_kernels(model.dap(k), cfg.out_dir / ("dap_level" + std::to_string(k)));
    log << "DAP kernels written under " << cfg.out_dir.string() << std::endl;
  }
}

}  // namespace dicl
