#include "sunet/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sunet/checkpoint.hpp"

namespace sunet::train {
namespace {

using torch::Tensor;

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string hex_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s,
                    std::chars_format fmt = std::chars_format::general) {
  double v = 0.0;
  std::string_view sv = s;
  if (fmt == std::chars_format::general && sv == "inf") return std::numeric_limits<double>::infinity();
  if (fmt == std::chars_format::general && sv == "-inf") return -std::numeric_limits<double>::infinity();
  bool neg = false;
  if (fmt == std::chars_format::hex && !sv.empty() && sv.front() == '-') {
    neg = true;
    sv.remove_prefix(1);
  }
  if (fmt == std::chars_format::hex && sv == "inf") return neg ? -INFINITY : INFINITY;
  const auto r = std::from_chars(sv.data(), sv.data() + sv.size(), v, fmt);
  if (r.ec != std::errc() || r.ptr != sv.data() + sv.size()) {
    throw std::invalid_argument("invalid number for " + key + ": '" + s + "'");
  }
  return neg ? -v : v;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("invalid integer for " + key + ": '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw std::invalid_argument("invalid boolean for " + key + ": '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
Raster<T> crop_columns(const Raster<T>& r, int x0, int w) {
  Raster<T> out(r.height(), w, r.channels());
  for (int y = 0; y < r.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < r.channels(); ++c) out.at(y, x, c) = r.at(y, x0 + x, c);
    }
  }
  return out;
}

StepMetrics to_metrics(const loss::LossBreakdown& b) {
  return {b.total.item<double>(), b.reconstruction.item<double>(), b.perceptual.item<double>(),
          b.consistency.item<double>(), b.smoothness.item<double>()};
}

std::vector<std::pair<std::string, Tensor>> named_params(model::SunetImpl& net) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : net.named_parameters()) out.emplace_back(p.key(), p.value());
  return out;
}

double mean_of(const std::vector<SampleScore>& s, double SampleScore::*field) {
  double sum = 0.0;
  long n = 0;
  for (const auto& x : s) {
    if (std::isnan(x.*field)) continue;
    sum += x.*field;
    ++n;
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

constexpr const char* kStateFormat = "sunet-train-state";
constexpr const char* kConfigPrefix = "train.";

}  // namespace

std::string to_string(DropTerm term) {
  switch (term) {
    case DropTerm::kNone: return "none";
    case DropTerm::kReconstruction: return "Lr";
    case DropTerm::kPerceptual: return "Lp";
    case DropTerm::kConsistency: return "Lc";
    case DropTerm::kSmoothness: return "Ls";
  }
  return "?";
}

DropTerm drop_term_from_string(const std::string& name) {
  if (name == "none") return DropTerm::kNone;
  if (name == "Lr") return DropTerm::kReconstruction;
  if (name == "Lp") return DropTerm::kPerceptual;
  if (name == "Lc") return DropTerm::kConsistency;
  if (name == "Ls") return DropTerm::kSmoothness;
  throw std::invalid_argument("unknown loss term '" + name + "' (expected none, Lr, Lp, Lc or Ls)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (crop_width < 0) throw std::invalid_argument("crop_width must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("adam_epsilon must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie in [0, 1)");
  }
  weights.validate();
  arch.validate();
}

loss::LossWeights TrainConfig::effective_weights() const {
  loss::LossWeights w = weights;
  switch (drop) {
    case DropTerm::kNone: break;
    case DropTerm::kReconstruction: w.reconstruction = 0.0; break;
    case DropTerm::kPerceptual: w.perceptual = 0.0; break;
    case DropTerm::kConsistency: w.consistency = 0.0; break;
    case DropTerm::kSmoothness: w.smoothness = 0.0; break;
  }
  return w;
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"learning_rate", format_double(learning_rate)},
      {"batch_size", std::to_string(batch_size)},
      {"epochs", std::to_string(epochs)},
      {"crop_width", std::to_string(crop_width)},
      {"seed", std::to_string(seed)},
      {"beta1", format_double(beta1)},
      {"beta2", format_double(beta2)},
      {"adam_epsilon", format_double(adam_epsilon)},
      {"val_fraction", format_double(val_fraction)},
      {"lambda_r", format_double(weights.reconstruction)},
      {"lambda_p", format_double(weights.perceptual)},
      {"lambda_c", format_double(weights.consistency)},
      {"lambda_s", format_double(weights.smoothness)},
      {"search_range", std::to_string(arch.search_range)},
      {"level1_kernel", std::to_string(arch.level1_kernel)},
      {"time_offset", arch.time_offset ? "1" : "0"},
      {"consistency", loss::to_string(consistency)},
      {"drop", to_string(drop)},
      {"perceptual_weights", perceptual_weights},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "learning_rate") c.learning_rate = parse_double(key, value);
    else if (key == "batch_size") c.batch_size = parse_int<int>(key, value);
    else if (key == "epochs") c.epochs = parse_int<int>(key, value);
    else if (key == "crop_width") c.crop_width = parse_int<int>(key, value);
    else if (key == "seed") c.seed = parse_int<std::uint64_t>(key, value);
    else if (key == "beta1") c.beta1 = parse_double(key, value);
    else if (key == "beta2") c.beta2 = parse_double(key, value);
    else if (key == "adam_epsilon") c.adam_epsilon = parse_double(key, value);
    else if (key == "val_fraction") c.val_fraction = parse_double(key, value);
    else if (key == "lambda_r") c.weights.reconstruction = parse_double(key, value);
    else if (key == "lambda_p") c.weights.perceptual = parse_double(key, value);
    else if (key == "lambda_c") c.weights.consistency = parse_double(key, value);
    else if (key == "lambda_s") c.weights.smoothness = parse_double(key, value);
    else if (key == "search_range") c.arch.search_range = parse_int<int>(key, value);
    else if (key == "level1_kernel") c.arch.level1_kernel = parse_int<int>(key, value);
    else if (key == "time_offset") c.arch.time_offset = parse_bool(key, value);
    else if (key == "consistency") c.consistency = loss::consistency_mode_from_string(value);
    else if (key == "drop") c.drop = drop_term_from_string(value);
    else if (key == "perceptual_weights") c.perceptual_weights = value;
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (kv.count(key)) {
      throw std::invalid_argument(path.string() + ":" + std::to_string(lineno) +
                                  ": duplicate key " + key);
    }
    kv[key] = trim(line.substr(eq + 1));
  }
  try {
    return from_map(kv);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path.string());
  for (const auto& [k, v] : to_map()) out << k << " = " << v << "\n";
}

TrainState init_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.net = model::Sunet(config.arch, config.seed);
  s.rng.seed(config.seed);
  return s;
}

TrainState clone_state(const TrainState& state) {
  TrainState s = state;
  s.net = model::Sunet(state.config.arch);
  {
    torch::NoGradGuard no_grad;
    auto dst = s.net->named_parameters();
    for (const auto& p : state.net->named_parameters()) dst[p.key()].copy_(p.value());
  }
  for (auto* m : {&s.moments.exp_avg, &s.moments.exp_avg_sq}) {
    for (auto& [k, t] : *m) t = t.clone();
  }
  return s;
}

void use_deterministic_arithmetic() {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, false);
}

Tensor to_tensor(const Raster<float>& img) {
  auto data = img.data();
  Tensor t = torch::from_blob(const_cast<float*>(data.data()),
                              {img.height(), img.width(), img.channels()}, torch::kFloat32);
  return t.permute({2, 0, 1}).contiguous();
}

Image to_image(const Tensor& t) {
  Tensor x = t.detach();
  if (x.dim() == 4) {
    if (x.size(0) != 1) throw std::invalid_argument("to_image: batch of more than one image");
    x = x[0];
  }
  if (x.dim() != 3) throw std::invalid_argument("to_image: expected C x H x W");
  x = x.to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image img(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), static_cast<int>(x.size(2)));
  std::memcpy(img.data().data(), x.data_ptr<float>(), img.size() * sizeof(float));
  return img;
}

Batch make_batch(const std::vector<imaging::RsSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<Tensor> a, b, g;
  for (const auto& s : samples) {
    if (!s.rs1.same_shape(samples.front().rs1)) {
      throw std::invalid_argument("make_batch: samples differ in shape");
    }
    a.push_back(to_tensor(s.rs1));
    b.push_back(to_tensor(s.rs2));
    g.push_back(to_tensor(s.gs));
  }
  return {torch::stack(a), torch::stack(b), torch::stack(g)};
}

imaging::RsSample augment(const imaging::RsSample& sample, int crop_width, std::mt19937_64& rng) {
  const int w = sample.width();
  if (crop_width <= 0 || crop_width == w) return sample;
  if (crop_width > w) {
    throw std::invalid_argument("crop width " + std::to_string(crop_width) +
                                " exceeds image width " + std::to_string(w));
  }
  std::uniform_int_distribution<int> pick(0, w - crop_width);
  const int x0 = pick(rng);
  imaging::RsSample out;
  out.rs1 = crop_columns(sample.rs1, x0, crop_width);
  out.rs2 = crop_columns(sample.rs2, x0, crop_width);
  out.gs = crop_columns(sample.gs, x0, crop_width);
  out.flow1 = crop_columns(sample.flow1, x0, crop_width);
  out.flow2 = crop_columns(sample.flow2, x0, crop_width);
  out.mask = crop_columns(sample.mask, x0, crop_width);
  return out;
}

void adam_update(const std::vector<std::pair<std::string, Tensor>>& params, AdamMoments& moments,
                 std::int64_t step, const TrainConfig& config) {
  torch::NoGradGuard no_grad;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (const auto& [name, p] : params) {
    const Tensor& g = p.grad();
    if (!g.defined()) continue;
    Tensor& m = moments.exp_avg[name];
    Tensor& v = moments.exp_avg_sq[name];
    if (!m.defined()) m = torch::zeros_like(p);
    if (!v.defined()) v = torch::zeros_like(p);
    m.mul_(config.beta1).add_(g, 1.0 - config.beta1);
    v.mul_(config.beta2).addcmul_(g, g, 1.0 - config.beta2);
    const Tensor denom = (v / bc2).sqrt_().add_(config.adam_epsilon);
    p.addcdiv_(m, denom, -config.learning_rate / bc1);
  }
}

StepMetrics train_step(TrainState& state, const Batch& batch, loss::FeatureExtractor& phi) {
  if (batch.rs1.sizes() != batch.rs2.sizes() || batch.rs1.sizes() != batch.gs.sizes()) {
    throw std::invalid_argument("train_step: batch tensors differ in shape");
  }
  auto& net = *state.net;
  net.zero_grad();
  const model::MultiScaleOutput out = net.forward(batch.rs1, batch.rs2);
  const loss::SupervisionPyramid gt = loss::make_supervision(batch.gs);
  const loss::LossBreakdown b = loss::total_loss(out, gt, state.config.effective_weights(), phi,
                                                 state.config.consistency);
  const StepMetrics m = to_metrics(b);
  for (double v : {m.total, m.reconstruction, m.perceptual, m.consistency, m.smoothness}) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << state.step + 1 << ": total=" << m.total
          << " Lr=" << m.reconstruction << " Lp=" << m.perceptual << " Lc=" << m.consistency
          << " Ls=" << m.smoothness;
      throw NonFiniteLoss(msg.str(), m);
    }
  }
  if (b.total.requires_grad()) b.total.backward();
  state.step += 1;
  adam_update(named_params(net), state.moments, state.step, state.config);
  return m;
}

Image infer(model::Sunet& net, const Image& rs1, const Image& rs2) {
  torch::NoGradGuard no_grad;
  const Tensor a = to_tensor(rs1).unsqueeze(0);
  const Tensor b = to_tensor(rs2).unsqueeze(0);
  return to_image(net->forward(a, b).final_image);
}

Predictor model_predictor(model::Sunet net) {
  return [net](const imaging::RsSample& s) mutable { return infer(net, s.rs1, s.rs2); };
}

Predictor identity_predictor() {
  return [](const imaging::RsSample& s) { return s.rs2; };
}

Predictor ground_truth_predictor() {
  return [](const imaging::RsSample& s) { return s.gs; };
}

EvalReport evaluate(const Predictor& predict, const std::vector<imaging::RsSample>& samples,
                    const std::vector<int>& indices) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  if (!indices.empty() && indices.size() != samples.size()) {
    throw std::invalid_argument("evaluate: index list does not match the sample count");
  }
  EvalReport r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const Image pred = predict(s);
    SampleScore score;
    score.index = indices.empty() ? static_cast<int>(i) : indices[i];
    score.psnr = metrics::psnr(pred, s.gs);
    try {
      score.psnr_masked = metrics::psnr(pred, s.gs, &s.mask);
    } catch (const metrics::EmptySupport&) {
      score.psnr_masked = std::numeric_limits<double>::quiet_NaN();
    }
    score.ssim = metrics::ssim(pred, s.gs);
    r.samples.push_back(score);
  }
  r.mean_psnr = mean_of(r.samples, &SampleScore::psnr);
  r.mean_psnr_masked = mean_of(r.samples, &SampleScore::psnr_masked);
  r.mean_ssim = mean_of(r.samples, &SampleScore::ssim);
  return r;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write history " + path.string());
  out << kHistoryHeader << "\n";
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << num(r.loss.total) << ',' << num(r.loss.reconstruction)
        << ',' << num(r.loss.perceptual) << ',' << num(r.loss.consistency) << ','
        << num(r.loss.smoothness) << ',' << num(r.val_psnr) << ',' << num(r.val_ssim) << "\n";
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Split split_indices(int n, double val_fraction) {
  if (n <= 0) throw std::invalid_argument("dataset is empty");
  const int n_val = static_cast<int>(std::ceil(val_fraction * n - 1e-9));
  if (n_val >= n) throw std::invalid_argument("validation split leaves no training samples");
  Split s;
  for (int i = 0; i < n - n_val; ++i) s.train.push_back(i);
  for (int i = n - n_val; i < n; ++i) s.validation.push_back(i);
  return s;
}

TrainResult train(const TrainConfig& config, const std::vector<imaging::RsSample>& train_set,
                  const std::vector<imaging::RsSample>& val_set, const TrainOptions& options) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  TrainResult result;
  if (options.resume) {
    if (!(options.resume->config.arch == config.arch)) {
      throw std::invalid_argument("train: resume state has a different architecture");
    }
    result.state = clone_state(*options.resume);
    result.state.config = config;
  } else {
    result.state = init_state(config);
  }
  TrainState& state = result.state;

  std::unique_ptr<loss::FeatureExtractor> owned;
  loss::FeatureExtractor* phi = options.extractor;
  if (!phi && config.epochs > state.epoch) {
    owned = loss::make_perceptual_extractor(config.perceptual_weights);
    phi = owned.get();
  }
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  std::vector<int> order(train_set.size());
  std::vector<int> val_indices(val_set.size());
  for (std::size_t i = 0; i < val_indices.size(); ++i) val_indices[i] = static_cast<int>(i);

  for (int epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), state.rng);
    double loss_sum = 0.0;
    int n_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<imaging::RsSample> batch;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(augment(train_set[order[k]], config.crop_width, state.rng));
      }
      HistoryRow row;
      row.epoch = epoch;
      row.loss = train_step(state, make_batch(batch), *phi);
      row.step = state.step;
      loss_sum += row.loss.total;
      ++n_steps;
      result.history.push_back(row);
    }
    state.epoch = epoch;

    EpochSummary summary;
    summary.epoch = epoch;
    summary.mean_loss = loss_sum / n_steps;
    if (!val_set.empty()) {
      summary.validation = evaluate(model_predictor(state.net), val_set, val_indices);
      result.history.back().val_psnr = summary.validation.mean_psnr;
      result.history.back().val_ssim = summary.validation.mean_ssim;
      if (summary.validation.mean_psnr > state.best_val_psnr) {
        state.best_val_psnr = summary.validation.mean_psnr;
        state.best_epoch = epoch;
        if (!options.out_dir.empty()) ckpt::save_model(options.out_dir / "best.ckpt", *state.net);
      }
    }
    result.epochs.push_back(summary);
    if (options.on_epoch) options.on_epoch(summary);
  }

  if (!options.out_dir.empty()) {
    save_checkpoint(state, options.out_dir / "state.ckpt");
    write_history_csv(options.out_dir / "history.csv", result.history);
    if (!std::filesystem::exists(options.out_dir / "best.ckpt")) {
      ckpt::save_model(options.out_dir / "best.ckpt", *state.net);
    }
  }
  return result;
}

TrainResult train(const TrainConfig& config, const imaging::Dataset& dataset,
                  const TrainOptions& options) {
  const Split split = split_indices(dataset.size(), config.val_fraction);
  std::vector<imaging::RsSample> tr, va;
  for (int i : split.train) tr.push_back(dataset.load(i));
  for (int i : split.validation) va.push_back(dataset.load(i));
  return train(config, tr, va, options);
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  ckpt::TensorArchive a = ckpt::model_archive(*state.net.ptr());
  a.meta["format"] = kStateFormat;
  for (const auto& [k, v] : state.config.to_map()) a.meta[kConfigPrefix + k] = v;
  a.meta["state.step"] = std::to_string(state.step);
  a.meta["state.epoch"] = std::to_string(state.epoch);
  a.meta["state.best_val_psnr"] = hex_double(state.best_val_psnr);
  a.meta["state.best_epoch"] = std::to_string(state.best_epoch);
  std::ostringstream rng;
  rng << state.rng;
  a.meta["state.rng"] = rng.str();
  for (const auto& [name, t] : state.moments.exp_avg) a.tensors.emplace_back("adam.exp_avg/" + name, t);
  for (const auto& [name, t] : state.moments.exp_avg_sq) {
    a.tensors.emplace_back("adam.exp_avg_sq/" + name, t);
  }
  ckpt::write_archive(path, a);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const ckpt::TensorArchive a = ckpt::read_archive(path);
  const auto fmt = a.meta.find("format");
  if (fmt == a.meta.end() || fmt->second != kStateFormat) {
    throw ckpt::CheckpointError(path.string() + " is not a training-state checkpoint");
  }
  const auto get = [&](const std::string& key) {
    const auto it = a.meta.find(key);
    if (it == a.meta.end()) throw ckpt::CheckpointError(path.string() + ": missing " + key);
    return it->second;
  };
  TrainState s;
  try {
    std::map<std::string, std::string> kv;
    const std::string prefix = kConfigPrefix;
    for (const auto& [k, v] : a.meta) {
      if (k.rfind(prefix, 0) == 0) kv[k.substr(prefix.size())] = v;
    }
    s.config = TrainConfig::from_map(kv);
    s.step = parse_int<std::int64_t>("state.step", get("state.step"));
    s.epoch = parse_int<int>("state.epoch", get("state.epoch"));
    s.best_epoch = parse_int<int>("state.best_epoch", get("state.best_epoch"));
    s.best_val_psnr = parse_double("state.best_val_psnr", get("state.best_val_psnr"),
                                   std::chars_format::hex);
  } catch (const std::invalid_argument& e) {
    throw ckpt::CheckpointError(path.string() + ": " + e.what());
  }
  std::istringstream rng(get("state.rng"));
  rng >> s.rng;
  if (rng.fail()) throw ckpt::CheckpointError(path.string() + ": corrupt RNG state");

  s.net = model::Sunet(s.config.arch);
  ckpt::load_model_parameters(*s.net, a);
  const auto params = s.net->named_parameters();
  for (const auto& [name, t] : a.tensors) {
    auto take = [&](const std::string& prefix, std::map<std::string, Tensor>& dst) {
      if (name.rfind(prefix, 0) != 0) return;
      const std::string pname = name.substr(prefix.size());
      const Tensor* p = params.find(pname);
      if (!p || p->sizes() != t.sizes()) {
        throw ckpt::CheckpointError(path.string() + ": optimizer moment for unknown parameter " + pname);
      }
      dst[pname] = t.to(p->dtype()).clone();
    };
    take("adam.exp_avg/", s.moments.exp_avg);
    take("adam.exp_avg_sq/", s.moments.exp_avg_sq);
  }
  return s;
}

TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& expected) {
  TrainState s = load_checkpoint(path);
  if (!(s.config.arch == expected.arch)) {
    throw ckpt::CheckpointError(
        path.string() + ": architecture mismatch (checkpoint search_range=" +
        std::to_string(s.config.arch.search_range) + " level1_kernel=" +
        std::to_string(s.config.arch.level1_kernel) + " time_offset=" +
        std::to_string(s.config.arch.time_offset) + ", expected search_range=" +
        std::to_string(expected.arch.search_range) + " level1_kernel=" +
        std::to_string(expected.arch.level1_kernel) + " time_offset=" +
        std::to_string(expected.arch.time_offset) + ")");
  }
  return s;
}

model::Sunet load_network(const std::filesystem::path& path) {
  return ckpt::load_model(path);
}

}  // namespace sunet::train
