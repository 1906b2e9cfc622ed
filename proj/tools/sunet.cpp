// sunet: dataset generation, training, inference, evaluation, ablations and
// the self-check suite.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sunet/ablation.hpp"
#include "sunet/checkpoint.hpp"
#include "sunet/image_io.hpp"
#include "sunet/metrics.hpp"
#include "sunet/rs_imaging.hpp"
#include "sunet/testing/selfcheck.hpp"
#include "sunet/trainer.hpp"
#include "sunet/viz.hpp"

namespace fs = std::filesystem;
using namespace sunet;

namespace {

// Raised for user-facing failures; main prints "error: <cmd>: <what>".
struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_writable_target(const fs::path& p, bool force, const char* what) {
  if (fs::exists(p) && !force) {
    std::cout << what << " " << p.string() << " already exists; pass --force to overwrite\n";
    throw std::logic_error("skip");
  }
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      const int n = std::stoi(s);
      return {n, n};
    }
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw CommandError("invalid --size '" + s + "' (expected N or HxW)");
  }
}

std::string fmt_psnr(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

FlowField flow_from_tensor(const torch::Tensor& t) {
  const torch::Tensor f = t.detach().to(torch::kFloat32).squeeze(0).permute({1, 2, 0}).contiguous();
  FlowField out = make_flow(static_cast<int>(f.size(0)), static_cast<int>(f.size(1)));
  std::copy_n(f.data_ptr<float>(), out.size(), out.data().begin());
  return out;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// gen-data ---------------------------------------------------------------

struct GenArgs {
  fs::path out;
  int count = 200;
  std::string size = "64";
  std::string motion = "translation";
  std::string texture = "mixed";
  double min_speed = 4.0;
  double max_speed = 10.0;
  std::uint64_t seed = 1;
  bool force = false;
};

void cmd_gen_data(const GenArgs& a) {
  require_writable_target(a.out / "manifest.json", a.force, "dataset");
  imaging::DatasetConfig dc;
  dc.out_dir = a.out;
  dc.count = a.count;
  std::tie(dc.height, dc.width) = parse_size(a.size);
  dc.motion.family = imaging::motion_family_from_string(a.motion);
  dc.motion.min_speed = a.min_speed;
  dc.motion.max_speed = a.max_speed;
  dc.texture = imaging::texture_kind_from_string(a.texture);
  dc.seed = a.seed;
  imaging::build_dataset(dc);
  const imaging::Dataset ds = imaging::Dataset::open(a.out);
  std::cout << "wrote " << ds.size() << " samples (" << ds.height() << "x" << ds.width() << ", "
            << a.motion << " motion, speed " << a.min_speed << ".." << a.max_speed << " px/frame, seed "
            << a.seed << ") to " << a.out.string() << "\n";
}

// train ------------------------------------------------------------------

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool resume = false;
  bool force = false;
  bool quiet = false;
};

void plot_history(const fs::path& out_dir, const std::vector<train::HistoryRow>& rows) {
  viz::Series total, val;
  for (const auto& r : rows) {
    total.values.push_back(r.loss.total);
    if (std::isfinite(r.val_psnr)) val.values.push_back(r.val_psnr);
  }
  write_png(out_dir / "loss.png", viz::plot_lines({total}));
  if (!val.values.empty()) write_png(out_dir / "val_psnr.png", viz::plot_lines({val}));
}

std::vector<train::HistoryRow> parse_history(const fs::path& p) {
  std::vector<train::HistoryRow> rows;
  const auto lines = read_lines(p);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<double> v;
    std::stringstream ss(lines[i]);
    for (std::string cell; std::getline(ss, cell, ',');) v.push_back(std::strtod(cell.c_str(), nullptr));
    if (v.size() < 9) continue;
    train::HistoryRow r;
    r.epoch = static_cast<int>(v[0]);
    r.step = static_cast<std::int64_t>(v[1]);
    r.loss = {v[2], v[3], v[4], v[5], v[6]};
    r.val_psnr = v[7];
    r.val_ssim = v[8];
    rows.push_back(r);
  }
  return rows;
}

void cmd_train(const TrainArgs& a) {
  if (!fs::is_directory(a.data)) throw CommandError("data directory " + a.data.string() + " does not exist");
  const fs::path state_path = a.out / "state.ckpt";
  if (!a.resume) require_writable_target(state_path, a.force, "training output");

  train::TrainConfig config = a.config.empty() ? train::TrainConfig{} : train::TrainConfig::load(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.epochs) config.epochs = *a.epochs;
  config.validate();

  const imaging::Dataset ds = imaging::Dataset::open(a.data);
  train::use_deterministic_arithmetic();

  std::optional<train::TrainState> resume_state;
  std::vector<train::HistoryRow> previous;
  if (a.resume) {
    if (!fs::exists(state_path)) throw CommandError("nothing to resume: " + state_path.string() + " is missing");
    resume_state = train::load_checkpoint(state_path, config);
    previous = parse_history(a.out / "history.csv");
    std::cout << "resuming after epoch " << resume_state->epoch << " (step " << resume_state->step << ")\n";
  }

  fs::create_directories(a.out);
  config.save(a.out / "config.cfg");
  train::TrainOptions opts;
  opts.out_dir = a.out;
  if (resume_state) opts.resume = &*resume_state;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const train::EpochSummary& s) {
    if (a.quiet) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %d/%d  loss %.4f  val PSNR %s dB  SSIM %.4f  (%.0f s)\n", s.epoch, config.epochs,
                s.mean_loss, fmt_psnr(s.validation.mean_psnr).c_str(), s.validation.mean_ssim, secs);
    std::fflush(stdout);
  };
  const train::TrainResult r = train::train(config, ds, opts);

  std::vector<train::HistoryRow> all = previous;
  all.insert(all.end(), r.history.begin(), r.history.end());
  train::write_history_csv(a.out / "history.csv", all);
  plot_history(a.out, all);
  std::cout << "trained " << r.state.epoch << " epochs (" << r.state.step << " steps); best val PSNR "
            << fmt_psnr(r.state.best_val_psnr) << " dB at epoch " << r.state.best_epoch << "\n"
            << "wrote " << (a.out / "best.ckpt").string() << ", " << state_path.string() << ", "
            << (a.out / "history.csv").string() << "\n";
}

// infer ------------------------------------------------------------------

struct InferArgs {
  fs::path ckpt;
  fs::path frame1;
  fs::path frame2;
  fs::path out;
  fs::path dump;
  bool force = false;
};

void cmd_infer(const InferArgs& a) {
  require_writable_target(a.out, a.force, "output");
  model::Sunet net = train::load_network(a.ckpt);
  net->eval();
  const Image rs1 = read_png(a.frame1);
  const Image rs2 = read_png(a.frame2);
  if (!rs1.same_shape(rs2)) throw CommandError("frames differ in size");
  torch::NoGradGuard no_grad;
  const model::MultiScaleOutput out =
      net->forward(train::to_tensor(rs1).unsqueeze(0), train::to_tensor(rs2).unsqueeze(0));
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_png(a.out, train::to_image(out.final_image));
  std::cout << "wrote " << a.out.string() << " (" << rs1.height() << "x" << rs1.width() << ")\n";
  if (a.dump.empty()) return;

  fs::create_directories(a.dump);
  // One magnitude scale per level so both frames are comparable.
  for (const auto& lo : out.levels) {
    const std::string l = std::to_string(lo.level);
    const FlowField f1 = flow_from_tensor(lo.flow[0]);
    const FlowField f2 = flow_from_tensor(lo.flow[1]);
    double m = 0.0;
    for (const FlowField* f : {&f1, &f2})
      for (int y = 0; y < f->height(); ++y)
        for (int x = 0; x < f->width(); ++x) m = std::max(m, std::hypot(double(f->at(y, x, 0)), double(f->at(y, x, 1))));
    write_png(a.dump / ("flow1_l" + l + ".png"), viz::flow_to_color(f1, m));
    write_png(a.dump / ("flow2_l" + l + ".png"), viz::flow_to_color(f2, m));
    write_flow(a.dump / ("flow1_l" + l + ".rsfl"), f1);
    write_flow(a.dump / ("flow2_l" + l + ".rsfl"), f2);
    write_png(a.dump / ("gs1_l" + l + ".png"), train::to_image(lo.branch_image[0]));
    write_png(a.dump / ("gs2_l" + l + ".png"), train::to_image(lo.branch_image[1]));
    write_png(a.dump / ("fused_l" + l + ".png"), train::to_image(lo.fused_image));
  }
  write_png(a.dump / "color_wheel.png", viz::color_wheel(64));
  std::cout << "wrote intermediates to " << a.dump.string() << "\n";
}

// eval -------------------------------------------------------------------

struct EvalArgs {
  fs::path ckpt;
  std::string predictor = "model";
  fs::path data;
  std::string mask = "on";
  std::string split = "all";
  fs::path out;
  bool diff_maps = true;
  bool force = false;
};

void cmd_eval(const EvalArgs& a) {
  if (!a.out.empty()) require_writable_target(a.out / "per_sample.csv", a.force, "evaluation");
  const imaging::Dataset ds = imaging::Dataset::open(a.data);
  std::vector<int> indices;
  if (a.split == "all") {
    for (int i = 0; i < ds.size(); ++i) indices.push_back(i);
  } else {
    double frac = 0.1;
    if (!a.ckpt.empty() && a.predictor == "model") {
      try {
        frac = train::load_checkpoint(a.ckpt).config.val_fraction;
      } catch (const ckpt::CheckpointError&) {
      }
    }
    indices = train::split_indices(ds.size(), frac).validation;
  }
  std::vector<imaging::RsSample> samples;
  for (int i : indices) samples.push_back(ds.load(i));

  train::Predictor predict;
  if (a.predictor == "model") {
    if (a.ckpt.empty()) throw CommandError("--ckpt is required with --predictor model");
    predict = train::model_predictor(train::load_network(a.ckpt));
  } else if (a.predictor == "identity") {
    predict = train::identity_predictor();
  } else {
    predict = train::ground_truth_predictor();
  }
  std::vector<Image> preds;
  const train::Predictor recording = [&](const imaging::RsSample& s) {
    preds.push_back(predict(s));
    return preds.back();
  };
  const train::EvalReport r = train::evaluate(recording, samples, indices);
  const bool use_mask = a.mask == "on";

  std::printf("| samples | mask | PSNR (dB) | SSIM    |\n|---------|------|-----------|---------|\n");
  std::printf("| %7zu | %-4s | %9s | %7.4f |\n", samples.size(), a.mask.c_str(),
              fmt_psnr(r.psnr(use_mask)).c_str(), r.mean_ssim);
  if (a.out.empty()) return;

  fs::create_directories(a.out);
  {
    std::ofstream csv(a.out / "per_sample.csv");
    csv << "index,psnr,ssim\n";
    csv.precision(10);
    for (const auto& s : r.samples) {
      csv << s.index << ',' << fmt_psnr(use_mask ? s.psnr_masked : s.psnr) << ',' << s.ssim << '\n';
    }
    std::ofstream sum(a.out / "summary.csv");
    sum << "predictor,mask,samples,mean_psnr,mean_ssim\n"
        << a.predictor << ',' << a.mask << ',' << samples.size() << ',' << fmt_psnr(r.psnr(use_mask)) << ','
        << r.mean_ssim << '\n';
  }
  if (a.diff_maps) {
    fs::create_directories(a.out / "diff");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%05d.png", indices[i]);
      write_png(a.out / "diff" / name, metrics::diff_map(preds[i], samples[i].gs));
    }
  }
  std::cout << "wrote " << (a.out / "per_sample.csv").string() << " (" << r.samples.size() << " rows)\n";
}

// ablate -----------------------------------------------------------------

struct AblateArgs {
  fs::path data;
  fs::path config;
  std::string matrix = "d:0,d:4";
  int budget = 0;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

void cmd_ablate(const AblateArgs& a) {
  require_writable_target(a.out / "table.csv", a.force, "ablation table");
  train::TrainConfig base = a.config.empty() ? train::TrainConfig{} : train::TrainConfig::load(a.config);
  if (a.seed) base.seed = *a.seed;
  const auto variants = train::parse_ablation_matrix(a.matrix, base);
  const imaging::Dataset ds = imaging::Dataset::open(a.data);
  const train::Split split = train::split_indices(ds.size(), base.val_fraction);
  std::vector<imaging::RsSample> tr, va;
  for (int i : split.train) tr.push_back(ds.load(i));
  for (int i : split.validation) va.push_back(ds.load(i));
  train::use_deterministic_arithmetic();
  auto phi = loss::make_perceptual_extractor(base.perceptual_weights);

  fs::create_directories(a.out);
  train::AblationOptions opts;
  opts.budget = a.budget;
  opts.out_dir = a.out / "runs";
  opts.extractor = phi.get();
  opts.on_epoch = [](const std::string& label, const train::EpochSummary& s) {
    std::printf("[%s] epoch %d  val PSNR %s dB\n", label.c_str(), s.epoch, fmt_psnr(s.validation.mean_psnr).c_str());
    std::fflush(stdout);
  };
  const auto rows = train::run_ablation(variants, tr, va, opts);
  train::write_ablation_csv(a.out / "table.csv", rows);
  std::vector<double> psnr;
  double lo = INFINITY;
  for (const auto& r : rows) {
    psnr.push_back(r.val_psnr);
    if (std::isfinite(r.val_psnr)) lo = std::min(lo, r.val_psnr);
  }
  write_png(a.out / "psnr.png", viz::plot_bars(psnr, std::isfinite(lo) ? std::floor(lo) - 1.0 : 0.0));
  std::cout << train::format_ablation_table(rows) << "wrote " << (a.out / "table.csv").string()
            << " and psnr.png (bars in table order)\n";
}

// check ------------------------------------------------------------------

struct CheckArgs {
  std::vector<std::string> only;
  std::uint64_t seed = 7;
  int instances = 20;
  bool corrupt_warp = false;
};

int cmd_check(const CheckArgs& a) {
  testing::SelfCheckOptions o;
  o.seed = a.seed;
  o.oracle_instances = a.instances;
  if (a.corrupt_warp) o.warp = testing::corrupted_forward_warp;
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = testing::run_self_checks(o, a.only);
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.group << ": " << r.property;
    if (!r.detail.empty()) std::cout << "  (" << r.detail << ")";
    std::cout << "\n";
    failed += !r.passed;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu properties, %d failed, %.1f s\n", results.size(), failed, secs);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rolling-shutter correction: data, training, inference and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Render a synthetic RS dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of samples")->check(CLI::PositiveNumber);
  g->add_option("--size", gen.size, "Frame size N or HxW");
  g->add_option("--motion", gen.motion, "Motion family")->check(CLI::IsMember({"translation", "rotation", "mixed"}));
  g->add_option("--texture", gen.texture, "Scene texture")->check(CLI::IsMember({"checkerboard", "noise", "mixed"}));
  g->add_option("--min-speed", gen.min_speed, "Minimum speed, px per frame");
  g->add_option("--max-speed", gen.max_speed, "Maximum speed, px per frame");
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_flag("--force", gen.force, "Overwrite an existing dataset");

  TrainArgs tr;
  std::uint64_t train_seed = 0;
  int train_epochs = 0;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "key = value config file")->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  auto* t_seed = t->add_option("--seed", train_seed, "Override the config seed");
  auto* t_epochs = t->add_option("--epochs", train_epochs, "Override the config epoch count");
  t->add_flag("--resume", tr.resume, "Continue from <out>/state.ckpt");
  t->add_flag("--force", tr.force, "Overwrite existing outputs");
  t->add_flag("--quiet", tr.quiet, "No per-epoch lines");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Correct one RS frame pair");
  i->add_option("--ckpt", inf.ckpt, "Model or training-state checkpoint")->required()->check(CLI::ExistingFile);
  i->add_option("--frame1", inf.frame1, "First RS frame (PNG)")->required()->check(CLI::ExistingFile);
  i->add_option("--frame2", inf.frame2, "Second RS frame (PNG)")->required()->check(CLI::ExistingFile);
  i->add_option("--out", inf.out, "Output GS image (PNG)")->required();
  i->add_option("--dump-intermediate", inf.dump, "Directory for per-level flows and images");
  i->add_flag("--force", inf.force, "Overwrite existing outputs");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against ground truth");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint (for --predictor model)")->check(CLI::ExistingFile);
  e->add_option("--predictor", ev.predictor, "What produces the GS image")
      ->check(CLI::IsMember({"model", "identity", "gt"}));
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--mask", ev.mask, "Score only visible pixels")->check(CLI::IsMember({"on", "off"}));
  e->add_option("--split", ev.split, "Samples to score")->check(CLI::IsMember({"all", "val"}));
  e->add_option("--out", ev.out, "Directory for per_sample.csv, summary.csv and diff maps");
  e->add_flag("!--no-diff-maps", ev.diff_maps, "Skip difference images");
  e->add_flag("--force", ev.force, "Overwrite existing outputs");

  AblateArgs ab;
  std::uint64_t ablate_seed = 0;
  auto* b = app.add_subcommand("ablate", "Train and compare ablation variants");
  b->add_option("--data", ab.data, "Dataset directory")->required();
  b->add_option("--config", ab.config, "Base config file")->check(CLI::ExistingFile);
  b->add_option("--matrix", ab.matrix,
                "Comma-separated key:value items (d, kernel, time_offset, consistency, drop) or presets "
                "table1..table4, terms, all");
  b->add_option("--budget", ab.budget, "Epochs per variant (0 keeps the config value)")->check(CLI::NonNegativeNumber);
  b->add_option("--out", ab.out, "Output directory")->required();
  auto* b_seed = b->add_option("--seed", ablate_seed, "Override the config seed");
  b->add_flag("--force", ab.force, "Overwrite existing outputs");

  CheckArgs ck;
  auto* c = app.add_subcommand("check", "Run the oracle, gradient and shape self-checks");
  c->add_option("--only", ck.only, "Groups to run: shapes, oracles, gradients, geometry, symmetry, metrics, persistence")
      ->delimiter(',');
  c->add_option("--seed", ck.seed, "Random seed");
  c->add_option("--instances", ck.instances, "Random instances per oracle comparison")->check(CLI::PositiveNumber);
  c->add_flag("--corrupt-warp", ck.corrupt_warp)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& err) {
    // Usage of the subcommand that failed to parse, or of the whole tool.
    const CLI::App* failed = &app;
    for (const CLI::App* sub : app.get_subcommands()) failed = sub;
    const std::string where = failed == &app ? "sunet" : failed->get_name();
    std::cerr << "error: " << where << ": " << err.what() << "\n\n" << failed->help();
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (*g) cmd_gen_data(gen);
    if (*t) {
      if (*t_seed) tr.seed = train_seed;
      if (*t_epochs) tr.epochs = train_epochs;
      cmd_train(tr);
    }
    if (*i) cmd_infer(inf);
    if (*e) cmd_eval(ev);
    if (*b) {
      if (*b_seed) ab.seed = ablate_seed;
      cmd_ablate(ab);
    }
    if (*c) return cmd_check(ck);
  } catch (const std::logic_error& skip) {
    if (std::string(skip.what()) == "skip") return 0;
    std::cerr << "error: " << name << ": " << skip.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::string what = ex.what();
    what = what.substr(0, what.find('\n'));
    std::cerr << "error: " << name << ": " << what << "\n";
    return 1;
  }
  return 0;
}
