#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "sunet/image.hpp"
#include "sunet/losses.hpp"
#include "sunet/metrics.hpp"
#include "sunet/model.hpp"
#include "sunet/rs_imaging.hpp"

namespace sunet::train {

/// Single loss term removed from the objective (its weight forced to 0).
enum class DropTerm { kNone, kReconstruction, kPerceptual, kConsistency, kSmoothness };

std::string to_string(DropTerm term);
/// Accepts none, Lr, Lp, Lc, Ls.
DropTerm drop_term_from_string(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 2;
  int epochs = 30;
  /// 0 means the full image width.
  int crop_width = 0;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Trailing fraction of the dataset (by index) held out for validation.
  double val_fraction = 0.1;
  loss::LossWeights weights;
  model::ModelConfig arch;
  loss::ConsistencyMode consistency = loss::ConsistencyMode::kGroundTruth;
  DropTerm drop = DropTerm::kNone;
  /// VGG19 archive for the perceptual term; empty uses the environment or
  /// the fallback extractor.
  std::string perceptual_weights;

  void validate() const;
  /// Loss weights after applying the drop switch.
  loss::LossWeights effective_weights() const;

  /// Flat key -> value form; keys match the config-file keys.
  std::map<std::string, std::string> to_map() const;
  /// Unknown keys and malformed values are errors. Missing keys keep defaults.
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  /// Reads `key = value` lines; `#` starts a comment.
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct AdamMoments {
  std::map<std::string, torch::Tensor> exp_avg;
  std::map<std::string, torch::Tensor> exp_avg_sq;
};

struct TrainState {
  TrainConfig config;
  model::Sunet net{nullptr};
  AdamMoments moments;
  std::int64_t step = 0;
  /// Completed epochs.
  int epoch = 0;
  std::mt19937_64 rng;
  double best_val_psnr = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
};

/// Fresh model and optimizer state seeded from config.seed.
TrainState init_state(const TrainConfig& config);

/// Deep copy: the network and optimizer moments are not shared.
TrainState clone_state(const TrainState& state);

/// Runs the network single-threaded with deterministic kernels.
void use_deterministic_arithmetic();

// Tensor conversion ------------------------------------------------------

/// H x W x C raster -> C x H x W float32 tensor.
torch::Tensor to_tensor(const Raster<float>& img);
/// C x H x W (or 1 x C x H x W) tensor -> raster.
Image to_image(const torch::Tensor& t);

struct Batch {
  torch::Tensor rs1;  // N x 3 x H x W
  torch::Tensor rs2;
  torch::Tensor gs;
};

Batch make_batch(const std::vector<imaging::RsSample>& samples);

/// Uniform random horizontal crop applied identically to every field. Rows
/// are never cropped, so the scanline timing is preserved.
imaging::RsSample augment(const imaging::RsSample& sample, int crop_width, std::mt19937_64& rng);

// Optimization -----------------------------------------------------------

struct StepMetrics {
  double total = 0.0;
  double reconstruction = 0.0;
  double perceptual = 0.0;
  double consistency = 0.0;
  double smoothness = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(const std::string& what, StepMetrics metrics)
      : std::runtime_error(what), metrics_(metrics) {}
  const StepMetrics& metrics() const { return metrics_; }

 private:
  StepMetrics metrics_;
};

/// One Adam update of every trainable tensor whose gradient is defined.
/// Parameters without a gradient are left untouched.
void adam_update(const std::vector<std::pair<std::string, torch::Tensor>>& params,
                 AdamMoments& moments, std::int64_t step, const TrainConfig& config);

/// Forward, loss, backward, one Adam step; increments state.step.
StepMetrics train_step(TrainState& state, const Batch& batch, loss::FeatureExtractor& phi);

// Evaluation -------------------------------------------------------------

using Predictor = std::function<Image(const imaging::RsSample&)>;

Predictor model_predictor(model::Sunet net);
/// Predicts the second RS frame unchanged.
Predictor identity_predictor();
/// Returns the ground truth itself.
Predictor ground_truth_predictor();

/// Runs the network on one RS pair and returns the full-resolution image.
Image infer(model::Sunet& net, const Image& rs1, const Image& rs2);

struct SampleScore {
  int index = 0;
  double psnr = 0.0;
  /// NaN when the mask is empty.
  double psnr_masked = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  double mean_psnr = 0.0;
  double mean_psnr_masked = 0.0;
  double mean_ssim = 0.0;
  std::vector<SampleScore> samples;

  /// Masked or unmasked mean PSNR.
  double psnr(bool use_mask) const { return use_mask ? mean_psnr_masked : mean_psnr; }
};

/// `indices` name the samples (for reporting). Errors on an empty set.
EvalReport evaluate(const Predictor& predict, const std::vector<imaging::RsSample>& samples,
                    const std::vector<int>& indices = {});

// Training loop ----------------------------------------------------------

struct HistoryRow {
  int epoch = 0;
  std::int64_t step = 0;
  StepMetrics loss;
  /// Only on the last step of an epoch; NaN elsewhere.
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
  double val_ssim = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kHistoryHeader = "epoch,step,total,Lr,Lp,Lc,Ls,val_psnr,val_ssim";

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryRow>& rows);

struct EpochSummary {
  int epoch = 0;
  double mean_loss = 0.0;
  EvalReport validation;
};

struct TrainOptions {
  /// When set, best.ckpt (best validation PSNR), state.ckpt and history.csv
  /// are written there.
  std::filesystem::path out_dir;
  /// Perceptual extractor; built from the config when null.
  loss::FeatureExtractor* extractor = nullptr;
  std::function<void(const EpochSummary&)> on_epoch;
  /// Continue from this state instead of a fresh one (its config must match).
  const TrainState* resume = nullptr;
};

struct TrainResult {
  TrainState state;
  std::vector<HistoryRow> history;
  std::vector<EpochSummary> epochs;
};

/// Index split: the trailing ceil(val_fraction * n) samples are validation.
struct Split {
  std::vector<int> train;
  std::vector<int> validation;
};
Split split_indices(int n, double val_fraction);

TrainResult train(const TrainConfig& config, const std::vector<imaging::RsSample>& train_set,
                  const std::vector<imaging::RsSample>& val_set, const TrainOptions& options = {});
TrainResult train(const TrainConfig& config, const imaging::Dataset& dataset,
                  const TrainOptions& options = {});

// Persistence ------------------------------------------------------------

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Also requires the stored architecture to equal `expected.arch`.
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& expected);
/// Model-only or training-state archives both load as a network.
model::Sunet load_network(const std::filesystem::path& path);

}  // namespace sunet::train
