#pragma once

// Ablation matrices: named variations of a base training config, run at a
// common budget and compared on validation quality.
//
// Matrix syntax: comma-separated items, each `key:value` or a preset name.
//   d:<0|2|4|6>             cost-volume search range
//   kernel:<0|3|5|7>        level-1 transitional kernel (0 removes the level)
//   time_offset:<on|off>
//   consistency:<gt|self|off>
//   drop:<none|Lr|Lp|Lc|Ls>
//   base                    the unmodified base config
// Presets: table1 (d), table2 (kernel), table3 (time_offset),
// table4 (consistency), terms (drop), all (every preset).

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sunet/trainer.hpp"

namespace sunet::train {

struct AblationVariant {
  std::string label;  // e.g. "d:0"
  TrainConfig config;
};

/// Throws std::invalid_argument on unknown keys, values or presets.
std::vector<AblationVariant> parse_ablation_matrix(const std::string& matrix, const TrainConfig& base);

/// Canonical form of everything that influences training. Configs with equal
/// keys produce bit-identical runs (e.g. consistency:off and drop:Lc).
std::string training_key(const TrainConfig& config);

struct AblationRow {
  std::string label;
  TrainConfig config;
  double val_psnr = 0.0;         // after the last epoch
  double val_psnr_masked = 0.0;
  double val_ssim = 0.0;
  double epoch1_psnr = 0.0;
  double best_psnr = 0.0;
  double seconds = 0.0;
  /// Label of the earlier row whose run was reused, empty when trained.
  std::string shared_with;
};

struct AblationOptions {
  /// Overrides config.epochs of every variant when > 0.
  int budget = 0;
  /// When set, each distinct run writes its outputs to <out_dir>/<label>.
  std::filesystem::path out_dir;
  loss::FeatureExtractor* extractor = nullptr;
  std::function<void(const AblationRow&)> on_row;
  std::function<void(const std::string& label, const EpochSummary&)> on_epoch;
};

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants,
                                      const std::vector<imaging::RsSample>& train_set,
                                      const std::vector<imaging::RsSample>& val_set,
                                      const AblationOptions& options = {});

/// label,search_range,level1_kernel,time_offset,consistency,drop,epochs,
/// val_psnr,val_psnr_masked,val_ssim,epoch1_psnr,best_psnr,seconds,shared_with
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

/// Markdown-style table for terminals.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace sunet::train
