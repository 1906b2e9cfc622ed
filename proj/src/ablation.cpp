#include "sunet/ablation.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace sunet::train {
namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    const auto b = cur.find_first_not_of(" \t");
    const auto e = cur.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
  }
  return out;
}

const std::map<std::string, std::string>& presets() {
  static const std::map<std::string, std::string> p{
      {"table1", "d:0,d:2,d:4,d:6"},
      {"table2", "kernel:0,kernel:3,kernel:5,kernel:7"},
      {"table3", "time_offset:off,time_offset:on"},
      {"table4", "consistency:off,consistency:self,consistency:gt"},
      {"terms", "drop:none,drop:Lr,drop:Lp,drop:Lc,drop:Ls"},
  };
  return p;
}

TrainConfig apply(const std::string& item, const TrainConfig& base) {
  TrainConfig c = base;
  if (item == "base") return c;
  const auto colon = item.find(':');
  if (colon == std::string::npos) {
    throw std::invalid_argument("ablation item '" + item + "' is neither key:value nor a preset");
  }
  const std::string key = item.substr(0, colon), value = item.substr(colon + 1);
  auto one_of = [&](std::initializer_list<const char*> allowed) {
    for (const char* a : allowed)
      if (value == a) return;
    throw std::invalid_argument("ablation value '" + value + "' not allowed for " + key);
  };
  if (key == "d") {
    one_of({"0", "2", "4", "6"});
    c.arch.search_range = std::stoi(value);
  } else if (key == "kernel") {
    one_of({"0", "3", "5", "7"});
    c.arch.level1_kernel = std::stoi(value);
  } else if (key == "time_offset") {
    one_of({"on", "off"});
    c.arch.time_offset = value == "on";
  } else if (key == "consistency") {
    c.consistency = loss::consistency_mode_from_string(value);
  } else if (key == "drop") {
    c.drop = drop_term_from_string(value);
  } else {
    throw std::invalid_argument("unknown ablation key '" + key + "'");
  }
  return c;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

std::vector<AblationVariant> parse_ablation_matrix(const std::string& matrix, const TrainConfig& base) {
  std::vector<std::string> items;
  for (const std::string& tok : split(matrix, ',')) {
    if (tok == "all") {
      for (const auto& [name, expansion] : presets())
        for (const auto& i : split(expansion, ',')) items.push_back(i);
    } else if (const auto it = presets().find(tok); it != presets().end()) {
      for (const auto& i : split(it->second, ',')) items.push_back(i);
    } else {
      items.push_back(tok);
    }
  }
  if (items.empty()) throw std::invalid_argument("empty ablation matrix");
  std::vector<AblationVariant> out;
  for (const std::string& item : items) {
    bool seen = false;
    for (const auto& v : out) seen = seen || v.label == item;
    if (!seen) out.push_back({item, apply(item, base)});
  }
  return out;
}

std::string training_key(const TrainConfig& config) {
  TrainConfig c = config;
  c.weights = config.effective_weights();
  c.drop = DropTerm::kNone;
  if (c.consistency == loss::ConsistencyMode::kOff || c.weights.consistency == 0.0) {
    c.weights.consistency = 0.0;
    c.consistency = loss::ConsistencyMode::kGroundTruth;
  }
  std::string key;
  for (const auto& [k, v] : c.to_map()) key += k + "=" + v + ";";
  return key;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants,
                                      const std::vector<imaging::RsSample>& train_set,
                                      const std::vector<imaging::RsSample>& val_set,
                                      const AblationOptions& options) {
  if (val_set.empty()) throw std::invalid_argument("ablation needs a validation set");
  std::vector<AblationRow> rows;
  std::map<std::string, std::size_t> done;
  for (const AblationVariant& v : variants) {
    AblationRow row;
    row.label = v.label;
    row.config = v.config;
    if (options.budget > 0) row.config.epochs = options.budget;
    const std::string key = training_key(row.config);
    if (const auto it = done.find(key); it != done.end()) {
      const AblationRow& prev = rows[it->second];
      const std::string label = row.label;
      const TrainConfig config = row.config;
      row = prev;
      row.label = label;
      row.config = config;
      row.shared_with = prev.label;
      row.seconds = 0.0;
    } else {
      TrainOptions to;
      to.extractor = options.extractor;
      if (!options.out_dir.empty()) {
        std::string dir = row.label;
        for (char& ch : dir)
          if (ch == ':') ch = '_';
        to.out_dir = options.out_dir / dir;
      }
      if (options.on_epoch) {
        to.on_epoch = [&](const EpochSummary& s) { options.on_epoch(row.label, s); };
      }
      const auto t0 = std::chrono::steady_clock::now();
      const TrainResult r = train(row.config, train_set, val_set, to);
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (r.epochs.empty()) {
        const EvalReport e = evaluate(model_predictor(r.state.net), val_set);
        row.val_psnr = e.mean_psnr;
        row.val_psnr_masked = e.mean_psnr_masked;
        row.val_ssim = e.mean_ssim;
        row.epoch1_psnr = nan();
        row.best_psnr = e.mean_psnr;
      } else {
        const EvalReport& last = r.epochs.back().validation;
        row.val_psnr = last.mean_psnr;
        row.val_psnr_masked = last.mean_psnr_masked;
        row.val_ssim = last.mean_ssim;
        row.epoch1_psnr = r.epochs.front().validation.mean_psnr;
        row.best_psnr = r.state.best_val_psnr;
      }
      done[key] = rows.size();
    }
    rows.push_back(row);
    if (options.on_row) options.on_row(rows.back());
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "label,search_range,level1_kernel,time_offset,consistency,drop,epochs,val_psnr,"
         "val_psnr_masked,val_ssim,epoch1_psnr,best_psnr,seconds,shared_with\n";
  out.precision(10);
  for (const AblationRow& r : rows) {
    const TrainConfig& c = r.config;
    out << r.label << ',' << c.arch.search_range << ',' << c.arch.level1_kernel << ','
        << (c.arch.time_offset ? "on" : "off") << ',' << loss::to_string(c.consistency) << ','
        << to_string(c.drop) << ',' << c.epochs << ',' << r.val_psnr << ',' << r.val_psnr_masked << ','
        << r.val_ssim << ',' << r.epoch1_psnr << ',' << r.best_psnr << ',' << r.seconds << ','
        << r.shared_with << '\n';
  }
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << "| variant            | PSNR (dB) | PSNR masked | SSIM   | epoch-1 PSNR |\n"
    << "|--------------------|-----------|-------------|--------|--------------|\n";
  for (const AblationRow& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "| %-18s | %9.3f | %11.3f | %6.4f | %12.3f |", r.label.c_str(), r.val_psnr,
                  r.val_psnr_masked, r.val_ssim, r.epoch1_psnr);
    s << buf;
    if (!r.shared_with.empty()) s << " same run as " << r.shared_with;
    s << '\n';
  }
  return s.str();
}

}  // namespace sunet::train
