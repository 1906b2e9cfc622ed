#pragma once

// Versioned tensor container:
//   "SUNC" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u32 ndim, ndim x i64 dim,
//                                 u8 dtype, u64 n_bytes, payload)
// All integers little-endian; str = u32 length + bytes. dtype 0 is float32,
// 1 is float64.

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sunet/model.hpp"

namespace sunet::ckpt {

inline constexpr std::uint32_t kArchiveVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorArchive {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

/// Model parameters as float32 under their module-path names plus the
/// architecture config in metadata (format = "sunet-model").
TensorArchive model_archive(model::SunetImpl& net);

/// Copies archive parameters into `net`. Fails on architecture mismatch and on
/// missing, unexpected or mis-shaped parameters.
void load_model_parameters(model::SunetImpl& net, const TensorArchive& archive);

void save_model(const std::filesystem::path& path, model::SunetImpl& net);
/// Builds a network from the stored architecture and loads its weights.
model::Sunet load_model(const std::filesystem::path& path);

}  // namespace sunet::ckpt
