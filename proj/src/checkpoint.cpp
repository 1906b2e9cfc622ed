#include "sunet/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <set>

namespace sunet::ckpt {
namespace {

constexpr std::array<char, 4> kMagic{'S', 'U', 'N', 'C'};
constexpr std::uint32_t kMaxCount = 1u << 24;

static_assert(std::endian::native == std::endian::little,
              "tensor payloads are written in native order");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw CheckpointError("cannot open " + path.string() + " for writing");
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw CheckpointError("short write to " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw CheckpointError("cannot open checkpoint " + path.string());
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("truncated checkpoint " + path_.string());
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  std::int64_t i64() { std::int64_t v; bytes(&v, 8); return v; }
  std::uint32_t count(const char* what) {
    const std::uint32_t n = u32();
    if (n > kMaxCount) {
      throw CheckpointError("corrupt checkpoint " + path_.string() + ": implausible " + what +
                            " count " + std::to_string(n));
    }
    return n;
  }
  std::string str() {
    std::string s(count("string length"), '\0');
    bytes(s.data(), s.size());
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

std::uint8_t dtype_code(const torch::Tensor& t) {
  if (t.scalar_type() == torch::kFloat32) return 0;
  if (t.scalar_type() == torch::kFloat64) return 1;
  throw CheckpointError("unsupported tensor dtype in archive");
}

}  // namespace

const torch::Tensor* TensorArchive::find(const std::string& name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return &value;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  Writer w(path);
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(archive.meta.size()));
  for (const auto& [k, v] : archive.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const auto& [name, tensor] : archive.tensors) {
    const torch::Tensor t = tensor.detach().contiguous().cpu();
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.i64(d);
    w.u8(dtype_code(t));
    const std::uint64_t n = static_cast<std::uint64_t>(t.numel()) * t.element_size();
    w.u64(n);
    w.bytes(t.data_ptr(), n);
  }
  w.finish();
}

TensorArchive read_archive(const std::filesystem::path& path) {
  Reader r(path);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw CheckpointError(path.string() + " is not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kArchiveVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kArchiveVersion) + ")");
  }
  TensorArchive archive;
  const std::uint32_t n_meta = r.count("metadata");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    archive.meta[k] = r.str();
  }
  const std::uint32_t n_tensors = r.count("tensor");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw CheckpointError(path.string() + ": corrupt rank for " + name);
    std::vector<std::int64_t> dims(ndim);
    std::int64_t numel = 1;
    for (auto& d : dims) {
      d = r.i64();
      if (d < 0 || d > (1LL << 32)) throw CheckpointError(path.string() + ": corrupt shape for " + name);
      numel *= d;
    }
    const std::uint8_t code = r.u8();
    if (code > 1) throw CheckpointError(path.string() + ": unknown dtype for " + name);
    const auto dtype = code == 0 ? torch::kFloat32 : torch::kFloat64;
    const std::uint64_t n = r.u64();
    const std::uint64_t expect = static_cast<std::uint64_t>(numel) * (code == 0 ? 4 : 8);
    if (n != expect) throw CheckpointError(path.string() + ": payload size mismatch for " + name);
    torch::Tensor t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    r.bytes(t.data_ptr(), n);
    archive.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end()) throw CheckpointError(path.string() + ": trailing bytes after archive");
  return archive;
}

TensorArchive model_archive(model::SunetImpl& net) {
  TensorArchive a;
  a.meta = net.config().to_metadata();
  a.meta["format"] = "sunet-model";
  for (const auto& p : net.named_parameters()) {
    a.tensors.emplace_back(p.key(), p.value().detach().to(torch::kFloat32).clone());
  }
  return a;
}

void load_model_parameters(model::SunetImpl& net, const TensorArchive& archive) {
  const model::ModelConfig stored = model::ModelConfig::from_metadata(archive.meta);
  const model::ModelConfig& mine = net.config();
  if (!(stored == mine)) {
    throw CheckpointError(
        "architecture mismatch: checkpoint has search_range=" + std::to_string(stored.search_range) +
        " level1_kernel=" + std::to_string(stored.level1_kernel) +
        " time_offset=" + std::to_string(stored.time_offset) +
        ", model has search_range=" + std::to_string(mine.search_range) +
        " level1_kernel=" + std::to_string(mine.level1_kernel) +
        " time_offset=" + std::to_string(mine.time_offset));
  }
  torch::NoGradGuard no_grad;
  auto params = net.named_parameters();
  std::set<std::string> seen;
  for (const auto& [name, tensor] : archive.tensors) {
    if (name.rfind("adam.", 0) == 0) continue;
    torch::Tensor* dst = params.find(name);
    if (!dst) throw CheckpointError("checkpoint has unexpected parameter " + name);
    if (dst->sizes() != tensor.sizes()) {
      throw CheckpointError("shape mismatch for parameter " + name);
    }
    dst->copy_(tensor);
    seen.insert(name);
  }
  for (const auto& p : params) {
    if (!seen.count(p.key())) throw CheckpointError("checkpoint lacks parameter " + p.key());
  }
}

void save_model(const std::filesystem::path& path, model::SunetImpl& net) {
  write_archive(path, model_archive(net));
}

model::Sunet load_model(const std::filesystem::path& path) {
  const TensorArchive a = read_archive(path);
  model::ModelConfig config;
  try {
    config = model::ModelConfig::from_metadata(a.meta);
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  model::Sunet net(config);
  load_model_parameters(*net, a);
  return net;
}

}  // namespace sunet::ckpt
