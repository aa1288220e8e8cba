#include "a4net/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "a4net/errors.hpp"

namespace a4net {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', '4', 'N', 'E', 'T', 'C', 'K', '\0'};
constexpr size_t kHeaderSize = 8 + 4 + 4 + 8;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    out_.append(raw, sizeof(T));
  }
  void put_bytes(const void* data, size_t n) { out_.append(static_cast<const char*>(data), n); }
  void put_string(const std::string& s) {
    put<uint64_t>(s.size());
    out_.append(s);
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, size_t pos) : bytes_(bytes), pos_(pos) {}
  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const char* take(size_t n) {
    if (n > bytes_.size() - pos_) throw IntegrityError("checkpoint truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string() {
    const auto n = get<uint64_t>();
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  size_t pos_;
};

uint8_t dtype_tag(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw DomainError(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType tag_dtype(uint8_t tag) {
  switch (tag) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw IntegrityError("checkpoint: unknown dtype tag " + std::to_string(tag));
  }
}

uint32_t crc32_of(const char* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t done = 0;
  while (done < n) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(n - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + done), chunk);
    done += chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer payload;
  payload.put_string(ckpt.config.dump());
  payload.put<int64_t>(ckpt.epoch);
  payload.put_string(ckpt.rng_state);
  payload.put<uint64_t>(ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    const auto t = tensor.detach().contiguous().cpu();
    payload.put<uint32_t>(static_cast<uint32_t>(name.size()));
    payload.put_bytes(name.data(), name.size());
    payload.put<uint8_t>(dtype_tag(t.scalar_type()));
    payload.put<uint32_t>(static_cast<uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) payload.put<int64_t>(d);
    payload.put_bytes(t.data_ptr(), t.nbytes());
  }

  Writer out;
  out.put_bytes(kMagic, sizeof(kMagic));
  out.put<uint32_t>(ckpt.format_version);
  out.put<uint32_t>(crc32_of(payload.str().data(), payload.str().size()));
  out.put<uint64_t>(payload.str().size());
  out.str() += payload.str();
  return std::move(out.str());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("not a checkpoint file (bad magic)");
  }
  Reader header(bytes, sizeof(kMagic));
  Checkpoint ckpt;
  ckpt.format_version = header.get<uint32_t>();
  if (ckpt.format_version != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + std::to_string(ckpt.format_version) +
                       " is incompatible with this build (expects " + std::to_string(kCheckpointVersion) + ")");
  }
  const auto crc = header.get<uint32_t>();
  const auto size = header.get<uint64_t>();
  if (size != bytes.size() - kHeaderSize) throw IntegrityError("checkpoint size does not match its header");
  if (crc32_of(bytes.data() + kHeaderSize, size) != crc) throw IntegrityError("checkpoint checksum mismatch");

  Reader in(bytes, kHeaderSize);
  try {
    ckpt.config = nlohmann::json::parse(in.get_string());
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint config is not valid text: ") + e.what());
  }
  ckpt.epoch = in.get<int64_t>();
  ckpt.rng_state = in.get_string();
  const auto count = in.get<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<uint32_t>();
    std::string name(in.take(name_len), name_len);
    const auto dtype = tag_dtype(in.get<uint8_t>());
    const auto rank = in.get<uint32_t>();
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) {
      d = in.get<int64_t>();
      if (d < 0) throw IntegrityError("checkpoint block " + name + " has a negative dimension");
    }
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    std::memcpy(t.data_ptr(), in.take(t.nbytes()), t.nbytes());
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  if (!in.done()) throw IntegrityError("checkpoint has trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str());
}

std::map<std::string, torch::Tensor> parameter_blocks(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters()) out.emplace("param/" + p.key(), p.value().detach().clone());
  return out;
}

void restore_parameters(torch::nn::Module& module, const Checkpoint& ckpt) {
  const auto params = module.named_parameters();
  size_t stored = 0;
  for (const auto& [name, _] : ckpt.tensors) stored += name.rfind("param/", 0) == 0 ? 1 : 0;
  if (stored != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(stored) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  torch::NoGradGuard no_grad;
  for (const auto& p : params) {
    auto it = ckpt.tensors.find("param/" + p.key());
    if (it == ckpt.tensors.end()) throw ConfigError("checkpoint lacks parameter " + p.key());
    if (it->second.sizes() != p.value().sizes() || it->second.scalar_type() != p.value().scalar_type()) {
      throw ConfigError("checkpoint parameter " + p.key() + " has a different shape or dtype");
    }
    p.value().copy_(it->second);
  }
}

std::map<std::string, torch::Tensor> optimizer_blocks(const torch::nn::Module& module,
                                                      torch::optim::AdamW& optimizer) {
  std::map<std::string, torch::Tensor> out;
  auto& state = optimizer.state();
  for (const auto& p : module.named_parameters()) {
    auto it = state.find(p.value().unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamWParamState&>(*it->second);
    const auto prefix = "optim/" + p.key() + "/";
    out.emplace(prefix + "exp_avg", s.exp_avg().clone());
    out.emplace(prefix + "exp_avg_sq", s.exp_avg_sq().clone());
    out.emplace(prefix + "step", torch::tensor(s.step(), torch::kInt64));
  }
  return out;
}

void restore_optimizer(const torch::nn::Module& module, torch::optim::AdamW& optimizer, const Checkpoint& ckpt) {
  auto& state = optimizer.state();
  state.clear();
  for (const auto& p : module.named_parameters()) {
    const auto prefix = "optim/" + p.key() + "/";
    auto avg = ckpt.tensors.find(prefix + "exp_avg");
    if (avg == ckpt.tensors.end()) continue;
    auto sq = ckpt.tensors.find(prefix + "exp_avg_sq");
    auto step = ckpt.tensors.find(prefix + "step");
    if (sq == ckpt.tensors.end() || step == ckpt.tensors.end()) {
      throw IntegrityError("checkpoint optimizer state for " + p.key() + " is incomplete");
    }
    auto s = std::make_unique<torch::optim::AdamWParamState>();
    s->exp_avg(avg->second.clone());
    s->exp_avg_sq(sq->second.clone());
    s->step(step->second.item<int64_t>());
    state[p.value().unsafeGetTensorImpl()] = std::move(s);
  }
}

}  // namespace a4net
