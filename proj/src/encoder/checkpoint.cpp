#include "nuner/encoder/checkpoint.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace nuner::enc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLength = sizeof(kCheckpointMagic) - 1;
// Guards against allocating absurd sizes from a corrupted header.
constexpr std::uint64_t kMaxJsonBytes = 1ull << 31;
constexpr std::uint64_t kMaxElements = 1ull << 34;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  return value;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

std::string hex(const unsigned char* bytes, std::size_t n) {
  std::ostringstream os;
  for (std::size_t i = 0; i < n; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(bytes[i]);
  }
  return os.str();
}

}  // namespace

std::size_t Checkpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

template <typename Real>
Checkpoint make_checkpoint(const TransformerEncoder<Real>& encoder, TrainingMetadata metadata) {
  Checkpoint c;
  c.config = encoder.config();
  c.vocab = encoder.vocab();
  c.prefix = encoder.prefix();
  c.metadata = std::move(metadata);
  const DType dtype = sizeof(Real) == 4 ? DType::kFloat32 : DType::kFloat64;
  for (const Parameter<Real>* p : encoder.parameters()) {
    TensorRecord r;
    r.name = p->name;
    r.dtype = dtype;
    r.shape = p->value.shape();
    r.data.assign(p->value.storage().begin(), p->value.storage().end());
    c.tensors.push_back(std::move(r));
  }
  return c;
}

template <typename Real>
TransformerEncoder<Real> encoder_from_checkpoint(const Checkpoint& checkpoint, const std::string& prefix) {
  const std::string target = prefix.empty() ? checkpoint.prefix : prefix;
  TransformerEncoder<Real> encoder(checkpoint.config, checkpoint.vocab, target, 0);
  auto params = encoder.parameters();
  if (params.size() != checkpoint.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(checkpoint.tensors.size()) +
                          " tensors, architecture expects " + std::to_string(params.size()));
  }
  for (Parameter<Real>* p : params) {
    const std::string local = p->name.substr(target.size());
    auto it = std::find_if(checkpoint.tensors.begin(), checkpoint.tensors.end(), [&](const TensorRecord& r) {
      return r.name.size() == checkpoint.prefix.size() + local.size() &&
             r.name.compare(checkpoint.prefix.size(), std::string::npos, local) == 0;
    });
    if (it == checkpoint.tensors.end()) throw CheckpointError("checkpoint is missing tensor " + p->name);
    if (it->shape != p->value.shape()) {
      throw CheckpointError("checkpoint tensor " + it->name + " has shape " + num::shape_str(it->shape) +
                            ", expected " + num::shape_str(p->value.shape()));
    }
    std::transform(it->data.begin(), it->data.end(), p->value.storage().begin(),
                   [](double v) { return static_cast<Real>(v); });
  }
  return encoder;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  nlohmann::json header = {
      {"config", config_to_json(c.config)},
      {"vocab", c.vocab.tokens()},
      {"prefix", c.prefix},
      {"metadata",
       {{"step", c.metadata.step},
        {"seed", c.metadata.seed},
        {"loss_history_digest", c.metadata.loss_history_digest},
        {"stage", c.metadata.stage}}},
  };
  const std::string json = header.dump();
  out.write(kCheckpointMagic, kMagicLength);
  put<std::uint32_t>(out, c.format_version);
  put<std::uint64_t>(out, json.size());
  out.write(json.data(), static_cast<std::streamsize>(json.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const TensorRecord& t : c.tensors) {
    if (t.data.size() != num::shape_numel(t.shape)) {
      throw CheckpointError("tensor " + t.name + " data does not match its shape");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t dim : t.shape) put<std::uint64_t>(out, dim);
    for (double v : t.data) {
      if (t.dtype == DType::kFloat32) put<float>(out, static_cast<float>(v));
      else put<double>(out, v);
    }
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  const std::string magic = get_bytes(in, kMagicLength, "magic bytes");
  if (magic != std::string(kCheckpointMagic, kMagicLength)) {
    throw CheckpointError("not a checkpoint: bad magic bytes");
  }
  Checkpoint c;
  c.format_version = get<std::uint32_t>(in, "format version");
  if (c.format_version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(c.format_version));
  }
  const auto json_size = get<std::uint64_t>(in, "header length");
  if (json_size > kMaxJsonBytes) throw CheckpointError("checkpoint header length is implausible");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(get_bytes(in, json_size, "header"));
    c.config = config_from_json(header.at("config"));
    c.vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
    c.prefix = header.at("prefix").get<std::string>();
    const auto& m = header.at("metadata");
    c.metadata.step = m.at("step").get<std::int64_t>();
    c.metadata.seed = m.at("seed").get<std::uint64_t>();
    c.metadata.loss_history_digest = m.at("loss_history_digest").get<std::string>();
    c.metadata.stage = m.at("stage").get<std::string>();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("invalid checkpoint header: ") + e.what());
  }
  const auto count = get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto name_len = get<std::uint32_t>(in, "tensor name length");
    t.name = get_bytes(in, name_len, "tensor name");
    const auto dtype = get<std::uint8_t>(in, "tensor dtype");
    if (dtype > 1) throw CheckpointError("tensor " + t.name + " has unknown dtype");
    t.dtype = static_cast<DType>(dtype);
    const auto ndim = get<std::uint32_t>(in, "tensor rank");
    if (ndim > 8) throw CheckpointError("tensor " + t.name + " has implausible rank");
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = get<std::uint64_t>(in, "tensor shape");
      t.shape.push_back(dim);
      numel *= dim;
      if (numel > kMaxElements) throw CheckpointError("tensor " + t.name + " is implausibly large");
    }
    t.data.resize(numel);
    for (double& v : t.data) {
      v = t.dtype == DType::kFloat32 ? static_cast<double>(get<float>(in, "tensor data"))
                                     : get<double>(in, "tensor data");
    }
    c.tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after the last tensor");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

std::string loss_history_digest(std::span<const double> losses) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(losses.data(), losses.size_bytes(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return hex(digest, length);
}

std::string checkpoint_digest(const Checkpoint& checkpoint) {
  std::ostringstream out;
  write_checkpoint(out, checkpoint);
  const std::string bytes = out.str();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  return hex(digest, length);
}

template Checkpoint make_checkpoint(const TransformerEncoder<float>&, TrainingMetadata);
template Checkpoint make_checkpoint(const TransformerEncoder<double>&, TrainingMetadata);
template TransformerEncoder<float> encoder_from_checkpoint(const Checkpoint&, const std::string&);
template TransformerEncoder<double> encoder_from_checkpoint(const Checkpoint&, const std::string&);

}  // namespace nuner::enc
