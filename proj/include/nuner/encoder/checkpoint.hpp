#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nuner/encoder/config.hpp"
#include "nuner/encoder/model.hpp"
#include "nuner/encoder/vocab.hpp"

namespace nuner::enc {

inline constexpr char kCheckpointMagic[] = "NUNERCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

/// Values are held as doubles in memory; float32 tensors round-trip exactly.
struct TensorRecord {
  std::string name;
  DType dtype = DType::kFloat32;
  num::Shape shape;
  std::vector<double> data;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct TrainingMetadata {
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  /// Hex SHA-256 of the loss history; empty when untrained.
  std::string loss_history_digest;
  /// Free-form origin label, e.g. "init", "mlm", "pretrain".
  std::string stage = "init";

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  EncoderConfig config;
  Vocab vocab;
  std::string prefix;
  std::vector<TensorRecord> tensors;
  TrainingMetadata metadata;

  std::size_t parameter_count() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename Real>
Checkpoint make_checkpoint(const TransformerEncoder<Real>& encoder, TrainingMetadata metadata = {});

/// Rebuilds an encoder. Tensors are matched by name after the prefix, so a
/// text checkpoint may initialize a concept encoder. Frozen flags are not
/// stored; every parameter comes back trainable.
template <typename Real>
TransformerEncoder<Real> encoder_from_checkpoint(const Checkpoint& checkpoint,
                                                 const std::string& prefix = "");

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 over the little-endian bytes of the values.
std::string loss_history_digest(std::span<const double> losses);

/// Hex SHA-256 of the serialized checkpoint.
std::string checkpoint_digest(const Checkpoint& checkpoint);

}  // namespace nuner::enc
