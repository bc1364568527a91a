#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bgru/bitkernel.hpp"
#include "bgru/gru.hpp"
#include "bgru/quantizer.hpp"

namespace bgru {

inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class ModelMode : std::uint8_t { Real = 0, Compressed = 1, Packed = 2 };

std::string to_string(ModelMode mode);

/// In-memory model file. Modes 0/1 carry `net`; mode 2 carries `packed`.
struct ModelFile {
  ModelMode mode = ModelMode::Compressed;
  QadCodebook codebook;
  Network net;
  PackedNetwork packed;

  std::size_t input_dim() const;
  std::vector<std::size_t> units() const;
  std::size_t bins() const;
};

/// Little-endian byte image:
///   "BGRU" | u32 version | u8 mode | u32 L | u32 input_dim | u32 K x L | u32 F
///   | f64 levels x16 | f64 thresholds x15 | payload
/// Payload for modes 0/1: every matrix as row-major f64 in canonical order.
/// Payload for mode 2: per matrix f64 mu, then the sign plane and the nonzero
/// plane as u64 words, rows padded to a word boundary.
std::string serialize_model(const ModelFile& m);

/// Parses a byte image. Throws IoError on a bad magic, a size mismatch or
/// non-canonical padding bits.
ModelFile deserialize_model(const std::string& bytes);

/// Atomic write (temporary file, then rename).
void save_model(const std::filesystem::path& path, const ModelFile& m);
ModelFile load_model(const std::filesystem::path& path);

/// Expected file size in bytes for a mode and layer shape.
std::size_t model_file_size(ModelMode mode, std::size_t input_dim,
                            const std::vector<std::size_t>& units, std::size_t bins);

}  // namespace bgru
