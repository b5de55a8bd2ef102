#pragma once

// The full set of pre-trainable modules and their checkpoint format.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmssl/data.hpp"
#include "mmssl/encoders.hpp"
#include "mmssl/fusion.hpp"

namespace mmssl {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct ArchConfig {
  Index image_hidden = 64;
  Index enc_dim = 32;
  Index token_dim = 32;
  Index proj_hidden = 64;
  /// Common embedding space shared by both projection heads and fusion.
  Index embed_dim = 512;
  Index heads = 4;

  void validate() const;
  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct Model {
  Model(const DatasetDims& data, const ArchConfig& arch);

  /// Xavier weights and zero biases; every sub-module draws from its own
  /// stream derived from `seed`.
  void init(std::uint64_t seed);

  /// Freezes (or unfreezes) the two encoders.
  void freeze_encoders(bool frozen = true);
  bool encoders_frozen() const;

  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
  /// Encoder parameters only.
  void visit_encoders(const ConstParameterVisitor& f) const;

  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  /// Raw bytes of all encoder parameters, for freeze checks.
  std::vector<unsigned char> encoder_bytes() const;

  DatasetDims data;
  ArchConfig arch;
  std::string method = "random";
  ImageEncoder image;
  TextEncoder text;
  ProjectionHead image_head;
  ProjectionHead text_head;
  CoAttentionBlock coattention;
};

/// Binary checkpoint:
///   magic "MMSSLCKP", u32 version, length-prefixed method tag,
///   i64 dims (H, W, C, V, L, classes) and arch fields,
///   u64 parameter count, then per parameter: name, rank, i64 extents,
///   raw little-endian doubles; finally a u64 FNV-1a checksum of all
///   preceding bytes.
void write_checkpoint(std::ostream& out, const Model& model);
Model read_checkpoint(std::istream& in);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mmssl
