#pragma once

// Small trainable encoders that map each modality into a representation
// vector, plus the projection heads used only during pre-training.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmssl/autodiff.hpp"
#include "mmssl/layers.hpp"

namespace mmssl {

using Token = std::uint32_t;
inline constexpr Token kPadToken = 0;

struct GridDims {
  Index height = 8;
  Index width = 8;
  Index channels = 1;

  Index flat() const noexcept { return height * width * channels; }
  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Two-layer perceptron over a flattened feature grid.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(GridDims grid, Index hidden, Index out);

  /// [B x H*W*C] -> [B x out]
  Var operator()(Binder& bind, const Var& batch) const;

  void init(std::uint64_t seed);
  void set_frozen(bool frozen);
  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;

  const GridDims& grid() const noexcept { return grid_; }
  Index out_dim() const noexcept { return layer2_.out_features(); }

 private:
  GridDims grid_;
  Linear layer1_;
  Linear layer2_;
};

/// Token embedding table, mean-pooled over non-padding tokens, then one
/// affine layer.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(Index vocab, Index token_dim, Index out);

  /// One representation row per sequence.
  Var operator()(Binder& bind, std::span<const std::vector<Token>> sequences) const;

  void init(std::uint64_t seed);
  void set_frozen(bool frozen);
  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;

  Index vocab() const noexcept { return vocab_; }
  Index out_dim() const noexcept { return layer_.out_features(); }

  /// Row-stochastic [B x V] matrix whose product with the embedding table is
  /// the mean token embedding of each sequence.
  Matrix pooling_matrix(std::span<const std::vector<Token>> sequences) const;

 private:
  Index vocab_ = 0;
  Parameter embedding_;
  Linear layer_;
};

/// Linear -> ReLU -> Linear. Output is not normalized.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(Index in, Index hidden, Index out);

  Var operator()(Binder& bind, const Var& reps) const;

  void init(std::uint64_t seed);
  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;

  Index in_dim() const noexcept { return layer1_.in_features(); }
  Index out_dim() const noexcept { return layer2_.out_features(); }

 private:
  Linear layer1_;
  Linear layer2_;
};

/// Encodes one grid of shape [H x W x C] to a vector [d_enc].
Var encode_image(const ImageEncoder& enc, Binder& bind, const Var& grid);

/// Encodes one token sequence (0 = padding) to a vector [d_enc].
Var encode_text(const TextEncoder& enc, Binder& bind, std::span<const Token> tokens);

/// Projects one representation vector [d_enc] to [d].
Var project(const ProjectionHead& head, Binder& bind, const Var& rep);

/// Stacks grids into a [B x H*W*C] batch matrix.
Tensor stack_grids(std::span<const Tensor* const> grids);

}  // namespace mmssl
