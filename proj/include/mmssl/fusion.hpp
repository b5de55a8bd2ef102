#pragma once

// Cross-modal fusion: multi-headed co-attention and max-pool view fusion.

#include <cstdint>
#include <string>
#include <vector>

#include "mmssl/autodiff.hpp"
#include "mmssl/layers.hpp"

namespace mmssl {

/// Symmetric multi-headed cross-attention between a text and an image stream.
///
/// Text queries attend over image keys/values and image queries attend over
/// text keys/values. Each direction's per-sample output is mean-pooled over its
/// query positions; the two results are concatenated as
/// [text-attends-image ; image-attends-text] and merged back to [d] by an
/// affine layer.
///
/// Inputs are stacked per sample: a batch of B samples with text length Lt is
/// a [B*Lt x d] matrix whose rows b*Lt .. b*Lt+Lt-1 belong to sample b.
/// Attention never crosses samples. With Lt = Li = 1 each softmax has a single
/// key and the block reduces to a learned mixing of the value maps.
class CoAttentionBlock {
 public:
  struct Output {
    Var fused;                               ///< [B x d]
    std::vector<Var> text_to_image_weights;  ///< per head, [B*Lt x B*Li]
    std::vector<Var> image_to_text_weights;  ///< per head, [B*Li x B*Lt]
  };

  CoAttentionBlock() = default;
  CoAttentionBlock(Index dim, Index heads);

  Output attend(Binder& bind, const Var& text, const Var& image, Index batch) const;

  /// Length-1 sequences: text and image are both [B x d].
  Var operator()(Binder& bind, const Var& text, const Var& image) const;

  void init(std::uint64_t seed);
  void set_frozen(bool frozen);
  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;

  Index dim() const noexcept { return dim_; }
  Index heads() const noexcept { return heads_; }

  // [d x d] maps, right-multiplied: q = x * W.
  Parameter text_query;
  Parameter image_key;
  Parameter image_value;
  Parameter image_query;
  Parameter text_key;
  Parameter text_value;
  Linear merge;

 private:
  Var direction(Binder& bind, const Var& queries, const Var& keys, const Parameter& wq, const Parameter& wk,
                const Parameter& wv, Index batch, std::vector<Var>& weights) const;

  Index dim_ = 0;
  Index heads_ = 1;
};

/// Co-attention of one text vector [d] with one image vector [d] -> [d].
Var coattend(const CoAttentionBlock& block, Binder& bind, const Var& text_rep, const Var& image_rep);

/// Elementwise maximum of two views of equal shape.
Var fuse_views(const Var& view1, const Var& view2);

}  // namespace mmssl
