#pragma once

// Ext-PIE-Net forward pass: two augmented image views and the text are
// projected to the common space and fused by co-attention.

#include <cstdint>
#include <span>
#include <vector>

#include "mmssl/augment.hpp"
#include "mmssl/data.hpp"
#include "mmssl/model.hpp"

namespace mmssl {

/// Unit-normalized banks, each [B x d].
struct ExtPieBanks {
  Var f1;  ///< coattend(text, view 1)
  Var f2;  ///< coattend(text, view 2)
  Var f;   ///< coattend(text, max-pooled views)
  Var i;   ///< max-pooled projected views
  Var t;   ///< projected text
};

/// Two independently augmented copies of every grid, as [B x H*W*C] batches.
/// View v of sample s uses draw derive_seed(seed, "view", {s.id, v}).
struct ViewBatches {
  Tensor view1;
  Tensor view2;
};
ViewBatches augment_batch(std::span<const PairedSample* const> samples, const AugmentPolicy& policy,
                          std::uint64_t seed);

std::vector<std::vector<Token>> token_batch(std::span<const PairedSample* const> samples);

/// Banks from already-augmented view batches.
ExtPieBanks ext_pie_embed(const Model& model, Binder& bind, const Var& view1, const Var& view2,
                          std::span<const std::vector<Token>> tokens);

ExtPieBanks ext_pie_forward(const Model& model, Binder& bind, std::span<const PairedSample* const> samples,
                            const AugmentPolicy& policy, std::uint64_t seed);

}  // namespace mmssl
