#pragma once

// Contrastive, ranking and classification objectives.
//
// Every loss takes embedding banks as graph variables and compares rows with
// cosine similarity, so banks may be passed raw or already unit-normalized.
// Batch aggregation is always a mean over anchors.

#include <cmath>
#include <string>
#include <vector>

#include "mmssl/autodiff.hpp"
#include "mmssl/errors.hpp"

namespace mmssl {

enum class NegativeMode {
  sum,      ///< every in-batch negative contributes (VSE)
  hardest,  ///< only the most violating negative contributes (VSE++)
};

struct LossConfig {
  double temperature = 0.1;
  double margin = 0.2;
  /// Weight of the image-to-text direction in mm_infonce.
  double lambda = 0.5;
  double lambda_u2v = 0.5;
  double lambda_v2u = 0.5;
  double lambda_f2f = 0.6;
  double lambda_f2i = 0.2;
  double lambda_f2t = 0.2;
  NegativeMode negative_mode = NegativeMode::sum;

  void validate() const {
    if (!(temperature > 0)) throw ConfigError("temperature must be positive");
    if (!(margin >= 0)) throw ConfigError("margin must be non-negative");
    if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must lie in [0, 1]");
    if (!(lambda_u2v >= 0 && lambda_v2u >= 0)) throw ConfigError("hinge direction weights must be non-negative");
    if (!(lambda_f2f >= 0 && lambda_f2i >= 0 && lambda_f2t >= 0)) {
      throw ConfigError("ext-pie weights must be non-negative");
    }
    if (!(lambda_f2f + lambda_f2i + lambda_f2t > 0)) throw ConfigError("ext-pie weights must not all be zero");
  }
};

namespace detail {

inline Mask off_diagonal(Index n) {
  Mask keep = Mask::Constant(n, n, true);
  keep.matrix().diagonal().setConstant(false);
  return keep;
}

template <typename Scalar>
void require_bank_pair(const BasicVar<Scalar>& u, const BasicVar<Scalar>& v, const char* op) {
  require_rank2(u, op);
  require_rank2(v, op);
  if (u.rows() != v.rows() || u.cols() != v.cols()) {
    throw DimensionError(std::string(op) + ": banks differ in shape " + shape_string(u.shape()) + " vs " +
                         shape_string(v.shape()));
  }
}

}  // namespace detail

/// Stacks two views so that rows (i, i + N) are the positive pair of sample i.
template <typename Scalar>
BasicVar<Scalar> stack_views(const BasicVar<Scalar>& view1, const BasicVar<Scalar>& view2) {
  detail::require_bank_pair(view1, view2, "stack_views");
  return concat_rows(view1, view2);
}

/// NT-Xent over a [2N x d] bank whose rows i and i + N are two views of one
/// sample. Each row is an anchor against its partner with the other 2N - 2
/// rows as negatives; the result is the mean over all 2N anchors, which equals
/// the mean over pairs of (l(i,j) + l(j,i)) / 2.
template <typename Scalar>
BasicVar<Scalar> nt_xent(const BasicVar<Scalar>& bank, Scalar temperature) {
  detail::require_rank2(bank, "nt_xent");
  if (!(temperature > 0)) throw ConfigError("nt_xent: temperature must be positive");
  if (bank.rows() % 2 != 0) {
    throw PairingError("nt_xent: bank has " + std::to_string(bank.rows()) + " rows; views must come in pairs");
  }
  const Index n2 = bank.rows();
  const Index n = n2 / 2;
  auto logits = scale(cosine_sim_matrix(bank, bank), Scalar(1) / temperature);
  std::vector<Index> partner(static_cast<std::size_t>(n2));
  for (Index i = 0; i < n2; ++i) partner[static_cast<std::size_t>(i)] = (i + n) % n2;
  auto positive = pick(logits, std::move(partner));
  auto denom = logsumexp_rows(logits, detail::off_diagonal(n2));
  return mean(sub(denom, positive));
}

/// Multi-modal weighted hinge between paired banks u and v.
///
/// For anchor pair (u_i, v_i) with similarity s_ii:
///   lambda_u2v * agg_k relu(margin - s_ii + s(u_k, v_i))
/// + lambda_v2u * agg_k relu(margin - s_ii + s(u_i, v_k)),   k != i
/// where agg is a sum (NegativeMode::sum) or a max (NegativeMode::hardest).
template <typename Scalar>
BasicVar<Scalar> weighted_hinge(const BasicVar<Scalar>& u, const BasicVar<Scalar>& v, const LossConfig& cfg) {
  detail::require_bank_pair(u, v, "weighted_hinge");
  const Index n = u.rows();
  if (n < 2) throw NoNegativesError("weighted_hinge: at least two pairs are needed for in-batch negatives");
  if (!(cfg.margin >= 0)) throw ConfigError("weighted_hinge: margin must be non-negative");

  auto& g = u.graph();
  auto sim = cosine_sim_matrix(u, v);  // sim(i, k) = s(u_i, v_k)
  auto pos = broadcast_cols(diagonal(sim), n);
  const Scalar alpha = static_cast<Scalar>(cfg.margin);

  MatrixX<Scalar> off = MatrixX<Scalar>::Ones(n, n);
  off.diagonal().setZero();
  auto keep = g.constant(BasicTensor<Scalar>::from_matrix(std::move(off)));

  // Row i of each matrix lists the violations for anchor i.
  auto u2v = mul(relu(shift(sub(transpose(sim), pos), alpha)), keep);
  auto v2u = mul(relu(shift(sub(sim, pos), alpha)), keep);

  const Reduce agg = cfg.negative_mode == NegativeMode::sum ? Reduce::sum : Reduce::max;
  auto per_anchor = add(scale(reduce(u2v, agg, 1), static_cast<Scalar>(cfg.lambda_u2v)),
                        scale(reduce(v2u, agg, 1), static_cast<Scalar>(cfg.lambda_v2u)));
  return mean(per_anchor);
}

/// Bidirectional image/text InfoNCE:
///   (1/N) sum_i [ lambda * l_i(u->v) + (1 - lambda) * l_i(v->u) ]
/// with l_i(u->v) = -log softmax_k(<u_i, v_k> / tau)[i].
template <typename Scalar>
BasicVar<Scalar> mm_infonce(const BasicVar<Scalar>& u, const BasicVar<Scalar>& v, Scalar temperature, Scalar lambda) {
  detail::require_bank_pair(u, v, "mm_infonce");
  if (!(temperature > 0)) throw ConfigError("mm_infonce: temperature must be positive");
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("mm_infonce: lambda must lie in [0, 1]");
  auto logits = scale(cosine_sim_matrix(u, v), Scalar(1) / temperature);
  auto pos = diagonal(logits);
  auto u2v = sub(logsumexp_rows(logits), pos);
  auto v2u = sub(logsumexp_rows(transpose(logits)), pos);
  return mean(add(scale(u2v, lambda), scale(v2u, Scalar(1) - lambda)));
}

/// MM-SimCLR objective: image/text InfoNCE plus NT-Xent over the image views.
template <typename Scalar>
BasicVar<Scalar> mm_simclr_loss(const BasicVar<Scalar>& image_views, const BasicVar<Scalar>& u,
                                const BasicVar<Scalar>& v, const LossConfig& cfg) {
  detail::require_rank2(image_views, "mm_simclr_loss");
  detail::require_rank2(u, "mm_simclr_loss");
  if (image_views.rows() != 2 * u.rows()) {
    throw DimensionError("mm_simclr_loss: image view bank must hold two views per text/image pair");
  }
  const auto tau = static_cast<Scalar>(cfg.temperature);
  return add(mm_infonce(u, v, tau, static_cast<Scalar>(cfg.lambda)), nt_xent(image_views, tau));
}

/// Ext-PIE-Net objective over the five banks produced by the fusion forward
/// pass: NT-Xent between the two co-attended views plus hinge terms tying the
/// image and text embeddings to the fused embedding.
template <typename Scalar>
BasicVar<Scalar> ext_pie_loss(const BasicVar<Scalar>& f1, const BasicVar<Scalar>& f2, const BasicVar<Scalar>& f,
                              const BasicVar<Scalar>& i, const BasicVar<Scalar>& t, const LossConfig& cfg) {
  detail::require_bank_pair(f1, f2, "ext_pie_loss");
  detail::require_bank_pair(f1, f, "ext_pie_loss");
  detail::require_bank_pair(f1, i, "ext_pie_loss");
  detail::require_bank_pair(f1, t, "ext_pie_loss");
  cfg.validate();
  auto& g = f1.graph();
  auto total = g.constant(BasicTensor<Scalar>::scalar(Scalar(0)));
  if (cfg.lambda_f2f > 0) {
    total = add(total, scale(nt_xent(stack_views(f1, f2), static_cast<Scalar>(cfg.temperature)),
                             static_cast<Scalar>(cfg.lambda_f2f)));
  }
  // A single sample has no in-batch negatives: the hinge sums are empty and
  // contribute 0 here, whereas weighted_hinge on its own rejects N < 2.
  if (f1.rows() < 2) return total;
  if (cfg.lambda_f2i > 0) total = add(total, scale(weighted_hinge(i, f, cfg), static_cast<Scalar>(cfg.lambda_f2i)));
  if (cfg.lambda_f2t > 0) total = add(total, scale(weighted_hinge(t, f, cfg), static_cast<Scalar>(cfg.lambda_f2t)));
  return total;
}

/// Mean negative log-softmax probability of the true class.
template <typename Scalar>
BasicVar<Scalar> cross_entropy(const BasicVar<Scalar>& logits, const std::vector<Index>& labels) {
  detail::require_rank2(logits, "cross_entropy");
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw DimensionError("cross_entropy: one label per logit row required");
  }
  for (Index y : labels) {
    if (y < 0 || y >= logits.cols()) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(logits.cols()) + ")");
    }
  }
  return mean(sub(logsumexp_rows(logits), pick(logits, labels)));
}

}  // namespace mmssl
