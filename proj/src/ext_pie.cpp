#include "mmssl/ext_pie.hpp"

#include "mmssl/rng.hpp"

namespace mmssl {

ViewBatches augment_batch(std::span<const PairedSample* const> samples, const AugmentPolicy& policy,
                          std::uint64_t seed) {
  if (samples.empty()) throw DimensionError("augment_batch: empty batch");
  const Index flat = samples.front()->image.size();
  Matrix v1(static_cast<Index>(samples.size()), flat);
  Matrix v2(static_cast<Index>(samples.size()), flat);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto id = static_cast<std::uint64_t>(samples[b]->id);
    const Tensor a = augment_image(samples[b]->image, policy, derive_seed(seed, "view", {id, 0}));
    const Tensor c = augment_image(samples[b]->image, policy, derive_seed(seed, "view", {id, 1}));
    v1.row(static_cast<Index>(b)) = Eigen::Map<const Eigen::RowVectorXd>(a.data().data(), flat);
    v2.row(static_cast<Index>(b)) = Eigen::Map<const Eigen::RowVectorXd>(c.data().data(), flat);
  }
  return {Tensor::from_matrix(std::move(v1)), Tensor::from_matrix(std::move(v2))};
}

std::vector<std::vector<Token>> token_batch(std::span<const PairedSample* const> samples) {
  std::vector<std::vector<Token>> out;
  out.reserve(samples.size());
  for (const auto* s : samples) out.push_back(s->tokens);
  return out;
}

ExtPieBanks ext_pie_embed(const Model& model, Binder& bind, const Var& view1, const Var& view2,
                          std::span<const std::vector<Token>> tokens) {
  Var p1 = model.image_head(bind, model.image(bind, view1));
  Var p2 = model.image_head(bind, model.image(bind, view2));
  Var t = model.text_head(bind, model.text(bind, tokens));
  Var pooled = fuse_views(p1, p2);
  ExtPieBanks banks;
  banks.f1 = l2_normalize(model.coattention(bind, t, p1));
  banks.f2 = l2_normalize(model.coattention(bind, t, p2));
  banks.f = l2_normalize(model.coattention(bind, t, pooled));
  banks.i = l2_normalize(pooled);
  banks.t = l2_normalize(t);
  return banks;
}

ExtPieBanks ext_pie_forward(const Model& model, Binder& bind, std::span<const PairedSample* const> samples,
                            const AugmentPolicy& policy, std::uint64_t seed) {
  auto views = augment_batch(samples, policy, seed);
  auto& g = bind.graph();
  Var v1 = g.constant(std::move(views.view1));
  Var v2 = g.constant(std::move(views.view2));
  const auto tokens = token_batch(samples);
  return ext_pie_embed(model, bind, v1, v2, tokens);
}

}  // namespace mmssl
