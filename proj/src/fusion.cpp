#include "mmssl/fusion.hpp"

#include <cmath>

namespace mmssl {

CoAttentionBlock::CoAttentionBlock(Index dim, Index heads)
    : text_query{Tensor::zeros({dim, dim})},
      image_key{Tensor::zeros({dim, dim})},
      image_value{Tensor::zeros({dim, dim})},
      image_query{Tensor::zeros({dim, dim})},
      text_key{Tensor::zeros({dim, dim})},
      text_value{Tensor::zeros({dim, dim})},
      merge(2 * dim, dim),
      dim_(dim),
      heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("co-attention: dimension " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

Var CoAttentionBlock::direction(Binder& bind, const Var& queries, const Var& keys, const Parameter& wq,
                                const Parameter& wk, const Parameter& wv, Index batch,
                                std::vector<Var>& weights) const {
  const Index lq = queries.rows() / batch;
  const Index lk = keys.rows() / batch;
  if (lq == 1 && lk == 1) {
    // One same-sample key per query: every weight is exactly 1, so the query
    // and key maps have no effect and are skipped.
    Var v = matmul(keys, bind(wv));
    for (Index h = 0; h < heads_; ++h) {
      weights.push_back(bind.graph().constant(Tensor::from_matrix(Matrix::Identity(batch, batch))));
    }
    return v;
  }
  Var q = matmul(queries, bind(wq));
  Var k = matmul(keys, bind(wk));
  Var v = matmul(keys, bind(wv));

  Mask same_sample(queries.rows(), keys.rows());
  for (Index r = 0; r < queries.rows(); ++r) {
    for (Index c = 0; c < keys.rows(); ++c) same_sample(r, c) = (r / lq) == (c / lk);
  }

  const Index dh = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var out;
  for (Index h = 0; h < heads_; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var w = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), same_sample);
    weights.push_back(w);
    Var oh = matmul(w, vh);
    out = h == 0 ? oh : concat_cols(out, oh);
  }
  if (lq == 1) return out;
  Matrix pool = Matrix::Zero(batch, queries.rows());
  for (Index r = 0; r < queries.rows(); ++r) pool(r / lq, r) = 1.0 / static_cast<double>(lq);
  return matmul(bind.graph().constant(Tensor::from_matrix(std::move(pool))), out);
}

CoAttentionBlock::Output CoAttentionBlock::attend(Binder& bind, const Var& text, const Var& image, Index batch) const {
  if (text.rank() != 2 || image.rank() != 2 || text.cols() != dim_ || image.cols() != dim_) {
    throw DimensionError("co-attention: inputs must be [n x " + std::to_string(dim_) + "], got " +
                         shape_string(text.shape()) + " and " + shape_string(image.shape()));
  }
  if (batch <= 0 || text.rows() % batch != 0 || image.rows() % batch != 0) {
    throw DimensionError("co-attention: row counts are not a multiple of the batch size");
  }
  Output out;
  Var t2i = direction(bind, text, image, text_query, image_key, image_value, batch, out.text_to_image_weights);
  Var i2t = direction(bind, image, text, image_query, text_key, text_value, batch, out.image_to_text_weights);
  out.fused = merge(bind, concat_cols(t2i, i2t));
  return out;
}

Var CoAttentionBlock::operator()(Binder& bind, const Var& text, const Var& image) const {
  if (text.rank() != 2 || text.rows() != image.rows()) {
    throw DimensionError("co-attention: text and image batches differ");
  }
  return attend(bind, text, image, text.rows()).fused;
}

void CoAttentionBlock::init(std::uint64_t seed) {
  const std::pair<const char*, Parameter*> maps[] = {
      {"text_query", &text_query}, {"image_key", &image_key}, {"image_value", &image_value},
      {"image_query", &image_query}, {"text_key", &text_key}, {"text_value", &text_value},
  };
  for (auto& [name, p] : maps) {
    auto rng = make_rng(seed, std::string("coattention.") + name);
    xavier_uniform(p->value, dim_, dim_, rng);
  }
  auto rng = make_rng(seed, "coattention.merge");
  merge.init(rng);
}

void CoAttentionBlock::set_frozen(bool frozen) {
  visit("", ParameterVisitor([frozen](const std::string&, Parameter& p) { p.frozen = frozen; }));
}

void CoAttentionBlock::visit(const std::string& prefix, const ParameterVisitor& f) {
  f(prefix + "text_query", text_query);
  f(prefix + "image_key", image_key);
  f(prefix + "image_value", image_value);
  f(prefix + "image_query", image_query);
  f(prefix + "text_key", text_key);
  f(prefix + "text_value", text_value);
  merge.visit(prefix + "merge", f);
}

void CoAttentionBlock::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  f(prefix + "text_query", text_query);
  f(prefix + "image_key", image_key);
  f(prefix + "image_value", image_value);
  f(prefix + "image_query", image_query);
  f(prefix + "text_key", text_key);
  f(prefix + "text_value", text_value);
  merge.visit(prefix + "merge", f);
}

Var coattend(const CoAttentionBlock& block, Binder& bind, const Var& text_rep, const Var& image_rep) {
  if (text_rep.shape() != Shape{block.dim()} || image_rep.shape() != Shape{block.dim()}) {
    throw DimensionError("coattend: expected two [" + std::to_string(block.dim()) + "] vectors, got " +
                         shape_string(text_rep.shape()) + " and " + shape_string(image_rep.shape()));
  }
  Var t = reshape(text_rep, {1, block.dim()});
  Var i = reshape(image_rep, {1, block.dim()});
  return reshape(block(bind, t, i), {block.dim()});
}

Var fuse_views(const Var& view1, const Var& view2) { return maximum(view1, view2); }

}  // namespace mmssl
