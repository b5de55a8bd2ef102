#include "mmssl/encoders.hpp"

#include <string>

namespace mmssl {

ImageEncoder::ImageEncoder(GridDims grid, Index hidden, Index out)
    : grid_(grid), layer1_(grid.flat(), hidden), layer2_(hidden, out) {}

Var ImageEncoder::operator()(Binder& bind, const Var& batch) const {
  if (batch.rank() != 2 || batch.cols() != grid_.flat()) {
    throw DimensionError("image encoder: expected [B x " + std::to_string(grid_.flat()) + "], got " +
                         shape_string(batch.shape()));
  }
  return layer2_(bind, relu(layer1_(bind, batch)));
}

void ImageEncoder::init(std::uint64_t seed) {
  auto r1 = make_rng(seed, "image.layer1");
  auto r2 = make_rng(seed, "image.layer2");
  layer1_.init(r1);
  layer2_.init(r2);
}

void ImageEncoder::set_frozen(bool frozen) {
  visit("", ParameterVisitor([frozen](const std::string&, Parameter& p) { p.frozen = frozen; }));
}

void ImageEncoder::visit(const std::string& prefix, const ParameterVisitor& f) {
  layer1_.visit(prefix + "layer1", f);
  layer2_.visit(prefix + "layer2", f);
}

void ImageEncoder::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  layer1_.visit(prefix + "layer1", f);
  layer2_.visit(prefix + "layer2", f);
}

TextEncoder::TextEncoder(Index vocab, Index token_dim, Index out)
    : vocab_(vocab), embedding_{Tensor::zeros({vocab, token_dim})}, layer_(token_dim, out) {}

Matrix TextEncoder::pooling_matrix(std::span<const std::vector<Token>> sequences) const {
  Matrix pool = Matrix::Zero(static_cast<Index>(sequences.size()), vocab_);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    Index count = 0;
    for (Token t : sequences[b]) {
      if (t >= static_cast<Token>(vocab_)) {
        throw IndexError("text encoder: token id " + std::to_string(t) + " >= vocabulary size " +
                         std::to_string(vocab_));
      }
      if (t == kPadToken) continue;
      pool(static_cast<Index>(b), static_cast<Index>(t)) += 1.0;
      ++count;
    }
    if (count == 0) throw DegenerateInputError("text encoder: sequence " + std::to_string(b) + " is all padding");
    pool.row(static_cast<Index>(b)) /= static_cast<double>(count);
  }
  return pool;
}

Var TextEncoder::operator()(Binder& bind, std::span<const std::vector<Token>> sequences) const {
  if (sequences.empty()) throw DimensionError("text encoder: empty batch");
  Var pool = bind.graph().constant(Tensor::from_matrix(pooling_matrix(sequences)));
  return layer_(bind, matmul(pool, bind(embedding_)));
}

void TextEncoder::init(std::uint64_t seed) {
  auto re = make_rng(seed, "text.embedding");
  auto rl = make_rng(seed, "text.layer");
  xavier_uniform(embedding_.value, embedding_.value.shape()[0], embedding_.value.shape()[1], re);
  layer_.init(rl);
}

void TextEncoder::set_frozen(bool frozen) {
  visit("", ParameterVisitor([frozen](const std::string&, Parameter& p) { p.frozen = frozen; }));
}

void TextEncoder::visit(const std::string& prefix, const ParameterVisitor& f) {
  f(prefix + "embedding", embedding_);
  layer_.visit(prefix + "layer", f);
}

void TextEncoder::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  f(prefix + "embedding", embedding_);
  layer_.visit(prefix + "layer", f);
}

ProjectionHead::ProjectionHead(Index in, Index hidden, Index out) : layer1_(in, hidden), layer2_(hidden, out) {}

Var ProjectionHead::operator()(Binder& bind, const Var& reps) const {
  return layer2_(bind, relu(layer1_(bind, reps)));
}

void ProjectionHead::init(std::uint64_t seed) {
  auto r1 = make_rng(seed, "head.layer1");
  auto r2 = make_rng(seed, "head.layer2");
  layer1_.init(r1);
  layer2_.init(r2);
}

void ProjectionHead::visit(const std::string& prefix, const ParameterVisitor& f) {
  layer1_.visit(prefix + "layer1", f);
  layer2_.visit(prefix + "layer2", f);
}

void ProjectionHead::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  layer1_.visit(prefix + "layer1", f);
  layer2_.visit(prefix + "layer2", f);
}

Var encode_image(const ImageEncoder& enc, Binder& bind, const Var& grid) {
  const GridDims& g = enc.grid();
  if (grid.shape() != Shape{g.height, g.width, g.channels}) {
    throw DimensionError("encode_image: expected grid " + shape_string({g.height, g.width, g.channels}) + ", got " +
                         shape_string(grid.shape()));
  }
  Var out = enc(bind, reshape(grid, {1, g.flat()}));
  return reshape(out, {enc.out_dim()});
}

Var encode_text(const TextEncoder& enc, Binder& bind, std::span<const Token> tokens) {
  const std::vector<Token> seq(tokens.begin(), tokens.end());
  Var out = enc(bind, std::span<const std::vector<Token>>(&seq, 1));
  return reshape(out, {enc.out_dim()});
}

Var project(const ProjectionHead& head, Binder& bind, const Var& rep) {
  if (rep.rank() != 1 || rep.shape()[0] != head.in_dim()) {
    throw DimensionError("project: expected [" + std::to_string(head.in_dim()) + "], got " + shape_string(rep.shape()));
  }
  return reshape(head(bind, reshape(rep, {1, head.in_dim()})), {head.out_dim()});
}

Tensor stack_grids(std::span<const Tensor* const> grids) {
  if (grids.empty()) throw DimensionError("stack_grids: empty batch");
  const Index flat = grids.front()->size();
  Matrix m(static_cast<Index>(grids.size()), flat);
  for (std::size_t b = 0; b < grids.size(); ++b) {
    if (grids[b]->size() != flat) throw DimensionError("stack_grids: grids differ in size");
    m.row(static_cast<Index>(b)) = Eigen::Map<const Eigen::RowVectorXd>(grids[b]->data().data(), flat);
  }
  return Tensor::from_matrix(std::move(m));
}

}  // namespace mmssl
