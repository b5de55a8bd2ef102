#include "mmssl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmssl/ext_pie.hpp"
#include "mmssl/rng.hpp"

namespace mmssl {

std::string method_name(Method m) {
  switch (m) {
    case Method::simclr: return "simclr";
    case Method::mod_simclr: return "mod-simclr";
    case Method::vse: return "vse";
    case Method::vse_pp: return "vse-pp";
    case Method::mm_simclr: return "mm-simclr";
    case Method::ext_pie_net: return "ext-pie-net";
  }
  throw ConfigError("unknown method");
}

Method parse_method(std::string_view name) {
  std::string key(name);
  std::replace(key.begin(), key.end(), '_', '-');
  if (key == "vse++") key = "vse-pp";
  for (Method m : kAllMethods) {
    if (method_name(m) == key) return m;
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(optimizer.learning_rate >= 0)) throw ConfigError("learning_rate must be non-negative");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
  loss.validate();
  augment.validate();
  arch.validate();
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t count = (n + batch_size - 1) / batch_size;
  std::vector<std::vector<std::size_t>> batches(count);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t size = n / count + (b < n % count ? 1 : 0);
    batches[b].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                      order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return batches;
}

namespace {

std::vector<std::vector<Token>> text_views(std::span<const PairedSample* const> batch,
                                           const SynonymLexicon& lexicon, double p, std::uint64_t draw,
                                           std::uint64_t view) {
  std::vector<std::vector<Token>> out;
  out.reserve(batch.size());
  for (const auto* s : batch) {
    out.push_back(augment_text(s->tokens, lexicon, p,
                               derive_seed(draw, "text-view", {static_cast<std::uint64_t>(s->id), view})));
  }
  return out;
}

}  // namespace

Var batch_loss(const TrainConfig& cfg, const Model& model, Binder& bind,
               std::span<const PairedSample* const> batch, const SynonymLexicon& lexicon, std::uint64_t draw) {
  auto& g = bind.graph();
  const auto tau = cfg.loss.temperature;

  if (cfg.method == Method::ext_pie_net) {
    const auto b = ext_pie_forward(model, bind, batch, cfg.augment, draw);
    return ext_pie_loss(b.f1, b.f2, b.f, b.i, b.t, cfg.loss);
  }

  auto views = augment_batch(batch, cfg.augment, draw);
  Var p1 = model.image_head(bind, model.image(bind, g.constant(std::move(views.view1))));
  auto text_proj = [&](std::span<const std::vector<Token>> seqs) { return model.text_head(bind, model.text(bind, seqs)); };

  switch (cfg.method) {
    case Method::simclr:
    case Method::mod_simclr:
    case Method::mm_simclr: {
      Var p2 = model.image_head(bind, model.image(bind, g.constant(std::move(views.view2))));
      Var image_term = nt_xent(stack_views(p1, p2), tau);
      if (cfg.method == Method::simclr) return image_term;
      if (cfg.method == Method::mod_simclr) {
        const auto t1 = text_views(batch, lexicon, cfg.augment.synonym_p, draw, 0);
        const auto t2 = text_views(batch, lexicon, cfg.augment.synonym_p, draw, 1);
        return add(image_term, nt_xent(stack_views(text_proj(t1), text_proj(t2)), tau));
      }
      const auto tokens = token_batch(batch);
      return mm_simclr_loss(stack_views(p1, p2), p1, text_proj(tokens), cfg.loss);
    }
    case Method::vse:
    case Method::vse_pp: {
      LossConfig lc = cfg.loss;
      lc.negative_mode = cfg.method == Method::vse ? NegativeMode::sum : NegativeMode::hardest;
      const auto tokens = token_batch(batch);
      return weighted_hinge(text_proj(tokens), p1, lc);
    }
    case Method::ext_pie_net:
      break;
  }
  throw ConfigError("unhandled method");
}

SynonymLexicon default_lexicon(Index vocab) {
  SynonymLexicon lex;
  for (Token t = 2; t + 1 < static_cast<Token>(vocab); t += 2) {
    lex.add(t, {static_cast<Token>(t + 1)});
    lex.add(static_cast<Token>(t + 1), {t});
  }
  return lex;
}

PretrainResult pretrain(const TrainConfig& cfg, const Dataset& data, const SynonymLexicon& lexicon) {
  cfg.validate();
  if (data.empty()) throw ConfigError("pretrain: dataset is empty");
  lexicon.validate(data.dims.vocab);

  PretrainResult result{Model(data.dims, cfg.arch), {}, 0.0};
  Model& model = result.model;
  model.init(derive_seed(cfg.seed, "init"));
  model.method = method_name(cfg.method);
  result.metrics.method = model.method;

  Adam adam(model.parameters(), cfg.optimizer);
  auto partition_rng = make_rng(cfg.seed, "partition");
  const auto batches = make_batches(data.size(), cfg.batch_size, partition_rng);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> visit(batches.size());
    std::iota(visit.begin(), visit.end(), std::size_t{0});
    auto order_rng = make_rng(cfg.seed, "batch-order", {epoch});
    std::shuffle(visit.begin(), visit.end(), order_rng);

    double total = 0.0;
    for (std::size_t step = 0; step < visit.size(); ++step) {
      const auto& idx = batches[visit[step]];
      std::vector<const PairedSample*> batch;
      batch.reserve(idx.size());
      for (std::size_t i : idx) batch.push_back(&data.samples[i]);

      Graph g;
      Binder bind(g);
      Var loss = batch_loss(cfg, model, bind, batch, lexicon, derive_seed(cfg.seed, "augment", {epoch, visit[step]}));
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw DivergenceError(epoch, step + 1);
      total += value;
      adam.step(bind.gradients(g.backward(loss)));
    }
    const double mean_loss = total / static_cast<double>(batches.size());
    result.metrics.rows.push_back({epoch, "train", mean_loss, std::nullopt, std::nullopt});
    result.final_loss = mean_loss;
  }
  return result;
}

Matrix encode_features(const Model& model, const Dataset& data) {
  const Index n = static_cast<Index>(data.size());
  const Index di = model.image.out_dim();
  const Index dt = model.text.out_dim();
  Matrix out(n, di + dt);
  constexpr Index kChunk = 256;
  for (Index start = 0; start < n; start += kChunk) {
    const Index count = std::min(kChunk, n - start);
    std::vector<const Tensor*> grids;
    std::vector<std::vector<Token>> tokens;
    for (Index k = start; k < start + count; ++k) {
      grids.push_back(&data.samples[static_cast<std::size_t>(k)].image);
      tokens.push_back(data.samples[static_cast<std::size_t>(k)].tokens);
    }
    Graph g;
    Binder bind(g);
    Var img = model.image(bind, g.constant(stack_grids(grids)));
    Var txt = model.text(bind, tokens);
    out.block(start, 0, count, di) = img.value().matrix();
    out.block(start, di, count, dt) = txt.value().matrix();
  }
  return out;
}

void ProbeConfig::validate() const {
  if (epochs == 0) throw ConfigError("probe epochs must be positive");
  if (batch_size == 0) throw ConfigError("probe batch_size must be positive");
  if (!(learning_rate >= 0)) throw ConfigError("probe learning_rate must be non-negative");
  if (!(train_share > 0 && train_share < 1)) throw ConfigError("train_share must lie in (0, 1)");
}

void SweepConfig::validate() const {
  head.validate();
  if (fractions.empty()) throw ConfigError("sweep needs at least one fraction");
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) throw ConfigError("label fractions must lie in (0, 1]");
  }
  if (common_dim < 0 || hidden <= 0) throw ConfigError("sweep head widths must be positive");
}

namespace {

class ProbeHead {
 public:
  ProbeHead(Index features, Index classes) : out_(features, classes) {}
  void init(std::uint64_t seed) {
    auto rng = make_rng(seed, "probe.out");
    out_.init(rng);
  }
  Var operator()(Binder& bind, const Var& x) const { return out_(bind, x); }
  std::vector<Parameter*> parameters() { return {&out_.weight, &out_.bias}; }

 private:
  Linear out_;
};

/// Per-modality linear maps to a common width, then one hidden layer.
class FusionHead {
 public:
  FusionHead(Index image_dim, Index text_dim, Index common, Index hidden, Index classes)
      : image_dim_(image_dim),
        text_dim_(text_dim),
        image_(image_dim, common),
        text_(text_dim, common),
        hidden_(2 * common, hidden),
        out_(hidden, classes) {}
  void init(std::uint64_t seed) {
    auto r1 = make_rng(seed, "head.image");
    auto r2 = make_rng(seed, "head.text");
    auto r3 = make_rng(seed, "head.hidden");
    auto r4 = make_rng(seed, "head.out");
    image_.init(r1);
    text_.init(r2);
    hidden_.init(r3);
    out_.init(r4);
  }
  Var operator()(Binder& bind, const Var& x) const {
    Var img = image_(bind, slice_cols(x, 0, image_dim_));
    Var txt = text_(bind, slice_cols(x, image_dim_, text_dim_));
    return out_(bind, relu(hidden_(bind, concat_cols(img, txt))));
  }
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (Linear* l : {&image_, &text_, &hidden_, &out_}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    return out;
  }

 private:
  Index image_dim_;
  Index text_dim_;
  Linear image_;
  Linear text_;
  Linear hidden_;
  Linear out_;
};

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = m.row(static_cast<Index>(idx[k]));
  return out;
}

std::vector<Index> gather(std::span<const Index> v, std::span<const std::size_t> idx) {
  std::vector<Index> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

template <typename Head>
MetricRow evaluate(const Head& head, const Matrix& x, const std::vector<Index>& y, Index classes, std::size_t epoch,
                   const char* split) {
  Graph g;
  Binder bind(g);
  Var logits = head(bind, g.constant(Tensor::from_matrix(x)));
  const double loss = cross_entropy(logits, y).value().item();
  const Matrix& l = logits.value().matrix();
  std::vector<Index> pred(static_cast<std::size_t>(l.rows()));
  for (Index r = 0; r < l.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < l.cols(); ++c) {
      if (l(r, c) > l(r, best)) best = c;
    }
    pred[static_cast<std::size_t>(r)] = best;
  }
  return {epoch, split, loss, accuracy(pred, y), macro_f1(pred, y, classes)};
}

/// Trains `head` on the rows `train` of `features` and scores train and test
/// sets after every epoch.
template <typename Head>
RunMetrics fit_head(Head& head, const Matrix& features, std::span<const Index> labels,
                    std::span<const std::size_t> train, std::span<const std::size_t> test, Index classes,
                    const ProbeConfig& cfg, std::uint64_t stream) {
  const Matrix x_train = gather_rows(features, train);
  const Matrix x_test = gather_rows(features, test);
  const auto y_train = gather(labels, train);
  const auto y_test = gather(labels, test);

  Adam adam(head.parameters(), AdamConfig{cfg.learning_rate});
  RunMetrics metrics;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto rng = make_rng(stream, "head-shuffle", {epoch});
    for (const auto& idx : make_batches(train.size(), cfg.batch_size, rng)) {
      Graph g;
      Binder bind(g);
      Var logits = head(bind, g.constant(Tensor::from_matrix(gather_rows(x_train, idx))));
      Var loss = cross_entropy(logits, gather(y_train, idx));
      if (!std::isfinite(loss.value().item())) throw DivergenceError(epoch, 0);
      adam.step(bind.gradients(g.backward(loss)));
    }
    metrics.rows.push_back(evaluate(head, x_train, y_train, classes, epoch, "train"));
    metrics.rows.push_back(evaluate(head, x_test, y_test, classes, epoch, "test"));
  }
  return metrics;
}

void require_frozen(const Model& model) {
  if (!model.encoders_frozen()) throw ContractError("encoders must be frozen before probing");
}

void require_unchanged(const Model& model, const std::vector<unsigned char>& before) {
  if (model.encoder_bytes() != before) throw ContractError("encoder parameters changed during probing");
}

}  // namespace

RunMetrics linear_probe(const Model& model, const Dataset& data, const ProbeConfig& cfg) {
  cfg.validate();
  require_frozen(model);
  if (data.empty()) throw ConfigError("linear_probe: dataset is empty");
  const auto before = model.encoder_bytes();

  const Matrix features = encode_features(model, data);
  const auto labels = data.labels();
  const auto split = stratified_split(labels, cfg.train_share, derive_seed(cfg.seed, "holdout"));

  ProbeHead head(features.cols(), data.dims.classes);
  head.init(derive_seed(cfg.seed, "probe-init"));
  RunMetrics metrics = fit_head(head, features, labels, split.selected, split.rest, data.dims.classes, cfg,
                                derive_seed(cfg.seed, "probe"));
  metrics.method = model.method;
  metrics.fraction = 1.0;

  require_unchanged(model, before);
  return metrics;
}

std::vector<RunMetrics> finetune_sweep(const Model& model, const Dataset& data, const SweepConfig& cfg) {
  cfg.validate();
  require_frozen(model);
  if (data.empty()) throw ConfigError("finetune_sweep: dataset is empty");
  const auto before = model.encoder_bytes();

  const Matrix features = encode_features(model, data);
  const auto labels = data.labels();
  const auto split = stratified_split(labels, cfg.head.train_share, derive_seed(cfg.head.seed, "holdout"));
  const auto pool_labels = gather(labels, split.selected);
  const Index common = cfg.common_dim > 0 ? cfg.common_dim : model.arch.embed_dim;

  std::vector<RunMetrics> out;
  for (double fraction : cfg.fractions) {
    const auto pick = stratified_split(pool_labels, fraction, derive_seed(cfg.head.seed, "fraction"));
    std::vector<std::size_t> train;
    train.reserve(pick.selected.size());
    for (std::size_t k : pick.selected) train.push_back(split.selected[k]);

    FusionHead head(model.image.out_dim(), model.text.out_dim(), common, cfg.hidden, data.dims.classes);
    head.init(derive_seed(cfg.head.seed, "head-init"));
    RunMetrics m = fit_head(head, features, labels, train, split.rest, data.dims.classes, cfg.head,
                            derive_seed(cfg.head.seed, "sweep"));
    m.method = model.method;
    m.fraction = fraction;
    out.push_back(std::move(m));
  }

  require_unchanged(model, before);
  return out;
}

}  // namespace mmssl
