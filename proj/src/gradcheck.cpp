#include "mmssl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "mmssl/encoders.hpp"
#include "mmssl/fusion.hpp"
#include "mmssl/losses.hpp"
#include "mmssl/rng.hpp"

namespace mmssl {

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  const double a = analytic.matrix().norm();
  const double n = numeric.matrix().norm();
  return (analytic.matrix() - numeric.matrix()).norm() / std::max({a, n, 1e-8});
}

double check_gradients(const ScalarFn& f, const std::vector<Tensor>& inputs, double step) {
  Graph g;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(g.leaf(t, true));
  Var out = f(g, leaves);
  const auto grads = g.backward(out);

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Graph h;
    std::vector<Var> vs;
    for (const auto& t : xs) vs.push_back(h.constant(t));
    return f(h, vs).value().item();
  };

  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor numeric = Tensor::zeros(inputs[k].shape());
    for (Index e = 0; e < inputs[k].size(); ++e) {
      const double x = inputs[k][e];
      probe[k].data()[static_cast<std::size_t>(e)] = x + step;
      const double up = evaluate(probe);
      probe[k].data()[static_cast<std::size_t>(e)] = x - step;
      const double down = evaluate(probe);
      probe[k].data()[static_cast<std::size_t>(e)] = x;
      numeric.data()[static_cast<std::size_t>(e)] = (up - down) / (2 * step);
    }
    const Tensor analytic = grads.contains(leaves[k]) ? grads[leaves[k]] : Tensor::zeros(inputs[k].shape());
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

namespace {

struct Case {
  std::vector<Tensor> inputs;
  ScalarFn f;
};

Tensor normal(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::normal_distribution<double> d(0.0, sd);
  for (double& x : t.data()) x = d(rng);
  return t;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& x : t.data()) x = d(rng);
  return t;
}

/// Runs `run` on a copy of `module` whose parameters are the trailing
/// inputs, so the check covers data and parameter gradients alike.
template <typename Module>
Case module_case(const Module& module, std::vector<Tensor> data_inputs,
                 std::function<Var(const Module&, Binder&, const std::vector<Var>&)> run) {
  Case c;
  const std::size_t n_data = data_inputs.size();
  c.inputs = std::move(data_inputs);
  module.visit("", ConstParameterVisitor([&](const std::string&, const Parameter& p) { c.inputs.push_back(p.value); }));
  c.f = [module, run, n_data](Graph& g, const std::vector<Var>& vs) {
    Module m = module;
    Binder bind(g);
    std::size_t k = n_data;
    m.visit("", ParameterVisitor([&](const std::string&, Parameter& p) {
      p.value = vs[k].value();
      bind.link(p, vs[k]);
      ++k;
    }));
    return run(m, bind, std::vector<Var>(vs.begin(), vs.begin() + static_cast<std::ptrdiff_t>(n_data)));
  };
  return c;
}

using Builder = std::function<Case(Rng&)>;

LossConfig hinge_config(NegativeMode mode) {
  LossConfig cfg;
  cfg.negative_mode = mode;
  return cfg;
}

const std::vector<std::pair<std::string, Builder>>& registry() {
  static const std::vector<std::pair<std::string, Builder>> ops = {
      {"matmul",
       [](Rng& r) {
         auto w = normal({3, 2}, r);
         return Case{{normal({3, 4}, r), normal({4, 2}, r)},
                     [w](Graph& g, const std::vector<Var>& v) { return sum(mul(matmul(v[0], v[1]), g.constant(w))); }};
       }},
      {"transpose_reshape",
       [](Rng& r) {
         auto w = normal({2, 6}, r);
         return Case{{normal({3, 4}, r)}, [w](Graph& g, const std::vector<Var>& v) {
                       return sum(mul(reshape(transpose(v[0]), {2, 6}), g.constant(w)));
                     }};
       }},
      {"add_sub_mul",
       [](Rng& r) {
         auto w = normal({3, 3}, r);
         return Case{{normal({3, 3}, r), normal({3, 3}, r), normal({3, 3}, r)},
                     [w](Graph& g, const std::vector<Var>& v) {
                       return sum(mul(sub(add(mul(v[0], v[1]), v[2]), scale(shift(v[0], 0.5), 2.0)), g.constant(w)));
                     }};
       }},
      {"relu",
       [](Rng& r) {
         auto w = normal({4, 3}, r);
         return Case{{normal({4, 3}, r)},
                     [w](Graph& g, const std::vector<Var>& v) { return sum(mul(relu(v[0]), g.constant(w))); }};
       }},
      {"exp_log",
       [](Rng& r) {
         auto w = normal({3, 3}, r);
         return Case{{normal({3, 3}, r, 0.5), uniform({3, 3}, r, 0.5, 2.0)},
                     [w](Graph& g, const std::vector<Var>& v) {
                       return sum(mul(add(exp(v[0]), log(v[1])), g.constant(w)));
                     }};
       }},
      {"maximum",
       [](Rng& r) {
         auto w = normal({3, 4}, r);
         return Case{{normal({3, 4}, r), normal({3, 4}, r)},
                     [w](Graph& g, const std::vector<Var>& v) { return sum(mul(maximum(v[0], v[1]), g.constant(w))); }};
       }},
      {"reduce",
       [](Rng& r) {
         auto w0 = normal({5}, r);
         auto w1 = normal({4}, r);
         return Case{{normal({4, 5}, r)}, [w0, w1](Graph& g, const std::vector<Var>& v) {
                       auto a = sum(mul(max(v[0], 0), g.constant(w0)));
                       auto b = sum(mul(mean(v[0], 1), g.constant(w1)));
                       auto c = sum(mul(sum(v[0], 0), g.constant(w0)));
                       auto d = sum(mul(max(v[0], 1), g.constant(w1)));
                       return add(add(a, b), add(c, add(d, mean(v[0]))));
                     }};
       }},
      {"concat_slice",
       [](Rng& r) {
         auto w = normal({5, 3}, r);
         return Case{{normal({2, 4}, r), normal({3, 4}, r)}, [w](Graph& g, const std::vector<Var>& v) {
                       auto c = concat_rows(v[0], v[1]);
                       auto s = concat_cols(slice_cols(c, 1, 2), slice_rows(slice_cols(c, 0, 1), 0, 5));
                       return sum(mul(s, g.constant(w)));
                     }};
       }},
      {"broadcast_pick_diagonal",
       [](Rng& r) {
         auto w = normal({3, 3}, r);
         auto u = normal({3}, r);
         return Case{{normal({3}, r), normal({3, 3}, r)}, [w, u](Graph& g, const std::vector<Var>& v) {
                       auto b = add(broadcast_rows(v[0], 3), broadcast_cols(v[0], 3));
                       auto m = add_row_vector(mul(b, v[1]), v[0]);
                       auto p = mul(add(pick(m, {2, 0, 1}), diagonal(m)), g.constant(u));
                       return add(sum(p), sum(mul(m, g.constant(w))));
                     }};
       }},
      {"l2_normalize",
       [](Rng& r) {
         auto w = normal({4, 5}, r);
         return Case{{normal({4, 5}, r)},
                     [w](Graph& g, const std::vector<Var>& v) { return sum(mul(l2_normalize(v[0]), g.constant(w))); }};
       }},
      {"cosine_sim_matrix",
       [](Rng& r) {
         auto w = normal({4, 3}, r);
         return Case{{normal({4, 5}, r), normal({3, 5}, r)}, [w](Graph& g, const std::vector<Var>& v) {
                       return sum(mul(cosine_sim_matrix(v[0], v[1]), g.constant(w)));
                     }};
       }},
      {"softmax_rows",
       [](Rng& r) {
         auto w = normal({4, 4}, r);
         return Case{{normal({4, 4}, r)}, [w](Graph& g, const std::vector<Var>& v) {
                       auto a = softmax_rows(v[0]);
                       auto b = softmax_rows(v[0], detail::off_diagonal(4));
                       return sum(mul(add(a, b), g.constant(w)));
                     }};
       }},
      {"logsumexp_rows",
       [](Rng& r) {
         auto w = normal({4}, r);
         return Case{{normal({4, 4}, r)}, [w](Graph& g, const std::vector<Var>& v) {
                       return sum(mul(add(logsumexp_rows(v[0]), logsumexp_rows(v[0], detail::off_diagonal(4))),
                                      g.constant(w)));
                     }};
       }},
      {"nt_xent",
       [](Rng& r) {
         return Case{{normal({8, 5}, r)},
                     [](Graph&, const std::vector<Var>& v) { return nt_xent(v[0], LossConfig{}.temperature); }};
       }},
      {"weighted_hinge_sum",
       [](Rng& r) {
         return Case{{normal({5, 6}, r), normal({5, 6}, r)}, [](Graph&, const std::vector<Var>& v) {
                       return weighted_hinge(v[0], v[1], hinge_config(NegativeMode::sum));
                     }};
       }},
      {"weighted_hinge_hardest",
       [](Rng& r) {
         return Case{{normal({5, 6}, r), normal({5, 6}, r)}, [](Graph&, const std::vector<Var>& v) {
                       return weighted_hinge(v[0], v[1], hinge_config(NegativeMode::hardest));
                     }};
       }},
      {"mm_infonce",
       [](Rng& r) {
         return Case{{normal({4, 6}, r), normal({4, 6}, r)}, [](Graph&, const std::vector<Var>& v) {
                       const LossConfig cfg;
                       return mm_infonce(v[0], v[1], cfg.temperature, 0.3);
                     }};
       }},
      {"mm_simclr_loss",
       [](Rng& r) {
         return Case{{normal({8, 5}, r), normal({4, 5}, r), normal({4, 5}, r)}, [](Graph&, const std::vector<Var>& v) {
                       return mm_simclr_loss(v[0], v[1], v[2], LossConfig{});
                     }};
       }},
      {"ext_pie_loss",
       [](Rng& r) {
         std::vector<Tensor> in;
         for (int k = 0; k < 5; ++k) in.push_back(normal({4, 5}, r));
         return Case{std::move(in), [](Graph&, const std::vector<Var>& v) {
                       return ext_pie_loss(v[0], v[1], v[2], v[3], v[4], LossConfig{});
                     }};
       }},
      {"cross_entropy",
       [](Rng& r) {
         std::uniform_int_distribution<Index> cls(0, 2);
         std::vector<Index> y(5);
         for (auto& v : y) v = cls(r);
         return Case{{normal({5, 3}, r)},
                     [y](Graph&, const std::vector<Var>& v) { return cross_entropy(v[0], y); }};
       }},
      {"coattend",
       [](Rng& r) {
         CoAttentionBlock block(6, 2);
         block.init(r());
         auto w = normal({2, 6}, r);
         // Two samples with text length 3 and image length 2.
         return module_case<CoAttentionBlock>(
             block, {normal({6, 6}, r), normal({4, 6}, r)},
             [w](const CoAttentionBlock& b, Binder& bind, const std::vector<Var>& v) {
               auto& g = bind.graph();
               return sum(mul(b.attend(bind, v[0], v[1], 2).fused, g.constant(w)));
             });
       }},
      {"coattend_vector",
       [](Rng& r) {
         CoAttentionBlock block(4, 2);
         block.init(r());
         auto w = normal({4}, r);
         return module_case<CoAttentionBlock>(
             block, {normal({4}, r), normal({4}, r)},
             [w](const CoAttentionBlock& b, Binder& bind, const std::vector<Var>& v) {
               return sum(mul(coattend(b, bind, v[0], v[1]), bind.graph().constant(w)));
             });
       }},
      {"image_encoder",
       [](Rng& r) {
         ImageEncoder enc(GridDims{3, 3, 1}, 5, 4);
         enc.init(r());
         auto w = normal({2, 4}, r);
         return module_case<ImageEncoder>(enc, {normal({2, 9}, r)},
                                          [w](const ImageEncoder& e, Binder& bind, const std::vector<Var>& v) {
                                            return sum(mul(e(bind, v[0]), bind.graph().constant(w)));
                                          });
       }},
      {"text_encoder",
       [](Rng& r) {
         TextEncoder enc(7, 3, 4);
         enc.init(r());
         auto w = normal({2, 4}, r);
         std::uniform_int_distribution<Token> tok(1, 6);
         std::vector<std::vector<Token>> seqs{{tok(r), tok(r), tok(r), 0}, {tok(r), tok(r), 0, 0}};
         return module_case<TextEncoder>(enc, {}, [w, seqs](const TextEncoder& e, Binder& bind, const std::vector<Var>&) {
           return sum(mul(e(bind, seqs), bind.graph().constant(w)));
         });
       }},
      {"projection_head",
       [](Rng& r) {
         ProjectionHead head(4, 5, 3);
         head.init(r());
         auto w = normal({2, 3}, r);
         return module_case<ProjectionHead>(head, {normal({2, 4}, r)},
                                            [w](const ProjectionHead& h, Binder& bind, const std::vector<Var>& v) {
                                              return sum(mul(h(bind, v[0]), bind.graph().constant(w)));
                                            });
       }},
  };
  return ops;
}

}  // namespace

std::vector<std::string> gradcheck_operations() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

std::vector<GradCheckCase> run_gradcheck_suite(std::size_t seeds, double tolerance, double step,
                                               std::uint64_t root_seed) {
  std::vector<GradCheckCase> out;
  for (const auto& [name, build] : registry()) {
    for (std::size_t s = 0; s < seeds; ++s) {
      auto rng = make_rng(root_seed, name, {s});
      const Case c = build(rng);
      const double err = check_gradients(c.f, c.inputs, step);
      out.push_back({name, static_cast<std::uint64_t>(s), err, err <= tolerance});
    }
  }
  return out;
}

}  // namespace mmssl
