#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/QR>

#include "mmssl/losses.hpp"

using namespace mmssl;

namespace {

using Rows = std::vector<std::vector<long double>>;

// ---- direct scalar oracles, written without the tensor engine ----

long double dot(const std::vector<long double>& a, const std::vector<long double>& b) {
  long double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

long double cosine(const std::vector<long double>& a, const std::vector<long double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

long double oracle_nt_xent(const Rows& z, long double tau) {
  const std::size_t n2 = z.size(), n = n2 / 2;
  long double total = 0;
  for (std::size_t i = 0; i < n2; ++i) {
    const std::size_t j = (i + n) % n2;
    long double denom = 0;
    for (std::size_t k = 0; k < n2; ++k) {
      if (k != i) denom += std::exp(cosine(z[i], z[k]) / tau);
    }
    total += -std::log(std::exp(cosine(z[i], z[j]) / tau) / denom);
  }
  return total / static_cast<long double>(n2);
}

long double oracle_hinge(const Rows& u, const Rows& v, long double alpha, long double wu, long double wv,
                         bool hardest) {
  const std::size_t n = u.size();
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double pos = cosine(u[i], v[i]);
    long double a = 0, b = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const long double ta = std::max(0.0L, alpha - pos + cosine(u[k], v[i]));
      const long double tb = std::max(0.0L, alpha - pos + cosine(u[i], v[k]));
      a = hardest ? std::max(a, ta) : a + ta;
      b = hardest ? std::max(b, tb) : b + tb;
    }
    total += wu * a + wv * b;
  }
  return total / static_cast<long double>(n);
}

long double oracle_infonce(const Rows& u, const Rows& v, long double tau, long double lambda) {
  const std::size_t n = u.size();
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long double du = 0, dv = 0;
    for (std::size_t k = 0; k < n; ++k) {
      du += std::exp(cosine(u[i], v[k]) / tau);
      dv += std::exp(cosine(v[i], u[k]) / tau);
    }
    const long double pos = std::exp(cosine(u[i], v[i]) / tau);
    total += lambda * -std::log(pos / du) + (1 - lambda) * -std::log(pos / dv);
  }
  return total / static_cast<long double>(n);
}

long double oracle_cross_entropy(const Rows& logits, const std::vector<Index>& y) {
  long double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    long double z = 0;
    for (long double l : logits[i]) z += std::exp(l);
    total += -std::log(std::exp(logits[i][static_cast<std::size_t>(y[i])]) / z);
  }
  return total / static_cast<long double>(logits.size());
}

// ---- helpers ----

Rows random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Rows r(n, std::vector<long double>(d));
  for (auto& row : r) {
    for (auto& x : row) x = dist(rng);
  }
  return r;
}

template <typename S>
BasicTensor<S> to_tensor(const Rows& r) {
  MatrixX<S> m(static_cast<Index>(r.size()), static_cast<Index>(r[0].size()));
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (std::size_t j = 0; j < r[i].size(); ++j) m(static_cast<Index>(i), static_cast<Index>(j)) = static_cast<S>(r[i][j]);
  }
  return BasicTensor<S>::from_matrix(std::move(m));
}

Rows concat(const Rows& a, const Rows& b) {
  Rows out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Tensor eye_rows(Index n, Index d) {
  Matrix m = Matrix::Zero(n, d);
  for (Index i = 0; i < n; ++i) m(i, i) = 1.0;
  return Tensor::from_matrix(std::move(m));
}

double value(const Var& v) { return v.value().item(); }

}  // namespace

TEST_CASE("nt_xent analytic cases") {
  Graph g;
  auto bank = g.constant(eye_rows(4, 4));
  CHECK(std::abs(value(nt_xent(bank, 1.0)) - std::log(3.0)) < 1e-9);

  auto same = g.constant(Tensor::matrix({{0.3, -0.7, 0.2}, {0.3, -0.7, 0.2}}));
  for (double tau : {0.05, 0.1, 1.0, 7.0}) CHECK(value(nt_xent(same, tau)) == 0.0);

  CHECK_THROWS_AS(nt_xent(g.constant(eye_rows(3, 3)), 1.0), PairingError);
  CHECK_THROWS_AS(nt_xent(bank, 0.0), ConfigError);
  CHECK_THROWS_AS(nt_xent(bank, -1.0), ConfigError);
}

TEST_CASE("nt_xent matches the direct formula") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Rows z = random_rows(4, 6, seed);
    BasicGraph<long double> g;
    const long double got = nt_xent(g.constant(to_tensor<long double>(z)), 0.1L).value().item();
    CHECK(std::abs(got - oracle_nt_xent(z, 0.1L)) < 1e-15L);
  }
}

TEST_CASE("nt_xent decreases as the positive pair aligns") {
  // Negatives fixed; only the angle between the two views of sample 0 moves.
  double previous = 1e300;
  for (double theta : {1.2, 0.9, 0.6, 0.3, 0.0}) {
    Graph g;
    auto bank = g.constant(Tensor::matrix({{1, 0, 0}, {0, 0, 1}, {std::cos(theta), std::sin(theta), 0}, {0, 0.3, 1}}));
    const double v = value(nt_xent(bank, 0.5));
    CHECK(v < previous);
    previous = v;
  }
}

TEST_CASE("weighted_hinge analytic cases") {
  LossConfig cfg;
  Graph g;
  auto u = g.constant(eye_rows(3, 3));
  CHECK(value(weighted_hinge(u, u, cfg)) == 0.0);

  auto a = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  auto b = g.constant(Tensor::matrix({{0.6, 0.8}, {0, 1}}));
  cfg.margin = 0.2;
  cfg.lambda_u2v = cfg.lambda_v2u = 0.5;
  cfg.negative_mode = NegativeMode::sum;
  CHECK(std::abs(value(weighted_hinge(a, b, cfg)) - 0.1) < 1e-12);

  CHECK_THROWS_AS(weighted_hinge(g.constant(Tensor::matrix({{1, 0}})), g.constant(Tensor::matrix({{1, 0}})), cfg),
                  NoNegativesError);
  CHECK_THROWS_AS(weighted_hinge(a, g.constant(eye_rows(3, 2)), cfg), DimensionError);
}

TEST_CASE("weighted_hinge matches the direct formula in both modes") {
  for (bool hardest : {false, true}) {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
      const Rows u = random_rows(4, 5, seed), v = random_rows(4, 5, seed + 100);
      LossConfig cfg;
      cfg.lambda_u2v = 0.3;
      cfg.lambda_v2u = 0.7;
      cfg.negative_mode = hardest ? NegativeMode::hardest : NegativeMode::sum;
      BasicGraph<long double> g;
      const long double got =
          weighted_hinge(g.constant(to_tensor<long double>(u)), g.constant(to_tensor<long double>(v)), cfg)
              .value()
              .item();
      CHECK(std::abs(got - oracle_hinge(u, v, 0.2L, 0.3L, 0.7L, hardest)) < 1e-15L);
    }
  }
}

TEST_CASE("weighted_hinge clamps when positives beat every negative by the margin") {
  Graph g;
  // s_ii = 1, cross similarity 0.5, margin 0.4.
  auto u = g.constant(Tensor::matrix({{1, 0}, {0.5, std::sqrt(0.75)}}));
  LossConfig cfg;
  cfg.margin = 0.4;
  for (auto mode : {NegativeMode::sum, NegativeMode::hardest}) {
    cfg.negative_mode = mode;
    CHECK(value(weighted_hinge(u, u, cfg)) == 0.0);
  }
}

TEST_CASE("mm_infonce analytic cases") {
  Graph g;
  auto e = g.constant(eye_rows(2, 2));
  CHECK(std::abs(value(mm_infonce(e, e, 1.0, 0.5)) - std::log1p(std::exp(-1.0))) < 1e-9);

  auto u = g.constant(Tensor::matrix({{0.2, 0.9, -0.4}}));
  auto v = g.constant(Tensor::matrix({{-1.0, 0.1, 0.5}}));
  CHECK(value(mm_infonce(u, v, 0.1, 0.3)) == 0.0);

  CHECK_THROWS_AS(mm_infonce(e, e, 0.0, 0.5), ConfigError);
}

TEST_CASE("mm_infonce matches the direct formula and is symmetric at lambda 0.5") {
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const Rows u = random_rows(4, 6, seed), v = random_rows(4, 6, seed + 1);
    BasicGraph<long double> g;
    auto tu = g.constant(to_tensor<long double>(u));
    auto tv = g.constant(to_tensor<long double>(v));
    CHECK(std::abs(mm_infonce(tu, tv, 0.1L, 0.3L).value().item() - oracle_infonce(u, v, 0.1L, 0.3L)) < 1e-15L);
    const long double ab = mm_infonce(tu, tv, 0.1L, 0.5L).value().item();
    const long double ba = mm_infonce(tv, tu, 0.1L, 0.5L).value().item();
    CHECK(std::abs(ab - ba) < 1e-15L);
  }
}

TEST_CASE("mm_simclr_loss is the sum of its components") {
  Graph g;
  auto views = g.constant(Tensor::matrix({{1, 2}, {1, 2}}));
  auto u = g.constant(Tensor::matrix({{0.5, 0.5}}));
  CHECK(value(mm_simclr_loss(views, u, u, LossConfig{})) == 0.0);

  for (std::uint64_t seed = 30; seed < 33; ++seed) {
    const Rows z = random_rows(8, 5, seed), a = random_rows(4, 5, seed + 1), b = random_rows(4, 5, seed + 2);
    LossConfig cfg;
    BasicGraph<long double> h;
    auto tz = h.constant(to_tensor<long double>(z));
    auto ta = h.constant(to_tensor<long double>(a));
    auto tb = h.constant(to_tensor<long double>(b));
    const long double fused = mm_simclr_loss(tz, ta, tb, cfg).value().item();
    const auto tau = static_cast<long double>(cfg.temperature);
    const long double parts = mm_infonce(ta, tb, tau, 0.5L).value().item() + nt_xent(tz, tau).value().item();
    CHECK(fused == parts);
    CHECK(std::abs(fused - oracle_infonce(a, b, 0.1L, 0.5L) - oracle_nt_xent(z, 0.1L)) < 1e-14L);
  }
}

TEST_CASE("ext_pie_loss composition") {
  LossConfig cfg;
  SUBCASE("N = 1 with equal banks is zero") {
    Graph g;
    auto e = g.constant(eye_rows(1, 3));
    CHECK(value(ext_pie_loss(e, e, e, e, e, cfg)) == 0.0);
  }
  SUBCASE("zero hinge weights reduce to the weighted NT-Xent term") {
    const Rows f1 = random_rows(4, 5, 40), f2 = random_rows(4, 5, 41), f = random_rows(4, 5, 42);
    cfg.lambda_f2i = cfg.lambda_f2t = 0.0;
    BasicGraph<long double> g;
    auto a = g.constant(to_tensor<long double>(f1));
    auto b = g.constant(to_tensor<long double>(f2));
    auto c = g.constant(to_tensor<long double>(f));
    const long double got = ext_pie_loss(a, b, c, c, c, cfg).value().item();
    CHECK(std::abs(got - 0.6L * oracle_nt_xent(concat(f1, f2), 0.1L)) < 1e-15L);
  }
  SUBCASE("random banks match the weighted oracle sum") {
    const Rows f1 = random_rows(4, 5, 50), f2 = random_rows(4, 5, 51), f = random_rows(4, 5, 52),
               i = random_rows(4, 5, 53), t = random_rows(4, 5, 54);
    BasicGraph<long double> g;
    auto v = [&](const Rows& r) { return g.constant(to_tensor<long double>(r)); };
    const long double got = ext_pie_loss(v(f1), v(f2), v(f), v(i), v(t), cfg).value().item();
    const long double want = 0.6L * oracle_nt_xent(concat(f1, f2), 0.1L) +
                             0.2L * oracle_hinge(i, f, 0.2L, 0.5L, 0.5L, false) +
                             0.2L * oracle_hinge(t, f, 0.2L, 0.5L, 0.5L, false);
    CHECK(std::abs(got - want) < 1e-15L);
  }
  SUBCASE("bank size mismatch") {
    Graph g;
    auto a = g.constant(eye_rows(2, 3));
    auto b = g.constant(eye_rows(3, 3));
    CHECK_THROWS_AS(ext_pie_loss(a, a, a, a, b, cfg), DimensionError);
  }
}

TEST_CASE("cross_entropy") {
  Graph g;
  CHECK(std::abs(value(cross_entropy(g.constant(Tensor::matrix({{0, 0}, {0, 0}})), {0, 1})) - std::log(2.0)) < 1e-15);
  CHECK(std::abs(value(cross_entropy(g.constant(Tensor::matrix({{50, 0}, {0, 50}})), {0, 1}))) < 1e-9);

  const Rows logits = random_rows(4, 3, 60);
  const std::vector<Index> y{2, 0, 1, 1};
  BasicGraph<long double> h;
  CHECK(std::abs(cross_entropy(h.constant(to_tensor<long double>(logits)), y).value().item() -
                 oracle_cross_entropy(logits, y)) < 1e-15L);

  CHECK_THROWS_AS(cross_entropy(g.constant(Tensor::matrix({{0, 0}})), {2}), IndexError);
  CHECK_THROWS_AS(cross_entropy(g.constant(Tensor::matrix({{0, 0}})), {-1}), IndexError);
}

TEST_CASE("losses are invariant to rotation, row scaling and consistent permutation") {
  constexpr double kTol = 1e-9;
  std::mt19937_64 rng(70);
  std::normal_distribution<double> dist;
  const Index d = 6;
  Matrix q = Matrix::NullaryExpr(d, d, [&] { return dist(rng); });
  q = Eigen::HouseholderQR<Matrix>(q).householderQ();  // random orthogonal matrix

  auto rand_bank = [&](Index n) { return Matrix(Matrix::NullaryExpr(n, d, [&] { return dist(rng); })); };
  const Index n = 4;
  std::vector<Matrix> banks;
  for (int k = 0; k < 5; ++k) banks.push_back(rand_bank(n));
  const Matrix views = rand_bank(2 * n);
  std::vector<Index> y{0, 2, 1, 2};
  const Matrix logits = rand_bank(n).leftCols(3);

  // Every loss evaluated on transformed inputs.
  auto evaluate = [&](auto transform_bank, auto transform_views, const std::vector<Index>& perm) {
    Graph g;
    auto c = [&](const Matrix& m) { return g.constant(Tensor::from_matrix(transform_bank(m))); };
    auto cv = g.constant(Tensor::from_matrix(transform_views(views)));
    LossConfig sum_cfg, hard_cfg;
    hard_cfg.negative_mode = NegativeMode::hardest;
    Matrix lp(n, 3);
    std::vector<Index> yp(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      lp.row(i) = logits.row(perm[static_cast<std::size_t>(i)]);
      yp[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    }
    return std::vector<double>{
        value(nt_xent(cv, 0.1)),
        value(weighted_hinge(c(banks[0]), c(banks[1]), sum_cfg)),
        value(weighted_hinge(c(banks[0]), c(banks[1]), hard_cfg)),
        value(mm_infonce(c(banks[0]), c(banks[1]), 0.1, 0.3)),
        value(mm_simclr_loss(cv, c(banks[0]), c(banks[1]), sum_cfg)),
        value(ext_pie_loss(c(banks[0]), c(banks[1]), c(banks[2]), c(banks[3]), c(banks[4]), sum_cfg)),
        value(cross_entropy(g.constant(Tensor::from_matrix(lp)), yp)),
    };
  };

  std::vector<Index> identity{0, 1, 2, 3};
  auto same = [](const Matrix& m) { return m; };
  const auto base = evaluate(same, same, identity);

  SUBCASE("rotation") {
    auto rot = [&](const Matrix& m) { return Matrix(m * q); };
    const auto got = evaluate(rot, rot, identity);
    for (std::size_t k = 0; k < base.size(); ++k) CHECK(std::abs(got[k] - base[k]) < kTol);
  }
  SUBCASE("positive per-row scaling") {
    auto scale_rows = [&](const Matrix& m) {
      Matrix out = m;
      for (Index i = 0; i < out.rows(); ++i) out.row(i) *= 0.1 + 3.0 * static_cast<double>(i + 1);
      return out;
    };
    const auto got = evaluate(scale_rows, scale_rows, identity);
    for (std::size_t k = 0; k < base.size(); ++k) CHECK(std::abs(got[k] - base[k]) < kTol);
  }
  SUBCASE("consistent batch permutation") {
    const std::vector<Index> perm{2, 0, 3, 1};
    auto permute = [&](const Matrix& m) {
      Matrix out(m.rows(), m.cols());
      for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
      return out;
    };
    // Views move as pairs: rows i and i + N stay partners.
    auto permute_views = [&](const Matrix& m) {
      Matrix out(m.rows(), m.cols());
      for (Index i = 0; i < n; ++i) {
        out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
        out.row(i + n) = m.row(perm[static_cast<std::size_t>(i)] + n);
      }
      return out;
    };
    const auto got = evaluate(permute, permute_views, perm);
    for (std::size_t k = 0; k < base.size(); ++k) CHECK(std::abs(got[k] - base[k]) < kTol);
  }
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.temperature = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lambda_f2f = cfg.lambda_f2i = cfg.lambda_f2t = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lambda = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
