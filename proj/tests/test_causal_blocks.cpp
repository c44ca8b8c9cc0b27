#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "cgr/causal_blocks.hpp"
#include "support.hpp"

using namespace cgr;
namespace ct = cgr::testing;

namespace {

Tensor mlp_ref(const Tensor& x, const MlpParams& p) {
  Tensor h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    h = ct::matmul_ref(h, p.layers[l].weight->value);
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) {
        h.at(i, j) += p.layers[l].bias->value.at(0, j);
        if (l + 1 < p.layers.size()) h.at(i, j) = std::max(h.at(i, j), 0.0);
      }
  }
  return h;
}

Tensor concat_ref(const Tensor& a, const Tensor& b) {
  Tensor o = Tensor::matrix(1, a.cols() + b.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) o.at(0, j) = a.at(0, j);
  for (std::size_t j = 0; j < b.cols(); ++j) o.at(0, a.cols() + j) = b.at(0, j);
  return o;
}

Tensor att_ref(const Tensor& q, const Tensor& kv, const AttentionParams& p) {
  return ct::attention_ref(q, kv, p.w_q->value, p.w_k->value, p.w_v->value);
}

void randomise_biases(ParameterStore& s, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i].name.ends_with(".bias")) s[i].value = random_normal(s[i].value.shape(), 0.5, rng);
}

Tensor permute_rows(const Tensor& a, const std::vector<std::size_t>& order) {
  Tensor o = a;
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) o.at(i, j) = a.at(order[i], j);
  return o;
}

}  // namespace

TEST(NoConfounder, SingleTokenStreamIsProjectedRow) {
  std::mt19937_64 rng(1);
  ParameterStore s;
  auto b = NoConfounderBlock::create(s, "ncf", 3, 4, 5, 2, rng);
  Tensor x = random_normal({1, 3}, 1.0, rng);
  Tape t;
  auto out = ncf_forward(Tokens::single(t.constant(x)), b);
  ASSERT_TRUE(out.stream);
  EXPECT_LT(ct::max_abs_diff(out.stream->rows.value(), ct::matmul_ref(x, b.transform.w_v->value)), 1e-15);
}

TEST(NoConfounder, ZeroMlpWeightsGiveBias) {
  std::mt19937_64 rng(2);
  ParameterStore s;
  auto b = NoConfounderBlock::create(s, "ncf", 3, 4, 5, 2, rng);
  for (auto& l : b.mlp.layers) l.weight->value.fill(0.0);
  b.mlp.layers.back().bias->value = Tensor::from_rows({{0.5, -3}});
  Tape t;
  auto out = ncf_forward(Tokens::single(t.constant(random_normal({4, 3}, 1.0, rng))), b);
  EXPECT_EQ(out.output.value(), Tensor::from_rows({{0.5, -3}}));
}

TEST(NoConfounder, MatchesStraightLineAndPooledPath) {
  std::mt19937_64 rng(3);
  ParameterStore s;
  auto b = NoConfounderBlock::create(s, "ncf", 3, 4, 5, 2, rng);
  randomise_biases(s, rng);
  Tensor x = random_normal({4, 3}, 1.0, rng);
  Tensor ref = mlp_ref(ct::mean_rows_ref(att_ref(x, x, b.transform)), b.mlp);
  Tape t;
  Tokens xs = Tokens::single(t.constant(x));
  EXPECT_LT(ct::max_abs_diff(ncf_forward(xs, b).output.value(), ref), 1e-12);
  auto pooled = ncf_forward(xs, b, false);
  EXPECT_FALSE(pooled.stream);
  EXPECT_LT(ct::max_abs_diff(pooled.output.value(), ref), 1e-12);
}

TEST(NoConfounder, WidthMismatchThrows) {
  std::mt19937_64 rng(4);
  ParameterStore s;
  auto b = NoConfounderBlock::create(s, "ncf", 3, 4, 5, 2, rng);
  Tape t;
  EXPECT_THROW(ncf_forward(Tokens::single(t.constant(Tensor::matrix(2, 4))), b), DimensionError);
}

TEST(NoConfounder, GradientMatchesFiniteDifferences) {
  for (unsigned seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    ParameterStore s;
    auto b = NoConfounderBlock::create(s, "ncf", 3, 3, 4, 3, rng);
    Tensor x = random_normal({seed + 1, 3}, 1.0, rng);
    int y[] = {static_cast<int>(seed % 3)};
    auto rep = ct::check_gradients(s, [&](Tape& t) {
      return cross_entropy(ncf_forward(Tokens::single(t.constant(x)), b).output, y);
    });
    EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  }
}

TEST(BackDoor, SharedProjectionsAndZEqualXGiveEqualExpectations) {
  std::mt19937_64 rng(5);
  ParameterStore s;
  auto b = BackDoorBlock::create(s, "bd", 3, 3, 4, 5, 2, rng);
  b.confounder_expectation = b.input_expectation;
  Tensor x = random_normal({3, 3}, 1.0, rng);
  Tape t;
  Tokens xs = Tokens::single(t.constant(x));
  Var x_pool = pooled_attention(xs, xs, b.input_expectation);
  Var z_pool = pooled_attention(xs, xs, b.confounder_expectation);
  EXPECT_EQ(x_pool.value(), z_pool.value());
  Tensor ref = mlp_ref(concat_ref(x_pool.value(), x_pool.value()), b.mlp);
  EXPECT_LT(ct::max_abs_diff(bd_forward(xs, xs, b).output.value(), ref), 1e-12);
}

TEST(BackDoor, SingleInputTokenMakesBothExpectationsTheProjectedRow) {
  std::mt19937_64 rng(6);
  ParameterStore s;
  auto b = BackDoorBlock::create(s, "bd", 3, 3, 4, 5, 2, rng);
  Tensor x = random_normal({1, 3}, 1.0, rng), z = random_normal({4, 3}, 1.0, rng);
  Tape t;
  auto out = bd_forward(Tokens::single(t.constant(x)), Tokens::single(t.constant(z)), b);
  EXPECT_LT(ct::max_abs_diff(out.stream->rows.value(), ct::matmul_ref(x, b.input_expectation.w_v->value)), 1e-15);
  Tensor zx = ct::matmul_ref(x, b.confounder_expectation.w_v->value);
  Tensor ref = mlp_ref(concat_ref(ct::matmul_ref(x, b.input_expectation.w_v->value), zx), b.mlp);
  EXPECT_LT(ct::max_abs_diff(out.output.value(), ref), 1e-12);
}

TEST(BackDoor, MatchesStraightLineEvaluation) {
  std::mt19937_64 rng(7);
  ParameterStore s;
  auto b = BackDoorBlock::create(s, "bd", 3, 2, 4, 5, 3, rng);
  randomise_biases(s, rng);
  Tensor x = random_normal({5, 3}, 1.0, rng), z = random_normal({2, 2}, 1.0, rng);
  Tensor ref = mlp_ref(concat_ref(ct::mean_rows_ref(att_ref(x, x, b.input_expectation)),
                                  ct::mean_rows_ref(att_ref(z, x, b.confounder_expectation))),
                       b.mlp);
  Tape t;
  Tokens xs = Tokens::single(t.constant(x)), zs = Tokens::single(t.constant(z));
  EXPECT_LT(ct::max_abs_diff(bd_forward(xs, zs, b).output.value(), ref), 1e-10);
  EXPECT_LT(ct::max_abs_diff(bd_forward(xs, zs, b, false).output.value(), ref), 1e-10);
  EXPECT_LT(ct::max_abs_diff(bd_forward(xs, zs, b).stream->rows.value(), att_ref(x, x, b.input_expectation)), 1e-12);
}

TEST(BackDoor, EmptyConfounderThrows) {
  std::mt19937_64 rng(8);
  ParameterStore s;
  auto b = BackDoorBlock::create(s, "bd", 3, 3, 4, 5, 2, rng);
  Tape t;
  EXPECT_THROW(bd_forward(t, Tensor::matrix(2, 3), Tensor(), b), ContractError);
}

TEST(BackDoor, GradientMatchesFiniteDifferences) {
  for (unsigned seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    ParameterStore s;
    auto b = BackDoorBlock::create(s, "bd", 3, 3, 3, 4, 3, rng);
    Tensor x = random_normal({seed + 1, 3}, 1.0, rng), z = random_normal({2, 3}, 1.0, rng);
    int y[] = {1};
    auto rep = ct::check_gradients(s, [&](Tape& t) {
      return cross_entropy(bd_forward(Tokens::single(t.constant(x)), Tokens::single(t.constant(z)), b).output, y);
    });
    EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  }
}

TEST(FrontDoor, SingleCentroidGivesConstantStream) {
  std::mt19937_64 rng(9);
  ParameterStore s;
  auto b = FrontDoorBlock::create(s, "fd", 3, 3, 4, 5, 2, rng);
  GlobalDictionary dict(random_normal({1, 3}, 1.0, rng));
  Tape t;
  auto out = fd_forward(Tokens::single(t.constant(random_normal({4, 3}, 1.0, rng))), dict, b);
  Tensor vp = ct::matmul_ref(dict.centroids(), b.dictionary_expectation.w_v->value);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.stream->rows.value().at(i, j), vp.at(0, j), 1e-15);
}

TEST(FrontDoor, DictionaryEqualToInputMatchesMediatorPath) {
  std::mt19937_64 rng(10);
  ParameterStore s;
  auto b = FrontDoorBlock::create(s, "fd", 3, 3, 4, 5, 2, rng);
  b.dictionary_expectation = b.mediator_expectation;
  Tensor x = random_normal({4, 3}, 1.0, rng);
  GlobalDictionary dict(x);
  Tape t;
  Tokens xs = Tokens::single(t.constant(x));
  auto out = fd_forward(xs, dict, b);
  Tensor m_exp = attention(xs, xs, b.mediator_expectation).rows.value();
  EXPECT_LT(ct::max_abs_diff(out.stream->rows.value(), m_exp), 1e-14);

  // Same computational shape as the back-door block once keys coincide.
  ParameterStore s2;
  auto bd = BackDoorBlock::create(s2, "bd", 3, 3, 4, 5, 2, rng);
  bd.input_expectation = b.dictionary_expectation;
  bd.confounder_expectation = b.mediator_expectation;
  bd.mlp = b.mlp;
  Var shared = bd_forward(xs, xs, bd).output;
  EXPECT_LT(ct::max_abs_diff(shared.value(), out.output.value()), 1e-13);
}

TEST(FrontDoor, MatchesStraightLineEvaluation) {
  std::mt19937_64 rng(11);
  ParameterStore s;
  auto b = FrontDoorBlock::create(s, "fd", 3, 3, 4, 5, 3, rng);
  randomise_biases(s, rng);
  Tensor x = random_normal({5, 3}, 1.0, rng);
  GlobalDictionary dict(random_normal({6, 3}, 1.0, rng));
  Tensor ref = mlp_ref(concat_ref(ct::mean_rows_ref(att_ref(x, dict.centroids(), b.dictionary_expectation)),
                                  ct::mean_rows_ref(att_ref(x, x, b.mediator_expectation))),
                       b.mlp);
  Tape t;
  Tokens xs = Tokens::single(t.constant(x));
  EXPECT_LT(ct::max_abs_diff(fd_forward(xs, dict, b).output.value(), ref), 1e-10);
  EXPECT_LT(ct::max_abs_diff(fd_forward(xs, dict, b, false).output.value(), ref), 1e-10);
}

TEST(FrontDoor, UnbuiltDictionaryThrows) {
  std::mt19937_64 rng(12);
  ParameterStore s;
  auto b = FrontDoorBlock::create(s, "fd", 3, 3, 4, 5, 2, rng);
  Tape t;
  EXPECT_THROW(fd_forward(Tokens::single(t.constant(Tensor::matrix(2, 3))), GlobalDictionary(), b), StateError);
}

TEST(FrontDoor, GradientMatchesFiniteDifferences) {
  for (unsigned seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    ParameterStore s;
    auto b = FrontDoorBlock::create(s, "fd", 3, 3, 3, 4, 3, rng);
    Tensor x = random_normal({seed + 1, 3}, 1.0, rng);
    GlobalDictionary dict(random_normal({3, 3}, 1.0, rng));
    int y[] = {2};
    auto rep = ct::check_gradients(s, [&](Tape& t) {
      return cross_entropy(fd_forward(Tokens::single(t.constant(x)), dict, b).output, y);
    });
    EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  }
}

TEST(Blocks, OutputsInvariantToInputTokenOrder) {
  std::mt19937_64 rng(13);
  ParameterStore s;
  auto n = NoConfounderBlock::create(s, "ncf", 3, 4, 5, 2, rng);
  auto bd = BackDoorBlock::create(s, "bd", 3, 3, 4, 5, 2, rng);
  auto fd = FrontDoorBlock::create(s, "fd", 3, 3, 4, 5, 2, rng);
  GlobalDictionary dict(random_normal({4, 3}, 1.0, rng));
  Tensor x = random_normal({5, 3}, 1.0, rng), z = random_normal({3, 3}, 1.0, rng);
  Tensor xp = permute_rows(x, {4, 2, 0, 3, 1});
  Tape t;
  Tokens a = Tokens::single(t.constant(x)), b = Tokens::single(t.constant(xp)), zs = Tokens::single(t.constant(z));
  // Copies: later forwards grow the tape and may move earlier node values.
  auto same = [](Var u, Var v) { return ct::max_abs_diff(Tensor(u.value()), Tensor(v.value())); };
  EXPECT_LT(same(ncf_forward(a, n).output, ncf_forward(b, n).output), 1e-12);
  EXPECT_LT(same(bd_forward(a, zs, bd).output, bd_forward(b, zs, bd).output), 1e-12);
  EXPECT_LT(same(fd_forward(a, dict, fd).output, fd_forward(b, dict, fd).output), 1e-12);
}

TEST(Blocks, BatchedEqualsPerExample) {
  std::mt19937_64 rng(14);
  ParameterStore s;
  auto n = NoConfounderBlock::create(s, "ncf", 3, 4, 5, 2, rng);
  auto bd = BackDoorBlock::create(s, "bd", 3, 3, 4, 5, 2, rng);
  auto fd = FrontDoorBlock::create(s, "fd", 3, 3, 4, 5, 2, rng);
  GlobalDictionary dict(random_normal({4, 3}, 1.0, rng));
  const std::size_t B = 3, nx = 4, nz = 2;
  Tensor x = random_normal({B * nx, 3}, 1.0, rng), z = random_normal({B * nz, 3}, 1.0, rng);
  Tape t;
  Tokens xs(t.constant(x), nx), zs(t.constant(z), nz);
  Var o0 = ncf_forward(xs, n).output, o1 = bd_forward(xs, zs, bd).output, o2 = fd_forward(xs, dict, fd).output;
  for (std::size_t e = 0; e < B; ++e) {
    Tensor xe = Tensor::matrix(nx, 3), ze = Tensor::matrix(nz, 3);
    std::copy_n(x.data().begin() + e * nx * 3, nx * 3, xe.data().begin());
    std::copy_n(z.data().begin() + e * nz * 3, nz * 3, ze.data().begin());
    Tokens xe_t = Tokens::single(t.constant(xe)), ze_t = Tokens::single(t.constant(ze));
    const Var singles[] = {ncf_forward(xe_t, n).output, bd_forward(xe_t, ze_t, bd).output,
                           fd_forward(xe_t, dict, fd).output};
    const Var batched[] = {o0, o1, o2};
    for (int k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < 2; ++j)
        EXPECT_NEAR(batched[k].value().at(e, j), singles[k].value().at(0, j), 1e-12) << "block " << k;
  }
}

TEST(KMeans, KEqualsNRecoversThePoints) {
  Tensor pts = Tensor::from_rows({{0, 0}, {1, 5}, {-3, 2}, {4, -1}});
  auto dict = build_dictionary(pts, 4, 1);
  std::set<std::vector<double>> want, got;
  for (std::size_t i = 0; i < 4; ++i) {
    want.insert({pts.at(i, 0), pts.at(i, 1)});
    got.insert({dict.centroids().at(i, 0), dict.centroids().at(i, 1)});
  }
  EXPECT_EQ(want, got);
}

TEST(KMeans, RecoversPlantedClusters) {
  std::mt19937_64 rng(15);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t per = 500, d = 3;
  Tensor pts = Tensor::matrix(2 * per, d);
  for (std::size_t i = 0; i < 2 * per; ++i)
    for (std::size_t j = 0; j < d; ++j) pts.at(i, j) = (i < per ? 5.0 : -5.0) + noise(rng);
  // Planted means estimated directly from the generated halves.
  Tensor m0 = Tensor::matrix(1, d), m1 = Tensor::matrix(1, d);
  for (std::size_t i = 0; i < per; ++i)
    for (std::size_t j = 0; j < d; ++j) m0.at(0, j) += pts.at(i, j) / per, m1.at(0, j) += pts.at(per + i, j) / per;
  auto c = build_dictionary(pts, 2, 3).centroids();
  const bool first_is_pos = c.at(0, 0) > 0;
  for (std::size_t j = 0; j < d; ++j) {
    EXPECT_NEAR(c.at(first_is_pos ? 0 : 1, j), 5.0, 0.1);
    EXPECT_NEAR(c.at(first_is_pos ? 1 : 0, j), -5.0, 0.1);
    EXPECT_NEAR(c.at(first_is_pos ? 0 : 1, j), m0.at(0, j), 1e-12);
    EXPECT_NEAR(c.at(first_is_pos ? 1 : 0, j), m1.at(0, j), 1e-12);
  }
}

TEST(KMeans, SingleClusterIsColumnMean) {
  std::mt19937_64 rng(16);
  Tensor pts = random_normal({37, 4}, 2.0, rng);
  auto c = build_dictionary(pts, 1, 9).centroids();
  EXPECT_LT(ct::max_abs_diff(c, ct::mean_rows_ref(pts)), 1e-12);
}

TEST(KMeans, ObjectiveNeverIncreases) {
  std::mt19937_64 rng(17);
  Tensor pts = random_normal({300, 2}, 1.0, rng);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto res = kmeans(pts, 7, seed, 100);
    ASSERT_FALSE(res.wcss_history.empty());
    for (std::size_t i = 1; i < res.wcss_history.size(); ++i)
      EXPECT_LE(res.wcss_history[i], res.wcss_history[i - 1] + 1e-12);
  }
}

TEST(KMeans, TooFewPointsThrows) {
  EXPECT_THROW(build_dictionary(Tensor::matrix(3, 2), 4, 0), ContractError);
}

TEST(KMeans, DeterministicPerSeed) {
  std::mt19937_64 rng(18);
  Tensor pts = random_normal({100, 3}, 1.0, rng);
  EXPECT_EQ(build_dictionary(pts, 5, 42).centroids(), build_dictionary(pts, 5, 42).centroids());
}
