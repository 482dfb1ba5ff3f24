#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "t4t/array_io.hpp"
#include "t4t/grad_check.hpp"
#include "t4t/ops.hpp"

namespace t4t {
namespace {

template <Scalar T>
Array<T> random_array(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Array<T> a(std::move(shape));
  for (auto& v : a.data()) v = static_cast<T>(u(rng));
  return a;
}

// Independent triple-loop contraction.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Array<double> eye(Shape{2, 2}, {1, 0, 0, 1});
  EXPECT_TRUE(identical(matmul(eye, eye), eye));

  Array<double> a(Shape{2, 2}, {1, 2, 3, 4});
  Array<double> ones(Shape{2, 1}, {1, 1});
  auto c = matmul(a, ones);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(c[0], 3.0);
  EXPECT_DOUBLE_EQ(c[1], 7.0);
}

TEST(Matmul, MatchesNaiveOracleBatched) {
  auto a = random_array<double>({3, 5, 7}, 1);
  auto b = random_array<double>({3, 7, 4}, 2);
  auto c = matmul(a, b);
  for (std::size_t bi = 0; bi < 3; ++bi) {
    std::vector<double> ab(a.data().begin() + bi * 35, a.data().begin() + (bi + 1) * 35);
    std::vector<double> bb(b.data().begin() + bi * 28, b.data().begin() + (bi + 1) * 28);
    auto ref = naive_matmul(ab, bb, 5, 7, 4);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_NEAR(c[bi * 20 + i], ref[i], 1e-12);
  }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Array<float> a(Shape{2, 3});
  Array<float> b(Shape{4, 2});
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 2]"), std::string::npos);
  }
  EXPECT_THROW(matmul(Array<float>(Shape{2, 2, 3}), Array<float>(Shape{3, 3, 2})), ShapeError);
}

TEST(Matmul, GradientOfSumIsRowBroadcastOfColumnSums) {
  auto a = random_array<double>({3, 4}, 3);
  auto b = random_array<double>({4, 2}, 4);
  a.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(sum(matmul(a, b)));
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(a.grad()[i * 4 + p], b[p * 2] + b[p * 2 + 1], 1e-12);

  auto err = grad_check<double>([&](const Array<double>& x) { return sum(matmul(x, b)); },
                                random_array<double>({3, 4}, 5));
  EXPECT_LT(err, 1e-8);
}

TEST(Softmax, KnownValuesAndInvariants) {
  auto s = softmax(Array<double>(Shape{3}, {0, 0, 0}), -1);
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);

  auto t = softmax(Array<double>(Shape{3}, {1, 2, 3}), 0);
  EXPECT_NEAR(t[0], 0.0900, 1e-4);
  EXPECT_NEAR(t[1], 0.2447, 1e-4);
  EXPECT_NEAR(t[2], 0.6652, 1e-4);

  auto x = random_array<float>({4, 5, 6}, 7, -5, 5);
  for (int axis : {0, 1, 2}) {
    auto y = softmax(x, axis);
    const auto sp = detail::split_at(x.shape(), static_cast<std::size_t>(axis));
    for (std::size_t p = 0; p < sp.outer; ++p)
      for (std::size_t q = 0; q < sp.inner; ++q) {
        double total = 0;
        for (std::size_t j = 0; j < sp.extent; ++j) total += y[(p * sp.extent + j) * sp.inner + q];
        EXPECT_NEAR(total, 1.0, 1e-6);
      }
  }
  Array<float> shifted(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) shifted.data()[i] = x[i] + 3.0f;
  auto y0 = softmax(x, 2);
  auto y1 = softmax(shifted, 2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y0[i], y1[i], 1e-6);
}

TEST(Softmax, SumHasZeroGradient) {
  auto err = grad_check<double>([](const Array<double>& x) { return sum(softmax(x, 1)); },
                                random_array<double>({3, 4}, 8));
  EXPECT_LT(err, 1e-6);
}

TEST(LayerNorm, ConstantRowAndAffineMean) {
  Array<double> x(Shape{2, 4}, 3.5);
  Array<double> g(Shape{4}, 1.0), b(Shape{4}, 0.0);
  auto flat = layer_norm(x, g, b);
  for (double v : flat.data()) EXPECT_DOUBLE_EQ(v, 0.0);

  // Mean over the row equals mean(beta) when gamma is uniform.
  auto xr = random_array<double>({3, 8}, 9);
  Array<double> g2(Shape{8}, 2.7);
  auto b2 = random_array<double>({8}, 10);
  auto y = layer_norm(xr, g2, b2);
  double beta_mean = 0;
  for (double v : b2.data()) beta_mean += v / 8;
  auto m = mean_reduce(y, -1);
  for (double v : m.data()) EXPECT_NEAR(v, beta_mean, 1e-6);

  EXPECT_THROW(layer_norm(xr, Array<double>(Shape{7}), b2), ShapeError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  auto x = random_array<double>({3, 6}, 11);
  auto g = random_array<double>({6}, 12, 0.5, 1.5);
  auto b = random_array<double>({6}, 13);
  auto report = grad_check<double>([&]() { return sum(mul(layer_norm(x, g, b), layer_norm(x, g, b))); },
                                   {x, g, b});
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Elementwise, GeluMeanReducePermute) {
  EXPECT_EQ(gelu(Array<double>(Shape{1}, {0.0}))[0], 0.0);
  EXPECT_NEAR(gelu(Array<double>(Shape{1}, {1.0}))[0], 0.8411919906, 1e-9);

  auto m = mean_reduce(Array<double>(Shape{2, 2}, {1, 3, 5, 7}), -1);
  ASSERT_EQ(m.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(m[0], 2.0);
  EXPECT_DOUBLE_EQ(m[1], 6.0);

  auto x = random_array<float>({2, 3, 4, 5}, 14);
  auto p = permute(x, {2, 0, 3, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 5, 3}));
  auto back = permute(p, {1, 3, 0, 2});
  EXPECT_TRUE(identical(back, x));
  EXPECT_TRUE(identical(reshape(reshape(x, {6, 20}), x.shape()), x));
  EXPECT_THROW(permute(x, {0, 0, 1, 2}), ShapeError);
  EXPECT_THROW(reshape(x, {7}), ShapeError);
}

TEST(Elementwise, NoImplicitBroadcasting) {
  Array<float> a(Shape{2, 3}), b(Shape{3});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  Array<float> row(Shape{3}, {1, 2, 3});
  auto e = broadcast_to(row, {2, 3});
  EXPECT_EQ(e.shape(), (Shape{2, 3}));
  EXPECT_FLOAT_EQ(e[4], 2.0f);
  EXPECT_THROW(broadcast_to(Array<float>(Shape{2}), {2, 3}), ShapeError);
}

TEST(Backward, SimpleRulesAndTapeDiscipline) {
  Array<double> x(Shape{4}, {1, -2, 3, 0.5});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto loss = sum(x);
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  EXPECT_THROW(tape.backward(loss), NumericError);

  tape.reset();
  x.zero_grad();
  auto sq = sum(mul(x, x));
  tape.backward(sq);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);

  tape.reset();
  EXPECT_THROW(tape.backward(mul(x, x)), ShapeError);
  Array<double> detached(Shape{}, {1.0});
  EXPECT_THROW(tape.backward(detached), NumericError);
}

TEST(Backward, TapeOrderIsExecutionOrder) {
  Array<double> x(Shape{2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = gelu(scale(x, 2.0));
  auto z = sum(softmax(y, 1));
  EXPECT_EQ(tape.ops(), (std::vector<std::string>{"scale", "gelu", "softmax", "sum"}));
  (void)z;
}

TEST(Backward, ThreeLayerToyNetAgreesWithFiniteDifferences) {
  auto x = random_array<double>({5, 4}, 20);
  auto w1 = random_array<double>({4, 8}, 21), b1 = random_array<double>({8}, 22);
  auto w2 = random_array<double>({8, 8}, 23), b2 = random_array<double>({8}, 24);
  auto w3 = random_array<double>({8, 3}, 25), b3 = random_array<double>({3}, 26);
  auto f = [&]() {
    auto h = gelu(linear(x, w1, b1));
    h = gelu(linear(h, w2, b2));
    auto logits = reshape(linear(h, w3, b3), {1, 5, 3, 1});
    logits = permute(logits, {0, 2, 1, 3});
    std::vector<std::int32_t> t{0, 2, 1, 1, 0};
    return cross_entropy_loss(logits, std::span<const std::int32_t>(t)).loss;
  };
  auto report = grad_check<double>(f, {x, w1, b1, w2, b2, w3, b3});
  EXPECT_LT(report.max_rel_error, 1e-4);
  EXPECT_EQ(report.coordinates, 20u + 32 + 8 + 64 + 8 + 24 + 3);
}

TEST(Backward, RandomCompositesBothPrecisions) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_array<double>({2, 3, 4, 4}, 100 + seed);
    auto f = [](const Array<double>& v) {
      auto r = bilinear_resize(v, 6, 5);
      auto t = map_to_tokens(r);
      return sum(mul(softmax(gelu(t), 2), t));
    };
    EXPECT_LT(grad_check<double>(f, x), 1e-4);

    auto xf = x.cast<float>();
    auto ff = [](const Array<float>& v) {
      auto r = bilinear_resize(v, 6, 5);
      auto t = map_to_tokens(r);
      return sum(mul(softmax(gelu(t), 2), t));
    };
    EXPECT_LT(grad_check<float>(ff, xf, 1e-2), 1e-2);
  }
}

TEST(PatchProjection, IdentityAndPatchSum) {
  auto x = random_array<double>({1, 3, 4, 4}, 30);
  Array<double> eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Array<double> zero_bias(Shape{3}, 0.0);
  EXPECT_TRUE(identical(strided_patch_projection(x, eye, zero_bias, 1, 1), x));

  Array<double> ones(Shape{2, 4, 4}, 1.0);
  Array<double> img(Shape{1, 2, 4, 4});
  for (std::size_t i = 0; i < 32; ++i) img.data()[i] = static_cast<double>(i);
  Array<double> w(Shape{32, 3}, 1.0);
  auto out = strided_patch_projection(img, w, Array<double>(Shape{3}, 0.0), 4, 4);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 1, 1}));
  for (double v : out.data()) EXPECT_DOUBLE_EQ(v, 31.0 * 32.0 / 2.0);

  Array<float> big(Shape{1, 3, 512, 512});
  Array<float> w4(Shape{48, 8}, 0.01f);
  auto emb = strided_patch_projection(big, w4, Array<float>(Shape{8}), 4, 4);
  EXPECT_EQ(emb.shape(), (Shape{1, 8, 128, 128}));

  EXPECT_THROW(strided_patch_projection(Array<double>(Shape{1, 3, 6, 6}), w, zero_bias, 4, 4),
               ShapeError);
}

TEST(PatchProjection, OverlappingKernelGradient) {
  auto x = random_array<double>({2, 2, 4, 4}, 31);
  auto w = random_array<double>({2 * 9, 3}, 32);
  auto b = random_array<double>({3}, 33);
  auto report = grad_check<double>(
      [&]() { return sum(gelu(strided_patch_projection(x, w, b, 3, 1))); }, {x, w, b});
  EXPECT_LT(report.max_rel_error, 1e-4);
}

// Independent bilinear oracle: explicit four-tap weights.
double bilinear_oracle(const std::vector<double>& img, std::size_t h, std::size_t w,
                       std::size_t out_h, std::size_t out_w, std::size_t oy, std::size_t ox) {
  auto coord = [](std::size_t d, std::size_t in, std::size_t out) {
    double s = (d + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return s < 0 ? 0.0 : s;
  };
  const double sy = coord(oy, h, out_h), sx = coord(ox, w, out_w);
  const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(sy), h - 1);
  const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(sx), w - 1);
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ly = sy - y0, lx = sx - x0;
  return (1 - ly) * (1 - lx) * img[y0 * w + x0] + (1 - ly) * lx * img[y0 * w + x1] +
         ly * (1 - lx) * img[y1 * w + x0] + ly * lx * img[y1 * w + x1];
}

TEST(BilinearResize, ClosedFormOracleAndCorners) {
  Array<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = bilinear_resize(x, 4, 4);
  const std::vector<double> img{1, 2, 3, 4};
  for (std::size_t oy = 0; oy < 4; ++oy)
    for (std::size_t ox = 0; ox < 4; ++ox)
      EXPECT_NEAR(y[oy * 4 + ox], bilinear_oracle(img, 2, 2, 4, 4, oy, ox), 1e-12);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[3], 2.0);
  EXPECT_EQ(y[12], 3.0);
  EXPECT_EQ(y[15], 4.0);
  EXPECT_DOUBLE_EQ(y[1], 1.25);

  auto r = random_array<double>({1, 1, 5, 7}, 40);
  std::vector<double> rv(r.data().begin(), r.data().end());
  auto down = bilinear_resize(r, 3, 4);
  for (std::size_t oy = 0; oy < 3; ++oy)
    for (std::size_t ox = 0; ox < 4; ++ox)
      EXPECT_NEAR(down[oy * 4 + ox], bilinear_oracle(rv, 5, 7, 3, 4, oy, ox), 1e-12);
}

TEST(BilinearResize, IdentityConstantAndLinearity) {
  auto x = random_array<float>({2, 3, 8, 6}, 41);
  EXPECT_TRUE(identical(bilinear_resize(x, 8, 6), x));

  Array<float> c(Shape{1, 2, 3, 5}, 0.3f);
  auto up = bilinear_resize(c, 17, 11);
  for (float v : up.data()) EXPECT_EQ(v, 0.3f);

  auto a = random_array<float>({1, 2, 4, 4}, 42);
  auto b = random_array<float>({1, 2, 4, 4}, 43);
  auto lhs = bilinear_resize(add(a, b), 9, 7);
  auto rhs = add(bilinear_resize(a, 9, 7), bilinear_resize(b, 9, 7));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-6);
}

TEST(CrossEntropy, LimitsAndErrors) {
  const std::size_t k = 12;
  Array<double> uniform(Shape{1, k, 2, 2}, 0.0);
  std::vector<std::int32_t> t{0, 5, 11, 3};
  EXPECT_NEAR(cross_entropy_loss(uniform, std::span<const std::int32_t>(t)).loss.item(),
              std::log(12.0), 1e-12);

  Array<double> confident(Shape{1, k, 2, 2}, 0.0);
  for (std::size_t p = 0; p < 4; ++p) confident.data()[static_cast<std::size_t>(t[p]) * 4 + p] = 100.0;
  EXPECT_LT(cross_entropy_loss(confident, std::span<const std::int32_t>(t)).loss.item(), 1e-40);

  std::vector<std::int32_t> ignored(4, 255);
  auto ce = cross_entropy_loss(uniform, std::span<const std::int32_t>(ignored));
  EXPECT_TRUE(ce.all_ignored());
  EXPECT_EQ(ce.loss.item(), 0.0);

  std::vector<std::int32_t> bad{0, 12, 1, 1};
  EXPECT_THROW(cross_entropy_loss(uniform, std::span<const std::int32_t>(bad)), ValidationError);
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical) {
  auto x = random_array<float>({1, 4, 16, 16}, 50);
  auto w = random_array<float>({16, 32}, 51);
  auto run = [&]() {
    auto t = patch_tokens(x, w, Array<float>(Shape{32}), 2, 2);
    auto s = softmax(matmul_nt(t, t), 2);
    return bilinear_resize(tokens_to_map(matmul(s, t), 8, 8), 16, 16);
  };
  EXPECT_TRUE(identical(run(), run()));
}

TEST(ArrayIo, RoundTripAndTruncation) {
  auto a = random_array<double>({2, 3, 4}, 60);
  std::stringstream ss;
  write_array(ss, a);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 7), "T4TARR1");
  EXPECT_EQ(bytes.size(), 7u + 1 + 4 + 3 * 8 + 24 * 8);
  std::stringstream in(bytes);
  EXPECT_TRUE(identical(read_array<double>(in), a));

  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_array<double>(cut), ParseError);
  std::stringstream junk("XXXXXXXX");
  EXPECT_THROW(read_array<float>(junk), ParseError);
}

}  // namespace
}  // namespace t4t

namespace t4t {
namespace {

TEST(FastExp, FloatPathTracksStdExp) {
  double worst = 0;
  for (float x = -80.0f; x < 80.0f; x += 0.01337f) {
    const double ref = std::exp(static_cast<double>(x));
    worst = std::max(worst, std::abs(detail::fast_exp(x) - ref) / ref);
  }
  EXPECT_LT(worst, 1e-6);
  EXPECT_EQ(detail::fast_exp(-1000.0f) >= 0.0f, true);
  EXPECT_LT(detail::fast_exp(-1000.0f), 1e-37f);
  EXPECT_EQ(detail::fast_exp(0.5), std::exp(0.5));
}

}  // namespace
}  // namespace t4t
