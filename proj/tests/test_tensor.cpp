#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "selrank/checkpoint.hpp"
#include "selrank/gradcheck.hpp"
#include "selrank/param_store.hpp"
#include "selrank/tensor.hpp"

using namespace selrank;

namespace {

Mat random_mat(Index r, Index c, SeededRng& rng, double lo = -1.0,
               double hi = 1.0) {
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

TEST_CASE("matmul by identity returns the operand") {
  SeededRng rng(7);
  Mat a = random_mat(3, 3, rng);
  Tensor out = matmul(Tensor::matrix(Mat::Identity(3, 3)), Tensor::matrix(a));
  CHECK(out.value() == a);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor p = softmax(Tensor::row({1.0, 1.0, 1.0}));
  for (Index i = 0; i < 3; ++i)
    CHECK(p.value()(0, i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("sigmoid at zero") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
}

TEST_CASE("backward: d(x^2)/dx = 2x") {
  Tensor x = Tensor::leaf(Mat::Constant(1, 1, 3.0), 0);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward: dot is bilinear") {
  Tensor a = Tensor::row({1.0, 2.0});
  Tensor b = Tensor::leaf(Mat::Zero(1, 2), 1);
  backward(dot(a, b));
  CHECK(b.grad()(0, 0) == doctest::Approx(1.0));
  CHECK(b.grad()(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("backward: softmax cross-entropy with equal logits") {
  Tensor logits = Tensor::leaf(Mat::Zero(1, 2), 1);
  Tensor nll = scale(log(element(softmax(logits), 0)), -1.0);
  backward(nll);
  const Mat& g = logits.grad();
  CHECK(g(0, 0) + g(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g(0, 0) == doctest::Approx(-g(0, 1)));
  CHECK(g(0, 0) == doctest::Approx(-0.5));
}

TEST_CASE("backward accumulates across calls without reset") {
  Tensor x = Tensor::leaf(Mat::Constant(1, 1, 2.0), 0);
  backward(mul(x, x));
  backward(mul(x, x));
  CHECK(x.grad()(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor v = Tensor::leaf(Mat::Zero(1, 3), 1);
  CHECK_THROWS_AS(backward(scale(v, 2.0)), std::invalid_argument);
}

TEST_CASE("straight-through: forward is bit-identical to its input") {
  SeededRng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Mat t = random_mat(1, 5, rng, -10.0, 10.0);
    Tensor s = Tensor::scalar(rng.uniform01());
    Tensor out = straight_through_scale(Tensor::matrix(t), s);
    for (Index i = 0; i < 5; ++i) CHECK(out.value()(0, i) == t(0, i));
  }
}

TEST_CASE("straight-through backward is the scaled surrogate") {
  SUBCASE("weight gradient is dot(t, upstream)") {
    Tensor t = Tensor::row({1.0, 2.0, 3.0});
    Tensor s = Tensor::leaf(Mat::Constant(1, 1, 0.4), 0);
    backward(sum_all(straight_through_scale(t, s)));  // upstream of ones
    CHECK(s.grad()(0, 0) == doctest::Approx(6.0));
  }
  SUBCASE("zero weight kills the token gradient") {
    Tensor t = Tensor::leaf(Mat::Constant(1, 3, 2.0), 1);
    Tensor s = Tensor::scalar(0.0);
    backward(sum_all(straight_through_scale(t, s)));
    CHECK(t.grad().isZero(0.0));
  }
}

TEST_CASE("gradient_check: sigmoid network against central differences") {
  ParameterStore params;
  SeededRng init(3);
  Tensor w = params.create("w", 4, 3, 2, Init::kXavier, init);
  Tensor x = Tensor::matrix(random_mat(3, 2, init));
  auto build = [&] { return sum_all(sigmoid(matmul(w, x))); };
  SeededRng pick(5);
  auto res = gradient_check(build, params, 1e-5, pick);
  CHECK(res.ok);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradient_check: constant function has zero gradients") {
  ParameterStore params;
  SeededRng init(3);
  params.create("w", 2, 2, 2, Init::kXavier, init);
  auto build = [] { return Tensor::scalar(42.0); };
  SeededRng pick(5);
  auto res = gradient_check(build, params, 1e-5, pick);
  CHECK(res.ok);
  CHECK(res.max_rel_err == doctest::Approx(0.0));
}

// Every registered op, checked against central finite differences on random
// shapes. Domain-limited ops get their inputs squashed into range first.
TEST_CASE("per-op gradients match finite differences") {
  SeededRng shape_rng(17);
  for (int trial = 0; trial < 4; ++trial) {
    const Index r = 2 + static_cast<Index>(shape_rng.below(7));
    const Index c = 2 + static_cast<Index>(shape_rng.below(7));
    ParameterStore params;
    SeededRng init(100 + trial);
    Tensor a = params.create("a", r, c, 2, Init::kXavier, init);
    Tensor b = params.create("b", r, c, 2, Init::kXavier, init);
    Tensor sq = params.create("sq", c, r, 2, Init::kXavier, init);
    Tensor rv = params.create("rv", 1, c, 1, Init::kXavier, init);
    Tensor cv = params.create("cv", 1, r, 1, Init::kXavier, init);

    std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return sum_all(add(a, b)); }},
        {"sub", [&] { return sum_all(sub(a, b)); }},
        {"mul", [&] { return sum_all(mul(a, b)); }},
        {"div", [&] {
           return sum_all(div(a, add(sigmoid(b), Tensor::matrix(Mat::Ones(r, c)))));
         }},
        {"scale", [&] { return sum_all(scale(a, -1.7)); }},
        {"matmul", [&] { return sum_all(matmul(a, sq)); }},
        {"transpose", [&] { return sum_all(matmul(transpose(a), b)); }},
        {"dot", [&] { return dot(rv, mean(a, 0)); }},
        {"gather_rows", [&] { return sum_all(gather_rows(a, {0, r - 1, 0})); }},
        {"concat_rows", [&] { return sum_all(concat_rows({a, b})); }},
        {"concat_cols", [&] { return sum_all(concat_cols({a, b})); }},
        {"concat_scalars", [&] {
           return sum_all(concat_scalars({sum_all(a), mean_all(b)}));
         }},
        {"slice_cols", [&] { return sum_all(slice_cols(a, 1, c - 1)); }},
        {"element", [&] { return element(rv, c - 1); }},
        {"mean0", [&] { return sum_all(mean(a, 0)); }},
        {"mean1", [&] { return sum_all(mean(a, 1)); }},
        {"sum0", [&] { return sum_all(sum(a, 0)); }},
        {"sum1", [&] { return sum_all(sum(a, 1)); }},
        {"max0", [&] { return sum_all(max(a, 0)); }},
        {"max1", [&] { return sum_all(max(a, 1)); }},
        {"exp", [&] { return sum_all(exp(a)); }},
        {"log", [&] {
           return sum_all(log(add(sigmoid(a), Tensor::matrix(Mat::Ones(r, c)))));
         }},
        {"sqrt", [&] {
           return sum_all(sqrt(add(sigmoid(a), Tensor::matrix(Mat::Ones(r, c)))));
         }},
        {"tanh", [&] { return sum_all(tanh(a)); }},
        {"sigmoid", [&] { return sum_all(sigmoid(a)); }},
        {"relu", [&] { return sum_all(relu(a)); }},
        {"log1p_neg", [&] { return sum_all(log1p_neg(scale(sigmoid(a), 0.9))); }},
        {"clamp", [&] { return sum_all(clamp(a, -0.31, 0.29)); }},
        {"softmax", [&] { return sum_all(mul(softmax(a), b)); }},
        {"add_rowvec", [&] { return sum_all(add_rowvec(a, rv)); }},
        {"scale_rows", [&] { return sum_all(scale_rows(a, cv)); }},
        {"layer_norm", [&] { return sum_all(mul(layer_norm(a, rv, rv), b)); }},
        {"dropout", [&] {
           SeededRng drop(7);  // frozen mask across rebuilds
           return sum_all(dropout(a, 0.75, drop, true));
         }},
    };

    for (auto& [name, build] : cases) {
      CAPTURE(name);
      CAPTURE(trial);
      SeededRng pick(31 + trial);
      auto res = gradient_check(build, params, 1e-5, pick, 12);
      CHECK(res.ok);
      CHECK(res.max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("max routes gradient to the first maximal element") {
  Mat x(2, 2);
  x << 2.0, 5.0, 2.0, 7.0;  // column 0 is tied
  Tensor t = Tensor::leaf(x, 2);
  backward(sum_all(max(t, 0)));
  CHECK(t.grad()(0, 0) == 1.0);
  CHECK(t.grad()(1, 0) == 0.0);
  CHECK(t.grad()(0, 1) == 0.0);
  CHECK(t.grad()(1, 1) == 1.0);
}

TEST_CASE("graphs rebuilt from the same seed give identical gradients") {
  auto run = [](std::uint64_t seed) {
    ParameterStore params;
    SeededRng init(seed);
    Tensor w = params.create("w", 4, 4, 2, Init::kXavier, init);
    SeededRng drop(seed + 1);
    Tensor loss = sum_all(dropout(sigmoid(matmul(w, w)), 0.5, drop, true));
    backward(loss);
    return Mat(w.grad());
  };
  Mat g1 = run(99), g2 = run(99);
  CHECK(g1 == g2);
}

TEST_CASE("dropout is the identity in inference mode") {
  SeededRng rng(1);
  Mat x = random_mat(3, 3, rng);
  SeededRng drop(2);
  Tensor out = dropout(Tensor::matrix(x), 0.5, drop, false);
  CHECK(out.value() == x);
}

TEST_CASE("shape and domain violations are rejected") {
  Tensor a = Tensor::matrix(Mat::Zero(2, 3));
  Tensor b = Tensor::matrix(Mat::Zero(3, 2));
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(gather_rows(a, {2}), std::invalid_argument);
  CHECK_THROWS_AS(gather_rows(a, {-1}), std::invalid_argument);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::invalid_argument);
  CHECK_THROWS_AS(softmax(Tensor::row({-kInf, -kInf})), std::invalid_argument);
  CHECK_THROWS_AS(dot(a, b), std::invalid_argument);
}

TEST_CASE("softmax tolerates -inf sentinels") {
  Tensor p = softmax(Tensor::row({0.0, -kInf, 0.0}));
  CHECK(p.value()(0, 0) == doctest::Approx(0.5));
  CHECK(p.value()(0, 1) == 0.0);
  CHECK(p.value()(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("parameter store enforces unique names") {
  ParameterStore params;
  SeededRng rng(1);
  params.create("w", 2, 2, 2, Init::kZeros, rng);
  CHECK_THROWS_AS(params.create("w", 2, 2, 2, Init::kZeros, rng),
                  std::invalid_argument);
}

TEST_CASE("checkpoint round-trips bit-exactly at f32 width") {
  ParameterStore params;
  SeededRng rng(123);
  params.create("ranker.head.w", 5, 1, 2, Init::kXavier, rng);
  params.create("embedding", 7, 4, 2, Init::kXavier, rng);
  std::map<std::string, std::string> cfg{{"model_dim", "4"}, {"note", "a b c"}};

  const std::string p1 = "ckpt_test_1.bin", p2 = "ckpt_test_2.bin";
  save_checkpoint(p1, params, cfg);

  ParameterStore loaded;
  auto cfg2 = load_checkpoint(p1, loaded);
  CHECK(cfg2 == cfg);
  REQUIRE(loaded.names() == params.names());
  for (const auto& name : params.names()) {
    const Mat& orig = params.get(name).value();
    const Mat& back = loaded.get(name).value();
    for (Index r = 0; r < orig.rows(); ++r)
      for (Index c = 0; c < orig.cols(); ++c)
        CHECK(back(r, c) == static_cast<double>(static_cast<float>(orig(r, c))));
  }

  save_checkpoint(p2, loaded, cfg2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
