#include "doctest.h"

#include <cmath>
#include <limits>

#include "support.hpp"
#include "tinyseq/tensor.hpp"

using namespace tinyseq;
using tinyseq::testing::check_gradients;
using tinyseq::testing::probe_sum;
using tinyseq::testing::random_tensor;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

}  // namespace

TEST_SUITE("tensor_core") {

TEST_CASE("tensor construction validates shape and data") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1}, {1}), ContractError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul identity and projector") {
  Tensor I({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  auto r = matmul(I, m);
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{1, 2, 3, 4});
  Tensor p({2, 2}, {1, 0, 0, 0});
  Tensor b({2, 2}, {5, 6, 7, 8});
  auto q = matmul(p, b);
  CHECK(std::vector<double>(q.data().begin(), q.data().end()) == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3}, std::vector<double>(6, 1.0));
  Tensor b({2, 3}, std::vector<double>(6, 1.0));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("by [2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum against finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor({3, 3}, rng);
    auto b = random_tensor({3, 3}, rng);
    auto r = check_gradients([&] { return sum_all(matmul(a, b)); }, {a, b});
    CHECK_MESSAGE(r.ok(), r.first_failure);
  }
}

TEST_CASE("softmax examples") {
  auto s = softmax_lastdim(Tensor({2}, {0, 0}));
  CHECK(s.at(0) == 0.5);
  CHECK(s.at(1) == 0.5);

  auto m = softmax_lastdim(Tensor({2}, {0, 0}), Tensor({2}, {0, -inf}));
  CHECK(m.at(0) == 1.0);
  CHECK(m.at(1) == 0.0);

  auto t = softmax_lastdim(Tensor({3}, {1, 2, 3}));
  CHECK(std::abs(t.at(0) - 0.09003) < 1e-5);
  CHECK(std::abs(t.at(1) - 0.24473) < 1e-5);
  CHECK(std::abs(t.at(2) - 0.66524) < 1e-5);
}

TEST_CASE("softmax rows sum to one and masked entries are exactly zero") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({2, 4, 5}, rng, false, -50, 50);
    std::vector<double> mask(20, 0.0);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = r + 1; c < 5; ++c) mask[r * 5 + c] = -inf;
    auto s = softmax_lastdim(x, Tensor({4, 5}, mask));
    for (std::size_t row = 0; row < 8; ++row) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        const double v = s.at(row * 5 + c);
        CHECK(std::isfinite(v));
        if (c > row % 4) CHECK(v == 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("fully masked softmax row gives zeros and bumps the counter") {
  const auto before = fully_masked_softmax_rows();
  Tensor x({2, 2}, {1, 2, 3, 4}, true);
  auto s = softmax_lastdim(x, Tensor({2, 2}, {-inf, -inf, 0, 0}));
  CHECK(s.at(0) == 0.0);
  CHECK(s.at(1) == 0.0);
  CHECK(s.at(2) + s.at(3) == doctest::Approx(1.0));
  CHECK(fully_masked_softmax_rows() == before + 1);
  backward(sum_all(s));
  for (double g : x.grad()) CHECK(std::isfinite(g));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("softmax gradient with and without mask") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({3, 4}, rng, true, -3, 3);
    Tensor mask({3, 4}, {0, -inf, -inf, -inf, 0, 0, -inf, -inf, 0, 0, 0, 0});
    auto r1 = check_gradients([&] { return probe_sum(softmax_lastdim(x), 1); }, {x});
    auto r2 = check_gradients([&] { return probe_sum(softmax_lastdim(x, mask), 2); }, {x});
    CHECK_MESSAGE(r1.ok(), r1.first_failure);
    CHECK_MESSAGE(r2.ok(), r2.first_failure);
  }
}

TEST_CASE("elementwise examples") {
  auto r = relu(Tensor({3}, {-1, 0, 2}));
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 2.0);
  CHECK(mean_all(Tensor({2, 2}, {1, 3, 5, 7})).item() == 4.0);
  auto s = sub(Tensor({2}, {5, 1}), Tensor({2}, {2, 3}));
  CHECK(s.at(0) == 3.0);
  CHECK(s.at(1) == -2.0);
  CHECK(mul_scalar(Tensor({1}, {2}), 1.5).item() == 3.0);
  CHECK_THROWS_AS(add(Tensor({2}, {1, 2}), Tensor({3}, {1, 2, 3})), DimensionError);
  CHECK_THROWS_AS(sub(Tensor({2}, {1, 2}), Tensor({2, 1}, {1, 2})), DimensionError);
  CHECK_THROWS_AS(mul(Tensor({2}, {1, 2}), Tensor({1}, {1})), DimensionError);
}

TEST_CASE("mean_all gradient is 1/N") {
  Tensor x({2, 2}, {1, 3, 5, 7}, true);
  backward(mean_all(x));
  for (double g : x.grad()) CHECK(g == 0.25);
  auto r = check_gradients([&] { return mean_all(x); }, {x});
  CHECK(r.ok());
}

TEST_CASE("relu passes gradient only where the input is positive") {
  Tensor x({4}, {-2, -0.5, 0.5, 3}, true);
  backward(sum_all(relu(x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1, 1});
}

TEST_CASE("elementwise gradients against finite differences") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({2, 3}, rng);
    auto check = [&](auto&& f, std::uint64_t probe) {
      auto r = check_gradients([&] { return probe_sum(f(), probe); }, {a, b});
      CHECK_MESSAGE(r.ok(), r.first_failure);
    };
    check([&] { return add(a, b); }, 1);
    check([&] { return sub(a, b); }, 2);
    check([&] { return mul(a, b); }, 3);
    check([&] { return mul_scalar(add(a, b), -1.7); }, 4);
    check([&] { return relu(mul(a, b)); }, 5);
    check([&] { return transpose(a); }, 6);
    auto r = check_gradients([&] { return mean_all(mul(a, b)); }, {a, b});
    CHECK(r.ok());
  }
}

TEST_CASE("linear and narrow gradients") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({3, 4}, rng);
    auto b = random_tensor({3}, rng);
    auto r = check_gradients([&] { return probe_sum(linear(x, w, b), 7); }, {x, w, b});
    CHECK_MESSAGE(r.ok(), r.first_failure);
    auto n = check_gradients([&] { return probe_sum(narrow(w, 1, 2), 8); }, {w});
    CHECK_MESSAGE(n.ok(), n.first_failure);
  }
}

TEST_CASE("dropout gradient follows the sampled mask") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({4, 5}, rng);
    auto r = check_gradients(
        [&] {
          std::mt19937_64 mask_rng(100 + trial);
          return probe_sum(dropout(x, 0.3, mask_rng), 9);
        },
        {x});
    CHECK_MESSAGE(r.ok(), r.first_failure);
  }
}

TEST_CASE("backward of a leaf seeds one") {
  auto x = Tensor::scalar(3.0, true);
  backward(x);
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor x({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul_scalar(x, 2.0)), ContractError);
}

TEST_CASE("scalar regression gradient matches the closed form") {
  Tensor x({4}, {0.5, -1.0, 2.0, 3.0});
  Tensor y({4}, {1.0, 0.0, -1.0, 2.0});
  Tensor W({1, 1}, {0.7}, true);
  auto out = transpose(matmul(Tensor({4, 1}, {0.5, -1.0, 2.0, 3.0}), W));  // w * x as [1x4]
  auto diff = sub(out, Tensor({1, 4}, {1.0, 0.0, -1.0, 2.0}));
  backward(mean_all(mul(diff, diff)));
  double expected = 0.0;
  for (std::size_t i = 0; i < 4; ++i) expected += (0.7 * x.at(i) - y.at(i)) * x.at(i);
  expected = 2.0 * expected / 4.0;
  CHECK(W.grad()[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("gradient accumulation is additive and zero_grad resets") {
  Tensor x({3}, {1, -2, 4}, true);
  auto loss = [&] { return sum_all(mul(x, x)); };
  backward(loss());
  std::vector<double> once(x.grad().begin(), x.grad().end());
  backward(loss());
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("unreachable leaves are untouched") {
  Tensor used({2}, {1, 2}, true);
  Tensor unused({2}, {3, 4}, true);
  backward(sum_all(used));
  CHECK(used.has_grad());
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("tape replays each recorded operation exactly once") {
  std::mt19937_64 rng(31);
  auto a = random_tensor({3, 3}, rng);
  auto b = random_tensor({3, 3}, rng);
  auto shared = matmul(a, b);
  auto loss = sum_all(add(relu(shared), mul(shared, shared)));
  auto tape = Tape::record(loss);
  // matmul, relu, mul, add, sum_all
  CHECK(tape.operation_count() == 5);
  tape.reset_interior_grads();
  loss.mutable_grad()[0] = 1.0;
  CHECK(tape.replay_backward() == tape.operation_count());
  CHECK(a.has_grad());
  CHECK(b.has_grad());
}

TEST_CASE("bounded inputs never produce non-finite values") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({3, 4}, rng, true, -50, 50);
    auto w = random_tensor({4, 4}, rng, true, -50, 50);
    auto out = softmax_lastdim(relu(linear(x, w)));
    for (double v : out.data()) CHECK(std::isfinite(v));
    backward(sum_all(mul(out, out)));
    for (double g : x.grad()) CHECK(std::isfinite(g));
  }
}

}  // TEST_SUITE
