#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "stmbr/autograd.hpp"

using namespace stmbr;

namespace {

// Fixed random weights turn a tensor output into a scalar so the whole
// Jacobian is exercised by one backward pass.
Var<double> weighted_sum(const Var<double>& x, uint64_t seed) {
  Rng rng(seed);
  Tensor<double> w(x->value.shape);
  for (auto& v : w.data) v = rng.uniform(-1, 1);
  auto wx = detail::make_op<double>(Tensor<double>::scalar([&] {
                                      double acc = 0;
                                      for (size_t i = 0; i < w.data.size(); ++i)
                                        acc += w.data[i] * x->value.data[i];
                                      return acc;
                                    }()),
                                    "weighted_sum", {x}, [x, w](Node<double>& self) {
                                      Tensor<double> g(w.shape);
                                      for (size_t i = 0; i < w.data.size(); ++i)
                                        g.data[i] = w.data[i] * self.grad.data[0];
                                      x->add_grad(g);
                                    });
  return wx;
}

}  // namespace

TEST_CASE("backward of sum gives all-ones gradient") {
  auto x = parameter(oracle::random_tensor<double>({2, 3, 4, 4}, *new Rng(1)));
  auto loss = vsum(x);
  backward(loss);
  for (double g : x->grad.data) CHECK(g == 1.0);
}

TEST_CASE("identity dense passes gradient through unchanged") {
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at2(i, i) = 1;
  Rng rng(2);
  auto x = parameter(oracle::random_tensor<double>({2, 3}, rng));
  auto w = constant(eye);
  auto out = vdense(x, w, Var<double>{});
  auto loss = weighted_sum(out, 7);
  backward(loss);
  // d(loss)/dx == the weights used by weighted_sum.
  Rng check(7);
  for (double g : x->grad.data) CHECK(g == doctest::Approx(check.uniform(-1, 1)).epsilon(1e-12));
}

TEST_CASE("unused parameters get zero gradients") {
  Rng rng(3);
  auto x = parameter(oracle::random_tensor<double>({2, 2}, rng));
  auto unused = parameter(oracle::random_tensor<double>({4}, rng));
  backward(vsum(x));
  CHECK(unused->grad.empty());
  for (double g : unused->grad_or_zeros().data) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = parameter(Tensor<double>({2, 2}));
  auto y = vrelu(x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("backward detects cycles and missing forward records") {
  auto x = parameter(Tensor<double>({1}, {2.0}));
  auto y = vrelu(x);
  y->parents.push_back(y);  // malformed graph
  CHECK_THROWS_WITH_AS(backward(y), doctest::Contains("cycle"), std::runtime_error);

  auto dead = constant(Tensor<double>::scalar(1.0));
  CHECK_THROWS_WITH_AS(backward(dead), doctest::Contains("missing forward record"),
                       std::runtime_error);
}

TEST_CASE("grad_check: dense") {
  Rng rng(101);
  std::vector<Tensor<double>> inputs{oracle::random_tensor<double>({3, 5}, rng),
                                     oracle::random_tensor<double>({5, 4}, rng),
                                     oracle::random_tensor<double>({4}, rng)};
  auto err = grad_check(
      [](const std::vector<Var<double>>& v) {
        return weighted_sum(vdense(v[0], v[1], v[2]), 11);
      },
      inputs);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check: conv2d with dilation 2") {
  Rng rng(102);
  std::vector<Tensor<double>> inputs{oracle::random_tensor<double>({2, 2, 7, 7}, rng),
                                     oracle::random_tensor<double>({3, 2, 2, 2}, rng),
                                     oracle::random_tensor<double>({3}, rng)};
  auto err = grad_check(
      [](const std::vector<Var<double>>& v) {
        return weighted_sum(vconv2d(v[0], v[1], v[2], 1, 2, Pad{1, 1, 1, 1}), 13);
      },
      inputs);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check: conv2d stride 2") {
  Rng rng(103);
  std::vector<Tensor<double>> inputs{oracle::random_tensor<double>({1, 3, 8, 8}, rng),
                                     oracle::random_tensor<double>({4, 3, 3, 3}, rng),
                                     oracle::random_tensor<double>({4}, rng)};
  auto err = grad_check(
      [](const std::vector<Var<double>>& v) {
        return weighted_sum(vconv2d(v[0], v[1], v[2], 2, 1, Pad{}), 17);
      },
      inputs);
  CHECK(err < 1e-4);
}

TEST_CASE("grad_check: pools and unpool") {
  Rng rng(104);
  std::vector<Tensor<double>> inputs{oracle::random_tensor<double>({2, 2, 6, 6}, rng)};
  auto err_max = grad_check(
      [](const std::vector<Var<double>>& v) {
        return weighted_sum(vmax_pool(v[0], 2, 2).out, 19);
      },
      inputs);
  CHECK(err_max < 1e-6);
  auto err_avg = grad_check(
      [](const std::vector<Var<double>>& v) {
        return weighted_sum(vavg_pool(v[0], 2, 1, Pad{0, 0, 1, 1}), 23);
      },
      inputs);
  CHECK(err_avg < 1e-6);
  auto err_unpool = grad_check(
      [](const std::vector<Var<double>>& v) {
        auto p = vmax_pool(v[0], 2, 2);
        return weighted_sum(vmax_unpool(p.out, p.indices, v[0]->value.shape), 29);
      },
      inputs);
  CHECK(err_unpool < 1e-6);
}

TEST_CASE("grad_check: relu probed away from the kink") {
  Rng rng(105);
  Tensor<double> x({1, 1, 4, 4});
  for (auto& v : x.data) {
    do {
      v = rng.uniform(-1, 1);
    } while (std::abs(v) <= 1e-4);  // |x| > 10*eps
  }
  auto err = grad_check(
      [](const std::vector<Var<double>>& v) { return weighted_sum(vrelu(v[0]), 31); }, {x});
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check: sigmoid, softmax, gap, concat, add, pixel gate") {
  Rng rng(106);
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) { return weighted_sum(vsigmoid(v[0]), 37); },
        {oracle::random_tensor<double>({2, 3}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) { return weighted_sum(vsoftmax_rows(v[0]), 41); },
        {oracle::random_tensor<double>({3, 4}, rng, -2, 2)});
    CHECK(err < 1e-6);
  }
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) {
          return weighted_sum(vsoftmax_channels(v[0]), 43);
        },
        {oracle::random_tensor<double>({2, 3, 3, 3}, rng, -2, 2)});
    CHECK(err < 1e-6);
  }
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) { return weighted_sum(vglobal_avg_pool(v[0]), 47); },
        {oracle::random_tensor<double>({2, 3, 4, 4}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) {
          return weighted_sum(vconcat<double>({v[0], v[1]}), 53);
        },
        {oracle::random_tensor<double>({1, 2, 3, 3}, rng),
         oracle::random_tensor<double>({1, 3, 3, 3}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) { return weighted_sum(vadd(v[0], v[1]), 59); },
        {oracle::random_tensor<double>({2, 2, 2, 2}, rng),
         oracle::random_tensor<double>({2, 2, 2, 2}, rng)});
    CHECK(err < 1e-6);
  }
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) {
          return weighted_sum(vmul_pixel_gate(v[0], v[1]), 61);
        },
        {oracle::random_tensor<double>({2, 3, 3, 3}, rng),
         oracle::random_tensor<double>({2, 1, 3, 3}, rng)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("grad_check: dropout with a replayed mask") {
  Rng rng(107);
  auto x = oracle::random_tensor<double>({1, 1, 6, 6}, rng);
  auto err = grad_check(
      [](const std::vector<Var<double>>& v) {
        Rng mask_rng(777);  // same mask on every evaluation
        return weighted_sum(vdropout(v[0], 0.4, mask_rng, true), 67);
      },
      {x});
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check: cross entropy through softmax") {
  Rng rng(108);
  {
    auto err = grad_check(
        [](const std::vector<Var<double>>& v) {
          return vcross_entropy(vsoftmax_rows(v[0]), {1, 0, 1});
        },
        {oracle::random_tensor<double>({3, 2}, rng, -2, 2)});
    CHECK(err < 1e-6);
  }
  {
    Tensor<uint8_t> mask({1, 3, 3});
    Rng mrng(9);
    for (auto& v : mask.data) v = mrng.uniform() < 0.5;
    auto err = grad_check(
        [mask](const std::vector<Var<double>>& v) {
          return vcross_entropy_pixels(vsoftmax_channels(v[0]), mask, {0.7, 1.3});
        },
        {oracle::random_tensor<double>({1, 2, 3, 3}, rng, -2, 2)});
    CHECK(err < 1e-6);
  }
}

TEST_CASE("cross entropy values") {
  // Perfect prediction.
  Tensor<double> perfect({1, 2}, {0.0, 1.0});
  auto l1 = vcross_entropy(constant(perfect), {1});
  CHECK(l1->value.data[0] <= 1e-11);
  // Uniform over two classes -> ln 2.
  Tensor<double> uniform({1, 2}, {0.5, 0.5});
  auto l2 = vcross_entropy(constant(uniform), {0});
  CHECK(l2->value.data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // Direct-formula oracle on a random case.
  Rng rng(109);
  auto logits = oracle::random_tensor<double>({4, 3}, rng, -2, 2);
  auto probs = softmax_rows(logits);
  std::vector<int> targets{2, 0, 1, 1};
  std::vector<double> weights{1.0, 2.0, 0.5};
  double direct = 0;
  for (int r = 0; r < 4; ++r)
    direct -= weights[static_cast<size_t>(targets[static_cast<size_t>(r)])] *
              std::log(probs.at2(r, targets[static_cast<size_t>(r)]));
  direct /= 4;
  auto l3 = vcross_entropy(constant(probs), targets, weights);
  CHECK(l3->value.data[0] == doctest::Approx(direct).epsilon(1e-9));
  // Out-of-range target.
  CHECK_THROWS_AS(vcross_entropy(constant(probs), {0, 1, 3, 0}), std::invalid_argument);
}
