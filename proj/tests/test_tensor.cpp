#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "densebox/checkpoint.hpp"
#include "densebox/errors.hpp"
#include "densebox/tensor.hpp"
#include "testutil.hpp"

using namespace densebox;
using testutil::GradCheck;
using testutil::random_tensor;

TEST_CASE("conv2d 1x1 identity weights reproduce the input") {
  Rng rng(7);
  Tensor in = random_tensor({3, 5, 5}, rng);
  Tensor w = Tensor::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w.data()[c * 3 + c] = 1.0;
  Tensor b = Tensor::zeros({3});
  Tensor out = conv2d(in, w, b, 0, nullptr);
  for (int64_t i = 0; i < in.size(); ++i) CHECK(out.data()[i] == in.data()[i]);
}

TEST_CASE("conv2d all-zero weights give the bias everywhere") {
  Rng rng(8);
  Tensor in = random_tensor({2, 4, 4}, rng);
  Tensor w = Tensor::zeros({3, 2, 3, 3});
  Tensor b = Tensor::from_data({3}, {0.5, -1.0, 2.0});
  Tensor out = conv2d(in, w, b, 1, nullptr);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) CHECK(out.at(c, y, x) == b.data()[c]);
    }
  }
}

TEST_CASE("conv2d rejects channel mismatch and bad padding") {
  Tensor in = Tensor::zeros({2, 4, 4});
  Tensor w = Tensor::zeros({1, 3, 3, 3});
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_AS(conv2d(in, w, b, 1, nullptr), ShapeError);
  Tensor w2 = Tensor::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(in, w2, b, 0, nullptr), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  GradCheck gc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 31 + 1);
    const int ic = 1 + static_cast<int>(rng.uniform_index(3));
    const int oc = 1 + static_cast<int>(rng.uniform_index(3));
    const int k = rng.bernoulli(0.5) ? 1 : 3;
    const int h = 3 + static_cast<int>(rng.uniform_index(4));
    const int w = 3 + static_cast<int>(rng.uniform_index(4));
    Tensor in = random_tensor({ic, h, w}, rng).set_requires_grad(true);
    Tensor wt = random_tensor({oc, ic, k, k}, rng).set_requires_grad(true);
    Tensor b = random_tensor({oc}, rng).set_requires_grad(true);
    gc.check([&](Tape* t) { return conv2d(in, wt, b, (k - 1) / 2, t); }, {in, wt, b}, rng);
  }
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("maxpool2 basics") {
  Tensor in = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  Tensor out = maxpool2(in, nullptr);
  CHECK(out.size() == 1);
  CHECK(out.data()[0] == 4.0);

  Tensor c = Tensor::full({2, 4, 4}, 3.25);
  Tensor oc = maxpool2(c, nullptr);
  for (int64_t i = 0; i < oc.size(); ++i) CHECK(oc.data()[i] == 3.25);

  CHECK_THROWS_AS(maxpool2(Tensor::zeros({1, 3, 4}), nullptr), ShapeError);
}

TEST_CASE("maxpool2 ties route gradient to the first element in row-major order") {
  Tensor in = Tensor::full({1, 2, 2}, 1.0);
  in.set_requires_grad(true);
  Tape tape;
  Tensor out = maxpool2(in, &tape);
  std::vector<double> up{1.0};
  tape.backward_from(out, up);
  CHECK(in.grad_data()[0] == 1.0);
  CHECK(in.grad_data()[1] == 0.0);
  CHECK(in.grad_data()[2] == 0.0);
  CHECK(in.grad_data()[3] == 0.0);
}

TEST_CASE("maxpool2 gradients match finite differences") {
  GradCheck gc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 97 + 5);
    const int c = 1 + static_cast<int>(rng.uniform_index(3));
    const int h = 2 * (1 + static_cast<int>(rng.uniform_index(3)));
    const int w = 2 * (1 + static_cast<int>(rng.uniform_index(3)));
    Tensor in = random_tensor({c, h, w}, rng).set_requires_grad(true);
    gc.check([&](Tape* t) { return maxpool2(in, t); }, {in}, rng);
  }
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("relu forward") {
  Tensor neg = Tensor::from_data({1, 1, 3}, {-1.0, -0.5, -2.0});
  Tensor out = relu(neg, nullptr);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == 0.0);

  Tensor pos = Tensor::from_data({1, 1, 3}, {1.0, 0.5, 2.0});
  Tensor out2 = relu(pos, nullptr);
  for (int64_t i = 0; i < out2.size(); ++i) CHECK(out2.data()[i] == pos.data()[i]);
}

TEST_CASE("relu gradients match finite differences") {
  GradCheck gc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 131 + 3);
    Tensor in = random_tensor({2, 3, 4}, rng).set_requires_grad(true);
    gc.check([&](Tape* t) { return relu(in, t); }, {in}, rng);
  }
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("bilinear_upsample2 preserves constants and clamps borders") {
  Tensor c = Tensor::full({2, 3, 5}, 0.7);
  Tensor out = bilinear_upsample2(c, nullptr);
  CHECK(out.dim(1) == 6);
  CHECK(out.dim(2) == 10);
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == doctest::Approx(0.7).epsilon(1e-12));

  Tensor single = Tensor::from_data({1, 1, 1}, {4.5});
  Tensor up = bilinear_upsample2(single, nullptr);
  CHECK(up.size() == 4);
  for (int64_t i = 0; i < 4; ++i) CHECK(up.data()[i] == 4.5);
}

TEST_CASE("bilinear_upsample2 gradients match finite differences") {
  GradCheck gc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 17 + 11);
    const int c = 1 + static_cast<int>(rng.uniform_index(2));
    const int h = 1 + static_cast<int>(rng.uniform_index(4));
    const int w = 1 + static_cast<int>(rng.uniform_index(4));
    Tensor in = random_tensor({c, h, w}, rng).set_requires_grad(true);
    gc.check([&](Tape* t) { return bilinear_upsample2(in, t); }, {in}, rng);
  }
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("bilinear_upsample2 backward conserves interior gradient mass") {
  // seed gradient only at output pixels whose source footprint is interior
  Rng rng(42);
  Tensor in = random_tensor({1, 6, 6}, rng).set_requires_grad(true);
  Tape tape;
  Tensor out = bilinear_upsample2(in, &tape);
  std::vector<double> up(static_cast<size_t>(out.size()), 0.0);
  double seeded = 0.0;
  for (int y = 1; y < out.dim(1) - 1; ++y) {
    for (int x = 1; x < out.dim(2) - 1; ++x) {
      up[static_cast<size_t>(y) * out.dim(2) + x] = 1.0;
      seeded += 1.0;
    }
  }
  tape.backward_from(out, up);
  double total = 0.0;
  for (int64_t i = 0; i < in.size(); ++i) total += in.grad_data()[i];
  CHECK(total == doctest::Approx(seeded).epsilon(1e-12));
}

TEST_CASE("concat_channels shapes and gradient split") {
  Rng rng(5);
  Tensor a = random_tensor({2, 4, 4}, rng).set_requires_grad(true);
  Tensor b = random_tensor({3, 4, 4}, rng).set_requires_grad(true);
  Tensor out = concat_channels(a, b, nullptr);
  CHECK(out.shape() == Shape{5, 4, 4});

  Tensor empty = Tensor::zeros({0, 4, 4});
  Tensor same = concat_channels(a, empty, nullptr);
  CHECK(same.shape() == Shape{2, 4, 4});
  CHECK(std::memcmp(same.data(), a.data(), sizeof(double) * a.size()) == 0);

  CHECK_THROWS_AS(concat_channels(a, Tensor::zeros({1, 3, 4}), nullptr), ShapeError);

  // backward split is lossless
  Tape tape;
  Tensor cat = concat_channels(a, b, &tape);
  std::vector<double> up(static_cast<size_t>(cat.size()));
  Rng rng2(6);
  for (auto& u : up) u = rng2.uniform(-1, 1);
  tape.backward_from(cat, up);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.grad_data()[i] == up[static_cast<size_t>(i)]);
  for (int64_t i = 0; i < b.size(); ++i) {
    CHECK(b.grad_data()[i] == up[static_cast<size_t>(a.size() + i)]);
  }
}

TEST_CASE("concat and slice gradients match finite differences") {
  GradCheck gc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 7 + 13);
    Tensor a = random_tensor({2, 3, 3}, rng).set_requires_grad(true);
    Tensor b = random_tensor({1, 3, 3}, rng).set_requires_grad(true);
    gc.check([&](Tape* t) { return concat_channels(a, b, t); }, {a, b}, rng);
    Tensor x = random_tensor({3, 3, 3}, rng).set_requires_grad(true);
    const int ch = static_cast<int>(rng.uniform_index(3));
    gc.check([&](Tape* t) { return slice_channel(x, ch, t); }, {x}, rng);
  }
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("masked_l2 value and edge cases") {
  Tensor pred = Tensor::from_data({1, 1, 2}, {1.0, 0.0});
  Tensor target = Tensor::zeros({1, 1, 2});
  Tensor mask = Tensor::full({1, 1, 2}, 1.0);
  CHECK(masked_l2(pred, target, mask, nullptr).value() == doctest::Approx(0.5));

  Tensor zero_mask = Tensor::zeros({1, 1, 2});
  Tape tape;
  pred.set_requires_grad(true);
  Tensor loss = masked_l2(pred, target, zero_mask, &tape);
  CHECK(loss.value() == 0.0);
  tape.backward(loss);
  CHECK(pred.grad_data()[0] == 0.0);
  CHECK(pred.grad_data()[1] == 0.0);

  // identical pred and target
  Tensor same = masked_l2(target, target, mask, nullptr);
  CHECK(same.value() == 0.0);

  CHECK_THROWS_AS(masked_l2(pred, Tensor::zeros({1, 2, 1}), mask, nullptr), ShapeError);
}

TEST_CASE("masked losses and weighted_sum gradients match finite differences") {
  GradCheck gc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 29 + 2);
    Tensor pred = random_tensor({2, 3, 3}, rng).set_requires_grad(true);
    Tensor target = random_tensor({2, 3, 3}, rng);
    Tensor mask = Tensor::zeros({2, 3, 3});
    for (int64_t i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(0.6) ? 1.0 : 0.0;
    gc.check([&](Tape* t) { return masked_l2(pred, target, mask, t); }, {pred}, rng);
    gc.check([&](Tape* t) { return masked_sq_sum(pred, target, mask, t); }, {pred}, rng);

    Tensor s1 = random_tensor({}, rng).set_requires_grad(true);
    Tensor s2 = random_tensor({}, rng).set_requires_grad(true);
    const double w1 = rng.uniform(-2, 2), w2 = rng.uniform(-2, 2);
    gc.check(
        [&](Tape* t) {
          const Tensor xs[] = {s1, s2};
          const double ws[] = {w1, w2};
          return weighted_sum(xs, ws, t);
        },
        {s1, s2}, rng);
  }
  CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng rng(99);
  Tensor in = random_tensor({3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor o1 = conv2d(in, w, b, 1, nullptr);
  Tensor o2 = conv2d(in, w, b, 1, nullptr);
  CHECK(std::memcmp(o1.data(), o2.data(), sizeof(double) * o1.size()) == 0);
}

TEST_CASE("sgd_step applies momentum, decay and clears gradients") {
  SUBCASE("zero gradient, zero weight decay leaves values unchanged") {
    Param p("p", Tensor::from_data({2}, {1.0, -2.0}));
    p.value.grad();  // materialize zeros
    Param* list[] = {&p};
    sgd_step(list, 0.1, 0.9, 0.0);
    CHECK(p.value.data()[0] == 1.0);
    CHECK(p.value.data()[1] == -2.0);
  }
  SUBCASE("plain sgd step") {
    Param p("p", Tensor::from_data({1}, {1.0}));
    p.value.grad()[0] = 1.0;
    Param* list[] = {&p};
    sgd_step(list, 0.1, 0.0, 0.0);
    CHECK(p.value.data()[0] == doctest::Approx(0.9));
  }
  SUBCASE("two momentum steps with constant gradient") {
    Param p("p", Tensor::from_data({1}, {1.0}));
    Param* list[] = {&p};
    p.value.grad()[0] = 1.0;
    sgd_step(list, 0.1, 0.9, 0.0);
    CHECK(p.value.data()[0] == doctest::Approx(0.9));
    p.value.grad()[0] = 1.0;
    sgd_step(list, 0.1, 0.9, 0.0);
    CHECK(p.value.data()[0] == doctest::Approx(0.71));
  }
  SUBCASE("missing gradient raises a state error") {
    Param p("p", Tensor::from_data({1}, {1.0}));
    Param* list[] = {&p};
    CHECK_THROWS_AS(sgd_step(list, 0.1, 0.9, 0.0), StateError);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(1234);
  Param a("alpha.weight", testutil::random_tensor({2, 3, 3, 3}, rng));
  Param b("alpha.bias", testutil::random_tensor({2}, rng));
  const auto path = std::filesystem::temp_directory_path() / "densebox_test.ckpt";
  {
    const Param* list[] = {&a, &b};
    save_checkpoint(path, list);
  }
  Param a2("alpha.weight", Tensor::zeros({2, 3, 3, 3}));
  Param b2("alpha.bias", Tensor::zeros({2}));
  {
    Param* list[] = {&a2, &b2};
    load_checkpoint(path, list);
  }
  CHECK(std::memcmp(a.value.data(), a2.value.data(), sizeof(double) * a.value.size()) == 0);
  CHECK(std::memcmp(b.value.data(), b2.value.data(), sizeof(double) * b.value.size()) == 0);

  // shape mismatch and unknown entries are data errors
  Param bad("alpha.weight", Tensor::zeros({2, 3, 3, 1}));
  Param bad2("alpha.bias", Tensor::zeros({2}));
  {
    Param* list[] = {&bad, &bad2};
    CHECK_THROWS_AS(load_checkpoint(path, list), DataError);
  }
  std::filesystem::remove(path);
}
