#include <catch2/catch_amalgamated.hpp>

#include "scpgan/checks.hpp"
#include "scpgan/nets.hpp"

using namespace scpgan;
using namespace scpgan::autonn;
using Catch::Approx;

TEST_CASE("forward op basics", "[autonn]") {
  SECTION("sigmoid(0) = 0.5") {
    auto x = make_scalar(0.0);
    REQUIRE(sigmoid(nullptr, x)->value[0] == 0.5);
  }

  SECTION("matmul by the identity") {
    auto eye = make_tensor({3, 3});
    for (int i = 0; i < 3; ++i) eye->value[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    auto a = make_const({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto out = matmul(nullptr, eye, a);
    REQUIRE(out->value == a->value);
  }

  SECTION("conv2d with a centered unit-impulse kernel reproduces the input") {
    Rng rng(3);
    auto x = make_tensor({1, 7, 9});
    for (auto& v : x->value) v = rng.normal();
    auto w = make_tensor({1, 1, 5, 5});
    w->value[static_cast<std::size_t>(2 * 5 + 2)] = 1.0;
    auto b = make_tensor({1});
    auto out = conv2d(nullptr, x, w, b, 1);
    REQUIRE(out->shape == x->shape);
    for (std::size_t i = 0; i < out->numel(); ++i)
      REQUIRE(out->value[i] == Approx(x->value[i]).margin(1e-15));
  }

  SECTION("conv2d against a direct convolution oracle") {
    Rng rng(5);
    const int h = 6, wd = 7, ci = 2, f = 3, k = 3;
    auto x = make_tensor({ci, h, wd});
    auto w = make_tensor({f, ci, k, k});
    auto b = make_tensor({f});
    for (auto& v : x->value) v = rng.normal();
    for (auto& v : w->value) v = rng.normal();
    for (auto& v : b->value) v = rng.normal();
    auto out = conv2d(nullptr, x, w, b, 1);
    for (int fc = 0; fc < f; ++fc)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          double acc = b->value[static_cast<std::size_t>(fc)];
          for (int c = 0; c < ci; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = y + ki - 1, ix = xx + kj - 1;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w->value[static_cast<std::size_t>(((fc * ci + c) * k + ki) * k + kj)] *
                       x->value[static_cast<std::size_t>((c * h + iy) * wd + ix)];
              }
          REQUIRE(out->value[static_cast<std::size_t>((fc * h + y) * wd + xx)] ==
                  Approx(acc).margin(1e-12));
        }
  }

  SECTION("conv2d stride-2 output geometry") {
    auto x = make_tensor({1, 63, 257});
    auto w = make_tensor({4, 1, 5, 5});
    auto b = make_tensor({4});
    auto out = conv2d(nullptr, x, w, b, 2);
    REQUIRE(out->shape == std::vector<int>{4, 32, 129});
  }

  SECTION("shape mismatch throws") {
    auto a = make_tensor({2, 2});
    auto b = make_tensor({3});
    REQUIRE_THROWS_AS(add(nullptr, a, b), ShapeMismatch);
    REQUIRE_THROWS_AS(matmul(nullptr, a, b), ShapeMismatch);
  }

  SECTION("non-finite values trip the error") {
    auto a = make_const({2}, {1.0, std::numeric_limits<double>::infinity()});
    REQUIRE_THROWS_AS(scale(nullptr, a, 1.0), NonFinite);
  }
}

TEST_CASE("backward", "[autonn]") {
  SECTION("d/dx x^2 at x = 3 is 6") {
    auto x = make_scalar(3.0, true);
    Tape tape;
    auto loss = square(&tape, x);
    tape.backward(loss);
    REQUIRE(x->grad[0] == Approx(6.0));
  }

  SECTION("backward requires a scalar") {
    auto x = make_tensor({2}, true);
    Tape tape;
    auto y = square(&tape, x);
    REQUIRE_THROWS_AS(tape.backward(y), NotScalar);
  }

  SECTION("gradient of a constant loss is zero") {
    ParamSet params;
    auto w = make_tensor({3});
    params.add("w", w);
    params.zero_grads();
    auto c = make_scalar(5.0);
    Tape tape;
    tape.backward(c);  // nothing reaches the parameters
    for (double g : params.flatten_grads()) REQUIRE(g == 0.0);
  }

  SECTION("two-layer net gradient matches central finite differences") {
    Rng rng(11);
    ParamSet params;
    auto w1 = make_tensor({4, 3});
    auto b1 = make_tensor({4});
    auto w2 = make_tensor({1, 4});
    auto b2 = make_tensor({1});
    for (auto& v : w1->value) v = rng.normal();
    for (auto& v : b1->value) v = 0.3 * rng.normal();
    for (auto& v : w2->value) v = rng.normal();
    params.add("w1", w1);
    params.add("b1", b1);
    params.add("w2", w2);
    params.add("b2", b2);
    auto input = make_const({3}, {0.4, -1.2, 0.7});
    auto make_loss = [&](Tape* tape) {
      auto h = relu(tape, dense(tape, input, w1, b1));
      auto out = dense(tape, h, w2, b2);
      return mean(tape, square(tape, add_scalar(tape, out, -0.5)));
    };
    REQUIRE(checks::fd_max_rel_err(params, make_loss) < 1e-4);
  }

  SECTION("gradient linearity: grad(a*L1 + b*L2) = a*grad(L1) + b*grad(L2)") {
    Rng rng(13);
    ParamSet params;
    auto w = make_tensor({4, 4});
    for (auto& v : w->value) v = rng.normal();
    params.add("w", w);
    auto x = make_tensor({4, 4});
    for (auto& v : x->value) v = rng.normal();
    const double a = 1.7, b = -0.4;

    auto loss1 = [&](Tape* t) { return mean(t, square(t, matmul(t, w, x))); };
    auto loss2 = [&](Tape* t) { return mean(t, abs_val(t, sub(t, w, x))); };

    params.zero_grads();
    {
      Tape t;
      t.backward(loss1(&t));
    }
    const auto g1 = params.flatten_grads();
    params.zero_grads();
    {
      Tape t;
      t.backward(loss2(&t));
    }
    const auto g2 = params.flatten_grads();
    params.zero_grads();
    {
      Tape t;
      auto combined = add(&t, scale(&t, loss1(&t), a), scale(&t, loss2(&t), b));
      t.backward(combined);
    }
    const auto gc = params.flatten_grads();
    for (std::size_t i = 0; i < gc.size(); ++i)
      REQUIRE(gc[i] == Approx(a * g1[i] + b * g2[i]).margin(1e-10));
  }
}

TEST_CASE("flatten_grads", "[autonn]") {
  ParamSet params;
  auto p1 = make_tensor({2, 2});
  auto p2 = make_tensor({3});
  params.add("a", p1);
  params.add("b", p2);

  SECTION("registration order and total length") {
    REQUIRE(params.total_size() == 7);
    params.zero_grads();
    p1->grad = {1, 2, 3, 4};
    p2->grad = {5, 6, 7};
    REQUIRE(params.flatten_grads() == std::vector<double>{1, 2, 3, 4, 5, 6, 7});
  }

  SECTION("zero grads flatten to the zero vector") {
    params.zero_grads();
    for (double g : params.flatten_grads()) REQUIRE(g == 0.0);
  }

  SECTION("missing grad is an error") {
    REQUIRE_THROWS_AS(params.flatten_grads(), MissingGrad);
  }

  SECTION("set/flatten round trip") {
    std::vector<double> v{7, 6, 5, 4, 3, 2, 1};
    params.set_flat_grads(v);
    REQUIRE(params.flatten_grads() == v);
  }

  SECTION("duplicate names rejected") {
    REQUIRE_THROWS_AS(params.add("a", make_tensor({1})), Error);
  }
}

TEST_CASE("adam_step", "[autonn]") {
  SECTION("zero direction leaves parameters unchanged") {
    ParamSet params;
    auto p = make_tensor({3});
    p->value = {1.0, -2.0, 3.0};
    params.add("p", p);
    AdamState st;
    adam_step(params, {0.0, 0.0, 0.0}, st);
    REQUIRE(p->value == std::vector<double>{1.0, -2.0, 3.0});
    REQUIRE(st.step == 1);
  }

  SECTION("first step from zero moments moves by about lr per coordinate") {
    ParamSet params;
    auto p = make_tensor({2});
    params.add("p", p);
    AdamState st;
    st.lr = 5e-4;
    adam_step(params, {1.0, -0.25}, st);
    // bias-corrected first step: lr * d / (|d| + eps)
    REQUIRE(p->value[0] == Approx(-5e-4).epsilon(1e-6));
    REQUIRE(p->value[1] == Approx(5e-4).epsilon(1e-6));
  }

  SECTION("repeated steps reduce a convex quadratic") {
    ParamSet params;
    auto p = make_tensor({2});
    p->value = {2.0, -1.5};
    params.add("p", p);
    AdamState st;
    st.lr = 0.05;
    auto loss = [&] { return p->value[0] * p->value[0] + p->value[1] * p->value[1]; };
    const double l0 = loss();
    for (int i = 0; i < 2; ++i) {
      std::vector<double> dir{2.0 * p->value[0], 2.0 * p->value[1]};
      adam_step(params, dir, st);
    }
    REQUIRE(loss() < l0);
  }

  SECTION("length mismatch") {
    ParamSet params;
    params.add("p", make_tensor({2}));
    AdamState st;
    REQUIRE_THROWS_AS(adam_step(params, {1.0}, st), LengthMismatch);
  }
}

TEST_CASE("determinism", "[autonn]") {
  SECTION("identical seeds give bitwise-identical nets") {
    GeneratorNet g1(8, 99), g2(8, 99);
    REQUIRE(g1.params.flatten_values() == g2.params.flatten_values());
    GeneratorNet g3(8, 100);
    REQUIRE(g1.params.flatten_values() != g3.params.flatten_values());
  }

  SECTION("identical seeds give bitwise-identical trajectories") {
    auto run = [] {
      Rng rng(7);
      DiscriminatorNet d(4, 55);
      AdamState st;
      auto cand = make_tensor({1, 12, 17});
      for (auto& v : cand->value) v = rng.normal();
      for (int i = 0; i < 3; ++i) {
        d.params.zero_grads();
        Tape tape;
        auto out = d.forward(&tape, cand, cand);
        auto loss = square(&tape, add_scalar(&tape, out, -0.7));
        tape.backward(loss);
        adam_step(d.params, d.params.flatten_grads(), st);
      }
      return d.params.flatten_values();
    };
    REQUIRE(run() == run());
  }
}

TEST_CASE("checkpoint round trip", "[autonn][checkpoint]") {
  const std::string path = "test_autonn_ckpt.bin";
  GeneratorNet g(4, 123);
  std::vector<NamedArray> arrays;
  append_params(arrays, g.params);
  write_checkpoint(path, arrays);

  SECTION("values survive") {
    GeneratorNet g2(4, 999);
    load_params(read_checkpoint(path), g2.params);
    REQUIRE(g2.params.flatten_values() == g.params.flatten_values());
  }

  SECTION("bad magic is rejected") {
    std::ofstream f("test_autonn_bad.bin", std::ios::binary);
    f << "NOPE1234";
    f.close();
    REQUIRE_THROWS_AS(read_checkpoint("test_autonn_bad.bin"), BadCheckpoint);
  }

  SECTION("truncation is rejected") {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out("test_autonn_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    REQUIRE_THROWS_AS(read_checkpoint("test_autonn_trunc.bin"), BadCheckpoint);
  }
}
