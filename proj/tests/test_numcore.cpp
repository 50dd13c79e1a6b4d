#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hyperx/errors.hpp"
#include "hyperx/optim.hpp"
#include "hyperx/serialize.hpp"
#include "hyperx/tensor.hpp"
#include "testutil.hpp"

using namespace hyperx;
using hyperx::testutil::gradient_check;

namespace {

Tensor random_param(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    return Tensor::randn(std::move(shape), rng, stddev, true);
}

// Scalar projection with fixed random weights so gradients are non-trivial.
Tensor project(const Tensor& x, Rng& rng) {
    Tensor w = Tensor::randn(x.shape(), rng, 1.0, false);
    return sum(mul(x, w));
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor x = Tensor::randn({3, 3}, rng);
    Tensor out = matmul(eye, x);
    for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(x.data()[i]));

    Tensor zeros = Tensor::zeros({2, 4});
    Tensor y = Tensor::randn({4, 5}, rng);
    Tensor z = matmul(zeros, y);
    CHECK(z.shape() == std::vector<int>{2, 5});
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul hand oracle") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.at({0, 0}) == 19);
    CHECK(c.at({0, 1}) == 22);
    CHECK(c.at({1, 0}) == 43);
    CHECK(c.at({1, 1}) == 50);
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("4x5") != std::string::npos);
    }
}

TEST_CASE("backward of sum gives ones") {
    Rng rng(3);
    Tensor p = random_param({2, 3}, rng);
    backward(sum(p));
    for (double g : p.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward analytic oracle for sum of squares") {
    Tensor p = Tensor::from_data({2}, {1.0, -2.0}, true);
    backward(sum(mul(p, p)));
    CHECK(p.grad()[0] == doctest::Approx(2.0));
    CHECK(p.grad()[1] == doctest::Approx(-4.0));
}

TEST_CASE("backward requires scalar loss") {
    Tensor p = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(add(p, p)), ContractError);
}

TEST_CASE("gradients accumulate until zeroed") {
    Tensor p = Tensor::from_data({2}, {1.0, 1.0}, true);
    backward(sum(p));
    backward(sum(p));
    CHECK(p.grad()[0] == doctest::Approx(2.0));
    p.zero_grad();
    CHECK_FALSE(p.has_grad());
    backward(sum(p));
    CHECK(p.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("two-layer relu network matches finite differences") {
    Rng rng(11);
    Tensor w1 = random_param({5, 8}, rng, 0.7);
    Tensor w2 = random_param({8, 3}, rng, 0.7);
    Tensor x = Tensor::randn({4, 5}, rng);
    Rng proj_rng(99);
    Tensor proj = Tensor::randn({4, 3}, proj_rng);
    auto loss = [&]() { return sum(mul(matmul(relu(matmul(x, w1)), w2), proj)); };
    CHECK(gradient_check(w1, loss) < 1e-4);
    CHECK(gradient_check(w2, loss) < 1e-4);
}

TEST_CASE("finite differences for every differentiable op") {
    Rng rng(21);

    SUBCASE("add / mul / scale / add_rowwise") {
        Tensor a = random_param({3, 4}, rng);
        Tensor b = random_param({3, 4}, rng);
        Tensor bias = random_param({4}, rng);
        auto loss = [&]() {
            Tensor t = add(mul(a, b), scale(a, 0.5));
            Rng prng(1);
            return project(add_rowwise(t, bias), prng);
        };
        CHECK(gradient_check(a, loss) < 1e-4);
        CHECK(gradient_check(b, loss) < 1e-4);
        CHECK(gradient_check(bias, loss) < 1e-4);
    }

    SUBCASE("relu away from kinks") {
        Tensor a = Tensor::from_data({5}, {-1.5, -0.2, 0.3, 1.1, 2.0}, true);
        auto loss = [&]() {
            Rng prng(2);
            return project(relu(a), prng);
        };
        CHECK(gradient_check(a, loss) < 1e-4);
    }

    SUBCASE("gelu") {
        Tensor a = random_param({6}, rng);
        auto loss = [&]() {
            Rng prng(3);
            return project(gelu(a), prng);
        };
        CHECK(gradient_check(a, loss) < 1e-4);
    }

    SUBCASE("softmax") {
        Tensor a = random_param({3, 5}, rng);
        auto loss = [&]() {
            Rng prng(4);
            return project(softmax_rows(a), prng);
        };
        CHECK(gradient_check(a, loss) < 1e-4);
    }

    SUBCASE("layer_norm") {
        Tensor a = random_param({3, 6}, rng);
        Tensor gamma = random_param({6}, rng);
        Tensor beta = random_param({6}, rng);
        auto loss = [&]() {
            Rng prng(5);
            return project(layer_norm(a, gamma, beta), prng);
        };
        CHECK(gradient_check(a, loss) < 1e-4);
        CHECK(gradient_check(gamma, loss) < 1e-4);
        CHECK(gradient_check(beta, loss) < 1e-4);
    }

    SUBCASE("embedding") {
        Tensor table = random_param({7, 4}, rng);
        std::vector<int> ids = {1, 3, 3, 0, 6};
        auto loss = [&]() {
            Rng prng(6);
            return project(embedding(table, ids), prng);
        };
        CHECK(gradient_check(table, loss) < 1e-4);
    }

    SUBCASE("cross_entropy") {
        Tensor logits = random_param({4, 5}, rng);
        std::vector<int> targets = {0, 2, 4, 1};
        auto loss = [&]() { return cross_entropy(logits, targets); };
        CHECK(gradient_check(logits, loss) < 1e-4);
    }

    SUBCASE("concat / reshape / slice / gather_rows") {
        Tensor a = random_param({2, 3}, rng);
        Tensor b = random_param({4, 3}, rng);
        auto loss = [&]() {
            Tensor joined = concat({a, b});                     // (6,3)
            Tensor flat = reshape(joined, {18});                // (18)
            Tensor piece = slice(flat, 2, 14);                  // (12)
            Tensor back = reshape(piece, {4, 3});
            Tensor rows = gather_rows(back, {0, 2, 2, 3});
            Rng prng(7);
            return project(rows, prng);
        };
        CHECK(gradient_check(a, loss) < 1e-4);
        CHECK(gradient_check(b, loss) < 1e-4);
    }

    SUBCASE("multi_head_attention") {
        int batch = 2, seq = 3, h = 4, heads = 2;
        Tensor x = random_param({batch, seq, h}, rng, 0.8);
        Tensor wq = random_param({h, h}, rng, 0.5);
        Tensor bq = random_param({h}, rng, 0.1);
        Tensor wk = random_param({h, h}, rng, 0.5);
        Tensor bk = random_param({h}, rng, 0.1);
        Tensor wv = random_param({h, h}, rng, 0.5);
        Tensor bv = random_param({h}, rng, 0.1);
        Tensor wo = random_param({h, h}, rng, 0.5);
        Tensor bo = random_param({h}, rng, 0.1);
        std::vector<uint8_t> mask = {1, 1, 1, 1, 1, 0};  // one padded position
        auto loss = [&]() {
            Rng prng(8);
            return project(multi_head_attention(x, wq, bq, wk, bk, wv, bv, wo, bo, batch, seq,
                                                heads, mask),
                           prng);
        };
        for (Tensor* t : {&x, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) {
            CHECK(gradient_check(*t, loss) < 1e-4);
        }
    }

    SUBCASE("dropout backward routes through the kept mask") {
        Tensor a = random_param({64}, rng);
        Rng drop_rng(17);
        Tensor out = dropout(a, 0.25, drop_rng, true);
        backward(sum(out));
        int kept = 0;
        for (size_t i = 0; i < 64; ++i) {
            double g = a.grad()[i];
            if (g != 0.0) {
                ++kept;
                CHECK(g == doctest::Approx(1.0 / 0.75));
            }
        }
        CHECK(kept > 30);
        CHECK(kept < 64);
    }
}

TEST_CASE("softmax rows sum to one within 1e-9") {
    Rng rng(33);
    Tensor x = Tensor::randn({16, 11}, rng, 3.0);
    Tensor y = softmax_rows(x);
    for (int r = 0; r < 16; ++r) {
        double s = 0.0;
        for (int j = 0; j < 11; ++j) s += y.at({r, j});
        CHECK(std::fabs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("layer_norm normalizes rows before the affine rescale") {
    Rng rng(34);
    int d = 16;
    Tensor x = Tensor::randn({8, d}, rng, 2.5);
    Tensor gamma = Tensor::full({d}, 1.0);
    Tensor beta = Tensor::zeros({d});
    Tensor y = layer_norm(x, gamma, beta);
    for (int r = 0; r < 8; ++r) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += y.at({r, j});
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = y.at({r, j}) - mean;
            var += c * c;
        }
        var /= d;
        CHECK(std::fabs(mean) < 1e-7);
        CHECK(std::fabs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("ops refuse to emit non-finite values") {
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(mul(big, big), NumericError);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), NumericError);
}

TEST_CASE("adam first step matches the closed form") {
    Tensor p = Tensor::from_data({1}, {0.5}, true);
    Adam adam({p});
    backward(sum(p));  // gradient = 1
    adam.step(0.001);
    // bias-corrected first step: -lr * g / (|g| + eps)
    CHECK(p.data()[0] == doctest::Approx(0.5 - 0.001).epsilon(1e-6));
    CHECK(adam.step_count() == 1);
}

TEST_CASE("adam leaves parameters untouched on zero or absent gradients") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor q = Tensor::from_data({2}, {3.0, 4.0}, true);
    Adam adam({p, q});
    backward(sum(mul(p, Tensor::zeros({2}))));  // zero gradient on p, none on q
    adam.step(0.1);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 2.0);
    CHECK(q.data()[0] == 3.0);
    CHECK(q.data()[1] == 4.0);
}

TEST_CASE("adam is deterministic over 100 steps") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor w = Tensor::randn({4, 4}, rng, 0.5, true);
        Tensor x = Tensor::randn({4, 4}, rng);
        Adam adam({w});
        for (int i = 0; i < 100; ++i) {
            backward(sum(mul(matmul(x, w), matmul(x, w))));
            adam.step(0.01);
            adam.zero_grad();
        }
        return std::vector<double>(w.data().begin(), w.data().end());
    };
    std::vector<double> a = run(5);
    std::vector<double> b = run(5);
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("lr schedule hits the spec anchor points") {
    LrSchedule s{1e-3, 400, 2000, true};
    CHECK(s.at(0) == 0.0);
    CHECK(s.at(400) == doctest::Approx(1e-3));
    CHECK(s.at(2000) < 1e-9 * 1e-3);
    LrSchedule constant{1e-3, 0, 50, false};
    CHECK(constant.at(0) == doctest::Approx(1e-3));
    CHECK(constant.at(49) == doctest::Approx(1e-3));
}

TEST_CASE("HXT1 serialization layout and round trip") {
    Tensor t = Tensor::from_data({2, 3}, {1.0, -2.0, 3.5, 0.0, 42.0, -0.125});
    std::vector<uint8_t> bytes = tensor_bytes(t);
    REQUIRE(bytes.size() == 4 + 4 + 2 * 4 + 6 * 8);
    CHECK(bytes[0] == 'H');
    CHECK(bytes[1] == 'X');
    CHECK(bytes[2] == 'T');
    CHECK(bytes[3] == '1');
    // rank and dims little-endian
    CHECK(bytes[4] == 2);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 2);
    CHECK(bytes[12] == 3);

    std::filesystem::path tmp = std::filesystem::temp_directory_path() / "hyperx_t.hxt";
    save_tensor(tmp, t);
    Tensor back = load_tensor(tmp);
    CHECK(back.shape() == t.shape());
    CHECK(std::memcmp(back.data().data(), t.data().data(), 6 * sizeof(double)) == 0);
    CHECK(tensor_digest(back) == tensor_digest(t));
    std::filesystem::remove(tmp);
}

TEST_CASE("rng streams are deterministic and child streams are independent") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng base(7);
    Rng c1 = base.child("x");
    base.uniform();  // advancing the parent must not change child derivation
    Rng c2 = base.child("x");
    for (int i = 0; i < 10; ++i) CHECK(c1.next_u64() == c2.next_u64());
    CHECK(Rng(7).child("x").next_u64() != Rng(7).child("y").next_u64());
}

TEST_CASE("no-grad guard suppresses graph construction") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    {
        NoGradGuard guard;
        Tensor out = mul(p, p);
        CHECK_FALSE(out.requires_grad());
    }
    Tensor out = mul(p, p);
    CHECK(out.requires_grad());
}
