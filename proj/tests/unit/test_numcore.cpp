#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "gradcheck.hpp"
#include "unitslab/numcore/checkpoint.hpp"
#include "unitslab/numcore/error.hpp"
#include "unitslab/numcore/ops.hpp"
#include "unitslab/numcore/optim.hpp"
#include "unitslab/numcore/rng.hpp"
#include "unitslab/numcore/tape.hpp"

using namespace unitslab;
using namespace unitslab::numcore;
using unitslab::testing::central_differences;
using unitslab::testing::max_relative_error;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

Tensor random_binary(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.mutable_data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

/// Analytic gradients of f for every input via the tape.
std::vector<Tensor> tape_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                   const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Tensor> attached;
    for (std::size_t k = 0; k < inputs.size(); ++k) attached.push_back(tape.leaf("in" + std::to_string(k), inputs[k]));
    const GradMap g = tape.backward(f(attached));
    std::vector<Tensor> out;
    for (std::size_t k = 0; k < inputs.size(); ++k) out.push_back(g.at("in" + std::to_string(k)));
    return out;
}

double check_against_fd(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs) {
    const auto analytic = tape_gradients(f, inputs);
    const auto numeric = central_differences([&](const std::vector<Tensor>& in) { return f(in).item(); }, inputs);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) worst = std::max(worst, max_relative_error(analytic[k], numeric[k]));
    return worst;
}

} // namespace

TEST_CASE("relu, sigmoid and masked_bce reference values") {
    const Tensor r = relu(Tensor({3}, {-1.0, 0.0, 2.0}));
    CHECK(r.values() == std::vector<double>{0.0, 0.0, 2.0});
    CHECK(sigmoid(Tensor({1}, {0.0}))[0] == 0.5);
    const Tensor l = masked_bce(Tensor({1}, {0.5}), Tensor({1}, {1.0}), Tensor({1}, {1.0}));
    CHECK(l.item() == doctest::Approx(0.693147).epsilon(1e-6));
    CHECK(l.item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("conv2d center pixel of all-ones 5x5 with all-ones kernel") {
    const Tensor x = Tensor::full({1, 5, 5}, 1.0);
    const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    const Tensor b = Tensor::zeros({1});
    const Tensor y = conv2d(x, w, b);
    CHECK(y.shape() == Shape{1, 5, 5});
    CHECK(y[2 * 5 + 2] == 9.0);
    CHECK(y[0] == 4.0); // corner sees 2x2 of the image
    CHECK(y[2] == 6.0); // edge sees 2x3
}

TEST_CASE("shape mismatch errors name the operation") {
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    try {
        conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(e.op() == "conv2d");
        CHECK(std::string(e.what()).find("[2, 4, 4]") != std::string::npos);
    }
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("non-finite values are rejected") {
    CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), ValueError);
    CHECK_THROWS_AS(Tensor::full({2}, INFINITY), ValueError);
    const bool before = debug_checks();
    set_debug_checks(true);
    CHECK_THROWS_AS(scale(Tensor({1}, {1e300}), 1e300), ValueError);
    set_debug_checks(before);
}

TEST_CASE("masked_bce validation and degenerate mask") {
    const Tensor p = Tensor::full({2, 2}, 0.3);
    CHECK_THROWS_AS(masked_bce(p, Tensor::full({2, 2}, 0.5), Tensor::full({2, 2}, 1.0)), ValueError);
    const Tensor zero = masked_bce(p, Tensor::zeros({2, 2}), Tensor::zeros({2, 2}));
    CHECK(zero.item() == 0.0);
    // Clamped confident predictions bottom out near the clamp floor.
    const Tensor confident = masked_bce(Tensor({2}, {1.0, 0.0}), Tensor({2}, {1.0, 0.0}), Tensor({2}, {1.0, 1.0}));
    CHECK(confident.item() < 1e-6);
    CHECK(confident.item() > 0.0);
}

TEST_CASE("backward of mean distributes equally") {
    Tape tape;
    const Tensor x = tape.leaf("x", Tensor({4}, {1.0, -2.0, 3.0, 0.5}));
    const GradMap g = tape.backward(mean(x));
    CHECK(g.at("x").values() == std::vector<double>(4, 0.25));
}

TEST_CASE("detach stops gradients and preserves values") {
    Tape tape;
    const Tensor w = tape.leaf("w", Tensor({3}, {0.1, -0.2, 0.3}));
    const Tensor y = sigmoid(scale(w, 2.0));
    const Tensor d = detach(y);
    CHECK(d.same_bits(y));
    CHECK_FALSE(d.requires_grad());
    CHECK(y.requires_grad());
    const Tensor v = tape.leaf("v", Tensor({3}, {1.0, 1.0, 1.0}));
    const GradMap g = tape.backward(mean(add(d, v)));
    for (double x : g.at("w").data()) CHECK(x == 0.0);
    for (double x : g.at("v").data()) CHECK(x == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("backward errors") {
    Tape tape;
    const Tensor x = tape.leaf("x", Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), TapeError);
    CHECK_THROWS_AS(tape.backward(detach(mean(x))), TapeError);
    const Tensor m = mean(x);
    tape.clear();
    CHECK_THROWS_AS(tape.backward(m), TapeError);
    Tape other;
    const Tensor y = other.leaf("y", Tensor({2}, {1.0, 2.0}));
    const Tensor x2 = tape.leaf("x", Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(add(x2, y), TapeError);
    CHECK_THROWS_AS(tape.leaf("x", Tensor({1}, {0.0})), TapeError);
}

TEST_CASE("every primitive matches central differences") {
    Rng rng(20240601);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 1 + rng.index(8);
        const std::size_t w = 1 + rng.index(8);
        const std::size_t cin = 1 + rng.index(3);
        const std::size_t cout = 1 + rng.index(3);
        const Tensor a = random_tensor(rng, {cin, h, w}, -1.0, 1.0);
        const Tensor b = random_tensor(rng, {cin, h, w}, -1.0, 1.0);
        const Tensor probs = random_tensor(rng, {h, w}, 0.05, 0.95);
        const Tensor target = random_binary(rng, {h, w});
        Tensor mask = random_binary(rng, {h, w});
        mask.mutable_data()[0] = 1.0;
        // Keep relu inputs away from the kink so differences are smooth.
        Tensor r = random_tensor(rng, {cin, h, w}, 0.1, 1.0);
        for (double& v : r.mutable_data()) v = rng.uniform() < 0.5 ? v : -v;
        const double s = rng.uniform(-2.0, 2.0);
        const Tensor weight = random_tensor(rng, {cout, cin, 3, 3}, -0.5, 0.5);
        const Tensor bias = random_tensor(rng, {cout}, -0.5, 0.5);

        worst = std::max(worst, check_against_fd([](const auto& in) { return mean(add(in[0], in[1])); }, {a, b}));
        worst = std::max(worst, check_against_fd([s](const auto& in) { return mean(scale(in[0], s)); }, {a}));
        worst = std::max(worst, check_against_fd([](const auto& in) { return mean(relu(in[0])); }, {r}));
        worst = std::max(worst, check_against_fd([](const auto& in) { return mean(sigmoid(in[0])); }, {a}));
        worst = std::max(worst, check_against_fd(
                                    [&](const auto& in) { return masked_bce(in[0], target, mask); }, {probs}));
        worst = std::max(worst, check_against_fd(
                                    [](const auto& in) { return mean(sigmoid(conv2d(in[0], in[1], in[2]))); },
                                    {a, weight, bias}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("two-layer conv net gradient matches central differences") {
    Rng rng(77);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t h = 2 + rng.index(7);
        const std::size_t w = 2 + rng.index(7);
        const Tensor x = random_tensor(rng, {1, h, w}, 0.0, 1.0);
        const Tensor w1 = random_tensor(rng, {3, 1, 3, 3}, -0.5, 0.5);
        const Tensor b1 = random_tensor(rng, {3}, -0.1, 0.1);
        const Tensor w2 = random_tensor(rng, {1, 3, 3, 3}, -0.5, 0.5);
        const Tensor b2 = random_tensor(rng, {1}, -0.1, 0.1);
        const Tensor target = random_binary(rng, {1, h, w});
        const Tensor mask = Tensor::full({1, h, w}, 1.0);
        auto net = [&](const std::vector<Tensor>& in) {
            return masked_bce(sigmoid(conv2d(relu(conv2d(x, in[0], in[1])), in[2], in[3])), target, mask);
        };
        // Redraw when a hidden pre-activation sits within reach of the relu kink.
        const Tensor pre = conv2d(x, w1, b1);
        bool near_kink = false;
        for (double v : pre.data()) near_kink |= std::abs(v) < 1e-3;
        if (near_kink) {
            --trial;
            continue;
        }
        worst = std::max(worst, check_against_fd(net, {w1, b1, w2, b2}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("sgd_step arithmetic") {
    ParamSet ps;
    ps.add("p", Tensor({1}, {1.0}));
    GradMap g;
    g.insert("p", Tensor({1}, {0.5}));
    const ParamSet after = sgd_step(ps, g, 0.1, 0.0);
    CHECK(after.params.at("p")[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(after.step_count == 1);

    const ParamSet same = sgd_step(ps, g, 0.0, 0.9);
    CHECK(same.params.same_bits(ps.params));
    CHECK(same.step_count == 1);

    ParamSet zero;
    zero.add("p", Tensor({1}, {0.0}));
    GradMap one;
    one.insert("p", Tensor({1}, {1.0}));
    const ParamSet two = sgd_step(sgd_step(zero, one, 0.1, 0.9), one, 0.1, 0.9);
    CHECK(two.params.at("p")[0] == doctest::Approx(-0.29).epsilon(1e-14));
    CHECK(two.step_count == 2);
}

TEST_CASE("sgd_step with missing gradient freezes the parameter") {
    ParamSet ps;
    ps.add("a", Tensor({2}, {1.0, 2.0}));
    ps.add("b", Tensor({1}, {3.0}));
    GradMap g;
    g.insert("a", Tensor({2}, {1.0, 1.0}));
    const ParamSet after = sgd_step(ps, g, 0.5, 0.0);
    CHECK(after.params.at("b").same_bits(ps.params.at("b")));
    CHECK(after.params.at("a")[0] == 0.5);

    GradMap bad;
    bad.insert("a", Tensor({3}, {1.0, 1.0, 1.0}));
    CHECK_THROWS_AS(sgd_step(ps, bad, 0.1, 0.0), ShapeError);
    GradMap unknown;
    unknown.insert("zzz", Tensor({1}, {1.0}));
    CHECK_THROWS_AS(sgd_step(ps, unknown, 0.1, 0.0), ValueError);
}

TEST_CASE("sgd_step with lr zero is the identity on values (property)") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        ParamSet ps;
        GradMap g;
        const std::size_t n = 1 + rng.index(4);
        for (std::size_t i = 0; i < n; ++i) {
            const Shape s{1 + rng.index(5), 1 + rng.index(5)};
            ps.add("p" + std::to_string(i), random_tensor(rng, s, -3.0, 3.0));
            g.insert("p" + std::to_string(i), random_tensor(rng, s, -3.0, 3.0));
        }
        CHECK(sgd_step(ps, g, 0.0, rng.uniform(0.0, 0.99)).params.same_bits(ps.params));
    }
}

TEST_CASE("checkpoint round trip and corruption") {
    Rng rng(9);
    ParamSet ps;
    ps.add("conv0.weight", random_tensor(rng, {2, 1, 3, 3}, -1.0, 1.0));
    ps.add("conv0.bias", random_tensor(rng, {2}, -1.0, 1.0));
    GradMap g;
    g.insert("conv0.weight", random_tensor(rng, {2, 1, 3, 3}, -1.0, 1.0));
    ps = sgd_step(ps, g, 0.1, 0.9);

    const auto dir = std::filesystem::temp_directory_path() / "unitslab_test_numcore";
    std::filesystem::create_directories(dir);
    const auto path = dir / "ck.bin";
    checkpoint_save(ps, path);
    const ParamSet back = checkpoint_load(path);
    CHECK(back.same_bits(ps));
    CHECK(back.params.names() == ps.params.names());
    CHECK(encode_checkpoint(back) == read_file_bytes(path));

    auto bytes = encode_checkpoint(ps);
    CHECK(bytes[0] == 'U');
    CHECK(bytes[4] == 1); // version, little-endian
    auto bad = bytes;
    bad[0] = 'X';
    try {
        decode_checkpoint(bad, "mem");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.reason() == "bad magic");
        CHECK(e.offset() == 0);
    }
    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    try {
        decode_checkpoint(truncated, "mem");
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.reason() == "unexpected end of file");
        CHECK(e.offset() > 0);
    }
    bad = bytes;
    bad[4] = 2;
    CHECK_THROWS_AS(decode_checkpoint(bad, "mem"), FormatError);
    CHECK_THROWS_AS(checkpoint_load(dir / "missing.bin"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint round trip is idempotent (property)") {
    Rng rng(11);
    for (int trial = 0; trial < 25; ++trial) {
        ParamSet ps;
        const std::size_t n = 1 + rng.index(5);
        for (std::size_t i = 0; i < n; ++i) {
            Shape s;
            for (std::size_t r = rng.index(4); r > 0; --r) s.push_back(1 + rng.index(4));
            ps.add("t" + std::to_string(i), random_tensor(rng, s, -1e6, 1e6));
        }
        ps.step_count = rng.next();
        const auto once = encode_checkpoint(ps);
        const auto twice = encode_checkpoint(decode_checkpoint(once, "mem"));
        CHECK(once == twice);
    }
}

TEST_CASE("operations are deterministic") {
    Rng rng(3);
    const Tensor x = random_tensor(rng, {2, 8, 8}, -1.0, 1.0);
    const Tensor w = random_tensor(rng, {3, 2, 3, 3}, -1.0, 1.0);
    const Tensor b = random_tensor(rng, {3}, -1.0, 1.0);
    CHECK(conv2d(x, w, b).same_bits(conv2d(x, w, b)));
    auto grads = [&] {
        Tape tape;
        const Tensor lw = tape.leaf("w", w);
        return tape.backward(mean(sigmoid(conv2d(x, lw, b))));
    };
    CHECK(grads().same_bits(grads()));
}
