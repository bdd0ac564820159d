#include "amt/nn/attention.hpp"
#include "amt/nn/gru.hpp"
#include "amt/nn/layers.hpp"
#include "amt/nn/module.hpp"
#include "amt/nn/ops.hpp"

#include "testutil.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace amt;
using nn::Tensor;
using D = double;

namespace {

Tensor<D> randu(std::mt19937& rng, nn::Shape shape, double lo = -1.0, double hi = 1.0,
                bool rg = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<D> data(nn::shape_numel(shape));
    for (auto& x : data) x = dist(rng);
    return Tensor<D>::from(std::move(shape), std::move(data), rg);
}

} // namespace

// ------------------------------------------------------------------- conv2d

TEST_CASE("conv2d: 1x1 identity kernel") {
    std::mt19937 rng(1);
    Tensor<D> x = randu(rng, {1, 1, 4, 6}, -1, 1, false);
    Tensor<D> w = Tensor<D>::from({1, 1, 1, 1}, {1.0});
    Tensor<D> b = Tensor<D>::zeros({1});
    Tensor<D> y = nn::conv2d(x, w, b, 1, 1);
    REQUIRE(y.values() == x.values());
}

TEST_CASE("conv2d: dilated 1x3 taps land at bins f-d, f, f+d") {
    const int f = 352;
    std::vector<D> data(1 * 1 * 1 * f, 0.0);
    data[100] = 1.0;
    Tensor<D> x = Tensor<D>::from({1, 1, 1, f}, std::move(data));
    Tensor<D> w = Tensor<D>::from({1, 1, 1, 3}, {1.0, 1.0, 1.0});
    Tensor<D> b = Tensor<D>::zeros({1});
    Tensor<D> y = nn::conv2d(x, w, b, 1, 48);
    for (int i = 0; i < f; ++i) {
        const bool expect = (i == 52 || i == 100 || i == 148);
        REQUIRE(y.values()[i] == (expect ? 1.0 : 0.0));
    }
}

TEST_CASE("conv2d: zero input yields all-bias output") {
    Tensor<D> x = Tensor<D>::zeros({1, 2, 3, 5});
    std::mt19937 rng(2);
    Tensor<D> w = randu(rng, {4, 2, 3, 3});
    Tensor<D> b = Tensor<D>::from({4}, {0.5, -1.0, 0.0, 2.0});
    Tensor<D> y = nn::conv2d(x, w, b, 1, 1);
    for (int o = 0; o < 4; ++o)
        for (int i = 0; i < 15; ++i) REQUIRE(y.values()[o * 15 + i] == b.values()[o]);
}

TEST_CASE("conv2d: dilation equals plain convolution on a subsampled axis") {
    // restrict input support to the lattice f = r + m*d; then the dilated
    // response on lattice points equals the dense convolution of the
    // subsampled signal (interior points, same padding aside)
    std::mt19937 rng(3);
    const int d = 3, f_full = 30, f_sub = f_full / d;
    Tensor<D> w = randu(rng, {1, 1, 1, 3});
    Tensor<D> b = Tensor<D>::zeros({1});

    Tensor<D> sub = randu(rng, {1, 1, 1, f_sub}, -1, 1, false);
    std::vector<D> full(f_full, 0.0);
    for (int m = 0; m < f_sub; ++m) full[m * d] = sub.values()[m];
    Tensor<D> x_full = Tensor<D>::from({1, 1, 1, f_full}, std::move(full), false);

    Tensor<D> y_dil = nn::conv2d(x_full, w, b, 1, d);
    Tensor<D> y_sub = nn::conv2d(sub, w, b, 1, 1);
    for (int m = 1; m + 1 < f_sub; ++m)
        REQUIRE(y_dil.values()[m * d] == Catch::Approx(y_sub.values()[m]).epsilon(1e-12));
}

TEST_CASE("conv2d: gradients match finite differences") {
    std::mt19937 rng(4);
    Tensor<D> x = randu(rng, {1, 2, 4, 7});
    Tensor<D> w = randu(rng, {3, 2, 3, 3});
    Tensor<D> b = randu(rng, {3});
    auto forward = [&] { return nn::sum(nn::conv2d(x, w, b, 1, 2)); };
    // weight the output so gradients are not all ones
    Tensor<D> mask = randu(rng, {1, 3, 4, 7}, 0.1, 1.0, false);
    auto weighted = [&] { return nn::sum(nn::mul(nn::conv2d(x, w, b, 1, 2), mask)); };
    REQUIRE(testutil::gradcheck({x, w, b}, weighted) > 100);
    (void)forward;
}

// ------------------------------------------------------------ instance norm

TEST_CASE("instance_norm: constant plane collapses to beta") {
    Tensor<D> x = Tensor<D>::from({1, 1, 2, 3}, std::vector<D>(6, 7.5));
    Tensor<D> gamma = Tensor<D>::from({1}, {1.0});
    Tensor<D> beta = Tensor<D>::from({1}, {0.25});
    Tensor<D> y = nn::instance_norm(x, gamma, beta);
    for (D v : y.values()) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("instance_norm: two-value plane normalizes to +-1/sqrt(1+eps)") {
    Tensor<D> x = Tensor<D>::from({1, 1, 1, 2}, {-1.0, 1.0});
    Tensor<D> gamma = Tensor<D>::from({1}, {1.0});
    Tensor<D> beta = Tensor<D>::zeros({1});
    Tensor<D> y = nn::instance_norm(x, gamma, beta, 1e-5);
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    REQUIRE(y.values()[0] == Catch::Approx(-expect).epsilon(1e-12));
    REQUIRE(y.values()[1] == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("instance_norm: beta shifts the output mean") {
    std::mt19937 rng(5);
    Tensor<D> x = randu(rng, {1, 1, 4, 4}, -2, 2, false);
    Tensor<D> gamma = Tensor<D>::from({1}, {1.0});
    Tensor<D> beta = Tensor<D>::from({1}, {5.0});
    Tensor<D> y = nn::instance_norm(x, gamma, beta);
    double mean = 0;
    for (D v : y.values()) mean += v;
    mean /= static_cast<double>(y.numel());
    REQUIRE(mean == Catch::Approx(5.0).margin(1e-9));
}

TEST_CASE("instance_norm: single-element plane is rejected") {
    Tensor<D> x = Tensor<D>::zeros({1, 1, 1, 1});
    Tensor<D> g = Tensor<D>::from({1}, {1.0});
    Tensor<D> b = Tensor<D>::zeros({1});
    REQUIRE_THROWS_AS(nn::instance_norm(x, g, b), DataError);
}

TEST_CASE("instance_norm: gradients match finite differences") {
    std::mt19937 rng(6);
    Tensor<D> x = randu(rng, {2, 2, 3, 3});
    Tensor<D> gamma = randu(rng, {2}, 0.5, 1.5);
    Tensor<D> beta = randu(rng, {2});
    Tensor<D> mask = randu(rng, {2, 2, 3, 3}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::instance_norm(x, gamma, beta), mask)); };
    REQUIRE(testutil::gradcheck({x, gamma, beta}, f) > 30);
}

TEST_CASE("layer_norm: gradients match finite differences") {
    std::mt19937 rng(7);
    Tensor<D> x = randu(rng, {4, 5});
    Tensor<D> gamma = randu(rng, {5}, 0.5, 1.5);
    Tensor<D> beta = randu(rng, {5});
    Tensor<D> mask = randu(rng, {4, 5}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::layer_norm(x, gamma, beta), mask)); };
    REQUIRE(testutil::gradcheck({x, gamma, beta}, f) > 20);
}

// ----------------------------------------------------------------------- GRU

namespace {

nn::GruDirParams<D> zero_gru(int d, int h) {
    nn::GruDirParams<D> p;
    p.wx = Tensor<D>::zeros({3 * h, d}, true);
    p.wh = Tensor<D>::zeros({3 * h, h}, true);
    p.bx = Tensor<D>::zeros({3 * h}, true);
    p.bh = Tensor<D>::zeros({3 * h}, true);
    return p;
}

nn::GruDirParams<D> random_gru(std::mt19937& rng, int d, int h) {
    nn::GruDirParams<D> p;
    p.wx = randu(rng, {3 * h, d}, -0.5, 0.5);
    p.wh = randu(rng, {3 * h, h}, -0.5, 0.5);
    p.bx = randu(rng, {3 * h}, -0.2, 0.2);
    p.bh = randu(rng, {3 * h}, -0.2, 0.2);
    return p;
}

} // namespace

TEST_CASE("bigru: all-zero parameters give all-zero output") {
    std::mt19937 rng(8);
    Tensor<D> x = randu(rng, {6, 3}, -1, 1, false);
    Tensor<D> y = nn::bigru(x, zero_gru(3, 4), zero_gru(3, 4));
    for (D v : y.values()) REQUIRE(v == 0.0);
}

TEST_CASE("bigru: with shared direction parameters, T=1 halves coincide") {
    std::mt19937 rng(9);
    Tensor<D> x = randu(rng, {1, 3}, -1, 1, false);
    nn::GruDirParams<D> p = random_gru(rng, 3, 4);
    Tensor<D> y = nn::bigru(x, p, p);
    for (int j = 0; j < 4; ++j) REQUIRE(y.values()[j] == y.values()[4 + j]);
}

TEST_CASE("bigru: reversing the input swaps and reverses the output halves") {
    std::mt19937 rng(10);
    const int t = 7, d = 3, h = 4;
    Tensor<D> x = randu(rng, {t, d}, -1, 1, false);
    nn::GruDirParams<D> p = random_gru(rng, d, h);

    std::vector<D> rev(x.values().size());
    for (int i = 0; i < t; ++i)
        std::copy_n(x.values().data() + i * d, d, rev.data() + (t - 1 - i) * d);
    Tensor<D> xr = Tensor<D>::from({t, d}, std::move(rev), false);

    Tensor<D> y = nn::bigru(x, p, p);
    Tensor<D> yr = nn::bigru(xr, p, p);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < h; ++j) {
            REQUIRE(yr.values()[i * 2 * h + j] ==
                    Catch::Approx(y.values()[(t - 1 - i) * 2 * h + h + j]).epsilon(1e-12));
            REQUIRE(yr.values()[i * 2 * h + h + j] ==
                    Catch::Approx(y.values()[(t - 1 - i) * 2 * h + j]).epsilon(1e-12));
        }
}

TEST_CASE("bigru: gradients match finite differences") {
    std::mt19937 rng(11);
    const int t = 5, d = 3, h = 3;
    Tensor<D> x = randu(rng, {t, d});
    nn::GruDirParams<D> fwd = random_gru(rng, d, h);
    nn::GruDirParams<D> bwd = random_gru(rng, d, h);
    Tensor<D> mask = randu(rng, {t, 2 * h}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::bigru(x, fwd, bwd), mask)); };
    std::vector<Tensor<D>> leaves = {x,      fwd.wx, fwd.wh, fwd.bx, fwd.bh,
                                     bwd.wx, bwd.wh, bwd.bx, bwd.bh};
    REQUIRE(testutil::gradcheck(leaves, f) > 100);
}

// ------------------------------------------------------------------ attention

TEST_CASE("attention: single key routes the value through") {
    std::mt19937 rng(12);
    Tensor<D> q = randu(rng, {3, 4}, -1, 1, false);
    Tensor<D> k = randu(rng, {1, 4}, -1, 1, false);
    Tensor<D> v = randu(rng, {1, 4}, -1, 1, false);
    Tensor<D> y = nn::attention_core(q, k, v, 2);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            REQUIRE(y.values()[i * 4 + j] == Catch::Approx(v.values()[j]).epsilon(1e-12));
}

TEST_CASE("attention: identical keys give uniform weights") {
    std::mt19937 rng(13);
    Tensor<D> q = randu(rng, {2, 4}, -1, 1, false);
    std::vector<D> krow = {0.3, -0.2, 0.5, 0.1};
    std::vector<D> kdata;
    for (int i = 0; i < 5; ++i) kdata.insert(kdata.end(), krow.begin(), krow.end());
    Tensor<D> k = Tensor<D>::from({5, 4}, std::move(kdata), false);
    Tensor<D> v = randu(rng, {5, 4}, -1, 1, false);
    Tensor<D> y = nn::attention_core(q, k, v, 1);
    for (int j = 0; j < 4; ++j) {
        double mean = 0;
        for (int r = 0; r < 5; ++r) mean += v.values()[r * 4 + j] / 5.0;
        for (int i = 0; i < 2; ++i)
            REQUIRE(y.values()[i * 4 + j] == Catch::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("attention: saturated one-hot query picks out its key's value") {
    const int tk = 4, d = 4;
    std::vector<D> kdata(tk * d, 0.0);
    for (int i = 0; i < tk; ++i) kdata[i * d + i] = 1.0; // orthogonal one-hot keys
    Tensor<D> k = Tensor<D>::from({tk, d}, std::move(kdata), false);
    std::mt19937 rng(14);
    Tensor<D> v = randu(rng, {tk, d}, -1, 1, false);
    std::vector<D> qdata(d, 0.0);
    qdata[2] = 60.0; // large scale saturates the softmax toward key 2
    Tensor<D> q = Tensor<D>::from({1, d}, std::move(qdata), false);
    Tensor<D> y = nn::attention_core(q, k, v, 1);
    for (int j = 0; j < d; ++j)
        REQUIRE(y.values()[j] == Catch::Approx(v.values()[2 * d + j]).margin(1e-9));
}

TEST_CASE("attention: heads must divide the width") {
    Tensor<D> q = Tensor<D>::zeros({2, 6});
    REQUIRE_THROWS_AS(nn::attention_core(q, q, q, 4), DataError);
}

TEST_CASE("attention: gradients match finite differences") {
    std::mt19937 rng(15);
    Tensor<D> q = randu(rng, {3, 4});
    Tensor<D> k = randu(rng, {5, 4});
    Tensor<D> v = randu(rng, {5, 4});
    Tensor<D> mask = randu(rng, {3, 4}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::attention_core(q, k, v, 2), mask)); };
    REQUIRE(testutil::gradcheck({q, k, v}, f) > 40);
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    std::mt19937 rng(16);
    Tensor<D> x = randu(rng, {6, 9}, -8, 8, false);
    Tensor<D> y = nn::softmax_rows(x);
    for (int r = 0; r < 6; ++r) {
        double s = 0;
        for (int j = 0; j < 9; ++j) s += y.values()[r * 9 + j];
        REQUIRE(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax: gradients match finite differences") {
    std::mt19937 rng(17);
    Tensor<D> x = randu(rng, {3, 5});
    Tensor<D> mask = randu(rng, {3, 5}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::softmax_rows(x), mask)); };
    REQUIRE(testutil::gradcheck({x}, f) == 15);
}

// -------------------------------------------------------------------- pooling

TEST_CASE("maxpool_freq: window (1,3,2,0) pools to 3") {
    Tensor<D> x = Tensor<D>::from({1, 1, 1, 4}, {1.0, 3.0, 2.0, 0.0});
    Tensor<D> y = nn::maxpool_freq(x, 4);
    REQUIRE(y.values() == std::vector<D>{3.0});
}

TEST_CASE("maxpool_freq: constant input stays constant; 352 -> 88") {
    Tensor<D> x = Tensor<D>::from({1, 1, 2, 352}, std::vector<D>(704, 0.7));
    Tensor<D> y = nn::maxpool_freq(x, 4);
    REQUIRE(y.shape() == nn::Shape{1, 1, 2, 88});
    for (D v : y.values()) REQUIRE(v == 0.7);
}

TEST_CASE("maxpool_freq: indivisible width is rejected") {
    Tensor<D> x = Tensor<D>::zeros({1, 1, 1, 6});
    REQUIRE_THROWS_AS(nn::maxpool_freq(x, 4), DataError);
}

TEST_CASE("maxpool_freq: gradients match finite differences") {
    std::mt19937 rng(18);
    Tensor<D> x = randu(rng, {1, 2, 3, 8});
    Tensor<D> mask = randu(rng, {1, 2, 3, 2}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::maxpool_freq(x, 4), mask)); };
    REQUIRE(testutil::gradcheck({x}, f) > 30);
}

// ---------------------------------------------------- misc ops and backward

TEST_CASE("backward: d(sum(w*x))/dw = x") {
    Tensor<D> x = Tensor<D>::from({4}, {1.0, -2.0, 3.0, 0.5}, false);
    Tensor<D> w = Tensor<D>::from({4}, {0.1, 0.2, 0.3, 0.4}, true);
    nn::backward(nn::sum(nn::mul(w, x)));
    REQUIRE(w.grad() == x.values());
}

TEST_CASE("backward: disconnected parameter keeps a zero gradient") {
    Tensor<D> w = Tensor<D>::from({2}, {1.0, 2.0}, true);
    Tensor<D> unused = Tensor<D>::from({2}, {3.0, 4.0}, true);
    nn::backward(nn::sum(w));
    REQUIRE(unused.grad() == std::vector<D>{0.0, 0.0});
    REQUIRE(w.grad() == std::vector<D>{1.0, 1.0});
}

TEST_CASE("backward: repeated calls accumulate until cleared") {
    Tensor<D> w = Tensor<D>::from({1}, {2.0}, true);
    Tensor<D> loss = nn::sum(w);
    nn::backward(loss);
    nn::backward(loss);
    REQUIRE(w.grad()[0] == 2.0);
    w.zero_grad();
    REQUIRE(w.grad()[0] == 0.0);
}

TEST_CASE("backward: non-scalar loss is rejected") {
    Tensor<D> w = Tensor<D>::from({2}, {1.0, 2.0}, true);
    REQUIRE_THROWS_AS(nn::backward(nn::mul(w, w)), DataError);
}

TEST_CASE("non-finite values are a hard error") {
    REQUIRE_THROWS_AS(Tensor<D>::from({1}, {std::nan("")}), NumericError);
    Tensor<D> x = Tensor<D>::from({1}, {1e308}, true);
    REQUIRE_THROWS_AS(nn::mul(x, x), NumericError);
}

TEST_CASE("linear: gradients match finite differences") {
    std::mt19937 rng(19);
    Tensor<D> x = randu(rng, {3, 4});
    Tensor<D> w = randu(rng, {5, 4});
    Tensor<D> b = randu(rng, {5});
    Tensor<D> mask = randu(rng, {3, 5}, 0.1, 1.0, false);
    auto f = [&] { return nn::sum(nn::mul(nn::linear(x, w, b), mask)); };
    REQUIRE(testutil::gradcheck({x, w, b}, f) > 30);
}

TEST_CASE("shape plumbing ops: gradients match finite differences") {
    std::mt19937 rng(20);
    SECTION("concat_cols + slice_cols") {
        Tensor<D> a = randu(rng, {3, 2});
        Tensor<D> b = randu(rng, {3, 4});
        Tensor<D> mask = randu(rng, {3, 3}, 0.1, 1.0, false);
        auto f = [&] {
            return nn::sum(nn::mul(nn::slice_cols(nn::concat_cols<D>({a, b}), 1, 4), mask));
        };
        REQUIRE(testutil::gradcheck({a, b}, f) == 18);
    }
    SECTION("flatten_ctf + slice_rows") {
        Tensor<D> x = randu(rng, {1, 2, 4, 3});
        Tensor<D> mask = randu(rng, {2, 6}, 0.1, 1.0, false);
        auto f = [&] {
            return nn::sum(nn::mul(nn::slice_rows(nn::flatten_ctf(x), 1, 3), mask));
        };
        REQUIRE(testutil::gradcheck({x}, f) == 24);
    }
    SECTION("activations") {
        Tensor<D> x = randu(rng, {4, 3}, 0.2, 2.0); // away from the relu kink
        Tensor<D> mask = randu(rng, {4, 3}, 0.1, 1.0, false);
        auto f = [&] {
            return nn::sum(
                nn::mul(nn::sigmoid(nn::tanh_op(nn::relu(nn::scale(x, 0.7)))), mask));
        };
        REQUIRE(testutil::gradcheck({x}, f) == 12);
    }
}

// ------------------------------------------------------- parameter counting

TEST_CASE("param_count: hand-computed layer sizes") {
    nn::ParamRegistry<D> reg;
    std::mt19937 rng(21);
    REQUIRE(reg.total_params() == 0); // empty tree
    nn::Conv2dLayer<D>(reg, "conv", rng, 1, 16, 7, 7);
    REQUIRE(reg.total_params() == 16 * 49 + 16); // 800
    nn::LinearLayer<D>(reg, "head", rng, 256, 88);
    REQUIRE(reg.total_params() == 800 + 256 * 88 + 88); // + 22616
}

TEST_CASE("param registry: duplicate names and double registration rejected") {
    nn::ParamRegistry<D> reg;
    Tensor<D> t = Tensor<D>::zeros({2}, true);
    reg.add("a", t);
    REQUIRE_THROWS_AS(reg.add("a", Tensor<D>::zeros({2}, true)), DataError);
    REQUIRE_THROWS_AS(reg.add("b", t), DataError);
}

TEST_CASE("determinism: same seed, same outputs bitwise") {
    std::mt19937 rng_a(77), rng_b(77);
    nn::ParamRegistry<D> ra, rb;
    nn::Conv2dLayer<D> ca(ra, "c", rng_a, 1, 3, 3, 3);
    nn::Conv2dLayer<D> cb(rb, "c", rng_b, 1, 3, 3, 3);
    std::mt19937 rng_x(5);
    Tensor<D> x = randu(rng_x, {1, 1, 6, 6}, -1, 1, false);
    Tensor<D> ya = ca(x), yb = cb(x);
    REQUIRE(ya.values() == yb.values());
}

TEST_CASE("checkpoint: save and load restore parameters and reject mismatches") {
    const std::string dir = testutil::temp_dir("ckpt");
    std::mt19937 rng(22);
    nn::ParamRegistry<float> reg;
    nn::LinearLayer<float>(reg, "lin", rng, 4, 3);
    std::vector<float> orig = reg.entries()[0].tensor.values();
    nn::save_checkpoint(reg, dir + "/w.amtw");

    for (auto& v : reg.entries()[0].tensor.values()) v = 0.0f;
    nn::load_checkpoint(reg, dir + "/w.amtw");
    REQUIRE(reg.entries()[0].tensor.values() == orig);

    nn::ParamRegistry<float> other;
    nn::LinearLayer<float>(other, "lin", rng, 5, 3); // different shape
    REQUIRE_THROWS_AS(nn::load_checkpoint(other, dir + "/w.amtw"), DataError);
}
