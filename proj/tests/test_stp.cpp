#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "stpn/rng.hpp"
#include "stpn/stp.hpp"
#include "stpn/tensor.hpp"
#include "stpn/tensor_ops.hpp"

using namespace stpn;

TEST_CASE("vector semi product with a shorter right factor") {
    const DenseTensor x({4}, {1, 2, 3, 4});
    const DenseTensor w({2}, {10, 100});
    const DenseTensor y = lstp_vec(x, w);
    REQUIRE(y.numel() == 2);
    CHECK(y.data[0] == 310.0);
    CHECK(y.data[1] == 420.0);

    const DenseTensor y2 = lstp_vec(DenseTensor({3}, {1, 2, 3}), DenseTensor({1}, {5}));
    CHECK(y2.data == std::vector<double>{5, 10, 15});

    const DenseTensor y3 = lstp_vec(DenseTensor({2}, {1, 2}), DenseTensor({2}, {3, 4}));
    REQUIRE(y3.numel() == 1);
    CHECK(y3.data[0] == 11.0);

    CHECK_THROWS_AS((void)lstp_vec(DenseTensor({3}, {1, 2, 3}), DenseTensor({2}, {1, 1})),
                    std::invalid_argument);
}

TEST_CASE("matrix semi product blocks and shape law") {
    const DenseTensor x({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    const DenseTensor w({2, 1}, {1, 1});
    const DenseTensor y = stp_mat(x, w);
    REQUIRE(y.dims == std::vector<int64_t>{2, 2});
    CHECK(y.data == std::vector<double>{4, 6, 12, 14});

    Rng rng(41);
    const DenseTensor a = oracles::rand_tensor(rng, {3, 8});
    const DenseTensor b = oracles::rand_tensor(rng, {4, 5});
    CHECK(stp_mat(a, b).dims == std::vector<int64_t>{3, 10});
}

TEST_CASE("semi product equals the Kronecker definition on random shapes") {
    Rng rng(43);
    for (int it = 0; it < 200; ++it) {
        const int64_t p = 1 + rng.below(6);
        const int64_t q = 1 + rng.below(6);
        const int64_t n = 1 + rng.below(4);
        const int64_t m = 1 + rng.below(5);
        const DenseTensor x = oracles::rand_tensor(rng, {m, n * p});
        const DenseTensor w = oracles::rand_tensor(rng, {p, q});
        const DenseTensor got = stp_mat(x, w);
        CHECK(max_rel_diff(got, oracles::stp_kron(x, w)) < 1e-12);
        CHECK(max_rel_diff(got, stp_oracle_kron(x, w)) < 1e-12);
    }
}

TEST_CASE("semi product collapses to the matrix product when dims match") {
    Rng rng(45);
    const DenseTensor x = oracles::rand_tensor(rng, {4, 5});
    const DenseTensor w = oracles::rand_tensor(rng, {5, 3});
    CHECK(max_rel_diff(stp_mat(x, w), oracles::naive_matmul(x, w)) < 1e-12);
}

TEST_CASE("semi product is associative with scalars exactly") {
    Rng rng(47);
    const DenseTensor x = oracles::rand_tensor(rng, {2, 6});
    const DenseTensor w = oracles::rand_tensor(rng, {3, 4});
    DenseTensor x2 = x;
    for (double& v : x2.data) v *= 0.5;
    DenseTensor lhs = stp_mat(x2, w);
    DenseTensor rhs = stp_mat(x, w);
    for (double& v : rhs.data) v *= 0.5;
    CHECK(max_abs_diff(lhs, rhs) == 0.0);
}

TEST_CASE("semi product gradients match finite differences") {
    Rng rng(49);
    const DenseTensor x = oracles::rand_tensor(rng, {3, 6});
    const DenseTensor w = oracles::rand_tensor(rng, {3, 2});
    const DenseTensor y = stp_mat(x, w);
    DenseTensor dy = y;
    for (double& v : dy.data) v = rng.uniform(-1, 1);
    const auto [dx, dw] = stp_mat_backward(x, w, dy);
    const double h = 1e-6;
    auto loss = [&](const DenseTensor& xx, const DenseTensor& ww) {
        const DenseTensor z = stp_mat(xx, ww);
        double acc = 0;
        for (size_t i = 0; i < z.data.size(); ++i) acc += z.data[i] * dy.data[i];
        return acc;
    };
    for (size_t i = 0; i < x.data.size(); ++i) {
        DenseTensor xp = x, xm = x;
        xp.data[i] += h;
        xm.data[i] -= h;
        CHECK(dx.data[i] == doctest::Approx((loss(xp, w) - loss(xm, w)) / (2 * h)).epsilon(1e-5));
    }
    for (size_t i = 0; i < w.data.size(); ++i) {
        DenseTensor wp = w, wm = w;
        wp.data[i] += h;
        wm.data[i] -= h;
        CHECK(dw.data[i] == doctest::Approx((loss(x, wp) - loss(x, wm)) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("semi core bookkeeping: logical sizes, flags, transpose") {
    SemiCore c(DenseTensor::zeros({2, 3}), 2, {true, false});
    CHECK(c.logical_dim(1) == 4);
    CHECK(c.logical_dim(2) == 3);
    CHECK(c.is_deficient(1));
    CHECK_FALSE(c.is_deficient(2));
    const SemiCore t = transpose(c);
    CHECK(t.tensor.dims == std::vector<int64_t>{3, 2});
    CHECK_FALSE(t.is_deficient(1));
    CHECK(t.is_deficient(2));
    CHECK(t.ratio == 2);

    CHECK_THROWS_AS(SemiCore(DenseTensor::zeros({2, 3}), 2, {true}), std::invalid_argument);
}

TEST_CASE("semi mode product promotes the chosen mode") {
    // 4 = 2*2: contract the major half against the stored factor rows,
    // promote by the factor columns.
    const DenseTensor g({4}, {1, 2, 3, 4});
    const SemiCore a(DenseTensor({2, 1}, {10, 100}), 2, {false, false});
    const DenseTensor y = semi_mode_n(g, a, 1);
    REQUIRE(y.dims == std::vector<int64_t>{2});
    CHECK(y.data[0] == 310.0);
    CHECK(y.data[1] == 420.0);

    Rng rng(51);
    const DenseTensor g3 = oracles::rand_tensor(rng, {4, 4, 4});
    const SemiCore a2(oracles::rand_tensor(rng, {2, 3}), 2, {false, false});
    CHECK(semi_mode_n(g3, a2, 2).dims == std::vector<int64_t>{4, 6, 4});
}

TEST_CASE("semi mode product at ratio one is the classical mode product") {
    Rng rng(53);
    const DenseTensor g = oracles::rand_tensor(rng, {2, 3, 4});
    const DenseTensor m = oracles::rand_tensor(rng, {3, 5});
    const SemiCore a{DenseTensor(m)};
    const DenseTensor got = semi_mode_n(g, a, 2);
    const DenseTensor want = mode_n_product(g, permute(m, std::vector<int>{1, 0}), 2);
    CHECK(max_rel_diff(got, want) < 1e-12);
}

TEST_CASE("semi mode product gradients match finite differences") {
    Rng rng(55);
    const DenseTensor g = oracles::rand_tensor(rng, {3, 4, 2});
    const SemiCore a(oracles::rand_tensor(rng, {2, 3}), 2, {false, false});
    const DenseTensor y = semi_mode_n(g, a, 2);
    DenseTensor dy = y;
    for (double& v : dy.data) v = rng.uniform(-1, 1);
    const auto [dg, da] = semi_mode_n_backward(g, a, 2, dy);
    const double h = 1e-6;
    auto loss = [&](const DenseTensor& gg, const DenseTensor& aa) {
        const DenseTensor z = semi_mode_n(gg, SemiCore(DenseTensor(aa), 2, {false, false}), 2);
        double acc = 0;
        for (size_t i = 0; i < z.data.size(); ++i) acc += z.data[i] * dy.data[i];
        return acc;
    };
    for (size_t i = 0; i < g.data.size(); i += 3) {
        DenseTensor gp = g, gm = g;
        gp.data[i] += h;
        gm.data[i] -= h;
        CHECK(dg.data[i] ==
              doctest::Approx((loss(gp, a.tensor) - loss(gm, a.tensor)) / (2 * h)).epsilon(1e-5));
    }
    for (size_t i = 0; i < a.tensor.data.size(); ++i) {
        DenseTensor ap = a.tensor, am = a.tensor;
        ap.data[i] += h;
        am.data[i] -= h;
        CHECK(da.data[i] == doctest::Approx((loss(g, ap) - loss(g, am)) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("semi contraction sends the residual into the deficient mode") {
    const SemiCore x(DenseTensor({2, 2}, {1, 2, 3, 4}), 2, {false, false});
    const SemiCore y(DenseTensor({1, 2}, {10, 100}), 2, {false, true});
    const SemiCore z = semi_contract(x, 2, y, 1);
    REQUIRE(z.tensor.dims == std::vector<int64_t>{2, 4});
    CHECK(z.tensor.data == std::vector<double>{10, 20, 100, 200, 30, 40, 300, 400});
    CHECK_FALSE(z.is_deficient(2));  // promoted to full
    CHECK(z.ratio == 2);
}

TEST_CASE("semi contraction needs a remaining mode for the residual") {
    const SemiCore x(DenseTensor({2, 2}, {1, 2, 3, 4}), 2, {false, false});
    const SemiCore y(DenseTensor({1}, {10}), 2, {false});
    CHECK_THROWS_AS((void)semi_contract(x, 2, y, 1), std::invalid_argument);
}

TEST_CASE("residual prefers the first deficient remaining mode") {
    Rng rng(57);
    // y has modes (stored rank, full mode, deficient mode): the residual must
    // skip the full mode 2 and promote mode 3.
    const SemiCore x(oracles::rand_tensor(rng, {3, 4}), 2, {false, false});
    const SemiCore y(oracles::rand_tensor(rng, {2, 3, 2}), 2, {true, false, true});
    const SemiCore z = semi_contract(x, 2, y, 1);
    REQUIRE(z.tensor.dims == std::vector<int64_t>{3, 3, 4});
    CHECK_FALSE(z.is_deficient(3));
    CHECK_FALSE(z.is_deficient(2));
    // Entry oracle straight from the residual rule: split the contracted
    // index as (major p, minor s), promote mode 3 as (stored major, s minor).
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t c = 0; c < 2; ++c)
                for (int64_t s = 0; s < 2; ++s) {
                    double acc = 0;
                    for (int64_t p = 0; p < 2; ++p)
                        acc += x.tensor.at({i, p * 2 + s}) * y.tensor.at({p, j, c});
                    CHECK(z.tensor.at({i, j, c * 2 + s}) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("ratio-one semi contraction is a plain contraction") {
    Rng rng(59);
    const SemiCore x{oracles::rand_tensor(rng, {2, 3, 4})};
    const SemiCore y{oracles::rand_tensor(rng, {4, 5})};
    const SemiCore z = semi_contract(x, 3, y, 1);
    REQUIRE(z.tensor.dims == std::vector<int64_t>{2, 3, 5});
    const DenseTensor want = contract(x.tensor, y.tensor, 1);
    CHECK(max_rel_diff(z.tensor, want) < 1e-12);
    CHECK(z.ratio == 1);
}

TEST_CASE("fused extra contractions match separate classical sums") {
    Rng rng(61);
    // Ratio 1 so the general contraction reduces to a plain multi-mode sum
    // that a naive loop can mirror.
    const SemiCore x{oracles::rand_tensor(rng, {3, 2, 4})};
    const SemiCore y{oracles::rand_tensor(rng, {4, 2, 5})};
    SemiContractSpec spec;
    spec.mode_x = 3;
    spec.mode_y = 1;
    spec.shared = {{2, 2}};
    const SemiCore z = semi_contract_general(x, y, spec);
    REQUIRE(z.tensor.dims == std::vector<int64_t>{3, 5});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t o = 0; o < 5; ++o) {
            double acc = 0;
            for (int64_t j = 0; j < 2; ++j)
                for (int64_t k = 0; k < 4; ++k)
                    acc += x.tensor.at({i, j, k}) * y.tensor.at({k, j, o});
            CHECK(z.tensor.at({i, o}) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("general semi contraction gradients match finite differences") {
    Rng rng(63);
    const SemiCore x(oracles::rand_tensor(rng, {2, 3, 4}), 2, {false, false, false});
    const SemiCore y(oracles::rand_tensor(rng, {2, 3, 2}), 2, {true, false, true});
    SemiContractSpec spec;
    spec.mode_x = 3;
    spec.mode_y = 1;
    spec.shared = {{2, 2}};
    const SemiCore z = semi_contract_general(x, y, spec);
    DenseTensor dz = z.tensor;
    for (double& v : dz.data) v = rng.uniform(-1, 1);
    const auto [dx, dy] = semi_contract_general_backward(x, y, spec, dz);
    const double h = 1e-6;
    auto loss = [&](const DenseTensor& xx, const DenseTensor& yy) {
        const SemiCore zz = semi_contract_general(SemiCore(DenseTensor(xx), x.ratio, x.deficient),
                                                  SemiCore(DenseTensor(yy), y.ratio, y.deficient),
                                                  spec);
        double acc = 0;
        for (size_t i = 0; i < zz.tensor.data.size(); ++i) acc += zz.tensor.data[i] * dz.data[i];
        return acc;
    };
    for (size_t i = 0; i < x.tensor.data.size(); i += 3) {
        DenseTensor xp = x.tensor, xm = x.tensor;
        xp.data[i] += h;
        xm.data[i] -= h;
        CHECK(dx.data[i] ==
              doctest::Approx((loss(xp, y.tensor) - loss(xm, y.tensor)) / (2 * h)).epsilon(1e-5));
    }
    for (size_t i = 0; i < y.tensor.data.size(); i += 2) {
        DenseTensor yp = y.tensor, ym = y.tensor;
        yp.data[i] += h;
        ym.data[i] -= h;
        CHECK(dy.data[i] ==
              doctest::Approx((loss(x.tensor, yp) - loss(x.tensor, ym)) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("ring closure traces the boundary modes") {
    Rng rng(65);
    // Classical: single (R, I, R) core closes to the vector of slice traces.
    const SemiCore g{oracles::rand_tensor(rng, {3, 4, 3})};
    const SemiCore w = ring_close(g);
    REQUIRE(w.tensor.dims == std::vector<int64_t>{4});
    for (int64_t i = 0; i < 4; ++i) {
        double acc = 0;
        for (int64_t r = 0; r < 3; ++r) acc += g.tensor.at({r, i, r});
        CHECK(w.tensor.at({i}) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("semi ring closure promotes the first deficient interior mode") {
    Rng rng(67);
    // Chain (R/t, I/t, R) with t = 2: closing splits the last mode (2 major,
    // 2 minor), traces the major half, and promotes I/t to I.
    const SemiCore g(oracles::rand_tensor(rng, {2, 3, 4}), 2, {true, true, false});
    const SemiCore w = ring_close(g);
    REQUIRE(w.tensor.dims == std::vector<int64_t>{6});
    CHECK_FALSE(w.is_deficient(1));
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t s = 0; s < 2; ++s) {
            double acc = 0;
            for (int64_t a = 0; a < 2; ++a) acc += g.tensor.at({a, i, a * 2 + s});
            CHECK(w.tensor.at({i * 2 + s}) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("corrupting the residual rule changes the result") {
    const SemiCore x(DenseTensor({2, 2}, {1, 2, 3, 4}), 2, {false, false});
    // Two remaining modes, both deficient: the healthy rule promotes the
    // first, the corrupted hook promotes the last.
    Rng rng(69);
    const SemiCore y(oracles::rand_tensor(rng, {1, 2, 2}), 2, {false, true, true});
    const SemiCore healthy = semi_contract(x, 2, y, 1);
    detail::corrupt_residual_rule = true;
    const SemiCore corrupted = semi_contract(x, 2, y, 1);
    detail::corrupt_residual_rule = false;
    CHECK(healthy.tensor.dims == std::vector<int64_t>{2, 4, 2});
    CHECK(corrupted.tensor.dims == std::vector<int64_t>{2, 2, 4});
}
