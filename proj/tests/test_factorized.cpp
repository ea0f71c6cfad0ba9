#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "stpn/accounting.hpp"
#include "stpn/factorized.hpp"
#include "stpn/rng.hpp"
#include "stpn/stp.hpp"
#include "stpn/tensor.hpp"
#include "stpn/tensor_ops.hpp"

using namespace stpn;

namespace {

LayerPlan fcl_plan(Format f, std::vector<int64_t> in, std::vector<int64_t> out, int64_t rank,
                   int ratio) {
    LayerPlan p;
    p.format = f;
    p.kind = LayerKind::Fcl;
    p.input_dims = std::move(in);
    p.output_dims = std::move(out);
    p.rank = rank;
    p.ratio = ratio;
    return p;
}

LayerPlan conv_plan(Format f, std::vector<int64_t> in, std::vector<int64_t> out, int64_t rank,
                    int ratio) {
    LayerPlan p;
    p.format = f;
    p.kind = LayerKind::Conv;
    p.input_dims = std::move(in);
    p.output_dims = std::move(out);
    p.rank = rank;
    p.ratio = ratio;
    p.kernel = 3;
    p.height = 6;
    p.width = 6;
    p.pad = 1;
    return p;
}

SemiCore random_core(Rng& rng, std::vector<int64_t> dims, int ratio,
                     std::vector<bool> flags) {
    return {oracles::rand_tensor(rng, std::move(dims)), ratio, std::move(flags)};
}

}  // namespace

TEST_CASE("stored mode shrinks divisible dims and keeps odd ones full") {
    CHECK(stored_mode(8, 2).size == 4);
    CHECK(stored_mode(8, 2).deficient);
    CHECK(stored_mode(7, 2).size == 7);
    CHECK_FALSE(stored_mode(7, 2).deficient);
    CHECK(stored_mode(8, 1).size == 8);
    CHECK_FALSE(stored_mode(8, 1).deficient);
}

TEST_CASE("ring weight cores follow the declared storage schema") {
    const FactorizedWeight w = build_weight(fcl_plan(Format::STR, {4, 6}, {4, 2}, 4, 2));
    REQUIRE(w.cores.size() == 4);
    // Each core is (R/t, d/t, R) when t divides d.
    CHECK(w.cores[0].tensor.dims == std::vector<int64_t>{2, 2, 4});
    CHECK(w.cores[1].tensor.dims == std::vector<int64_t>{2, 3, 4});
    CHECK(w.cores[2].tensor.dims == std::vector<int64_t>{2, 2, 4});
    CHECK(w.cores[3].tensor.dims == std::vector<int64_t>{2, 1, 4});
    for (const SemiCore& c : w.cores) {
        CHECK(c.is_deficient(1));
        CHECK(c.is_deficient(2));
        CHECK_FALSE(c.is_deficient(3));
    }
    // A dim the ratio does not divide keeps its whole core classical.
    const FactorizedWeight odd = build_weight(fcl_plan(Format::STR, {3, 4}, {10}, 4, 2));
    CHECK(odd.cores[0].tensor.dims == std::vector<int64_t>{4, 3, 4});
    CHECK_FALSE(odd.cores[0].is_deficient(1));
    CHECK(odd.cores[1].tensor.dims == std::vector<int64_t>{2, 2, 4});
}

TEST_CASE("train weight cores follow the declared storage schema") {
    const FactorizedWeight w = build_weight(fcl_plan(Format::STTvec, {4, 6}, {8}, 4, 2));
    REQUIRE(w.cores.size() == 3);
    CHECK(w.cores[0].tensor.dims == std::vector<int64_t>{1, 4, 4});  // first core stays full
    CHECK(w.cores[1].tensor.dims == std::vector<int64_t>{2, 3, 4});
    CHECK(w.cores[2].tensor.dims == std::vector<int64_t>{2, 4});  // output factor (R/t, O/t)

    const FactorizedWeight m = build_weight(conv_plan(Format::STTmat, {4, 2}, {2, 4}, 4, 2));
    REQUIRE(m.cores.size() == 2);
    CHECK(m.cores[0].tensor.dims == std::vector<int64_t>{4, 1, 4});  // (I_1, O_1/t, R)
    CHECK(m.cores[1].tensor.dims == std::vector<int64_t>{2, 1, 4, 2});  // (R/t, I_2/t, O_2, R/t)
    REQUIRE(m.conv_kernel.has_value());
    CHECK(m.conv_kernel->dims == std::vector<int64_t>{3, 3, 1, 4});
}

TEST_CASE("tucker weight holds a core plus per-mode factors") {
    const FactorizedWeight w = build_weight(fcl_plan(Format::STTu, {4, 6}, {4, 2}, 4, 2));
    // Core over all ranks, then output factors, then input factors.
    REQUIRE(w.cores.size() == 5);
    CHECK(w.cores[0].tensor.dims == std::vector<int64_t>{4, 4, 4, 4});
    CHECK(w.cores[1].tensor.dims == std::vector<int64_t>{2, 2});  // (R/t, O_1/t)
    CHECK(w.cores[2].tensor.dims == std::vector<int64_t>{2, 1});
    CHECK(w.cores[3].tensor.dims == std::vector<int64_t>{2, 2});
    CHECK(w.cores[4].tensor.dims == std::vector<int64_t>{2, 3});

    const FactorizedWeight c = build_weight(conv_plan(Format::STTu, {8}, {6}, 4, 2));
    REQUIRE(c.cores.size() == 2);
    CHECK(c.cores[0].tensor.dims == std::vector<int64_t>{2, 4});  // (R/t, I/t)
    CHECK(c.cores[1].tensor.dims == std::vector<int64_t>{2, 3});  // (R/t, O/t)
    REQUIRE(c.conv_kernel.has_value());
    CHECK(c.conv_kernel->dims == std::vector<int64_t>{3, 3, 4, 4});
}

TEST_CASE("stored parameter counts equal the materialized element counts") {
    Rng seeds(71);
    const std::vector<LayerPlan> plans = {
        fcl_plan(Format::Tucker, {4, 6}, {4, 2}, 4, 1),
        fcl_plan(Format::STTu, {4, 6}, {4, 2}, 4, 2),
        fcl_plan(Format::STTu, {3, 4}, {10}, 4, 2),
        fcl_plan(Format::TTvec, {4, 6}, {8}, 4, 1),
        fcl_plan(Format::STTvec, {4, 6}, {8}, 4, 2),
        fcl_plan(Format::STTvec, {3, 4}, {10}, 4, 2),
        fcl_plan(Format::TR, {4, 6}, {4, 2}, 4, 1),
        fcl_plan(Format::STR, {4, 6}, {4, 2}, 4, 2),
        fcl_plan(Format::STR, {3, 4}, {10}, 4, 2),
        fcl_plan(Format::STR, {4, 4, 4}, {10}, 8, 2),
        conv_plan(Format::TR, {4, 2}, {2, 4}, 4, 1),
        conv_plan(Format::STR, {4, 2}, {2, 4}, 4, 2),
        conv_plan(Format::STR, {3}, {4, 2}, 4, 2),
        conv_plan(Format::TTmat, {4, 2}, {2, 4}, 4, 1),
        conv_plan(Format::STTmat, {4, 2}, {2, 4}, 4, 2),
        conv_plan(Format::Tucker, {8}, {6}, 4, 1),
        conv_plan(Format::STTu, {8}, {6}, 4, 2),
    };
    for (const LayerPlan& p : plans) {
        const FactorizedWeight zero = build_weight(p);
        const FactorizedWeight filled = init_gaussian(p, seeds.next_u64());
        CHECK(param_count(p) == zero.param_elements());
        CHECK(param_count(p) == filled.param_elements());
    }
}

TEST_CASE("initialization width for a single factor is the He rule") {
    CHECK(init_sigma(2.0 / 16, 1, 1) == doctest::Approx(std::sqrt(2.0 / 16)));
    CHECK(init_sigma(0.5, 4.0, 2) == doctest::Approx(std::pow(0.125, 0.25)));
}

TEST_CASE("initialization is deterministic per seed") {
    const LayerPlan p = fcl_plan(Format::STR, {4, 4}, {4}, 8, 2);
    const FactorizedWeight a = init_gaussian(p, 123);
    const FactorizedWeight b = init_gaussian(p, 123);
    const FactorizedWeight c = init_gaussian(p, 124);
    for (size_t i = 0; i < a.cores.size(); ++i)
        CHECK(a.cores[i].tensor.data == b.cores[i].tensor.data);
    CHECK(a.cores[0].tensor.data != c.cores[0].tensor.data);
}

TEST_CASE("reconstructed initialization variance tracks the He target") {
    const LayerPlan p = fcl_plan(Format::STR, {4, 4}, {4, 4}, 8, 2);
    const double target = 2.0 / 16.0;
    double sum = 0, sum2 = 0;
    int64_t n = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const DenseTensor w = reconstruct(init_gaussian(p, seed));
        for (double v : w.data) {
            sum += v;
            sum2 += v * v;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    CHECK(var > target / 3.0);
    CHECK(var < target * 3.0);
}

TEST_CASE("merging two classical ring cores multiplies matching slices") {
    Rng rng(73);
    const SemiCore a{oracles::rand_tensor(rng, {2, 3, 2})};
    const SemiCore b{oracles::rand_tensor(rng, {2, 4, 2})};
    const SemiCore m = merge_pair(a, b);
    REQUIRE(m.tensor.dims == std::vector<int64_t>{2, 3, 4, 2});
    for (int64_t r = 0; r < 2; ++r)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 4; ++j)
                for (int64_t s = 0; s < 2; ++s) {
                    double acc = 0;
                    for (int64_t p = 0; p < 2; ++p)
                        acc += a.tensor.at({r, i, p}) * b.tensor.at({p, j, s});
                    CHECK(m.tensor.at({r, i, j, s}) == doctest::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("merging semi ring cores promotes the incoming mode") {
    Rng rng(75);
    const SemiCore a = random_core(rng, {2, 2, 4}, 2, {true, true, false});
    const SemiCore b = random_core(rng, {2, 3, 4}, 2, {true, true, false});
    const SemiCore m = merge_pair(a, b);
    CHECK(m.tensor.dims == std::vector<int64_t>{2, 2, 6, 4});
    CHECK(m.is_deficient(1));
    CHECK(m.is_deficient(2));
    CHECK_FALSE(m.is_deficient(3));
    CHECK_FALSE(m.is_deficient(4));
}

TEST_CASE("an identity middle core only inserts a unit mode") {
    Rng rng(77);
    const SemiCore a{oracles::rand_tensor(rng, {2, 3, 2})};
    DenseTensor eye = DenseTensor::zeros({2, 1, 2});
    eye.at({0, 0, 0}) = 1.0;
    eye.at({1, 0, 1}) = 1.0;
    const SemiCore m = merge_pair(a, SemiCore{std::move(eye)});
    REQUIRE(m.tensor.dims == std::vector<int64_t>{2, 3, 1, 2});
    CHECK(max_rel_diff(reshape(m.tensor, {2, 3, 2}), a.tensor) == 0.0);
}

TEST_CASE("sequential and hierarchical merges agree") {
    Rng rng(79);
    for (int t : {1, 2}) {
        for (int len = 2; len <= 6; ++len) {
            std::vector<SemiCore> chain;
            for (int i = 0; i < len; ++i) {
                if (t == 1)
                    chain.push_back(SemiCore{oracles::rand_tensor(rng, {4, 3, 4})});
                else
                    chain.push_back(random_core(rng, {2, 2, 4}, 2, {true, true, false}));
            }
            const SemiCore s = merge_chain(chain, MergeStrategy::Sequential);
            const SemiCore h = merge_chain(chain, MergeStrategy::Hierarchical);
            REQUIRE(s.tensor.dims == h.tensor.dims);
            CHECK(s.deficient == h.deficient);
            CHECK(s.ratio == h.ratio);
            CHECK(max_rel_diff(s.tensor, h.tensor) < 1e-10);
        }
    }
}

TEST_CASE("a classical three-core merge equals direct double contraction") {
    Rng rng(81);
    const SemiCore a{oracles::rand_tensor(rng, {2, 3, 4})};
    const SemiCore b{oracles::rand_tensor(rng, {4, 2, 3})};
    const SemiCore c{oracles::rand_tensor(rng, {3, 4, 2})};
    const SemiCore m = merge_chain({a, b, c}, MergeStrategy::Sequential);
    // contract(a, b, 1) joins a's last mode to b's first; repeat for c.
    const DenseTensor direct = contract(contract(a.tensor, b.tensor, 1), c.tensor, 1);
    REQUIRE(m.tensor.dims == direct.dims);
    CHECK(max_rel_diff(m.tensor, direct) < 1e-12);
}

TEST_CASE("merge gradients match finite differences") {
    Rng rng(83);
    std::vector<SemiCore> chain = {random_core(rng, {2, 2, 4}, 2, {true, true, false}),
                                   random_core(rng, {2, 2, 4}, 2, {true, true, false}),
                                   random_core(rng, {2, 2, 4}, 2, {true, true, false})};
    const SemiCore merged = merge_chain(chain, MergeStrategy::Sequential);
    DenseTensor dz = merged.tensor;
    for (double& v : dz.data) v = rng.uniform(-1, 1);
    const std::vector<DenseTensor> grads = merge_chain_backward(chain, dz);
    REQUIRE(grads.size() == chain.size());
    const double h = 1e-6;
    auto loss = [&](const std::vector<SemiCore>& cs) {
        const SemiCore m = merge_chain(cs, MergeStrategy::Sequential);
        double acc = 0;
        for (size_t i = 0; i < m.tensor.data.size(); ++i) acc += m.tensor.data[i] * dz.data[i];
        return acc;
    };
    for (size_t k = 0; k < chain.size(); ++k)
        for (size_t i = 0; i < chain[k].tensor.data.size(); i += 3) {
            auto cp = chain, cm = chain;
            cp[k].tensor.data[i] += h;
            cm[k].tensor.data[i] -= h;
            CHECK(grads[k].data[i] ==
                  doctest::Approx((loss(cp) - loss(cm)) / (2 * h)).epsilon(1e-5));
        }
}

TEST_CASE("reconstruction with identity factors returns the core") {
    // Tucker at ratio 1 with identity factor matrices.
    LayerPlan p = fcl_plan(Format::Tucker, {4, 3}, {2, 5}, 1, 1);
    FactorizedWeight w = init_gaussian(p, 7);
    REQUIRE(w.cores.size() == 5);
    // Shape the core by hand: ranks equal to the mode sizes, identity factors.
    Rng rng(85);
    w.cores[0] = SemiCore{oracles::rand_tensor(rng, {2, 5, 4, 3})};
    w.cores[1] = SemiCore{oracles::identity(2)};
    w.cores[2] = SemiCore{oracles::identity(5)};
    w.cores[3] = SemiCore{oracles::identity(4)};
    w.cores[4] = SemiCore{oracles::identity(3)};
    const DenseTensor full = reconstruct(w);
    REQUIRE(full.dims == std::vector<int64_t>{2, 5, 4, 3});
    CHECK(max_rel_diff(full, w.cores[0].tensor) < 1e-12);
}

TEST_CASE("a single-core classical ring reconstructs to slice traces") {
    LayerPlan p = fcl_plan(Format::TR, {5}, {1}, 3, 1);
    FactorizedWeight w = build_weight(p);
    Rng rng(87);
    w.cores[0] = SemiCore{oracles::rand_tensor(rng, {3, 5, 3})};
    // Keep the unit output core neutral: (3, 1, 3) identity slices.
    DenseTensor eye = DenseTensor::zeros({3, 1, 3});
    for (int64_t r = 0; r < 3; ++r) eye.at({r, 0, r}) = 1.0;
    w.cores[1] = SemiCore{std::move(eye)};
    const DenseTensor full = reconstruct(w);
    REQUIRE(full.dims == std::vector<int64_t>{5, 1});
    for (int64_t i = 0; i < 5; ++i) {
        double acc = 0;
        for (int64_t r = 0; r < 3; ++r) acc += w.cores[0].tensor.at({r, i, r});
        CHECK(full.at({i, 0}) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("semi ring reconstruction matches the residual-rule loop oracle") {
    // R = 4, I = (4, 4), O = (4), t = 2: three cores of shape (2, 2, 4).
    const LayerPlan p = fcl_plan(Format::STR, {4, 4}, {4}, 4, 2);
    const FactorizedWeight w = init_gaussian(p, 99);
    REQUIRE(w.cores.size() == 3);
    const DenseTensor& g1 = w.cores[0].tensor;
    const DenseTensor& g2 = w.cores[1].tensor;
    const DenseTensor& h1 = w.cores[2].tensor;

    // Step 1: merge g1 with g2; the residual promotes g2's middle mode.
    DenseTensor m1 = DenseTensor::zeros({2, 2, 4, 4});
    for (int64_t a = 0; a < 2; ++a)
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t j = 0; j < 2; ++j)
                for (int64_t s = 0; s < 2; ++s)
                    for (int64_t b = 0; b < 4; ++b)
                        for (int64_t q = 0; q < 2; ++q)
                            m1.at({a, i, j * 2 + s, b}) +=
                                g1.at({a, i, q * 2 + s}) * g2.at({q, j, b});
    // Step 2: merge with the output core; the residual promotes its middle.
    DenseTensor m2 = DenseTensor::zeros({2, 2, 4, 4, 4});
    for (int64_t a = 0; a < 2; ++a)
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t jf = 0; jf < 4; ++jf)
                for (int64_t o = 0; o < 2; ++o)
                    for (int64_t s = 0; s < 2; ++s)
                        for (int64_t b = 0; b < 4; ++b)
                            for (int64_t q = 0; q < 2; ++q)
                                m2.at({a, i, jf, o * 2 + s, b}) +=
                                    m1.at({a, i, jf, q * 2 + s}) * h1.at({q, o, b});
    // Ring closure: the last mode splits (major 2, minor 2); the major half
    // traces against the first mode and the residual promotes the first
    // deficient interior mode (I_1 / t).
    DenseTensor want = DenseTensor::zeros({4, 4, 4});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t s = 0; s < 2; ++s)
            for (int64_t jf = 0; jf < 4; ++jf)
                for (int64_t of = 0; of < 4; ++of) {
                    double acc = 0;
                    for (int64_t a = 0; a < 2; ++a) acc += m2.at({a, i, jf, of, a * 2 + s});
                    want.at({i * 2 + s, jf, of}) = acc;
                }
    const DenseTensor got = reconstruct(w);
    REQUIRE(got.dims == want.dims);
    CHECK(max_rel_diff(got, want) < 1e-12);
}

TEST_CASE("every format reconstructs to its promised logical shape") {
    const std::vector<std::pair<LayerPlan, std::vector<int64_t>>> cases = {
        {fcl_plan(Format::Tucker, {4, 6}, {4, 2}, 4, 1), {4, 2, 4, 6}},
        {fcl_plan(Format::STTu, {4, 6}, {4, 2}, 4, 2), {4, 2, 4, 6}},
        {fcl_plan(Format::TTvec, {4, 6}, {8}, 4, 1), {8, 4, 6}},
        {fcl_plan(Format::STTvec, {4, 6}, {8}, 4, 2), {8, 4, 6}},
        {fcl_plan(Format::TR, {4, 6}, {4, 2}, 4, 1), {4, 6, 4, 2}},
        {fcl_plan(Format::STR, {4, 6}, {4, 2}, 4, 2), {4, 6, 4, 2}},
        {conv_plan(Format::TR, {4, 2}, {2, 4}, 4, 1), {3, 3, 8, 8}},
        {conv_plan(Format::STR, {4, 2}, {2, 4}, 4, 2), {3, 3, 8, 8}},
        {conv_plan(Format::TTmat, {4, 2}, {2, 4}, 4, 1), {3, 3, 8, 8}},
        {conv_plan(Format::STTmat, {4, 2}, {2, 4}, 4, 2), {3, 3, 8, 8}},
        {conv_plan(Format::Tucker, {8}, {6}, 4, 1), {3, 3, 8, 6}},
        {conv_plan(Format::STTu, {8}, {6}, 4, 2), {3, 3, 8, 6}},
    };
    Rng seeds(89);
    for (const auto& [plan, want] : cases) {
        const DenseTensor full = reconstruct(init_gaussian(plan, seeds.next_u64()));
        CHECK(full.dims == want);
    }
}

TEST_CASE("ring reconstruction is invariant under cyclic core rotation") {
    Rng rng(91);
    const std::vector<SemiCore> cores = {SemiCore{oracles::rand_tensor(rng, {3, 4, 3})},
                                         SemiCore{oracles::rand_tensor(rng, {3, 5, 3})},
                                         SemiCore{oracles::rand_tensor(rng, {3, 2, 3})}};
    const SemiCore closed = ring_close(merge_chain(cores, MergeStrategy::Sequential));
    const std::vector<SemiCore> rotated = {cores[1], cores[2], cores[0]};
    const SemiCore closed_rot = ring_close(merge_chain(rotated, MergeStrategy::Sequential));
    const DenseTensor back = permute(closed_rot.tensor, std::vector<int>{2, 0, 1});
    REQUIRE(back.dims == closed.tensor.dims);
    CHECK(max_rel_diff(back, closed.tensor) < 1e-10);
}
