#include "stpn/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <string>

#include "stpn/factorized.hpp"
#include "stpn/layers.hpp"
#include "stpn/rng.hpp"
#include "stpn/stp.hpp"
#include "stpn/tensor_ops.hpp"

namespace stpn {

namespace {

class Suite {
public:
    explicit Suite(std::string name) { result_.name = std::move(name); }

    void check(const std::string& what, const std::function<double()>& rel_err, double tol) {
        ++result_.total;
        std::string failure;
        try {
            const double err = rel_err();
            if (std::isfinite(err) && err <= tol) return;
            failure = what + ": relative error " + std::to_string(err);
        } catch (const std::exception& e) {
            failure = what + ": " + e.what();
        }
        ++result_.failed;
        if (result_.first_failure.empty()) result_.first_failure = failure;
    }

    [[nodiscard]] SuiteResult result() const { return result_; }

private:
    SuiteResult result_;
};

DenseTensor random_tensor(Rng& rng, std::vector<int64_t> dims) {
    DenseTensor t = DenseTensor::zeros(std::move(dims));
    for (double& v : t.data) v = rng.normal(0.0, 1.0);
    return t;
}

// ---- reference routes ----------------------------------------------------

// Regress x (B, I_1..I_N) against a reconstruction carrying the input modes
// first, i.e. shaped (I_1..I_N, O...): plain trailing-leading contraction.
DenseTensor fcl_oracle(const DenseTensor& x, const DenseTensor& w_in_first,
                       const DenseTensor& bias) {
    DenseTensor y = contract(x, w_in_first, x.order() - 1);
    const int64_t p = bias.numel();
    for (int64_t i = 0; i < y.numel(); ++i)
        y.data[static_cast<size_t>(i)] += bias.data[static_cast<size_t>(i % p)];
    return y;
}

// Move the input modes of a reconstruction in front. in_modes names the
// 0-based positions of I_1..I_N in the reconstruction's mode order.
DenseTensor input_modes_first(const DenseTensor& w, const std::vector<int>& in_modes) {
    std::vector<int> perm = in_modes;
    std::vector<bool> taken(static_cast<size_t>(w.order()), false);
    for (int m : in_modes) taken[static_cast<size_t>(m)] = true;
    for (int m = 0; m < w.order(); ++m)
        if (!taken[static_cast<size_t>(m)]) perm.push_back(m);
    return permute(w, perm);
}

// Dense conv route: x (B, H, W, channel modes...) flattened to one channel
// mode, convolved with the reconstructed 4-way kernel (K, K, prod I, prod O).
DenseTensor conv_oracle(const DenseTensor& x, const DenseTensor& kernel4, int64_t stride,
                        int64_t pad, const DenseTensor& bias,
                        const std::vector<int64_t>& out_dims) {
    const int64_t b = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t cin = x.numel() / (b * h * w);
    const DenseTensor xf = reshape(x, {b, h, w, cin});
    const int64_t ho = conv_out_size(h, kernel4.dim(1), stride, pad);
    const int64_t wo = conv_out_size(w, kernel4.dim(2), stride, pad);
    const int64_t cout = kernel4.dim(4);
    std::vector<int64_t> ydims = {b, ho, wo};
    for (int64_t d : out_dims) ydims.push_back(d);
    DenseTensor y = DenseTensor::zeros(ydims);
    const int64_t plane = h * w * cin;
    const int64_t oplane = ho * wo * cout;
    for (int64_t i = 0; i < b; ++i) {
        DenseTensor slice = DenseTensor::zeros({h, w, cin});
        std::copy(xf.data.begin() + i * plane, xf.data.begin() + (i + 1) * plane,
                  slice.data.begin());
        const DenseTensor yi = conv2d(slice, kernel4, stride, pad);
        std::copy(yi.data.begin(), yi.data.end(), y.data.begin() + i * oplane);
    }
    const int64_t p = bias.numel();
    for (int64_t i = 0; i < y.numel(); ++i)
        y.data[static_cast<size_t>(i)] += bias.data[static_cast<size_t>(i % p)];
    return y;
}

// ---- layer dispatch --------------------------------------------------------

DenseTensor layer_forward(const DenseTensor& x, const FactorizedWeight& w, const LayerPlan& plan,
                          const DenseTensor& bias) {
    switch (w.format) {
        case Format::TR:
        case Format::STR:
            return w.kind == LayerKind::Conv
                       ? str_conv_forward(x, w, plan.stride, plan.pad, bias)
                       : str_fcl_forward(x, w, bias);
        case Format::TTvec:
        case Format::STTvec:
            return stt_fcl_forward(x, w, bias);
        case Format::TTmat:
        case Format::STTmat:
            return stt_conv_forward(x, w, plan.stride, plan.pad, bias);
        case Format::Tucker:
        case Format::STTu:
            return w.kind == LayerKind::Conv
                       ? sttu_conv_forward(x, w, plan.stride, plan.pad, bias)
                       : sttu_fcl_forward(x, w, bias);
    }
    throw std::logic_error("unreachable");
}

DenseTensor layer_input(Rng& rng, const LayerPlan& plan) {
    std::vector<int64_t> dims = {plan.batch};
    if (plan.kind == LayerKind::Conv) {
        dims.push_back(plan.height);
        dims.push_back(plan.width);
        const bool tt = plan.format == Format::TTmat || plan.format == Format::STTmat;
        if (tt) dims.push_back(1);  // explicit unit channel of the train conv form
    }
    for (int64_t d : plan.input_dims) dims.push_back(d);
    return random_tensor(rng, dims);
}

DenseTensor layer_bias(Rng& rng, const LayerPlan& plan) {
    if (plan.kind == LayerKind::Fcl &&
        (plan.format == Format::TTvec || plan.format == Format::STTvec))
        return random_tensor(rng, {plan.out_features()});
    if (plan.kind == LayerKind::Conv &&
        (plan.format == Format::Tucker || plan.format == Format::STTu))
        return random_tensor(rng, {plan.out_features()});
    return random_tensor(rng, plan.output_dims);
}

// Reference output through the materialized weight.
DenseTensor oracle_forward(const DenseTensor& x, const FactorizedWeight& w, const LayerPlan& plan,
                           const DenseTensor& bias) {
    const DenseTensor recon = reconstruct(w);
    if (plan.kind == LayerKind::Conv)
        return conv_oracle(x, recon, plan.stride, plan.pad, bias,
                           w.format == Format::Tucker || w.format == Format::STTu
                               ? std::vector<int64_t>{plan.out_features()}
                               : plan.output_dims);
    const auto n = static_cast<int>(plan.input_dims.size());
    DenseTensor in_first;
    switch (w.format) {
        case Format::TR:
        case Format::STR:
            in_first = recon;  // already (I..., O...)
            break;
        case Format::TTvec:
        case Format::STTvec: {
            std::vector<int> in_modes(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) in_modes[static_cast<size_t>(i)] = i + 1;
            in_first = input_modes_first(recon, in_modes);  // (O, I...) -> (I..., O)
            break;
        }
        default: {  // Tucker pair: (O..., I...)
            const auto m = static_cast<int>(plan.output_dims.size());
            std::vector<int> in_modes(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) in_modes[static_cast<size_t>(i)] = m + i;
            in_first = input_modes_first(recon, in_modes);
            break;
        }
    }
    return fcl_oracle(x, in_first, bias);
}

double layer_vs_oracle(uint64_t seed, const LayerPlan& plan) {
    Rng rng(seed);
    const FactorizedWeight w = init_gaussian(plan, rng.next_u64());
    const DenseTensor x = layer_input(rng, plan);
    const DenseTensor bias = layer_bias(rng, plan);
    return max_rel_diff(layer_forward(x, w, plan, bias), oracle_forward(x, w, plan, bias));
}

// Forward of the semi format at ratio 1 against its classical twin, sharing
// one init seed (the storage schemas coincide at ratio 1).
double collapse_gap(uint64_t seed, LayerPlan semi) {
    semi.ratio = 1;
    LayerPlan classical = semi;
    classical.format = classical_counterpart(semi.format);
    Rng rng(seed);
    const uint64_t init_seed = rng.next_u64();
    const FactorizedWeight ws = init_gaussian(semi, init_seed);
    const FactorizedWeight wc = init_gaussian(classical, init_seed);
    const DenseTensor x = layer_input(rng, semi);
    const DenseTensor bias = layer_bias(rng, semi);
    const DenseTensor ys = layer_forward(x, ws, semi, bias);
    const DenseTensor yc = layer_forward(x, wc, classical, bias);
    const double gap = max_rel_diff(ys, yc);
    return std::max(gap, max_rel_diff(ys, oracle_forward(x, wc, classical, bias)));
}

// ---- plan zoo ------------------------------------------------------------

LayerPlan fcl_plan(Format f, std::vector<int64_t> in, std::vector<int64_t> out, int64_t rank,
                   int ratio) {
    LayerPlan p;
    p.format = f;
    p.kind = LayerKind::Fcl;
    p.input_dims = std::move(in);
    p.output_dims = std::move(out);
    p.rank = rank;
    p.ratio = ratio;
    p.batch = 3;
    p.validate();
    return p;
}

LayerPlan conv_plan(Format f, std::vector<int64_t> in, std::vector<int64_t> out, int64_t rank,
                    int ratio, int64_t stride) {
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
    p.stride = stride;
    p.pad = 1;
    p.batch = 2;
    p.validate();
    return p;
}

std::vector<LayerPlan> semi_plans(int ratio) {
    return {
        fcl_plan(Format::STR, {4, 6}, {4, 2}, 4, ratio),
        fcl_plan(Format::STR, {3, 4}, {10}, 4, ratio),  // odd dim: fallback core
        fcl_plan(Format::STTvec, {4, 6}, {8}, 4, ratio),
        fcl_plan(Format::STTu, {4, 6}, {4, 2}, 4, ratio),
        conv_plan(Format::STR, {4, 2}, {2, 4}, 4, ratio, 1),
        conv_plan(Format::STR, {4, 3}, {6}, 4, ratio, 2),  // odd dim + strided
        conv_plan(Format::STTmat, {4, 2}, {2, 4}, 4, ratio, 1),
        conv_plan(Format::STTu, {8}, {6}, 4, ratio, 1),
    };
}

// ---- suites ----------------------------------------------------------------

SuiteResult suite_stp_kron() {
    Suite s("semi product vs Kronecker oracle");
    Rng rng(0x5eed0001);
    for (int it = 0; it < 250; ++it) {
        const int64_t m = 1 + static_cast<int64_t>(rng.below(6));
        const int64_t n = 1 + static_cast<int64_t>(rng.below(4));
        const int64_t p = 1 + static_cast<int64_t>(rng.below(6));
        const int64_t q = 1 + static_cast<int64_t>(rng.below(6));
        const DenseTensor x = random_tensor(rng, {m, n * p});
        const DenseTensor w = random_tensor(rng, {p, q});
        s.check("blockwise vs Kronecker route",
                [&] { return max_rel_diff(stp_mat(x, w), stp_oracle_kron(x, w)); }, 1e-12);
    }
    return s.result();
}

SuiteResult suite_collapse() {
    Suite s("ratio-1 collapse to classical layers");
    uint64_t seed = 0x5eed0002;
    for (const LayerPlan& plan : semi_plans(1))
        for (int rep = 0; rep < 3; ++rep)
            s.check(std::string(format_name(plan.format)) + " ratio-1 vs classical twin",
                    [&, plan] { return collapse_gap(seed++, plan); }, 1e-10);
    return s.result();
}

SuiteResult suite_layers() {
    Suite s("layers vs reconstruction oracle");
    uint64_t seed = 0x5eed0003;
    for (int ratio : {1, 2})
        for (const LayerPlan& plan : semi_plans(ratio))
            for (int rep = 0; rep < 3; ++rep)
                s.check(std::string(format_name(plan.format)) + " forward vs reconstruction",
                        [&, plan] { return layer_vs_oracle(seed++, plan); }, 1e-9);
    return s.result();
}

SuiteResult suite_merge() {
    Suite s("sequential vs hierarchical merging");
    Rng rng(0x5eed0004);
    for (int it = 0; it < 40; ++it) {
        const int ratio = it % 2 == 0 ? 2 : 1;
        const int64_t rank = 4;
        std::vector<SemiCore> chain;
        for (int k = 0; k < 6; ++k) {
            const int64_t d = 2 * (1 + static_cast<int64_t>(rng.below(3)));
            const bool full = ratio == 1 || rng.below(4) == 0;
            std::vector<int64_t> dims = full
                ? std::vector<int64_t>{rank, d, rank}
                : std::vector<int64_t>{rank / ratio, d / ratio, rank};
            chain.emplace_back(random_tensor(rng, dims), full ? 1 : ratio,
                               std::vector<bool>{!full, !full, false});
        }
        s.check("merge strategies agree", [&] {
            const SemiCore seq = merge_chain(chain, MergeStrategy::Sequential);
            const SemiCore hier = merge_chain(chain, MergeStrategy::Hierarchical);
            if (seq.tensor.dims != hier.tensor.dims || seq.deficient != hier.deficient)
                throw std::runtime_error("merge strategies disagree on metadata");
            return max_rel_diff(seq.tensor, hier.tensor);
        }, 1e-10);
    }
    return s.result();
}

}  // namespace

std::vector<SuiteResult> run_selfcheck() {
    return {suite_stp_kron(), suite_collapse(), suite_layers(), suite_merge()};
}

std::string selfcheck_table(const std::vector<SuiteResult>& suites) {
    std::ostringstream out;
    bool all = true;
    for (const SuiteResult& s : suites) {
        out << (s.passed() ? "PASS" : "FAIL") << "  " << s.name << "  (" << (s.total - s.failed)
            << "/" << s.total << " checks)\n";
        if (!s.passed()) {
            out << "      first failure: " << s.first_failure << "\n";
            all = false;
        }
    }
    out << (all ? "all suites passed\n" : "SELF-CHECK FAILED\n");
    return out.str();
}

}  // namespace stpn
