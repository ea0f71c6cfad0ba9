#include "stpn/factorized.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "stpn/rng.hpp"
#include "stpn/tensor_ops.hpp"

namespace stpn {

const char* format_name(Format f) {
    switch (f) {
        case Format::Tucker: return "tucker";
        case Format::STTu: return "sttu";
        case Format::TTvec: return "tt-vec";
        case Format::STTvec: return "stt-vec";
        case Format::TTmat: return "tt-mat";
        case Format::STTmat: return "stt-mat";
        case Format::TR: return "tr";
        case Format::STR: return "str";
    }
    return "?";
}

bool format_is_semi(Format f) {
    return f == Format::STTu || f == Format::STTvec || f == Format::STTmat || f == Format::STR;
}

Format classical_counterpart(Format f) {
    switch (f) {
        case Format::STTu: return Format::Tucker;
        case Format::STTvec: return Format::TTvec;
        case Format::STTmat: return Format::TTmat;
        case Format::STR: return Format::TR;
        default: return f;
    }
}

Format resolve_format(const std::string& family, LayerKind kind) {
    const bool conv = kind == LayerKind::Conv;
    if (family == "tucker") return Format::Tucker;
    if (family == "sttu") return Format::STTu;
    if (family == "tt") return conv ? Format::TTmat : Format::TTvec;
    if (family == "stt") return conv ? Format::STTmat : Format::STTvec;
    if (family == "tr") return Format::TR;
    if (family == "str") return Format::STR;
    throw std::invalid_argument("unknown format family: " + family);
}

namespace {

int64_t product_of(const std::vector<int64_t>& dims) {
    int64_t p = 1;
    for (int64_t d : dims) p *= d;
    return p;
}

}  // namespace

int64_t LayerPlan::in_features() const { return product_of(input_dims); }
int64_t LayerPlan::out_features() const { return product_of(output_dims); }
int64_t LayerPlan::out_height() const { return conv_out_size(height, kernel, stride, pad); }
int64_t LayerPlan::out_width() const { return conv_out_size(width, kernel, stride, pad); }

LayerPlan LayerPlan::normalized() const {
    LayerPlan p = *this;
    p.pad_odd = false;
    if (!pad_odd || ratio <= 1) return p;
    auto bump = [&](std::vector<int64_t>& dims) {
        for (int64_t& d : dims) {
            const int64_t rem = d % ratio;
            if (rem != 0) d += ratio - rem;
        }
    };
    bump(p.input_dims);
    bump(p.output_dims);
    return p;
}

void LayerPlan::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("LayerPlan: " + msg); };
    if (input_dims.empty() || output_dims.empty()) fail("dimension lists must be non-empty");
    for (int64_t d : input_dims)
        if (d < 1) fail("input dims must be positive");
    for (int64_t d : output_dims)
        if (d < 1) fail("output dims must be positive");
    if (rank < 1) fail("rank must be positive");
    if (ratio < 1) fail("ratio must be positive");
    if (!format_is_semi(format) && ratio != 1) fail("classical formats require ratio 1");
    if (ratio > 1 && rank % ratio != 0) fail("rank must be a multiple of the ratio");
    const bool conv = kind == LayerKind::Conv;
    switch (format) {
        case Format::TTvec:
        case Format::STTvec:
            if (conv) fail("vector train formats apply to fully-connected layers only");
            if (output_dims.size() != 1) fail("vector train formats produce one output mode");
            break;
        case Format::TTmat:
        case Format::STTmat:
            if (!conv) fail("matrix train formats apply to conv layers only");
            if (input_dims.size() != output_dims.size())
                fail("matrix train formats pair input and output modes");
            break;
        case Format::Tucker:
        case Format::STTu:
            if (conv && (input_dims.size() != 1 || output_dims.size() != 1))
                fail("the Tucker conv form keeps channels unfactorized");
            break;
        default:
            break;
    }
    if (conv) {
        if (kernel < 1) fail("kernel must be positive");
        if (stride < 1) fail("stride must be positive");
        if (pad < 0) fail("pad must be non-negative");
        if (height < 1 || width < 1) fail("spatial size must be positive");
        if (height + 2 * pad < kernel || width + 2 * pad < kernel)
            fail("kernel does not fit the padded input");
    }
    if (batch < 1) fail("batch must be positive");
}

StoredMode stored_mode(int64_t logical, int ratio) {
    if (ratio > 1 && logical % ratio == 0) return {logical / ratio, true};
    return {logical, false};
}

namespace {

StoredMode full_mode(int64_t size) { return {size, false}; }

SemiCore zero_core(const std::vector<StoredMode>& modes, int ratio) {
    std::vector<int64_t> dims(modes.size());
    std::vector<bool> flags(modes.size());
    for (size_t i = 0; i < modes.size(); ++i) {
        dims[i] = modes[i].size;
        flags[i] = modes[i].deficient;
    }
    return {DenseTensor::zeros(dims), ratio, std::move(flags)};
}

// Chain core (rank, d, rank) for one logical dimension; when d resists the
// ratio the whole core is stored fully classical so every link stays sound.
SemiCore chain_core(int64_t rank, int64_t d, int t) {
    const StoredMode dm = stored_mode(d, t);
    if (dm.deficient) return zero_core({{rank / t, true}, dm, full_mode(rank)}, t);
    return zero_core({full_mode(rank), full_mode(d), full_mode(rank)}, t);
}

// Factor matrix (rank, d): both modes shrink or neither does.
SemiCore factor_core(int64_t rank, int64_t d, int t) {
    const StoredMode dm = stored_mode(d, t);
    if (dm.deficient) return zero_core({{rank / t, true}, dm}, t);
    return zero_core({full_mode(rank), full_mode(d)}, t);
}

}  // namespace

int64_t FactorizedWeight::param_elements() const {
    int64_t total = 0;
    for (const SemiCore& c : cores) total += c.tensor.numel();
    if (conv_kernel) total += conv_kernel->numel();
    return total;
}

FactorizedWeight build_weight(const LayerPlan& plan_in) {
    const LayerPlan plan = plan_in.normalized();
    plan.validate();
    const int t = plan.ratio;
    const int64_t r = plan.rank;
    const std::vector<int64_t>& in = plan.input_dims;
    const std::vector<int64_t>& out = plan.output_dims;

    FactorizedWeight w;
    w.format = plan.format;
    w.kind = plan.kind;
    w.ratio = t;
    w.rank = r;
    w.input_dims = in;
    w.output_dims = out;

    switch (plan.format) {
        case Format::TR:
        case Format::STR: {
            for (int64_t d : in) w.cores.push_back(chain_core(r, d, t));
            for (int64_t d : out) w.cores.push_back(chain_core(r, d, t));
            if (plan.kind == LayerKind::Conv)
                w.conv_kernel = DenseTensor::zeros({plan.kernel, plan.kernel, r, r});
            break;
        }
        case Format::TTvec:
        case Format::STTvec: {
            // Head core always full: its leading boundary mode has size 1.
            w.cores.push_back(zero_core({full_mode(1), full_mode(in[0]), full_mode(r)}, t));
            for (size_t i = 1; i < in.size(); ++i) w.cores.push_back(chain_core(r, in[i], t));
            w.cores.push_back(factor_core(r, out[0], t));
            break;
        }
        case Format::TTmat:
        case Format::STTmat: {
            const size_t n = in.size();
            // The head core's output mode shrinks exactly when the kernel
            // absorption carries a residual, i.e. when the tail rank shrinks.
            const bool chain_semi =
                t > 1 && out[0] % t == 0 && (n == 1 || in[n - 1] % t == 0);
            const StoredMode o1 = chain_semi ? StoredMode{out[0] / t, true} : full_mode(out[0]);
            const StoredMode tail_rank = chain_semi ? StoredMode{r / t, true} : full_mode(r);
            if (n == 1) {
                w.cores.push_back(zero_core({full_mode(in[0]), o1, tail_rank}, t));
            } else {
                w.cores.push_back(zero_core({full_mode(in[0]), o1, full_mode(r)}, t));
                for (size_t i = 1; i + 1 < n; ++i) {
                    const StoredMode im = stored_mode(in[i], t);
                    if (im.deficient)
                        w.cores.push_back(
                            zero_core({{r / t, true}, im, full_mode(out[i]), full_mode(r)}, t));
                    else
                        w.cores.push_back(zero_core(
                            {full_mode(r), full_mode(in[i]), full_mode(out[i]), full_mode(r)}, t));
                }
                const StoredMode im = stored_mode(in[n - 1], t);
                if (im.deficient)
                    w.cores.push_back(
                        zero_core({{r / t, true}, im, full_mode(out[n - 1]), tail_rank}, t));
                else
                    w.cores.push_back(zero_core(
                        {full_mode(r), full_mode(in[n - 1]), full_mode(out[n - 1]), tail_rank}, t));
            }
            w.conv_kernel = DenseTensor::zeros({plan.kernel, plan.kernel, 1, r});
            break;
        }
        case Format::Tucker:
        case Format::STTu: {
            if (plan.kind == LayerKind::Fcl) {
                const size_t m = out.size() + in.size();
                std::vector<StoredMode> core_modes(m, full_mode(r));
                w.cores.push_back(zero_core(core_modes, t));
                for (int64_t d : out) w.cores.push_back(factor_core(r, d, t));
                for (int64_t d : in) w.cores.push_back(factor_core(r, d, t));
            } else {
                w.cores.push_back(factor_core(r, in[0], t));
                w.cores.push_back(factor_core(r, out[0], t));
                w.conv_kernel = DenseTensor::zeros({plan.kernel, plan.kernel, r, r});
            }
            break;
        }
    }
    return w;
}

double init_sigma(double fan_variance, double fan_product, int depth) {
    if (fan_variance <= 0.0 || fan_product <= 0.0 || depth < 1)
        throw std::invalid_argument("init_sigma: arguments must be positive");
    return std::pow(fan_variance / fan_product, 1.0 / (2.0 * static_cast<double>(depth)));
}

namespace {

// Terms summed per reconstructed entry (product of the contracted stored
// ranges) and stored factors multiplied inside each term.
std::pair<double, int> fan_and_depth(const FactorizedWeight& w) {
    double fan = 1.0;
    int depth = 0;
    switch (w.format) {
        case Format::TR:
        case Format::STR: {
            // Every chain link plus the closure sums over some core's stored
            // leading rank; the kernel adds one full-rank link.
            for (const SemiCore& c : w.cores) fan *= static_cast<double>(c.stored_dim(1));
            depth = static_cast<int>(w.cores.size());
            if (w.conv_kernel) {
                fan *= static_cast<double>(w.conv_kernel->dim(3));
                depth += 1;
            }
            break;
        }
        case Format::TTvec:
        case Format::STTvec: {
            for (size_t i = 1; i < w.cores.size(); ++i)
                fan *= static_cast<double>(w.cores[i].stored_dim(1));
            depth = static_cast<int>(w.cores.size());
            break;
        }
        case Format::TTmat:
        case Format::STTmat: {
            for (size_t i = 1; i < w.cores.size(); ++i)
                fan *= static_cast<double>(w.cores[i].stored_dim(1));
            const SemiCore& tail = w.cores.back();
            fan *= static_cast<double>(tail.stored_dim(tail.order()));
            depth = static_cast<int>(w.cores.size()) + 1;
            break;
        }
        case Format::Tucker:
        case Format::STTu: {
            if (w.kind == LayerKind::Fcl) {
                for (size_t i = 1; i < w.cores.size(); ++i)
                    fan *= static_cast<double>(w.cores[i].stored_dim(1));
                depth = static_cast<int>(w.cores.size());
            } else {
                fan = static_cast<double>(w.cores[0].stored_dim(1)) *
                      static_cast<double>(w.cores[1].stored_dim(1));
                depth = 3;
            }
            break;
        }
    }
    return {fan, depth};
}

}  // namespace

FactorizedWeight init_gaussian(const LayerPlan& plan, uint64_t seed) {
    FactorizedWeight w = build_weight(plan);
    const LayerPlan p = plan.normalized();
    const double fan_in =
        p.kind == LayerKind::Conv
            ? static_cast<double>(p.kernel * p.kernel * p.in_features())
            : static_cast<double>(p.in_features());
    const auto [fan, depth] = fan_and_depth(w);
    const double sigma = init_sigma(2.0 / fan_in, fan, depth);
    Rng rng(seed);
    for (SemiCore& c : w.cores)
        for (double& v : c.tensor.data) v = rng.normal(0.0, sigma);
    if (w.conv_kernel)
        for (double& v : w.conv_kernel->data) v = rng.normal(0.0, sigma);
    return w;
}

SemiCore merge_pair(const SemiCore& left, const SemiCore& right) {
    return semi_contract(left, left.order(), right, 1);
}

namespace {

SemiCore merge_range(const std::vector<SemiCore>& cores, size_t lo, size_t hi) {
    if (hi - lo == 1) return cores[lo];
    const size_t mid = lo + (hi - lo) / 2;
    return merge_pair(merge_range(cores, lo, mid), merge_range(cores, mid, hi));
}

}  // namespace

SemiCore merge_chain(const std::vector<SemiCore>& cores, MergeStrategy strategy) {
    if (cores.empty()) throw std::invalid_argument("merge_chain: empty chain");
    if (strategy == MergeStrategy::Hierarchical) return merge_range(cores, 0, cores.size());
    SemiCore acc = cores.front();
    for (size_t i = 1; i < cores.size(); ++i) acc = merge_pair(acc, cores[i]);
    return acc;
}

std::vector<DenseTensor> merge_chain_backward(const std::vector<SemiCore>& cores,
                                              const DenseTensor& d_merged) {
    const size_t m = cores.size();
    if (m == 0) throw std::invalid_argument("merge_chain_backward: empty chain");
    std::vector<DenseTensor> grads(m);
    if (m == 1) {
        grads[0] = d_merged;
        return grads;
    }
    std::vector<SemiCore> partial(m);
    partial[0] = cores[0];
    for (size_t i = 1; i < m; ++i) partial[i] = merge_pair(partial[i - 1], cores[i]);
    DenseTensor up = d_merged;
    for (size_t i = m; i-- > 1;) {
        const SemiContractSpec spec{partial[i - 1].order(), 1, {}};
        auto [dl, dr] = semi_contract_general_backward(partial[i - 1], cores[i], spec, up);
        grads[i] = std::move(dr);
        up = std::move(dl);
    }
    grads[0] = std::move(up);
    return grads;
}

namespace {

SemiCore semi_permute(const SemiCore& c, const std::vector<int>& perm) {
    std::vector<bool> flags(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) flags[i] = c.deficient[static_cast<size_t>(perm[i])];
    return {permute(c.tensor, perm), c.ratio, std::move(flags)};
}

// Natural interleaved order (I_1, O_1, ..., I_N, O_N, R) to the grouped
// order (R, I_1..I_N, O_1..O_N).
std::vector<int> mat_group_perm(int n) {
    std::vector<int> perm(static_cast<size_t>(2 * n + 1));
    perm[0] = 2 * n;
    for (int k = 1; k <= n; ++k) {
        perm[static_cast<size_t>(k)] = 2 * (k - 1);
        perm[static_cast<size_t>(n + k)] = 2 * k - 1;
    }
    return perm;
}

}  // namespace

MergedChains merged_chains(const FactorizedWeight& w, MergeStrategy strategy) {
    switch (w.format) {
        case Format::TR:
        case Format::STR: {
            const auto n_in = static_cast<std::ptrdiff_t>(w.input_dims.size());
            const std::vector<SemiCore> ins(w.cores.begin(), w.cores.begin() + n_in);
            const std::vector<SemiCore> outs(w.cores.begin() + n_in, w.cores.end());
            return {merge_chain(ins, strategy), merge_chain(outs, strategy)};
        }
        case Format::TTvec:
        case Format::STTvec: {
            const std::vector<SemiCore> chain(w.cores.begin(), w.cores.end() - 1);
            SemiCore m = merge_chain(chain, strategy);
            const std::vector<bool> flags(m.deficient.begin() + 1, m.deficient.end());
            return {SemiCore(squeeze_mode(m.tensor, 1), m.ratio, flags), std::nullopt};
        }
        case Format::TTmat:
        case Format::STTmat: {
            SemiCore m = merge_chain(w.cores, strategy);
            const auto n = static_cast<int>(w.input_dims.size());
            return {semi_permute(m, mat_group_perm(n)), std::nullopt};
        }
        case Format::Tucker:
        case Format::STTu:
            throw std::invalid_argument("Tucker forms have no chain to merge");
    }
    throw std::logic_error("merged_chains: unreachable");
}

std::vector<DenseTensor> merged_chains_backward(const FactorizedWeight& w,
                                                const DenseTensor& d_in,
                                                const std::optional<DenseTensor>& d_out) {
    switch (w.format) {
        case Format::TR:
        case Format::STR: {
            if (!d_out) throw std::invalid_argument("ring chains need both merged gradients");
            const auto n_in = static_cast<std::ptrdiff_t>(w.input_dims.size());
            const std::vector<SemiCore> ins(w.cores.begin(), w.cores.begin() + n_in);
            const std::vector<SemiCore> outs(w.cores.begin() + n_in, w.cores.end());
            std::vector<DenseTensor> grads = merge_chain_backward(ins, d_in);
            std::vector<DenseTensor> og = merge_chain_backward(outs, *d_out);
            for (DenseTensor& g : og) grads.push_back(std::move(g));
            return grads;
        }
        case Format::TTvec:
        case Format::STTvec: {
            const std::vector<SemiCore> chain(w.cores.begin(), w.cores.end() - 1);
            std::vector<int64_t> with_unit = d_in.dims;
            with_unit.insert(with_unit.begin(), 1);
            return merge_chain_backward(chain, reshape(d_in, std::move(with_unit)));
        }
        case Format::TTmat:
        case Format::STTmat: {
            const auto n = static_cast<int>(w.input_dims.size());
            const std::vector<int> inv = inverse_perm(mat_group_perm(n));
            return merge_chain_backward(w.cores, permute(d_in, inv));
        }
        case Format::Tucker:
        case Format::STTu:
            throw std::invalid_argument("Tucker forms have no chain to merge");
    }
    throw std::logic_error("merged_chains_backward: unreachable");
}

DenseTensor reconstruct(const FactorizedWeight& w) {
    const auto n_in = static_cast<int>(w.input_dims.size());
    const auto n_out = static_cast<int>(w.output_dims.size());
    switch (w.format) {
        case Format::Tucker:
        case Format::STTu: {
            if (w.kind == LayerKind::Fcl) {
                DenseTensor g = w.cores[0].tensor;
                for (int k = 1; k <= n_out + n_in; ++k)
                    g = semi_mode_n(g, w.cores[static_cast<size_t>(k)], k);
                return g;  // (O_1..O_M, I_1..I_N)
            }
            DenseTensor k = semi_mode_n(*w.conv_kernel, w.cores[0], 3);
            return semi_mode_n(k, w.cores[1], 4);  // (K, K, I, O)
        }
        case Format::TTvec:
        case Format::STTvec: {
            const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
            const SemiCore z = semi_contract(mc.in, mc.in.order(), w.cores.back(), 1);
            std::vector<int> perm(static_cast<size_t>(n_in) + 1);
            perm[0] = n_in;
            for (int i = 0; i < n_in; ++i) perm[static_cast<size_t>(i) + 1] = i;
            return permute(z.tensor, perm);  // (O, I_1..I_N)
        }
        case Format::TR:
        case Format::STR: {
            const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
            if (w.kind == LayerKind::Fcl) {
                return ring_close(merge_pair(mc.in, *mc.out)).tensor;  // (I..., O...)
            }
            // Ring with the kernel in the middle: in-chain, kernel, out-chain.
            SemiCore z = semi_contract(mc.in, mc.in.order(), SemiCore(*w.conv_kernel), 3);
            z = semi_contract(z, z.order(), *mc.out, 1);
            const DenseTensor closed = ring_close(z).tensor;  // (I..., K, K, O...)
            std::vector<int> perm(closed.dims.size());
            perm[0] = n_in;
            perm[1] = n_in + 1;
            for (int i = 0; i < n_in; ++i) perm[static_cast<size_t>(i) + 2] = i;
            for (int i = 0; i < n_out; ++i)
                perm[static_cast<size_t>(n_in + i) + 2] = n_in + 2 + i;
            DenseTensor grouped = permute(closed, perm);
            return reshape(std::move(grouped),
                           {grouped.dim(1), grouped.dim(2), product_of(w.input_dims),
                            product_of(w.output_dims)});
        }
        case Format::TTmat:
        case Format::STTmat: {
            const MergedChains mc = merged_chains(w, MergeStrategy::Sequential);
            const SemiCore z = semi_contract(SemiCore(*w.conv_kernel), 4, mc.in, 1);
            DenseTensor k = squeeze_mode(z.tensor, 3);  // (K, K, I..., O...)
            return reshape(std::move(k), {k.dim(1), k.dim(2), product_of(w.input_dims),
                                          product_of(w.output_dims)});
        }
    }
    throw std::logic_error("reconstruct: unreachable");
}

}  // namespace stpn
