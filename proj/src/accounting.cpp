#include "stpn/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "stpn/factorized.hpp"

namespace stpn {

Rational::Rational(int64_t n, int64_t d) : num(n), den(d) {
    if (den == 0) throw std::invalid_argument("Rational: zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
        num /= g;
        den /= g;
    }
}

double Rational::to_double() const {
    return static_cast<double>(num) / static_cast<double>(den);
}

std::string Rational::to_string() const {
    if (den == 1) return std::to_string(num);
    if (1000 % den == 0) {
        const int64_t scaled = num * (1000 / den);
        const bool neg = scaled < 0;
        int64_t mag = neg ? -scaled : scaled;
        std::string frac = std::to_string(mag % 1000);
        frac.insert(0, 3 - frac.size(), '0');
        while (frac.back() == '0') frac.pop_back();
        return (neg ? "-" : "") + std::to_string(mag / 1000) + "." + frac;
    }
    return std::to_string(num) + "/" + std::to_string(den);
}

Rational Rational::operator+(const Rational& o) const {
    return {num * o.den + o.num * den, den * o.den};
}
Rational Rational::operator-(const Rational& o) const {
    return {num * o.den - o.num * den, den * o.den};
}
Rational Rational::operator*(const Rational& o) const { return {num * o.num, den * o.den}; }
Rational Rational::operator/(const Rational& o) const {
    if (o.num == 0) throw std::invalid_argument("Rational: division by zero");
    return {num * o.den, den * o.num};
}

void ParamPoly::add(int exp, const Rational& c) {
    if (c.num == 0) return;
    auto it = coeff.find(exp);
    if (it == coeff.end()) {
        coeff.emplace(exp, c);
        return;
    }
    it->second = it->second + c;
    if (it->second.num == 0) coeff.erase(it);
}

ParamPoly& ParamPoly::operator+=(const ParamPoly& o) {
    for (const auto& [e, c] : o.coeff) add(e, c);
    return *this;
}

ParamPoly ParamPoly::scaled(int64_t factor) const {
    ParamPoly p;
    for (const auto& [e, c] : coeff) p.add(e, c * Rational(factor));
    return p;
}

Rational ParamPoly::coefficient(int exp) const {
    const auto it = coeff.find(exp);
    return it == coeff.end() ? Rational(0) : it->second;
}

int64_t ParamPoly::eval(int64_t rank) const {
    __int128 total = 0;
    for (const auto& [e, c] : coeff) {
        __int128 term = c.num;
        for (int i = 0; i < e; ++i) term *= rank;
        if (term % c.den != 0)
            throw std::logic_error("ParamPoly: non-integral value at this rank");
        total += term / c.den;
    }
    const auto hi = static_cast<__int128>(INT64_MAX);
    if (total > hi || total < -hi) throw std::overflow_error("ParamPoly: value overflows");
    return static_cast<int64_t>(total);
}

std::string ParamPoly::to_string() const {
    if (coeff.empty()) return "0";
    std::string s;
    for (auto it = coeff.rbegin(); it != coeff.rend(); ++it) {
        const auto& [e, c] = *it;
        if (!s.empty()) s += " + ";
        const std::string cs = c.to_string();
        if (e == 0) {
            s += cs;
            continue;
        }
        if (cs != "1") s += cs + " ";
        s += (e == 1) ? "R" : "R^" + std::to_string(e);
    }
    return s;
}

namespace {

// Coefficient of one stored mode: size/ratio when the mode shrinks, size
// otherwise. Chain cores shrink all-or-nothing, decided by the caller.
Rational chain_core_coeff(int64_t d, int t, bool semi) {
    // (rank, d, rank) core: R^2 * d with both rank modes shrunk when semi.
    return semi ? Rational(d, static_cast<int64_t>(t) * t) : Rational(d);
}

}  // namespace

ParamPoly param_poly(const LayerPlan& plan_in) {
    const LayerPlan plan = plan_in.normalized();
    plan.validate();
    const int t = plan.ratio;
    const int64_t k2 = plan.kernel * plan.kernel;
    const std::vector<int64_t>& in = plan.input_dims;
    const std::vector<int64_t>& out = plan.output_dims;
    ParamPoly p;
    switch (plan.format) {
        case Format::TR:
        case Format::STR: {
            auto add_core = [&](int64_t d) {
                p.add(2, chain_core_coeff(d, t, stored_mode(d, t).deficient));
            };
            for (int64_t d : in) add_core(d);
            for (int64_t d : out) add_core(d);
            if (plan.kind == LayerKind::Conv) p.add(2, Rational(k2));
            break;
        }
        case Format::TTvec:
        case Format::STTvec: {
            p.add(1, Rational(in[0]));  // (1, I_1, R) head, always full
            for (size_t i = 1; i < in.size(); ++i)
                p.add(2, chain_core_coeff(in[i], t, stored_mode(in[i], t).deficient));
            const StoredMode om = stored_mode(out[0], t);
            p.add(1, om.deficient ? Rational(out[0], static_cast<int64_t>(t) * t)
                                  : Rational(out[0]));
            break;
        }
        case Format::TTmat:
        case Format::STTmat: {
            const size_t n = in.size();
            const bool chain_semi =
                t > 1 && out[0] % t == 0 && (n == 1 || in[n - 1] % t == 0);
            if (n == 1) {
                p.add(1, chain_semi
                             ? Rational(in[0] * out[0], static_cast<int64_t>(t) * t)
                             : Rational(in[0] * out[0]));
            } else {
                p.add(1, chain_semi ? Rational(in[0] * out[0], t) : Rational(in[0] * out[0]));
                for (size_t i = 1; i + 1 < n; ++i) {
                    const bool semi = stored_mode(in[i], t).deficient;
                    p.add(2, semi ? Rational(in[i] * out[i], static_cast<int64_t>(t) * t)
                                  : Rational(in[i] * out[i]));
                }
                const bool tail_semi = stored_mode(in[n - 1], t).deficient;
                int64_t den = 1;
                if (tail_semi) den *= static_cast<int64_t>(t) * t;  // leading rank + input mode
                if (chain_semi) den *= t;                           // trailing rank
                p.add(2, Rational(in[n - 1] * out[n - 1], den));
            }
            p.add(1, Rational(k2));  // shared kernel (K, K, 1, R)
            break;
        }
        case Format::Tucker:
        case Format::STTu: {
            auto add_factor = [&](int64_t d) {
                const StoredMode dm = stored_mode(d, t);
                p.add(1, dm.deficient ? Rational(d, static_cast<int64_t>(t) * t) : Rational(d));
            };
            if (plan.kind == LayerKind::Fcl) {
                p.add(static_cast<int>(in.size() + out.size()), Rational(1));
                for (int64_t d : out) add_factor(d);
                for (int64_t d : in) add_factor(d);
            } else {
                add_factor(in[0]);
                add_factor(out[0]);
                p.add(2, Rational(k2));
            }
            break;
        }
    }
    return p;
}

int64_t param_count(const LayerPlan& plan) { return param_poly(plan).eval(plan.rank); }

double FlopTerm::eval(const LayerPlan& plan) const {
    double v = coeff.to_double();
    for (const auto& [name, power] : sym) {
        double base = 0.0;
        if (name == "B") base = static_cast<double>(plan.batch);
        else if (name == "R") base = static_cast<double>(plan.rank);
        else if (name == "I") base = static_cast<double>(plan.in_features());
        else if (name == "O") base = static_cast<double>(plan.out_features());
        else if (name == "H") base = static_cast<double>(plan.height);
        else if (name == "W") base = static_cast<double>(plan.width);
        else if (name == "Ho") base = static_cast<double>(plan.out_height());
        else if (name == "Wo") base = static_cast<double>(plan.out_width());
        else if (name == "K") base = static_cast<double>(plan.kernel);
        else throw std::logic_error("FlopTerm: unknown symbol " + name);
        v *= std::pow(base, power);
    }
    return v;
}

std::string FlopTerm::to_string() const {
    static const char* order[] = {"B", "H", "W", "Ho", "Wo", "K", "R", "I", "O"};
    std::string s = upper_bound ? "<= " : "";
    s += coeff.to_string();
    for (const char* name : order) {
        const auto it = sym.find(name);
        if (it == sym.end()) continue;
        s += std::string(" ") + name;
        if (it->second != 1) s += "^" + std::to_string(it->second);
    }
    return s;
}

namespace {

FlopTerm term(const Rational& c, std::map<std::string, int> sym, bool ub = false) {
    return {c, std::move(sym), ub};
}

// Per-sample costs of the Tucker fully-connected phases at this plan's
// shape, derived from the stored factor sizes (estimate, not a published
// closed form).
void tucker_fcl_phase_costs(const LayerPlan& p, int64_t& in_cost, int64_t& core_cost,
                            int64_t& out_cost) {
    const int t = p.ratio;
    const int64_t r = p.rank;
    const auto& in = p.input_dims;
    const auto& out = p.output_dims;
    const auto n = static_cast<int>(in.size());
    const auto m = static_cast<int>(out.size());
    in_cost = 0;
    for (int k = 0; k < n; ++k) {
        int64_t rest = 1;
        for (int j = k + 1; j < n; ++j) rest *= in[static_cast<size_t>(j)];
        int64_t rpow = 1;
        for (int j = 0; j < k; ++j) rpow *= r;
        const StoredMode dm = stored_mode(in[static_cast<size_t>(k)], t);
        const int64_t t_link = dm.deficient ? t : 1;
        const int64_t cols = dm.deficient ? r / t : r;
        in_cost += 2 * rest * rpow * t_link * dm.size * cols;
    }
    core_cost = 2;
    for (int j = 0; j < n + m; ++j) core_cost *= r;
    out_cost = 0;
    for (int k = 0; k < m; ++k) {
        int64_t opre = 1;
        for (int j = 0; j < k; ++j) opre *= out[static_cast<size_t>(j)];
        int64_t rpow = 1;
        for (int j = 0; j < m - 1 - k; ++j) rpow *= r;
        const StoredMode dm = stored_mode(out[static_cast<size_t>(k)], t);
        const int64_t t_link = dm.deficient ? t : 1;
        const int64_t rank_stored = dm.deficient ? r / t : r;
        out_cost += 2 * opre * rpow * t_link * rank_stored * dm.size;
    }
}

}  // namespace

std::vector<FlopStep> flop_steps(const LayerPlan& plan_in) {
    const LayerPlan plan = plan_in.normalized();
    plan.validate();
    const int64_t t = plan.ratio;
    const int64_t t2 = t * t;
    const int64_t t3 = t2 * t;
    std::vector<FlopStep> steps;
    switch (plan.format) {
        case Format::TR:
        case Format::STR: {
            steps.push_back({"merge chains",
                             {term({4, t3}, {{"R", 3}, {"I", 1}}, true),
                              term({4, t3}, {{"R", 3}, {"O", 1}}, true)}});
            if (plan.kind == LayerKind::Fcl) {
                steps.push_back({"input contraction",
                                 {term({2, t}, {{"B", 1}, {"R", 2}, {"I", 1}})}});
                steps.push_back({"output contraction and ring closure",
                                 {term({2, t}, {{"B", 1}, {"R", 2}, {"O", 1}})}});
            } else {
                steps.push_back({"input contraction",
                                 {term({2, t},
                                       {{"B", 1}, {"H", 1}, {"W", 1}, {"R", 2}, {"I", 1}})}});
                steps.push_back({"shared convolution",
                                 {term(2, {{"Ho", 1}, {"Wo", 1}, {"R", 2}, {"K", 2}})}});
                steps.push_back({"output contraction and ring closure",
                                 {term({2, t},
                                       {{"B", 1}, {"Ho", 1}, {"Wo", 1}, {"R", 2}, {"O", 1}})}});
            }
            break;
        }
        case Format::TTvec:
        case Format::STTvec: {
            steps.push_back({"merge chain", {term({4, t}, {{"R", 2}, {"I", 1}}, true)}});
            steps.push_back({"input contraction", {term(2, {{"B", 1}, {"R", 1}, {"I", 1}})}});
            steps.push_back({"output product", {term({2, t}, {{"B", 1}, {"R", 1}, {"O", 1}})}});
            break;
        }
        case Format::TTmat:
        case Format::STTmat: {
            steps.push_back({"merge chain and absorb kernel",
                             {term({4, t2}, {{"R", 2}, {"I", 1}, {"O", 1}}, true),
                              term(2, {{"Ho", 1}, {"Wo", 1}, {"R", 1}, {"K", 2}})}});
            steps.push_back({"fused contraction",
                             {term({2, t},
                                   {{"B", 1}, {"Ho", 1}, {"Wo", 1}, {"I", 1}, {"O", 1},
                                    {"R", 1}})}});
            break;
        }
        case Format::Tucker:
        case Format::STTu: {
            if (plan.kind == LayerKind::Conv) {
                steps.push_back({"channel reduction (estimate)",
                                 {term({2, t},
                                       {{"B", 1}, {"H", 1}, {"W", 1}, {"I", 1}, {"R", 1}})}});
                steps.push_back({"reduced convolution (estimate)",
                                 {term(2, {{"B", 1}, {"Ho", 1}, {"Wo", 1}, {"K", 2}, {"R", 2}})}});
                steps.push_back({"channel expansion (estimate)",
                                 {term({2, t},
                                       {{"B", 1}, {"Ho", 1}, {"Wo", 1}, {"R", 1}, {"O", 1}})}});
            } else {
                int64_t in_cost = 0, core_cost = 0, out_cost = 0;
                tucker_fcl_phase_costs(plan, in_cost, core_cost, out_cost);
                steps.push_back({"input projections (estimate)", {term(in_cost, {{"B", 1}})}});
                steps.push_back({"core contraction (estimate)", {term(core_cost, {{"B", 1}})}});
                steps.push_back({"output projections (estimate)", {term(out_cost, {{"B", 1}})}});
            }
            break;
        }
    }
    return steps;
}

double flop_total(const LayerPlan& plan) {
    double total = 0.0;
    for (const FlopStep& s : flop_steps(plan))
        for (const FlopTerm& tm : s.terms) total += tm.eval(plan);
    return total;
}

Rational memory_ratio(const LayerPlan& semi_plan) {
    if (semi_plan.kind != LayerKind::Fcl)
        throw std::invalid_argument("memory_ratio compares fully-connected storage");
    if (!format_is_semi(semi_plan.format))
        throw std::invalid_argument("memory_ratio needs a semi-format plan");
    LayerPlan classical = semi_plan;
    classical.format = classical_counterpart(classical.format);
    classical.ratio = 1;
    return {param_count(classical), param_count(semi_plan)};
}

double compression_factor(int64_t original, int64_t compressed) {
    if (compressed <= 0) throw std::invalid_argument("compression_factor: empty layer");
    return static_cast<double>(original) / static_cast<double>(compressed);
}

NetworkReport network_report(const std::string& name, const std::vector<NetworkEntry>& entries,
                             std::optional<int64_t> uncompressed_total) {
    if (entries.empty()) throw std::invalid_argument("network_report: no entries");
    NetworkReport rep;
    rep.name = name;
    rep.rank = entries.front().plan.rank;
    rep.ratio = entries.front().plan.ratio;
    for (const NetworkEntry& e : entries) {
        NetworkRow* row = nullptr;
        for (NetworkRow& r : rep.rows)
            if (r.label == e.label) {
                row = &r;
                break;
            }
        if (row == nullptr) {
            rep.rows.push_back({});
            row = &rep.rows.back();
            row->label = e.label;
        }
        const ParamPoly contribution = param_poly(e.plan).scaled(e.count);
        row->poly += contribution;
        row->flops += static_cast<double>(e.count) * flop_total(e.plan);
        if (e.uncompressed) row->uncompressed = row->uncompressed.value_or(0) + *e.uncompressed;
        if (e.reference_coeff && !row->reference_coeff) row->reference_coeff = e.reference_coeff;
    }
    bool all_ref = true;
    Rational ref_sum(0);
    for (NetworkRow& r : rep.rows) {
        r.params = r.poly.eval(rep.rank);
        rep.total += r.poly;
        rep.flops += r.flops;
        if (r.reference_coeff) ref_sum = ref_sum + *r.reference_coeff;
        else all_ref = false;
    }
    rep.params = rep.total.eval(rep.rank);
    if (all_ref) rep.reference_total = ref_sum;
    rep.uncompressed_total = uncompressed_total;
    if (!rep.uncompressed_total) {
        int64_t sum = 0;
        bool all = true;
        for (const NetworkRow& r : rep.rows) {
            if (!r.uncompressed) {
                all = false;
                break;
            }
            sum += *r.uncompressed;
        }
        if (all) rep.uncompressed_total = sum;
    }
    return rep;
}

namespace {

std::string pad_to(std::string s, size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

std::string format_double(double v) {
    char buf[64];
    if (v == 0.0 || (std::abs(v) >= 1e-3 && std::abs(v) < 1e15)) {
        std::snprintf(buf, sizeof buf, "%.6g", v);
    } else {
        std::snprintf(buf, sizeof buf, "%.3e", v);
    }
    return buf;
}

}  // namespace

std::string NetworkReport::to_text(bool numeric) const {
    std::ostringstream os;
    os << "network: " << name;
    if (!format_label.empty()) os << "  format: " << format_label;
    os << "  rank: " << rank << "  ratio: " << ratio << "\n";
    const bool have_ref = std::any_of(rows.begin(), rows.end(),
                                      [](const NetworkRow& r) { return r.reference_coeff.has_value(); });
    const bool have_unc = std::any_of(rows.begin(), rows.end(),
                                      [](const NetworkRow& r) { return r.uncompressed.has_value(); });
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head = {"layer", "parameters", "at rank"};
    if (numeric) head.push_back("flops");
    if (have_ref) head.push_back("reference");
    if (have_unc) head.push_back("original");
    cells.push_back(head);
    auto push_row = [&](const std::string& label, const ParamPoly& poly, int64_t params,
                        double flops, const std::optional<Rational>& ref,
                        const std::optional<int64_t>& unc) {
        std::vector<std::string> row = {label, poly.to_string(), std::to_string(params)};
        if (numeric) row.push_back(format_double(flops));
        if (have_ref) row.push_back(ref ? ref->to_string() + " R^2" : "-");
        if (have_unc) row.push_back(unc ? std::to_string(*unc) : "-");
        cells.push_back(std::move(row));
    };
    for (const NetworkRow& r : rows)
        push_row(r.label, r.poly, r.params, r.flops, r.reference_coeff, r.uncompressed);
    push_row("total", total, params, flops, reference_total, uncompressed_total);
    std::vector<size_t> widths(cells[0].size(), 0);
    for (const auto& row : cells)
        for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
    for (size_t ri = 0; ri < cells.size(); ++ri) {
        for (size_t i = 0; i < cells[ri].size(); ++i)
            os << pad_to(cells[ri][i], widths[i] + (i + 1 < cells[ri].size() ? 2 : 0));
        os << "\n";
        if (ri == 0 || ri + 2 == cells.size()) {
            size_t line = 0;
            for (size_t i = 0; i < widths.size(); ++i) line += widths[i] + (i + 1 < widths.size() ? 2 : 0);
            os << std::string(line, '-') << "\n";
        }
    }
    if (uncompressed_total && params > 0) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.1f", compression_factor(*uncompressed_total, params));
        os << "compression: " << buf << "x (" << *uncompressed_total << " / " << params << ")\n";
    }
    return os.str();
}

std::string NetworkReport::to_csv() const {
    std::ostringstream os;
    os << "layer,parameters,count,flops,reference,original\n";
    auto emit = [&](const std::string& label, const ParamPoly& poly, int64_t params, double flops,
                    const std::optional<Rational>& ref, const std::optional<int64_t>& unc) {
        os << label << ",\"" << poly.to_string() << "\"," << params << "," << format_double(flops)
           << "," << (ref ? ref->to_string() : "") << ","
           << (unc ? std::to_string(*unc) : "") << "\n";
    };
    for (const NetworkRow& r : rows)
        emit(r.label, r.poly, r.params, r.flops, r.reference_coeff, r.uncompressed);
    emit("total", total, params, flops, reference_total, uncompressed_total);
    return os.str();
}

}  // namespace stpn
