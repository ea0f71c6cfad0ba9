#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stpn/plan.hpp"

namespace stpn {

/// Exact rational arithmetic for parameter coefficients.
struct Rational {
    int64_t num = 0;
    int64_t den = 1;

    Rational() = default;
    Rational(int64_t n) : num(n), den(1) {}  // NOLINT: implicit by design
    Rational(int64_t n, int64_t d);

    [[nodiscard]] double to_double() const;
    /// Exact decimal ("5.5", "0.125") when the denominator divides 1000,
    /// otherwise "num/den".
    [[nodiscard]] std::string to_string() const;

    Rational operator+(const Rational& o) const;
    Rational operator-(const Rational& o) const;
    Rational operator*(const Rational& o) const;
    Rational operator/(const Rational& o) const;
    bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
};

/// Polynomial in the rank with rational coefficients.
struct ParamPoly {
    std::map<int, Rational> coeff;  // exponent -> coefficient; no zero entries

    void add(int exp, const Rational& c);
    ParamPoly& operator+=(const ParamPoly& o);
    [[nodiscard]] ParamPoly scaled(int64_t factor) const;
    [[nodiscard]] Rational coefficient(int exp) const;
    /// Exact evaluation; throws if a term does not come out integral.
    [[nodiscard]] int64_t eval(int64_t rank) const;
    /// "5.5 R^2 + 12 R" with exponents descending.
    [[nodiscard]] std::string to_string() const;
};

/// Stored-parameter polynomial of one factorized layer (bias excluded).
/// Mirrors the storage schema exactly, including fully-classical fallback
/// cores for dims the ratio does not divide.
[[nodiscard]] ParamPoly param_poly(const LayerPlan& plan);

/// Stored parameters at the plan's rank: always equals the element count of
/// the weight build_weight materializes.
[[nodiscard]] int64_t param_count(const LayerPlan& plan);

/// One monomial of a FLOP estimate: coeff * prod(symbol^power) with the
/// ratio already folded into the coefficient.
struct FlopTerm {
    Rational coeff;
    std::map<std::string, int> sym;
    bool upper_bound = false;

    [[nodiscard]] double eval(const LayerPlan& plan) const;
    [[nodiscard]] std::string to_string() const;
};

struct FlopStep {
    std::string label;
    std::vector<FlopTerm> terms;
};

/// Per-step forward FLOP estimates for the plan's layer.
[[nodiscard]] std::vector<FlopStep> flop_steps(const LayerPlan& plan);

/// Sum of every step term (upper-bound terms included).
[[nodiscard]] double flop_total(const LayerPlan& plan);

/// Decomposition-storage ratio classical/semi at equal rank. Defined for
/// fully-connected plans of a semi format.
[[nodiscard]] Rational memory_ratio(const LayerPlan& semi_plan);

[[nodiscard]] double compression_factor(int64_t original, int64_t compressed);

/// One layer group of a network table. Entries sharing a label aggregate
/// into one printed row (count multiplies within each entry).
struct NetworkEntry {
    std::string label;
    LayerPlan plan;
    int64_t count = 1;
    std::optional<int64_t> uncompressed;
    std::optional<Rational> reference_coeff;  // published rank^2 coefficient, annotation only
};

struct NetworkRow {
    std::string label;
    ParamPoly poly;
    int64_t params = 0;
    double flops = 0.0;
    std::optional<int64_t> uncompressed;
    std::optional<Rational> reference_coeff;
};

struct NetworkReport {
    std::string name;
    int64_t rank = 0;
    int ratio = 1;
    std::string format_label;
    std::vector<NetworkRow> rows;
    ParamPoly total;
    int64_t params = 0;
    double flops = 0.0;
    std::optional<int64_t> uncompressed_total;
    std::optional<Rational> reference_total;

    [[nodiscard]] std::string to_text(bool numeric) const;
    [[nodiscard]] std::string to_csv() const;
};

[[nodiscard]] NetworkReport network_report(const std::string& name,
                                           const std::vector<NetworkEntry>& entries,
                                           std::optional<int64_t> uncompressed_total);

}  // namespace stpn
