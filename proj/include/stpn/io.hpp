#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stpn/accounting.hpp"
#include "stpn/factorized.hpp"
#include "stpn/plan.hpp"
#include "stpn/tensor.hpp"

namespace stpn {

/// Binary tensor file: magic "STPT", version byte 0x01, unsigned 8-bit order,
/// then the dims as little-endian unsigned 32-bit values, then the elements
/// as little-endian IEEE-754 doubles in storage order.
void write_tensor(const std::filesystem::path& path, const DenseTensor& t);
/// Throws std::runtime_error on wrong magic, bad version, or truncation.
[[nodiscard]] DenseTensor read_tensor(const std::filesystem::path& path);

/// Weight archive: a directory holding manifest.json plus one tensor file
/// per core (core_0.stpt, ...) and kernel.stpt for conv formats. The
/// manifest records the format tag, layer kind, ratio, rank, logical
/// dimension lists, geometry, and each core's deficiency flags.
void write_weight(const std::filesystem::path& dir, const FactorizedWeight& w);
[[nodiscard]] FactorizedWeight read_weight(const std::filesystem::path& dir);

/// One factorized mapping inside a plan row: the reshaping of its input and
/// output dimensions for the ring/train family and for the semi variant,
/// with an optional repeat count and per-mapping geometry overrides.
struct PlanMap {
    std::vector<int64_t> tr_in;
    std::vector<int64_t> tr_out;
    std::vector<int64_t> str_in;
    std::vector<int64_t> str_out;
    int64_t count = 1;
    int64_t stride = 0;  // 0: inherit the row's
    int64_t height = 0;  // 0: inherit the row's
    int64_t width = 0;
};

/// One table row: a named group of identically-shaped layers.
struct PlanRow {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int64_t kernel = 3;
    int64_t stride = 1;
    int64_t pad = 1;
    int64_t height = 1;
    int64_t width = 1;
    int64_t uncompressed = 0;  // stored elements of the dense layer; 0 = not given
    /// Published per-row coefficient of R^2 keyed by family name, kept as an
    /// exact decimal string (e.g. "465.5").
    std::map<std::string, std::string> reference;
    std::vector<PlanMap> maps;
};

struct PlanFile {
    std::string name;
    int64_t uncompressed_params = 0;
    std::vector<PlanRow> rows;
};

/// Parse a plan JSON document. Unknown fields anywhere are rejected.
[[nodiscard]] PlanFile read_plan(const std::filesystem::path& path);

/// Expand a plan into accounting entries for one family in
/// {tucker, sttu, tt, stt, tr, str} at the given rank/ratio/batch.
/// Ring/train families take the matching reshape lists; the Tucker pair
/// keeps every dimension unfactorized (single-mode input/output).
[[nodiscard]] std::vector<NetworkEntry> plan_entries(const PlanFile& file,
                                                     const std::string& family, int64_t rank,
                                                     int ratio, int64_t batch, bool pad_odd);

}  // namespace stpn
