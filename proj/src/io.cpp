#include "stpn/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace stpn {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'T', 'P', 'T'};
constexpr uint8_t kVersion = 0x01;

void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

void write_tensor(const std::filesystem::path& path, const DenseTensor& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    if (t.order() > 255) fail("tensor order exceeds the format limit");
    out.put(static_cast<char>(t.order()));
    for (int64_t d : t.dims) {
        if (d < 0 || d > UINT32_MAX) fail("dim out of range for the tensor format");
        const auto v = static_cast<uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&v), 4);
    }
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!out) fail("short write: " + path.string());
}

DenseTensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        fail("not a tensor file (bad magic): " + path.string());
    const int version = in.get();
    if (version != kVersion) fail("unsupported tensor file version: " + path.string());
    const int order = in.get();
    if (order == EOF || order < 1) fail("truncated tensor file: " + path.string());
    std::vector<int64_t> dims(static_cast<size_t>(order));
    for (auto& d : dims) {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) fail("truncated tensor file: " + path.string());
        d = v;
    }
    DenseTensor t = DenseTensor::zeros(dims);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(double)))
        fail("truncated tensor payload: " + path.string());
    in.peek();
    if (!in.eof()) fail("trailing bytes after tensor payload: " + path.string());
    return t;
}

namespace {

const std::map<std::string, Format>& format_tags() {
    static const std::map<std::string, Format> tags = {
        {"tucker", Format::Tucker}, {"sttu", Format::STTu},     {"tt-vec", Format::TTvec},
        {"stt-vec", Format::STTvec}, {"tt-mat", Format::TTmat}, {"stt-mat", Format::STTmat},
        {"tr", Format::TR},          {"str", Format::STR}};
    return tags;
}

std::string format_tag(Format f) {
    for (const auto& [tag, fmt] : format_tags())
        if (fmt == f) return tag;
    fail("unknown format");
    return {};
}

// Every retrieval goes through these so unknown fields cannot hide: each
// object's keys are checked against the exact set the schema names.
void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) fail(where + ": expected a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.contains(key)) fail(where + ": unknown field '" + key + "'");
}

json require_field(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.contains(key)) fail(where + ": missing field '" + key + "'");
    return obj.at(key);
}

std::vector<int64_t> int_list(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) fail(where + ": expected a non-empty array of integers");
    std::vector<int64_t> out;
    for (const auto& e : v) {
        if (!e.is_number_integer()) fail(where + ": expected integers");
        out.push_back(e.get<int64_t>());
    }
    return out;
}

int64_t int_field(const json& obj, const std::string& key, int64_t fallback,
                  const std::string& where) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(where + ": field '" + key + "' must be an integer");
    return v.get<int64_t>();
}

}  // namespace

void write_weight(const std::filesystem::path& dir, const FactorizedWeight& w) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = format_tag(w.format);
    manifest["kind"] = w.kind == LayerKind::Conv ? "conv" : "fcl";
    manifest["ratio"] = w.ratio;
    manifest["rank"] = w.rank;
    manifest["input_dims"] = w.input_dims;
    manifest["output_dims"] = w.output_dims;
    json cores = json::array();
    for (size_t i = 0; i < w.cores.size(); ++i) {
        const std::string file = "core_" + std::to_string(i) + ".stpt";
        write_tensor(dir / file, w.cores[i].tensor);
        json entry;
        entry["file"] = file;
        entry["deficient"] = std::vector<bool>(w.cores[i].deficient.begin(),
                                               w.cores[i].deficient.end());
        cores.push_back(entry);
    }
    manifest["cores"] = cores;
    if (w.conv_kernel) {
        write_tensor(dir / "kernel.stpt", *w.conv_kernel);
        manifest["kernel"] = "kernel.stpt";
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) fail("cannot write manifest: " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

FactorizedWeight read_weight(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) fail("cannot open manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::parse_error& e) {
        fail("manifest is not valid JSON: " + std::string(e.what()));
    }
    check_keys(manifest,
               {"format", "kind", "ratio", "rank", "input_dims", "output_dims", "cores", "kernel"},
               "manifest");
    FactorizedWeight w;
    const auto tag = require_field(manifest, "format", "manifest").get<std::string>();
    const auto& tags = format_tags();
    const auto it = tags.find(tag);
    if (it == tags.end()) fail("manifest: unknown format tag '" + tag + "'");
    w.format = it->second;
    const auto kind = require_field(manifest, "kind", "manifest").get<std::string>();
    if (kind != "conv" && kind != "fcl") fail("manifest: unknown kind '" + kind + "'");
    w.kind = kind == "conv" ? LayerKind::Conv : LayerKind::Fcl;
    w.ratio = static_cast<int>(int_field(manifest, "ratio", 1, "manifest"));
    w.rank = int_field(manifest, "rank", 1, "manifest");
    w.input_dims = int_list(require_field(manifest, "input_dims", "manifest"), "input_dims");
    w.output_dims = int_list(require_field(manifest, "output_dims", "manifest"), "output_dims");
    if (w.ratio < 1) fail("manifest: ratio must be >= 1");
    const json cores = require_field(manifest, "cores", "manifest");
    if (!cores.is_array()) fail("manifest: 'cores' must be an array");
    for (const auto& entry : cores) {
        check_keys(entry, {"file", "deficient"}, "manifest core");
        DenseTensor t = read_tensor(dir / require_field(entry, "file", "core").get<std::string>());
        std::vector<bool> flags(static_cast<size_t>(t.order()), false);
        if (entry.contains("deficient")) {
            const json& f = entry.at("deficient");
            if (!f.is_array() || f.size() != flags.size())
                fail("manifest: deficiency flags do not match the core order");
            for (size_t i = 0; i < flags.size(); ++i) {
                if (!f[i].is_boolean()) fail("manifest: deficiency flags must be booleans");
                flags[i] = f[i].get<bool>();
            }
        }
        const bool any = std::any_of(flags.begin(), flags.end(), [](bool b) { return b; });
        w.cores.emplace_back(std::move(t), any ? w.ratio : 1, std::move(flags));
    }
    if (manifest.contains("kernel"))
        w.conv_kernel = read_tensor(dir / manifest.at("kernel").get<std::string>());
    if (w.kind == LayerKind::Conv && !w.conv_kernel) fail("manifest: conv weight without kernel");
    return w;
}

namespace {

PlanMap parse_map(const json& obj, const std::string& where) {
    check_keys(obj, {"tr_in", "tr_out", "str_in", "str_out", "count", "stride", "height", "width"},
               where);
    PlanMap m;
    m.tr_in = int_list(require_field(obj, "tr_in", where), where + ".tr_in");
    m.tr_out = int_list(require_field(obj, "tr_out", where), where + ".tr_out");
    m.str_in = int_list(require_field(obj, "str_in", where), where + ".str_in");
    m.str_out = int_list(require_field(obj, "str_out", where), where + ".str_out");
    m.count = int_field(obj, "count", 1, where);
    m.stride = int_field(obj, "stride", 0, where);
    m.height = int_field(obj, "height", 0, where);
    m.width = int_field(obj, "width", 0, where);
    if (m.count < 1) fail(where + ": count must be positive");
    return m;
}

PlanRow parse_row(const json& obj, const std::string& where) {
    check_keys(obj,
               {"name", "kind", "kernel", "stride", "pad", "height", "width", "uncompressed",
                "reference", "maps"},
               where);
    PlanRow row;
    row.name = require_field(obj, "name", where).get<std::string>();
    const auto kind = require_field(obj, "kind", where).get<std::string>();
    if (kind != "conv" && kind != "fcl") fail(where + ": unknown kind '" + kind + "'");
    row.kind = kind == "conv" ? LayerKind::Conv : LayerKind::Fcl;
    row.kernel = int_field(obj, "kernel", 3, where);
    row.stride = int_field(obj, "stride", 1, where);
    row.pad = int_field(obj, "pad", 1, where);
    row.height = int_field(obj, "height", 1, where);
    row.width = int_field(obj, "width", 1, where);
    row.uncompressed = int_field(obj, "uncompressed", 0, where);
    if (obj.contains("reference")) {
        const json& ref = obj.at("reference");
        if (!ref.is_object()) fail(where + ": 'reference' must be an object");
        for (const auto& [key, value] : ref.items()) {
            if (!value.is_string()) fail(where + ": reference values must be strings");
            row.reference[key] = value.get<std::string>();
        }
    }
    const json maps = require_field(obj, "maps", where);
    if (!maps.is_array() || maps.empty()) fail(where + ": 'maps' must be a non-empty array");
    for (const auto& m : maps) row.maps.push_back(parse_map(m, where + ".maps"));
    return row;
}

}  // namespace

PlanFile read_plan(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open plan file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        fail("plan file is not valid JSON: " + std::string(e.what()));
    }
    check_keys(doc, {"name", "uncompressed_params", "rows"}, "plan");
    PlanFile file;
    file.name = require_field(doc, "name", "plan").get<std::string>();
    file.uncompressed_params = int_field(doc, "uncompressed_params", 0, "plan");
    const json rows = require_field(doc, "rows", "plan");
    if (!rows.is_array() || rows.empty()) fail("plan: 'rows' must be a non-empty array");
    for (const auto& r : rows) file.rows.push_back(parse_row(r, "row"));
    return file;
}

namespace {

int64_t product_of(const std::vector<int64_t>& dims) {
    int64_t p = 1;
    for (int64_t d : dims) p *= d;
    return p;
}

}  // namespace

std::vector<NetworkEntry> plan_entries(const PlanFile& file, const std::string& family,
                                       int64_t rank, int ratio, int64_t batch, bool pad_odd) {
    const bool semi = family == "sttu" || family == "stt" || family == "str";
    const bool tucker_family = family == "tucker" || family == "sttu";
    std::vector<NetworkEntry> entries;
    for (const PlanRow& row : file.rows) {
        const Format format = resolve_format(family, row.kind);
        bool first_map = true;
        for (const PlanMap& map : row.maps) {
            LayerPlan plan;
            plan.format = format;
            plan.kind = row.kind;
            const auto& in = semi ? map.str_in : map.tr_in;
            const auto& out = semi ? map.str_out : map.tr_out;
            if (tucker_family) {
                plan.input_dims = {product_of(in)};
                plan.output_dims = {product_of(out)};
            } else {
                plan.input_dims = in;
                plan.output_dims = out;
                // The matrix train form pairs input and output modes; ring
                // reshapes with unequal mode counts pad with trailing 1s.
                if (format == Format::TTmat || format == Format::STTmat) {
                    while (plan.input_dims.size() < plan.output_dims.size())
                        plan.input_dims.push_back(1);
                    while (plan.output_dims.size() < plan.input_dims.size())
                        plan.output_dims.push_back(1);
                }
            }
            plan.rank = rank;
            plan.ratio = semi ? ratio : 1;
            plan.batch = batch;
            plan.pad_odd = pad_odd;
            if (row.kind == LayerKind::Conv) {
                plan.kernel = row.kernel;
                plan.stride = map.stride > 0 ? map.stride : row.stride;
                plan.pad = row.pad;
                plan.height = map.height > 0 ? map.height : row.height;
                plan.width = map.width > 0 ? map.width : row.width;
            }
            plan.validate();
            NetworkEntry entry;
            entry.label = row.name;
            entry.plan = plan;
            entry.count = map.count;
            // Row-level annotations attach once: same-label uncompressed
            // counts sum during aggregation.
            if (first_map && row.uncompressed > 0) entry.uncompressed = row.uncompressed;
            const auto ref = first_map ? row.reference.find(family) : row.reference.end();
            if (ref != row.reference.end()) {
                // Printed coefficients are halves at worst; parse x or x.5.
                const std::string& s = ref->second;
                const auto dot = s.find('.');
                if (dot == std::string::npos) {
                    entry.reference_coeff = Rational(std::stoll(s));
                } else {
                    const int64_t whole = std::stoll(s.substr(0, dot));
                    const std::string frac = s.substr(dot + 1);
                    int64_t scale = 1;
                    for (size_t i = 0; i < frac.size(); ++i) scale *= 10;
                    entry.reference_coeff =
                        Rational(whole * scale + std::stoll(frac), scale);
                }
            }
            entries.push_back(std::move(entry));
            first_map = false;
        }
    }
    return entries;
}

}  // namespace stpn
