#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "stpn/accounting.hpp"
#include "stpn/factorized.hpp"
#include "stpn/io.hpp"
#include "stpn/kernels.hpp"
#include "stpn/selfcheck.hpp"
#include "stpn/stp.hpp"
#include "stpn/train.hpp"

namespace {

namespace fs = std::filesystem;

// Plan files resolve against the working directory first, then the bundled
// data directory.
fs::path resolve_data(const std::string& name) {
    if (fs::exists(name)) return name;
#ifdef STPN_DATA_DIR
    const fs::path bundled = fs::path(STPN_DATA_DIR) / name;
    if (fs::exists(bundled)) return bundled;
#endif
    return name;
}

int run_selfcheck_cmd(bool corrupt) {
    std::cout << "threads: " << stpn::kernels::thread_count() << "\n";
    stpn::detail::corrupt_residual_rule = corrupt;
    const auto suites = stpn::run_selfcheck();
    stpn::detail::corrupt_residual_rule = false;
    std::cout << stpn::selfcheck_table(suites);
    for (const auto& s : suites)
        if (!s.passed()) return 1;
    return 0;
}

struct PlanArgs {
    std::string file;
    std::string family = "tr";
    int64_t rank = 8;
    std::optional<int> ratio;
    int64_t batch = 128;
    bool numeric = false;
    bool pad_odd = false;
    std::string out;
};

int run_plan_cmd(const PlanArgs& args) {
    const bool semi = args.family == "sttu" || args.family == "stt" || args.family == "str";
    const int ratio = args.ratio.value_or(semi ? 2 : 1);
    if (!semi && ratio != 1)
        throw std::invalid_argument("--t above 1 needs a semi format (sttu, stt, str)");
    const stpn::PlanFile plan = stpn::read_plan(resolve_data(args.file));
    const auto entries =
        stpn::plan_entries(plan, args.family, args.rank, ratio, args.batch, args.pad_odd);
    stpn::NetworkReport report = stpn::network_report(
        plan.name, entries,
        plan.uncompressed_params > 0 ? std::optional<int64_t>(plan.uncompressed_params)
                                     : std::nullopt);
    report.format_label = args.family;
    std::cout << report.to_text(args.numeric);
    if (!args.out.empty()) {
        std::ofstream csv(args.out, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + args.out);
        csv << report.to_csv();
        std::cout << "wrote " << args.out << "\n";
    }
    return 0;
}

struct DemoArgs {
    uint64_t seed = 0;
    int epochs = 0;  // 0: pinned default
    std::string out = ".";
};

int run_demo_cmd(const DemoArgs& args) {
    stpn::SineDemoConfig config;
    config.seed = args.seed;
    if (args.epochs > 0) config.epochs = args.epochs;
    const stpn::SineDemoResult result = stpn::run_sine_demo(config);

    const fs::path dir(args.out);
    fs::create_directories(dir);
    const fs::path base_csv = dir / "base_loss.csv";
    const fs::path stp_csv = dir / "stp_loss.csv";
    std::ofstream(base_csv, std::ios::trunc) << stpn::fit_csv(result.base);
    std::ofstream(stp_csv, std::ios::trunc) << stpn::fit_csv(result.stp);

    auto tail = [](const stpn::FitResult& h) {
        return std::pair<double, double>{h.train_mse.empty() ? 0.0 : h.train_mse.back(),
                                         h.test_mse.empty() ? 0.0 : h.test_mse.back()};
    };
    const auto [base_train, base_test] = tail(result.base);
    const auto [stp_train, stp_test] = tail(result.stp);
    std::printf("sine regression, %d epochs, seed %llu\n", config.epochs,
                static_cast<unsigned long long>(args.seed));
    std::printf("  base net: hidden weights %lld, final train mse %.3e, test mse %.3e\n",
                static_cast<long long>(result.base_hidden_params), base_train, base_test);
    std::printf("  stp net:  hidden weights %lld, final train mse %.3e, test mse %.3e\n",
                static_cast<long long>(result.stp_hidden_params), stp_train, stp_test);
    std::printf("  hidden-weight ratio: %lldx fewer in the stp net\n",
                static_cast<long long>(result.base_hidden_params / result.stp_hidden_params));
    std::printf("  wrote %s and %s\n", base_csv.string().c_str(), stp_csv.string().c_str());
    return 0;
}

int run_reconstruct_cmd(const std::string& archive, const std::string& out) {
    const stpn::FactorizedWeight w = stpn::read_weight(archive);
    stpn::write_tensor(out, stpn::reconstruct(w));
    std::cout << "wrote " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-tensor-product tensor network toolkit"};
    app.require_subcommand(1);

    auto* selfcheck = app.add_subcommand("selfcheck", "run the oracle suites");
    bool corrupt = false;
    selfcheck->add_flag("--corrupt-residual-rule", corrupt)->group("");  // hidden test hook

    PlanArgs plan_args;
    auto* plan = app.add_subcommand("plan", "parameter/FLOP report for a network plan");
    plan->add_option("file", plan_args.file, "plan JSON file")->required();
    plan->add_option("--format", plan_args.family, "tucker, sttu, tt, stt, tr or str")
        ->check(CLI::IsMember({"tucker", "sttu", "tt", "stt", "tr", "str"}));
    plan->add_option("--rank,-R", plan_args.rank, "decomposition rank")
        ->check(CLI::PositiveNumber);
    int ratio_flag = 0;
    plan->add_option("--t", ratio_flag, "semi-product ratio (default 2 for semi formats)")
        ->check(CLI::PositiveNumber);
    plan->add_option("--batch", plan_args.batch, "batch size for FLOP totals")
        ->check(CLI::PositiveNumber);
    plan->add_flag("--numeric", plan_args.numeric, "include FLOPs and compression");
    plan->add_flag("--pad-odd", plan_args.pad_odd,
                   "bump dims to the next ratio multiple before storage");
    plan->add_option("--out", plan_args.out, "also write the report as CSV");

    DemoArgs demo_args;
    auto* demo = app.add_subcommand("demo-sine", "train the sine-regression demo nets");
    demo->add_option("--seed", demo_args.seed, "run seed");
    demo->add_option("--epochs", demo_args.epochs, "override the pinned epoch budget")
        ->check(CLI::PositiveNumber);
    demo->add_option("--out", demo_args.out, "directory for the loss CSVs");

    std::string archive, out_tensor;
    auto* reconstruct = app.add_subcommand("reconstruct", "materialize a weight archive");
    reconstruct->add_option("archive", archive, "weight archive directory")->required();
    reconstruct->add_option("--out", out_tensor, "output tensor file")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (selfcheck->parsed()) return run_selfcheck_cmd(corrupt);
        if (plan->parsed()) {
            if (ratio_flag > 0) plan_args.ratio = ratio_flag;
            return run_plan_cmd(plan_args);
        }
        if (demo->parsed()) return run_demo_cmd(demo_args);
        if (reconstruct->parsed()) return run_reconstruct_cmd(archive, out_tensor);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
