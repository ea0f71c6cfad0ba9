#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stpn/tensor.hpp"

namespace stpn {

/// Mean squared error over all elements.
[[nodiscard]] double mse_loss(const DenseTensor& pred, const DenseTensor& target);
/// d(mse)/d(pred) = 2 (pred - target) / count.
[[nodiscard]] DenseTensor mse_grad(const DenseTensor& pred, const DenseTensor& target);

struct Dataset {
    DenseTensor x;  // (n, 1)
    DenseTensor y;  // (n, 1)
};
struct SineData {
    Dataset train;
    Dataset test;
};

/// y = sin(pi x / 2) + sin(pi x) + sin(2 pi x) at x drawn uniformly from
/// [lo, hi); deterministic per seed, no noise.
[[nodiscard]] double sine_target(double x);
[[nodiscard]] SineData sine_dataset(int64_t n_train, int64_t n_test, double lo, double hi,
                                    uint64_t seed);

/// Momentum SGD with coupled weight decay:
/// v = momentum v + g + weight_decay w;  w -= lr v.
struct TrainState {
    std::vector<DenseTensor*> parameters;
    std::vector<DenseTensor> gradients;  // shape-aligned with parameters
    std::vector<DenseTensor> velocity;   // zero-initialized on first step
    std::vector<std::pair<int, double>> schedule = {{0, 0.1}};  // (first epoch, rate), ascending
    double momentum = 0.9;
    double weight_decay = 1e-4;
    uint64_t seed = 0;

    /// Rate of the last schedule entry whose epoch is <= the argument.
    [[nodiscard]] double rate_at(int epoch) const;
};

void sgd_step(TrainState& state, double lr);

/// One fully-connected stage: dense matmul (w stored (out, in)) or a
/// semi-product stage (w stored (p, q), input columns a multiple of p).
struct MlpLayer {
    bool stp = false;
    DenseTensor w;
    DenseTensor b;
};

struct MlpGrads {
    std::vector<DenseTensor> dw;
    std::vector<DenseTensor> db;
};

struct Mlp {
    std::vector<MlpLayer> layers;  // tanh between stages, linear output

    [[nodiscard]] DenseTensor forward(const DenseTensor& x) const;
    [[nodiscard]] MlpGrads backward(const DenseTensor& x, const DenseTensor& dy) const;
    [[nodiscard]] std::vector<DenseTensor*> parameter_list();
    /// Elements of the weight matrices between the two hidden stages.
    [[nodiscard]] int64_t hidden_weight_params() const;
};

/// Baseline sine net: 1 -> 64 -> 64 -> 1, dense stages.
[[nodiscard]] Mlp make_sine_base_net(uint64_t seed);
/// Same widths with both hidden stages as semi-product layers; the 64 -> 64
/// stage stores a 32 x 32 matrix (block count 2), 1/4 of the dense count.
[[nodiscard]] Mlp make_sine_stp_net(uint64_t seed);

struct FitResult {
    std::vector<double> train_mse;
    std::vector<double> test_mse;
};

/// Minibatch training loop; deterministic per state.seed. Throws
/// std::runtime_error naming the epoch when the loss goes non-finite.
[[nodiscard]] FitResult fit(Mlp& net, const Dataset& train, const Dataset& test, int epochs,
                            int64_t batch, TrainState& state);

/// Pinned sine-demo configuration shared by the CLI command and the tests.
struct SineDemoConfig {
    uint64_t seed = 0;
    int epochs = 800;
    int64_t batch = 64;
    int64_t n_train = 512;
    int64_t n_test = 256;
    double lo = -2.0;
    double hi = 2.0;
    std::vector<std::pair<int, double>> schedule = {{0, 0.05}, {600, 0.02}};
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

struct SineDemoResult {
    FitResult base;
    FitResult stp;
    int64_t base_hidden_params = 0;
    int64_t stp_hidden_params = 0;
};

/// Train the dense baseline and the semi-product net on the same data with
/// the same budget. Deterministic per config.seed.
[[nodiscard]] SineDemoResult run_sine_demo(const SineDemoConfig& config);

/// "epoch,train_mse,test_mse" CSV of a loss history.
[[nodiscard]] std::string fit_csv(const FitResult& history);

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Central-difference check of analytic gradients: for every element of
/// every block, compare (f(x+h) - f(x-h)) / 2h against the analytic value
/// at relative tolerance tol.
[[nodiscard]] GradCheckReport grad_check(
    const std::function<double(const std::vector<DenseTensor>&)>& f,
    const std::vector<DenseTensor>& at, const std::vector<DenseTensor>& analytic, double step,
    double tol);

}  // namespace stpn
