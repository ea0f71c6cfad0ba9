#include "stpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "stpn/layers.hpp"
#include "stpn/rng.hpp"

namespace stpn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

double mse_loss(const DenseTensor& pred, const DenseTensor& target) {
    require(same_shape(pred, target), "mse_loss: shapes differ");
    double s = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.numel());
}

DenseTensor mse_grad(const DenseTensor& pred, const DenseTensor& target) {
    require(same_shape(pred, target), "mse_grad: shapes differ");
    DenseTensor g = DenseTensor::zeros(pred.dims);
    const double scale = 2.0 / static_cast<double>(pred.numel());
    for (size_t i = 0; i < pred.data.size(); ++i)
        g.data[i] = scale * (pred.data[i] - target.data[i]);
    return g;
}

double sine_target(double x) {
    const double pi = std::numbers::pi;
    return std::sin(0.5 * pi * x) + std::sin(pi * x) + std::sin(2.0 * pi * x);
}

SineData sine_dataset(int64_t n_train, int64_t n_test, double lo, double hi, uint64_t seed) {
    require(n_train > 0 && n_test > 0, "sine_dataset: sizes must be positive");
    require(lo < hi, "sine_dataset: empty x range");
    Rng rng(seed);
    auto draw = [&](int64_t n) {
        Dataset d{DenseTensor::zeros({n, 1}), DenseTensor::zeros({n, 1})};
        for (int64_t i = 0; i < n; ++i) {
            const double x = lo + (hi - lo) * rng.uniform();
            d.x.data[static_cast<size_t>(i)] = x;
            d.y.data[static_cast<size_t>(i)] = sine_target(x);
        }
        return d;
    };
    SineData out;
    out.train = draw(n_train);
    out.test = draw(n_test);
    return out;
}

double TrainState::rate_at(int epoch) const {
    require(!schedule.empty(), "rate_at: empty schedule");
    double rate = schedule.front().second;
    for (const auto& [start, r] : schedule) {
        if (start > epoch) break;
        rate = r;
    }
    return rate;
}

void sgd_step(TrainState& state, double lr) {
    require(lr > 0.0, "sgd_step: rate must be positive");
    require(state.gradients.size() == state.parameters.size(),
            "sgd_step: gradient count does not match parameters");
    if (state.velocity.empty())
        for (const DenseTensor* p : state.parameters)
            state.velocity.push_back(DenseTensor::zeros(p->dims));
    require(state.velocity.size() == state.parameters.size(),
            "sgd_step: velocity count does not match parameters");
    for (size_t k = 0; k < state.parameters.size(); ++k) {
        DenseTensor& w = *state.parameters[k];
        const DenseTensor& g = state.gradients[k];
        DenseTensor& v = state.velocity[k];
        require(same_shape(w, g) && same_shape(w, v), "sgd_step: shape mismatch");
        for (size_t i = 0; i < w.data.size(); ++i) {
            v.data[i] = state.momentum * v.data[i] + g.data[i] + state.weight_decay * w.data[i];
            w.data[i] -= lr * v.data[i];
        }
    }
}

namespace {

DenseTensor layer_forward(const MlpLayer& l, const DenseTensor& x) {
    return l.stp ? stp_dense_forward(x, l.w, l.b) : dense_forward(x, l.w, l.b);
}

DenseGrads layer_backward(const MlpLayer& l, const DenseTensor& x, const DenseTensor& dy) {
    return l.stp ? stp_dense_backward(x, l.w, dy) : dense_backward(x, l.w, dy);
}

DenseTensor tanh_of(const DenseTensor& a) {
    DenseTensor z = a;
    for (double& v : z.data) v = std::tanh(v);
    return z;
}

}  // namespace

DenseTensor Mlp::forward(const DenseTensor& x) const {
    require(!layers.empty(), "forward: empty net");
    DenseTensor z = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        z = layer_forward(layers[i], z);
        if (i + 1 < layers.size()) z = tanh_of(z);
    }
    return z;
}

MlpGrads Mlp::backward(const DenseTensor& x, const DenseTensor& dy) const {
    require(!layers.empty(), "backward: empty net");
    // Stage inputs: inputs[i] feeds layer i (post-activation for i > 0).
    std::vector<DenseTensor> inputs;
    inputs.reserve(layers.size());
    DenseTensor z = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        inputs.push_back(z);
        z = layer_forward(layers[i], z);
        if (i + 1 < layers.size()) z = tanh_of(z);
    }
    MlpGrads out;
    out.dw.resize(layers.size());
    out.db.resize(layers.size());
    DenseTensor d = dy;
    for (size_t i = layers.size(); i-- > 0;) {
        DenseGrads g = layer_backward(layers[i], inputs[i], d);
        out.dw[i] = std::move(g.dw);
        out.db[i] = std::move(g.db);
        if (i > 0) {
            // inputs[i] = tanh(pre-activation), so d/d(pre) = dx (1 - z^2).
            d = std::move(g.dx);
            const DenseTensor& zi = inputs[i];
            for (size_t j = 0; j < d.data.size(); ++j)
                d.data[j] *= 1.0 - zi.data[j] * zi.data[j];
        }
    }
    return out;
}

std::vector<DenseTensor*> Mlp::parameter_list() {
    std::vector<DenseTensor*> ps;
    for (MlpLayer& l : layers) {
        ps.push_back(&l.w);
        ps.push_back(&l.b);
    }
    return ps;
}

int64_t Mlp::hidden_weight_params() const {
    int64_t n = 0;
    for (size_t i = 1; i + 1 < layers.size(); ++i) n += layers[i].w.numel();
    return n;
}

namespace {

// Entries ~ N(0, 1/fan) where fan is the contracted extent of the stored
// matrix: columns of a dense (out, in) weight, rows of a semi (p, q) block.
DenseTensor gaussian_matrix(Rng& rng, int64_t rows, int64_t cols, int64_t fan) {
    DenseTensor w = DenseTensor::zeros({rows, cols});
    const double sigma = 1.0 / std::sqrt(static_cast<double>(fan));
    for (double& v : w.data) v = rng.normal(0.0, sigma);
    return w;
}

}  // namespace

Mlp make_sine_base_net(uint64_t seed) {
    Rng rng(seed);
    Mlp net;
    net.layers.push_back({false, gaussian_matrix(rng, 64, 1, 1), DenseTensor::zeros({64})});
    net.layers.push_back({false, gaussian_matrix(rng, 64, 64, 64), DenseTensor::zeros({64})});
    net.layers.push_back({false, gaussian_matrix(rng, 1, 64, 64), DenseTensor::zeros({1})});
    return net;
}

Mlp make_sine_stp_net(uint64_t seed) {
    Rng rng(seed);
    Mlp net;
    net.layers.push_back({true, gaussian_matrix(rng, 1, 64, 1), DenseTensor::zeros({64})});
    net.layers.push_back({true, gaussian_matrix(rng, 32, 32, 32), DenseTensor::zeros({64})});
    net.layers.push_back({false, gaussian_matrix(rng, 1, 64, 64), DenseTensor::zeros({1})});
    return net;
}

namespace {

DenseTensor gather_rows(const DenseTensor& t, const std::vector<int64_t>& idx, int64_t lo,
                        int64_t hi) {
    const int64_t cols = t.dim(2);
    DenseTensor out = DenseTensor::zeros({hi - lo, cols});
    for (int64_t r = lo; r < hi; ++r)
        for (int64_t c = 0; c < cols; ++c)
            out.data[static_cast<size_t>((r - lo) * cols + c)] =
                t.data[static_cast<size_t>(idx[static_cast<size_t>(r)] * cols + c)];
    return out;
}

}  // namespace

FitResult fit(Mlp& net, const Dataset& train, const Dataset& test, int epochs, int64_t batch,
              TrainState& state) {
    require(epochs >= 0, "fit: negative epoch count");
    require(batch > 0, "fit: batch size must be positive");
    const int64_t n = train.x.dim(1);
    state.parameters = net.parameter_list();
    state.gradients.clear();
    state.velocity.clear();
    Rng rng(state.seed);
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    FitResult history;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double lr = state.rate_at(epoch);
        // Fisher-Yates with the state's generator keeps runs bit-identical.
        for (int64_t i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
        for (int64_t lo = 0; lo < n; lo += batch) {
            const int64_t hi = std::min(n, lo + batch);
            const DenseTensor xb = gather_rows(train.x, order, lo, hi);
            const DenseTensor yb = gather_rows(train.y, order, lo, hi);
            const DenseTensor pred = net.forward(xb);
            MlpGrads grads = net.backward(xb, mse_grad(pred, yb));
            state.gradients.clear();
            for (size_t i = 0; i < net.layers.size(); ++i) {
                state.gradients.push_back(std::move(grads.dw[i]));
                state.gradients.push_back(std::move(grads.db[i]));
            }
            sgd_step(state, lr);
        }
        const double train_mse = mse_loss(net.forward(train.x), train.y);
        const double test_mse = mse_loss(net.forward(test.x), test.y);
        history.train_mse.push_back(train_mse);
        history.test_mse.push_back(test_mse);
        if (!std::isfinite(train_mse) || !std::isfinite(test_mse))
            throw std::runtime_error("fit: loss diverged to a non-finite value at epoch " +
                                     std::to_string(epoch));
    }
    return history;
}

SineDemoResult run_sine_demo(const SineDemoConfig& config) {
    Rng seeds(config.seed);
    const uint64_t data_seed = seeds.next_u64();
    const uint64_t base_seed = seeds.next_u64();
    const uint64_t stp_seed = seeds.next_u64();
    const uint64_t shuffle_seed = seeds.next_u64();
    const SineData data =
        sine_dataset(config.n_train, config.n_test, config.lo, config.hi, data_seed);

    auto train_one = [&](Mlp& net) {
        TrainState state;
        state.schedule = config.schedule;
        state.momentum = config.momentum;
        state.weight_decay = config.weight_decay;
        state.seed = shuffle_seed;
        return fit(net, data.train, data.test, config.epochs, config.batch, state);
    };
    SineDemoResult out;
    Mlp base = make_sine_base_net(base_seed);
    Mlp stp = make_sine_stp_net(stp_seed);
    out.base_hidden_params = base.hidden_weight_params();
    out.stp_hidden_params = stp.hidden_weight_params();
    out.base = train_one(base);
    out.stp = train_one(stp);
    return out;
}

std::string fit_csv(const FitResult& history) {
    std::string csv = "epoch,train_mse,test_mse\n";
    char line[96];
    for (size_t e = 0; e < history.train_mse.size(); ++e) {
        std::snprintf(line, sizeof line, "%zu,%.12g,%.12g\n", e, history.train_mse[e],
                      history.test_mse[e]);
        csv += line;
    }
    return csv;
}

GradCheckReport grad_check(const std::function<double(const std::vector<DenseTensor>&)>& f,
                           const std::vector<DenseTensor>& at,
                           const std::vector<DenseTensor>& analytic, double step, double tol) {
    require(at.size() == analytic.size(), "grad_check: block count mismatch");
    require(step > 0.0, "grad_check: step must be positive");
    std::vector<DenseTensor> probe = at;
    GradCheckReport report;
    for (size_t b = 0; b < probe.size(); ++b) {
        require(same_shape(probe[b], analytic[b]), "grad_check: block shape mismatch");
        for (size_t i = 0; i < probe[b].data.size(); ++i) {
            const double saved = probe[b].data[i];
            probe[b].data[i] = saved + step;
            const double up = f(probe);
            probe[b].data[i] = saved - step;
            const double down = f(probe);
            probe[b].data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double exact = analytic[b].data[i];
            const double rel = std::abs(exact - numeric) /
                               std::max({std::abs(exact), std::abs(numeric), 1e-8});
            report.max_rel_err = std::max(report.max_rel_err, rel);
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace stpn
