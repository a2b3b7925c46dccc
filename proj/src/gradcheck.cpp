#include "dcoral/gradcheck.hpp"

#include "dcoral/coral.hpp"
#include "dcoral/net.hpp"
#include "dcoral/random.hpp"
#include "dcoral/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace dcoral {

namespace {

constexpr double kCoralStep = 1e-5;
constexpr double kCoralRelTol = 1e-5;
constexpr double kCoralAbsTol = 1e-7;

constexpr double kNetStep = 1e-6;
constexpr double kNetRelTol = 1e-4;
constexpr double kNetAbsTol = 1e-8;

constexpr double kCorruption = 1.0 + 1e-3;

class ErrorTracker {
public:
    ErrorTracker(std::string name, double rel_tol, double abs_tol) {
        result_.name = std::move(name);
        result_.rel_tol = rel_tol;
        result_.abs_tol = abs_tol;
    }

    void add(double analytic, double numeric) {
        const double floor = result_.abs_tol / result_.rel_tol;
        const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
        const double err = std::abs(analytic - numeric) / scale;
        result_.max_rel_error = std::max(result_.max_rel_error, std::isfinite(err) ? err : INFINITY);
        ++result_.components;
    }

    void next_instance() { ++result_.instances; }

    GradCheckResult finish() {
        result_.passed = result_.max_rel_error <= result_.rel_tol;
        return result_;
    }

private:
    GradCheckResult result_;
};

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.uniform(lo, hi);
    return m;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

GradCheckResult check_coral(const GradCheckOptions& opt, Rng& rng) {
    ErrorTracker tracker("coral", kCoralRelTol, kCoralAbsTol);
    const double scale = opt.corrupt_gradient ? kCorruption : 1.0;
    for (std::size_t inst = 0; inst < opt.coral_instances; ++inst) {
        const std::size_t d = pick(rng, 1, opt.max_features);
        const std::size_t ns = pick(rng, 2, opt.max_rows);
        const std::size_t nt = pick(rng, 2, opt.max_rows);
        Matrix src = random_matrix(rng, ns, d, -2.0, 2.0);
        Matrix tgt = random_matrix(rng, nt, d, -2.0, 2.0);
        const CoralGrad g = coral_grad(src, tgt);

        auto sweep = [&](Matrix& m, const Matrix& analytic) {
            for (std::size_t i = 0; i < m.size(); ++i) {
                const double saved = m.data()[i];
                m.data()[i] = saved + kCoralStep;
                const double up = coral_loss(src, tgt);
                m.data()[i] = saved - kCoralStep;
                const double down = coral_loss(src, tgt);
                m.data()[i] = saved;
                tracker.add(scale * analytic.data()[i], (up - down) / (2.0 * kCoralStep));
            }
        };
        sweep(src, g.grad_source);
        sweep(tgt, g.grad_target);
        tracker.next_instance();
    }
    return tracker.finish();
}

double joint_scalar(const Network& net, const Matrix& xs, const LabelBatch& ys, const Matrix& xt,
                    std::span<const double> lambdas) {
    const ForwardPass sp = forward(net, xs);
    const ForwardPass tp = forward(net, xt);
    double total = class_loss_and_grad(sp.logits, ys).loss;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        const std::size_t tap = net.coral_taps()[i];
        total += lambdas[i] * coral_loss(sp.taps.at(tap), tp.taps.at(tap));
    }
    return total;
}

GradCheckResult check_network(const GradCheckOptions& opt, Rng& rng, double lambda) {
    char name[48];
    std::snprintf(name, sizeof(name), "joint/lambda=%g", lambda);
    ErrorTracker tracker(name, kNetRelTol, kNetAbsTol);
    const double scale = opt.corrupt_gradient ? kCorruption : 1.0;
    const std::size_t max_batch = std::min<std::size_t>(8, opt.max_rows);
    for (std::size_t inst = 0; inst < opt.network_instances; ++inst) {
        const std::size_t d = pick(rng, 1, opt.max_features);
        const std::size_t hidden = pick(rng, 2, 8);
        const std::size_t classes = pick(rng, 2, 5);
        const std::size_t ns = pick(rng, 2, max_batch);
        const std::size_t nt = pick(rng, 2, max_batch);
        const std::size_t dims[] = {d, hidden, classes};
        // Taps on the hidden activations and on the logits, so CORAL gradients
        // from two depths meet in the first layer.
        Network net = init_network(dims, 0.3, rng.next_u64(), std::vector<std::size_t>{1, 2});
        Rng bias_rng(rng.next_u64());
        for (std::size_t li : {std::size_t{0}, std::size_t{2}}) {
            for (double& b : net.mutable_layer(li).bias) b = bias_rng.uniform(-0.5, 0.5);
        }
        const Matrix xs = random_matrix(rng, ns, d, -2.0, 2.0);
        const Matrix xt = random_matrix(rng, nt, d, -2.0, 2.0);
        std::vector<std::size_t> labels(ns);
        for (auto& y : labels) y = static_cast<std::size_t>(rng.below(classes));
        const LabelBatch ys(std::move(labels), classes);
        const std::vector<double> lambdas(net.coral_taps().size(), lambda);

        const JointEval eval = joint_loss_and_grad(net, xs, ys, xt, lambdas);
        for (std::size_t li = 0; li < net.layers().size(); ++li) {
            if (net.layer(li).kind != LayerKind::Affine) continue;
            auto probe = [&](auto&& slot, double analytic) {
                Network work = net;
                double& p = slot(work);
                const double saved = p;
                p = saved + kNetStep;
                work.touch();
                const double up = joint_scalar(work, xs, ys, xt, lambdas);
                p = saved - kNetStep;
                work.touch();
                const double down = joint_scalar(work, xs, ys, xt, lambdas);
                tracker.add(scale * analytic, (up - down) / (2.0 * kNetStep));
            };
            const auto& lg = eval.grads.layers[li];
            for (std::size_t j = 0; j < lg.weights.size(); ++j) {
                probe([&](Network& w) -> double& { return w.mutable_layer(li).weights.data()[j]; },
                      lg.weights.data()[j]);
            }
            for (std::size_t j = 0; j < lg.bias.size(); ++j) {
                probe([&](Network& w) -> double& { return w.mutable_layer(li).bias[j]; }, lg.bias[j]);
            }
        }
        tracker.next_instance();
    }
    return tracker.finish();
}

}  // namespace

bool GradCheckReport::passed() const noexcept {
    return std::all_of(checks.begin(), checks.end(), [](const GradCheckResult& c) { return c.passed; });
}

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
    GradCheckReport report;
    Rng rng(options.seed);
    report.checks.push_back(check_coral(options, rng));
    for (double lambda : {0.0, 0.5, 10.0}) report.checks.push_back(check_network(options, rng, lambda));
    return report;
}

void print_report(std::ostream& os, const GradCheckReport& report) {
    char line[160];
    for (const auto& c : report.checks) {
        std::snprintf(line, sizeof(line), "%-4s %-16s instances=%zu components=%zu max_rel_err=%.3e tol=%.0e\n",
                      c.passed ? "PASS" : "FAIL", c.name.c_str(), c.instances, c.components, c.max_rel_error,
                      c.rel_tol);
        os << line;
    }
    os << (report.passed() ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
}

}  // namespace dcoral
