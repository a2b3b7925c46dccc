#include "dcoral/trainer.hpp"

#include "dcoral/coral.hpp"
#include "dcoral/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace dcoral {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

constexpr std::uint64_t kSourceStream = 1;
constexpr std::uint64_t kTargetStream = 2;

std::vector<double> resolve_lambdas(const TrainConfig& config, std::size_t num_taps) {
    if (config.lambda_per_tap.size() == num_taps) return config.lambda_per_tap;
    if (config.lambda_per_tap.size() == 1) return std::vector<double>(num_taps, config.lambda_per_tap.front());
    throw Error(ErrorKind::LengthMismatch, std::to_string(config.lambda_per_tap.size()) +
                                               " lambdas for " + std::to_string(num_taps) + " CORAL taps");
}

std::size_t distance_layer(const Network& net) {
    return net.coral_taps().empty() ? net.logits_layer() : net.coral_taps().front();
}

struct LoopOutput {
    std::vector<MetricsRecord> log;
};

// Shared by the main run and the calibration probe. Records are emitted at
// iteration 0, every eval_every iterations, and at the last iteration; their
// losses are means over the steps since the previous record. Full-dataset
// diagnostics are only computed when `with_diagnostics` is set.
LoopOutput train_loop(Network& net, const TrainConfig& config, std::size_t iterations,
                      std::span<const double> lambdas, const Dataset& source, const Dataset& target,
                      bool with_diagnostics) {
    if (!source.labels) throw Error(ErrorKind::BadLabel, "source dataset needs labels");
    BatchIterator source_batches(source.size(), config.batch_source, mix_seed(config.seed, kSourceStream));
    BatchIterator target_batches(target.size(), config.batch_target, mix_seed(config.seed, kTargetStream));
    ParamGrads velocity = zeros_like(net);

    LoopOutput out;
    double window_class = 0.0;
    std::vector<double> window_coral(net.coral_taps().size(), 0.0);
    std::size_t window_steps = 0;
    for (std::size_t t = 0; t < iterations; ++t) {
        const bool record = t % config.eval_every == 0 || t + 1 == iterations;
        double source_acc = kNaN;
        double target_acc = kNaN;
        double distance = kNaN;
        if (record && with_diagnostics) {
            source_acc = evaluate(net, source.features, *source.labels);
            if (target.labels) target_acc = evaluate(net, target.features, *target.labels);
            const std::size_t tap = distance_layer(net);
            const Matrix fs = forward(net, source.features).activations[tap + 1];
            const Matrix ft = forward(net, target.features).activations[tap + 1];
            distance = coral_distance(fs, ft);
        }

        const auto sidx = source_batches.next();
        const Matrix xs = source.features.gather_rows(sidx);
        const LabelBatch ys = source.labels->gather(sidx);
        SgdParams sgd{config.lr_at(t), config.momentum, config.weight_decay};

        MetricsRecord m;
        if (config.source_only) {
            m = supervised_step(net, velocity, xs, ys, sgd);
        } else {
            const Matrix xt = target.features.gather_rows(target_batches.next());
            m = train_step(net, velocity, xs, ys, xt, lambdas, sgd, config.verify_shared_params);
        }
        if (!std::isfinite(m.joint_loss)) {
            throw Error(ErrorKind::NonFinite, "loss diverged at iteration " + std::to_string(t));
        }
        window_class += m.class_loss;
        for (std::size_t i = 0; i < window_coral.size(); ++i) window_coral[i] += m.coral_loss_per_tap[i];
        ++window_steps;
        if (!record) continue;

        const double steps = static_cast<double>(window_steps);
        MetricsRecord r;
        r.iteration = t;
        r.class_loss = window_class / steps;
        for (double c : window_coral) r.coral_loss_per_tap.push_back(c / steps);
        r.joint_loss = joint_loss(r.class_loss, r.coral_loss_per_tap, lambdas);
        r.source_acc = source_acc;
        r.target_acc = target_acc;
        r.coral_distance = distance;
        out.log.push_back(std::move(r));
        window_class = 0.0;
        std::fill(window_coral.begin(), window_coral.end(), 0.0);
        window_steps = 0;
    }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::ConfigError, what); };
    if (batch_source < 2 || batch_target < 2) fail("batch sizes must be >= 2");
    if (iterations < 1) fail("iterations must be >= 1");
    if (eval_every < 1) fail("eval_every must be >= 1");
    if (lambda_per_tap.empty()) fail("at least one lambda is required");
    for (double l : lambda_per_tap) {
        if (!(l >= 0.0) || !std::isfinite(l)) fail("lambdas must be finite and >= 0");
    }
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be >= 0");
    if (!(probe_fraction > 0.0 && probe_fraction <= 1.0)) fail("probe_fraction must be in (0, 1]");
    if (!(lr_step_gamma > 0.0) || !std::isfinite(lr_step_gamma)) fail("lr_step_gamma must be > 0");
}

double TrainConfig::lr_at(std::size_t iteration) const {
    if (lr_step_every == 0) return lr;
    return lr * std::pow(lr_step_gamma, static_cast<double>(iteration / lr_step_every));
}

double joint_loss(double class_loss, std::span<const double> coral_losses, std::span<const double> lambdas) {
    if (coral_losses.size() != lambdas.size()) {
        throw Error(ErrorKind::LengthMismatch, std::to_string(coral_losses.size()) + " CORAL losses vs " +
                                                   std::to_string(lambdas.size()) + " lambdas");
    }
    double total = class_loss;
    for (std::size_t i = 0; i < lambdas.size(); ++i) total += lambdas[i] * coral_losses[i];
    return total;
}

JointEval joint_loss_and_grad(const Network& net, const Matrix& source, const LabelBatch& source_labels,
                              const Matrix& target, std::span<const double> lambdas, bool verify_shared_params) {
    if (source.rows() < 2 || target.rows() < 2) {
        throw Error(ErrorKind::DegenerateBatch, "both streams need at least 2 rows");
    }
    const auto& taps = net.coral_taps();
    if (lambdas.size() != taps.size()) {
        throw Error(ErrorKind::LengthMismatch, std::to_string(lambdas.size()) + " lambdas for " +
                                                   std::to_string(taps.size()) + " CORAL taps");
    }

    const std::uint64_t before_source = verify_shared_params ? parameter_hash(net) : 0;
    const ForwardPass sp = forward(net, source);
    if (verify_shared_params && parameter_hash(net) != before_source) {
        throw std::logic_error("parameters changed between the source and target forwards");
    }
    const ForwardPass tp = forward(net, target);

    const ClassLoss cls = class_loss_and_grad(sp.logits, source_labels);

    JointEval out;
    out.class_loss = cls.loss;
    out.coral_losses.reserve(taps.size());
    TapMap source_tap_grads;
    TapMap target_tap_grads;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const std::size_t tap = taps[i];
        if (lambdas[i] == 0.0) {
            // Monitor only; nothing from this tap reaches the gradient.
            out.coral_losses.push_back(coral_loss(sp.taps.at(tap), tp.taps.at(tap)));
            continue;
        }
        CoralEval eval = coral_loss_and_grad(sp.taps.at(tap), tp.taps.at(tap));
        out.coral_losses.push_back(eval.loss);
        eval.grad.grad_source *= lambdas[i];
        eval.grad.grad_target *= lambdas[i];
        source_tap_grads.emplace(tap, std::move(eval.grad.grad_source));
        target_tap_grads.emplace(tap, std::move(eval.grad.grad_target));
    }
    out.joint_loss = joint_loss(out.class_loss, out.coral_losses, lambdas);
    if (!std::isfinite(out.joint_loss)) throw Error(ErrorKind::NonFinite, "joint loss is not finite");

    out.grads = backward(net, sp, cls.grad_logits, source_tap_grads);
    if (!target_tap_grads.empty()) {
        const Matrix zero_logits(tp.logits.rows(), tp.logits.cols());
        out.grads += backward(net, tp, zero_logits, target_tap_grads);
    }
    if (!out.grads.all_finite()) throw Error(ErrorKind::NonFinite, "non-finite parameter gradient");
    return out;
}

MetricsRecord train_step(Network& net, ParamGrads& velocity, const Matrix& source,
                         const LabelBatch& source_labels, const Matrix& target,
                         std::span<const double> lambdas, const SgdParams& sgd, bool verify_shared_params) {
    JointEval eval = joint_loss_and_grad(net, source, source_labels, target, lambdas, verify_shared_params);
    sgd_step(net, eval.grads, velocity, sgd);
    MetricsRecord m;
    m.class_loss = eval.class_loss;
    m.coral_loss_per_tap = std::move(eval.coral_losses);
    m.joint_loss = eval.joint_loss;
    m.source_acc = kNaN;
    m.target_acc = kNaN;
    m.coral_distance = kNaN;
    return m;
}

MetricsRecord supervised_step(Network& net, ParamGrads& velocity, const Matrix& source,
                              const LabelBatch& source_labels, const SgdParams& sgd) {
    const ForwardPass sp = forward(net, source);
    const ClassLoss cls = class_loss_and_grad(sp.logits, source_labels);
    MetricsRecord m;
    m.class_loss = cls.loss;
    m.coral_loss_per_tap.assign(net.coral_taps().size(), 0.0);
    m.joint_loss = cls.loss;
    m.source_acc = kNaN;
    m.target_acc = kNaN;
    m.coral_distance = kNaN;
    if (!std::isfinite(m.joint_loss)) throw Error(ErrorKind::NonFinite, "class loss is not finite");
    const ParamGrads grads = backward(net, sp, cls.grad_logits, {});
    if (!grads.all_finite()) throw Error(ErrorKind::NonFinite, "non-finite parameter gradient");
    sgd_step(net, grads, velocity, sgd);
    return m;
}

double lambda_from_probe(double class_loss, double coral_loss) {
    if (!std::isfinite(class_loss) || !std::isfinite(coral_loss) || class_loss < 0.0 || coral_loss < 0.0) {
        throw Error(ErrorKind::ProbeDiverged, "probe losses must be finite and non-negative");
    }
    if (coral_loss == 0.0) return class_loss == 0.0 ? 1.0 : kLambdaMax;
    return std::clamp(class_loss / coral_loss, kLambdaMin, kLambdaMax);
}

std::vector<double> calibrate_lambda(const Network& net, const Dataset& source, const Dataset& target,
                                     const TrainConfig& config) {
    config.validate();
    const auto probe_lambdas = resolve_lambdas(config, net.coral_taps().size());
    const auto budget = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(config.probe_fraction * static_cast<double>(config.iterations))));
    TrainConfig probe = config;
    probe.source_only = false;
    Network scratch = net;
    LoopOutput run;
    try {
        run = train_loop(scratch, probe, budget, probe_lambdas, source, target, false);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFinite) throw Error(ErrorKind::ProbeDiverged, e.message());
        throw;
    }
    std::vector<double> lambdas;
    const MetricsRecord& last = run.log.back();
    for (double c : last.coral_loss_per_tap) lambdas.push_back(lambda_from_probe(last.class_loss, c));
    return lambdas;
}

double evaluate(const Network& net, const Matrix& features, const LabelBatch& labels) {
    if (features.empty() || features.rows() != labels.size()) {
        throw Error(ErrorKind::DimensionMismatch, "label count does not match feature rows");
    }
    const Matrix logits = forward(net, features).logits;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const auto row = logits.row(r);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

ExperimentResult run_experiment(const TrainConfig& config, Network net, const Dataset& source,
                                const Dataset& target) {
    config.validate();
    if (source.size() == 0 || target.size() == 0) throw Error(ErrorKind::BadSpec, "datasets must be nonempty");
    if (source.dim() != target.dim()) {
        throw Error(ErrorKind::DimensionMismatch, "source and target feature dims differ");
    }
    if (source.dim() != net.input_dim()) {
        throw Error(ErrorKind::DimensionMismatch, "network input dim does not match the data");
    }

    std::vector<double> lambdas;
    if (config.source_only) {
        lambdas.assign(net.coral_taps().size(), 0.0);
    } else if (config.auto_lambda) {
        lambdas = calibrate_lambda(net, source, target, config);
    } else {
        lambdas = resolve_lambdas(config, net.coral_taps().size());
    }

    LoopOutput run = train_loop(net, config, config.iterations, lambdas, source, target, true);
    return ExperimentResult{std::move(run.log), std::move(net), std::move(lambdas)};
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> log, std::size_t num_taps) {
    os << "iteration,class_loss";
    for (std::size_t i = 0; i < num_taps; ++i) os << ",coral_loss_" << i;
    os << ",joint_loss,source_acc,target_acc,coral_distance\n";
    for (const auto& m : log) {
        if (m.coral_loss_per_tap.size() != num_taps) {
            throw Error(ErrorKind::LengthMismatch, "metrics record has the wrong number of CORAL losses");
        }
        os << m.iteration << ',' << format_double(m.class_loss);
        for (double c : m.coral_loss_per_tap) os << ',' << format_double(c);
        os << ',' << format_double(m.joint_loss) << ',' << format_double(m.source_acc) << ','
           << format_double(m.target_acc) << ',' << format_double(m.coral_distance) << '\n';
    }
}

}  // namespace dcoral
