#pragma once

#include "dcoral/data.hpp"
#include "dcoral/net.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace dcoral {

struct TrainConfig {
    // One weight per CORAL tap. A single value is broadcast to every tap.
    std::vector<double> lambda_per_tap{1.0};
    bool auto_lambda = false;
    // Probe budget for auto_lambda, as a fraction of `iterations`.
    double probe_fraction = 0.1;
    std::size_t batch_source = 128;
    std::size_t batch_target = 128;
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    // Optional step decay: lr *= gamma every `lr_step_every` iterations (0 = constant).
    std::size_t lr_step_every = 0;
    double lr_step_gamma = 0.1;
    std::size_t iterations = 1000;
    std::size_t eval_every = 50;
    std::uint64_t seed = 0;
    // Never forward the target stream; the plain supervised baseline.
    bool source_only = false;
    // Hash the parameters before each stream's forward and insist they agree.
    bool verify_shared_params = false;

    void validate() const;
    double lr_at(std::size_t iteration) const;
};

struct MetricsRecord {
    std::size_t iteration = 0;
    double class_loss = 0.0;
    std::vector<double> coral_loss_per_tap;
    double joint_loss = 0.0;
    // NaN when not evaluated (train_step alone, or unlabeled target).
    double source_acc = 0.0;
    double target_acc = 0.0;
    double coral_distance = 0.0;
};

// class_loss + sum_i lambdas[i] * coral_losses[i]
double joint_loss(double class_loss, std::span<const double> coral_losses, std::span<const double> lambdas);

struct JointEval {
    double class_loss = 0.0;
    std::vector<double> coral_losses;
    double joint_loss = 0.0;
    ParamGrads grads;
};

// Joint objective class_loss + sum_i lambda_i * coral_loss_i and its parameter
// gradient. Both streams are forwarded through the same parameters; the
// classification loss only sees the source stream. Taps with lambda 0 are
// monitored but contribute no gradient.
JointEval joint_loss_and_grad(const Network& net, const Matrix& source, const LabelBatch& source_labels,
                              const Matrix& target, std::span<const double> lambdas,
                              bool verify_shared_params = false);

// One dual-stream step: source and target batches go through the same
// parameters, classification loss on the source stream, a CORAL term between
// the source and target activations at every tap, then one SGD update on the
// summed gradient. Returns the losses measured before the update. Taps with
// lambda 0 contribute nothing to the update.
MetricsRecord train_step(Network& net, ParamGrads& velocity, const Matrix& source,
                         const LabelBatch& source_labels, const Matrix& target,
                         std::span<const double> lambdas, const SgdParams& sgd,
                         bool verify_shared_params = false);

// Source-only supervised step; the target stream is never touched.
MetricsRecord supervised_step(Network& net, ParamGrads& velocity, const Matrix& source,
                              const LabelBatch& source_labels, const SgdParams& sgd);

inline constexpr double kLambdaMin = 1e-3;
inline constexpr double kLambdaMax = 1e4;

// class_loss / coral_loss clamped to [kLambdaMin, kLambdaMax]. Throws
// ProbeDiverged for non-finite or negative inputs.
double lambda_from_probe(double class_loss, double coral_loss);

// Trains a copy of `net` for the probe budget with config.lambda_per_tap, then
// sets each lambda so the probe's final classification and CORAL losses would
// carry equal weight.
std::vector<double> calibrate_lambda(const Network& net, const Dataset& source, const Dataset& target,
                                     const TrainConfig& config);

// Fraction of rows whose argmax logit (lowest index on ties) equals the label.
double evaluate(const Network& net, const Matrix& features, const LabelBatch& labels);

struct ExperimentResult {
    std::vector<MetricsRecord> log;
    Network network;
    std::vector<double> lambdas;
};

// Seeded shuffled batching of both domains; records metrics at iteration 0,
// every eval_every iterations after that, and at the last iteration. Target
// labels, if present, are only used for target_acc.
ExperimentResult run_experiment(const TrainConfig& config, Network net, const Dataset& source,
                                const Dataset& target);

// Header: iteration,class_loss,coral_loss_0..,joint_loss,source_acc,target_acc,coral_distance
void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> log, std::size_t num_taps);

}  // namespace dcoral
