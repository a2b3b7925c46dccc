#pragma once

#include "dcoral/matrix.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace dcoral {

enum class LayerKind : std::uint8_t {
    Affine = 0,
    Relu = 1,
    SoftmaxCrossEntropy = 2,
};

// Affine layers compute y = x W + b with W stored in_dim x out_dim.
// Relu and the softmax cross-entropy head carry no parameters.
struct Layer {
    LayerKind kind = LayerKind::Affine;
    Matrix weights;
    std::vector<double> bias;
    double lr_multiplier = 1.0;

    friend bool operator==(const Layer&, const Layer&) = default;
};

// One class index per example.
class LabelBatch {
public:
    LabelBatch() = default;
    LabelBatch(std::vector<std::size_t> labels, std::size_t num_classes);

    std::size_t size() const noexcept { return labels_.size(); }
    std::size_t num_classes() const noexcept { return num_classes_; }
    std::size_t operator[](std::size_t i) const noexcept { return labels_[i]; }
    std::span<const std::size_t> values() const noexcept { return labels_; }

    LabelBatch gather(std::span<const std::size_t> indices) const;

    friend bool operator==(const LabelBatch&, const LabelBatch&) = default;

private:
    std::vector<std::size_t> labels_;
    std::size_t num_classes_ = 0;
};

// Layer indices whose outputs feed CORAL terms. Index i refers to the output
// of layers()[i].
using TapMap = std::map<std::size_t, Matrix>;

class Network {
public:
    Network(std::vector<Layer> layers, std::vector<std::size_t> coral_taps);

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    const Layer& layer(std::size_t i) const { return layers_.at(i); }
    // Mutable access invalidates cached forward passes.
    Layer& mutable_layer(std::size_t i);

    const std::vector<std::size_t>& coral_taps() const noexcept { return taps_; }
    void set_coral_taps(std::vector<std::size_t> taps);

    std::size_t input_dim() const noexcept { return layers_.front().weights.rows(); }
    std::size_t num_classes() const noexcept;
    // Index of the last affine layer, whose output is the logits.
    std::size_t logits_layer() const noexcept { return layers_.size() - 2; }
    std::size_t output_dim(std::size_t layer_index) const;

    std::uint64_t generation() const noexcept { return generation_; }
    void touch() noexcept { ++generation_; }

    // Parameters and taps only; the generation counter is runtime state.
    friend bool operator==(const Network& a, const Network& b) {
        return a.layers_ == b.layers_ && a.taps_ == b.taps_;
    }

private:
    void validate() const;

    std::vector<Layer> layers_;
    std::vector<std::size_t> taps_;
    std::uint64_t generation_ = 0;
};

// Builds affine/relu blocks for consecutive dims, no relu after the last
// affine, then the softmax cross-entropy head. Hidden layers get fan-in scaled
// uniform weights (He-uniform, limit sqrt(6 / fan_in)); the last affine layer
// gets N(0, head_init_std^2) weights and lr_multiplier 10. Biases start at 0.
// Taps default to the logits layer.
Network init_network(std::span<const std::size_t> layer_dims, double head_init_std,
                     std::uint64_t seed,
                     std::optional<std::vector<std::size_t>> coral_taps = std::nullopt);

struct ForwardPass {
    Matrix logits;
    TapMap taps;
    // activations[0] is the input, activations[i + 1] the output of layer i.
    std::vector<Matrix> activations;
    std::uint64_t generation = 0;
    bool valid = false;
};

ForwardPass forward(const Network& net, const Matrix& x);

struct ClassLoss {
    double loss = 0.0;
    Matrix grad_logits;
};

// Mean softmax cross-entropy over the batch, with grad (softmax - onehot) / n.
ClassLoss class_loss_and_grad(const Matrix& logits, const LabelBatch& labels);

// Row-wise softmax with max-logit subtraction.
Matrix softmax(const Matrix& logits);

struct LayerGrad {
    Matrix weights;
    std::vector<double> bias;
};

// Per-layer parameter gradients; entries for parameterless layers are empty.
// Also used for momentum velocity, which has the same shape.
struct ParamGrads {
    std::vector<LayerGrad> layers;

    ParamGrads& operator+=(const ParamGrads& other);
    bool all_finite() const noexcept;
};

ParamGrads zeros_like(const Network& net);

// Back-propagates grad_logits (at the logits layer output) plus every tap
// gradient (at its layer output). Contributions sum at shared layers.
// Throws StaleForward when `pass` was not produced by the current parameters.
ParamGrads backward(const Network& net, const ForwardPass& pass, const Matrix& grad_logits,
                    const TapMap& tap_grads);

struct SgdParams {
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// v <- momentum * v - lr * lr_multiplier * (grad + weight_decay * w); w <- w + v.
// Weight decay applies to weights, not biases.
void sgd_step(Network& net, const ParamGrads& grads, ParamGrads& velocity, const SgdParams& params);

// FNV-1a over the bit patterns of every parameter and tap index.
std::uint64_t parameter_hash(const Network& net);

struct CheckpointMeta {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
    Network network;
    CheckpointMeta meta;
};

// Versioned little-endian binary dump; doubles are stored as raw IEEE-754 bits.
void save_checkpoint(std::ostream& os, const Network& net, const CheckpointMeta& meta);
Checkpoint load_checkpoint(std::istream& is);

}  // namespace dcoral
