#include "dcoral/net.hpp"

#include "dcoral/error.hpp"
#include "dcoral/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace dcoral {

namespace {

constexpr double kHeadLrMultiplier = 10.0;
constexpr char kCheckpointMagic[8] = {'D', 'C', 'O', 'R', 'A', 'L', 'N', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFFu;
        h *= kFnvPrime;
    }
}

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_integral_v<T>);
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFFu);
    }
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T read_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw Error(ErrorKind::ParseError, "checkpoint truncated");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return static_cast<T>(v);
}

double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }

}  // namespace

LabelBatch::LabelBatch(std::vector<std::size_t> labels, std::size_t num_classes)
    : labels_(std::move(labels)), num_classes_(num_classes) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] >= num_classes_) {
            throw Error(ErrorKind::BadLabel, "label " + std::to_string(labels_[i]) + " at row " +
                                                 std::to_string(i) + " outside [0, " +
                                                 std::to_string(num_classes_) + ")");
        }
    }
}

LabelBatch LabelBatch::gather(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels_.at(i));
    return LabelBatch(std::move(out), num_classes_);
}

Network::Network(std::vector<Layer> layers, std::vector<std::size_t> coral_taps)
    : layers_(std::move(layers)) {
    validate();
    set_coral_taps(std::move(coral_taps));
}

void Network::validate() const {
    if (layers_.size() < 2) throw Error(ErrorKind::BadArchitecture, "need an affine layer and a head");
    if (layers_.back().kind != LayerKind::SoftmaxCrossEntropy) {
        throw Error(ErrorKind::BadArchitecture, "final layer must be the classification head");
    }
    if (layers_[layers_.size() - 2].kind != LayerKind::Affine) {
        throw Error(ErrorKind::BadArchitecture, "the head must follow an affine layer");
    }
    if (layers_.front().kind != LayerKind::Affine) {
        throw Error(ErrorKind::BadArchitecture, "first layer must be affine");
    }
    std::size_t width = layers_.front().weights.rows();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& l = layers_[i];
        if (!(l.lr_multiplier > 0.0) || !std::isfinite(l.lr_multiplier)) {
            throw Error(ErrorKind::BadArchitecture, "lr_multiplier must be positive at layer " + std::to_string(i));
        }
        if (l.kind == LayerKind::SoftmaxCrossEntropy && i + 1 != layers_.size()) {
            throw Error(ErrorKind::BadArchitecture, "head must be the last layer");
        }
        if (l.kind != LayerKind::Affine) {
            if (!l.weights.empty() || !l.bias.empty()) {
                throw Error(ErrorKind::BadArchitecture, "parameterless layer carries parameters");
            }
            continue;
        }
        if (l.weights.empty() || l.weights.rows() != width || l.bias.size() != l.weights.cols()) {
            throw Error(ErrorKind::BadArchitecture, "affine dims do not chain at layer " + std::to_string(i));
        }
        width = l.weights.cols();
    }
}

Layer& Network::mutable_layer(std::size_t i) {
    touch();
    return layers_.at(i);
}

void Network::set_coral_taps(std::vector<std::size_t> taps) {
    std::sort(taps.begin(), taps.end());
    taps.erase(std::unique(taps.begin(), taps.end()), taps.end());
    for (auto t : taps) {
        if (t >= layers_.size() - 1) {
            throw Error(ErrorKind::BadArchitecture,
                        "coral tap " + std::to_string(t) + " must index a layer below the head");
        }
    }
    taps_ = std::move(taps);
}

std::size_t Network::num_classes() const noexcept { return layers_[logits_layer()].weights.cols(); }

std::size_t Network::output_dim(std::size_t layer_index) const {
    std::size_t width = input_dim();
    for (std::size_t i = 0; i <= layer_index && i < layers_.size(); ++i) {
        if (layers_[i].kind == LayerKind::Affine) width = layers_[i].weights.cols();
    }
    return width;
}

Network init_network(std::span<const std::size_t> layer_dims, double head_init_std,
                     std::uint64_t seed, std::optional<std::vector<std::size_t>> coral_taps) {
    if (layer_dims.size() < 2) throw Error(ErrorKind::BadArchitecture, "need at least 2 layer dims");
    if (std::find(layer_dims.begin(), layer_dims.end(), 0u) != layer_dims.end()) {
        throw Error(ErrorKind::BadArchitecture, "layer dims must be positive");
    }
    if (!(head_init_std > 0.0) || !std::isfinite(head_init_std)) {
        throw Error(ErrorKind::BadArchitecture, "head_init_std must be positive");
    }

    Rng rng(seed);
    std::vector<Layer> layers;
    const std::size_t num_affine = layer_dims.size() - 1;
    for (std::size_t k = 0; k < num_affine; ++k) {
        const std::size_t in = layer_dims[k];
        const std::size_t out = layer_dims[k + 1];
        const bool is_head = k + 1 == num_affine;
        Layer affine;
        affine.kind = LayerKind::Affine;
        affine.weights = Matrix(in, out);
        affine.bias.assign(out, 0.0);
        if (is_head) {
            for (double& w : affine.weights.data()) w = rng.normal(0.0, head_init_std);
            affine.lr_multiplier = kHeadLrMultiplier;
        } else {
            const double limit = std::sqrt(6.0 / static_cast<double>(in));
            for (double& w : affine.weights.data()) w = rng.uniform(-limit, limit);
        }
        layers.push_back(std::move(affine));
        if (!is_head) layers.push_back(Layer{LayerKind::Relu, {}, {}, 1.0});
    }
    layers.push_back(Layer{LayerKind::SoftmaxCrossEntropy, {}, {}, 1.0});

    const std::size_t logits_index = layers.size() - 2;
    return Network(std::move(layers), coral_taps.value_or(std::vector<std::size_t>{logits_index}));
}

ForwardPass forward(const Network& net, const Matrix& x) {
    if (x.empty() || x.cols() != net.input_dim()) {
        throw Error(ErrorKind::DimensionMismatch,
                    "input has " + std::to_string(x.cols()) + " columns, network expects " +
                        std::to_string(net.input_dim()));
    }
    ForwardPass pass;
    pass.activations.reserve(net.layers().size() + 1);
    pass.activations.push_back(x);
    for (const Layer& layer : net.layers()) {
        const Matrix& in = pass.activations.back();
        switch (layer.kind) {
            case LayerKind::Affine: {
                Matrix out = matmul(in, layer.weights);
                for (std::size_t r = 0; r < out.rows(); ++r) {
                    auto row = out.row(r);
                    for (std::size_t c = 0; c < out.cols(); ++c) row[c] += layer.bias[c];
                }
                pass.activations.push_back(std::move(out));
                break;
            }
            case LayerKind::Relu: {
                Matrix out = in;
                for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
                pass.activations.push_back(std::move(out));
                break;
            }
            case LayerKind::SoftmaxCrossEntropy:
                // The head's loss needs labels; its forward output is the logits.
                pass.activations.push_back(in);
                break;
        }
    }
    pass.logits = pass.activations.back();
    for (auto t : net.coral_taps()) pass.taps.emplace(t, pass.activations[t + 1]);
    pass.generation = net.generation();
    pass.valid = true;
    return pass;
}

Matrix softmax(const Matrix& logits) {
    Matrix p = logits;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        auto row = p.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
    return p;
}

ClassLoss class_loss_and_grad(const Matrix& logits, const LabelBatch& labels) {
    if (logits.empty() || logits.rows() != labels.size()) {
        throw Error(ErrorKind::DimensionMismatch, "logits rows do not match label count");
    }
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= k) {
            throw Error(ErrorKind::BadLabel, "label " + std::to_string(labels[i]) + " >= " + std::to_string(k));
        }
    }
    ClassLoss out;
    out.grad_logits = Matrix(n, k);
    long double total = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        const double log_sum = std::log(sum);
        total += log_sum - (row[labels[i]] - mx);
        auto g = out.grad_logits.row(i);
        for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(row[c] - mx - log_sum) / static_cast<double>(n);
        g[labels[i]] -= 1.0 / static_cast<double>(n);
    }
    out.loss = static_cast<double>(total / static_cast<long double>(n));
    return out;
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) {
    if (other.layers.size() != layers.size()) {
        throw Error(ErrorKind::DimensionMismatch, "gradient layer counts differ");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].weights.empty()) continue;
        layers[i].weights += other.layers[i].weights;
        for (std::size_t j = 0; j < layers[i].bias.size(); ++j) layers[i].bias[j] += other.layers[i].bias[j];
    }
    return *this;
}

bool ParamGrads::all_finite() const noexcept {
    for (const auto& l : layers) {
        if (!l.weights.empty() && !l.weights.all_finite()) return false;
        for (double b : l.bias) {
            if (!std::isfinite(b)) return false;
        }
    }
    return true;
}

ParamGrads zeros_like(const Network& net) {
    ParamGrads g;
    g.layers.resize(net.layers().size());
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const Layer& l = net.layers()[i];
        if (l.kind != LayerKind::Affine) continue;
        g.layers[i].weights = Matrix(l.weights.rows(), l.weights.cols());
        g.layers[i].bias.assign(l.bias.size(), 0.0);
    }
    return g;
}

ParamGrads backward(const Network& net, const ForwardPass& pass, const Matrix& grad_logits,
                    const TapMap& tap_grads) {
    if (!pass.valid || pass.generation != net.generation() ||
        pass.activations.size() != net.layers().size() + 1) {
        throw Error(ErrorKind::StaleForward, "no forward pass cached for the current parameters");
    }
    const std::size_t n = pass.activations.front().rows();
    const std::size_t logits_index = net.logits_layer();
    if (grad_logits.rows() != n || grad_logits.cols() != net.num_classes()) {
        throw Error(ErrorKind::DimensionMismatch, "grad_logits shape does not match the forward pass");
    }
    for (const auto& [index, g] : tap_grads) {
        if (index >= logits_index + 1) {
            throw Error(ErrorKind::DimensionMismatch, "tap gradient at invalid layer " + std::to_string(index));
        }
        const Matrix& act = pass.activations[index + 1];
        if (g.rows() != act.rows() || g.cols() != act.cols()) {
            throw Error(ErrorKind::DimensionMismatch, "tap gradient shape mismatch at layer " + std::to_string(index));
        }
    }

    ParamGrads grads = zeros_like(net);
    // Gradient with respect to the output of the current layer.
    Matrix upstream = grad_logits;
    for (std::size_t idx = logits_index + 1; idx-- > 0;) {
        if (auto it = tap_grads.find(idx); it != tap_grads.end()) upstream += it->second;
        const Layer& layer = net.layers()[idx];
        const Matrix& input = pass.activations[idx];
        if (layer.kind == LayerKind::Affine) {
            grads.layers[idx].weights = matmul_tn(input, upstream);
            auto& db = grads.layers[idx].bias;
            for (std::size_t r = 0; r < upstream.rows(); ++r) {
                const auto row = upstream.row(r);
                for (std::size_t c = 0; c < row.size(); ++c) db[c] += row[c];
            }
            if (idx > 0) upstream = matmul_nt(upstream, layer.weights);
        } else if (layer.kind == LayerKind::Relu) {
            const auto in = input.data();
            auto g = upstream.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!(in[i] > 0.0)) g[i] = 0.0;
            }
        }
    }
    return grads;
}

void sgd_step(Network& net, const ParamGrads& grads, ParamGrads& velocity, const SgdParams& params) {
    if (!(params.lr > 0.0) || !(params.momentum >= 0.0 && params.momentum < 1.0) ||
        !(params.weight_decay >= 0.0)) {
        throw Error(ErrorKind::ConfigError, "sgd requires lr > 0, 0 <= momentum < 1, weight_decay >= 0");
    }
    if (grads.layers.size() != net.layers().size() || velocity.layers.size() != net.layers().size()) {
        throw Error(ErrorKind::DimensionMismatch, "gradient/velocity layout does not match network");
    }
    // Compute every update before touching parameters so a failure leaves the
    // network and velocity as they were.
    ParamGrads next_velocity = velocity;
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const Layer& layer = net.layers()[i];
        if (layer.kind != LayerKind::Affine) continue;
        const double step = params.lr * layer.lr_multiplier;
        auto w = layer.weights.data();
        auto gw = grads.layers[i].weights.data();
        auto vw = next_velocity.layers[i].weights.data();
        if (gw.size() != w.size() || vw.size() != w.size()) {
            throw Error(ErrorKind::DimensionMismatch, "gradient shape mismatch at layer " + std::to_string(i));
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            vw[j] = params.momentum * vw[j] - step * (gw[j] + params.weight_decay * w[j]);
        }
        const auto& gb = grads.layers[i].bias;
        auto& vb = next_velocity.layers[i].bias;
        for (std::size_t j = 0; j < layer.bias.size(); ++j) vb[j] = params.momentum * vb[j] - step * gb[j];
    }
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        const Layer& layer = net.layers()[i];
        if (layer.kind != LayerKind::Affine) continue;
        auto w = layer.weights.data();
        const auto vw = next_velocity.layers[i].weights.data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (!std::isfinite(w[j] + vw[j])) {
                throw Error(ErrorKind::NonFinite, "non-finite weight update at layer " + std::to_string(i));
            }
        }
        for (std::size_t j = 0; j < layer.bias.size(); ++j) {
            if (!std::isfinite(layer.bias[j] + next_velocity.layers[i].bias[j])) {
                throw Error(ErrorKind::NonFinite, "non-finite bias update at layer " + std::to_string(i));
            }
        }
    }
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
        if (net.layers()[i].kind != LayerKind::Affine) continue;
        Layer& layer = net.mutable_layer(i);
        auto w = layer.weights.data();
        const auto vw = next_velocity.layers[i].weights.data();
        for (std::size_t j = 0; j < w.size(); ++j) w[j] += vw[j];
        for (std::size_t j = 0; j < layer.bias.size(); ++j) layer.bias[j] += next_velocity.layers[i].bias[j];
    }
    velocity = std::move(next_velocity);
    net.touch();
}

std::uint64_t parameter_hash(const Network& net) {
    std::uint64_t h = kFnvOffset;
    for (const Layer& l : net.layers()) {
        fnv_mix(h, static_cast<std::uint64_t>(l.kind));
        fnv_mix(h, std::bit_cast<std::uint64_t>(l.lr_multiplier));
        for (double w : l.weights.data()) fnv_mix(h, std::bit_cast<std::uint64_t>(w));
        for (double b : l.bias) fnv_mix(h, std::bit_cast<std::uint64_t>(b));
    }
    for (auto t : net.coral_taps()) fnv_mix(h, t);
    return h;
}

void save_checkpoint(std::ostream& os, const Network& net, const CheckpointMeta& meta) {
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_le<std::uint32_t>(os, kCheckpointVersion);
    write_le<std::uint64_t>(os, meta.config_hash);
    write_le<std::uint64_t>(os, meta.seed);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.layers().size()));
    for (const Layer& l : net.layers()) {
        write_le<std::uint8_t>(os, static_cast<std::uint8_t>(l.kind));
        write_f64(os, l.lr_multiplier);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.weights.rows()));
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.weights.cols()));
        for (double w : l.weights.data()) write_f64(os, w);
        write_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.bias.size()));
        for (double b : l.bias) write_f64(os, b);
    }
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.coral_taps().size()));
    for (auto t : net.coral_taps()) write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t));
    if (!os) throw Error(ErrorKind::IoError, "checkpoint write failed");
}

Checkpoint load_checkpoint(std::istream& is) {
    char magic[sizeof(kCheckpointMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error(ErrorKind::ParseError, "not a checkpoint file");
    }
    const auto version = read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::ParseError, "unsupported checkpoint version " + std::to_string(version));
    }
    CheckpointMeta meta;
    meta.config_hash = read_le<std::uint64_t>(is);
    meta.seed = read_le<std::uint64_t>(is);
    const auto num_layers = read_le<std::uint32_t>(is);
    if (num_layers > 4096) throw Error(ErrorKind::ParseError, "implausible layer count");
    std::vector<Layer> layers;
    for (std::uint32_t i = 0; i < num_layers; ++i) {
        Layer l;
        const auto kind = read_le<std::uint8_t>(is);
        if (kind > static_cast<std::uint8_t>(LayerKind::SoftmaxCrossEntropy)) {
            throw Error(ErrorKind::ParseError, "unknown layer kind");
        }
        l.kind = static_cast<LayerKind>(kind);
        l.lr_multiplier = read_f64(is);
        const auto rows = read_le<std::uint32_t>(is);
        const auto cols = read_le<std::uint32_t>(is);
        if (static_cast<std::uint64_t>(rows) * cols > (1ULL << 28)) {
            throw Error(ErrorKind::ParseError, "implausible weight shape");
        }
        if (rows && cols) {
            std::vector<double> w(static_cast<std::size_t>(rows) * cols);
            for (double& v : w) v = read_f64(is);
            l.weights = Matrix(rows, cols, std::move(w));
        }
        const auto nbias = read_le<std::uint32_t>(is);
        if (nbias > (1u << 24)) throw Error(ErrorKind::ParseError, "implausible bias length");
        l.bias.resize(nbias);
        for (double& b : l.bias) b = read_f64(is);
        layers.push_back(std::move(l));
    }
    const auto ntaps = read_le<std::uint32_t>(is);
    if (ntaps > num_layers) throw Error(ErrorKind::ParseError, "implausible tap count");
    std::vector<std::size_t> taps(ntaps);
    for (auto& t : taps) t = read_le<std::uint32_t>(is);
    return Checkpoint{Network(std::move(layers), std::move(taps)), meta};
}

}  // namespace dcoral
