#include "dcoral/cli.hpp"

#include "dcoral/coral.hpp"
#include "dcoral/gradcheck.hpp"
#include "dcoral/net.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace dcoral::cli {

namespace {

constexpr std::size_t kDefaultHidden = 32;
constexpr std::size_t kBenchmarkIterations = 3000;

[[noreturn]] void config_error(std::string_view key, const std::string& what) {
    throw Error(ErrorKind::ConfigError, std::string(key) + ": " + what);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    if (trim(s).empty()) return parts;
    while (true) {
        const auto pos = s.find(sep);
        parts.push_back(trim(s.substr(0, pos)));
        if (pos == std::string_view::npos) break;
        s.remove_prefix(pos + 1);
    }
    return parts;
}

double to_real(std::string_view key, std::string_view value) {
    double v = 0.0;
    if (!parse_double(value, v) || !std::isfinite(v)) config_error(key, "expected a finite number, got '" + std::string(value) + "'");
    return v;
}

std::uint64_t to_count(std::string_view key, std::string_view value) {
    value = trim(value);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        config_error(key, "expected a non-negative integer, got '" + std::string(value) + "'");
    }
    return v;
}

bool to_bool(std::string_view key, std::string_view value) {
    value = trim(value);
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    config_error(key, "expected true or false, got '" + std::string(value) + "'");
}

std::vector<double> to_reals(std::string_view key, std::string_view value) {
    std::vector<double> out;
    for (auto part : split(value, ',')) out.push_back(to_real(key, part));
    return out;
}

std::vector<std::size_t> to_counts(std::string_view key, std::string_view value) {
    std::vector<std::size_t> out;
    for (auto part : split(value, ',')) out.push_back(static_cast<std::size_t>(to_count(key, part)));
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, char sep, F&& fmt) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += sep;
        s += fmt(values[i]);
    }
    return s;
}

std::string reals_text(const std::vector<double>& v) {
    return join(v, ',', [](double x) { return format_double(x); });
}

std::string counts_text(const std::vector<std::size_t>& v) {
    return join(v, ',', [](std::size_t x) { return std::to_string(x); });
}

bool manifest_only_key(std::string_view key) {
    return key == "config_hash" || key == "command" || key == "lambda_used" || key == "format" ||
           key.starts_with("artifact.");
}

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw Error(ErrorKind::IoError, "cannot create output directory " + dir.string() +
                                            (ec ? ": " + ec.message() : std::string()));
    }
}

std::string write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << contents;
    out.close();
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
    return to_hex(fnv1a(contents));
}

// Provenance comment line; the CSV readers skip lines starting with '#'.
std::string provenance_line(const ExperimentConfig& config) {
    return "# config_hash=" + to_hex(config.hash()) + " seed=" + std::to_string(config.train.seed) + "\n";
}

std::string dataset_text(const ExperimentConfig& config, const Dataset& ds) {
    std::ostringstream os;
    os << provenance_line(config);
    write_dataset_csv(os, ds);
    return os.str();
}

std::size_t count_csv_columns(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty() || line.front() == '#') continue;
        return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    }
    throw Error(ErrorKind::ParseError, path.string() + ": no rows");
}

Dataset load_for_checkpoint(const std::filesystem::path& path, const Network& net, DomainTag domain) {
    const std::size_t cols = count_csv_columns(path);
    const std::size_t d = net.input_dim();
    if (cols != d && cols != d + 1) {
        throw Error(ErrorKind::DimensionMismatch, path.string() + " has " + std::to_string(cols) +
                                                      " columns; checkpoint expects " + std::to_string(d) +
                                                      " features (+1 optional label)");
    }
    return load_csv(path, cols == d + 1, net.num_classes(), domain);
}

std::size_t distance_layer(const Network& net) {
    return net.coral_taps().empty() ? net.logits_layer() : net.coral_taps().front();
}

void plot_run(const ExperimentConfig& config, const ExperimentResult& result) {
    std::vector<Series> losses;
    Series cls{"class_loss", {}, {}};
    for (const auto& m : result.log) {
        cls.x.push_back(static_cast<double>(m.iteration));
        cls.y.push_back(m.class_loss);
    }
    losses.push_back(std::move(cls));
    for (std::size_t i = 0; i < result.lambdas.size(); ++i) {
        Series s{"lambda*coral_loss_" + std::to_string(i), {}, {}};
        for (const auto& m : result.log) {
            s.x.push_back(static_cast<double>(m.iteration));
            s.y.push_back(result.lambdas[i] * m.coral_loss_per_tap[i]);
        }
        losses.push_back(std::move(s));
    }
    write_file(config.out_dir / "loss.svg", render_svg("training losses", "iteration", losses));

    Series src{"source_acc", {}, {}};
    Series tgt{"target_acc", {}, {}};
    for (const auto& m : result.log) {
        src.x.push_back(static_cast<double>(m.iteration));
        src.y.push_back(m.source_acc);
        tgt.x.push_back(static_cast<double>(m.iteration));
        tgt.y.push_back(m.target_acc);
    }
    write_file(config.out_dir / "accuracy.svg", render_svg("accuracy", "iteration", {src, tgt}));

    Series dist{"coral_distance", {}, {}};
    for (const auto& m : result.log) {
        dist.x.push_back(static_cast<double>(m.iteration));
        dist.y.push_back(m.coral_distance);
    }
    write_file(config.out_dir / "coral_distance.svg", render_svg("CORAL distance", "iteration", {dist}));
}

}  // namespace

int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::IoError:
        case ErrorKind::ParseError:
            return kExitIo;
        case ErrorKind::NonFinite:
        case ErrorKind::ProbeDiverged:
            return kExitDivergence;
        default:
            return kExitConfig;
    }
}

std::string to_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

ExperimentConfig default_config() {
    ExperimentConfig c;
    c.train.iterations = kBenchmarkIterations;
    c.train.lambda_per_tap = {1.0};
    return c;
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::to_key_values() const {
    const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    std::vector<std::pair<std::string, std::string>> kv = {
        {"seed", std::to_string(train.seed)},
        {"iterations", std::to_string(train.iterations)},
        {"batch_source", std::to_string(train.batch_source)},
        {"batch_target", std::to_string(train.batch_target)},
        {"lr", format_double(train.lr)},
        {"momentum", format_double(train.momentum)},
        {"weight_decay", format_double(train.weight_decay)},
        {"lambda", reals_text(train.lambda_per_tap)},
        {"auto_lambda", b(train.auto_lambda)},
        {"probe_fraction", format_double(train.probe_fraction)},
        {"eval_every", std::to_string(train.eval_every)},
        {"lr_step_every", std::to_string(train.lr_step_every)},
        {"lr_step_gamma", format_double(train.lr_step_gamma)},
        {"source_only", b(train.source_only)},
        {"dims", counts_text(dims)},
        {"taps", counts_text(taps)},
        {"head_init_std", format_double(head_init_std)},
        {"source", source_path ? source_path->string() : std::string()},
        {"target", target_path ? target_path->string() : std::string()},
        {"target_labels", b(target_labels)},
        {"num_classes", std::to_string(num_classes)},
        {"dim", std::to_string(shift.dim)},
        {"samples_per_class", std::to_string(shift.samples_per_class)},
        {"class_means", join(shift.class_means, ';', [](const std::vector<double>& r) { return reals_text(r); })},
        {"class_stddev", reals_text(shift.class_stddev)},
        {"rotation_deg", format_double(shift.rotation_deg)},
        {"rotation_plane", std::to_string(shift.plane_a) + "," + std::to_string(shift.plane_b)},
        {"scale", reals_text(shift.scale)},
        {"offset", reals_text(shift.offset)},
        {"out", out_dir.string()},
        {"plot", b(plot)},
    };
    return kv;
}

std::uint64_t ExperimentConfig::hash() const {
    std::string canon;
    for (const auto& [k, v] : to_key_values()) {
        if (k == "out" || k == "plot") continue;
        canon += k + "=" + v + "\n";
    }
    return fnv1a(canon);
}

void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view raw) {
    key = trim(key);
    const std::string_view value = trim(raw);
    if (manifest_only_key(key)) return;
    if (key == "seed") {
        c.train.seed = to_count(key, value);
        c.shift.seed = c.train.seed;
    } else if (key == "iterations") {
        c.train.iterations = to_count(key, value);
    } else if (key == "batch") {
        c.train.batch_source = c.train.batch_target = to_count(key, value);
    } else if (key == "batch_source") {
        c.train.batch_source = to_count(key, value);
    } else if (key == "batch_target") {
        c.train.batch_target = to_count(key, value);
    } else if (key == "lr") {
        c.train.lr = to_real(key, value);
    } else if (key == "momentum") {
        c.train.momentum = to_real(key, value);
    } else if (key == "weight_decay") {
        c.train.weight_decay = to_real(key, value);
    } else if (key == "lambda") {
        c.train.lambda_per_tap = to_reals(key, value);
        if (c.train.lambda_per_tap.empty()) config_error(key, "needs at least one value");
    } else if (key == "auto_lambda") {
        c.train.auto_lambda = to_bool(key, value);
    } else if (key == "probe_fraction") {
        c.train.probe_fraction = to_real(key, value);
    } else if (key == "eval_every") {
        c.train.eval_every = to_count(key, value);
    } else if (key == "lr_step_every") {
        c.train.lr_step_every = to_count(key, value);
    } else if (key == "lr_step_gamma") {
        c.train.lr_step_gamma = to_real(key, value);
    } else if (key == "source_only") {
        c.train.source_only = to_bool(key, value);
    } else if (key == "dims") {
        c.dims = to_counts(key, value);
    } else if (key == "taps") {
        c.taps = to_counts(key, value);
    } else if (key == "head_init_std") {
        c.head_init_std = to_real(key, value);
    } else if (key == "source") {
        if (value.empty()) c.source_path.reset(); else c.source_path = std::filesystem::path(value);
    } else if (key == "target") {
        if (value.empty()) c.target_path.reset(); else c.target_path = std::filesystem::path(value);
    } else if (key == "target_labels") {
        c.target_labels = to_bool(key, value);
    } else if (key == "num_classes") {
        c.num_classes = to_count(key, value);
        c.shift.num_classes = c.num_classes;
    } else if (key == "dim") {
        c.shift.dim = to_count(key, value);
    } else if (key == "samples_per_class") {
        c.shift.samples_per_class = to_count(key, value);
    } else if (key == "class_means") {
        c.shift.class_means.clear();
        for (auto row : split(value, ';')) c.shift.class_means.push_back(to_reals(key, row));
    } else if (key == "class_stddev") {
        c.shift.class_stddev = to_reals(key, value);
    } else if (key == "rotation_deg") {
        c.shift.rotation_deg = to_real(key, value);
    } else if (key == "rotation_plane") {
        const auto plane = to_counts(key, value);
        if (plane.size() != 2) config_error(key, "expected two dimension indices");
        c.shift.plane_a = plane[0];
        c.shift.plane_b = plane[1];
    } else if (key == "scale") {
        c.shift.scale = to_reals(key, value);
    } else if (key == "offset") {
        c.shift.offset = to_reals(key, value);
    } else if (key == "out") {
        c.out_dir = std::filesystem::path(value);
    } else if (key == "plot") {
        c.plot = to_bool(key, value);
    } else {
        config_error(key, "unknown key");
    }
}

void apply_config_text(ExperimentConfig& config, std::istream& is, const std::string& origin) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string_view s = trim(line);
        if (s.empty() || s.front() == '#') continue;
        const auto eq = s.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorKind::ConfigError, origin + ":" + std::to_string(line_no) + ": expected key=value");
        }
        try {
            apply_setting(config, s.substr(0, eq), s.substr(eq + 1));
        } catch (const Error& e) {
            throw Error(e.kind(), origin + ":" + std::to_string(line_no) + ": " + e.message());
        }
    }
}

void apply_config_file(ExperimentConfig& config, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot read config file " + path.string());
    apply_config_text(config, in, path.string());
}

std::string manifest_text(const ExperimentConfig& config, const std::string& command,
                          const std::vector<std::pair<std::string, std::string>>& extra) {
    std::ostringstream os;
    os << "# dcoral manifest; rerun with: dcoral " << command << " --config <this file>\n";
    os << "format=1\n";
    os << "command=" << command << "\n";
    os << "config_hash=" << to_hex(config.hash()) << "\n";
    for (const auto& [k, v] : config.to_key_values()) os << k << "=" << v << "\n";
    for (const auto& [k, v] : extra) os << k << "=" << v << "\n";
    return os.str();
}

DomainPair load_or_generate(const ExperimentConfig& config) {
    if (config.source_path.has_value() != config.target_path.has_value()) {
        throw Error(ErrorKind::ConfigError, "source and target must be given together");
    }
    if (!config.source_path) return generate_shifted_pair(config.shift);
    DomainPair pair;
    pair.source = load_csv(*config.source_path, true, config.num_classes, DomainTag::Source);
    pair.target = load_csv(*config.target_path, config.target_labels, config.num_classes, DomainTag::Target);
    return pair;
}

std::vector<std::size_t> resolve_dims(const ExperimentConfig& config, std::size_t input_dim) {
    if (config.dims.empty()) return {input_dim, kDefaultHidden, config.num_classes};
    if (config.dims.front() != input_dim) {
        throw Error(ErrorKind::DimensionMismatch, "dims start with " + std::to_string(config.dims.front()) +
                                                      " but the data has " + std::to_string(input_dim) + " features");
    }
    if (config.dims.back() != config.num_classes) {
        throw Error(ErrorKind::DimensionMismatch, "dims end with " + std::to_string(config.dims.back()) +
                                                      " but num_classes is " + std::to_string(config.num_classes));
    }
    return config.dims;
}

DomainPair cmd_generate(const ExperimentConfig& config) {
    DomainPair pair = generate_shifted_pair(config.shift);
    ensure_dir(config.out_dir);
    const auto src_hash = write_file(config.out_dir / "source.csv", dataset_text(config, pair.source));
    const auto tgt_hash = write_file(config.out_dir / "target.csv", dataset_text(config, pair.target));
    write_file(config.out_dir / "manifest.txt",
               manifest_text(config, "generate",
                             {{"artifact.source.csv", src_hash}, {"artifact.target.csv", tgt_hash}}));
    return pair;
}

TrainOutcome cmd_train(const ExperimentConfig& config) {
    config.train.validate();
    const DomainPair data = load_or_generate(config);
    const auto dims = resolve_dims(config, data.source.dim());
    std::optional<std::vector<std::size_t>> taps;
    if (!config.taps.empty()) taps = config.taps;
    Network net = init_network(dims, config.head_init_std, mix_seed(config.train.seed, 0), taps);

    ensure_dir(config.out_dir);
    TrainOutcome outcome{run_experiment(config.train, std::move(net), data.source, data.target), {}, {}, {}};
    const ExperimentResult& result = outcome.result;

    std::ostringstream metrics;
    metrics << provenance_line(config);
    write_metrics_csv(metrics, result.log, result.network.coral_taps().size());
    std::ostringstream ckpt;
    save_checkpoint(ckpt, result.network, CheckpointMeta{config.hash(), config.train.seed});

    outcome.metrics_path = config.out_dir / "metrics.csv";
    outcome.checkpoint_path = config.out_dir / "checkpoint.bin";
    outcome.manifest_path = config.out_dir / "manifest.txt";
    const auto metrics_hash = write_file(outcome.metrics_path, metrics.str());
    const auto ckpt_hash = write_file(outcome.checkpoint_path, ckpt.str());
    write_file(outcome.manifest_path,
               manifest_text(config, "train",
                             {{"lambda_used", reals_text(result.lambdas)},
                              {"artifact.metrics.csv", metrics_hash},
                              {"artifact.checkpoint.bin", ckpt_hash}}));
    if (config.plot) plot_run(config, result);
    return outcome;
}

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& source,
                    const std::optional<std::filesystem::path>& target) {
    std::ifstream in(checkpoint, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open checkpoint " + checkpoint.string());
    const Checkpoint ck = load_checkpoint(in);
    const Network& net = ck.network;

    EvalReport report;
    const Dataset src = load_for_checkpoint(source, net, DomainTag::Source);
    if (src.labels) report.source_accuracy = evaluate(net, src.features, *src.labels);
    if (target) {
        const Dataset tgt = load_for_checkpoint(*target, net, DomainTag::Target);
        if (tgt.labels) report.target_accuracy = evaluate(net, tgt.features, *tgt.labels);
        const std::size_t layer = distance_layer(net);
        report.coral_distance = coral_distance(forward(net, src.features).activations[layer + 1],
                                               forward(net, tgt.features).activations[layer + 1]);
    }
    return report;
}

void print_eval(std::ostream& os, const EvalReport& report) {
    char buf[64];
    if (report.source_accuracy) {
        std::snprintf(buf, sizeof(buf), "%.4f", *report.source_accuracy);
        os << "source_accuracy=" << buf << "\n";
    }
    if (report.target_accuracy) {
        std::snprintf(buf, sizeof(buf), "%.4f", *report.target_accuracy);
        os << "target_accuracy=" << buf << "\n";
    }
    if (report.coral_distance) os << "coral_distance=" << format_double(*report.coral_distance) << "\n";
}

std::string render_svg(const std::string& title, const std::string& x_label, const std::vector<Series>& series) {
    constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
    static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& s : series) {
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return kTop + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream os;
    char buf[128];
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
       << "\" stroke=\"black\"/>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", ymax);
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.4g", ymin);
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + ph << "\" text-anchor=\"end\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.6g", xmin);
    os << "<text x=\"" << kLeft << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof(buf), "%.6g", xmax);
    os << "<text x=\"" << kLeft + pw << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
    os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << x_label
       << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % (sizeof(kColors) / sizeof(kColors[0]))];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", first ? "" : " ", px(s.x[i]), py(s.y[i]));
            os << buf;
            first = false;
        }
        os << "\"/>\n";
        os << "<text x=\"" << kLeft + pw - 4 << "\" y=\"" << kTop + 14 + 15 * static_cast<double>(si)
           << "\" text-anchor=\"end\" fill=\"" << color << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> settings;
    std::optional<std::uint64_t> seed;
    std::string lambda;
    bool auto_lambda = false;
    std::optional<std::uint64_t> iterations;
    std::optional<std::uint64_t> batch;
    std::string lr;
    std::string taps;
    bool plot = false;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "key=value config file (a manifest works too)");
    cmd->add_option("--set", f.settings, "override one config key, KEY=VALUE (repeatable)");
    cmd->add_option("--seed", f.seed, "seed for data, initialization and batching");
    cmd->add_option("--out", f.out, "output directory");
}

void add_train_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--lambda", f.lambda, "CORAL weight per tap, F[,F...]");
    cmd->add_flag("--auto-lambda", f.auto_lambda, "calibrate lambda with a probe run");
    cmd->add_option("--iterations", f.iterations, "SGD iterations");
    cmd->add_option("--batch", f.batch, "batch size for both streams");
    cmd->add_option("--lr", f.lr, "base learning rate");
    cmd->add_option("--taps", f.taps, "CORAL tap layer indices, I[,I...]");
    cmd->add_flag("--plot", f.plot, "also write SVG curves");
}

ExperimentConfig build_config(const CommonFlags& f) {
    ExperimentConfig c = default_config();
    if (!f.config_path.empty()) apply_config_file(c, f.config_path);
    for (const auto& s : f.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "--set expects KEY=VALUE, got '" + s + "'");
        apply_setting(c, std::string_view(s).substr(0, eq), std::string_view(s).substr(eq + 1));
    }
    if (f.seed) apply_setting(c, "seed", std::to_string(*f.seed));
    if (!f.lambda.empty()) apply_setting(c, "lambda", f.lambda);
    if (f.auto_lambda) c.train.auto_lambda = true;
    if (f.iterations) apply_setting(c, "iterations", std::to_string(*f.iterations));
    if (f.batch) apply_setting(c, "batch", std::to_string(*f.batch));
    if (!f.lr.empty()) apply_setting(c, "lr", f.lr);
    if (!f.taps.empty()) apply_setting(c, "taps", f.taps);
    if (f.plot) c.plot = true;
    if (!f.out.empty()) c.out_dir = f.out;
    return c;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Deep CORAL domain adaptation: generate data, train, evaluate, check gradients"};
    app.require_subcommand(1);

    CommonFlags gen_flags;
    auto* gen = app.add_subcommand("generate", "write the synthetic source/target pair as CSV");
    add_common(gen, gen_flags);

    CommonFlags train_flags;
    auto* train = app.add_subcommand("train", "run a joint classification + CORAL experiment");
    add_common(train, train_flags);
    add_train_flags(train, train_flags);

    std::string ckpt_path, eval_source, eval_target;
    auto* eval = app.add_subcommand("eval", "accuracy and CORAL distance of a checkpoint");
    eval->add_option("--checkpoint", ckpt_path, "checkpoint.bin from train")->required();
    eval->add_option("--source", eval_source, "dataset CSV (labels optional)")->required();
    eval->add_option("--target", eval_target, "second dataset CSV; enables coral_distance");

    GradCheckOptions gc;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
    grad->add_option("--seed", gc.seed, "seed for the random instances");
    grad->add_option("--max-n", gc.max_rows, "largest batch size (<= 16)")->check(CLI::Range(2, 16));
    grad->add_option("--max-d", gc.max_features, "largest feature dimension (<= 8)")->check(CLI::Range(1, 8));
    grad->add_flag("--corrupt-gradient", gc.corrupt_gradient, "test hook: perturb the analytic gradients")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (*gen) {
            const ExperimentConfig c = build_config(gen_flags);
            const DomainPair pair = cmd_generate(c);
            out << "wrote " << (c.out_dir / "source.csv").string() << " (" << pair.source.size() << " rows), "
                << (c.out_dir / "target.csv").string() << " (" << pair.target.size() << " rows)\n";
        } else if (*train) {
            const ExperimentConfig c = build_config(train_flags);
            const TrainOutcome o = cmd_train(c);
            const MetricsRecord& last = o.result.log.back();
            out << "lambda_used=" << reals_text(o.result.lambdas) << "\n";
            char buf[160];
            std::snprintf(buf, sizeof(buf),
                          "final iteration=%zu class_loss=%.6g source_acc=%.4f target_acc=%.4f coral_distance=%.6g\n",
                          last.iteration, last.class_loss, last.source_acc, last.target_acc, last.coral_distance);
            out << buf;
            out << "wrote " << o.metrics_path.string() << ", " << o.checkpoint_path.string() << ", "
                << o.manifest_path.string() << "\n";
        } else if (*eval) {
            std::optional<std::filesystem::path> target;
            if (!eval_target.empty()) target = eval_target;
            print_eval(out, cmd_eval(ckpt_path, eval_source, target));
        } else if (*grad) {
            const GradCheckReport report = run_gradcheck(gc);
            print_report(out, report);
            return report.passed() ? kExitOk : kExitGradcheck;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}

}  // namespace dcoral::cli
