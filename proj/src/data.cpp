#include "dcoral/data.hpp"

#include "dcoral/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

namespace dcoral {

namespace {

void require_spec(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::BadSpec, what);
}

}  // namespace

void ShiftSpec::validate() const {
    require_spec(num_classes >= 1, "num_classes must be >= 1");
    require_spec(dim >= 2, "dim must be >= 2 for the rotation plane");
    require_spec(samples_per_class >= 2, "samples_per_class must be >= 2");
    require_spec(class_means.size() == num_classes, "class_means needs one row per class");
    for (const auto& m : class_means) {
        require_spec(m.size() == dim, "class mean has wrong dimension");
        for (double v : m) require_spec(std::isfinite(v), "class mean must be finite");
    }
    require_spec(class_stddev.size() == num_classes, "class_stddev needs one entry per class");
    for (double s : class_stddev) require_spec(s > 0.0 && std::isfinite(s), "class_stddev must be > 0");
    require_spec(plane_a < dim && plane_b < dim && plane_a != plane_b, "invalid rotation plane");
    require_spec(std::isfinite(rotation_deg), "rotation must be finite");
    require_spec(scale.size() == dim, "scale needs one entry per dim");
    for (double s : scale) require_spec(s > 0.0 && std::isfinite(s), "scale factors must be > 0");
    require_spec(offset.size() == dim, "offset needs one entry per dim");
    for (double o : offset) require_spec(std::isfinite(o), "offset must be finite");
}

ShiftSpec standard_shift_spec(std::uint64_t seed) {
    ShiftSpec spec;
    spec.num_classes = 3;
    spec.dim = 10;
    spec.class_stddev.assign(3, 1.0);
    // Each class has one strong coordinate among the shifted dims (0, 1, 2)
    // and a weaker signature on two of the untouched dims (4..9). Dim 3 only
    // carries the target offset.
    spec.class_means.assign(3, std::vector<double>(10, 0.0));
    for (std::size_t k = 0; k < 3; ++k) {
        spec.class_means[k][k] = 4.0;
        spec.class_means[k][4 + 2 * k] = 1.5;
        spec.class_means[k][5 + 2 * k] = 1.5;
    }
    spec.rotation_deg = 30.0;
    spec.plane_a = 0;
    spec.plane_b = 1;
    spec.scale.assign(10, 1.0);
    spec.scale[2] = 2.0;
    spec.offset.assign(10, 0.0);
    spec.offset[3] = 1.0;
    spec.samples_per_class = 300;
    spec.seed = seed;
    return spec;
}

DomainPair generate_shifted_pair(const ShiftSpec& spec) {
    spec.validate();
    const std::size_t n = spec.num_classes * spec.samples_per_class;
    const double theta = spec.rotation_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);

    // Source first, then target, from one stream: the pair is a single draw.
    Rng rng(spec.seed);
    auto draw = [&](bool shifted) {
        Matrix x(n, spec.dim);
        std::vector<std::size_t> labels(n);
        std::size_t r = 0;
        for (std::size_t k = 0; k < spec.num_classes; ++k) {
            for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
                auto row = x.row(r);
                for (std::size_t j = 0; j < spec.dim; ++j) {
                    row[j] = spec.class_means[k][j] + spec.class_stddev[k] * rng.normal();
                }
                if (shifted) {
                    const double a = row[spec.plane_a];
                    const double b = row[spec.plane_b];
                    row[spec.plane_a] = cs * a - sn * b;
                    row[spec.plane_b] = sn * a + cs * b;
                    for (std::size_t j = 0; j < spec.dim; ++j) row[j] = spec.scale[j] * row[j] + spec.offset[j];
                }
                labels[r] = k;
            }
        }
        Dataset ds;
        ds.features = std::move(x);
        ds.labels = LabelBatch(std::move(labels), spec.num_classes);
        ds.domain = shifted ? DomainTag::Target : DomainTag::Source;
        ds.num_classes = spec.num_classes;
        return ds;
    };
    DomainPair pair;
    pair.source = draw(false);
    pair.target = draw(true);
    return pair;
}

Dataset read_dataset_csv(std::istream& is, bool has_labels, std::size_t num_classes, DomainTag domain) {
    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        const std::size_t nfeat = fields.size() - (has_labels ? 1 : 0);
        if (nfeat == 0) fail("no feature columns");
        if (rows == 0) {
            cols = nfeat;
        } else if (nfeat != cols) {
            fail("expected " + std::to_string(cols + (has_labels ? 1 : 0)) + " columns, found " +
                 std::to_string(fields.size()));
        }
        for (std::size_t j = 0; j < nfeat; ++j) {
            double v = 0.0;
            if (!parse_double(fields[j], v)) fail("bad number in column " + std::to_string(j + 1));
            if (!std::isfinite(v)) fail("non-finite value in column " + std::to_string(j + 1));
            values.push_back(v);
        }
        if (has_labels) {
            std::string_view f = fields.back();
            while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
            while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
            long long label = 0;
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
            if (ec != std::errc{} || ptr != f.data() + f.size()) fail("label is not an integer");
            if (label < 0 || static_cast<unsigned long long>(label) >= num_classes) {
                throw Error(ErrorKind::LabelOutOfRange, "line " + std::to_string(line_no) + ": label " +
                                                            std::to_string(label) + " outside [0, " +
                                                            std::to_string(num_classes) + ")");
            }
            labels.push_back(static_cast<std::size_t>(label));
        }
        ++rows;
    }
    if (rows == 0) throw Error(ErrorKind::ParseError, "dataset has no rows");
    Dataset ds;
    ds.features = Matrix(rows, cols, std::move(values));
    if (has_labels) ds.labels = LabelBatch(std::move(labels), num_classes);
    ds.domain = domain;
    ds.num_classes = num_classes;
    return ds;
}

Dataset load_csv(const std::filesystem::path& path, bool has_labels, std::size_t num_classes, DomainTag domain) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    try {
        return read_dataset_csv(in, has_labels, num_classes, domain);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.message());
    }
}

void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const auto row = ds.features.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) os << ',';
            os << format_double(row[c]);
        }
        if (ds.labels) os << ',' << (*ds.labels)[r];
        os << '\n';
    }
}

void save_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    write_dataset_csv(out, ds);
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

BatchIterator::BatchIterator(std::size_t num_rows, std::size_t batch_size, std::uint64_t seed)
    : n_(num_rows), batch_(batch_size), rng_(seed) {
    if (batch_size < 2) {
        throw Error(ErrorKind::BatchTooSmall, "batch size must be >= 2, got " + std::to_string(batch_size));
    }
    if (batch_size > num_rows) {
        throw Error(ErrorKind::BatchTooLarge, "batch size " + std::to_string(batch_size) +
                                                  " exceeds dataset size " + std::to_string(num_rows));
    }
    order_.resize(n_);
    reshuffle();
}

void BatchIterator::reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
    ++epoch_;
}

std::vector<std::size_t> BatchIterator::next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
        if (cursor_ == n_) reshuffle();
        out.push_back(order_[cursor_++]);
    }
    return out;
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t num_rows, std::size_t batch_size,
                                                     std::uint64_t seed, std::size_t epochs) {
    BatchIterator it(num_rows, batch_size, seed);
    const std::size_t count = (num_rows * epochs + batch_size - 1) / batch_size;
    std::vector<std::vector<std::size_t>> batches;
    batches.reserve(count);
    for (std::size_t i = 0; i < count; ++i) batches.push_back(it.next());
    return batches;
}

}  // namespace dcoral
