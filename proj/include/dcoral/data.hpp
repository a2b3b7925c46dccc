#pragma once

#include "dcoral/matrix.hpp"
#include "dcoral/net.hpp"
#include "dcoral/random.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace dcoral {

enum class DomainTag { Source, Target };

struct Dataset {
    Matrix features;
    // Target labels, when present, are for scoring only.
    std::optional<LabelBatch> labels;
    DomainTag domain = DomainTag::Source;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Class-conditional Gaussians for the source domain; the target domain draws
// from the same classes and pushes each sample through
//   x -> scale .* rotate(x) + offset
// where rotate() turns the (plane_a, plane_b) coordinate pair by the angle.
struct ShiftSpec {
    std::size_t num_classes = 3;
    std::size_t dim = 10;
    std::vector<std::vector<double>> class_means;  // num_classes x dim
    std::vector<double> class_stddev;              // isotropic per-class factor
    double rotation_deg = 30.0;
    std::size_t plane_a = 0;
    std::size_t plane_b = 1;
    std::vector<double> scale;   // per dim, > 0
    std::vector<double> offset;  // per dim
    std::size_t samples_per_class = 300;
    std::uint64_t seed = 0;

    void validate() const;
};

// The fixed desk-scale benchmark: 3 classes, d = 10, unit-variance blobs,
// 30 degree rotation in dims (0, 1), scale 2 in dim 2, offset 1 in dim 3,
// 300 samples per class per domain.
ShiftSpec standard_shift_spec(std::uint64_t seed);

struct DomainPair {
    Dataset source;
    Dataset target;
};

DomainPair generate_shifted_pair(const ShiftSpec& spec);

// Numeric columns plus an optional trailing integer label column; no header.
// Lines starting with '#' are comments.
Dataset read_dataset_csv(std::istream& is, bool has_labels, std::size_t num_classes,
                         DomainTag domain = DomainTag::Source);
Dataset load_csv(const std::filesystem::path& path, bool has_labels, std::size_t num_classes,
                 DomainTag domain = DomainTag::Source);
void write_dataset_csv(std::ostream& os, const Dataset& ds);
void save_csv(const std::filesystem::path& path, const Dataset& ds);

// Endless stream of fixed-size index batches over n rows. Each epoch is a
// fresh seeded permutation; a short tail is completed from the head of the
// next permutation, so every batch has exactly batch_size rows.
class BatchIterator {
public:
    BatchIterator(std::size_t num_rows, std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next();

    // Number of permutations drawn so far.
    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch_size() const noexcept { return batch_; }

private:
    void reshuffle();

    std::size_t n_;
    std::size_t batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

// Convenience for tests and diagnostics: the first `epochs` epochs' worth of
// batches, ceil(n * epochs / batch) of them.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t num_rows, std::size_t batch_size,
                                                     std::uint64_t seed, std::size_t epochs);

}  // namespace dcoral
