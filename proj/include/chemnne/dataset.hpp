#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "chemnne/kinetics.hpp"

namespace chemnne {

/// Normalization metadata stored with every dataset and checkpoint.
/// Concentrations: v_norm = log10(max(v_raw, floor)) / divisor.
/// Environment channels: affine map onto [-1, 1] via stored min/max.
struct NormMeta {
    double divisor = 1.0;
    double floor_conc = 1e-3;
    std::array<double, 3> env_min{0.0, 0.0, 0.0};
    std::array<double, 3> env_max{0.0, 0.0, 0.0};

    double normalize_conc(double raw) const;
    double denormalize_conc(double norm) const;
    double normalize_env(double raw, std::size_t channel) const;
    double denormalize_env(double norm, std::size_t channel) const;
};

enum class Split { Train = 0, Val = 1, Test = 2 };

std::string split_name(Split s);

struct ChemDataset {
    int task = 1;
    Split split = Split::Train;
    std::size_t n_env = 3, n_in = 0, n_out = 0, n_steps = 0;
    // normalized values, f32-quantized (the storage precision of the format)
    std::vector<double> env;   // [n, n_env]
    std::vector<double> x0;    // [n, n_in]
    std::vector<double> traj;  // [n, n_steps, n_out]
    NormMeta norm;
    std::vector<std::string> in_species, out_species;
    double t_end_seconds = 3300.0;

    std::size_t size() const { return n_in == 0 ? 0 : x0.size() / n_in; }
    void validate() const;
};

/// A set of species varied in tandem between two multipliers of their
/// baseline initial concentrations.
struct GroupSpec {
    std::vector<std::string> members;
    double low = 1.0;
    double high = 1.0;
};

struct SamplingPlan {
    std::vector<std::string> input_species;
    std::vector<GroupSpec> groups;
    std::vector<double> temperature_levels{288.15};
    std::vector<double> humidity_levels{0.5};
    std::vector<double> radiation_levels{500.0};
    std::map<std::string, double> baseline;  // raw initial concentrations
    double t_end_seconds = 3300.0;
    std::size_t n_steps = 11;
    /// Task 2/3 selection: species whose peak concentration reaches this
    /// percentile of the per-species peak distribution count as significant.
    double threshold_percentile = 90.0;

    std::size_t grid_size() const;
    void validate(const Mechanism& mech) const;
};

struct DatasetBundle {
    ChemDataset train, val, test;
    std::vector<long> failed_samples;
    std::size_t grid_samples = 0;
};

/// Simulates the full sampling grid and assembles normalized, disjoint
/// train/val/test splits (60/20/20 by the hash order of sample indices).
/// Integration failures are skipped and reported in the bundle.
DatasetBundle build_dataset(const Mechanism& mech, const SamplingPlan& plan, int task);

/// Cyclic shift of the time axis: out[t] = traj[(t + tau) mod T].
/// traj is row-major [t_len, width]; tau must lie in [0, t_len).
std::vector<double> augment_roll(std::span<const double> traj, std::size_t t_len,
                                 std::size_t width, std::size_t tau);

/// CNNE1 binary container, bit-exact round trip.
void write_dataset(const ChemDataset& ds, const std::string& path);
ChemDataset read_dataset(const std::string& path);

/// Fixed 64-bit mix of the sample index used for split assignment.
std::uint64_t split_hash(std::uint64_t sample_index);

}  // namespace chemnne
