#include "chemnne/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "chemnne/errors.hpp"
#include "chemnne/parallel.hpp"
#include "chemnne/rng.hpp"

namespace chemnne {

namespace {

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    buf.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_f32(std::vector<std::uint8_t>& buf, double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits = 0;
    std::memcpy(&bits, &f, sizeof(bits));
    put_u32(buf, bits);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw FormatError(pos, std::string("truncated file while reading ") + what +
                                       " (need " + std::to_string(n) + " bytes, have " +
                                       std::to_string(buf.size() - pos) + ")");
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = std::uint32_t(buf[pos]) | (std::uint32_t(buf[pos + 1]) << 8) |
                          (std::uint32_t(buf[pos + 2]) << 16) |
                          (std::uint32_t(buf[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    double f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float f = 0.0f;
        std::memcpy(&f, &bits, sizeof(f));
        return static_cast<double>(f);
    }
};

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

double NormMeta::normalize_conc(double raw) const {
    return std::log10(std::max(raw, floor_conc)) / divisor;
}

double NormMeta::denormalize_conc(double norm) const {
    return std::pow(10.0, norm * divisor);
}

double NormMeta::normalize_env(double raw, std::size_t channel) const {
    const double lo = env_min[channel], hi = env_max[channel];
    if (hi <= lo) return 0.0;
    return 2.0 * (raw - lo) / (hi - lo) - 1.0;
}

double NormMeta::denormalize_env(double norm, std::size_t channel) const {
    const double lo = env_min[channel], hi = env_max[channel];
    if (hi <= lo) return lo;
    return lo + (norm + 1.0) * 0.5 * (hi - lo);
}

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

void ChemDataset::validate() const {
    if (n_in == 0 || n_out == 0 || n_steps == 0) {
        throw ContractError("dataset: empty dimensions");
    }
    const std::size_t n = size();
    if (env.size() != n * n_env || traj.size() != n * n_steps * n_out) {
        throw ContractError("dataset: inconsistent buffer sizes");
    }
    if (in_species.size() != n_in || out_species.size() != n_out) {
        throw ContractError("dataset: species name lists do not match dimensions");
    }
}

std::size_t SamplingPlan::grid_size() const {
    return (std::size_t(1) << groups.size()) * temperature_levels.size() *
           humidity_levels.size() * radiation_levels.size();
}

void SamplingPlan::validate(const Mechanism& mech) const {
    if (input_species.empty()) throw ConfigError("sampling plan: no input species");
    for (const auto& name : input_species) {
        if (mech.species_index(name) < 0) {
            throw ConfigError("sampling plan: input species '" + name +
                              "' is not in the mechanism");
        }
    }
    for (const auto& g : groups) {
        if (g.members.empty()) throw ConfigError("sampling plan: empty group");
        for (const auto& name : g.members) {
            if (std::find(input_species.begin(), input_species.end(), name) ==
                input_species.end()) {
                throw ConfigError("sampling plan: group member '" + name +
                                  "' is not an input species");
            }
            const auto it = baseline.find(name);
            if (it == baseline.end() || !(it->second > 0.0)) {
                throw ConfigError("sampling plan: group member '" + name +
                                  "' needs a positive baseline concentration");
            }
        }
        if (!(g.low > 0.0) || !(g.high > 0.0)) {
            throw ConfigError("sampling plan: group levels must be positive");
        }
    }
    if (temperature_levels.empty() || humidity_levels.empty() || radiation_levels.empty()) {
        throw ConfigError("sampling plan: every environment channel needs >= 1 level");
    }
    if (!(t_end_seconds > 0.0) || n_steps < 1) {
        throw ConfigError("sampling plan: bad time grid");
    }
    if (threshold_percentile < 0.0 || threshold_percentile > 100.0) {
        throw ConfigError("sampling plan: threshold percentile out of [0, 100]");
    }
}

std::uint64_t split_hash(std::uint64_t sample_index) {
    return Rng::splitmix64(sample_index);
}

DatasetBundle build_dataset(const Mechanism& mech, const SamplingPlan& plan, int task) {
    if (task < 1 || task > 3) throw ConfigError("task must be 1, 2 or 3");
    plan.validate(mech);

    const std::size_t n_species = mech.n_species();
    const std::size_t n_grid = plan.grid_size();
    const std::size_t t_len = plan.n_steps;
    const std::size_t n_groups = plan.groups.size();
    const std::size_t nt = plan.temperature_levels.size();
    const std::size_t nh = plan.humidity_levels.size();

    std::vector<double> base(n_species, 0.0);
    for (const auto& [name, value] : plan.baseline) {
        const int idx = mech.species_index(name);
        if (idx < 0) {
            throw ConfigError("sampling plan: baseline species '" + name +
                              "' is not in the mechanism");
        }
        if (value < 0.0) throw ConfigError("sampling plan: negative baseline for " + name);
        base[static_cast<std::size_t>(idx)] = value;
    }

    std::vector<double> raw_x0(n_grid * n_species);
    std::vector<double> raw_traj(n_grid * t_len * n_species);
    std::vector<double> env_raw(n_grid * 3);
    std::vector<char> ok(n_grid, 0);

    parallel_for(0, n_grid, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            std::size_t rest = i >> n_groups;
            const std::size_t bits = i & ((std::size_t(1) << n_groups) - 1);
            const std::size_t ti = rest % nt;
            rest /= nt;
            const std::size_t hi_idx = rest % nh;
            const std::size_t ri = rest / nh;

            std::vector<double> c0 = base;
            for (std::size_t g = 0; g < n_groups; ++g) {
                const double level =
                    ((bits >> g) & 1) ? plan.groups[g].high : plan.groups[g].low;
                for (const auto& name : plan.groups[g].members) {
                    const auto idx = static_cast<std::size_t>(mech.species_index(name));
                    c0[idx] = plan.baseline.at(name) * level;
                }
            }
            Environment env;
            env.temperature = plan.temperature_levels[ti];
            env.humidity = plan.humidity_levels[hi_idx];
            env.radiation = plan.radiation_levels[ri];

            env_raw[i * 3 + 0] = env.temperature;
            env_raw[i * 3 + 1] = env.humidity;
            env_raw[i * 3 + 2] = env.radiation;
            std::copy(c0.begin(), c0.end(), raw_x0.begin() + static_cast<long>(i * n_species));

            IntegrateOptions opts;
            opts.sample_id = static_cast<long>(i);
            try {
                const auto traj =
                    integrate(mech, env, c0, plan.t_end_seconds, t_len, opts);
                std::copy(traj.begin(), traj.end(),
                          raw_traj.begin() + static_cast<long>(i * t_len * n_species));
                ok[i] = 1;
            } catch (const IntegrationError&) {
                ok[i] = 0;
            }
        }
    });

    DatasetBundle bundle;
    bundle.grid_samples = n_grid;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < n_grid; ++i) {
        if (ok[i]) {
            kept.push_back(i);
        } else {
            bundle.failed_samples.push_back(static_cast<long>(i));
        }
    }
    if (kept.empty()) throw IntegrationError(-1, "every grid sample failed to integrate");

    // species selection per task
    std::vector<std::size_t> in_idx;
    for (const auto& name : plan.input_species) {
        in_idx.push_back(static_cast<std::size_t>(mech.species_index(name)));
    }
    std::vector<std::size_t> out_idx;
    if (task == 1) {
        out_idx = in_idx;
    } else {
        std::vector<double> peak(n_species, 0.0);
        for (const std::size_t i : kept) {
            for (std::size_t s = 0; s < n_species; ++s) {
                peak[s] = std::max(peak[s], raw_x0[i * n_species + s]);
                for (std::size_t k = 0; k < t_len; ++k) {
                    peak[s] = std::max(peak[s], raw_traj[(i * t_len + k) * n_species + s]);
                }
            }
        }
        std::vector<double> sorted = peak;
        std::sort(sorted.begin(), sorted.end());
        const double q = plan.threshold_percentile / 100.0;
        const auto pos = static_cast<std::size_t>(
            std::min<double>(q * static_cast<double>(n_species - 1),
                             static_cast<double>(n_species - 1)));
        const double threshold = sorted[pos];
        for (std::size_t s = 0; s < n_species; ++s) {
            if (peak[s] < threshold) continue;
            const bool is_input =
                std::find(in_idx.begin(), in_idx.end(), s) != in_idx.end();
            if (task == 2 || !is_input) out_idx.push_back(s);
        }
        if (out_idx.empty()) {
            throw ConfigError("task " + std::to_string(task) +
                              ": threshold selection produced no output species");
        }
    }

    // normalization metadata over the retained corpus
    NormMeta norm;
    double max_log = 1.0;
    auto track = [&](double raw) {
        max_log = std::max(max_log, std::abs(std::log10(std::max(raw, norm.floor_conc))));
    };
    for (const std::size_t i : kept) {
        for (const std::size_t s : in_idx) track(raw_x0[i * n_species + s]);
        for (std::size_t k = 0; k < t_len; ++k) {
            for (const std::size_t s : out_idx) {
                track(raw_traj[(i * t_len + k) * n_species + s]);
            }
        }
    }
    norm.divisor = max_log;
    const auto minmax = [](const std::vector<double>& v) {
        const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
        return std::pair<double, double>(*lo, *hi);
    };
    std::tie(norm.env_min[0], norm.env_max[0]) = minmax(plan.temperature_levels);
    std::tie(norm.env_min[1], norm.env_max[1]) = minmax(plan.humidity_levels);
    std::tie(norm.env_min[2], norm.env_max[2]) = minmax(plan.radiation_levels);

    // split assignment: order by hash of the grid index, then cut 60/20/20
    std::vector<std::size_t> order(kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto ha = split_hash(kept[a]), hb = split_hash(kept[b]);
        return ha != hb ? ha < hb : kept[a] < kept[b];
    });
    const auto n_kept = kept.size();
    const auto n_train = static_cast<std::size_t>(std::llround(0.6 * double(n_kept)));
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * double(n_kept)));
    std::vector<Split> assignment(n_kept);
    for (std::size_t r = 0; r < n_kept; ++r) {
        assignment[order[r]] =
            r < n_train ? Split::Train : (r < n_train + n_val ? Split::Val : Split::Test);
    }

    auto init_ds = [&](Split split) {
        ChemDataset ds;
        ds.task = task;
        ds.split = split;
        ds.n_in = in_idx.size();
        ds.n_out = out_idx.size();
        ds.n_steps = t_len;
        ds.norm = norm;
        ds.t_end_seconds = plan.t_end_seconds;
        for (const std::size_t s : in_idx) ds.in_species.push_back(mech.species[s]);
        for (const std::size_t s : out_idx) ds.out_species.push_back(mech.species[s]);
        return ds;
    };
    bundle.train = init_ds(Split::Train);
    bundle.val = init_ds(Split::Val);
    bundle.test = init_ds(Split::Test);

    for (std::size_t pos = 0; pos < n_kept; ++pos) {
        const std::size_t i = kept[pos];
        ChemDataset& ds = assignment[pos] == Split::Train
                              ? bundle.train
                              : (assignment[pos] == Split::Val ? bundle.val : bundle.test);
        for (std::size_t c = 0; c < 3; ++c) {
            ds.env.push_back(quantize_f32(norm.normalize_env(env_raw[i * 3 + c], c)));
        }
        for (const std::size_t s : in_idx) {
            ds.x0.push_back(quantize_f32(norm.normalize_conc(raw_x0[i * n_species + s])));
        }
        for (std::size_t k = 0; k < t_len; ++k) {
            for (const std::size_t s : out_idx) {
                ds.traj.push_back(quantize_f32(
                    norm.normalize_conc(raw_traj[(i * t_len + k) * n_species + s])));
            }
        }
    }
    return bundle;
}

std::vector<double> augment_roll(std::span<const double> traj, std::size_t t_len,
                                 std::size_t width, std::size_t tau) {
    if (traj.size() != t_len * width) {
        throw DimensionError("augment_roll: buffer does not match [t_len, width]");
    }
    if (tau >= t_len) {
        throw ContractError("augment_roll: shift " + std::to_string(tau) +
                            " out of range for " + std::to_string(t_len) + " steps");
    }
    std::vector<double> out(traj.size());
    for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t src = (t + tau) % t_len;
        std::copy_n(traj.begin() + static_cast<long>(src * width), width,
                    out.begin() + static_cast<long>(t * width));
    }
    return out;
}

void write_dataset(const ChemDataset& ds, const std::string& path) {
    ds.validate();
    nlohmann::json meta{
        {"log_base", 10},
        {"divisor", ds.norm.divisor},
        {"floor", ds.norm.floor_conc},
        {"env_min", ds.norm.env_min},
        {"env_max", ds.norm.env_max},
        {"in_species", ds.in_species},
        {"out_species", ds.out_species},
        {"task", ds.task},
        {"split", split_name(ds.split)},
        {"t_end_seconds", ds.t_end_seconds},
    };
    const std::string meta_str = meta.dump();

    std::vector<std::uint8_t> buf;
    buf.reserve(36 + meta_str.size() +
                4 * ds.size() * (ds.n_env + ds.n_in + ds.n_steps * ds.n_out));
    buf.insert(buf.end(), {'C', 'N', 'N', 'E'});
    put_u32(buf, 1);  // version
    put_u32(buf, static_cast<std::uint32_t>(ds.size()));
    put_u32(buf, static_cast<std::uint32_t>(ds.n_env));
    put_u32(buf, static_cast<std::uint32_t>(ds.n_in));
    put_u32(buf, static_cast<std::uint32_t>(ds.n_out));
    put_u32(buf, static_cast<std::uint32_t>(ds.n_steps));
    put_u32(buf, static_cast<std::uint32_t>(ds.split));  // flags
    put_u32(buf, static_cast<std::uint32_t>(meta_str.size()));
    buf.insert(buf.end(), meta_str.begin(), meta_str.end());

    const std::size_t n = ds.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ds.n_env; ++c) put_f32(buf, ds.env[i * ds.n_env + c]);
        for (std::size_t c = 0; c < ds.n_in; ++c) put_f32(buf, ds.x0[i * ds.n_in + c]);
        const std::size_t row = ds.n_steps * ds.n_out;
        for (std::size_t c = 0; c < row; ++c) put_f32(buf, ds.traj[i * row + c]);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<long>(buf.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

ChemDataset read_dataset(const std::string& path) {
    const auto buf = read_file(path);
    Reader r{buf};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), "CNNE", 4) != 0) {
        throw FormatError(0, "bad magic (expected CNNE)");
    }
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1) {
        throw FormatError(4, "unsupported version " + std::to_string(version));
    }
    ChemDataset ds;
    const std::uint32_t n = r.u32("n_samples");
    ds.n_env = r.u32("n_env");
    ds.n_in = r.u32("n_in");
    ds.n_out = r.u32("n_out");
    ds.n_steps = r.u32("n_steps");
    const std::uint32_t flags = r.u32("flags");
    ds.split = static_cast<Split>(flags & 0x3);

    const std::uint32_t meta_len = r.u32("norm_meta length");
    r.need(meta_len, "norm_meta");
    const std::string meta_str(buf.begin() + static_cast<long>(r.pos),
                               buf.begin() + static_cast<long>(r.pos + meta_len));
    r.pos += meta_len;
    try {
        const auto meta = nlohmann::json::parse(meta_str);
        ds.norm.divisor = meta.at("divisor").get<double>();
        ds.norm.floor_conc = meta.at("floor").get<double>();
        ds.norm.env_min = meta.at("env_min").get<std::array<double, 3>>();
        ds.norm.env_max = meta.at("env_max").get<std::array<double, 3>>();
        ds.in_species = meta.at("in_species").get<std::vector<std::string>>();
        ds.out_species = meta.at("out_species").get<std::vector<std::string>>();
        ds.task = meta.at("task").get<int>();
        ds.t_end_seconds = meta.at("t_end_seconds").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(40, std::string("bad norm_meta descriptor: ") + e.what());
    }

    const std::size_t per_sample = ds.n_env + ds.n_in + ds.n_steps * ds.n_out;
    const std::size_t expected = r.pos + 4 * std::size_t(n) * per_sample;
    if (buf.size() != expected) {
        throw FormatError(buf.size(),
                          "payload length mismatch: expected " + std::to_string(expected) +
                              " bytes total, file has " + std::to_string(buf.size()));
    }
    ds.env.reserve(n * ds.n_env);
    ds.x0.reserve(n * ds.n_in);
    ds.traj.reserve(n * ds.n_steps * ds.n_out);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ds.n_env; ++c) ds.env.push_back(r.f32("env"));
        for (std::size_t c = 0; c < ds.n_in; ++c) ds.x0.push_back(r.f32("x0"));
        for (std::size_t c = 0; c < ds.n_steps * ds.n_out; ++c) {
            ds.traj.push_back(r.f32("traj"));
        }
    }
    ds.validate();
    return ds;
}

}  // namespace chemnne
