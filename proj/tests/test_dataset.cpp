#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "chemnne/dataset.hpp"
#include "chemnne/errors.hpp"
#include "chemnne/rng.hpp"

using namespace chemnne;

namespace {

Mechanism toy_mechanism() {
    return parse_mechanism(
        "A -> B ; k0=0.01\n"
        "B + B -> C ; k0=0.005\n"
        "C -> D ; k0=0.002\n"
        "A -> D ; k0=0.001 photo\n");
}

SamplingPlan toy_plan() {
    SamplingPlan plan;
    plan.input_species = {"A", "B", "C"};
    plan.groups = {{{"A"}, 0.5, 2.0}, {{"B"}, 0.5, 2.0}, {{"C"}, 0.5, 2.0}};
    plan.baseline = {{"A", 10.0}, {"B", 5.0}, {"C", 2.0}};
    plan.temperature_levels = {280.0, 290.0, 300.0};
    plan.humidity_levels = {0.5};
    plan.radiation_levels = {500.0};
    plan.t_end_seconds = 100.0;
    plan.n_steps = 5;
    return plan;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/chemnne_test_") + name;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("a 2^3 x 3 grid yields 24 samples split 60/20/20") {
    DatasetBundle bundle = build_dataset(toy_mechanism(), toy_plan(), 1);
    CHECK(bundle.grid_samples == 24);
    CHECK(bundle.failed_samples.empty());
    const std::size_t total = bundle.train.size() + bundle.val.size() + bundle.test.size();
    CHECK(total == 24);
    CHECK(bundle.val.size() == bundle.test.size());
    CHECK(bundle.train.size() >= 2 * bundle.val.size());
    CHECK(bundle.train.n_in == 3);
    CHECK(bundle.train.n_out == 3);  // task 1: outputs = inputs
    CHECK(bundle.train.n_steps == 5);
}

TEST_CASE("splits are disjoint and exhaustive over distinct samples") {
    DatasetBundle bundle = build_dataset(toy_mechanism(), toy_plan(), 1);
    // x0 rows identify grid points up to env; combine x0+env as the key
    auto keys = [](const ChemDataset& ds) {
        std::set<std::string> out;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            std::string k;
            for (std::size_t c = 0; c < ds.n_in; ++c) {
                k += std::to_string(ds.x0[i * ds.n_in + c]) + ",";
            }
            for (std::size_t c = 0; c < 3; ++c) {
                k += std::to_string(ds.env[i * 3 + c]) + ";";
            }
            out.insert(k);
        }
        return out;
    };
    const auto a = keys(bundle.train), b = keys(bundle.val), c = keys(bundle.test);
    CHECK(a.size() == bundle.train.size());
    std::set<std::string> all = a;
    all.insert(b.begin(), b.end());
    all.insert(c.begin(), c.end());
    CHECK(all.size() == 24);  // no overlap anywhere
}

TEST_CASE("task 2 selects significant species, task 3 their non-input complement") {
    SamplingPlan plan = toy_plan();
    plan.threshold_percentile = 0.0;  // everything is significant
    DatasetBundle t2 = build_dataset(toy_mechanism(), plan, 2);
    CHECK(t2.train.n_out == 4);  // A, B, C, D
    DatasetBundle t3 = build_dataset(toy_mechanism(), plan, 3);
    CHECK(t3.train.out_species == std::vector<std::string>{"D"});
}

TEST_CASE("normalization maps 10^D to 1 and round-trips above the floor") {
    NormMeta norm;
    norm.divisor = 7.5;
    CHECK(norm.normalize_conc(std::pow(10.0, 7.5)) == doctest::Approx(1.0).epsilon(1e-12));
    for (const double v : {1e-2, 1.0, 42.0, 3.3e6}) {
        const double rt = norm.denormalize_conc(norm.normalize_conc(v));
        CHECK(std::abs(rt - v) / v < 1e-6);
    }
    // below the floor the value is clamped, not round-tripped
    CHECK(norm.denormalize_conc(norm.normalize_conc(1e-9)) ==
          doctest::Approx(norm.floor_conc));
}

TEST_CASE("environment channels map min to -1 and max to +1") {
    NormMeta norm;
    norm.env_min = {270.0, 0.1, 0.0};
    norm.env_max = {310.0, 0.9, 1000.0};
    CHECK(norm.normalize_env(270.0, 0) == -1.0);
    CHECK(norm.normalize_env(310.0, 0) == 1.0);
    CHECK(norm.normalize_env(290.0, 0) == doctest::Approx(0.0));
    CHECK(norm.normalize_env(0.9, 1) == 1.0);
    CHECK(norm.denormalize_env(norm.normalize_env(0.4, 1), 1) == doctest::Approx(0.4));
    // degenerate channel (single level) collapses to 0
    norm.env_min[2] = norm.env_max[2] = 500.0;
    CHECK(norm.normalize_env(500.0, 2) == 0.0);
}

TEST_CASE("roll by zero is the identity; tau then T - tau restores") {
    Rng rng(3);
    const std::size_t t_len = 11, width = 4;
    std::vector<double> traj(t_len * width);
    for (auto& v : traj) v = rng.uniform(-1, 1);

    const auto same = augment_roll(traj, t_len, width, 0);
    CHECK(same == traj);

    const auto rolled = augment_roll(traj, t_len, width, 4);
    const auto restored = augment_roll(rolled, t_len, width, 7);
    CHECK(restored == traj);
}

TEST_CASE("roll by 3 over 11 steps matches the index oracle") {
    const std::size_t t_len = 11, width = 2;
    std::vector<double> traj(t_len * width);
    for (std::size_t i = 0; i < traj.size(); ++i) traj[i] = static_cast<double>(i);
    const auto rolled = augment_roll(traj, t_len, width, 3);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t c = 0; c < width; ++c) {
            CHECK(rolled[t * width + c] == traj[((t + 3) % 11) * width + c]);
        }
    }
    CHECK_THROWS_AS(augment_roll(traj, t_len, width, 11), ContractError);
}

TEST_CASE("roll preserves the multiset of values at each species index") {
    Rng rng(5);
    const std::size_t t_len = 7, width = 3;
    std::vector<double> traj(t_len * width);
    for (auto& v : traj) v = rng.uniform(0, 1);
    const auto rolled = augment_roll(traj, t_len, width, 5);
    for (std::size_t c = 0; c < width; ++c) {
        std::multiset<double> before, after;
        for (std::size_t t = 0; t < t_len; ++t) {
            before.insert(traj[t * width + c]);
            after.insert(rolled[t * width + c]);
        }
        CHECK(before == after);
    }
}

TEST_CASE("dataset file round-trips exactly") {
    DatasetBundle bundle = build_dataset(toy_mechanism(), toy_plan(), 1);
    const std::string path = temp_path("roundtrip.cnne");
    write_dataset(bundle.val, path);
    ChemDataset back = read_dataset(path);
    CHECK(back.size() == bundle.val.size());
    CHECK(back.env == bundle.val.env);
    CHECK(back.x0 == bundle.val.x0);
    CHECK(back.traj == bundle.val.traj);
    CHECK(back.in_species == bundle.val.in_species);
    CHECK(back.out_species == bundle.val.out_species);
    CHECK(back.norm.divisor == bundle.val.norm.divisor);
    CHECK(back.split == Split::Val);
    CHECK(back.task == 1);
    std::remove(path.c_str());
}

TEST_CASE("same inputs produce byte-identical files") {
    DatasetBundle a = build_dataset(toy_mechanism(), toy_plan(), 1);
    DatasetBundle b = build_dataset(toy_mechanism(), toy_plan(), 1);
    const std::string pa = temp_path("det_a.cnne"), pb = temp_path("det_b.cnne");
    write_dataset(a.train, pa);
    write_dataset(b.train, pb);
    std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
    const std::string ba((std::istreambuf_iterator<char>(fa)), {});
    const std::string bb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ba == bb);
    CHECK(!ba.empty());
    std::remove(pa.c_str());
    std::remove(pb.c_str());
}

TEST_CASE("file size follows the header + meta + payload formula") {
    // synthetic 1000-sample dataset; no integration needed
    ChemDataset ds;
    ds.task = 1;
    ds.split = Split::Train;
    ds.n_in = 4;
    ds.n_out = 3;
    ds.n_steps = 11;
    ds.in_species = {"A", "B", "C", "D"};
    ds.out_species = {"X", "Y", "Z"};
    const std::size_t n = 1000;
    Rng rng(7);
    for (std::size_t i = 0; i < n * 3; ++i) ds.env.push_back(float(rng.uniform(-1, 1)));
    for (std::size_t i = 0; i < n * 4; ++i) ds.x0.push_back(float(rng.uniform(-1, 1)));
    for (std::size_t i = 0; i < n * 11 * 3; ++i) ds.traj.push_back(float(rng.uniform(-1, 1)));

    const std::string path = temp_path("size.cnne");
    write_dataset(ds, path);
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    const auto file_size = static_cast<std::size_t>(in.tellg());

    // 32-byte header, u32 meta length + meta bytes, then f32 payload
    std::ifstream raw(path, std::ios::binary);
    raw.seekg(32);
    char lenb[4];
    raw.read(lenb, 4);
    const std::size_t meta_len = std::uint8_t(lenb[0]) | (std::uint8_t(lenb[1]) << 8) |
                                 (std::uint8_t(lenb[2]) << 16) | (std::uint8_t(lenb[3]) << 24);
    CHECK(file_size == 32 + 4 + meta_len + 4 * n * (3 + 4 + 11 * 3));
    std::remove(path.c_str());
}

TEST_CASE("truncated files and bad magic are rejected with offsets") {
    DatasetBundle bundle = build_dataset(toy_mechanism(), toy_plan(), 1);
    const std::string path = temp_path("trunc.cnne");
    write_dataset(bundle.test, path);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    in.close();

    std::ofstream cut(path, std::ios::binary | std::ios::trunc);
    cut.write(bytes.data(), static_cast<long>(bytes.size() - 10));
    cut.close();
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("expected"), FormatError);

    std::ofstream bad(path, std::ios::binary | std::ios::trunc);
    std::string corrupted = bytes;
    corrupted[0] = 'X';
    bad.write(corrupted.data(), static_cast<long>(corrupted.size()));
    bad.close();
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("magic"), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("stored values are f32-exact by construction") {
    DatasetBundle bundle = build_dataset(toy_mechanism(), toy_plan(), 1);
    for (const double v : bundle.train.traj) {
        CHECK(v == static_cast<double>(static_cast<float>(v)));
    }
}

}  // TEST_SUITE
