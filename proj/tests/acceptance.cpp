// Acceptance suite for the full toolkit. Each criterion prints exactly one
// PASS/FAIL line; the process exits nonzero if any criterion fails.
//
// argv[1] must be the path to the memscry CLI binary; criterion 1 drives the
// pipeline through it end to end, the rest exercise the library in-process.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "memscry/aes.hpp"
#include "memscry/bytes.hpp"
#include "memscry/capture_ingest.hpp"
#include "memscry/decrypt_engine.hpp"
#include "memscry/errors.hpp"
#include "memscry/fixture_lab.hpp"
#include "memscry/memory_analysis.hpp"
#include "memscry/plaintext_protocols.hpp"
#include "memscry/session_model.hpp"

namespace fs = std::filesystem;
using namespace memscry;
using Clock = std::chrono::steady_clock;

namespace {

std::string g_cli;
fs::path g_work;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int run_cmd(const std::string& cmd) {
    const int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    if (WIFEXITED(rc)) return WEXITSTATUS(rc);
    return 128;
}

nlohmann::json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInputError("cannot read " + path.string());
    return nlohmann::json::parse(in, nullptr, true, true);
}

fs::path write_capture(const Bytes& pcap, const std::string& name) {
    const fs::path path = g_work / name;
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(pcap.data()),
              static_cast<std::streamsize>(pcap.size()));
    return path;
}

struct Outcome {
    bool ok = true;
    std::string detail;

    void fail(const std::string& why) {
        ok = false;
        if (detail.empty()) detail = why;
    }
};

int g_failures = 0;

void report(int number, const std::string& name, const Outcome& o) {
    if (!o.ok) ++g_failures;
    std::cout << (o.ok ? "PASS" : "FAIL") << " criterion " << number << ": "
              << name;
    if (!o.detail.empty()) std::cout << " (" << o.detail << ")";
    std::cout << std::endl;
}

bool contains_key(const std::vector<KeyCandidate>& candidates, const Bytes& key) {
    for (const auto& c : candidates)
        if (c.value == key) return true;
    return false;
}

// ---------------------------------------------------------------------------
// Criterion 1: the CLI recovers key, credentials, filename and byte-identical
// file content for every cipher mode, key length, file size and file format,
// from 16 MB mixed-noise snapshots, in under 60 seconds per case.

Outcome criterion_recovery_matrix() {
    Outcome o;
    const std::vector<std::string> modes{"ctr", "cbc"};
    const std::vector<int> key_bits{128, 192, 256};
    const std::vector<size_t> file_sizes{1024, 100 * 1024, 500 * 1024};
    const std::vector<std::string> formats{"text", "binary"};

    int cases = 0, passed = 0;
    double worst_seconds = 0.0;
    uint64_t seed = 9000;

    for (const auto& mode : modes)
        for (int bits : key_bits)
            for (size_t file_size : file_sizes)
                for (const auto& format : formats) {
                    ++cases;
                    ++seed;
                    const std::string label = "aes" + std::to_string(bits) + "-" +
                                              mode + "/" +
                                              std::to_string(file_size) + "B/" +
                                              format;
                    const fs::path dir =
                        g_work / ("case_" + std::to_string(cases));
                    const fs::path out_dir = dir / "out";
                    fs::create_directories(dir);
                    const std::string log = (dir / "log.txt").string();

                    std::ostringstream synth;
                    synth << g_cli << " synth --out " << dir
                          << " --cipher aes" << bits << "-" << mode
                          << " --file-size " << file_size
                          << " --file-format " << format
                          << " --noise mixed --noise-bytes " << (16u << 20)
                          << " --seed " << seed << " > " << log << " 2>&1";
                    if (run_cmd(synth.str()) != 0) {
                        o.fail(label + ": synth failed");
                        continue;
                    }

                    std::ostringstream analyze;
                    analyze << g_cli << " analyze --pcap "
                            << (dir / "fixture.pcap") << " --snapshot "
                            << (dir / "snapshot_0.json");
                    if (mode == "ctr")
                        analyze << " --snapshot " << (dir / "snapshot_1.json");
                    analyze << " --out " << out_dir
                            << " --format json >> " << log << " 2>&1";

                    const auto t0 = Clock::now();
                    const int rc = run_cmd(analyze.str());
                    const double elapsed = seconds_since(t0);
                    worst_seconds = std::max(worst_seconds, elapsed);
                    if (rc != 0) {
                        o.fail(label + ": analyze exited " + std::to_string(rc));
                        continue;
                    }
                    if (elapsed >= 60.0) {
                        o.fail(label + ": took " + std::to_string(elapsed) + " s");
                        continue;
                    }

                    try {
                        const GroundTruth truth =
                            ground_truth_from_json(load_json(dir / "truth.json"));
                        const nlohmann::json report =
                            load_json(out_dir / "report.json");

                        auto key_matches = [&](const char* field, const Bytes& want) {
                            const auto& node = report.at(field);
                            return !node.is_null() &&
                                   node.at("key").get<std::string>() ==
                                       hex_encode(want);
                        };
                        if (!key_matches("valid_c2s", truth.key_c2s))
                            throw InvalidInputError("client-to-server key mismatch");
                        if (!key_matches("valid_s2c", truth.key_s2c))
                            throw InvalidInputError("server-to-client key mismatch");

                        const auto& auth = report.at("auth");
                        if (auth.is_null() ||
                            auth.at("username").get<std::string>() !=
                                truth.auth.username ||
                            !truth.auth.password ||
                            auth.at("password").get<std::string>() !=
                                *truth.auth.password)
                            throw InvalidInputError("credentials mismatch");

                        bool file_ok = false;
                        for (const auto& f : report.at("recovered_files")) {
                            if (f.at("filename").get<std::string>() != truth.filename)
                                continue;
                            file_ok = f.at("sha256").get<std::string>() ==
                                          truth.file_sha256 &&
                                      f.at("bytes").get<size_t>() ==
                                          truth.file_size &&
                                      f.at("complete").get<bool>();
                        }
                        if (!file_ok)
                            throw InvalidInputError("recovered file mismatch");
                        ++passed;
                    } catch (const std::exception& e) {
                        o.fail(label + ": " + e.what());
                    }
                    fs::remove_all(dir);
                }

    std::ostringstream detail;
    detail << passed << "/" << cases << " cases, worst " << std::fixed
           << std::setprecision(1) << worst_seconds << " s";
    if (o.ok) o.detail = detail.str();
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 2: a million random keys validate zero combinations against a
// real fixture packet; a lone false accept must fail the two-consecutive-
// packet confirmation.

Outcome criterion_validation_selectivity() {
    Outcome o;
    FixtureSpec spec;
    spec.seed = 21;
    spec.file_size = 4096;
    spec.noise_model = NoiseModel::Zeros;
    spec.snapshot_positions = {2, 4};
    const SynthResult fx = synth_session(spec);
    const SshSessionCapture capture =
        ingest_pcap(write_capture(fx.pcap, "selectivity.pcap"));

    const auto indices = capture.encrypted_packet_indices(Direction::ClientToServer);
    if (indices.size() < 2) {
        o.fail("fixture has fewer than two encrypted packets");
        return o;
    }
    const Bytes& wire0 = capture.packets[indices[0]].payload;
    const Bytes& wire1 = capture.packets[indices[1]].payload;
    ValidationParams params;
    params.mac_field_size = static_cast<uint32_t>(capture.negotiated_mac_length);

    const ByteView iv0(fx.truth.initial_iv_c2s.data(), 16);
    if (!validate_combination(fx.truth.key_c2s, iv0, wire0, params,
                              CipherMode::Ctr)) {
        o.fail("true key fails validation");
        return o;
    }

    const uint64_t blocks0 = (wire0.size() - capture.negotiated_mac_length) / 16;
    const auto iv1 =
        (Counter128::from_be(fx.truth.initial_iv_c2s.data()) + blocks0).be_bytes();

    std::mt19937_64 rng(0x5e1ec7);
    Bytes key(32);
    uint64_t accepts = 0, confirmed = 0;
    for (uint64_t trial = 0; trial < 1000000; ++trial) {
        for (auto& b : key) b = static_cast<uint8_t>(rng());
        if (validate_combination(key, iv0, wire0, params, CipherMode::Ctr)) {
            ++accepts;
            if (validate_combination(key, ByteView(iv1.data(), 16), wire1,
                                     params, CipherMode::Ctr))
                ++confirmed;
        }
    }

    if (confirmed > 0)
        o.fail(std::to_string(confirmed) + " random keys survived confirmation");
    else if (accepts > 1)
        o.fail(std::to_string(accepts) + " single-packet accepts");
    o.detail = std::to_string(accepts) + " accepts in 1000000 trials";
    if (!o.ok) o.detail.clear();
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 3: across 100 seeded fixtures per key length the planted keys
// always clear their threshold; candidate counts shrink as the threshold
// rises and order as count(16 B, 3.4) > count(24 B, 4.0) > count(32 B, 4.65)
// on identical noise.

Outcome criterion_threshold_behavior() {
    Outcome o;
    const int kSeeds = 100;
    int found = 0, total = 0;
    int ordering_ok = 0, monotonic_ok = 0;

    for (int i = 0; i < kSeeds && o.ok; ++i) {
        MemorySnapshot snap_256;
        for (int bits : {128, 192, 256}) {
            FixtureSpec spec;
            spec.seed = 3000 + static_cast<uint64_t>(i) * 4 + bits / 64;
            spec.key_length_bits = bits;
            spec.file_size = 2048;
            spec.noise_bytes = 128 << 10;
            spec.region_count = 2;
            spec.snapshot_positions = {2, 4};
            const SynthResult fx = synth_session(spec);
            const MemorySnapshot snap = synth_memory(spec, fx.truth, 2);

            const auto result =
                scan_key_candidates(snap, nullptr, bits / 8, EntropyConfig{});
            ++total;
            if (contains_key(result.candidates, fx.truth.key_c2s) &&
                contains_key(result.candidates, fx.truth.key_s2c))
                ++found;
            else
                o.fail("seed " + std::to_string(spec.seed) + ", " +
                       std::to_string(bits) + "-bit key missed");
            if (bits == 256) snap_256 = snap;
        }
        if (!o.ok) break;

        const size_t c16 =
            scan_key_candidates(snap_256, nullptr, 16, EntropyConfig{})
                .candidates.size();
        const size_t c24 =
            scan_key_candidates(snap_256, nullptr, 24, EntropyConfig{})
                .candidates.size();
        const size_t c32 =
            scan_key_candidates(snap_256, nullptr, 32, EntropyConfig{})
                .candidates.size();
        if (c16 > c24 && c24 > c32)
            ++ordering_ok;
        else
            o.fail("ordering violated: " + std::to_string(c16) + " / " +
                   std::to_string(c24) + " / " + std::to_string(c32));

        size_t prev = SIZE_MAX;
        bool monotonic = true;
        for (double threshold : {3.4, 4.0, 4.65}) {
            EntropyConfig config;
            config.threshold_256 = threshold;
            const size_t count =
                scan_key_candidates(snap_256, nullptr, 32, config)
                    .candidates.size();
            if (count > prev) monotonic = false;
            prev = count;
        }
        if (monotonic)
            ++monotonic_ok;
        else
            o.fail("candidate count grew with the threshold");
    }

    if (o.ok)
        o.detail = std::to_string(found) + "/" + std::to_string(total) +
                   " keys found, ordering " + std::to_string(ordering_ok) + "/" +
                   std::to_string(kSeeds);
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 4: the counter scan keeps the true IV, rejects all 1000 planted
// wrong-delta decoys, returns nothing on identical snapshots, and matches a
// stride-1 brute-force recomputation restricted to 4-aligned addresses.

Outcome criterion_counter_scan_soundness() {
    Outcome o;
    FixtureSpec spec;
    spec.seed = 41;
    spec.file_size = 64 << 10;
    spec.noise_model = NoiseModel::UniformRandom;
    spec.noise_bytes = 2 << 20;
    spec.decoy_count = 1000;
    spec.snapshot_positions = {2, 4};
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    const MemorySnapshot snap_a = synth_memory(spec, fx.truth, 2);
    const MemorySnapshot snap_b = synth_memory(spec, fx.truth, 4);
    if (fx.truth.decoy_addresses.size() != spec.decoy_count) {
        o.fail("fixture planted " +
               std::to_string(fx.truth.decoy_addresses.size()) + " decoys");
        return o;
    }
    const uint64_t delta =
        fx.truth.blocks_between(2, 4, Direction::ClientToServer);

    const auto found = scan_ctr_iv_candidates(snap_a, snap_b, delta, {});

    bool true_iv_present = false;
    for (const auto& c : found)
        if (c.address == fx.truth.iv_address_c2s) true_iv_present = true;
    if (!true_iv_present) o.fail("true IV missing from the candidate set");

    for (const auto& c : found)
        for (uint64_t decoy : fx.truth.decoy_addresses)
            if (c.address == decoy) o.fail("decoy accepted");

    if (!scan_ctr_iv_candidates(snap_a, snap_a, delta, {}).empty())
        o.fail("identical snapshots produced candidates");

    auto oracle = reference::scan_ctr_iv_candidates(snap_a, snap_b, delta,
                                                    EntropyConfig{}, 1);
    std::erase_if(oracle,
                  [](const IvCandidate& c) { return c.address % 4 != 0; });
    bool equal = oracle.size() == found.size();
    for (size_t i = 0; equal && i < oracle.size(); ++i)
        equal = oracle[i].address == found[i].address &&
                oracle[i].value == found[i].value;
    if (!equal) o.fail("stride-1 oracle disagrees with the scan");

    if (o.ok)
        o.detail = std::to_string(found.size()) + " candidates, " +
                   std::to_string(fx.truth.decoy_addresses.size()) +
                   " decoys rejected";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 5: CBC sessions decrypt from a single snapshot with zero IV
// iterations, and the CBC combination search finishes faster than the CTR
// search on matched fixtures.

Outcome criterion_mode_asymmetry() {
    Outcome o;
    const auto base_spec = [](CipherMode mode) {
        FixtureSpec spec;
        spec.mode = mode;
        spec.seed = 51;
        spec.file_size = 100 << 10;
        spec.noise_bytes = 2 << 20;
        spec.snapshot_positions = mode == CipherMode::Ctr
                                      ? std::vector<uint64_t>{2, 4}
                                      : std::vector<uint64_t>{2};
        return spec;
    };

    // CBC: one snapshot, key search only, chained IVs from the wire.
    FixtureSpec cbc_spec = base_spec(CipherMode::Cbc);
    const SynthResult cbc = synth_session(cbc_spec);
    const SshSessionCapture cbc_capture =
        ingest_pcap(write_capture(cbc.pcap, "cbc.pcap"));
    const MemorySnapshot cbc_snap = synth_memory(cbc_spec, cbc.truth, 2);

    const auto cbc_keys =
        scan_key_candidates(cbc_snap, nullptr, cbc.truth.key_c2s.size(),
                            EntropyConfig{});
    const auto t_cbc0 = Clock::now();
    const SearchResult cbc_c2s = search_valid_combination(
        cbc_keys.candidates, {}, cbc_capture, Direction::ClientToServer, 2);
    const double cbc_seconds = seconds_since(t_cbc0);
    const SearchResult cbc_s2c = search_valid_combination(
        cbc_keys.candidates, {}, cbc_capture, Direction::ServerToClient, 2);

    if (cbc_c2s.stats.iv_iterations != 0 || cbc_s2c.stats.iv_iterations != 0)
        o.fail("CBC search iterated IV candidates");
    if (cbc_c2s.keys.key != cbc.truth.key_c2s) o.fail("CBC key mismatch");

    const SessionPlaintext plain =
        decrypt_stream(cbc_capture, cbc_c2s.keys, cbc_s2c.keys);
    if (!plain.auth || !(*plain.auth == cbc.truth.auth))
        o.fail("CBC single-snapshot decrypt lost the credentials");

    // CTR: alias counters advance by the true delta and sort below the real
    // IV, forcing the search through full key passes per alias first.
    FixtureSpec ctr_spec = base_spec(CipherMode::Ctr);
    ctr_spec.alias_count = 128;
    const SynthResult ctr = synth_session(ctr_spec);
    const SshSessionCapture ctr_capture =
        ingest_pcap(write_capture(ctr.pcap, "ctr.pcap"));
    const MemorySnapshot ctr_a = synth_memory(ctr_spec, ctr.truth, 2);
    const MemorySnapshot ctr_b = synth_memory(ctr_spec, ctr.truth, 4);

    const uint64_t delta =
        ctr.truth.blocks_between(2, 4, Direction::ClientToServer);
    const auto ivs = scan_ctr_iv_candidates(ctr_a, ctr_b, delta, {});
    const auto ctr_keys = scan_key_candidates(
        ctr_a, &ctr_b, ctr.truth.key_c2s.size(), EntropyConfig{},
        ScanWindow{true, 1024}, ivs);

    const auto t_ctr0 = Clock::now();
    const SearchResult ctr_c2s =
        search_valid_combination(ctr_keys.candidates, ivs, ctr_capture,
                                 Direction::ClientToServer, 2);
    const double ctr_seconds = seconds_since(t_ctr0);

    if (ctr_c2s.keys.key != ctr.truth.key_c2s) o.fail("CTR key mismatch");
    if (ctr_c2s.stats.iv_iterations <= ctr_spec.alias_count)
        o.fail("aliases did not inflate the IV iteration count");
    if (cbc_seconds >= ctr_seconds)
        o.fail("CBC search was not faster: " + std::to_string(cbc_seconds) +
               " s vs " + std::to_string(ctr_seconds) + " s");

    if (o.ok) {
        std::ostringstream detail;
        detail << std::scientific << std::setprecision(2) << cbc_seconds
               << " s CBC vs " << ctr_seconds << " s CTR, "
               << ctr_c2s.stats.iv_iterations << " IV iterations";
        o.detail = detail.str();
    }
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 6: with keys planted 968 bytes above their IVs, a 1024-byte
// window examines at most 10% of the full-scan segments and returns the
// identical winning combination.

Outcome criterion_window_heuristic() {
    Outcome o;
    FixtureSpec spec;
    spec.seed = 61;
    spec.file_size = 32 << 10;
    spec.noise_bytes = 4 << 20;
    spec.key_iv_distance = 968;
    spec.snapshot_positions = {2, 4};
    const SynthResult fx = synth_session(spec);
    const SshSessionCapture capture =
        ingest_pcap(write_capture(fx.pcap, "window.pcap"));
    const MemorySnapshot snap_a = synth_memory(spec, fx.truth, 2);
    const MemorySnapshot snap_b = synth_memory(spec, fx.truth, 4);

    const uint64_t delta =
        fx.truth.blocks_between(2, 4, Direction::ClientToServer);
    const auto ivs = scan_ctr_iv_candidates(snap_a, snap_b, delta, {});

    const auto full = scan_key_candidates(snap_a, &snap_b, 32, EntropyConfig{});
    const auto windowed =
        scan_key_candidates(snap_a, &snap_b, 32, EntropyConfig{},
                            ScanWindow{true, 1024}, ivs);

    if (windowed.segments_examined * 10 > full.segments_examined)
        o.fail("window examined " + std::to_string(windowed.segments_examined) +
               " of " + std::to_string(full.segments_examined) + " segments");

    const SearchResult from_full = search_valid_combination(
        full.candidates, ivs, capture, Direction::ClientToServer, 2);
    const SearchResult from_window = search_valid_combination(
        windowed.candidates, ivs, capture, Direction::ClientToServer, 2);

    if (from_full.keys.key != from_window.keys.key ||
        from_full.keys.initial_iv != from_window.keys.initial_iv ||
        from_full.key_address != from_window.key_address ||
        from_full.iv_address != from_window.iv_address)
        o.fail("windowed search found a different combination");
    if (from_window.keys.key != fx.truth.key_c2s)
        o.fail("windowed search missed the true key");

    if (o.ok)
        o.detail = std::to_string(windowed.segments_examined) + " of " +
                   std::to_string(full.segments_examined) + " segments";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 7: entropy values for degenerate inputs are exact to 1e-12 and
// the function is invariant under permutation and self-concatenation across
// ten thousand random segments.

Outcome criterion_entropy_exactness() {
    Outcome o;

    const Bytes same(32, 0x7e);
    Bytes distinct(32);
    for (size_t i = 0; i < 32; ++i) distinct[i] = static_cast<uint8_t>(i);
    Bytes eights(32);
    for (size_t i = 0; i < 32; ++i) eights[i] = static_cast<uint8_t>(i / 4);

    if (std::abs(shannon_entropy(same) - 0.0) > 1e-12)
        o.fail("constant segment entropy is not 0");
    if (std::abs(shannon_entropy(distinct) - 5.0) > 1e-12)
        o.fail("32 distinct bytes do not give 5 bits");
    if (std::abs(shannon_entropy(eights) - 3.0) > 1e-12)
        o.fail("8 symbols at equal frequency do not give 3 bits");

    std::mt19937_64 rng(71);
    int invariant = 0;
    for (int i = 0; i < 10000; ++i) {
        Bytes segment(16 + rng() % 64);
        for (auto& b : segment) b = static_cast<uint8_t>(rng());
        const double base = shannon_entropy(segment);

        Bytes shuffled = segment;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        Bytes doubled = segment;
        doubled.insert(doubled.end(), segment.begin(), segment.end());

        if (std::abs(shannon_entropy(shuffled) - base) <= 1e-12 &&
            std::abs(shannon_entropy(doubled) - base) <= 1e-12)
            ++invariant;
    }
    if (invariant != 10000)
        o.fail(std::to_string(10000 - invariant) + " segments broke invariance");
    else
        o.detail = "3 exact values, 10000 invariant segments";
    return o;
}

// ---------------------------------------------------------------------------
// Criterion 8: on 16 MB of mixed realistic noise, more than half of all
// 32-byte segments exceed 2.0 bits while fewer than 5% exceed 4.5.

Outcome criterion_histogram_shape() {
    Outcome o;
    FixtureSpec spec;
    spec.seed = 81;
    spec.file_size = 2048;
    spec.noise_bytes = 16 << 20;
    spec.snapshot_positions = {2, 4};
    const SynthResult fx = synth_session(spec);
    const MemorySnapshot snap = synth_memory(spec, fx.truth, 2);

    const std::vector<double> edges{2.0, 4.5};
    const EntropyHistogram h = entropy_histogram(snap, 32, edges);
    if (h.total_segments == 0) {
        o.fail("no segments");
        return o;
    }
    const double above_low =
        static_cast<double>(h.counts[0]) / static_cast<double>(h.total_segments);
    const double above_high =
        static_cast<double>(h.counts[1]) / static_cast<double>(h.total_segments);

    if (above_low <= 0.50)
        o.fail("only " + std::to_string(above_low * 100) + "% exceed 2.0 bits");
    if (above_high >= 0.05)
        o.fail(std::to_string(above_high * 100) + "% exceed 4.5 bits");
    if (o.ok) {
        std::ostringstream detail;
        detail << std::fixed << std::setprecision(2) << above_low * 100
               << "% above 2.0, " << above_high * 100 << "% above 4.5";
        o.detail = detail.str();
    }
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: " << argv[0] << " <path-to-memscry-cli>\n";
        return 64;
    }
    g_cli = argv[1];
    g_work = fs::temp_directory_path() / "memscry_acceptance";
    fs::remove_all(g_work);
    fs::create_directories(g_work);

    struct Criterion {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {"end-to-end recovery matrix", criterion_recovery_matrix},
        {"validation selectivity", criterion_validation_selectivity},
        {"threshold completeness and ordering", criterion_threshold_behavior},
        {"counter scan soundness", criterion_counter_scan_soundness},
        {"cipher mode asymmetry", criterion_mode_asymmetry},
        {"window heuristic", criterion_window_heuristic},
        {"entropy exactness", criterion_entropy_exactness},
        {"histogram shape", criterion_histogram_shape},
    };

    for (size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (const std::exception& e) {
            o.fail(std::string("unhandled exception: ") + e.what());
        }
        report(static_cast<int>(i) + 1, criteria[i].name, o);
    }

    fs::remove_all(g_work);
    return g_failures == 0 ? 0 : 1;
}
