// memscry: recovers AES session keys from process-memory snapshots and
// decrypts captured SSH traffic. Subcommands cover the full pipeline
// (analyze) and its stages (scan, decrypt, entropy), plus a fixture
// generator (synth) for producing sessions with known ground truth.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memscry/aes.hpp"
#include "memscry/capture_ingest.hpp"
#include "memscry/decrypt_engine.hpp"
#include "memscry/errors.hpp"
#include "memscry/fixture_lab.hpp"
#include "memscry/log.hpp"
#include "memscry/memory_analysis.hpp"
#include "memscry/plaintext_protocols.hpp"
#include "memscry/session_model.hpp"

namespace fs = std::filesystem;
using namespace memscry;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << content;
}

void write_binary_file(const fs::path& path, ByteView content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(content.data()),
              static_cast<std::streamsize>(content.size()));
}

// --snapshot accepts either the manifest (.json) or the blob (.bin); the
// sibling file completes the pair.
MemorySnapshot load_snapshot_arg(const std::string& arg) {
    fs::path p(arg);
    fs::path manifest = p, blob = p;
    if (p.extension() == ".json") {
        blob.replace_extension(".bin");
    } else if (p.extension() == ".bin") {
        manifest.replace_extension(".json");
    } else {
        throw ConfigError("--snapshot expects a .json manifest or .bin blob: " +
                          arg);
    }
    return load_snapshot(manifest, blob);
}

Cipher resolve_cipher_name(const std::string& name) {
    const auto cipher = cipher_from_name(name);
    if (!cipher)
        throw ConfigError("unsupported cipher \"" + name +
                          "\" (expected aes{128,192,256}-{ctr,cbc})");
    return *cipher;
}

struct ScanFlags {
    std::string pcap;
    std::vector<std::string> snapshots;
    std::string cipher;  // empty = negotiated from the capture
    double threshold_256 = 4.65;
    double threshold_192 = 4.0;
    double threshold_128 = 3.4;
    uint64_t window_radius = 1024;
    bool no_window = false;
    bool little_endian_pass = false;
    int jobs = 0;

    void attach(CLI::App* cmd, bool pcap_required) {
        cmd->add_option("--pcap", pcap, "capture file (pcap or pcapng)")
            ->required(pcap_required);
        cmd->add_option("--snapshot", snapshots,
                        "memory snapshot manifest; repeat for a second extract")
            ->required();
        cmd->add_option("--cipher", cipher,
                        "override the negotiated cipher (e.g. aes256-ctr)");
        cmd->add_option("--threshold-256", threshold_256,
                        "entropy threshold for 256-bit keys");
        cmd->add_option("--threshold-192", threshold_192,
                        "entropy threshold for 192-bit keys");
        cmd->add_option("--threshold-128", threshold_128,
                        "entropy threshold for 128-bit keys");
        cmd->add_option("--window-radius", window_radius,
                        "key-search radius around each IV candidate");
        cmd->add_flag("--no-window", no_window,
                      "scan every region in full instead of IV-anchored windows");
        cmd->add_flag("--little-endian-pass", little_endian_pass,
                      "also match little-endian counter layouts");
        cmd->add_option("--jobs", jobs, "worker threads (0 = all cores)");
    }

    EntropyConfig entropy_config() const {
        EntropyConfig config;
        config.threshold_256 = threshold_256;
        config.threshold_192 = threshold_192;
        config.threshold_128 = threshold_128;
        return config;
    }
};

struct ScanOutcome {
    SshSessionCapture capture;
    CandidateSet set;
    uint64_t segments_examined = 0;
    std::vector<uint64_t> unmatched_regions;
    double ingest_ms = 0.0;
    double scan_ms = 0.0;
};

ScanOutcome run_scan_stage(const ScanFlags& flags) {
    ScanOutcome outcome;
    auto t0 = Clock::now();
    outcome.capture = ingest_pcap(flags.pcap);
    outcome.ingest_ms = ms_since(t0);

    t0 = Clock::now();
    std::vector<MemorySnapshot> snaps;
    for (const auto& arg : flags.snapshots) snaps.push_back(load_snapshot_arg(arg));
    std::sort(snaps.begin(), snaps.end(),
              [](const MemorySnapshot& a, const MemorySnapshot& b) {
                  return a.captured_after_packet < b.captured_after_packet;
              });

    const Cipher cipher = flags.cipher.empty()
                              ? outcome.capture.negotiated_cipher
                              : resolve_cipher_name(flags.cipher);
    const CipherMode mode = cipher_mode(cipher);
    if (mode == CipherMode::Ctr && snaps.size() < 2)
        throw ConfigError(
            "counter-mode analysis needs two snapshots to observe the counter "
            "advance; got " + std::to_string(snaps.size()));
    if (snaps.empty()) throw ConfigError("at least one --snapshot is required");

    const EntropyConfig config = flags.entropy_config();
    const ScanOptions opts{flags.jobs, flags.little_endian_pass};

    CandidateSet& set = outcome.set;
    set.cipher = cipher;
    for (const auto& s : snaps) set.snapshot_positions.push_back(s.captured_after_packet);

    if (mode == CipherMode::Ctr) {
        const uint64_t pos_a = snaps[0].captured_after_packet;
        const uint64_t pos_b = snaps[1].captured_after_packet;
        for (Direction d : {Direction::ClientToServer, Direction::ServerToClient}) {
            const uint64_t delta =
                blocks_before_moment(outcome.capture, d, pos_b) -
                blocks_before_moment(outcome.capture, d, pos_a);
            auto& dest = d == Direction::ClientToServer ? set.iv_candidates_c2s
                                                        : set.iv_candidates_s2c;
            if (delta == 0) {
                MEMSCRY_LOG(logging::Level::warn,
                            std::string("no ") + direction_name(d) +
                                " traffic between the snapshots; skipping its "
                                "counter scan");
                continue;
            }
            dest = scan_ctr_iv_candidates(snaps[0], snaps[1], delta, config, opts);
        }
    }

    std::vector<IvCandidate> anchors = set.iv_candidates_c2s;
    anchors.insert(anchors.end(), set.iv_candidates_s2c.begin(),
                   set.iv_candidates_s2c.end());
    ScanWindow window;
    window.radius = flags.window_radius;
    window.enabled = !flags.no_window && !anchors.empty();
    if (!flags.no_window && anchors.empty())
        MEMSCRY_LOG(logging::Level::info,
                    "no IV anchors available; falling back to a full scan");

    const MemorySnapshot* snap_b = snaps.size() > 1 ? &snaps[1] : nullptr;
    KeyScanResult keys =
        scan_key_candidates(snaps[0], snap_b, cipher_key_length(cipher), config,
                            window, anchors, opts);
    set.key_candidates = std::move(keys.candidates);
    outcome.segments_examined = keys.segments_examined;
    outcome.unmatched_regions = std::move(keys.unmatched_regions);
    outcome.scan_ms = ms_since(t0);
    return outcome;
}

struct DecryptOutcome {
    DecryptReport report;
    SessionPlaintext plaintext;
    ReconstructionResult files;
    bool searches_succeeded = false;
    double decrypt_ms = 0.0;
};

DecryptOutcome run_decrypt_stage(const SshSessionCapture& capture,
                                 const CandidateSet& set, int jobs) {
    DecryptOutcome outcome;
    const auto t0 = Clock::now();
    const SearchOptions opts{jobs, false};
    const uint64_t position =
        set.snapshot_positions.empty() ? 1 : set.snapshot_positions.front();

    std::optional<DirectionKeys> keys_c2s, keys_s2c;
    bool failed = false;
    for (Direction d : {Direction::ClientToServer, Direction::ServerToClient}) {
        const auto& ivs = d == Direction::ClientToServer ? set.iv_candidates_c2s
                                                         : set.iv_candidates_s2c;
        try {
            SearchResult r = search_valid_combination(set.key_candidates, ivs,
                                                      capture, d, position, opts);
            outcome.report.tried_combinations += r.stats.tried_combinations;
            (d == Direction::ClientToServer ? outcome.report.stats_c2s
                                            : outcome.report.stats_s2c) = r.stats;
            (d == Direction::ClientToServer ? keys_c2s : keys_s2c) =
                std::move(r.keys);
        } catch (const NoValidCombinationError& e) {
            outcome.report.tried_combinations += e.tried_combinations;
            failed = true;
            MEMSCRY_LOG(logging::Level::warn,
                        std::string(direction_name(d)) + ": " + e.what());
        }
    }
    outcome.searches_succeeded = !failed;

    outcome.plaintext =
        decrypt_stream(capture, keys_c2s, keys_s2c, &outcome.report);
    outcome.files = reconstruct_files(outcome.plaintext.sftp_events);
    outcome.decrypt_ms = ms_since(t0);
    outcome.report.elapsed_seconds = outcome.decrypt_ms / 1000.0;
    return outcome;
}

Bytes concat_payloads(std::span<const SshBinaryPacket> packets) {
    Bytes out;
    for (const auto& p : packets) append_bytes(out, p.payload);
    return out;
}

void write_decrypt_outputs(const fs::path& out_dir, const SshSessionCapture& capture,
                           const DecryptOutcome& outcome,
                           nlohmann::json timings) {
    fs::create_directories(out_dir);

    nlohmann::json report = decrypt_report_to_json(outcome.report);
    report["session"] = session_summary_json(capture);
    report["timings_ms"] = std::move(timings);
    if (outcome.plaintext.auth) {
        const AuthRecord& a = *outcome.plaintext.auth;
        nlohmann::json auth{{"username", a.username},
                            {"service", a.service},
                            {"method", a.method}};
        if (a.password) auth["password"] = *a.password;
        report["auth"] = std::move(auth);
    } else {
        report["auth"] = nullptr;
    }
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : outcome.files.files)
        files.push_back(nlohmann::json{{"filename", f.filename},
                                       {"bytes", f.content.size()},
                                       {"sha256", sha256_hex(f.content)},
                                       {"complete", f.complete}});
    report["recovered_files"] = std::move(files);
    report["orphan_sftp_events"] = outcome.files.orphan_events;
    write_text_file(out_dir / "report.json", report.dump(2) + "\n");

    std::string events;
    for (const auto& e : outcome.plaintext.channel_events)
        events += nlohmann::json{{"type", "channel"},
                                 {"kind", e.kind},
                                 {"value", e.value}}
                      .dump() + "\n";
    for (const auto& e : outcome.plaintext.sftp_events)
        events += sftp_event_to_json(e).dump() + "\n";
    write_text_file(out_dir / "events.jsonl", events);

    write_binary_file(out_dir / "transcript_c2s.bin",
                      concat_payloads(outcome.plaintext.raw_packets_c2s));
    write_binary_file(out_dir / "transcript_s2c.bin",
                      concat_payloads(outcome.plaintext.raw_packets_s2c));
    write_text_file(out_dir / "summary.txt",
                    session_summary_text(outcome.plaintext, outcome.files));

    if (!outcome.files.files.empty()) {
        fs::create_directories(out_dir / "files");
        for (const auto& f : outcome.files.files)
            write_binary_file(out_dir / "files" / sanitize_filename(f.filename),
                              f.content);
    }
}

int finish_decrypt(const fs::path& out_dir, const SshSessionCapture& capture,
                   const DecryptOutcome& outcome, nlohmann::json timings,
                   const std::string& format) {
    write_decrypt_outputs(out_dir, capture, outcome, std::move(timings));
    if (format == "json") {
        std::ifstream in(out_dir / "report.json");
        std::cout << in.rdbuf();
    } else {
        std::cout << session_summary_text(outcome.plaintext, outcome.files);
    }
    return outcome.searches_succeeded ? 0 : 2;
}

int exit_code_for(const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e) ||
        dynamic_cast<const InvalidInputError*>(&e))
        return 4;
    if (dynamic_cast<const NoValidCombinationError*>(&e)) return 2;
    return 3;  // ingest and parsing failures
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "memscry: AES key recovery from memory snapshots and SSH session "
        "decryption"};
    app.require_subcommand(1);

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand(
        "synth", "generate a ground-truth fixture: session capture plus "
                 "memory snapshots");
    FixtureSpec spec;
    std::string synth_out = "fixture";
    std::string synth_cipher = "aes256-ctr";
    std::string noise_name = "mixed";
    uint64_t key_iv_distance = 0;
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--cipher", synth_cipher, "cipher to negotiate");
    synth->add_option("--mac", spec.mac_name, "MAC algorithm to negotiate");
    synth->add_option("--file-size", spec.file_size, "payload file size in bytes");
    synth->add_option("--file-format", spec.file_format, "text | binary");
    synth->add_option("--filename", spec.filename, "uploaded file name");
    synth->add_option("--username", spec.username, "credential to embed");
    synth->add_option("--password", spec.password, "credential to embed");
    synth->add_option("--noise", noise_name, "zeros | uniform | mixed");
    synth->add_option("--noise-bytes", spec.noise_bytes,
                      "total snapshot noise volume");
    synth->add_option("--regions", spec.region_count, "memory regions per snapshot");
    synth->add_option("--churn", spec.churn_fraction,
                      "fraction of pages rewritten between positions");
    synth->add_option("--position", spec.snapshot_positions,
                      "snapshot positions (outgoing encrypted packet ordinals)");
    synth->add_option("--decoys", spec.decoy_count,
                      "counters advancing by a wrong delta");
    synth->add_option("--aliases", spec.alias_count,
                      "counters advancing by the true outgoing delta");
    synth->add_option("--key-iv-distance", key_iv_distance,
                      "plant each key exactly this far above its IV");
    synth->add_option("--write-chunk", spec.write_chunk, "SFTP write size");
    synth->add_option("--channel-chunk", spec.channel_chunk,
                      "channel-data payload size");
    synth->add_option("--seed", spec.seed, "fixture seed");
    synth->add_option("--server-port", spec.server_port, "server TCP port");
    synth->add_flag("--pcapng", spec.pcapng,
                    "emit the capture in pcapng framing instead of classic pcap");

    // scan ---------------------------------------------------------------
    auto* scan = app.add_subcommand(
        "scan", "stage 2: find key and IV candidates in memory snapshots");
    ScanFlags scan_flags;
    scan_flags.attach(scan, true);
    std::string scan_out = "candidates.json";
    std::string scan_format = "text";
    scan->add_option("--out", scan_out, "candidates document path");
    scan->add_option("--format", scan_format, "stdout format: text | json");

    // decrypt --------------------------------------------------------------
    auto* decrypt = app.add_subcommand(
        "decrypt", "stage 3: search valid combinations and decrypt the session");
    std::string dec_pcap, dec_candidates = "candidates.json", dec_out = "out";
    std::string dec_format = "text";
    int dec_jobs = 0;
    decrypt->add_option("--pcap", dec_pcap, "capture file")->required();
    decrypt->add_option("--candidates", dec_candidates,
                        "candidates document from scan");
    decrypt->add_option("--out", dec_out, "output directory");
    decrypt->add_option("--jobs", dec_jobs, "worker threads (0 = all cores)");
    decrypt->add_option("--format", dec_format, "stdout format: text | json");

    // analyze ---------------------------------------------------------------
    auto* analyze = app.add_subcommand(
        "analyze", "full pipeline: ingest, scan, decrypt, parse protocols");
    ScanFlags an_flags;
    an_flags.attach(analyze, true);
    std::string an_out = "out";
    std::string an_format = "text";
    analyze->add_option("--out", an_out, "output directory");
    analyze->add_option("--format", an_format, "stdout format: text | json");

    // entropy -----------------------------------------------------------
    auto* entropy = app.add_subcommand(
        "entropy", "entropy exceedance histogram over snapshot segments");
    std::string ent_snapshot, ent_out, ent_tsv;
    size_t ent_length = 32;
    uint32_t ent_stride = 4;
    std::vector<double> ent_edges;
    int ent_jobs = 0;
    entropy->add_option("--snapshot", ent_snapshot, "memory snapshot manifest")
        ->required();
    entropy->add_option("--length", ent_length, "segment length in bytes");
    entropy->add_option("--stride", ent_stride, "segment start stride");
    entropy->add_option("--edges", ent_edges,
                        "histogram edges (strictly increasing)");
    entropy->add_option("--out", ent_out, "write histogram JSON here");
    entropy->add_option("--tsv", ent_tsv, "write a gnuplot-ready TSV here");
    entropy->add_option("--jobs", ent_jobs, "worker threads (0 = all cores)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            spec.mode = cipher_mode(resolve_cipher_name(synth_cipher));
            spec.key_length_bits =
                static_cast<int>(cipher_key_length(resolve_cipher_name(synth_cipher)) * 8);
            if (noise_name == "zeros") spec.noise_model = NoiseModel::Zeros;
            else if (noise_name == "uniform") spec.noise_model = NoiseModel::UniformRandom;
            else if (noise_name == "mixed") spec.noise_model = NoiseModel::MixedRealistic;
            else throw ConfigError("unknown noise model \"" + noise_name + "\"");
            if (key_iv_distance) spec.key_iv_distance = key_iv_distance;
            write_fixture_files(spec, synth_out);
            std::cout << "fixture written to " << synth_out << "\n";
            return 0;
        }

        if (*scan) {
            ScanOutcome outcome = run_scan_stage(scan_flags);
            nlohmann::json doc = candidates_to_json(outcome.set);
            doc["segments_examined"] = outcome.segments_examined;
            if (!outcome.unmatched_regions.empty()) {
                auto& arr = doc["unmatched_regions"] = nlohmann::json::array();
                for (uint64_t base : outcome.unmatched_regions)
                    arr.push_back(format_address(base));
            }
            doc["timings_ms"] = {{"ingest", outcome.ingest_ms},
                                 {"memory_analysis", outcome.scan_ms}};
            write_text_file(scan_out, doc.dump(2) + "\n");
            if (scan_format == "json") {
                std::cout << doc.dump(2) << "\n";
            } else {
                std::cout << "cipher: " << cipher_name(outcome.set.cipher) << "\n"
                          << "key candidates: " << outcome.set.key_candidates.size()
                          << "\n"
                          << "iv candidates: c2s "
                          << outcome.set.iv_candidates_c2s.size() << ", s2c "
                          << outcome.set.iv_candidates_s2c.size() << "\n"
                          << "candidates written to " << scan_out << "\n";
            }
            return 0;
        }

        if (*decrypt) {
            const auto t0 = Clock::now();
            SshSessionCapture capture = ingest_pcap(dec_pcap);
            const double ingest_ms = ms_since(t0);
            std::ifstream in(dec_candidates);
            if (!in) throw ConfigError("cannot read " + dec_candidates);
            nlohmann::json doc = nlohmann::json::parse(in, nullptr, true, true);
            CandidateSet set = candidates_from_json(doc);
            DecryptOutcome outcome = run_decrypt_stage(capture, set, dec_jobs);
            return finish_decrypt(dec_out, capture, outcome,
                                  {{"ingest", ingest_ms},
                                   {"decrypt", outcome.decrypt_ms}},
                                  dec_format);
        }

        if (*analyze) {
            ScanOutcome scan_outcome = run_scan_stage(an_flags);
            fs::create_directories(an_out);
            {
                nlohmann::json doc = candidates_to_json(scan_outcome.set);
                write_text_file(fs::path(an_out) / "candidates.json",
                                doc.dump(2) + "\n");
            }
            DecryptOutcome outcome = run_decrypt_stage(
                scan_outcome.capture, scan_outcome.set, an_flags.jobs);
            return finish_decrypt(an_out, scan_outcome.capture, outcome,
                                  {{"ingest", scan_outcome.ingest_ms},
                                   {"memory_analysis", scan_outcome.scan_ms},
                                   {"decrypt", outcome.decrypt_ms}},
                                  an_format);
        }

        if (*entropy) {
            MemorySnapshot snap = load_snapshot_arg(ent_snapshot);
            if (ent_edges.empty()) ent_edges = {2.0, 3.4, 4.0, 4.5, 4.65};
            EntropyConfig config;
            config.scan_stride = ent_stride;
            const ScanOptions opts{ent_jobs, false};
            EntropyHistogram h =
                entropy_histogram(snap, ent_length, ent_edges, config, opts);
            nlohmann::json doc = histogram_to_json(h);
            if (!ent_out.empty()) write_text_file(ent_out, doc.dump(2) + "\n");
            if (!ent_tsv.empty()) write_text_file(ent_tsv, histogram_to_tsv(h));
            std::cout << doc.dump(2) << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "memscry: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "memscry: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
