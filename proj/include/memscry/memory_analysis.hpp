#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "memscry/session_model.hpp"

namespace memscry {

/// Entropy thresholds per key length (bits per byte) and the scan stride.
struct EntropyConfig {
    double threshold_256 = 4.65;
    double threshold_192 = 4.0;
    double threshold_128 = 3.4;
    uint32_t scan_stride = 4;

    double threshold_for(size_t key_length_bytes) const;
};

/// Restricts the key scan to a radius around each IV candidate. PuTTY-style
/// layouts keep key and IV within about a kilobyte of each other, so the
/// default radius comfortably covers them.
struct ScanWindow {
    bool enabled = false;
    uint64_t radius = 1024;
};

/// Exceedance histogram: counts[k] = segments with entropy > bucket_edges[k].
struct EntropyHistogram {
    std::vector<double> bucket_edges;
    std::vector<uint64_t> counts;
    uint64_t total_segments = 0;
};

struct ScanOptions {
    int threads = 0;                  // 0 = library default
    bool little_endian_pass = false;  // additionally match LE-interpreted counters
};

/// Shannon entropy of a byte segment in bits per byte symbol:
/// -sum p(i) log2 p(i) with p(i) = f(i)/n. Throws EmptyInputError on empty
/// input. Result lies in [0, min(8, log2 n)].
double shannon_entropy(ByteView segment);

/// Finds 16-byte locations whose value advanced by exactly `delta` blocks
/// between the two snapshots (big-endian, wraparound arithmetic). Regions
/// that are byte-identical across the snapshots are skipped entirely.
/// Output is sorted by address. Throws NoCommonRegionsError when the
/// snapshots share no region, DegenerateDeltaError when delta is zero.
std::vector<IvCandidate> scan_ctr_iv_candidates(const MemorySnapshot& snap_a,
                                                const MemorySnapshot& snap_b,
                                                uint64_t delta,
                                                const EntropyConfig& config,
                                                const ScanOptions& opts = {});

struct KeyScanResult {
    std::vector<KeyCandidate> candidates;  // deduplicated by value, sorted by address
    uint64_t segments_examined = 0;
    std::vector<uint64_t> unmatched_regions;  // bases present in only one snapshot
};

/// Emits stride-aligned segments of key_length bytes whose entropy exceeds
/// the configured threshold and (when snap_b is given) whose bytes are
/// identical at the same address in the later extract. With window.enabled
/// the scan covers only [anchor - radius, anchor + radius] per anchor.
KeyScanResult scan_key_candidates(const MemorySnapshot& snap_a,
                                  const MemorySnapshot* snap_b,
                                  size_t key_length,
                                  const EntropyConfig& config,
                                  const ScanWindow& window = {},
                                  std::span<const IvCandidate> anchors = {},
                                  const ScanOptions& opts = {});

/// Per-edge exceedance counts of segment entropies over the whole snapshot.
/// Edges must be strictly increasing.
EntropyHistogram entropy_histogram(const MemorySnapshot& snap,
                                   size_t segment_length,
                                   std::span<const double> edges,
                                   const EntropyConfig& config = {},
                                   const ScanOptions& opts = {});

nlohmann::json histogram_to_json(const EntropyHistogram& h);
std::string histogram_to_tsv(const EntropyHistogram& h);

/// Candidates document emitted by the scan stage and consumed by decrypt.
struct CandidateSet {
    Cipher cipher = Cipher::Aes256Ctr;
    std::vector<KeyCandidate> key_candidates;
    std::vector<IvCandidate> iv_candidates_c2s;
    std::vector<IvCandidate> iv_candidates_s2c;
    std::vector<uint64_t> snapshot_positions;  // captured_after_packet, ascending
};

nlohmann::json candidates_to_json(const CandidateSet& set);
CandidateSet candidates_from_json(const nlohmann::json& doc);

namespace reference {

/// Serial reference implementations: straight-line loops with the naive
/// per-segment entropy, kept for testing the OpenMP kernels against and
/// for the benchmark comparison.
std::vector<IvCandidate> scan_ctr_iv_candidates(const MemorySnapshot& snap_a,
                                                const MemorySnapshot& snap_b,
                                                uint64_t delta,
                                                const EntropyConfig& config,
                                                uint32_t stride_override = 0);

KeyScanResult scan_key_candidates(const MemorySnapshot& snap_a,
                                  const MemorySnapshot* snap_b,
                                  size_t key_length,
                                  const EntropyConfig& config,
                                  const ScanWindow& window = {},
                                  std::span<const IvCandidate> anchors = {});

EntropyHistogram entropy_histogram(const MemorySnapshot& snap,
                                   size_t segment_length,
                                   std::span<const double> edges,
                                   const EntropyConfig& config = {});

}  // namespace reference

}  // namespace memscry
