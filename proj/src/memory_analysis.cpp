#include "memscry/memory_analysis.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "memscry/errors.hpp"
#include "memscry/log.hpp"

namespace memscry {

double EntropyConfig::threshold_for(size_t key_length_bytes) const {
    switch (key_length_bytes) {
        case 16: return threshold_128;
        case 24: return threshold_192;
        case 32: return threshold_256;
    }
    throw InvalidInputError("key length must be 16, 24 or 32 bytes");
}

double shannon_entropy(ByteView segment) {
    if (segment.empty()) throw EmptyInputError("entropy of an empty segment");
    std::array<uint32_t, 256> freq{};
    for (uint8_t b : segment) ++freq[b];
    const double n = static_cast<double>(segment.size());
    double h = 0.0;
    for (uint32_t f : freq) {
        if (f == 0) continue;
        const double p = static_cast<double>(f) / n;
        h -= p * std::log2(p);
    }
    return h;
}

namespace {

struct MatchedRegion {
    const MemoryRegion* a = nullptr;
    const MemoryRegion* b = nullptr;  // null when scanning a single snapshot
    uint64_t scan_length = 0;
};

// Pairs regions of two snapshots by base address. Bases present in only one
// snapshot land in `unmatched` when it is given.
std::vector<MatchedRegion> match_regions(const MemorySnapshot& snap_a,
                                         const MemorySnapshot* snap_b,
                                         std::vector<uint64_t>* unmatched) {
    std::vector<MatchedRegion> out;
    if (!snap_b) {
        for (const auto& r : snap_a.regions)
            out.push_back({&r, nullptr, r.length()});
        return out;
    }
    for (const auto& ra : snap_a.regions) {
        const MemoryRegion* rb = nullptr;
        for (const auto& cand : snap_b->regions)
            if (cand.base_address == ra.base_address) { rb = &cand; break; }
        if (!rb) {
            if (unmatched) unmatched->push_back(ra.base_address);
            continue;
        }
        out.push_back({&ra, rb, std::min(ra.length(), rb->length())});
    }
    for (const auto& rb : snap_b->regions) {
        if (!snap_a.region_at(rb.base_address) && unmatched)
            unmatched->push_back(rb.base_address);
    }
    if (unmatched) std::sort(unmatched->begin(), unmatched->end());
    return out;
}

// Window-start ranges, chunked for the parallel loops. begin/end are offsets
// into the matched region; starts step by the stride and end is exclusive.
struct ChunkTask {
    size_t region = 0;
    uint64_t begin = 0;
    uint64_t end = 0;
};

constexpr uint64_t kChunkSpan = 1 << 20;

void append_chunks(std::vector<ChunkTask>& tasks, size_t region, uint64_t begin,
                   uint64_t end, uint32_t stride) {
    for (uint64_t lo = begin; lo < end; ) {
        uint64_t hi = std::min<uint64_t>(lo + kChunkSpan, end);
        // keep chunk boundaries on the stride grid
        hi = lo + (hi - lo + stride - 1) / stride * stride;
        hi = std::min(hi, end);
        tasks.push_back({region, lo, hi});
        lo = hi;
    }
}

int resolve_threads(const ScanOptions& opts) {
    return opts.threads > 0 ? opts.threads : omp_get_max_threads();
}

// Sliding-window entropy over one chunk. Byte frequencies update
// incrementally; the frequency-log sum is recomputed per window from the
// integer table, so a window's entropy never depends on how the scan
// reached it and chunked runs reproduce the serial values bit for bit.
// Identity used: H = log2(n) - (sum_j log2 f(b_j)) / n.
template <class Fn>
void entropy_windows(const uint8_t* data, uint64_t begin, uint64_t end,
                     size_t length, uint32_t stride, const double* lg, Fn&& fn) {
    const double lg_n = lg[length];
    const double n = static_cast<double>(length);
    std::array<uint32_t, 256> freq{};
    for (size_t j = 0; j < length; ++j) ++freq[data[begin + j]];
    for (uint64_t o = begin; o < end; o += stride) {
        double s = 0.0;
        for (size_t j = 0; j < length; ++j) s += lg[freq[data[o + j]]];
        fn(o, lg_n - s / n);
        if (o + stride >= end) break;
        if (stride < length) {
            for (uint32_t k = 0; k < stride; ++k) {
                --freq[data[o + k]];
                ++freq[data[o + length + k]];
            }
        } else {
            for (size_t j = 0; j < length; ++j) --freq[data[o + j]];
            for (size_t j = 0; j < length; ++j) ++freq[data[o + stride + j]];
        }
    }
}

std::vector<double> log2_table(size_t max_count) {
    std::vector<double> lg(max_count + 1, 0.0);
    for (size_t k = 1; k <= max_count; ++k) lg[k] = std::log2(static_cast<double>(k));
    return lg;
}

}  // namespace

std::vector<IvCandidate> scan_ctr_iv_candidates(const MemorySnapshot& snap_a,
                                                const MemorySnapshot& snap_b,
                                                uint64_t delta,
                                                const EntropyConfig& config,
                                                const ScanOptions& opts) {
    if (delta == 0)
        throw DegenerateDeltaError("no cipher blocks between the snapshots");
    auto matched = match_regions(snap_a, &snap_b, nullptr);
    if (matched.empty())
        throw NoCommonRegionsError("snapshots share no region base address");

    const uint32_t stride = config.scan_stride;
    std::vector<ChunkTask> tasks;
    for (size_t mi = 0; mi < matched.size(); ++mi) {
        const auto& m = matched[mi];
        if (m.scan_length < 16) continue;
        if (m.a->length() == m.b->length() &&
            std::memcmp(m.a->data.data(), m.b->data.data(), m.a->length()) == 0)
            continue;  // nothing moved here
        append_chunks(tasks, mi, 0, m.scan_length - 16 + 1, stride);
    }

    const Counter128 want{0, delta};
    std::vector<std::vector<IvCandidate>> hits(tasks.size());

    #pragma omp parallel for schedule(dynamic) num_threads(resolve_threads(opts))
    for (int64_t t = 0; t < static_cast<int64_t>(tasks.size()); ++t) {
        const auto& task = tasks[t];
        const auto& m = matched[task.region];
        const uint8_t* pa = m.a->data.data();
        const uint8_t* pb = m.b->data.data();
        for (uint64_t o = task.begin; o < task.end; o += stride) {
            IvCandidate c;
            c.observed_delta = delta;
            if (Counter128::from_be(pb + o) - Counter128::from_be(pa + o) == want) {
                c.little_endian = false;
            } else if (opts.little_endian_pass &&
                       Counter128::from_le(pb + o) - Counter128::from_le(pa + o) ==
                           want) {
                c.little_endian = true;
            } else {
                continue;
            }
            c.snapshot_id = snap_a.snapshot_id;
            c.address = m.a->base_address + o;
            std::memcpy(c.value.data(), pa + o, 16);
            hits[t].push_back(std::move(c));
        }
    }

    std::vector<IvCandidate> out;
    for (auto& h : hits) out.insert(out.end(), h.begin(), h.end());
    MEMSCRY_LOG(logging::Level::info,
                "counter scan: " + std::to_string(out.size()) + " candidate(s) at delta " +
                    std::to_string(delta));
    return out;
}

namespace {

// Start-offset intervals covered by a windowed scan: stride-aligned starts
// within `radius` of each anchor address, clamped to the region, merged so
// overlapping anchors are not scanned twice.
std::vector<std::pair<uint64_t, uint64_t>> anchor_intervals(
    const MemoryRegion& region, uint64_t scan_length, size_t key_length,
    uint64_t radius, uint32_t stride, std::span<const IvCandidate> anchors) {
    std::vector<std::pair<uint64_t, uint64_t>> spans;
    if (scan_length < key_length) return spans;
    const uint64_t last_start = scan_length - key_length;
    for (const auto& anchor : anchors) {
        const uint64_t addr = anchor.address;
        if (addr + radius < region.base_address ||
            addr > region.base_address + scan_length + radius)
            continue;
        uint64_t lo = addr >= region.base_address + radius
                          ? addr - radius - region.base_address
                          : 0;
        lo = (lo + stride - 1) / stride * stride;
        uint64_t hi = addr + radius - region.base_address;  // inclusive start bound
        hi = std::min(hi, last_start);
        if (lo > hi) continue;
        spans.emplace_back(lo, hi + 1);
    }
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<uint64_t, uint64_t>> merged;
    for (auto& s : spans) {
        if (!merged.empty() && s.first <= merged.back().second)
            merged.back().second = std::max(merged.back().second, s.second);
        else
            merged.push_back(s);
    }
    return merged;
}

}  // namespace

KeyScanResult scan_key_candidates(const MemorySnapshot& snap_a,
                                  const MemorySnapshot* snap_b,
                                  size_t key_length,
                                  const EntropyConfig& config,
                                  const ScanWindow& window,
                                  std::span<const IvCandidate> anchors,
                                  const ScanOptions& opts) {
    const double threshold = config.threshold_for(key_length);
    const uint32_t stride = config.scan_stride;

    KeyScanResult result;
    auto matched = match_regions(snap_a, snap_b, &result.unmatched_regions);

    std::vector<ChunkTask> tasks;
    for (size_t mi = 0; mi < matched.size(); ++mi) {
        const auto& m = matched[mi];
        if (m.scan_length < key_length) continue;
        const uint64_t starts_end = m.scan_length - key_length + 1;
        if (window.enabled) {
            for (auto [lo, hi] : anchor_intervals(*m.a, m.scan_length, key_length,
                                                  window.radius, stride, anchors))
                append_chunks(tasks, mi, lo, hi, stride);
        } else {
            append_chunks(tasks, mi, 0, starts_end, stride);
        }
    }

    const auto lg = log2_table(key_length);
    std::vector<std::vector<KeyCandidate>> hits(tasks.size());
    uint64_t examined = 0;

    #pragma omp parallel for schedule(dynamic) reduction(+ : examined) \
        num_threads(resolve_threads(opts))
    for (int64_t t = 0; t < static_cast<int64_t>(tasks.size()); ++t) {
        const auto& task = tasks[t];
        const auto& m = matched[task.region];
        const uint8_t* pa = m.a->data.data();
        const uint8_t* pb = m.b ? m.b->data.data() : nullptr;
        uint64_t local_examined = 0;
        entropy_windows(pa, task.begin, task.end, key_length, stride, lg.data(),
                        [&](uint64_t o, double h) {
                            ++local_examined;
                            if (h <= threshold) return;
                            if (pb && std::memcmp(pa + o, pb + o, key_length) != 0)
                                return;  // moved between extracts: not key material
                            KeyCandidate c;
                            c.snapshot_id = snap_a.snapshot_id;
                            c.address = m.a->base_address + o;
                            c.value.assign(pa + o, pa + o + key_length);
                            c.entropy = h;
                            hits[t].push_back(std::move(c));
                        });
        examined += local_examined;
    }
    result.segments_examined = examined;

    // Same value at several addresses collapses to the lowest address.
    std::set<Bytes> seen;
    for (auto& h : hits)
        for (auto& c : h)
            if (seen.insert(c.value).second) result.candidates.push_back(std::move(c));

    MEMSCRY_LOG(logging::Level::info,
                "key scan: " + std::to_string(result.candidates.size()) +
                    " candidate(s) over " + std::to_string(examined) + " segments");
    return result;
}

EntropyHistogram entropy_histogram(const MemorySnapshot& snap,
                                   size_t segment_length,
                                   std::span<const double> edges,
                                   const EntropyConfig& config,
                                   const ScanOptions& opts) {
    if (segment_length == 0) throw EmptyInputError("segment length is zero");
    for (size_t i = 1; i < edges.size(); ++i)
        if (edges[i] <= edges[i - 1])
            throw InvalidInputError("histogram edges must be strictly increasing");

    const uint32_t stride = config.scan_stride;
    auto matched = match_regions(snap, nullptr, nullptr);
    std::vector<ChunkTask> tasks;
    for (size_t mi = 0; mi < matched.size(); ++mi) {
        if (matched[mi].scan_length < segment_length) continue;
        append_chunks(tasks, mi, 0, matched[mi].scan_length - segment_length + 1,
                      stride);
    }

    EntropyHistogram h;
    h.bucket_edges.assign(edges.begin(), edges.end());
    h.counts.assign(edges.size(), 0);

    const auto lg = log2_table(segment_length);
    std::vector<std::vector<uint64_t>> counts(tasks.size());
    uint64_t total = 0;

    #pragma omp parallel for schedule(dynamic) reduction(+ : total) \
        num_threads(resolve_threads(opts))
    for (int64_t t = 0; t < static_cast<int64_t>(tasks.size()); ++t) {
        const auto& task = tasks[t];
        const uint8_t* p = matched[task.region].a->data.data();
        std::vector<uint64_t> local(edges.size(), 0);
        uint64_t local_total = 0;
        entropy_windows(p, task.begin, task.end, segment_length, stride, lg.data(),
                        [&](uint64_t, double value) {
                            ++local_total;
                            for (size_t k = 0; k < edges.size(); ++k)
                                if (value > edges[k]) ++local[k];
                        });
        counts[t] = std::move(local);
        total += local_total;
    }

    for (const auto& local : counts)
        for (size_t k = 0; k < local.size(); ++k) h.counts[k] += local[k];
    h.total_segments = total;
    return h;
}

nlohmann::json histogram_to_json(const EntropyHistogram& h) {
    return {{"bucket_edges", h.bucket_edges},
            {"counts", h.counts},
            {"total_segments", h.total_segments}};
}

std::string histogram_to_tsv(const EntropyHistogram& h) {
    std::string out = "edge\tcount\tfraction\n";
    for (size_t k = 0; k < h.bucket_edges.size(); ++k) {
        const double frac = h.total_segments
                                ? static_cast<double>(h.counts[k]) /
                                      static_cast<double>(h.total_segments)
                                : 0.0;
        char line[96];
        std::snprintf(line, sizeof line, "%.6g\t%llu\t%.6f\n", h.bucket_edges[k],
                      static_cast<unsigned long long>(h.counts[k]), frac);
        out += line;
    }
    return out;
}

nlohmann::json candidates_to_json(const CandidateSet& set) {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& c : set.key_candidates) {
        keys.push_back({{"snapshot_id", c.snapshot_id},
                        {"address", c.address},
                        {"value", hex_encode(c.value)},
                        {"entropy", c.entropy}});
    }
    auto iv_array = [](const std::vector<IvCandidate>& ivs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : ivs) {
            arr.push_back({{"snapshot_id", c.snapshot_id},
                           {"address", c.address},
                           {"value", hex_encode(ByteView(c.value.data(), 16))},
                           {"observed_delta", c.observed_delta},
                           {"little_endian", c.little_endian}});
        }
        return arr;
    };
    return {{"cipher", cipher_name(set.cipher)},
            {"key_candidates", std::move(keys)},
            {"iv_candidates", iv_array(set.iv_candidates_c2s)},
            {"iv_candidates_s2c", iv_array(set.iv_candidates_s2c)},
            {"snapshot_positions", set.snapshot_positions}};
}

CandidateSet candidates_from_json(const nlohmann::json& doc) {
    CandidateSet set;
    try {
        const auto cipher = cipher_from_name(doc.at("cipher").get<std::string>());
        if (!cipher)
            throw InvalidInputError("unknown cipher in candidates document");
        set.cipher = *cipher;
        for (const auto& k : doc.at("key_candidates")) {
            KeyCandidate c;
            c.snapshot_id = k.value("snapshot_id", "");
            c.address = k.at("address").get<uint64_t>();
            c.value = hex_decode(k.at("value").get<std::string>());
            c.entropy = k.at("entropy").get<double>();
            set.key_candidates.push_back(std::move(c));
        }
        auto read_ivs = [](const nlohmann::json& arr) {
            std::vector<IvCandidate> out;
            for (const auto& v : arr) {
                IvCandidate c;
                c.snapshot_id = v.value("snapshot_id", "");
                c.address = v.at("address").get<uint64_t>();
                const Bytes value = hex_decode(v.at("value").get<std::string>());
                if (value.size() != 16)
                    throw InvalidInputError("IV candidate value must be 16 bytes");
                std::copy(value.begin(), value.end(), c.value.begin());
                c.observed_delta = v.at("observed_delta").get<uint64_t>();
                c.little_endian = v.value("little_endian", false);
                out.push_back(std::move(c));
            }
            return out;
        };
        set.iv_candidates_c2s = read_ivs(doc.at("iv_candidates"));
        if (doc.contains("iv_candidates_s2c"))
            set.iv_candidates_s2c = read_ivs(doc.at("iv_candidates_s2c"));
        if (doc.contains("snapshot_positions"))
            set.snapshot_positions =
                doc.at("snapshot_positions").get<std::vector<uint64_t>>();
    } catch (const nlohmann::json::exception& ex) {
        throw InvalidInputError(std::string("candidates document malformed: ") +
                                ex.what());
    }
    return set;
}

}  // namespace memscry
