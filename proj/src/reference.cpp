#include <algorithm>
#include <cstring>
#include <set>

#include "memscry/errors.hpp"
#include "memscry/memory_analysis.hpp"

// Serial reference implementations. Straight-line loops, naive per-segment
// entropy, no shared state: the ground the parallel kernels are tested
// against and the baseline the benchmark compares with.

namespace memscry::reference {

std::vector<IvCandidate> scan_ctr_iv_candidates(const MemorySnapshot& snap_a,
                                                const MemorySnapshot& snap_b,
                                                uint64_t delta,
                                                const EntropyConfig& config,
                                                uint32_t stride_override) {
    if (delta == 0)
        throw DegenerateDeltaError("no cipher blocks between the snapshots");
    const uint32_t stride = stride_override ? stride_override : config.scan_stride;
    const Counter128 want{0, delta};

    std::vector<IvCandidate> out;
    bool any_common = false;
    for (const auto& ra : snap_a.regions) {
        const MemoryRegion* rb = nullptr;
        for (const auto& cand : snap_b.regions)
            if (cand.base_address == ra.base_address) { rb = &cand; break; }
        if (!rb) continue;
        any_common = true;
        const uint64_t len = std::min(ra.length(), rb->length());
        if (len < 16) continue;
        if (ra.length() == rb->length() &&
            std::memcmp(ra.data.data(), rb->data.data(), ra.length()) == 0)
            continue;
        for (uint64_t o = 0; o + 16 <= len; o += stride) {
            const uint8_t* pa = ra.data.data() + o;
            const uint8_t* pb = rb->data.data() + o;
            IvCandidate c;
            if (Counter128::from_be(pb) - Counter128::from_be(pa) == want) {
                c.little_endian = false;
            } else {
                continue;
            }
            c.snapshot_id = snap_a.snapshot_id;
            c.address = ra.base_address + o;
            std::memcpy(c.value.data(), pa, 16);
            c.observed_delta = delta;
            out.push_back(std::move(c));
        }
    }
    if (!any_common)
        throw NoCommonRegionsError("snapshots share no region base address");
    return out;
}

KeyScanResult scan_key_candidates(const MemorySnapshot& snap_a,
                                  const MemorySnapshot* snap_b,
                                  size_t key_length,
                                  const EntropyConfig& config,
                                  const ScanWindow& window,
                                  std::span<const IvCandidate> anchors) {
    const double threshold = config.threshold_for(key_length);
    const uint32_t stride = config.scan_stride;

    KeyScanResult result;
    std::set<Bytes> seen;
    for (const auto& ra : snap_a.regions) {
        const MemoryRegion* rb = nullptr;
        if (snap_b) {
            for (const auto& cand : snap_b->regions)
                if (cand.base_address == ra.base_address) { rb = &cand; break; }
            if (!rb) {
                result.unmatched_regions.push_back(ra.base_address);
                continue;
            }
        }
        const uint64_t len = rb ? std::min(ra.length(), rb->length()) : ra.length();
        for (uint64_t o = 0; o + key_length <= len; o += stride) {
            if (window.enabled) {
                const uint64_t addr = ra.base_address + o;
                bool near = false;
                for (const auto& anchor : anchors) {
                    if (addr + window.radius >= anchor.address &&
                        addr <= anchor.address + window.radius) {
                        near = true;
                        break;
                    }
                }
                if (!near) continue;
            }
            ++result.segments_examined;
            const uint8_t* pa = ra.data.data() + o;
            const double h = shannon_entropy(ByteView(pa, key_length));
            if (h <= threshold) continue;
            if (rb && std::memcmp(pa, rb->data.data() + o, key_length) != 0)
                continue;
            KeyCandidate c;
            c.snapshot_id = snap_a.snapshot_id;
            c.address = ra.base_address + o;
            c.value.assign(pa, pa + key_length);
            c.entropy = h;
            if (seen.insert(c.value).second)
                result.candidates.push_back(std::move(c));
        }
    }
    if (snap_b) {
        for (const auto& rb : snap_b->regions)
            if (!snap_a.region_at(rb.base_address))
                result.unmatched_regions.push_back(rb.base_address);
        std::sort(result.unmatched_regions.begin(), result.unmatched_regions.end());
    }
    return result;
}

EntropyHistogram entropy_histogram(const MemorySnapshot& snap,
                                   size_t segment_length,
                                   std::span<const double> edges,
                                   const EntropyConfig& config) {
    if (segment_length == 0) throw EmptyInputError("segment length is zero");
    for (size_t i = 1; i < edges.size(); ++i)
        if (edges[i] <= edges[i - 1])
            throw InvalidInputError("histogram edges must be strictly increasing");

    EntropyHistogram h;
    h.bucket_edges.assign(edges.begin(), edges.end());
    h.counts.assign(edges.size(), 0);
    for (const auto& r : snap.regions) {
        if (r.length() < segment_length) continue;
        for (uint64_t o = 0; o + segment_length <= r.length();
             o += config.scan_stride) {
            const double value =
                shannon_entropy(ByteView(r.data.data() + o, segment_length));
            ++h.total_segments;
            for (size_t k = 0; k < edges.size(); ++k)
                if (value > edges[k]) ++h.counts[k];
        }
    }
    return h;
}

}  // namespace memscry::reference
