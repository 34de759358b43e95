#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace memscry {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Snapshot manifest violations: overlapping or out-of-bounds regions, bad fields.
class ManifestError : public Error { using Error::Error; };

// Capture file is not pcap/pcapng or uses an unsupported link layer.
class CaptureFormatError : public Error { using Error::Error; };

class NoSessionError : public Error { using Error::Error; };
class AmbiguousSessionError : public Error { using Error::Error; };

// TCP stream has unrecoverable holes; byte ranges are in the message.
class IncompleteStreamError : public Error { using Error::Error; };

class VersionParseError : public Error { using Error::Error; };
class PacketParseError : public Error { using Error::Error; };
class UnsupportedCipherError : public Error { using Error::Error; };
class HandshakeIncompleteError : public Error { using Error::Error; };

// Ciphertext length not a multiple of the AES block: wrong MAC length or ETM mode.
class CiphertextAlignmentError : public Error { using Error::Error; };

class EmptyInputError : public Error { using Error::Error; };
class NoCommonRegionsError : public Error { using Error::Error; };
class DegenerateDeltaError : public Error { using Error::Error; };
class InvalidInputError : public Error { using Error::Error; };

class NoValidCombinationError : public Error {
public:
    NoValidCombinationError(const std::string& msg, uint64_t tried)
        : Error(msg), tried_combinations(tried) {}
    uint64_t tried_combinations;
};

class StreamDesyncError : public Error {
public:
    StreamDesyncError(const std::string& msg, uint64_t offset)
        : Error(msg), byte_offset(offset) {}
    uint64_t byte_offset;
};

class TruncatedStreamError : public Error { using Error::Error; };

class ConfigError : public Error { using Error::Error; };

}  // namespace memscry
