#pragma once

#include <stdexcept>
#include <string>

namespace prunebench {

enum class errc {
    invalid_argument,
    dimension_mismatch,
    io,
    parse,
    bad_magic,
    truncated,
    shape_mismatch,
    checksum_mismatch,
    bad_header,
    unknown_tensor,
    missing_tensor,
    not_positive_definite,
    insufficient_damping,
    unavailable,
    network,
    invariant,
};

inline const char* to_string(errc code) {
    switch (code) {
        case errc::invalid_argument: return "invalid_argument";
        case errc::dimension_mismatch: return "dimension_mismatch";
        case errc::io: return "io";
        case errc::parse: return "parse";
        case errc::bad_magic: return "bad_magic";
        case errc::truncated: return "truncated";
        case errc::shape_mismatch: return "shape_mismatch";
        case errc::checksum_mismatch: return "checksum_mismatch";
        case errc::bad_header: return "bad_header";
        case errc::unknown_tensor: return "unknown_tensor";
        case errc::missing_tensor: return "missing_tensor";
        case errc::not_positive_definite: return "not_positive_definite";
        case errc::insufficient_damping: return "insufficient_damping";
        case errc::unavailable: return "unavailable";
        case errc::network: return "network";
        case errc::invariant: return "invariant";
    }
    return "unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

// Process exit status for each error class: 2 bad input, 3 numerical failure,
// 4 internal invariant breach.
inline int exit_code(errc code) {
    switch (code) {
        case errc::not_positive_definite:
        case errc::insufficient_damping:
            return 3;
        case errc::invariant:
            return 4;
        default:
            return 2;
    }
}

}  // namespace prunebench
