#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace mfgw {

// Every failure the library reports is one of these kinds.  The C wrapper maps
// them onto process exit codes, so the granularity here is deliberate: config
// problems must stay distinct from numerical blowups and from non-convergence.
enum class ErrorKind {
    Config,             // bad or inconsistent configuration / arguments
    NonConvergence,     // an iteration hit its cap without meeting its tolerance
    NonFinite,          // a state, weight or regression target left the finite range
    SingularFlow,       // tangent flow condition number beyond the invertibility guard
    RegressionSingular, // normal equations unusable even with ridge
    ShapeMismatch,      // incompatible dimensions between operands
    EvaluatorFailure,   // a user-supplied evaluator threw or returned non-finite
    ModeUnsupported,    // requested transport mode not available for these inputs
    DepthUnsupported,   // bracket depth beyond what the field set can differentiate
    InsufficientNodes,  // operation needs more grid nodes than provided
    MissingArtifacts,   // expected run-directory files absent
    BandwidthInvalid,   // kernel bandwidth not positive
    Io,                 // filesystem read/write failure
    Internal,           // invariant broken inside the library itself
};

const char* error_kind_name(ErrorKind k);

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

  private:
    ErrorKind kind_;
};

// Small stream builder so call sites can write
//   throw ErrorBuilder(ErrorKind::Config) << "particles must be positive, got " << n;
class ErrorBuilder {
  public:
    explicit ErrorBuilder(ErrorKind kind) : kind_(kind) {}

    template <class T>
    ErrorBuilder& operator<<(const T& value) {
        stream_ << value;
        return *this;
    }

    [[noreturn]] void raise() const { throw Error(kind_, stream_.str()); }

    operator Error() const { return Error(kind_, stream_.str()); }

  private:
    ErrorKind kind_;
    std::ostringstream stream_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) fail(kind, message);
}

} // namespace mfgw
