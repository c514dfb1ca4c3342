#include "mfgweak/errors.hpp"

namespace mfgw {

const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "config";
        case ErrorKind::NonConvergence: return "non-convergence";
        case ErrorKind::NonFinite: return "non-finite";
        case ErrorKind::SingularFlow: return "singular-flow";
        case ErrorKind::RegressionSingular: return "regression-singular";
        case ErrorKind::ShapeMismatch: return "shape-mismatch";
        case ErrorKind::EvaluatorFailure: return "evaluator-failure";
        case ErrorKind::ModeUnsupported: return "mode-unsupported";
        case ErrorKind::DepthUnsupported: return "depth-unsupported";
        case ErrorKind::InsufficientNodes: return "insufficient-nodes";
        case ErrorKind::MissingArtifacts: return "missing-artifacts";
        case ErrorKind::BandwidthInvalid: return "bandwidth-invalid";
        case ErrorKind::Io: return "io";
        case ErrorKind::Internal: return "internal";
    }
    return "unknown";
}

} // namespace mfgw
