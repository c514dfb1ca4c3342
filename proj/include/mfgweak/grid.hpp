#pragma once

#include "mfgweak/errors.hpp"
#include "mfgweak/types.hpp"

namespace mfgw {

// Uniform time grid t0 = node(0) < ... < node(steps) = horizon.
// Node indices run over [0, steps]; step indices over [0, steps).
struct TimeGrid {
    double t0 = 0.0;
    double horizon = 1.0;
    Index steps = 0;

    TimeGrid() = default;
    TimeGrid(double t0_, double horizon_, Index steps_)
        : t0(t0_), horizon(horizon_), steps(steps_) {
        require(steps > 0, ErrorKind::Config, "grid needs at least one step");
        require(horizon > t0, ErrorKind::Config, "grid horizon must exceed t0");
    }

    double dt() const { return (horizon - t0) / static_cast<double>(steps); }
    double node(Index n) const { return t0 + dt() * static_cast<double>(n); }
    Index nodes() const { return steps + 1; }
};

} // namespace mfgw
