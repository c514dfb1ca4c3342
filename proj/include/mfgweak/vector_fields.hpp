#pragma once

#include "mfgweak/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mfgw {

// Diffusion fields sigma_1..sigma_m on R^d.  Jacobians are part of the
// interface (the drift correction, tangent flows and bracket tests all need
// them); implementations supply closed forms.
class VectorFieldSet {
  public:
    virtual ~VectorFieldSet() = default;

    virtual Index dim_state() const = 0;
    virtual Index dim_noise() const = 0;

    virtual Vec sigma(Index l, const Vec& x) const = 0;
    virtual Mat jac_sigma(Index l, const Vec& x) const = 0; // d x d

    // d x m matrix with sigma_l as column l.
    Mat sigma_matrix(const Vec& x) const;

    // Jacobian of the drift-corrected coefficient (see ito_drift below).
    // The default differentiates ito_drift centrally; closed forms override.
    virtual Mat jac_drift(const Vec& x) const;

    virtual std::string name() const = 0;
};

// Drift that makes the Ito equation dX = b dt + sigma dW match the
// drift-free Stratonovich equation dX = sigma o dW:
//   b^i = 1/2 sum_l sum_j sigma_l^j d_j sigma_l^i = 1/2 sum_l Jac(sigma_l) sigma_l.
Vec ito_drift(const VectorFieldSet& vfs, const Vec& x);

// Constant fields: column l of `sigma` is sigma_l.  Zero drift.
std::shared_ptr<VectorFieldSet> make_constant_fields(Mat sigma);

// d = m = 1, sigma(x) = s0 + s1 x.
std::shared_ptr<VectorFieldSet> make_scalar_linear_fields(double s0, double s1);

// d = m = 1, sigma(x) = offset + amp sin(freq x).
std::shared_ptr<VectorFieldSet> make_sine_fields(double amp, double freq,
                                                 double offset);

// d = m = 2, sigma_1 = (1, 0), sigma_2 = (0, x_1): the canonical example of a
// degenerate diffusion whose first bracket restores full rank.
std::shared_ptr<VectorFieldSet> make_heisenberg_fields();

// Bracket-spanning test at a point.  Level 0 holds the fields themselves;
// level k+1 adds the commutators of every field with every level-k bracket.
// Levels beyond the first differentiate bracket values by nested central
// differences (step 1e-4).
struct HormanderReport {
    int depth = 0;
    Index rank = 0;
    Mat vectors; // d x K, every bracket value at the probe point
    Vec singular_values;
};

HormanderReport hormander_rank(const VectorFieldSet& vfs, const Vec& x, int depth);

} // namespace mfgw
