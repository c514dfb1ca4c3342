#pragma once

#include "mfgweak/grid.hpp"
#include "mfgweak/rng.hpp"
#include "mfgweak/types.hpp"
#include "mfgweak/vector_fields.hpp"

#include <string>
#include <vector>

namespace mfgw {

// Initial state: a point mass, or independent per-dimension Gaussians around
// it (drawn from the "initial" sub-stream of the run seed).
struct InitialCondition {
    Vec point;
    Vec sd; // empty or zero => deterministic start

    static InitialCondition at(Vec x0);
    static InitialCondition gaussian(Vec mean, Vec sd);
    bool deterministic() const;
};

enum class Scheme {
    EulerIto,          // X' = X + b dt + sigma dW with the corrected drift
    HeunStratonovich,  // drift-free midpoint scheme for dX = sigma o dW
};

struct SimulateOptions {
    TimeGrid grid;
    Index particles = 0;
    u64 seed = 0;
    Index store_stride = 1; // keep nodes 0, s, 2s, ...; the last node always
    int threads = 1;
    Scheme scheme = Scheme::EulerIto;
};

// Particle trajectories.  States are kept at the stored nodes only; Brownian
// increments are never kept at all -- each one is a pure function of
// (seed, particle, step, component) and is regenerated on demand, so bump
// oracles and replays see exactly the noise the simulation used.
struct PathEnsemble {
    TimeGrid grid;
    Index dim = 0;
    Index noise_dim = 0;
    Index particles = 0;
    Index store_stride = 1;
    u64 seed = 0;
    Scheme scheme = Scheme::EulerIto;
    std::vector<Index> stored_nodes;
    std::vector<Mat> stored; // one particles x dim block per stored node

    bool stores(Index node) const;
    const Mat& states(Index node) const;
    Vec state(Index node, Index i) const;
    bool full_storage() const { return store_stride == 1; }

    double dt() const { return grid.dt(); }
    // Increment of Brownian component l over step n for particle i.
    double increment(Index i, Index step, Index l) const;
    Vec increments(Index i, Index step) const; // length noise_dim
};

PathEnsemble simulate_forward(const VectorFieldSet& vfs, const InitialCondition& init,
                              const SimulateOptions& opts);

// Re-runs one particle with dW[bump_step][bump_component] shifted by h and
// returns its state at out_node.  The oracle against which the tangent-flow
// representation of the noise derivative is judged.
Vec resimulate_with_bump(const VectorFieldSet& vfs, const PathEnsemble& paths,
                         Index particle, Index bump_step, Index bump_component,
                         double h, Index out_node);

// First-variation (tangent) flow along each stored path, with its inverse.
// J[node] rows are row-major vectorizations of the d x d Jacobian.
struct TangentFlow {
    TimeGrid grid;
    Index particles = 0;
    Index dim = 0;
    std::vector<Mat> J;    // node -> particles x (dim*dim)
    std::vector<Mat> Jinv; // same layout
    double max_condition = 0.0;

    Mat jac(Index node, Index i) const;
    Mat jac_inv(Index node, Index i) const;
};

TangentFlow tangent_flow(const VectorFieldSet& vfs, const PathEnsemble& paths,
                         int threads = 1);

// Noise derivative of the state: J[t] J[u]^{-1} sigma(X_u) for u <= t, the
// zero matrix for t < u.  Requires full path storage.
Mat malliavin_derivative(const TangentFlow& tf, const VectorFieldSet& vfs,
                         const PathEnsemble& paths, Index u_step, Index t_step,
                         Index particle);

// Binary snapshot of an ensemble (resume / determinism checks).
void save_snapshot(const std::string& path, const PathEnsemble& paths);
PathEnsemble load_snapshot(const std::string& path);

// CSV export: particle, node, time, state components.  At most `max_nodes`
// stored nodes are written (evenly strided, last node always included).
void write_ensemble_csv(const std::string& path, const PathEnsemble& paths,
                        Index max_nodes = 33);

} // namespace mfgw
