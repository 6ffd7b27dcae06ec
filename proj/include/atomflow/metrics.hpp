#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "atomflow/chem.hpp"
#include "atomflow/predictor.hpp"
#include "atomflow/rng.hpp"
#include "atomflow/sampler.hpp"

namespace atomflow {

// Every non-wild atom's perceived degree is within its valence cap and, for
// molecules of two or more atoms, at least one.
bool validity(const Molecule& mol);

// The perceived bond graph is a single component.
bool connectivity(const Molecule& mol);

inline constexpr double kBondLengthTolerance = 0.25; // fraction of the reference length
inline constexpr double kClashFactor = 0.7;          // fraction of the vdW radius sum
inline constexpr double kFlatnessTolerance = 0.25;   // Å from the best-fit ring plane
inline constexpr int kFlatRingMinSize = 5;
inline constexpr int kFlatRingMaxSize = 6;

// Physical-plausibility battery. A molecule passes only if every individual
// check passes.
struct PbChecks {
    bool bond_lengths = false; // bonds within [0.75, 1.25] x reference length
    bool angles = false;       // 2-hop distances within [0.7 x vdW sum, path length]
    bool clash = false;        // distant or disconnected pairs at >= 0.7 x vdW sum
    bool flatness = false;     // small rings of low-degree atoms near-planar
    bool connected = false;
    bool valence = false;

    bool pass() const {
        return bond_lengths && angles && clash && flatness && connected && valence;
    }
    std::vector<std::pair<std::string, bool>> named() const;
};

PbChecks pb_lite(const Molecule& mol);

// 1 - mean pairwise Tanimoto similarity over structural fingerprints.
// Requires at least two molecules.
double diversity(const std::vector<Molecule>& mols);

// Fraction of molecules whose structural hash is absent from the training
// set's hashes.
double novelty(const std::vector<Molecule>& mols, const std::unordered_set<std::uint64_t>& train_hashes);

std::unordered_set<std::uint64_t> hash_set(const std::vector<Molecule>& mols);

struct MoleculeFlags {
    bool valid = false;
    bool connected = false;
    bool novel = false;
    PbChecks pb;
    bool pb_pass = false;
};

struct MetricsReport {
    std::vector<MoleculeFlags> per_molecule;
    double validity = 0.0;
    double connectivity = 0.0;
    double novelty = 0.0;   // 0 when no training hashes were given
    double diversity = 0.0; // 0 for fewer than two molecules
    double pb_rate = 0.0;
};

MetricsReport evaluate(const std::vector<Molecule>& mols,
                       const std::unordered_set<std::uint64_t>* train_hashes = nullptr);

// Relative equivariance error of an endpoint predictor at time t: the input
// is noised once, rotated n_rot ways, predictions are counter-rotated and
// normalized per atom, and the variance across rotations is averaged over
// atoms and coordinates. Zero for exactly rotation-equivariant predictors.
double equivariance_error(const EndpointPredictor& predictor, const Molecule& mol, double t,
                          int n_rot, Rng& rng);

// For each renoising time tau: partially noise every test molecule to tau,
// integrate the sampler over the remaining schedule, and report the
// plausibility pass rate of the outputs.
std::vector<double> renoise_probe(const EndpointPredictor& predictor,
                                  const std::vector<Molecule>& test_mols,
                                  const std::vector<double>& tau_grid, const SampleConfig& cfg,
                                  std::uint64_t seed);

} // namespace atomflow
