#pragma once

#include <bitset>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "atomflow/rng.hpp"

namespace atomflow {

// Atom vocabulary. Wild is the catch-all type for anything outside the named
// set; it borrows carbon radii and is exempt from valence checks.
enum class Element : std::uint8_t { C, N, O, F, S, Cl, Br, I, Wild };

inline constexpr int kAtomVocab = 9;

struct ElementInfo {
    const char* symbol;
    double covalent_radius; // Å
    double vdw_radius;      // Å
    int max_valence;
};

const ElementInfo& element_info(Element e);
std::optional<Element> element_from_symbol(std::string_view s);

struct Molecule {
    std::vector<Element> atoms;
    Eigen::MatrixXd coords; // N x 3, Å
    std::string provenance;

    int size() const { return static_cast<int>(atoms.size()); }
};

// Bonds inferred from interatomic distances. Edge (i,j) exists iff
// dist(i,j) <= cov_i + cov_j + tol. Reference length of an edge is the sum of
// covalent radii, independent of the actual distance.
struct BondGraph {
    int n = 0;
    std::vector<std::pair<int, int>> edges; // i < j
    std::vector<std::vector<int>> adjacency;

    int degree(int i) const { return static_cast<int>(adjacency[i].size()); }
};

inline constexpr double kBondPerceptionTol = 0.4; // Å

BondGraph perceive_bonds(const Molecule& mol, double tol = kBondPerceptionTol);

// Reference length of a hypothetical bond between atoms i and j of mol.
double bond_reference_length(const Molecule& mol, int i, int j);

// All-pairs shortest paths over the bond graph. hops(i,j) = -1 and
// path_length(i,j) = +inf for unreachable pairs. path_length is the smallest
// cumulative reference length among minimum-hop paths.
struct GraphDistances {
    Eigen::MatrixXi hops;
    Eigen::MatrixXd path_length;
};

GraphDistances graph_distances(const Molecule& mol, const BondGraph& g);

// Deterministic atom ordering: Weisfeiler-Lehman refinement keys a depth-first
// traversal from the smallest-key atom of each component, components emitted
// largest first. Invariant to relabeling whenever WL separates the atoms.
std::vector<int> canonical_order(const Molecule& mol, const BondGraph& g);

// Relabeling-invariant 64-bit hash over WL labels up to the given radius.
std::uint64_t wl_hash(const Molecule& mol, const BondGraph& g, int radius = 2);

using Fingerprint = std::bitset<2048>;

// WL labels of radius 0..2 hashed into 2048 bins.
Fingerprint fingerprint(const Molecule& mol, const BondGraph& g);

double tanimoto(const Fingerprint& a, const Fingerprint& b);

// RMSD between coordinate sets after optimal rigid superposition (proper
// rotation, determinant-corrected) and centering. Rows are positions.
double kabsch_rmsd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
// Same, requiring equal atom counts and element sequences.
double kabsch_rmsd(const Molecule& a, const Molecule& b);

// Uniform random rotation from a normalized Gaussian quaternion.
Eigen::Matrix3d random_rotation(Rng& rng);

Eigen::RowVector3d centroid(const Eigen::MatrixXd& coords);

// Applies a rotation to every position row (about the origin).
Eigen::MatrixXd rotate_coords(const Eigen::MatrixXd& coords, const Eigen::Matrix3d& rot);

Molecule rotated(const Molecule& mol, const Eigen::Matrix3d& rot);

// Applies a permutation: result atom k = mol atom perm[k].
Molecule permuted(const Molecule& mol, const std::vector<int>& perm);

} // namespace atomflow
