#pragma once

#include <ostream>

#include <Eigen/Dense>

#include "atomflow/chem.hpp"
#include "atomflow/tensor.hpp"

namespace atomflow {

// Pairwise distance bounds over graph separations of 1 to 5 bonds. The upper
// bound is the cumulative covalent reference length along a shortest-hop
// path; the lower bound is the van-der-Waals contact distance clamped to
// leave a nonempty interval below the upper bound.
struct BoundsMatrix {
    int n = 0;
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
    Eigen::MatrixXi constrained; // 1 when 1 <= hops <= 5

    bool pair_constrained(int i, int j) const { return constrained(i, j) != 0; }
};

inline constexpr int kMaxBoundedHops = 5;
inline constexpr double kBoundsMargin = 0.1; // Å

BoundsMatrix bounds_matrix(const Molecule& mol, const GraphDistances& dists);
BoundsMatrix bounds_matrix(const Molecule& mol, const BondGraph& g);

// Sum over constrained pairs of the squared excursion outside [L, U].
double phys_loss_value(const Eigen::MatrixXd& coords, const BoundsMatrix& bm);

// Analytic gradient of phys_loss_value w.r.t. coordinates.
Eigen::MatrixXd phys_loss_grad(const Eigen::MatrixXd& coords, const BoundsMatrix& bm);

// Differentiable scalar node wrapping the loss above.
Tensor phys_loss(const Tensor& coords, const BoundsMatrix& bm);

// One line "i,j,hops,L,U" per constrained pair (i < j), after a header.
void write_bounds_csv(std::ostream& os, const GraphDistances& dists, const BoundsMatrix& bm);

} // namespace atomflow
