#include "atomflow/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace atomflow {

BoundsMatrix bounds_matrix(const Molecule& mol, const GraphDistances& dists) {
    const int n = mol.size();
    BoundsMatrix bm;
    bm.n = n;
    bm.lower = Eigen::MatrixXd::Zero(n, n);
    bm.upper = Eigen::MatrixXd::Zero(n, n);
    bm.constrained = Eigen::MatrixXi::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            int hops = dists.hops(i, j);
            if (hops < 1 || hops > kMaxBoundedHops) continue;
            double upper = dists.path_length(i, j);
            double vdw = element_info(mol.atoms[static_cast<std::size_t>(i)]).vdw_radius +
                         element_info(mol.atoms[static_cast<std::size_t>(j)]).vdw_radius;
            double lower = std::min(vdw - kBoundsMargin, upper - kBoundsMargin);
            bm.upper(i, j) = bm.upper(j, i) = upper;
            bm.lower(i, j) = bm.lower(j, i) = lower;
            bm.constrained(i, j) = bm.constrained(j, i) = 1;
        }
    }
    return bm;
}

BoundsMatrix bounds_matrix(const Molecule& mol, const BondGraph& g) {
    return bounds_matrix(mol, graph_distances(mol, g));
}

double phys_loss_value(const Eigen::MatrixXd& coords, const BoundsMatrix& bm) {
    if (coords.rows() != bm.n || coords.cols() != 3)
        throw std::invalid_argument("phys_loss: coordinates do not match the bounds matrix");
    double loss = 0.0;
    for (int i = 0; i < bm.n; ++i) {
        for (int j = i + 1; j < bm.n; ++j) {
            if (!bm.pair_constrained(i, j)) continue;
            double d = (coords.row(i) - coords.row(j)).norm();
            if (d > bm.upper(i, j)) {
                double e = d - bm.upper(i, j);
                loss += e * e;
            } else if (d < bm.lower(i, j)) {
                double e = bm.lower(i, j) - d;
                loss += e * e;
            }
        }
    }
    return loss;
}

Eigen::MatrixXd phys_loss_grad(const Eigen::MatrixXd& coords, const BoundsMatrix& bm) {
    if (coords.rows() != bm.n || coords.cols() != 3)
        throw std::invalid_argument("phys_loss: coordinates do not match the bounds matrix");
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(bm.n, 3);
    for (int i = 0; i < bm.n; ++i) {
        for (int j = i + 1; j < bm.n; ++j) {
            if (!bm.pair_constrained(i, j)) continue;
            Eigen::RowVector3d diff = coords.row(i) - coords.row(j);
            double d = diff.norm();
            if (d < 1e-12) continue; // coincident pair: direction undefined
            double coeff = 0.0;
            if (d > bm.upper(i, j))
                coeff = 2.0 * (d - bm.upper(i, j)) / d;
            else if (d < bm.lower(i, j))
                coeff = 2.0 * (d - bm.lower(i, j)) / d;
            grad.row(i) += coeff * diff;
            grad.row(j) -= coeff * diff;
        }
    }
    return grad;
}

Tensor phys_loss(const Tensor& coords, const BoundsMatrix& bm) {
    Eigen::MatrixXd x = coords.value();
    double v = phys_loss_value(x, bm);
    return custom_unary(
        coords, Eigen::MatrixXd::Constant(1, 1, v),
        [x = std::move(x), bm](const Eigen::MatrixXd& g) {
            return Eigen::MatrixXd(g(0, 0) * phys_loss_grad(x, bm));
        },
        "phys_loss");
}

void write_bounds_csv(std::ostream& os, const GraphDistances& dists, const BoundsMatrix& bm) {
    os << "i,j,hops,L,U\n";
    char buf[128];
    for (int i = 0; i < bm.n; ++i) {
        for (int j = i + 1; j < bm.n; ++j) {
            if (!bm.pair_constrained(i, j)) continue;
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f,%.6f\n", i, j, dists.hops(i, j),
                          bm.lower(i, j), bm.upper(i, j));
            os << buf;
        }
    }
}

} // namespace atomflow
