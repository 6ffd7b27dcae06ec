#include "atomflow/chem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace atomflow {

namespace {

// Cordero covalent radii, Bondi van-der-Waals radii, conventional maximum
// valences. Wild reuses the carbon radii.
constexpr ElementInfo kElements[kAtomVocab] = {
    {"C", 0.76, 1.70, 4},  {"N", 0.71, 1.55, 3}, {"O", 0.66, 1.52, 2},
    {"F", 0.57, 1.47, 1},  {"S", 1.05, 1.80, 6}, {"Cl", 1.02, 1.75, 1},
    {"Br", 1.20, 1.85, 1}, {"I", 1.39, 1.98, 1}, {"*", 0.76, 1.70, 4},
};

std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return mix64(h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)));
}

// WL label refinement. Round 0 labels atoms by element; each later round
// hashes the atom label with the sorted multiset of neighbor labels.
std::vector<std::vector<std::uint64_t>> wl_levels(const Molecule& mol, const BondGraph& g,
                                                  int rounds) {
    std::vector<std::vector<std::uint64_t>> levels;
    std::vector<std::uint64_t> cur(mol.atoms.size());
    for (std::size_t i = 0; i < mol.atoms.size(); ++i)
        cur[i] = mix64(static_cast<std::uint64_t>(mol.atoms[i]) + 0x517cc1b727220a95ull);
    levels.push_back(cur);
    for (int r = 0; r < rounds; ++r) {
        std::vector<std::uint64_t> next(cur.size());
        for (std::size_t i = 0; i < cur.size(); ++i) {
            std::vector<std::uint64_t> neigh;
            neigh.reserve(g.adjacency[i].size());
            for (int j : g.adjacency[i]) neigh.push_back(cur[static_cast<std::size_t>(j)]);
            std::sort(neigh.begin(), neigh.end());
            std::uint64_t h = hash_combine(0x243f6a8885a308d3ull, cur[i]);
            for (std::uint64_t v : neigh) h = hash_combine(h, v);
            next[i] = h;
        }
        levels.push_back(next);
        cur = std::move(next);
    }
    return levels;
}

std::vector<std::vector<int>> connected_components(const BondGraph& g) {
    std::vector<std::vector<int>> comps;
    std::vector<char> seen(static_cast<std::size_t>(g.n), 0);
    for (int s = 0; s < g.n; ++s) {
        if (seen[static_cast<std::size_t>(s)]) continue;
        std::vector<int> comp, stack{s};
        seen[static_cast<std::size_t>(s)] = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            comp.push_back(v);
            for (int w : g.adjacency[static_cast<std::size_t>(v)])
                if (!seen[static_cast<std::size_t>(w)]) {
                    seen[static_cast<std::size_t>(w)] = 1;
                    stack.push_back(w);
                }
        }
        comps.push_back(std::move(comp));
    }
    return comps;
}

} // namespace

const ElementInfo& element_info(Element e) { return kElements[static_cast<int>(e)]; }

std::optional<Element> element_from_symbol(std::string_view s) {
    for (int i = 0; i < kAtomVocab; ++i)
        if (s == kElements[i].symbol) return static_cast<Element>(i);
    return std::nullopt;
}

BondGraph perceive_bonds(const Molecule& mol, double tol) {
    if (tol < 0.0) throw std::invalid_argument("perceive_bonds: negative tolerance");
    const int n = mol.size();
    BondGraph g;
    g.n = n;
    g.adjacency.assign(static_cast<std::size_t>(n), {});
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double d = (mol.coords.row(i) - mol.coords.row(j)).norm();
            if (d <= bond_reference_length(mol, i, j) + tol) {
                g.edges.emplace_back(i, j);
                g.adjacency[static_cast<std::size_t>(i)].push_back(j);
                g.adjacency[static_cast<std::size_t>(j)].push_back(i);
            }
        }
    }
    return g;
}

double bond_reference_length(const Molecule& mol, int i, int j) {
    return element_info(mol.atoms[static_cast<std::size_t>(i)]).covalent_radius +
           element_info(mol.atoms[static_cast<std::size_t>(j)]).covalent_radius;
}

GraphDistances graph_distances(const Molecule& mol, const BondGraph& g) {
    const int n = g.n;
    GraphDistances out;
    out.hops = Eigen::MatrixXi::Constant(n, n, -1);
    out.path_length =
        Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
    std::vector<int> queue;
    for (int s = 0; s < n; ++s) {
        out.hops(s, s) = 0;
        out.path_length(s, s) = 0.0;
        queue.assign(1, s);
        // Layered BFS: every minimum-hop predecessor of a node is fully
        // relaxed before the node itself is popped, so taking the minimum
        // cumulative length on every relaxation is exact.
        for (std::size_t head = 0; head < queue.size(); ++head) {
            int v = queue[head];
            for (int w : g.adjacency[static_cast<std::size_t>(v)]) {
                double cand = out.path_length(s, v) + bond_reference_length(mol, v, w);
                if (out.hops(s, w) == -1) {
                    out.hops(s, w) = out.hops(s, v) + 1;
                    out.path_length(s, w) = cand;
                    queue.push_back(w);
                } else if (out.hops(s, w) == out.hops(s, v) + 1 &&
                           cand < out.path_length(s, w)) {
                    out.path_length(s, w) = cand;
                }
            }
        }
    }
    // Traversing a path from either end sums the same edge lengths in opposite
    // order, which can differ in the last ulp. Canonicalize to the
    // smaller-index source so the result is exactly symmetric.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) out.path_length(j, i) = out.path_length(i, j);
    return out;
}

std::vector<int> canonical_order(const Molecule& mol, const BondGraph& g) {
    const int n = mol.size();
    if (n == 0) return {};
    // Refine for n rounds; the partition stabilizes in at most n rounds.
    auto levels = wl_levels(mol, g, n);
    const auto& key = levels.back();

    auto comps = connected_components(g);
    // Component order: larger first, then by sorted label multiset.
    std::vector<std::vector<std::uint64_t>> comp_keys(comps.size());
    for (std::size_t c = 0; c < comps.size(); ++c) {
        for (int v : comps[c]) comp_keys[c].push_back(key[static_cast<std::size_t>(v)]);
        std::sort(comp_keys[c].begin(), comp_keys[c].end());
    }
    std::vector<std::size_t> comp_order(comps.size());
    std::iota(comp_order.begin(), comp_order.end(), 0u);
    std::sort(comp_order.begin(), comp_order.end(), [&](std::size_t a, std::size_t b) {
        if (comps[a].size() != comps[b].size()) return comps[a].size() > comps[b].size();
        return comp_keys[a] < comp_keys[b];
    });

    auto atom_less = [&](int a, int b) {
        auto ka = key[static_cast<std::size_t>(a)];
        auto kb = key[static_cast<std::size_t>(b)];
        if (ka != kb) return ka < kb;
        return a < b; // WL tie: structurally indistinguishable, any order works
    };

    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(n));
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (std::size_t c : comp_order) {
        int root = *std::min_element(comps[c].begin(), comps[c].end(), atom_less);
        std::vector<int> stack{root};
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            if (seen[static_cast<std::size_t>(v)]) continue;
            seen[static_cast<std::size_t>(v)] = 1;
            order.push_back(v);
            std::vector<int> neigh = g.adjacency[static_cast<std::size_t>(v)];
            std::sort(neigh.begin(), neigh.end(), atom_less);
            for (auto it = neigh.rbegin(); it != neigh.rend(); ++it)
                if (!seen[static_cast<std::size_t>(*it)]) stack.push_back(*it);
        }
    }
    return order;
}

std::uint64_t wl_hash(const Molecule& mol, const BondGraph& g, int radius) {
    auto levels = wl_levels(mol, g, radius);
    std::vector<std::uint64_t> all;
    for (std::size_t r = 0; r < levels.size(); ++r)
        for (std::uint64_t v : levels[r]) all.push_back(hash_combine(r, v));
    std::sort(all.begin(), all.end());
    std::uint64_t h = mix64(static_cast<std::uint64_t>(mol.size()));
    for (std::uint64_t v : all) h = hash_combine(h, v);
    return h;
}

Fingerprint fingerprint(const Molecule& mol, const BondGraph& g) {
    auto levels = wl_levels(mol, g, 2);
    Fingerprint fp;
    for (std::size_t r = 0; r < levels.size(); ++r)
        for (std::uint64_t v : levels[r])
            fp.set(static_cast<std::size_t>(hash_combine(r, v) % fp.size()));
    return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
    std::size_t u = (a | b).count();
    if (u == 0) return 1.0;
    return static_cast<double>((a & b).count()) / static_cast<double>(u);
}

double kabsch_rmsd(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != 3 || b.cols() != 3)
        throw std::invalid_argument("kabsch_rmsd: coordinate sets must be equal-length Nx3");
    Eigen::MatrixXd ac = a.rowwise() - centroid(a);
    Eigen::MatrixXd bc = b.rowwise() - centroid(b);
    Eigen::Matrix3d h = ac.transpose() * bc;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    Eigen::Matrix3d v = svd.matrixV();
    double d = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Eigen::Matrix3d r = v * Eigen::Vector3d(1.0, 1.0, d).asDiagonal() * u.transpose();
    double msd = (ac * r.transpose() - bc).squaredNorm() / static_cast<double>(a.rows());
    return std::sqrt(msd);
}

double kabsch_rmsd(const Molecule& a, const Molecule& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("kabsch_rmsd: atom-count mismatch");
    if (a.atoms != b.atoms)
        throw std::invalid_argument("kabsch_rmsd: element sequence mismatch");
    return kabsch_rmsd(a.coords, b.coords);
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    double w, x, y, z, norm;
    do {
        w = rng.gaussian();
        x = rng.gaussian();
        y = rng.gaussian();
        z = rng.gaussian();
        norm = std::sqrt(w * w + x * x + y * y + z * z);
    } while (norm < 1e-8);
    w /= norm;
    x /= norm;
    y /= norm;
    z /= norm;
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::RowVector3d centroid(const Eigen::MatrixXd& coords) { return coords.colwise().mean(); }

Eigen::MatrixXd rotate_coords(const Eigen::MatrixXd& coords, const Eigen::Matrix3d& rot) {
    return coords * rot.transpose();
}

Molecule rotated(const Molecule& mol, const Eigen::Matrix3d& rot) {
    Molecule out = mol;
    out.coords = rotate_coords(mol.coords, rot);
    return out;
}

Molecule permuted(const Molecule& mol, const std::vector<int>& perm) {
    Molecule out;
    out.provenance = mol.provenance;
    out.atoms.resize(perm.size());
    out.coords.resize(static_cast<Eigen::Index>(perm.size()), 3);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        out.atoms[k] = mol.atoms[static_cast<std::size_t>(perm[k])];
        out.coords.row(static_cast<Eigen::Index>(k)) = mol.coords.row(perm[k]);
    }
    return out;
}

} // namespace atomflow
