#include "atomflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "atomflow/bounds.hpp"
#include "atomflow/errors.hpp"
#include "atomflow/flow.hpp"

namespace atomflow {

namespace {

bool exceeds_valence(const Molecule& mol, const BondGraph& g) {
    for (int i = 0; i < mol.size(); ++i) {
        if (mol.atoms[i] == Element::Wild) continue;
        if (g.degree(i) > element_info(mol.atoms[i]).max_valence) return true;
    }
    return false;
}

bool has_isolated_atom(const Molecule& mol, const BondGraph& g) {
    if (mol.size() < 2) return false;
    for (int i = 0; i < mol.size(); ++i) {
        if (mol.atoms[i] == Element::Wild) continue;
        if (g.degree(i) < 1) return true;
    }
    return false;
}

bool single_component(const BondGraph& g) {
    if (g.n == 0) return false;
    std::vector<char> seen(g.n, 0);
    std::vector<int> queue{0};
    seen[0] = 1;
    int reached = 1;
    while (!queue.empty()) {
        const int v = queue.back();
        queue.pop_back();
        for (int w : g.adjacency[v])
            if (!seen[w]) {
                seen[w] = 1;
                ++reached;
                queue.push_back(w);
            }
    }
    return reached == g.n;
}

// All chordless simple cycles with size in [min_size, max_size], deduplicated
// by vertex set. Bounded depth keeps this cheap on molecule-sized graphs.
std::vector<std::vector<int>> small_rings(const BondGraph& g, int min_size, int max_size) {
    std::vector<std::vector<int>> rings;
    std::set<std::vector<int>> seen;
    std::vector<char> in_path(g.n, 0);
    std::vector<int> path;

    auto bonded = [&](int a, int b) {
        const auto& adj = g.adjacency[a];
        return std::find(adj.begin(), adj.end(), b) != adj.end();
    };
    auto chordless = [&](const std::vector<int>& cycle) {
        const int k = static_cast<int>(cycle.size());
        for (int a = 0; a < k; ++a)
            for (int b = a + 2; b < k; ++b) {
                if (a == 0 && b == k - 1) continue; // cycle edge
                if (bonded(cycle[a], cycle[b])) return false;
            }
        return true;
    };

    std::function<void(int)> extend = [&](int v) {
        for (int w : g.adjacency[v]) {
            if (path.size() >= 2 && w == path[path.size() - 2]) continue;
            if (w == path.front()) {
                if (static_cast<int>(path.size()) >= min_size && chordless(path)) {
                    std::vector<int> key = path;
                    std::sort(key.begin(), key.end());
                    if (seen.insert(key).second) rings.push_back(path);
                }
                continue;
            }
            if (w < path.front() || in_path[w]) continue;
            if (static_cast<int>(path.size()) >= max_size) continue;
            in_path[w] = 1;
            path.push_back(w);
            extend(w);
            path.pop_back();
            in_path[w] = 0;
        }
    };

    for (int s = 0; s < g.n; ++s) {
        path = {s};
        in_path.assign(g.n, 0);
        in_path[s] = 1;
        extend(s);
    }
    return rings;
}

double max_plane_deviation(const Eigen::MatrixXd& points) {
    const Eigen::RowVector3d c = points.colwise().mean();
    const Eigen::MatrixXd centered = points.rowwise() - c;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::Vector3d normal = svd.matrixV().col(2);
    return (centered * normal).cwiseAbs().maxCoeff();
}

} // namespace

bool validity(const Molecule& mol) {
    if (mol.size() == 0) return false;
    const BondGraph g = perceive_bonds(mol);
    return !exceeds_valence(mol, g) && !has_isolated_atom(mol, g);
}

bool connectivity(const Molecule& mol) {
    if (mol.size() == 0) return false;
    return single_component(perceive_bonds(mol));
}

std::vector<std::pair<std::string, bool>> PbChecks::named() const {
    return {{"bond_lengths", bond_lengths}, {"angles", angles},       {"clash", clash},
            {"flatness", flatness},         {"connected", connected}, {"valence", valence}};
}

PbChecks pb_lite(const Molecule& mol) {
    PbChecks out;
    if (mol.size() == 0) return out;
    const BondGraph g = perceive_bonds(mol);
    const GraphDistances dists = graph_distances(mol, g);

    out.bond_lengths = true;
    for (const auto& [i, j] : g.edges) {
        const double ref = bond_reference_length(mol, i, j);
        const double d = (mol.coords.row(i) - mol.coords.row(j)).norm();
        if (d < (1.0 - kBondLengthTolerance) * ref || d > (1.0 + kBondLengthTolerance) * ref)
            out.bond_lengths = false;
    }

    out.angles = true;
    out.clash = true;
    for (int i = 0; i < mol.size(); ++i) {
        for (int j = i + 1; j < mol.size(); ++j) {
            const double d = (mol.coords.row(i) - mol.coords.row(j)).norm();
            const double vdw_sum =
                element_info(mol.atoms[i]).vdw_radius + element_info(mol.atoms[j]).vdw_radius;
            const int hops = dists.hops(i, j);
            if (hops == 2) {
                // angle proxy: between the clash floor and the stretched-out
                // two-bond path length
                if (d < kClashFactor * vdw_sum || d > dists.path_length(i, j)) out.angles = false;
            } else if (hops < 0 || hops > kMaxBoundedHops) {
                if (d < kClashFactor * vdw_sum) out.clash = false;
            }
        }
    }

    out.flatness = true;
    for (const std::vector<int>& ring : small_rings(g, kFlatRingMinSize, kFlatRingMaxSize)) {
        bool low_degree = true;
        for (int v : ring)
            if (g.degree(v) > 3) low_degree = false;
        if (!low_degree) continue;
        Eigen::MatrixXd pts(ring.size(), 3);
        for (std::size_t k = 0; k < ring.size(); ++k) pts.row(k) = mol.coords.row(ring[k]);
        if (max_plane_deviation(pts) > kFlatnessTolerance) out.flatness = false;
    }

    out.connected = single_component(g);
    out.valence = !exceeds_valence(mol, g) && !has_isolated_atom(mol, g);
    return out;
}

double diversity(const std::vector<Molecule>& mols) {
    if (mols.size() < 2) throw DataError("diversity needs at least two molecules");
    std::vector<Fingerprint> fps;
    fps.reserve(mols.size());
    for (const Molecule& m : mols) fps.push_back(fingerprint(m, perceive_bonds(m)));
    double sum = 0.0;
    long pairs = 0;
    for (std::size_t i = 0; i < fps.size(); ++i)
        for (std::size_t j = i + 1; j < fps.size(); ++j) {
            sum += tanimoto(fps[i], fps[j]);
            ++pairs;
        }
    return 1.0 - sum / pairs;
}

double novelty(const std::vector<Molecule>& mols,
               const std::unordered_set<std::uint64_t>& train_hashes) {
    if (mols.empty()) throw DataError("novelty needs at least one molecule");
    long novel = 0;
    for (const Molecule& m : mols)
        if (!train_hashes.count(wl_hash(m, perceive_bonds(m)))) ++novel;
    return static_cast<double>(novel) / mols.size();
}

std::unordered_set<std::uint64_t> hash_set(const std::vector<Molecule>& mols) {
    std::unordered_set<std::uint64_t> hashes;
    for (const Molecule& m : mols) hashes.insert(wl_hash(m, perceive_bonds(m)));
    return hashes;
}

MetricsReport evaluate(const std::vector<Molecule>& mols,
                       const std::unordered_set<std::uint64_t>* train_hashes) {
    MetricsReport report;
    if (mols.empty()) return report;
    report.per_molecule.reserve(mols.size());
    for (const Molecule& m : mols) {
        MoleculeFlags flags;
        flags.valid = validity(m);
        flags.connected = connectivity(m);
        flags.pb = pb_lite(m);
        flags.pb_pass = flags.pb.pass();
        if (train_hashes) flags.novel = !train_hashes->count(wl_hash(m, perceive_bonds(m)));
        report.per_molecule.push_back(flags);
        report.validity += flags.valid;
        report.connectivity += flags.connected;
        report.novelty += flags.novel;
        report.pb_rate += flags.pb_pass;
    }
    const double n = static_cast<double>(mols.size());
    report.validity /= n;
    report.connectivity /= n;
    report.pb_rate /= n;
    report.novelty = train_hashes ? report.novelty / n : 0.0;
    report.diversity = mols.size() >= 2 ? diversity(mols) : 0.0;
    return report;
}

double equivariance_error(const EndpointPredictor& predictor, const Molecule& mol, double t,
                          int n_rot, Rng& rng) {
    if (n_rot < 2) throw ConfigError("equivariance probe needs at least two rotations");
    const NoisyState state = noise_state(mol, t, rng);
    const int n = mol.size();

    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, 3);
    Eigen::MatrixXd mean_sq = Eigen::MatrixXd::Zero(n, 3);
    Eigen::MatrixXd x1, p1;
    for (int r = 0; r < n_rot; ++r) {
        const Eigen::Matrix3d rot = random_rotation(rng);
        predictor.predict(state.x * rot.transpose(), state.types, t, x1, p1);
        Eigen::MatrixXd z = x1 * rot; // inverse rotation of row vectors
        for (int i = 0; i < n; ++i) z.row(i) /= std::max(z.row(i).norm(), 1e-12);
        mean += z;
        mean_sq += z.cwiseProduct(z);
    }
    mean /= n_rot;
    mean_sq /= n_rot;
    const Eigen::MatrixXd var = (mean_sq - mean.cwiseProduct(mean)).cwiseMax(0.0);
    return var.mean();
}

std::vector<double> renoise_probe(const EndpointPredictor& predictor,
                                  const std::vector<Molecule>& test_mols,
                                  const std::vector<double>& tau_grid, const SampleConfig& cfg,
                                  std::uint64_t seed) {
    if (test_mols.empty()) throw DataError("renoising probe needs test molecules");
    std::vector<double> rates;
    rates.reserve(tau_grid.size());
    for (std::size_t ti = 0; ti < tau_grid.size(); ++ti) {
        const double tau = tau_grid[ti];
        if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("renoising time must lie in [0, 1)");
        long passed = 0;
        for (std::size_t j = 0; j < test_mols.size(); ++j) {
            Rng rng = Rng::stream(seed, "renoise", ti * 1000000 + j);
            const NoisyState st = noise_state(test_mols[j], tau, rng);
            const Molecule out = sample_from(predictor, st.x, st.types, tau, cfg, rng);
            if (pb_lite(out).pass()) ++passed;
        }
        rates.push_back(static_cast<double>(passed) / test_mols.size());
    }
    return rates;
}

} // namespace atomflow
