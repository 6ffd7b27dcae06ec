#include "atomflow/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include "atomflow/errors.hpp"
#include "atomflow/metrics.hpp"

namespace atomflow {

namespace {

constexpr int kMinSize = 4;
constexpr int kMaxSize = 16;
constexpr int kMoleculeAttempts = 300;
constexpr int kPlacementAttempts = 64;
constexpr double kTetCos = -1.0 / 3.0;

bool has_space(std::string_view s) {
    return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// O and S only ever take a single bond here, which keeps every generated
// two-hop distance above the clash floor (a tetrahedral C-O-C angle would
// land under 0.7x the carbon vdW sum).
bool terminal_only(Element e) { return e == Element::O || e == Element::S; }

int growth_cap(Element e) {
    switch (e) {
    case Element::C: return 4;
    case Element::N: return 3;
    default: return 1;
    }
}

Element random_interior(Rng& rng) {
    return rng.uniform() < 0.8 ? Element::C : Element::N;
}

Element random_any(Rng& rng) {
    const double u = rng.uniform();
    if (u < 0.60) return Element::C;
    if (u < 0.76) return Element::N;
    if (u < 0.92) return Element::O;
    return Element::S;
}

void perp_basis(const Eigen::RowVector3d& a, Eigen::RowVector3d& e1, Eigen::RowVector3d& e2) {
    const Eigen::RowVector3d probe =
        std::abs(a.x()) < 0.9 ? Eigen::RowVector3d(1, 0, 0) : Eigen::RowVector3d(0, 1, 0);
    e1 = a.cross(probe).normalized();
    e2 = a.cross(e1).normalized();
}

struct Builder {
    Molecule mol;
    std::vector<std::vector<int>> adj;
    Rng& rng;

    explicit Builder(Rng& r) : rng(r) { mol.coords.resize(0, 3); }

    int add_atom(Element e, const Eigen::RowVector3d& pos) {
        mol.atoms.push_back(e);
        mol.coords.conservativeResize(mol.size(), 3);
        mol.coords.row(mol.size() - 1) = pos;
        adj.emplace_back();
        return mol.size() - 1;
    }

    void bond(int i, int j) {
        adj[i].push_back(j);
        adj[j].push_back(i);
    }

    // New positions must stay clear of every atom they are not bonded to:
    // outside both the clash floor and the bond-perception reach.
    bool clear_of_others(const Eigen::RowVector3d& pos, Element e, int parent) const {
        for (int k = 0; k < mol.size(); ++k) {
            if (k == parent) continue;
            const double d = (pos - mol.coords.row(k)).norm();
            const ElementInfo& a = element_info(e);
            const ElementInfo& b = element_info(mol.atoms[k]);
            if (d < kClashFactor * (a.vdw_radius + b.vdw_radius) + 0.02) return false;
            if (d < a.covalent_radius + b.covalent_radius + kBondPerceptionTol + 0.05)
                return false;
        }
        return true;
    }

    // Bond the new atom to parent at the reference length, at the ideal
    // tetrahedral angle to the parent's first existing bond and no closer
    // than ~100 degrees to its other bonds, dihedral free.
    int place_bonded(int parent, Element e) {
        const double len =
            element_info(mol.atoms[parent]).covalent_radius + element_info(e).covalent_radius;
        const Eigen::RowVector3d p = mol.coords.row(parent);
        for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
            Eigen::RowVector3d dir;
            if (adj[parent].empty()) {
                Eigen::Matrix3d rot = random_rotation(rng);
                dir = Eigen::RowVector3d(rot(0, 0), rot(1, 0), rot(2, 0));
            } else {
                const Eigen::RowVector3d u0 =
                    (mol.coords.row(adj[parent][0]) - p).normalized();
                Eigen::RowVector3d e1, e2;
                perp_basis(u0, e1, e2);
                const double phi = rng.uniform(0.0, 2.0 * M_PI);
                const double s = std::sqrt(1.0 - kTetCos * kTetCos);
                dir = kTetCos * u0 + s * (std::cos(phi) * e1 + std::sin(phi) * e2);
            }
            bool angles_ok = true;
            for (std::size_t k = 1; k < adj[parent].size(); ++k) {
                const Eigen::RowVector3d uk =
                    (mol.coords.row(adj[parent][k]) - p).normalized();
                if (dir.dot(uk) > -0.17) angles_ok = false; // under ~100 degrees
            }
            if (!angles_ok) continue;
            const Eigen::RowVector3d pos = p + len * dir;
            if (!clear_of_others(pos, e, parent)) continue;
            const int idx = add_atom(e, pos);
            bond(parent, idx);
            return idx;
        }
        return -1;
    }

    std::vector<std::pair<int, int>> edge_list() const {
        std::vector<std::pair<int, int>> edges;
        for (int i = 0; i < mol.size(); ++i)
            for (int j : adj[i])
                if (i < j) edges.emplace_back(i, j);
        std::sort(edges.begin(), edges.end());
        return edges;
    }
};

// Depth-first acyclic growth; branching==false keeps every interior atom at
// two bonds so the result is a chain with occasional terminal decorations.
bool grow_tree(Builder& b, int size, bool branching) {
    b.add_atom(random_interior(b.rng), Eigen::RowVector3d::Zero());
    std::vector<int> stack{0};
    while (b.mol.size() < size) {
        while (!stack.empty()) {
            const int top = stack.back();
            const int cap = branching ? growth_cap(b.mol.atoms[top])
                                      : std::min(growth_cap(b.mol.atoms[top]), 2);
            if (b.adj[top].size() < static_cast<std::size_t>(cap)) break;
            stack.pop_back();
        }
        if (stack.empty()) return false;
        const bool last = b.mol.size() == size - 1;
        Element e;
        if (last) {
            e = random_any(b.rng);
        } else if (branching) {
            e = b.rng.uniform() < 0.2 ? random_any(b.rng) : random_interior(b.rng);
        } else {
            e = random_interior(b.rng);
        }
        const int child = b.place_bonded(stack.back(), e);
        if (child < 0) return false;
        if (!terminal_only(e)) stack.push_back(child);
    }
    return true;
}

bool grow_ring(Builder& b, int size) {
    const int ring = size >= 6 && b.rng.uniform() < 0.5 ? 6 : 5;
    const double edge = 2.0 * element_info(Element::C).covalent_radius;
    const double radius = edge / (2.0 * std::sin(M_PI / ring));
    for (int k = 0; k < ring; ++k) {
        const double th = 2.0 * M_PI * k / ring;
        b.add_atom(Element::C,
                   Eigen::RowVector3d(radius * std::cos(th), radius * std::sin(th), 0.0));
        if (k > 0) b.bond(k - 1, k);
    }
    b.bond(ring - 1, 0);

    int remaining = size - ring;
    int attach = 0;
    while (remaining > 0) {
        while (attach < ring && b.adj[attach].size() >= 3) ++attach;
        if (attach == ring) return false;
        // first substituent atom sits on the outward radial direction
        const Eigen::RowVector3d p = b.mol.coords.row(attach);
        const Eigen::RowVector3d dir = p.normalized();
        const bool leaf = remaining == 1;
        const Element e = leaf ? random_any(b.rng) : random_interior(b.rng);
        const double len =
            element_info(Element::C).covalent_radius + element_info(e).covalent_radius;
        if (!b.clear_of_others(p + len * dir, e, attach)) return false;
        const int first = b.add_atom(e, p + len * dir);
        b.bond(attach, first);
        --remaining;
        // continue the substituent depth-first as a short chain
        int tip = first;
        const int chain = std::min(remaining, static_cast<int>(b.rng.uniform_int(3)));
        for (int k = 0; k < chain; ++k) {
            if (terminal_only(b.mol.atoms[tip])) break;
            const bool last_here = remaining == 1;
            const Element ce = last_here ? random_any(b.rng) : random_interior(b.rng);
            const int child = b.place_bonded(tip, ce);
            if (child < 0) return false;
            tip = child;
            --remaining;
        }
        ++attach;
    }
    return true;
}

Molecule generate_molecule(int size, Rng& rng) {
    for (int attempt = 0; attempt < kMoleculeAttempts; ++attempt) {
        Builder b(rng);
        const int kind = size >= 5 ? static_cast<int>(rng.uniform_int(3))
                                   : static_cast<int>(rng.uniform_int(2));
        bool ok = false;
        switch (kind) {
        case 0: ok = grow_tree(b, size, false); break;
        case 1: ok = grow_tree(b, size, true); break;
        default: ok = grow_ring(b, size); break;
        }
        if (!ok) continue;

        const std::vector<std::pair<int, int>> built = b.edge_list();
        Molecule m = std::move(b.mol);
        m.coords.rowwise() -= centroid(m.coords);
        m = rotated(m, random_rotation(rng));
        m.provenance = "synthetic";

        // perception must reproduce exactly the constructed topology
        const BondGraph g = perceive_bonds(m);
        std::vector<std::pair<int, int>> perceived = g.edges;
        std::sort(perceived.begin(), perceived.end());
        if (perceived != built) continue;
        if (!validity(m) || !connectivity(m) || !pb_lite(m).pass()) continue;
        return m;
    }
    throw DataError("synthetic generation exceeded its retry budget");
}

} // namespace

std::vector<Molecule> Corpus::molecules(std::string_view split) const {
    std::vector<Molecule> out;
    for (const CorpusEntry& e : entries)
        if (split.empty() || e.split == split) out.push_back(e.mol);
    return out;
}

std::vector<int> Corpus::sizes(std::string_view split) const {
    std::vector<int> out;
    for (const CorpusEntry& e : entries)
        if (split.empty() || e.split == split) out.push_back(e.mol.size());
    return out;
}

std::map<int, int> Corpus::size_histogram(std::string_view split) const {
    std::map<int, int> hist;
    for (int s : sizes(split)) ++hist[s];
    return hist;
}

void write_corpus(std::ostream& os, const Corpus& corpus) {
    for (const CorpusEntry& e : corpus.entries) {
        if (has_space(e.id) || has_space(e.split) || has_space(e.mol.provenance))
            throw DataError("corpus fields must be whitespace-free");
        os << e.mol.size() << "\n";
        os << "id=" << e.id << " split=" << e.split;
        if (!e.mol.provenance.empty()) os << " provenance=" << e.mol.provenance;
        os << "\n";
        for (int i = 0; i < e.mol.size(); ++i) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%s %.6f %.6f %.6f",
                          element_info(e.mol.atoms[i]).symbol, e.mol.coords(i, 0),
                          e.mol.coords(i, 1), e.mol.coords(i, 2));
            os << buf << "\n";
        }
    }
}

void write_corpus_file(const std::string& path, const Corpus& corpus) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open corpus file for writing: " + path);
    write_corpus(os, corpus);
}

Corpus read_corpus(std::istream& is) {
    Corpus corpus;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        throw DataError("corpus line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        int n = 0;
        try {
            std::size_t used = 0;
            n = std::stoi(line, &used);
            if (used != line.size()) fail("trailing junk after the atom count");
        } catch (const std::logic_error&) {
            fail("expected an atom count");
        }
        if (n < 1) fail("atom count must be positive");

        if (!std::getline(is, line)) fail("missing comment line");
        ++lineno;
        CorpusEntry entry;
        std::istringstream comment(line);
        std::string token;
        while (comment >> token) {
            const std::size_t eq = token.find('=');
            if (eq == std::string::npos) fail("comment token without '='");
            const std::string key = token.substr(0, eq);
            const std::string value = token.substr(eq + 1);
            if (key == "id") entry.id = value;
            else if (key == "split") entry.split = value;
            else if (key == "provenance") entry.mol.provenance = value;
            // unknown keys are carried by other tools; ignore them
        }

        entry.mol.coords.resize(n, 3);
        for (int i = 0; i < n; ++i) {
            if (!std::getline(is, line)) fail("truncated atom block");
            ++lineno;
            std::istringstream atom(line);
            std::string sym;
            double x = 0, y = 0, z = 0;
            if (!(atom >> sym >> x >> y >> z)) fail("malformed atom line");
            const auto e = element_from_symbol(sym);
            if (!e) fail("unknown element symbol '" + sym + "'");
            entry.mol.atoms.push_back(*e);
            entry.mol.coords.row(i) << x, y, z;
        }
        corpus.entries.push_back(std::move(entry));
    }
    return corpus;
}

Corpus read_corpus_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open corpus file: " + path);
    return read_corpus(is);
}

Corpus gen_synthetic(int n, Rng& rng) {
    if (n < 1) throw ConfigError("corpus size must be at least 1");
    Corpus corpus;
    corpus.entries.reserve(n);
    const int train_count = n - n / 10;
    for (int i = 0; i < n; ++i) {
        const int size = kMinSize + static_cast<int>(rng.uniform_int(kMaxSize - kMinSize + 1));
        CorpusEntry entry;
        entry.mol = generate_molecule(size, rng);
        char id[32];
        std::snprintf(id, sizeof(id), "mol-%06d", i);
        entry.id = id;
        entry.split = i < train_count ? "train" : "test";
        corpus.entries.push_back(std::move(entry));
    }
    return corpus;
}

int size_sampler(const std::vector<int>& sizes, Rng& rng) {
    if (sizes.empty()) throw DataError("size histogram is empty");
    return sizes[rng.uniform_int(sizes.size())];
}

} // namespace atomflow
