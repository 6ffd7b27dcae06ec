#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "atomflow/chem.hpp"
#include "atomflow/rng.hpp"

using namespace atomflow;

namespace {

Molecule make_mol(std::vector<Element> atoms, std::vector<std::array<double, 3>> pos) {
    Molecule m;
    m.atoms = std::move(atoms);
    m.coords.resize(static_cast<Eigen::Index>(pos.size()), 3);
    for (std::size_t i = 0; i < pos.size(); ++i)
        m.coords.row(static_cast<Eigen::Index>(i)) << pos[i][0], pos[i][1], pos[i][2];
    return m;
}

// Planar ring of six atoms with every edge 1.4 Å.
Molecule hexagon(std::vector<Element> atoms = std::vector<Element>(6, Element::C)) {
    std::vector<std::array<double, 3>> pos;
    for (int k = 0; k < 6; ++k) {
        double a = k * std::numbers::pi / 3.0;
        pos.push_back({1.4 * std::cos(a), 1.4 * std::sin(a), 0.0});
    }
    return make_mol(std::move(atoms), std::move(pos));
}

std::vector<Element> canonical_elements(const Molecule& m) {
    auto g = perceive_bonds(m);
    auto order = canonical_order(m, g);
    std::vector<Element> seq;
    for (int i : order) seq.push_back(m.atoms[static_cast<std::size_t>(i)]);
    return seq;
}

} // namespace

TEST_SUITE("chem") {

TEST_CASE("element table holds the reference radii and valences") {
    struct Row {
        Element e;
        const char* sym;
        double cov, vdw;
        int val;
    };
    const Row rows[] = {
        {Element::C, "C", 0.76, 1.70, 4},  {Element::N, "N", 0.71, 1.55, 3},
        {Element::O, "O", 0.66, 1.52, 2},  {Element::F, "F", 0.57, 1.47, 1},
        {Element::S, "S", 1.05, 1.80, 6},  {Element::Cl, "Cl", 1.02, 1.75, 1},
        {Element::Br, "Br", 1.20, 1.85, 1}, {Element::I, "I", 1.39, 1.98, 1},
    };
    for (const auto& r : rows) {
        const auto& info = element_info(r.e);
        CHECK(info.symbol == doctest::String(r.sym));
        CHECK(info.covalent_radius == r.cov);
        CHECK(info.vdw_radius == r.vdw);
        CHECK(info.max_valence == r.val);
        CHECK(info.covalent_radius > 0.0);
        CHECK(info.covalent_radius < info.vdw_radius);
        CHECK(element_from_symbol(r.sym) == r.e);
    }
    CHECK(element_info(Element::Wild).covalent_radius == 0.76);
    CHECK(element_info(Element::Wild).vdw_radius == 1.70);
    CHECK(element_from_symbol("*") == Element::Wild);
    CHECK_FALSE(element_from_symbol("Xx").has_value());
}

TEST_CASE("bond perception follows covalent radii plus tolerance") {
    Molecule close = make_mol({Element::C, Element::C}, {{0, 0, 0}, {1.52, 0, 0}});
    auto g1 = perceive_bonds(close);
    REQUIRE(g1.edges.size() == 1);
    CHECK(g1.edges[0] == std::pair<int, int>(0, 1));

    Molecule far = make_mol({Element::C, Element::C}, {{0, 0, 0}, {2.5, 0, 0}});
    CHECK(perceive_bonds(far).edges.empty());

    Molecule single = make_mol({Element::C}, {{0, 0, 0}});
    auto g3 = perceive_bonds(single);
    CHECK(g3.edges.empty());
    CHECK(g3.n == 1);

    CHECK_THROWS_AS(perceive_bonds(single, -0.1), std::invalid_argument);
}

TEST_CASE("graph distances give hop counts and cumulative reference lengths") {
    Molecule chain =
        make_mol({Element::C, Element::C, Element::C}, {{0, 0, 0}, {1.5, 0, 0}, {3.0, 0, 0}});
    auto d = graph_distances(chain, perceive_bonds(chain));
    CHECK(d.hops(0, 1) == 1);
    CHECK(d.path_length(0, 1) == doctest::Approx(1.52));
    CHECK(d.hops(0, 2) == 2);
    CHECK(d.path_length(0, 2) == doctest::Approx(3.04));
    CHECK(d.hops(0, 0) == 0);
    CHECK(d.path_length(2, 2) == 0.0);

    Molecule split = make_mol({Element::C, Element::C}, {{0, 0, 0}, {9.0, 0, 0}});
    auto ds = graph_distances(split, perceive_bonds(split));
    CHECK(ds.hops(0, 1) == -1);
    CHECK(std::isinf(ds.path_length(0, 1)));
}

TEST_CASE("shortest-hop ties resolve to the smallest cumulative length") {
    // Square with two 2-hop routes between opposite corners: one through S
    // (heavier reference lengths), one through O.
    double s = 1.6;
    Molecule square = make_mol({Element::C, Element::S, Element::C, Element::O},
                               {{0, 0, 0}, {s, 0, 0}, {s, s, 0}, {0, s, 0}});
    auto g = perceive_bonds(square);
    REQUIRE(g.edges.size() == 4);
    auto d = graph_distances(square, g);
    CHECK(d.hops(0, 2) == 2);
    // via O: (0.76+0.66)*2 = 2.84 beats via S: (0.76+1.05)*2 = 3.62.
    CHECK(d.path_length(0, 2) == doctest::Approx(2.84));
}

TEST_CASE("canonical order is stable across all input permutations of a chain") {
    Molecule chain =
        make_mol({Element::C, Element::C, Element::O}, {{0, 0, 0}, {1.52, 0, 0}, {2.94, 0, 0}});
    auto reference = canonical_elements(chain);
    REQUIRE(reference.size() == 3);

    std::vector<int> perm{0, 1, 2};
    do {
        CHECK(canonical_elements(permuted(chain, perm)) == reference);
    } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("canonical order of a single atom is identity") {
    Molecule single = make_mol({Element::N}, {{0, 0, 0}});
    auto order = canonical_order(single, perceive_bonds(single));
    CHECK(order == std::vector<int>{0});
}

TEST_CASE("isomorphic relabelings of a mixed ring give identical canonical sequences") {
    Molecule ring = hexagon({Element::C, Element::N, Element::C, Element::C, Element::O, Element::C});
    auto reference = canonical_elements(ring);
    Rng rng = Rng::stream(5, "perm");
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 25; ++trial) {
        for (int i = 5; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
        CHECK(canonical_elements(permuted(ring, perm)) == reference);
    }
}

TEST_CASE("components are ordered largest first") {
    // A bonded pair far away from a lone atom.
    Molecule m = make_mol({Element::O, Element::C, Element::C},
                          {{50, 0, 0}, {0, 0, 0}, {1.5, 0, 0}});
    auto order = canonical_order(m, perceive_bonds(m));
    REQUIRE(order.size() == 3);
    CHECK(order[2] == 0); // the singleton comes last
}

TEST_CASE("wl hash is invariant under relabeling and separates isomers") {
    Molecule ring = hexagon({Element::C, Element::N, Element::C, Element::C, Element::O, Element::C});
    auto g = perceive_bonds(ring);
    std::uint64_t reference = wl_hash(ring, g);
    Fingerprint fp_ref = fingerprint(ring, g);
    Rng rng = Rng::stream(6, "perm");
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 25; ++trial) {
        for (int i = 5; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
        Molecule p = permuted(ring, perm);
        auto gp = perceive_bonds(p);
        CHECK(wl_hash(p, gp) == reference);
        CHECK(fingerprint(p, gp) == fp_ref);
    }

    Molecule cco =
        make_mol({Element::C, Element::C, Element::O}, {{0, 0, 0}, {1.52, 0, 0}, {2.94, 0, 0}});
    Molecule coc =
        make_mol({Element::C, Element::O, Element::C}, {{0, 0, 0}, {1.42, 0, 0}, {2.84, 0, 0}});
    CHECK(wl_hash(cco, perceive_bonds(cco)) != wl_hash(coc, perceive_bonds(coc)));
}

TEST_CASE("tanimoto handles identical and disjoint bit sets") {
    Fingerprint a;
    a.set(1);
    a.set(5);
    CHECK(tanimoto(a, a) == 1.0);
    Fingerprint b;
    b.set(7);
    CHECK(tanimoto(a, b) == 0.0);
    // 2 shared of 5 total.
    Fingerprint c = a;
    c.set(9);
    Fingerprint d = a;
    d.set(11);
    d.set(13);
    CHECK(tanimoto(c, d) == doctest::Approx(0.4));
}

TEST_CASE("kabsch rmsd vanishes for rigid copies") {
    Molecule m = hexagon();
    CHECK(kabsch_rmsd(m, m) == doctest::Approx(0.0));

    Rng rng = Rng::stream(7, "rot");
    Eigen::Matrix3d r = random_rotation(rng);
    Molecule moved = rotated(m, r);
    moved.coords.rowwise() += Eigen::RowVector3d(3.0, -2.0, 7.0);
    CHECK(kabsch_rmsd(m, moved) < 1e-9);
}

TEST_CASE("kabsch rmsd matches the hand-evaluated stretched pair") {
    Eigen::MatrixXd a(2, 3), b(2, 3);
    a << 0, 0, 0, 2, 0, 0;
    b << 0, 0, 0, 4, 0, 0;
    CHECK(kabsch_rmsd(a, b) == doctest::Approx(1.0));
}

TEST_CASE("kabsch rmsd validates inputs") {
    Molecule two = make_mol({Element::C, Element::C}, {{0, 0, 0}, {1.5, 0, 0}});
    Molecule three = make_mol({Element::C, Element::C, Element::C},
                              {{0, 0, 0}, {1.5, 0, 0}, {3.0, 0, 0}});
    CHECK_THROWS_AS(kabsch_rmsd(two, three), std::invalid_argument);
    Molecule swapped = make_mol({Element::C, Element::O}, {{0, 0, 0}, {1.5, 0, 0}});
    CHECK_THROWS_AS(kabsch_rmsd(two, swapped), std::invalid_argument);
}

TEST_CASE("random rotations are proper and centered over SO(3)") {
    Rng rng = Rng::stream(8, "rot");
    Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        Eigen::Matrix3d r = random_rotation(rng);
        if (i < 200) {
            CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
        }
        sum += r;
    }
    // Entries have mean 0 and variance 1/3 under the uniform measure; the
    // bound is 4 sigma because all nine entries are checked at once.
    double bound = 4.0 * std::sqrt(1.0 / 3.0 / n);
    CHECK((sum / n).cwiseAbs().maxCoeff() < bound);
}

} // TEST_SUITE
