#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "atomflow/chem.hpp"
#include "atomflow/rng.hpp"

namespace atomflow {

struct CorpusEntry {
    Molecule mol;
    std::string id;
    std::string split; // "train" or "test"
};

struct Corpus {
    std::vector<CorpusEntry> entries;

    // Molecules of one split; an empty name selects everything.
    std::vector<Molecule> molecules(std::string_view split = {}) const;
    std::vector<int> sizes(std::string_view split = {}) const;
    std::map<int, int> size_histogram(std::string_view split = {}) const;
};

// Concatenated extended-XYZ records: an atom-count line, a key=value comment
// line (id, split, provenance), then one "Symbol x y z" line per atom with
// 6-decimal coordinates. Values must be whitespace-free.
void write_corpus(std::ostream& os, const Corpus& corpus);
void write_corpus_file(const std::string& path, const Corpus& corpus);
Corpus read_corpus(std::istream& is);         // throws DataError on malformed input
Corpus read_corpus_file(const std::string& path);

// Procedurally built molecules: carbon/nitrogen chains, branched trees and
// planar 5-6 rings with substituents, ideal bond lengths and angles, random
// dihedrals, 4 to 16 atoms, terminal O/S. Every emitted molecule is centered,
// valid, connected and passes the plausibility battery; roughly the last
// tenth is tagged as the test split.
Corpus gen_synthetic(int n, Rng& rng);

// One draw from an empirical size histogram.
int size_sampler(const std::vector<int>& sizes, Rng& rng);

} // namespace atomflow
