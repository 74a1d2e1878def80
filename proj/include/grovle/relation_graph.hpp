#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace grovle {

struct Edge {
    std::size_t i;
    std::size_t j;
    double weight = 1.0;
};

// Undirected weighted graph over vocabulary indices [0, n).
//
// Edges are stored once with i < j, sorted. Input pairs are normalized on
// construction: duplicates (in either orientation) collapse to one edge
// carrying the largest weight. Self-loops, out-of-range indices and
// non-positive weights are rejected.
class RelationGraph {
public:
    RelationGraph() = default;
    RelationGraph(std::size_t n, std::vector<Edge> edges);

    std::size_t node_count() const { return n_; }
    std::size_t edge_count() const { return edges_.size(); }
    bool empty() const { return edges_.empty(); }
    std::span<const Edge> edges() const { return edges_; }

    bool has_edge(std::size_t i, std::size_t j) const;
    double weight(std::size_t i, std::size_t j) const;  // 0 when absent

    std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
    std::span<const std::size_t> neighbors(std::size_t i) const {
        return {neighbors_.data() + offsets_[i], degree(i)};
    }
    std::span<const double> neighbor_weights(std::size_t i) const {
        return {weights_.data() + offsets_[i], degree(i)};
    }

    bool operator==(const RelationGraph& other) const;

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    // CSR adjacency, both orientations.
    std::vector<std::size_t> offsets_{0};
    std::vector<std::size_t> neighbors_;
    std::vector<double> weights_;
};

// Union of edge sets; a shared edge keeps the larger weight.
RelationGraph merge_graphs(const RelationGraph& a, const RelationGraph& b);

// Lexicon lines: "head neighbor1 neighbor2 ...". Tokens outside `vocab` are dropped.
RelationGraph load_lexicon_graph(const std::filesystem::path& path, std::span<const std::string> vocab);
RelationGraph read_lexicon_graph(std::istream& in, std::span<const std::string> vocab);

// Edge list export "token_i token_j beta", one edge per line.
void save_graph(const RelationGraph& graph, std::span<const std::string> vocab,
                const std::filesystem::path& path);
RelationGraph load_graph(const std::filesystem::path& path, std::span<const std::string> vocab);

struct TokenizerConfig {
    std::unordered_set<std::string> stopwords;
    bool lowercase = true;
};

// One token per line; entries are lowercased when `lowercase` is set.
TokenizerConfig load_stopwords(const std::filesystem::path& path, bool lowercase = true);

// Splits on maximal runs of non-alphanumeric ASCII bytes. Bytes >= 0x80 are
// kept inside tokens so UTF-8 words survive intact.
std::set<std::string> tokenize_sample(std::string_view text, const TokenizerConfig& cfg);

using TokenPair = std::pair<std::string, std::string>;  // first < second

TokenPair make_pair_key(std::string_view a, std::string_view b);

struct CooccurrenceStats {
    std::map<TokenPair, std::uint64_t> pair_count;
    std::map<std::string, std::uint64_t> participation;
    std::uint64_t total_pairs = 0;

    bool empty() const { return pair_count.empty(); }
    bool operator==(const CooccurrenceStats&) const = default;
};

// Raw per-sample pair counting. Shards can be counted independently and
// combined with merge() before finalize().
class CooccurrenceCounter {
public:
    explicit CooccurrenceCounter(TokenizerConfig cfg) : cfg_(std::move(cfg)) {}

    void add_sample(std::string_view text);
    void merge(const CooccurrenceCounter& other);
    // Drops pairs seen fewer than min_count times and derives participation
    // and totals from what survives.
    CooccurrenceStats finalize(std::uint64_t min_count) const;

private:
    TokenizerConfig cfg_;
    std::map<TokenPair, std::uint64_t> counts_;
};

CooccurrenceStats accumulate_cooccurrence(std::istream& corpus, const TokenizerConfig& cfg,
                                          std::uint64_t min_count);
// Shards `samples` across `workers` threads; equal to single-threaded counting.
CooccurrenceStats accumulate_cooccurrence(std::span<const std::string> samples, const TokenizerConfig& cfg,
                                          std::uint64_t min_count, unsigned workers = 1);

// ln(count(a,b) * total / (participation(a) * participation(b)))
double pmi_score(const CooccurrenceStats& stats, std::string_view a, std::string_view b);

// Each in-vocabulary word links to its top_k partners by PMI (ties by
// ascending partner index); the result is the symmetric union.
RelationGraph build_pmi_graph(const CooccurrenceStats& stats, std::size_t top_k,
                              std::span<const std::string> vocab);

}  // namespace grovle
