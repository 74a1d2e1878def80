#pragma once

#include <cstddef>
#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

#include "grovle/embed_store.hpp"
#include "grovle/relation_graph.hpp"

namespace grovle {

struct CohesionReport {
    double mean_edge_cosine = 0.0;
    double median_edge_cosine = 0.0;
    std::size_t edge_count = 0;
};

// Cosine similarity statistics over every edge of `graph`.
CohesionReport neighbor_cohesion(const EmbeddingSet& set, const RelationGraph& graph);

struct RecallReport {
    std::vector<std::size_t> ks;
    std::vector<double> text_to_target;  // recall at ks[i]
    std::vector<double> target_to_text;
    double mean_recall = 0.0;  // mean over both directions and all ks
};

// Item i of each list is the ground-truth match of item i of the other.
// Gallery items are ranked by ascending Euclidean distance, ties by index.
RecallReport retrieval_recall(std::span<const std::vector<double>> text_vecs,
                              std::span<const std::vector<double>> target_vecs,
                              std::span<const std::size_t> ks = std::vector<std::size_t>{1, 5, 10});

struct DriftReport {
    std::vector<double> displacement;  // per word
    double mean = 0.0;
    double max = 0.0;
    std::size_t moved = 0;  // words with nonzero displacement
};

DriftReport drift_report(const EmbeddingSet& before, const EmbeddingSet& after);

// CSV layouts:
//   cohesion: edge_count,mean_edge_cosine,median_edge_cosine
//   recall:   direction,k,recall   (direction is text_to_target, target_to_text or mean)
//   drift:    token,displacement
void write_cohesion_csv(const CohesionReport& report, std::ostream& out);
void write_recall_csv(const RecallReport& report, std::ostream& out);
void write_drift_csv(const DriftReport& report, std::span<const std::string> vocab, std::ostream& out);

void print_summary(const CohesionReport& report, std::ostream& out);
void print_summary(const RecallReport& report, std::ostream& out);
void print_summary(const DriftReport& report, std::ostream& out);

}  // namespace grovle
