#include "grovle/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "grovle/error.hpp"

namespace grovle {

namespace {

// Rank (0-based) of gallery item `truth` for `query`.
std::size_t rank_of(std::span<const double> query, std::span<const std::vector<double>> gallery, std::size_t truth) {
    const double d_truth = squared_distance(query, gallery[truth]);
    std::size_t rank = 0;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
        const double d = squared_distance(query, gallery[g]);
        if (d < d_truth || (d == d_truth && g < truth)) ++rank;
    }
    return rank;
}

std::vector<double> recall_one_way(std::span<const std::vector<double>> queries,
                                   std::span<const std::vector<double>> gallery, std::span<const std::size_t> ks) {
    std::vector<std::size_t> hits(ks.size(), 0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const std::size_t rank = rank_of(queries[q], gallery, q);
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (rank < ks[i]) ++hits[i];
        }
    }
    std::vector<double> out;
    for (const std::size_t h : hits) out.push_back(static_cast<double>(h) / static_cast<double>(queries.size()));
    return out;
}

}  // namespace

CohesionReport neighbor_cohesion(const EmbeddingSet& set, const RelationGraph& graph) {
    if (graph.node_count() != set.size()) throw DataError("neighbor_cohesion: graph and vocabulary sizes differ");
    if (graph.empty()) throw DataError("neighbor_cohesion: graph has no edges");
    std::vector<double> cosines;
    cosines.reserve(graph.edge_count());
    for (const auto& e : graph.edges()) cosines.push_back(cosine_similarity(set.row(e.i), set.row(e.j)));

    CohesionReport report;
    report.edge_count = cosines.size();
    double sum = 0.0;
    for (const double c : cosines) sum += c;
    report.mean_edge_cosine = sum / static_cast<double>(cosines.size());
    std::sort(cosines.begin(), cosines.end());
    const std::size_t mid = cosines.size() / 2;
    report.median_edge_cosine = cosines.size() % 2 ? cosines[mid] : 0.5 * (cosines[mid - 1] + cosines[mid]);
    return report;
}

RecallReport retrieval_recall(std::span<const std::vector<double>> text_vecs,
                              std::span<const std::vector<double>> target_vecs, std::span<const std::size_t> ks) {
    if (text_vecs.size() != target_vecs.size()) throw DataError("retrieval_recall: lists differ in length");
    if (text_vecs.empty()) throw DataError("retrieval_recall: empty lists");
    if (ks.empty()) throw DataError("retrieval_recall: no K values");
    const std::size_t width = text_vecs.front().size();
    for (std::size_t i = 0; i < text_vecs.size(); ++i) {
        if (text_vecs[i].size() != width || target_vecs[i].size() != width) {
            throw DataError("retrieval_recall: vectors differ in dimension");
        }
    }
    for (const std::size_t k : ks) {
        if (k == 0) throw DataError("retrieval_recall: K must be positive");
        if (k > text_vecs.size()) {
            throw DataError("retrieval_recall: K=" + std::to_string(k) + " exceeds gallery size " +
                            std::to_string(text_vecs.size()));
        }
    }

    RecallReport report;
    report.ks.assign(ks.begin(), ks.end());
    report.text_to_target = recall_one_way(text_vecs, target_vecs, ks);
    report.target_to_text = recall_one_way(target_vecs, text_vecs, ks);
    double sum = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) sum += report.text_to_target[i] + report.target_to_text[i];
    report.mean_recall = sum / static_cast<double>(2 * ks.size());
    return report;
}

DriftReport drift_report(const EmbeddingSet& before, const EmbeddingSet& after) {
    if (before.size() != after.size() || before.dim() != after.dim()) {
        throw DataError("drift_report: embeddings differ in shape");
    }
    DriftReport report;
    report.displacement.reserve(before.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double d = std::sqrt(squared_distance(before.row(i), after.row(i)));
        report.displacement.push_back(d);
        sum += d;
        report.max = std::max(report.max, d);
        if (d > 0.0) ++report.moved;
    }
    report.mean = before.size() ? sum / static_cast<double>(before.size()) : 0.0;
    return report;
}

void write_cohesion_csv(const CohesionReport& report, std::ostream& out) {
    out << "edge_count,mean_edge_cosine,median_edge_cosine\n"
        << std::setprecision(17) << report.edge_count << ',' << report.mean_edge_cosine << ','
        << report.median_edge_cosine << '\n';
}

void write_recall_csv(const RecallReport& report, std::ostream& out) {
    out << "direction,k,recall\n" << std::setprecision(17);
    for (std::size_t i = 0; i < report.ks.size(); ++i) out << "text_to_target," << report.ks[i] << ',' << report.text_to_target[i] << '\n';
    for (std::size_t i = 0; i < report.ks.size(); ++i) out << "target_to_text," << report.ks[i] << ',' << report.target_to_text[i] << '\n';
    out << "mean,," << report.mean_recall << '\n';
}

void write_drift_csv(const DriftReport& report, std::span<const std::string> vocab, std::ostream& out) {
    if (vocab.size() != report.displacement.size()) throw DataError("write_drift_csv: vocabulary size mismatch");
    out << "token,displacement\n" << std::setprecision(17);
    for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab[i] << ',' << report.displacement[i] << '\n';
}

void print_summary(const CohesionReport& report, std::ostream& out) {
    out << "cohesion: " << report.edge_count << " edges, mean cosine " << std::fixed << std::setprecision(6)
        << report.mean_edge_cosine << ", median cosine " << report.median_edge_cosine << '\n'
        << std::defaultfloat;
}

void print_summary(const RecallReport& report, std::ostream& out) {
    out << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < report.ks.size(); ++i) {
        out << "R@" << report.ks[i] << " text->target " << report.text_to_target[i] << "  target->text "
            << report.target_to_text[i] << '\n';
    }
    out << "mean recall " << report.mean_recall << '\n' << std::defaultfloat;
}

void print_summary(const DriftReport& report, std::ostream& out) {
    out << "drift: " << report.moved << " of " << report.displacement.size() << " words moved, mean "
        << std::setprecision(6) << report.mean << ", max " << report.max << '\n' << std::defaultfloat;
}

}  // namespace grovle
