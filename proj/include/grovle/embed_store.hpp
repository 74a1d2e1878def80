#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grovle/matrix.hpp"

namespace grovle {

enum class EmbeddingFormat { text, binary };

EmbeddingFormat parse_embedding_format(std::string_view name);
std::string_view to_string(EmbeddingFormat format);

// Vocabulary plus a vocab_size x dim table of vectors. Rows are held in
// double precision; files store 32-bit floats.
//
// Construction validates: tokens unique, non-empty and whitespace-free;
// one row per token; every entry finite.
class EmbeddingSet {
public:
    EmbeddingSet() = default;
    EmbeddingSet(std::vector<std::string> vocab, Matrix vectors);

    std::size_t size() const { return vocab_.size(); }
    std::size_t dim() const { return vectors_.cols(); }

    const std::vector<std::string>& vocab() const { return vocab_; }
    const std::string& token(std::size_t i) const { return vocab_[i]; }
    std::optional<std::size_t> index_of(std::string_view token) const;

    const Matrix& vectors() const { return vectors_; }
    std::span<const double> row(std::size_t i) const { return vectors_.row(i); }

    // Same vocabulary, new table. The table must match the current shape.
    EmbeddingSet with_vectors(Matrix vectors) const;

    bool operator==(const EmbeddingSet& other) const {
        return vocab_ == other.vocab_ && vectors_ == other.vectors_;
    }

private:
    std::vector<std::string> vocab_;
    Matrix vectors_;
    std::unordered_map<std::string, std::size_t> index_;
};

bool is_valid_token(std::string_view token);

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path,
                     EmbeddingFormat format);

// <u,v> / (|u| |v|). Throws DataError for a zero-norm input or a length mismatch.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct Neighbor {
    std::string token;
    double similarity;
};

// k most cosine-similar tokens to `word`, excluding itself. Descending
// similarity, ties by ascending vocabulary index.
std::vector<Neighbor> nearest_neighbors(const EmbeddingSet& set, std::string_view word,
                                        std::size_t k);

}  // namespace grovle
