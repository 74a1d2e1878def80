#include "grovle/embed_store.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>

#include "grovle/error.hpp"

namespace grovle {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return content;
}

std::size_t parse_count(std::string_view field, const std::string& what) {
    std::size_t value = 0;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc{} || ptr != end) throw DataError("malformed header: bad " + what + " '" + std::string(field) + "'");
    return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && is_space(line[i])) ++i;
        const std::size_t start = i;
        while (i < line.size() && !is_space(line[i])) ++i;
        if (i > start) fields.push_back(line.substr(start, i - start));
    }
    return fields;
}

std::pair<std::size_t, std::size_t> parse_header(std::string_view line) {
    const auto fields = split_fields(line);
    if (fields.size() != 2) throw DataError("malformed header: expected 'vocab_size dim'");
    const std::size_t count = parse_count(fields[0], "vocab size");
    const std::size_t dim = parse_count(fields[1], "dimension");
    if (dim == 0) throw DataError("malformed header: dimension must be positive");
    return {count, dim};
}

float parse_float(std::string_view field, std::size_t row) {
    float value = 0.0f;
    const auto* end = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw DataError("row " + std::to_string(row) + ": cannot parse value '" + std::string(field) + "'");
    }
    if (!std::isfinite(value)) throw DataError("row " + std::to_string(row) + ": non-finite value");
    return value;
}

EmbeddingSet load_text(const std::string& content) {
    std::string_view rest(content);
    auto next_line = [&rest]() -> std::optional<std::string_view> {
        if (rest.empty()) return std::nullopt;
        const auto nl = rest.find('\n');
        std::string_view line = rest.substr(0, nl);
        rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
        return line;
    };

    const auto header = next_line();
    if (!header) throw DataError("malformed header: empty file");
    const auto [count, dim] = parse_header(*header);

    std::vector<std::string> vocab;
    vocab.reserve(count);
    std::vector<double> values;
    values.reserve(count * dim);
    while (auto line = next_line()) {
        const auto fields = split_fields(*line);
        if (fields.empty()) continue;
        if (vocab.size() == count) throw DataError("more rows than the header's vocab size");
        if (fields.size() != dim + 1) {
            throw DataError("row " + std::to_string(vocab.size()) + " ('" + std::string(fields[0]) + "') has " +
                            std::to_string(fields.size() - 1) + " values, expected " + std::to_string(dim));
        }
        for (std::size_t d = 0; d < dim; ++d) values.push_back(parse_float(fields[d + 1], vocab.size()));
        vocab.emplace_back(fields[0]);
    }
    if (vocab.size() != count) {
        throw DataError("header declares " + std::to_string(count) + " rows, file has " + std::to_string(vocab.size()));
    }
    return EmbeddingSet(std::move(vocab), Matrix(count, dim, std::move(values)));
}

EmbeddingSet load_binary(const std::string& content) {
    const auto nl = content.find('\n');
    if (nl == std::string::npos) throw DataError("malformed header: missing newline");
    const auto [count, dim] = parse_header(std::string_view(content).substr(0, nl));

    std::vector<std::string> vocab;
    vocab.reserve(count);
    std::vector<double> values;
    values.reserve(count * dim);
    std::size_t pos = nl + 1;
    for (std::size_t r = 0; r < count; ++r) {
        while (pos < content.size() && content[pos] == '\n') ++pos;
        const auto sep = content.find(' ', pos);
        if (sep == std::string::npos) throw DataError("truncated file at row " + std::to_string(r));
        vocab.emplace_back(content.substr(pos, sep - pos));
        pos = sep + 1;
        if (content.size() - pos < 4 * dim) throw DataError("truncated vector at row " + std::to_string(r));
        for (std::size_t d = 0; d < dim; ++d, pos += 4) {
            std::uint32_t bits = 0;
            for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(content[pos + b]);
            const auto value = std::bit_cast<float>(bits);
            if (!std::isfinite(value)) throw DataError("row " + std::to_string(r) + ": non-finite value");
            values.push_back(value);
        }
    }
    if (pos < content.size() && content[pos] == '\n') ++pos;
    if (pos != content.size()) throw DataError("trailing bytes after the last declared row");
    return EmbeddingSet(std::move(vocab), Matrix(count, dim, std::move(values)));
}

float to_disk(double v) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw DataError("value " + std::to_string(v) + " overflows 32-bit float");
    return f;
}

}  // namespace

EmbeddingFormat parse_embedding_format(std::string_view name) {
    if (name == "text" || name == "txt") return EmbeddingFormat::text;
    if (name == "binary" || name == "bin") return EmbeddingFormat::binary;
    throw DataError("unknown embedding format '" + std::string(name) + "'");
}

std::string_view to_string(EmbeddingFormat format) {
    return format == EmbeddingFormat::text ? "text" : "binary";
}

bool is_valid_token(std::string_view token) {
    return !token.empty() && std::none_of(token.begin(), token.end(), is_space);
}

EmbeddingSet::EmbeddingSet(std::vector<std::string> vocab, Matrix vectors)
    : vocab_(std::move(vocab)), vectors_(std::move(vectors)) {
    if (vectors_.rows() != vocab_.size()) {
        throw DataError("embedding table has " + std::to_string(vectors_.rows()) + " rows for " +
                        std::to_string(vocab_.size()) + " tokens");
    }
    if (vectors_.cols() == 0) throw DataError("embedding dimension must be positive");
    index_.reserve(vocab_.size());
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        if (!is_valid_token(vocab_[i])) throw DataError("invalid token at row " + std::to_string(i));
        if (!index_.emplace(vocab_[i], i).second) throw DataError("duplicate token '" + vocab_[i] + "'");
    }
    for (double v : vectors_.values()) {
        if (!std::isfinite(v)) throw DataError("embedding table contains a non-finite value");
    }
}

std::optional<std::size_t> EmbeddingSet::index_of(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

EmbeddingSet EmbeddingSet::with_vectors(Matrix vectors) const {
    if (!vectors.same_shape(vectors_)) throw DataError("replacement table has a different shape");
    return EmbeddingSet(vocab_, std::move(vectors));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
    const std::string content = read_file(path);
    return format == EmbeddingFormat::text ? load_text(content) : load_binary(content);
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& path, EmbeddingFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");

    out << set.size() << ' ' << set.dim() << '\n';
    if (format == EmbeddingFormat::text) {
        char buf[64];
        for (std::size_t i = 0; i < set.size(); ++i) {
            out << set.token(i);
            for (double v : set.row(i)) {
                auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, to_disk(v));
                out << ' ' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
            }
            out << '\n';
        }
    } else {
        std::string bytes;
        bytes.resize(4 * set.dim());
        for (std::size_t i = 0; i < set.size(); ++i) {
            out << set.token(i) << ' ';
            std::size_t p = 0;
            for (double v : set.row(i)) {
                auto bits = std::bit_cast<std::uint32_t>(to_disk(v));
                for (int b = 0; b < 4; ++b, bits >>= 8) bytes[p++] = static_cast<char>(bits & 0xFF);
            }
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        }
    }
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw DataError("cosine_similarity: length mismatch");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu == 0.0 || nv == 0.0) throw DataError("cosine_similarity: zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::vector<Neighbor> nearest_neighbors(const EmbeddingSet& set, std::string_view word, std::size_t k) {
    const auto query = set.index_of(word);
    if (!query) throw DataError("out-of-vocabulary query '" + std::string(word) + "'");
    if (k == 0 || k + 1 > set.size()) {
        throw DataError("k must be in [1, " + std::to_string(set.size() - 1) + "]");
    }

    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(set.size() - 1);
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i != *query) scored.emplace_back(cosine_similarity(set.row(*query), set.row(i)), i);
    }
    auto better = [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);

    std::vector<Neighbor> result;
    result.reserve(k);
    for (std::size_t i = 0; i < k; ++i) result.push_back({set.token(scored[i].second), scored[i].first});
    return result;
}

}  // namespace grovle
