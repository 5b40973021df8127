#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mimic/data.hpp"
#include "mimic/error.hpp"
#include "mimic/model.hpp"
#include "mimic/ranked.hpp"
#include "mimic/rng.hpp"

namespace mimic {

// Exact brute-force cosine index over unit-norm embeddings. Immutable after
// build; concurrent searches are safe.
class EmbeddingIndex {
 public:
  static EmbeddingIndex build(std::vector<std::string> ids, std::vector<float> matrix, int dim) {
    if (dim <= 0) throw Error(ErrorKind::build, "embedding dimension must be positive");
    if (matrix.size() != ids.size() * static_cast<std::size_t>(dim)) {
      throw Error(ErrorKind::build, "matrix size does not match ids x dim");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) throw Error(ErrorKind::build, "duplicate id " + id);
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      float sq = 0.0f;
      for (int j = 0; j < dim; ++j) {
        const float v = matrix[i * static_cast<std::size_t>(dim) + j];
        sq += v * v;
      }
      if (std::abs(std::sqrt(sq) - 1.0f) > 1e-3f) {
        throw Error(ErrorKind::build, "row for " + ids[i] + " is not unit-norm");
      }
    }
    EmbeddingIndex index;
    index.ids_ = std::move(ids);
    index.matrix_ = std::move(matrix);
    index.dim_ = dim;
    return index;
  }

  std::size_t size() const { return ids_.size(); }
  int dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> row(std::size_t i) const {
    return {matrix_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }

  // Top-min(k, size) by cosine score; ties broken by ascending doc_id.
  RankedList search(std::span<const float> query, int k, std::string query_id = "") const {
    if (k < 1) throw Error(ErrorKind::range, "search: k must be >= 1");
    if (query.size() != static_cast<std::size_t>(dim_)) {
      throw Error(ErrorKind::dimension, "search: query dimension mismatch");
    }
    std::vector<std::size_t> order(ids_.size());
    std::vector<float> scores(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      order[i] = i;
      const float* r = matrix_.data() + i * static_cast<std::size_t>(dim_);
      float acc = 0.0f;
      for (int j = 0; j < dim_; ++j) acc += r[j] * query[j];
      scores[i] = acc;
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return ids_[a] < ids_[b];
    });
    RankedList out;
    out.query_id = std::move(query_id);
    const std::size_t take = std::min<std::size_t>(order.size(), static_cast<std::size_t>(k));
    out.entries.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      out.entries.push_back({ids_[order[i]], scores[order[i]]});
    }
    return out;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<float> matrix_;  // row-major, size() x dim
  int dim_ = 0;
};

// Embeds every corpus document (inference mode) and builds an index.
inline EmbeddingIndex build_corpus_index(const Parameters& params, const ModelConfig& cfg,
                                         const std::vector<Document>& corpus) {
  NoGradGuard no_grad;
  std::vector<std::string> ids;
  std::vector<float> matrix;
  ids.reserve(corpus.size());
  matrix.reserve(corpus.size() * static_cast<std::size_t>(cfg.embed_dim));
  for (const auto& d : corpus) {
    ids.push_back(d.id);
    Embedding e = embed_item(doc_input(d), params, cfg);
    matrix.insert(matrix.end(), e.vector.data->begin(), e.vector.data->end());
  }
  return EmbeddingIndex::build(std::move(ids), std::move(matrix), cfg.embed_dim);
}

// ANCE-style hard negative mining: retrieve top_n candidates with the
// stage-1 model, drop ground-truth positives, then draw per_modality_k
// negatives from each modality present among the remaining candidates
// (image documents with or without caption are one pool). Image negatives
// are drawn before text negatives.
inline std::map<std::string, std::vector<std::string>> mine_hard_negatives(
    const Parameters& params, const ModelConfig& cfg, const Dataset& dataset,
    const std::vector<Query>& queries, int top_n, int per_modality_k, Rng& rng) {
  if (top_n < 1) throw Error(ErrorKind::range, "top_n must be >= 1");
  if (per_modality_k < 1) throw Error(ErrorKind::range, "per_modality_k must be >= 1");
  EmbeddingIndex index = build_corpus_index(params, cfg, dataset.corpus);

  std::map<std::string, std::vector<std::string>> negatives;
  NoGradGuard no_grad;
  for (const auto& q : queries) {
    for (const auto& pid : q.positives) {
      if (!dataset.doc_index.count(pid)) {
        throw Error(ErrorKind::lookup, "query " + q.id + " references unknown document " + pid);
      }
    }
    Embedding e = embed_item(query_input(q), params, cfg);
    RankedList top = index.search(
        std::span<const float>(e.vector.data->data(), e.vector.data->size()), top_n, q.id);

    std::set<std::string> positive_set(q.positives.begin(), q.positives.end());
    std::vector<std::string> image_pool, text_pool;
    for (const auto& entry : top.entries) {
      if (positive_set.count(entry.doc_id)) continue;
      const Document& d = dataset.doc(entry.doc_id);
      (d.has_visual() ? image_pool : text_pool).push_back(entry.doc_id);
    }
    auto draw = [&](std::vector<std::string>& pool, std::vector<std::string>& out) {
      const int take = std::min<int>(per_modality_k, static_cast<int>(pool.size()));
      for (int i = 0; i < take; ++i) {
        const std::size_t pick = i + rng.uniform_index(pool.size() - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[pick]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
      }
    };
    std::vector<std::string> negs;
    draw(image_pool, negs);
    draw(text_pool, negs);
    negatives.emplace(q.id, std::move(negs));
  }
  return negatives;
}

}  // namespace mimic
