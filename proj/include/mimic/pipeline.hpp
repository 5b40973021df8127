#pragma once

#include <span>
#include <string>
#include <vector>

#include "mimic/data.hpp"
#include "mimic/diagnostics.hpp"
#include "mimic/index.hpp"
#include "mimic/metrics.hpp"
#include "mimic/model.hpp"
#include "mimic/training.hpp"

namespace mimic {

// Which representation `encode` emits for corpus documents.
enum class EncodeMode { fused, visual, caption, text };

inline EncodeMode parse_encode_mode(const std::string& s) {
  if (s == "fused") return EncodeMode::fused;
  if (s == "visual") return EncodeMode::visual;
  if (s == "caption") return EncodeMode::caption;
  if (s == "text") return EncodeMode::text;
  throw Error(ErrorKind::config, "unknown encode mode '" + s + "'");
}

struct EncodedSet {
  std::vector<std::string> ids;
  std::vector<float> matrix;  // row-major ids.size() x dim
  int dim = 0;

  std::span<const float> row(std::size_t i) const {
    return {matrix.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }

  void push(const std::string& id, const Embedding& e) {
    ids.push_back(id);
    matrix.insert(matrix.end(), e.vector.data->begin(), e.vector.data->end());
  }
};

// Corpus embeddings under the chosen mode: fused keeps whatever modalities a
// document has; visual/caption/text restrict to documents carrying that
// modality and embed it alone.
inline EncodedSet encode_corpus(const Parameters& params, const ModelConfig& cfg,
                                const std::vector<Document>& corpus, EncodeMode mode) {
  NoGradGuard no_grad;
  EncodedSet out;
  out.dim = cfg.embed_dim;
  for (const auto& d : corpus) {
    switch (mode) {
      case EncodeMode::fused:
        out.push(d.id, embed_item(doc_input(d), params, cfg));
        break;
      case EncodeMode::visual:
        if (d.visual_patches) {
          ModalityInput in;
          in.visual_patches = d.visual_patches;
          out.push(d.id, embed_item(in, params, cfg));
        }
        break;
      case EncodeMode::caption:
        if (d.caption_tokens) {
          ModalityInput in;
          in.text_tokens = d.caption_tokens;
          out.push(d.id, embed_item(in, params, cfg));
        }
        break;
      case EncodeMode::text:
        if (d.text_tokens) {
          ModalityInput in;
          in.text_tokens = d.text_tokens;
          out.push(d.id, embed_item(in, params, cfg));
        }
        break;
    }
  }
  return out;
}

inline EncodedSet encode_queries(const Parameters& params, const ModelConfig& cfg,
                                 const std::vector<Query>& queries) {
  NoGradGuard no_grad;
  EncodedSet out;
  out.dim = cfg.embed_dim;
  for (const auto& q : queries) out.push(q.id, embed_item(query_input(q), params, cfg));
  return out;
}

inline std::vector<RankedList> rank_queries(const EmbeddingIndex& index,
                                            const EncodedSet& queries, int k) {
  std::vector<RankedList> out;
  out.reserve(queries.ids.size());
  for (std::size_t i = 0; i < queries.ids.size(); ++i) {
    out.push_back(index.search(queries.row(i), k, queries.ids[i]));
  }
  return out;
}

// Full retrieval evaluation of a query split against the corpus.
inline MetricsReport evaluate_split(const Parameters& params, const ModelConfig& cfg,
                                    const Dataset& ds, const std::vector<Query>& queries,
                                    const MetricsSpec& spec = MetricsSpec{}) {
  int k_max = 1;
  for (int k : spec.recall_ks) k_max = std::max(k_max, k);
  for (int k : spec.mrr_ks) k_max = std::max(k_max, k);
  for (int k : spec.ndcg_ks) k_max = std::max(k_max, k);
  EmbeddingIndex index = build_corpus_index(params, cfg, ds.corpus);
  EncodedSet q = encode_queries(params, cfg, queries);
  return evaluate_run(rank_queries(index, q, k_max), judgments_from_queries(queries), spec);
}

// Role-separated embeddings for the misalignment diagnostics: per image
// document the visual-only, caption-only and (when captioned) fused
// embeddings, plus the text-document pool.
inline ModalityEmbeddingSet build_modality_set(const Parameters& params, const ModelConfig& cfg,
                                               const std::vector<Document>& corpus) {
  NoGradGuard no_grad;
  ModalityEmbeddingSet set;
  set.dim = cfg.embed_dim;
  for (const auto& d : corpus) {
    if (d.visual_patches) {
      const auto idx = set.add_image_item(d.id);
      ModalityInput visual_only;
      visual_only.visual_patches = d.visual_patches;
      set.visual[idx] = *embed_item(visual_only, params, cfg).vector.data;
      if (d.caption_tokens) {
        ModalityInput caption_only;
        caption_only.text_tokens = d.caption_tokens;
        set.caption[idx] = *embed_item(caption_only, params, cfg).vector.data;
        set.fused[idx] = *embed_item(doc_input(d), params, cfg).vector.data;
      }
    } else {
      set.text_ids.push_back(d.id);
      set.text_pool.push_back(*embed_item(doc_input(d), params, cfg).vector.data);
    }
  }
  return set;
}

// Assembles a ModalityEmbeddingSet from per-role embedding files, matching
// image roles by id.
inline ModalityEmbeddingSet modality_set_from_files(const EmbeddingFile& visual,
                                                    const EmbeddingFile* caption,
                                                    const EmbeddingFile* fused,
                                                    const EmbeddingFile& text) {
  ModalityEmbeddingSet set;
  set.dim = static_cast<int>(visual.dim);
  auto row_of = [](const EmbeddingFile& f, std::size_t i) {
    return std::vector<float>(f.matrix.begin() + i * f.dim, f.matrix.begin() + (i + 1) * f.dim);
  };
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < visual.ids.size(); ++i) {
    pos[visual.ids[i]] = set.add_image_item(visual.ids[i]);
    set.visual[pos[visual.ids[i]]] = row_of(visual, i);
  }
  auto merge = [&](const EmbeddingFile* f, auto field) {
    if (!f) return;
    if (f->dim != visual.dim) throw Error(ErrorKind::dimension, "embedding dim mismatch");
    for (std::size_t i = 0; i < f->ids.size(); ++i) {
      auto it = pos.find(f->ids[i]);
      if (it == pos.end()) continue;  // role without a visual row is unusable
      (set.*field)[it->second] = row_of(*f, i);
    }
  };
  merge(caption, &ModalityEmbeddingSet::caption);
  merge(fused, &ModalityEmbeddingSet::fused);
  if (text.dim != visual.dim) throw Error(ErrorKind::dimension, "embedding dim mismatch");
  for (std::size_t i = 0; i < text.ids.size(); ++i) {
    set.text_ids.push_back(text.ids[i]);
    set.text_pool.push_back(row_of(text, i));
  }
  return set;
}

// Mined-negative map file: one JSON object per line, sorted by query id.
inline void write_negatives(const std::filesystem::path& path, const NegativesMap& negatives) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::format, "cannot open " + path.string());
  for (const auto& [qid, ids] : negatives) {
    nlohmann::json j;
    j["query"] = qid;
    j["negatives"] = ids;
    out << j.dump() << '\n';
  }
}

inline NegativesMap read_negatives(const std::filesystem::path& path) {
  NegativesMap negatives;
  detail::for_each_line(path, [&](const nlohmann::json& j) {
    negatives[j.at("query").get<std::string>()] =
        j.at("negatives").get<std::vector<std::string>>();
  });
  return negatives;
}

}  // namespace mimic
