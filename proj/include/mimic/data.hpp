#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimic/error.hpp"
#include "mimic/io.hpp"
#include "mimic/metrics.hpp"
#include "mimic/model.hpp"
#include "mimic/rng.hpp"
#include "mimic/tensor.hpp"

namespace mimic {

// --------------------------------------------------------------------------
// Corpus items. A document is text-only (T), visual-only (I^V) or visual
// plus caption (I^VC); a query always has a textual question and optionally
// an image with or without caption.
// --------------------------------------------------------------------------

struct Document {
  std::string id;
  std::optional<std::vector<int>> text_tokens;     // pure text body
  std::optional<std::vector<int>> caption_tokens;  // only with visual_patches
  std::optional<Tensor> visual_patches;            // [n_patches x visual_feat_dim]
  std::optional<int> topic_id;                     // generator ground truth

  bool has_visual() const { return visual_patches.has_value(); }
};

struct Query {
  std::string id;
  std::vector<int> text_tokens;  // the question, never empty
  std::optional<std::vector<int>> caption_tokens;
  std::optional<Tensor> visual_patches;
  std::vector<std::string> positives;  // sorted, unique, non-empty
  TaskTag task_tag = TaskTag::mixed;
  std::optional<int> topic_id;

  bool has_visual() const { return visual_patches.has_value(); }
};

inline void validate_document(const Document& d) {
  if (!d.text_tokens && !d.visual_patches) {
    throw Error(ErrorKind::validation, "document " + d.id + " has no modality");
  }
  if (d.caption_tokens && !d.visual_patches) {
    throw Error(ErrorKind::validation,
                "document " + d.id + " has a caption but no visual features");
  }
  if (d.text_tokens && d.text_tokens->empty()) {
    throw Error(ErrorKind::validation, "document " + d.id + " has empty text");
  }
}

inline void validate_query(const Query& q) {
  if (q.text_tokens.empty()) {
    throw Error(ErrorKind::validation, "query " + q.id + " has empty text");
  }
  if (q.caption_tokens && !q.visual_patches) {
    throw Error(ErrorKind::validation, "query " + q.id + " has a caption but no image");
  }
  if (q.positives.empty()) {
    throw Error(ErrorKind::validation, "query " + q.id + " has no positives");
  }
}

// Model-facing view. Document text is its body or, for image documents, the
// caption. Query text is the question with the caption appended when present.
inline ModalityInput doc_input(const Document& d) {
  ModalityInput in;
  if (d.text_tokens) {
    in.text_tokens = d.text_tokens;
  } else if (d.caption_tokens) {
    in.text_tokens = d.caption_tokens;
  }
  in.visual_patches = d.visual_patches;
  return in;
}

inline ModalityInput query_input(const Query& q) {
  ModalityInput in;
  std::vector<int> text = q.text_tokens;
  if (q.caption_tokens) text.insert(text.end(), q.caption_tokens->begin(), q.caption_tokens->end());
  in.text_tokens = std::move(text);
  in.visual_patches = q.visual_patches;
  return in;
}

// --------------------------------------------------------------------------
// Generator
// --------------------------------------------------------------------------

struct GeneratorConfig {
  int n_topics = 64;
  int corpus_size = 512;
  int n_train_queries = 200;
  int n_valid_queries = 64;
  int n_test_queries = 64;
  int vocab_size = 256;
  int n_patches = 6;
  int visual_feat_dim = 16;
  // Document modality proportions {T, I^V, I^VC}; must sum to 1 and agree
  // with corpus_caption_ratio on the I^VC share of image documents.
  double doc_mix_text = 0.5;
  double doc_mix_visual_only = 0.25;
  double doc_mix_visual_caption = 0.25;
  // Query modality proportions {T, TI}.
  double query_mix_text = 1.0;
  double query_mix_multimodal = 0.0;
  double corpus_caption_ratio = 0.5;
  double visual_signal_strength = 1.0;
  double text_signal_strength = 4.0;
  double noise_scale = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw Error(ErrorKind::config, std::string(name) + " must be positive");
    };
    positive(n_topics, "n_topics");
    positive(corpus_size, "corpus_size");
    positive(n_train_queries, "n_train_queries");
    positive(vocab_size, "vocab_size");
    positive(n_patches, "n_patches");
    positive(visual_feat_dim, "visual_feat_dim");
    if (n_valid_queries < 0 || n_test_queries < 0) {
      throw Error(ErrorKind::config, "query counts must be non-negative");
    }
    if (vocab_size < 4) throw Error(ErrorKind::config, "vocab_size must be at least 4");
    if (vocab_size / 2 < n_topics) {
      throw Error(ErrorKind::config, "vocab_size must be at least 2 * n_topics");
    }
    if (corpus_size < n_topics) {
      throw Error(ErrorKind::config, "corpus_size must be at least n_topics");
    }
    auto in01 = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(ErrorKind::config, std::string(name) + " must be in [0,1]");
      }
    };
    in01(doc_mix_text, "doc_mix_text");
    in01(doc_mix_visual_only, "doc_mix_visual_only");
    in01(doc_mix_visual_caption, "doc_mix_visual_caption");
    in01(query_mix_text, "query_mix_text");
    in01(query_mix_multimodal, "query_mix_multimodal");
    in01(corpus_caption_ratio, "corpus_caption_ratio");
    if (std::abs(doc_mix_text + doc_mix_visual_only + doc_mix_visual_caption - 1.0) > 1e-9) {
      throw Error(ErrorKind::config, "doc modality proportions must sum to 1");
    }
    if (std::abs(query_mix_text + query_mix_multimodal - 1.0) > 1e-9) {
      throw Error(ErrorKind::config, "query modality proportions must sum to 1");
    }
    const double image_mass = doc_mix_visual_only + doc_mix_visual_caption;
    if (image_mass > 1e-12 &&
        std::abs(doc_mix_visual_caption - image_mass * corpus_caption_ratio) > 1e-6) {
      throw Error(ErrorKind::config,
                  "corpus_caption_ratio is inconsistent with the I^V / I^VC split");
    }
    if (visual_signal_strength < 0 || text_signal_strength < 0 || noise_scale < 0) {
      throw Error(ErrorKind::config, "signal strengths and noise must be non-negative");
    }
  }
};

// What the model needs to know about a dataset.
struct DatasetMeta {
  int vocab_size = 0;
  int n_patches = 0;
  int visual_feat_dim = 0;
  int max_text_len = 0;
};

struct Dataset {
  std::vector<Document> corpus;
  std::vector<Query> train, valid, test;
  DatasetMeta meta;
  std::map<std::string, std::size_t> doc_index;

  void build_doc_index() {
    doc_index.clear();
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (!doc_index.emplace(corpus[i].id, i).second) {
        throw Error(ErrorKind::validation, "duplicate document id " + corpus[i].id);
      }
    }
  }

  const Document& doc(const std::string& id) const {
    auto it = doc_index.find(id);
    if (it == doc_index.end()) throw Error(ErrorKind::lookup, "unknown document id " + id);
    return corpus[it->second];
  }

  void validate() const {
    for (const auto& d : corpus) validate_document(d);
    for (const auto* split : {&train, &valid, &test}) {
      for (const auto& q : *split) {
        validate_query(q);
        for (const auto& pid : q.positives) {
          if (!doc_index.count(pid)) {
            throw Error(ErrorKind::validation,
                        "query " + q.id + " references missing document " + pid);
          }
        }
      }
    }
  }
};

inline std::vector<QueryJudgment> judgments_from_queries(const std::vector<Query>& queries) {
  std::vector<QueryJudgment> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    out.push_back({q.id, std::set<std::string>(q.positives.begin(), q.positives.end()),
                   q.task_tag});
  }
  return out;
}

namespace detail {

// Token length ranges (document body, caption, question).
inline constexpr int kDocTextLenMin = 8, kDocTextLenMax = 16;
inline constexpr int kCaptionLenMin = 4, kCaptionLenMax = 8;
inline constexpr int kQueryLenMin = 10, kQueryLenMax = 16;

// Topic-conditioned token sampler. Document-side text draws from the lower
// vocabulary half, query-side text from the upper half; disjoint halves mean
// query/document relevance carries no lexical overlap an untrained encoder
// could exploit, so the correspondence has to be learned. Within a half each
// topic owns a disjoint token block, and a draw lands in the block with the
// mixture weight 1 - exp(-text_signal_strength), else anywhere in the half.
// Zero signal strength is a uniform draw carrying no topic information.
class TokenSampler {
 public:
  TokenSampler(int n_topics, int vocab_size, double sharpness)
      : n_topics_(n_topics),
        half_(vocab_size / 2),
        block_(half_ / n_topics),
        block_weight_(1.0 - std::exp(-sharpness)) {
    if (block_ < 1) {
      throw Error(ErrorKind::config, "vocab_size too small for n_topics topic blocks");
    }
  }

  int sample(int topic, bool query_side, Rng& rng) const {
    const int offset = query_side ? half_ : 0;
    if (rng.uniform() < block_weight_) {
      return offset + topic * block_ + static_cast<int>(rng.uniform_index(
                                           static_cast<std::size_t>(block_)));
    }
    return offset + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(half_)));
  }

  std::vector<int> sample_sequence(int topic, bool query_side, int len, Rng& rng) const {
    std::vector<int> out(static_cast<std::size_t>(len));
    for (auto& t : out) t = sample(topic, query_side, rng);
    return out;
  }

 private:
  int n_topics_;
  int half_;
  int block_;
  double block_weight_;
};

}  // namespace detail

// Synthetic multimodal dataset. Every document gets a topic (stratified so
// each topic is populated); queries share the topic of their 1-2 positives.
// Visual patches are a fixed random linear image of the topic latent plus
// isotropic noise; token text is sampled from topic-conditioned vocabularies.
inline Dataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "generator"));

  // Topic latents (unit vectors) and the fixed latent -> patch map.
  std::vector<std::vector<double>> latents(static_cast<std::size_t>(cfg.n_topics));
  for (auto& u : latents) {
    u.resize(static_cast<std::size_t>(cfg.visual_feat_dim));
    double sq = 0.0;
    for (auto& v : u) {
      v = rng.normal();
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    for (auto& v : u) v /= norm > 0 ? norm : 1.0;
  }
  const std::size_t patch_elems =
      static_cast<std::size_t>(cfg.n_patches) * static_cast<std::size_t>(cfg.visual_feat_dim);
  std::vector<double> patch_map(patch_elems * static_cast<std::size_t>(cfg.visual_feat_dim));
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.visual_feat_dim));
  for (auto& v : patch_map) v = map_scale * rng.normal();

  std::vector<std::vector<float>> topic_patches(static_cast<std::size_t>(cfg.n_topics));
  for (int t = 0; t < cfg.n_topics; ++t) {
    auto& out = topic_patches[static_cast<std::size_t>(t)];
    out.resize(patch_elems);
    for (std::size_t r = 0; r < patch_elems; ++r) {
      double acc = 0.0;
      for (int c = 0; c < cfg.visual_feat_dim; ++c) {
        acc += patch_map[r * static_cast<std::size_t>(cfg.visual_feat_dim) + c] *
               latents[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
      }
      out[r] = static_cast<float>(cfg.visual_signal_strength * acc);
    }
  }

  detail::TokenSampler sampler(cfg.n_topics, cfg.vocab_size, cfg.text_signal_strength);

  auto make_patches = [&](int topic) {
    std::vector<float> values(patch_elems);
    const auto& base = topic_patches[static_cast<std::size_t>(topic)];
    for (std::size_t i = 0; i < patch_elems; ++i) {
      values[i] = base[i] + static_cast<float>(cfg.noise_scale * rng.normal());
    }
    return Tensor::from({cfg.n_patches, cfg.visual_feat_dim}, std::move(values));
  };

  Dataset ds;
  ds.meta = {cfg.vocab_size, cfg.n_patches, cfg.visual_feat_dim,
             detail::kQueryLenMax + detail::kCaptionLenMax};

  // Corpus. Stratified topic assignment keeps every topic populated.
  std::vector<int> doc_topics(static_cast<std::size_t>(cfg.corpus_size));
  for (int i = 0; i < cfg.corpus_size; ++i) doc_topics[static_cast<std::size_t>(i)] = i % cfg.n_topics;
  rng.shuffle(doc_topics);

  // (topic, is_image) -> document positions, for positive sampling.
  std::vector<std::vector<std::size_t>> text_docs_by_topic(static_cast<std::size_t>(cfg.n_topics));
  std::vector<std::vector<std::size_t>> image_docs_by_topic(static_cast<std::size_t>(cfg.n_topics));

  for (int i = 0; i < cfg.corpus_size; ++i) {
    Document d;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "d%05d", i);
    d.id = idbuf;
    const int topic = doc_topics[static_cast<std::size_t>(i)];
    d.topic_id = topic;
    const bool is_text = rng.uniform() < cfg.doc_mix_text;
    if (is_text) {
      const int len = rng.uniform_int(detail::kDocTextLenMin, detail::kDocTextLenMax);
      d.text_tokens = sampler.sample_sequence(topic, false, len, rng);
      text_docs_by_topic[static_cast<std::size_t>(topic)].push_back(ds.corpus.size());
    } else {
      d.visual_patches = make_patches(topic);
      if (rng.uniform() < cfg.corpus_caption_ratio) {
        const int len = rng.uniform_int(detail::kCaptionLenMin, detail::kCaptionLenMax);
        d.caption_tokens = sampler.sample_sequence(topic, false, len, rng);
      }
      image_docs_by_topic[static_cast<std::size_t>(topic)].push_back(ds.corpus.size());
    }
    ds.corpus.push_back(std::move(d));
  }

  // Ground-truth relevance: each (topic, modality class) cell designates a
  // fixed pool of 1-2 answer documents, shared by every query of that cell.
  // Relevance is therefore consistent across queries, so same-topic
  // non-positive documents are true negatives for all of them.
  std::vector<std::vector<std::string>> cell_positives(
      static_cast<std::size_t>(cfg.n_topics) * 2);
  for (int topic = 0; topic < cfg.n_topics; ++topic) {
    for (int cls = 0; cls < 2; ++cls) {
      const auto& pool = cls == 0 ? text_docs_by_topic[static_cast<std::size_t>(topic)]
                                  : image_docs_by_topic[static_cast<std::size_t>(topic)];
      if (pool.empty()) continue;
      const int n_pos = std::min<int>(1 + rng.coin(), static_cast<int>(pool.size()));
      std::vector<std::size_t> candidates = pool;
      auto& cell = cell_positives[static_cast<std::size_t>(topic * 2 + cls)];
      for (int p = 0; p < n_pos; ++p) {
        const std::size_t pick = p + rng.uniform_index(candidates.size() - p);
        std::swap(candidates[static_cast<std::size_t>(p)], candidates[pick]);
        cell.push_back(ds.corpus[candidates[static_cast<std::size_t>(p)]].id);
      }
      std::sort(cell.begin(), cell.end());
    }
  }

  // Queries. Topics are cycled through shuffled permutations so every topic
  // is covered once the split is at least n_topics queries.
  auto gen_queries = [&](int count, const std::string& prefix) {
    std::vector<Query> out;
    std::vector<int> topic_cycle;
    for (int i = 0; i < count; ++i) {
      if (topic_cycle.empty()) {
        topic_cycle.resize(static_cast<std::size_t>(cfg.n_topics));
        for (int t = 0; t < cfg.n_topics; ++t) topic_cycle[static_cast<std::size_t>(t)] = t;
        rng.shuffle(topic_cycle);
      }
      const int topic = topic_cycle.back();
      topic_cycle.pop_back();

      Query q;
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s%05d", prefix.c_str(), i);
      q.id = idbuf;
      q.topic_id = topic;

      bool want_text_positives = rng.uniform() < cfg.doc_mix_text;
      const auto* cell = &cell_positives[static_cast<std::size_t>(topic * 2 +
                                                                  (want_text_positives ? 0 : 1))];
      if (cell->empty()) {
        want_text_positives = !want_text_positives;
        cell = &cell_positives[static_cast<std::size_t>(topic * 2 +
                                                        (want_text_positives ? 0 : 1))];
      }
      if (cell->empty()) {
        throw Error(ErrorKind::internal, "topic without documents despite stratification");
      }
      q.positives = *cell;

      const int qlen = rng.uniform_int(detail::kQueryLenMin, detail::kQueryLenMax);
      q.text_tokens = sampler.sample_sequence(topic, true, qlen, rng);
      const bool multimodal_query = rng.uniform() >= cfg.query_mix_text;
      if (multimodal_query) {
        q.visual_patches = make_patches(topic);
        if (rng.uniform() < cfg.corpus_caption_ratio) {
          const int clen = rng.uniform_int(detail::kCaptionLenMin, detail::kCaptionLenMax);
          q.caption_tokens = sampler.sample_sequence(topic, true, clen, rng);
        }
      }
      if (!multimodal_query) {
        q.task_tag = want_text_positives ? TaskTag::T2T : TaskTag::T2I;
      } else {
        q.task_tag = want_text_positives ? TaskTag::TI2T : TaskTag::mixed;
      }
      out.push_back(std::move(q));
    }
    return out;
  };

  ds.train = gen_queries(cfg.n_train_queries, "qtr");
  ds.valid = gen_queries(cfg.n_valid_queries, "qva");
  ds.test = gen_queries(cfg.n_test_queries, "qte");

  ds.build_doc_index();
  ds.validate();
  return ds;
}

// --------------------------------------------------------------------------
// Dataset files: one JSON object per line, plus a meta.json.
// --------------------------------------------------------------------------

namespace detail {

inline nlohmann::json patches_to_json(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape;
  j["data"] = *t.data;
  return j;
}

inline Tensor patches_from_json(const nlohmann::json& j) {
  std::vector<int> shape = j.at("shape").get<std::vector<int>>();
  std::vector<float> data = j.at("data").get<std::vector<float>>();
  return Tensor::from(std::move(shape), std::move(data));
}

inline nlohmann::json document_to_json(const Document& d) {
  nlohmann::json j;
  j["id"] = d.id;
  if (d.text_tokens) j["text"] = *d.text_tokens;
  if (d.caption_tokens) j["caption"] = *d.caption_tokens;
  if (d.visual_patches) j["patches"] = patches_to_json(*d.visual_patches);
  if (d.topic_id) j["topic"] = *d.topic_id;
  return j;
}

inline nlohmann::json query_to_json(const Query& q) {
  nlohmann::json j;
  j["id"] = q.id;
  j["text"] = q.text_tokens;
  if (q.caption_tokens) j["caption"] = *q.caption_tokens;
  if (q.visual_patches) j["patches"] = patches_to_json(*q.visual_patches);
  j["positives"] = q.positives;
  j["task"] = to_string(q.task_tag);
  return j;
}

template <class Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse,
                  path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      fn(j);
    } catch (const Error&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse,
                  path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline Document document_from_json(const nlohmann::json& j) {
  Document d;
  d.id = j.at("id").get<std::string>();
  if (j.contains("text")) d.text_tokens = j.at("text").get<std::vector<int>>();
  if (j.contains("caption")) d.caption_tokens = j.at("caption").get<std::vector<int>>();
  if (j.contains("patches")) d.visual_patches = patches_from_json(j.at("patches"));
  if (j.contains("topic")) d.topic_id = j.at("topic").get<int>();
  validate_document(d);
  return d;
}

inline Query query_from_json(const nlohmann::json& j) {
  Query q;
  q.id = j.at("id").get<std::string>();
  q.text_tokens = j.at("text").get<std::vector<int>>();
  if (j.contains("caption")) q.caption_tokens = j.at("caption").get<std::vector<int>>();
  if (j.contains("patches")) q.visual_patches = patches_from_json(j.at("patches"));
  q.positives = j.at("positives").get<std::vector<std::string>>();
  q.task_tag = parse_task_tag(j.at("task").get<std::string>());
  validate_query(q);
  return q;
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  auto write_lines =
      [&](const std::filesystem::path& path, auto const& items, auto to_json) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorKind::format, "cannot open " + path.string());
        for (const auto& item : items) out << to_json(item).dump() << '\n';
      };
  write_lines(dir / "corpus.jsonl", ds.corpus, detail::document_to_json);
  write_lines(dir / "queries_train.jsonl", ds.train, detail::query_to_json);
  write_lines(dir / "queries_valid.jsonl", ds.valid, detail::query_to_json);
  write_lines(dir / "queries_test.jsonl", ds.test, detail::query_to_json);
  nlohmann::json meta;
  meta["vocab_size"] = ds.meta.vocab_size;
  meta["n_patches"] = ds.meta.n_patches;
  meta["visual_feat_dim"] = ds.meta.visual_feat_dim;
  meta["max_text_len"] = ds.meta.max_text_len;
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

// Loads one queries_*.jsonl file (used as a judgments source by `eval`).
inline std::vector<Query> load_queries_file(const std::filesystem::path& path) {
  std::vector<Query> out;
  detail::for_each_line(path, [&](const nlohmann::json& j) {
    out.push_back(detail::query_from_json(j));
  });
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const auto meta_path = dir / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw Error(ErrorKind::parse, "cannot open " + meta_path.string());
  try {
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    ds.meta.vocab_size = meta.at("vocab_size").get<int>();
    ds.meta.n_patches = meta.at("n_patches").get<int>();
    ds.meta.visual_feat_dim = meta.at("visual_feat_dim").get<int>();
    ds.meta.max_text_len = meta.at("max_text_len").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "meta.json: " + std::string(e.what()));
  }
  detail::for_each_line(dir / "corpus.jsonl", [&](const nlohmann::json& j) {
    ds.corpus.push_back(detail::document_from_json(j));
  });
  detail::for_each_line(dir / "queries_train.jsonl", [&](const nlohmann::json& j) {
    ds.train.push_back(detail::query_from_json(j));
  });
  detail::for_each_line(dir / "queries_valid.jsonl", [&](const nlohmann::json& j) {
    ds.valid.push_back(detail::query_from_json(j));
  });
  detail::for_each_line(dir / "queries_test.jsonl", [&](const nlohmann::json& j) {
    ds.test.push_back(detail::query_from_json(j));
  });
  ds.build_doc_index();
  ds.validate();
  return ds;
}

}  // namespace mimic
