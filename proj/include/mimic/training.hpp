#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mimic/data.hpp"
#include "mimic/error.hpp"
#include "mimic/index.hpp"
#include "mimic/metrics.hpp"
#include "mimic/model.hpp"
#include "mimic/rng.hpp"
#include "mimic/tensor.hpp"

namespace mimic {

enum class LrSchedule { constant, cosine };

inline std::string to_string(LrSchedule s) {
  return s == LrSchedule::constant ? "constant" : "cosine";
}

inline LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  throw Error(ErrorKind::config, "unknown lr_schedule '" + s + "'");
}

struct TrainConfig {
  double tau = 0.01;
  double alpha_bar = 0.1;
  double caption_ratio = 0.5;
  int batch_size = 8;
  double learning_rate = 0.5;
  int max_epochs = 20;
  int eval_every = 100;
  int early_stop_patience = 5;
  std::uint64_t seed = 0;
  FusionStrategy fusion_strategy = FusionStrategy::fid;
  LrSchedule lr_schedule = LrSchedule::constant;

  void validate() const {
    if (!(tau > 0.0)) throw Error(ErrorKind::config, "tau must be positive");
    if (!(alpha_bar >= 0.0 && alpha_bar < 1.0)) {
      throw Error(ErrorKind::config, "alpha_bar must lie in [0,1)");
    }
    if (!(caption_ratio >= 0.0 && caption_ratio <= 1.0)) {
      throw Error(ErrorKind::config, "caption_ratio must lie in [0,1]");
    }
    if (batch_size < 1) throw Error(ErrorKind::config, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::config, "learning_rate must be positive");
    if (max_epochs < 1) throw Error(ErrorKind::config, "max_epochs must be >= 1");
    if (eval_every < 1) throw Error(ErrorKind::config, "eval_every must be >= 1");
    if (early_stop_patience < 1) {
      throw Error(ErrorKind::config, "early_stop_patience must be >= 1");
    }
  }
};

// --------------------------------------------------------------------------
// Contrastive objective. Row i of the document block is the positive for
// query i; extra document rows (mined hard negatives) only enlarge the
// denominator. f(a, b) = cosine(a, b) / tau on unit-norm embeddings.
// --------------------------------------------------------------------------

template <class S>
TensorT<S> contrastive_loss_t(std::span<const TensorT<S>> query_rows,
                              std::span<const TensorT<S>> doc_rows, double tau) {
  const int n = static_cast<int>(query_rows.size());
  if (n == 0) throw Error(ErrorKind::empty_batch, "contrastive_loss: empty batch");
  if (static_cast<int>(doc_rows.size()) < n) {
    throw Error(ErrorKind::dimension, "contrastive_loss: fewer documents than queries");
  }
  if (!(tau > 0.0)) throw Error(ErrorKind::config, "tau must be positive");
  TensorT<S> q = concat_rows(query_rows);
  TensorT<S> d = concat_rows(doc_rows);
  TensorT<S> logits = scale(matmul(q, transpose(d)), static_cast<S>(1.0 / tau));
  std::vector<int> targets(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) targets[static_cast<std::size_t>(i)] = i;
  TensorT<S> picked = select_per_row(log_softmax_rows(logits), targets);
  return scale(mean_all(picked), S(-1));
}

inline Tensor contrastive_loss(std::span<const Embedding> queries,
                               std::span<const Embedding> docs, double tau) {
  std::vector<Tensor> q_rows, d_rows;
  q_rows.reserve(queries.size());
  d_rows.reserve(docs.size());
  for (const auto& e : queries) q_rows.push_back(e.vector);
  for (const auto& e : docs) d_rows.push_back(e.vector);
  return contrastive_loss_t<float>(q_rows, d_rows, tau);
}

// --------------------------------------------------------------------------
// Single-modality mixin (training-time only).
// --------------------------------------------------------------------------

struct MixinDraw {
  double alpha = 0.0;  // in [0, alpha_bar]
  int delta = 0;       // 1 selects the visual side, 0 the text side
};

// alpha ~ Uniform[0, alpha_bar], delta ~ Uniform{0,1}; exactly two engine
// draws so training streams stay reproducible.
inline MixinDraw sample_mixin(Rng& rng, double alpha_bar) {
  if (!(alpha_bar >= 0.0 && alpha_bar < 1.0)) {
    throw Error(ErrorKind::config, "alpha_bar must lie in [0,1)");
  }
  MixinDraw draw;
  draw.alpha = rng.uniform() * alpha_bar;
  draw.delta = rng.coin();
  return draw;
}

// (1 - alpha) x + alpha (delta x^V + (1 - delta) x^T), before normalization.
inline Tensor mixin_combination(const Tensor& x, const Tensor& visual, const Tensor& text,
                                const MixinDraw& draw) {
  const Tensor& single = draw.delta == 1 ? visual : text;
  const float a = static_cast<float>(draw.alpha);
  return add(scale(x, 1.0f - a), scale(single, a));
}

// Mix-in representation, re-normalized to keep f a pure cosine. alpha = 0 is
// a bitwise identity.
inline Embedding mixin(const Embedding& x, const std::optional<Embedding>& visual,
                       const std::optional<Embedding>& text, const MixinDraw& draw) {
  if (draw.alpha == 0.0) return x;
  if (!visual || !text) {
    throw Error(ErrorKind::internal, "mixin: multimodal item lacks a single-modality embedding");
  }
  return Embedding{l2_normalize(mixin_combination(x.vector, visual->vector, text->vector, draw))};
}

// --------------------------------------------------------------------------
// Caption dropout. Each item that carries both an image and a caption keeps
// the caption with probability caption_ratio for this batch; one uniform
// draw per such item, none for anything else.
// --------------------------------------------------------------------------

template <class Item>
std::vector<Item> apply_caption_dropout(std::vector<Item> items, double caption_ratio, Rng& rng) {
  if (!(caption_ratio >= 0.0 && caption_ratio <= 1.0)) {
    throw Error(ErrorKind::config, "caption_ratio must lie in [0,1]");
  }
  for (auto& item : items) {
    if (item.visual_patches && item.caption_tokens) {
      if (rng.uniform() >= caption_ratio) item.caption_tokens.reset();
    }
  }
  return items;
}

// --------------------------------------------------------------------------
// Training pipeline
// --------------------------------------------------------------------------

struct TrainRecord {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_metric;
};

inline std::string train_log_to_string(const std::vector<TrainRecord>& log) {
  std::ostringstream out;
  for (const auto& r : log) {
    out << "{\"step\":" << r.step << ",\"loss\":" << r.loss << ",\"lr\":" << r.lr;
    if (r.val_metric) out << ",\"val_metric\":" << *r.val_metric;
    out << "}\n";
  }
  return out.str();
}

struct StageResult {
  Parameters params;
  std::vector<TrainRecord> log;
  double best_val = -1.0;
  int steps_run = 0;
};

using NegativesMap = std::map<std::string, std::vector<std::string>>;

// One training batch: queries plus their document rows. Row i of docs is the
// sampled positive for query i; mined hard negatives follow, query by query.
struct TrainBatch {
  std::vector<Query> queries;
  std::vector<Document> docs;
};

// Shuffles the epoch and assembles batches (partial trailing batch dropped).
// One positive is drawn per query, then that query's mined negatives are
// appended as extra document rows.
inline std::vector<TrainBatch> make_epoch_batches(const Dataset& ds, int batch_size,
                                                  Rng& shuffle_rng,
                                                  const NegativesMap* hard_negatives) {
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng.shuffle(order);

  std::vector<TrainBatch> batches;
  const std::size_t n_batches = order.size() / static_cast<std::size_t>(batch_size);
  for (std::size_t b = 0; b < n_batches; ++b) {
    TrainBatch batch;
    std::vector<const std::vector<std::string>*> neg_lists;
    for (int j = 0; j < batch_size; ++j) {
      const Query& q = ds.train[order[b * static_cast<std::size_t>(batch_size) + j]];
      batch.queries.push_back(q);
      const std::string& pos_id = q.positives[shuffle_rng.uniform_index(q.positives.size())];
      batch.docs.push_back(ds.doc(pos_id));
      if (hard_negatives) {
        auto it = hard_negatives->find(q.id);
        if (it != hard_negatives->end()) neg_lists.push_back(&it->second);
      }
    }
    for (const auto* negs : neg_lists) {
      for (const auto& id : *negs) batch.docs.push_back(ds.doc(id));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

inline double lr_at(const TrainConfig& cfg, int step, int total_steps) {
  if (cfg.lr_schedule == LrSchedule::constant || total_steps <= 1) return cfg.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

inline void sgd_step(Parameters& params, double lr) {
  for (auto& [name, t] : params.tensors) {
    if (!t.grad) continue;
    const float flr = static_cast<float>(lr);
    for (std::size_t i = 0; i < t.data->size(); ++i) {
      (*t.data)[i] -= flr * (*t.grad)[i];
    }
  }
}

// Training-time embedding: single-modal items are embedded directly;
// multimodal items get the fused embedding mixed with one single-modality
// embedding per Eq-4-style draw. Under fid the encoder passes are shared
// between the fused and single-modality decodes.
inline Embedding embed_for_training(const ModalityInput& input, const Parameters& params,
                                    const ModelConfig& cfg, double alpha_bar, Rng& mixin_rng) {
  if (!input.multimodal()) return embed_item(input, params, cfg);
  const MixinDraw draw = sample_mixin(mixin_rng, alpha_bar);
  if (draw.alpha == 0.0) return embed_item(input, params, cfg);

  if (cfg.fusion_strategy == FusionStrategy::fid) {
    EncodedFeatures ev = encode_visual(*input.visual_patches, params, cfg);
    EncodedFeatures et = encode_text(*input.text_tokens, params, cfg);
    EncodedFeatures fused_feats[] = {ev, et};
    Embedding fused = fuse_decode(fused_feats, params, cfg);
    EncodedFeatures only_v[] = {ev};
    EncodedFeatures only_t[] = {et};
    std::optional<Embedding> xv = fuse_decode(only_v, params, cfg);
    std::optional<Embedding> xt = fuse_decode(only_t, params, cfg);
    return mixin(fused, xv, xt, draw);
  }
  Embedding fused = embed_item(input, params, cfg);
  auto [xv, xt] = single_modality_embeddings(input, params, cfg);
  return mixin(fused, xv, xt, draw);
}

// Mean Recall@k over a query set against the full corpus (inference mode).
inline double mean_recall_at_k(const Parameters& params, const ModelConfig& cfg,
                               const Dataset& ds, const std::vector<Query>& queries, int k) {
  if (queries.empty()) throw Error(ErrorKind::empty_batch, "no queries to evaluate");
  EmbeddingIndex index = build_corpus_index(params, cfg, ds.corpus);
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& q : queries) {
    Embedding e = embed_item(query_input(q), params, cfg);
    RankedList ranked = index.search(
        std::span<const float>(e.vector.data->data(), e.vector.data->size()), k, q.id);
    QueryJudgment j{q.id, std::set<std::string>(q.positives.begin(), q.positives.end()),
                    q.task_tag};
    total += recall_at_k(ranked, j, k);
  }
  return total / static_cast<double>(queries.size());
}

// One training stage: epochs of shuffled batches with caption dropout,
// mixin and the in-batch contrastive objective (plus mined negatives when
// provided). Validation Recall@5 runs every eval_every steps; training stops
// after early_stop_patience non-improving evaluations and the best-scoring
// parameters are returned. With no validation queries the stage runs all
// epochs and returns the final parameters.
inline StageResult train_stage(const Dataset& ds, const ModelConfig& model_cfg,
                               const TrainConfig& cfg,
                               const NegativesMap* hard_negatives = nullptr,
                               const Parameters* init = nullptr) {
  cfg.validate();
  ModelConfig mcfg = model_cfg;
  mcfg.fusion_strategy = cfg.fusion_strategy;
  mcfg.validate();
  if (static_cast<int>(ds.train.size()) < cfg.batch_size) {
    throw Error(ErrorKind::validation, "need at least batch_size training queries");
  }

  StageResult result;
  result.params = init ? init->clone() : init_parameters(mcfg, derive_seed(cfg.seed, "init"));
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  Rng mixin_rng(derive_seed(cfg.seed, "mixin"));

  const int steps_per_epoch =
      static_cast<int>(ds.train.size()) / cfg.batch_size;
  const int total_planned = cfg.max_epochs * steps_per_epoch;

  std::optional<Parameters> best_params;
  int evals_without_improvement = 0;
  int step = 0;
  bool stopped = false;

  for (int epoch = 0; epoch < cfg.max_epochs && !stopped; ++epoch) {
    auto batches = make_epoch_batches(ds, cfg.batch_size, shuffle_rng, hard_negatives);
    for (auto& batch : batches) {
      auto queries = apply_caption_dropout(std::move(batch.queries), cfg.caption_ratio,
                                           dropout_rng);
      auto docs = apply_caption_dropout(std::move(batch.docs), cfg.caption_ratio, dropout_rng);

      double loss_value = 0.0;
      const double lr = lr_at(cfg, step, total_planned);
      try {
        std::vector<Embedding> q_embs, d_embs;
        q_embs.reserve(queries.size());
        d_embs.reserve(docs.size());
        for (const auto& q : queries) {
          q_embs.push_back(
              embed_for_training(query_input(q), result.params, mcfg, cfg.alpha_bar, mixin_rng));
        }
        for (const auto& d : docs) {
          d_embs.push_back(
              embed_for_training(doc_input(d), result.params, mcfg, cfg.alpha_bar, mixin_rng));
        }
        Tensor loss = contrastive_loss(q_embs, d_embs, cfg.tau);
        loss_value = loss.at(std::size_t{0});
        Graph graph;
        graph.backward(loss);
        sgd_step(result.params, lr);
        result.params.zero_grad();
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::non_finite) throw;
        std::ostringstream diag;
        diag << "training aborted at step " << step << " (lr " << lr << "): " << e.what()
             << "; recent losses:";
        const std::size_t tail = result.log.size() > 5 ? result.log.size() - 5 : 0;
        for (std::size_t i = tail; i < result.log.size(); ++i) {
          diag << ' ' << result.log[i].loss;
        }
        throw Error(ErrorKind::non_finite, diag.str());
      }

      TrainRecord record{step + 1, loss_value, lr, std::nullopt};
      ++step;

      if (!ds.valid.empty() && step % cfg.eval_every == 0) {
        const double val = mean_recall_at_k(result.params, mcfg, ds, ds.valid, 5);
        record.val_metric = val;
        if (val > result.best_val) {
          result.best_val = val;
          best_params = result.params.clone();
          evals_without_improvement = 0;
        } else {
          ++evals_without_improvement;
          if (evals_without_improvement >= cfg.early_stop_patience) stopped = true;
        }
      }
      result.log.push_back(std::move(record));
      if (stopped) break;
    }
  }

  result.steps_run = step;
  if (best_params) result.params = std::move(*best_params);
  return result;
}

struct TwoStageResult {
  StageResult stage1;
  StageResult stage2;
  NegativesMap negatives;
};

// Stage 1 trains with in-batch negatives; its checkpoint mines hard
// negatives over the corpus; stage 2 continues from that checkpoint with
// in-batch plus mined negatives under the same settings.
inline TwoStageResult train_two_stage(const Dataset& ds, const ModelConfig& model_cfg,
                                      const TrainConfig& cfg, int top_n = 100,
                                      int per_modality_k = 1) {
  TwoStageResult result;
  result.stage1 = train_stage(ds, model_cfg, cfg);
  ModelConfig mcfg = model_cfg;
  mcfg.fusion_strategy = cfg.fusion_strategy;
  Rng mine_rng(derive_seed(cfg.seed, "mine"));
  result.negatives = mine_hard_negatives(result.stage1.params, mcfg, ds, ds.train, top_n,
                                         per_modality_k, mine_rng);
  result.stage2 = train_stage(ds, model_cfg, cfg, &result.negatives, &result.stage1.params);
  return result;
}

}  // namespace mimic
