#pragma once

#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mimic/error.hpp"
#include "mimic/io.hpp"
#include "mimic/rng.hpp"
#include "mimic/tensor.hpp"

namespace mimic {

enum class FusionStrategy { fid, early, late };

inline std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::fid: return "fid";
    case FusionStrategy::early: return "early";
    case FusionStrategy::late: return "late";
  }
  return "?";
}

inline FusionStrategy parse_fusion_strategy(const std::string& s) {
  if (s == "fid") return FusionStrategy::fid;
  if (s == "early") return FusionStrategy::early;
  if (s == "late") return FusionStrategy::late;
  throw Error(ErrorKind::config, "unknown fusion_strategy '" + s + "'");
}

enum class Modality { text, visual };

struct ModelConfig {
  int hidden_dim = 48;
  int visual_feat_dim = 16;
  int n_text_layers = 2;
  int n_visual_layers = 1;
  int n_decoder_layers = 1;
  int n_heads = 4;
  int vocab_size = 256;
  int max_text_len = 32;
  int n_patches = 8;
  FusionStrategy fusion_strategy = FusionStrategy::fid;
  int embed_dim = 32;

  int text_ffn_dim() const { return 2 * hidden_dim; }
  int visual_ffn_dim() const { return 2 * visual_feat_dim; }

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw Error(ErrorKind::config, std::string(name) + " must be positive");
    };
    positive(hidden_dim, "hidden_dim");
    positive(visual_feat_dim, "visual_feat_dim");
    positive(n_text_layers, "n_text_layers");
    positive(n_visual_layers, "n_visual_layers");
    positive(n_decoder_layers, "n_decoder_layers");
    positive(n_heads, "n_heads");
    positive(vocab_size, "vocab_size");
    positive(max_text_len, "max_text_len");
    positive(n_patches, "n_patches");
    positive(embed_dim, "embed_dim");
    if (hidden_dim % n_heads != 0) {
      throw Error(ErrorKind::config, "hidden_dim must be divisible by n_heads");
    }
    if (visual_feat_dim % n_heads != 0) {
      throw Error(ErrorKind::config, "visual_feat_dim must be divisible by n_heads");
    }
    if (embed_dim > hidden_dim) {
      throw Error(ErrorKind::config, "embed_dim must not exceed hidden_dim");
    }
  }
};

// Sequence of encoder hidden states feeding the fusion stage.
struct EncodedFeatures {
  Tensor hidden;  // [seq_len x hidden_dim]
  Modality source_modality = Modality::text;
};

// Unit-norm fixed-dimension representation of a document or query.
struct Embedding {
  Tensor vector;  // [embed_dim]
};

// Model-facing view of one corpus item: whatever text it carries (document
// body or caption, question plus caption for queries) and its patch features.
struct ModalityInput {
  std::optional<std::vector<int>> text_tokens;
  std::optional<Tensor> visual_patches;  // [n_patches x visual_feat_dim]

  bool has_text() const { return text_tokens.has_value(); }
  bool has_visual() const { return visual_patches.has_value(); }
  bool multimodal() const { return has_text() && has_visual(); }
  bool empty() const { return !has_text() && !has_visual(); }
};

// --------------------------------------------------------------------------
// Parameters
// --------------------------------------------------------------------------

struct Parameters {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorKind::lookup, "missing parameter " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorKind::lookup, "missing parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
  }

  Parameters clone() const {
    Parameters copy;
    for (const auto& [name, t] : tensors) {
      copy.tensors.emplace(name, Tensor::from(t.shape, *t.data, t.requires_grad));
    }
    return copy;
  }
};

namespace detail {

enum class InitKind { gaussian, gaussian_small, xavier, ones, zeros };

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  InitKind init;
};

inline void push_block_specs(std::vector<ParamSpec>& specs, const std::string& prefix,
                             int n_layers, int width, int ffn_dim) {
  for (int i = 0; i < n_layers; ++i) {
    const std::string L = prefix + ".L" + std::to_string(i) + ".";
    specs.push_back({L + "ln1.g", {width}, InitKind::ones});
    specs.push_back({L + "ln1.b", {width}, InitKind::zeros});
    const char* mat = prefix == "dec" ? "cross." : "attn.";
    specs.push_back({L + mat + "wq", {width, width}, InitKind::xavier});
    specs.push_back({L + mat + "wk", {width, width}, InitKind::xavier});
    specs.push_back({L + mat + "wv", {width, width}, InitKind::xavier});
    specs.push_back({L + mat + "wo", {width, width}, InitKind::xavier});
    specs.push_back({L + "ln2.g", {width}, InitKind::ones});
    specs.push_back({L + "ln2.b", {width}, InitKind::zeros});
    specs.push_back({L + "ffn.w1", {width, ffn_dim}, InitKind::xavier});
    specs.push_back({L + "ffn.b1", {ffn_dim}, InitKind::zeros});
    specs.push_back({L + "ffn.w2", {ffn_dim, width}, InitKind::xavier});
    specs.push_back({L + "ffn.b2", {width}, InitKind::zeros});
  }
  specs.push_back({prefix + ".lnf.g", {width}, InitKind::ones});
  specs.push_back({prefix + ".lnf.b", {width}, InitKind::zeros});
}

}  // namespace detail

// Declaration-ordered list of every model tensor. Initialization draws in
// this order, so parameter values are a pure function of (config, seed).
inline std::vector<detail::ParamSpec> parameter_specs(const ModelConfig& cfg) {
  using detail::InitKind;
  std::vector<detail::ParamSpec> specs;
  specs.push_back({"text.tok_emb", {cfg.vocab_size, cfg.hidden_dim}, InitKind::gaussian});
  // positions start small so early training is driven by token content
  specs.push_back({"text.pos_emb", {cfg.max_text_len, cfg.hidden_dim}, InitKind::gaussian_small});
  detail::push_block_specs(specs, "text", cfg.n_text_layers, cfg.hidden_dim, cfg.text_ffn_dim());
  specs.push_back({"vis.pos_emb", {cfg.n_patches, cfg.visual_feat_dim}, InitKind::gaussian_small});
  detail::push_block_specs(specs, "vis", cfg.n_visual_layers, cfg.visual_feat_dim,
                           cfg.visual_ffn_dim());
  specs.push_back({"projector", {cfg.visual_feat_dim, cfg.hidden_dim}, InitKind::xavier});
  specs.push_back({"dec.bos", {cfg.hidden_dim}, InitKind::gaussian});
  detail::push_block_specs(specs, "dec", cfg.n_decoder_layers, cfg.hidden_dim,
                           cfg.text_ffn_dim());
  specs.push_back({"out_proj", {cfg.hidden_dim, cfg.embed_dim}, InitKind::xavier});
  return specs;
}

inline Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Parameters params;
  for (const auto& spec : parameter_specs(cfg)) {
    std::size_t n = Tensor::checked_size(spec.shape);
    std::vector<float> values(n);
    switch (spec.init) {
      case detail::InitKind::gaussian:
        for (auto& v : values) v = static_cast<float>(0.5 * rng.normal());
        break;
      case detail::InitKind::gaussian_small:
        for (auto& v : values) v = static_cast<float>(0.05 * rng.normal());
        break;
      case detail::InitKind::xavier: {
        const double fan_in = spec.shape[0], fan_out = spec.shape.size() > 1 ? spec.shape[1] : 1;
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : values) v = static_cast<float>(rng.uniform(-a, a));
        break;
      }
      case detail::InitKind::ones:
        std::fill(values.begin(), values.end(), 1.0f);
        break;
      case detail::InitKind::zeros:
        break;
    }
    params.tensors.emplace(spec.name, Tensor::from(spec.shape, std::move(values), true));
  }
  return params;
}

// --------------------------------------------------------------------------
// Forward passes
// --------------------------------------------------------------------------

namespace detail {

// Multi-head attention: queries from x_q, keys/values from x_kv, weight
// names under `prefix` (e.g. "text.L0.attn"). Queries and memory share the
// block width.
inline Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const Parameters& p,
                                   const std::string& prefix, int n_heads) {
  Tensor q = matmul(x_q, p.at(prefix + ".wq"));
  Tensor k = matmul(x_kv, p.at(prefix + ".wk"));
  Tensor v = matmul(x_kv, p.at(prefix + ".wv"));
  const int width = q.cols();
  const int head_dim = width / n_heads;
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    heads.push_back(scaled_dot_attention(slice_cols(q, h * head_dim, head_dim),
                                         slice_cols(k, h * head_dim, head_dim),
                                         slice_cols(v, h * head_dim, head_dim)));
  }
  Tensor merged = n_heads == 1 ? heads[0] : concat_cols(std::span<const Tensor>(heads));
  return matmul(merged, p.at(prefix + ".wo"));
}

inline Tensor ffn_block(const Tensor& x, const Parameters& p, const std::string& prefix) {
  Tensor h = relu(add_rowvec(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  return add_rowvec(matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
}

// Pre-LN transformer encoder stack with a final layer norm.
inline Tensor encoder_stack(Tensor x, const Parameters& p, const std::string& prefix,
                            int n_layers, int n_heads) {
  for (int i = 0; i < n_layers; ++i) {
    const std::string L = prefix + ".L" + std::to_string(i);
    Tensor a = layer_norm(x, p.at(L + ".ln1.g"), p.at(L + ".ln1.b"));
    x = add(x, multi_head_attention(a, a, p, L + ".attn", n_heads));
    Tensor a2 = layer_norm(x, p.at(L + ".ln2.g"), p.at(L + ".ln2.b"));
    x = add(x, ffn_block(a2, p, L + ".ffn"));
  }
  return layer_norm(x, p.at(prefix + ".lnf.g"), p.at(prefix + ".lnf.b"));
}

// Token embeddings plus positions, before any encoder layer.
inline Tensor embed_tokens(std::span<const int> tokens, const Parameters& p,
                           const ModelConfig& cfg) {
  if (tokens.empty()) throw Error(ErrorKind::empty_modality, "empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_text_len) {
    throw Error(ErrorKind::dimension, "token sequence longer than max_text_len");
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw Error(ErrorKind::range, "token id out of vocabulary");
    }
  }
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  return add(gather_rows(p.at("text.tok_emb"), tokens),
             gather_rows(p.at("text.pos_emb"), positions));
}

// Mean-pool a feature sequence, project to embed_dim and normalize.
inline Embedding pool_project(const Tensor& features, const Parameters& p,
                              const ModelConfig& cfg) {
  Tensor pooled = reshape(mean_rows(features), {1, features.cols()});
  Tensor projected = matmul(pooled, p.at("out_proj"));
  return Embedding{l2_normalize(reshape(projected, {cfg.embed_dim}))};
}

}  // namespace detail

inline EncodedFeatures encode_text(std::span<const int> tokens, const Parameters& p,
                                   const ModelConfig& cfg) {
  Tensor x = detail::embed_tokens(tokens, p, cfg);
  return EncodedFeatures{detail::encoder_stack(std::move(x), p, "text", cfg.n_text_layers,
                                               cfg.n_heads),
                         Modality::text};
}

inline EncodedFeatures encode_visual(const Tensor& patches, const Parameters& p,
                                     const ModelConfig& cfg) {
  if (patches.rank() != 2 || patches.shape[0] != cfg.n_patches ||
      patches.shape[1] != cfg.visual_feat_dim) {
    throw Error(ErrorKind::dimension, "visual patches must be [n_patches x visual_feat_dim]");
  }
  Tensor x = add(patches, p.at("vis.pos_emb"));
  x = detail::encoder_stack(std::move(x), p, "vis", cfg.n_visual_layers, cfg.n_heads);
  return EncodedFeatures{matmul(x, p.at("projector")), Modality::visual};
}

// Fusion-in-decoder head: encoder feature blocks form the cross-attention
// memory; the learned BOS vector is the sole decoder query. No positions are
// added to the memory, so the block order cannot matter.
inline Embedding fuse_decode(std::span<const EncodedFeatures> features, const Parameters& p,
                             const ModelConfig& cfg) {
  if (features.empty()) throw Error(ErrorKind::empty_modality, "fuse_decode: no features");
  std::vector<Tensor> blocks;
  blocks.reserve(features.size());
  for (const auto& f : features) blocks.push_back(f.hidden);
  Tensor memory = blocks.size() == 1 ? blocks[0] : concat_rows(std::span<const Tensor>(blocks));

  Tensor h = reshape(p.at("dec.bos"), {1, cfg.hidden_dim});
  for (int i = 0; i < cfg.n_decoder_layers; ++i) {
    const std::string L = "dec.L" + std::to_string(i);
    Tensor a = layer_norm(h, p.at(L + ".ln1.g"), p.at(L + ".ln1.b"));
    h = add(h, detail::multi_head_attention(a, memory, p, L + ".cross", cfg.n_heads));
    Tensor a2 = layer_norm(h, p.at(L + ".ln2.g"), p.at(L + ".ln2.b"));
    h = add(h, detail::ffn_block(a2, p, L + ".ffn"));
  }
  h = layer_norm(h, p.at("dec.lnf.g"), p.at("dec.lnf.b"));
  Tensor projected = matmul(h, p.at("out_proj"));
  return Embedding{l2_normalize(reshape(projected, {cfg.embed_dim}))};
}

namespace detail {

inline Embedding embed_text_only(std::span<const int> tokens, const Parameters& p,
                                 const ModelConfig& cfg) {
  switch (cfg.fusion_strategy) {
    case FusionStrategy::fid: {
      EncodedFeatures f[] = {encode_text(tokens, p, cfg)};
      return fuse_decode(f, p, cfg);
    }
    case FusionStrategy::early:
    case FusionStrategy::late:
      return pool_project(encode_text(tokens, p, cfg).hidden, p, cfg);
  }
  throw Error(ErrorKind::internal, "unreachable");
}

inline Embedding embed_visual_only(const Tensor& patches, const Parameters& p,
                                   const ModelConfig& cfg) {
  switch (cfg.fusion_strategy) {
    case FusionStrategy::fid: {
      EncodedFeatures f[] = {encode_visual(patches, p, cfg)};
      return fuse_decode(f, p, cfg);
    }
    case FusionStrategy::early: {
      // Visual tokens run through the text self-attention stack, mirroring
      // the joint path with an absent text block.
      Tensor h = encoder_stack(encode_visual(patches, p, cfg).hidden, p, "text",
                               cfg.n_text_layers, cfg.n_heads);
      return pool_project(h, p, cfg);
    }
    case FusionStrategy::late:
      return pool_project(encode_visual(patches, p, cfg).hidden, p, cfg);
  }
  throw Error(ErrorKind::internal, "unreachable");
}

}  // namespace detail

// Single-modality representations (visual, text) of an item, computed with
// the same fusion head as full embeddings.
inline std::pair<std::optional<Embedding>, std::optional<Embedding>> single_modality_embeddings(
    const ModalityInput& item, const Parameters& p, const ModelConfig& cfg) {
  std::optional<Embedding> visual, text;
  if (item.has_visual()) visual = detail::embed_visual_only(*item.visual_patches, p, cfg);
  if (item.has_text()) text = detail::embed_text_only(*item.text_tokens, p, cfg);
  return {std::move(visual), std::move(text)};
}

inline Embedding embed_item(const ModalityInput& item, const Parameters& p,
                            const ModelConfig& cfg) {
  if (item.empty()) throw Error(ErrorKind::empty_modality, "item has no modality");
  if (!item.multimodal()) {
    return item.has_text() ? detail::embed_text_only(*item.text_tokens, p, cfg)
                           : detail::embed_visual_only(*item.visual_patches, p, cfg);
  }
  switch (cfg.fusion_strategy) {
    case FusionStrategy::fid: {
      EncodedFeatures f[] = {encode_visual(*item.visual_patches, p, cfg),
                             encode_text(*item.text_tokens, p, cfg)};
      return fuse_decode(f, p, cfg);
    }
    case FusionStrategy::early: {
      Tensor visual_tokens = encode_visual(*item.visual_patches, p, cfg).hidden;
      Tensor text_tokens = detail::embed_tokens(*item.text_tokens, p, cfg);
      Tensor joint = concat_rows({visual_tokens, text_tokens});
      Tensor h = detail::encoder_stack(std::move(joint), p, "text", cfg.n_text_layers,
                                       cfg.n_heads);
      return detail::pool_project(h, p, cfg);
    }
    case FusionStrategy::late: {
      auto [visual, text] = single_modality_embeddings(item, p, cfg);
      return Embedding{l2_normalize(add(text->vector, visual->vector))};
    }
  }
  throw Error(ErrorKind::internal, "unreachable");
}

// --------------------------------------------------------------------------
// Checkpoints ("MMCK"). The model configuration rides along as one extra
// rank-1 tensor so a checkpoint is self-describing.
// --------------------------------------------------------------------------

inline constexpr const char* kConfigTensorName = "meta.config";

inline void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                            const ModelConfig& cfg) {
  std::map<std::string, NamedTensorData> tensors;
  for (const auto& [name, t] : params.tensors) {
    tensors.emplace(name, NamedTensorData{t.shape, *t.data});
  }
  NamedTensorData meta;
  meta.shape = {11};
  meta.values = {static_cast<float>(cfg.hidden_dim),
                 static_cast<float>(cfg.visual_feat_dim),
                 static_cast<float>(cfg.n_text_layers),
                 static_cast<float>(cfg.n_visual_layers),
                 static_cast<float>(cfg.n_decoder_layers),
                 static_cast<float>(cfg.n_heads),
                 static_cast<float>(cfg.vocab_size),
                 static_cast<float>(cfg.max_text_len),
                 static_cast<float>(cfg.n_patches),
                 static_cast<float>(static_cast<int>(cfg.fusion_strategy)),
                 static_cast<float>(cfg.embed_dim)};
  tensors.emplace(kConfigTensorName, std::move(meta));
  write_checkpoint_tensors(path, tensors);
}

inline std::pair<Parameters, ModelConfig> load_checkpoint(const std::filesystem::path& path) {
  auto tensors = read_checkpoint_tensors(path);
  auto meta_it = tensors.find(kConfigTensorName);
  if (meta_it == tensors.end() || meta_it->second.values.size() != 11) {
    throw Error(ErrorKind::format, "checkpoint lacks a valid config tensor");
  }
  const auto& mv = meta_it->second.values;
  ModelConfig cfg;
  cfg.hidden_dim = static_cast<int>(mv[0]);
  cfg.visual_feat_dim = static_cast<int>(mv[1]);
  cfg.n_text_layers = static_cast<int>(mv[2]);
  cfg.n_visual_layers = static_cast<int>(mv[3]);
  cfg.n_decoder_layers = static_cast<int>(mv[4]);
  cfg.n_heads = static_cast<int>(mv[5]);
  cfg.vocab_size = static_cast<int>(mv[6]);
  cfg.max_text_len = static_cast<int>(mv[7]);
  cfg.n_patches = static_cast<int>(mv[8]);
  cfg.fusion_strategy = static_cast<FusionStrategy>(static_cast<int>(mv[9]));
  cfg.embed_dim = static_cast<int>(mv[10]);
  cfg.validate();
  tensors.erase(meta_it);

  Parameters params;
  for (const auto& spec : parameter_specs(cfg)) {
    auto it = tensors.find(spec.name);
    if (it == tensors.end()) {
      throw Error(ErrorKind::format, "checkpoint missing tensor " + spec.name);
    }
    if (it->second.shape != spec.shape) {
      throw Error(ErrorKind::format, "checkpoint tensor " + spec.name + " has wrong shape");
    }
    params.tensors.emplace(spec.name,
                           Tensor::from(it->second.shape, std::move(it->second.values), true));
    tensors.erase(it);
  }
  if (!tensors.empty()) {
    throw Error(ErrorKind::format, "checkpoint has unexpected tensor " + tensors.begin()->first);
  }
  return {std::move(params), cfg};
}

}  // namespace mimic
