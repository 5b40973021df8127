#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mimic/data.hpp"
#include "mimic/error.hpp"
#include "mimic/model.hpp"
#include "mimic/training.hpp"

namespace mimic {

// Flat key = value configuration text. '#' starts a comment; blank lines are
// skipped; duplicate keys are rejected.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto begin = s.find_first_not_of(" \t\r");
    const auto end = s.find_last_not_of(" \t\r");
    if (begin == std::string::npos) return std::string();
    return s.substr(begin, end - begin + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::config, "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw Error(ErrorKind::config, "line " + std::to_string(line_no) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw Error(ErrorKind::config, "duplicate key '" + key + "'");
    }
  }
  return kv;
}

inline std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

namespace detail {

class KvReader {
 public:
  explicit KvReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  bool take(const std::string& key, std::string& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return false;
    out = it->second;
    kv_.erase(it);
    return true;
  }

  template <class T, class Parse>
  void read(const std::string& key, T& target, Parse parse) {
    std::string raw;
    if (!take(key, raw)) return;
    try {
      target = parse(raw);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(ErrorKind::config, "invalid value for " + key + ": '" + raw + "'");
    }
  }

  void read_int(const std::string& key, int& target) {
    read(key, target, [](const std::string& s) { return std::stoi(s); });
  }
  void read_double(const std::string& key, double& target) {
    read(key, target, [](const std::string& s) { return std::stod(s); });
  }
  void read_u64(const std::string& key, std::uint64_t& target) {
    read(key, target, [](const std::string& s) { return std::stoull(s); });
  }

  // Unknown keys are configuration errors so silently ignored
  // hyperparameters cannot happen.
  void reject_unknown() const {
    if (!kv_.empty()) {
      throw Error(ErrorKind::config, "unknown config key '" + kv_.begin()->first + "'");
    }
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace detail

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Builds the model + training configuration from flat key = value pairs.
// Data-derived model fields (vocabulary, patch geometry, text length) come
// from the dataset meta and are not configurable.
inline RunConfig parse_run_config(const std::map<std::string, std::string>& kv,
                                  const DatasetMeta& meta) {
  RunConfig cfg;
  cfg.model.vocab_size = meta.vocab_size;
  cfg.model.n_patches = meta.n_patches;
  cfg.model.visual_feat_dim = meta.visual_feat_dim;
  cfg.model.max_text_len = meta.max_text_len;

  detail::KvReader reader(kv);
  reader.read_int("hidden_dim", cfg.model.hidden_dim);
  reader.read_int("n_text_layers", cfg.model.n_text_layers);
  reader.read_int("n_visual_layers", cfg.model.n_visual_layers);
  reader.read_int("n_decoder_layers", cfg.model.n_decoder_layers);
  reader.read_int("n_heads", cfg.model.n_heads);
  reader.read_int("embed_dim", cfg.model.embed_dim);
  reader.read("fusion_strategy", cfg.train.fusion_strategy,
              [](const std::string& s) { return parse_fusion_strategy(s); });
  reader.read_double("tau", cfg.train.tau);
  reader.read_double("alpha_bar", cfg.train.alpha_bar);
  reader.read_double("caption_ratio", cfg.train.caption_ratio);
  reader.read_int("batch_size", cfg.train.batch_size);
  reader.read_double("learning_rate", cfg.train.learning_rate);
  reader.read_int("max_epochs", cfg.train.max_epochs);
  reader.read_int("eval_every", cfg.train.eval_every);
  reader.read_int("early_stop_patience", cfg.train.early_stop_patience);
  reader.read_u64("seed", cfg.train.seed);
  reader.read("lr_schedule", cfg.train.lr_schedule,
              [](const std::string& s) { return parse_lr_schedule(s); });
  reader.reject_unknown();

  cfg.model.fusion_strategy = cfg.train.fusion_strategy;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

// Generator configuration from flat keys over a preset base.
inline GeneratorConfig parse_generator_config(const std::map<std::string, std::string>& kv,
                                              GeneratorConfig base) {
  detail::KvReader reader(kv);
  reader.read_int("n_topics", base.n_topics);
  reader.read_int("corpus_size", base.corpus_size);
  reader.read_int("n_train_queries", base.n_train_queries);
  reader.read_int("n_valid_queries", base.n_valid_queries);
  reader.read_int("n_test_queries", base.n_test_queries);
  reader.read_int("vocab_size", base.vocab_size);
  reader.read_int("n_patches", base.n_patches);
  reader.read_int("visual_feat_dim", base.visual_feat_dim);
  reader.read_double("doc_mix_text", base.doc_mix_text);
  reader.read_double("doc_mix_visual_only", base.doc_mix_visual_only);
  reader.read_double("doc_mix_visual_caption", base.doc_mix_visual_caption);
  reader.read_double("query_mix_text", base.query_mix_text);
  reader.read_double("query_mix_multimodal", base.query_mix_multimodal);
  reader.read_double("corpus_caption_ratio", base.corpus_caption_ratio);
  reader.read_double("visual_signal_strength", base.visual_signal_strength);
  reader.read_double("text_signal_strength", base.text_signal_strength);
  reader.read_double("noise_scale", base.noise_scale);
  reader.read_u64("seed", base.seed);
  reader.reject_unknown();
  base.validate();
  return base;
}

// Dataset presets mirroring the two benchmark regimes, plus a
// visual-signal-dominant text-to-image setup used to study caption dropout.
inline GeneratorConfig preset_generator_config(const std::string& name) {
  GeneratorConfig cfg;
  if (name == "webqa-like") {
    // text queries over a mixed T / I^V / I^VC corpus, caption ratio 0.5
    return cfg;
  }
  if (name == "evqa-like") {
    cfg.doc_mix_text = 1.0;
    cfg.doc_mix_visual_only = 0.0;
    cfg.doc_mix_visual_caption = 0.0;
    cfg.query_mix_text = 0.5;
    cfg.query_mix_multimodal = 0.5;
    return cfg;
  }
  if (name == "t2i-visual") {
    cfg.n_topics = 48;
    cfg.corpus_size = 256;
    cfg.n_train_queries = 128;
    cfg.n_valid_queries = 48;
    cfg.n_test_queries = 48;
    cfg.vocab_size = 192;
    cfg.doc_mix_text = 0.0;
    cfg.doc_mix_visual_only = 0.0;
    cfg.doc_mix_visual_caption = 1.0;
    cfg.corpus_caption_ratio = 1.0;
    cfg.visual_signal_strength = 2.0;
    cfg.noise_scale = 0.4;
    return cfg;
  }
  throw Error(ErrorKind::config, "unknown preset '" + name + "'");
}

inline std::map<std::string, std::string> generator_config_to_kv(const GeneratorConfig& cfg) {
  std::map<std::string, std::string> kv;
  auto put = [&](const std::string& k, auto v) {
    std::ostringstream s;
    s << v;
    kv[k] = s.str();
  };
  put("n_topics", cfg.n_topics);
  put("corpus_size", cfg.corpus_size);
  put("n_train_queries", cfg.n_train_queries);
  put("n_valid_queries", cfg.n_valid_queries);
  put("n_test_queries", cfg.n_test_queries);
  put("vocab_size", cfg.vocab_size);
  put("n_patches", cfg.n_patches);
  put("visual_feat_dim", cfg.visual_feat_dim);
  put("doc_mix_text", cfg.doc_mix_text);
  put("doc_mix_visual_only", cfg.doc_mix_visual_only);
  put("doc_mix_visual_caption", cfg.doc_mix_visual_caption);
  put("query_mix_text", cfg.query_mix_text);
  put("query_mix_multimodal", cfg.query_mix_multimodal);
  put("corpus_caption_ratio", cfg.corpus_caption_ratio);
  put("visual_signal_strength", cfg.visual_signal_strength);
  put("text_signal_strength", cfg.text_signal_strength);
  put("noise_scale", cfg.noise_scale);
  put("seed", cfg.seed);
  return kv;
}

}  // namespace mimic
