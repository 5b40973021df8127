// Command-line pipeline around the mimic library: dataset generation,
// two-stage contrastive training, hard-negative mining, corpus encoding,
// retrieval evaluation and embedding-space diagnostics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mimic/config.hpp"
#include "mimic/data.hpp"
#include "mimic/diagnostics.hpp"
#include "mimic/index.hpp"
#include "mimic/manifest.hpp"
#include "mimic/metrics.hpp"
#include "mimic/model.hpp"
#include "mimic/pipeline.hpp"
#include "mimic/training.hpp"
#include "mimic/version.hpp"

namespace {

using namespace mimic;
namespace fs = std::filesystem;

std::map<std::string, std::string> overrides_to_kv(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> kv;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorKind::config, "--set expects key=value, got '" + s + "'");
    }
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

RunManifest base_manifest(const std::string& subcommand, int argc, char** argv) {
  RunManifest m;
  m.subcommand = subcommand;
  for (int i = 0; i < argc; ++i) m.argv.emplace_back(argv[i]);
  return m;
}

struct GenArgs {
  std::string preset = "webqa-like";
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> sets;
};

int run_gen(const GenArgs& args, RunManifest manifest) {
  PhaseTimer timer;
  timer.start("generate");
  GeneratorConfig cfg = preset_generator_config(args.preset);
  if (args.seed_given) cfg.seed = args.seed;
  cfg = parse_generator_config(overrides_to_kv(args.sets), cfg);
  Dataset ds = generate(cfg);
  timer.start("write");
  save_dataset(args.out, ds);
  manifest.seed = cfg.seed;
  manifest.config = generator_config_to_kv(cfg);
  manifest.config["preset"] = args.preset;
  for (const char* f : {"corpus.jsonl", "queries_train.jsonl", "queries_valid.jsonl",
                        "queries_test.jsonl", "meta.json"}) {
    manifest.outputs.push_back((fs::path(args.out) / f).string());
  }
  manifest.phase_seconds = timer.seconds();
  write_manifest(fs::path(args.out) / "manifest.json", manifest);
  std::cout << "generated " << ds.corpus.size() << " documents, " << ds.train.size() << "/"
            << ds.valid.size() << "/" << ds.test.size() << " queries into " << args.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, config, out, log_path, negatives, init;
  bool stage2 = false;
  std::vector<std::string> sets;
};

int run_train(const TrainArgs& args, RunManifest manifest) {
  PhaseTimer timer;
  timer.start("load");
  Dataset ds = load_dataset(args.data);
  auto kv = parse_kv_file(args.config);
  for (const auto& [k, v] : overrides_to_kv(args.sets)) kv[k] = v;
  RunConfig rc = parse_run_config(kv, ds.meta);

  NegativesMap negatives;
  Parameters init_params;
  bool have_init = false;
  if (args.stage2) {
    if (args.negatives.empty() || args.init.empty()) {
      throw Error(ErrorKind::config, "--stage2 requires --negatives and --init");
    }
    negatives = read_negatives(args.negatives);
    auto [params, ckpt_cfg] = load_checkpoint(args.init);
    ModelConfig expected = rc.model;
    expected.fusion_strategy = rc.train.fusion_strategy;
    if (ckpt_cfg.hidden_dim != expected.hidden_dim || ckpt_cfg.embed_dim != expected.embed_dim ||
        ckpt_cfg.vocab_size != expected.vocab_size ||
        ckpt_cfg.fusion_strategy != expected.fusion_strategy) {
      throw Error(ErrorKind::config, "--init checkpoint does not match the configuration");
    }
    init_params = std::move(params);
    have_init = true;
  }

  timer.start("train");
  StageResult result = train_stage(ds, rc.model, rc.train, args.stage2 ? &negatives : nullptr,
                                   have_init ? &init_params : nullptr);
  timer.start("write");
  ModelConfig effective = rc.model;
  effective.fusion_strategy = rc.train.fusion_strategy;
  save_checkpoint(args.out, result.params, effective);
  if (!args.log_path.empty()) {
    write_file_atomic(args.log_path, train_log_to_string(result.log));
  }

  manifest.seed = rc.train.seed;
  manifest.config = kv;
  manifest.inputs = {args.data, args.config};
  if (args.stage2) {
    manifest.inputs.push_back(args.negatives);
    manifest.inputs.push_back(args.init);
  }
  manifest.outputs = {args.out};
  if (!args.log_path.empty()) manifest.outputs.push_back(args.log_path);
  manifest.phase_seconds = timer.seconds();
  write_manifest(args.out + ".manifest.json", manifest);
  std::cout << "trained " << result.steps_run << " steps";
  if (result.best_val >= 0) std::cout << ", best val R@5 " << result.best_val;
  std::cout << ", checkpoint " << args.out << "\n";
  return 0;
}

struct MineArgs {
  std::string ckpt, data, out;
  int top_n = 100;
  int per_modality_k = 1;
  std::uint64_t seed = 0;
};

int run_mine(const MineArgs& args, RunManifest manifest) {
  PhaseTimer timer;
  timer.start("load");
  Dataset ds = load_dataset(args.data);
  auto [params, cfg] = load_checkpoint(args.ckpt);
  timer.start("mine");
  Rng rng(derive_seed(args.seed, "mine"));
  NegativesMap negatives =
      mine_hard_negatives(params, cfg, ds, ds.train, args.top_n, args.per_modality_k, rng);
  timer.start("write");
  write_negatives(args.out, negatives);
  manifest.seed = args.seed;
  manifest.config = {{"top_n", std::to_string(args.top_n)},
                     {"per_modality_k", std::to_string(args.per_modality_k)}};
  manifest.inputs = {args.ckpt, args.data};
  manifest.outputs = {args.out};
  manifest.phase_seconds = timer.seconds();
  write_manifest(args.out + ".manifest.json", manifest);
  std::cout << "mined negatives for " << negatives.size() << " queries into " << args.out << "\n";
  return 0;
}

struct EncodeArgs {
  std::string ckpt, data, out;
  std::string split = "corpus";
  std::string mode = "fused";
};

int run_encode(const EncodeArgs& args, RunManifest manifest) {
  PhaseTimer timer;
  timer.start("load");
  Dataset ds = load_dataset(args.data);
  auto [params, cfg] = load_checkpoint(args.ckpt);
  timer.start("encode");
  EncodedSet set;
  if (args.split == "corpus") {
    set = encode_corpus(params, cfg, ds.corpus, parse_encode_mode(args.mode));
  } else if (args.split == "train") {
    set = encode_queries(params, cfg, ds.train);
  } else if (args.split == "valid") {
    set = encode_queries(params, cfg, ds.valid);
  } else if (args.split == "test") {
    set = encode_queries(params, cfg, ds.test);
  } else {
    throw Error(ErrorKind::config, "unknown split '" + args.split + "'");
  }
  timer.start("write");
  write_embeddings(args.out, set.ids, set.matrix, static_cast<std::uint32_t>(set.dim));
  manifest.config = {{"split", args.split}, {"mode", args.mode}};
  manifest.inputs = {args.ckpt, args.data};
  manifest.outputs = {args.out};
  manifest.phase_seconds = timer.seconds();
  write_manifest(args.out + ".manifest.json", manifest);
  std::cout << "encoded " << set.ids.size() << " items into " << args.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string emb_queries, emb_docs, judgments, out;
};

int run_eval(const EvalArgs& args, RunManifest manifest) {
  PhaseTimer timer;
  timer.start("load");
  EmbeddingFile queries = read_embeddings(args.emb_queries);
  EmbeddingFile docs = read_embeddings(args.emb_docs);
  if (queries.dim != docs.dim) {
    throw Error(ErrorKind::dimension, "query and document embedding dims differ");
  }
  auto judged = judgments_from_queries(load_queries_file(args.judgments));

  timer.start("evaluate");
  EmbeddingIndex index =
      EmbeddingIndex::build(docs.ids, docs.matrix, static_cast<int>(docs.dim));
  MetricsSpec spec;
  int k_max = 1;
  for (int k : spec.recall_ks) k_max = std::max(k_max, k);
  std::vector<RankedList> ranked;
  for (std::size_t i = 0; i < queries.ids.size(); ++i) {
    std::span<const float> row(queries.matrix.data() + i * queries.dim, queries.dim);
    ranked.push_back(index.search(row, k_max, queries.ids[i]));
  }
  MetricsReport report = evaluate_run(ranked, judged, spec);

  timer.start("write");
  fs::create_directories(args.out);
  write_file_atomic(fs::path(args.out) / "report.csv", report.to_csv());
  write_file_atomic(fs::path(args.out) / "report.txt", report.to_table());
  manifest.inputs = {args.emb_queries, args.emb_docs, args.judgments};
  manifest.outputs = {(fs::path(args.out) / "report.csv").string(),
                      (fs::path(args.out) / "report.txt").string()};
  manifest.phase_seconds = timer.seconds();
  write_manifest(fs::path(args.out) / "manifest.json", manifest);
  std::cout << report.to_table();
  return 0;
}

struct DiagArgs {
  std::string emb_visual, emb_caption, emb_fused, emb_text, out;
  std::vector<int> ks{5, 50};
  int sample_size = 500;
  std::uint64_t seed = 0;
};

int run_diag(const DiagArgs& args, RunManifest manifest) {
  PhaseTimer timer;
  timer.start("load");
  EmbeddingFile visual = read_embeddings(args.emb_visual);
  EmbeddingFile caption = read_embeddings(args.emb_caption);
  EmbeddingFile fused = read_embeddings(args.emb_fused);
  EmbeddingFile text = read_embeddings(args.emb_text);
  ModalityEmbeddingSet set = modality_set_from_files(visual, &caption, &fused, text);

  timer.start("analyze");
  std::ostringstream csv;
  Rng sim_rng(derive_seed(args.seed, "diag/similarity"));
  csv << cross_modal_similarity(set, sim_rng).to_csv();
  for (int k : args.ks) {
    Rng overlap_rng(derive_seed(args.seed, "diag/overlap"));
    OverlapReport report = neighborhood_overlap(set, k, args.sample_size, overlap_rng);
    csv << "overlap_k" << k << ',' << report.mean_overlap << '\n';
    csv << "overlap_k" << k << "_samples," << report.sample_size << '\n';
  }
  auto role_vectors = [&](auto member) {
    std::vector<std::vector<float>> out;
    for (std::size_t i = 0; i < set.ids.size(); ++i) {
      if ((set.*member)[i]) out.push_back(*(set.*member)[i]);
    }
    return out;
  };
  auto emit_dispersion = [&](const std::string& name, const std::vector<std::vector<float>>& v) {
    if (v.size() < 2) return;
    DispersionReport d = dispersion_report(v);
    csv << "dispersion_" << name << "_mean_cosine," << d.mean_pairwise_cosine << '\n';
    csv << "dispersion_" << name << "_participation_ratio," << d.participation_ratio << '\n';
  };
  emit_dispersion("visual", role_vectors(&ModalityEmbeddingSet::visual));
  emit_dispersion("caption", role_vectors(&ModalityEmbeddingSet::caption));
  emit_dispersion("fused", role_vectors(&ModalityEmbeddingSet::fused));
  emit_dispersion("text", set.text_pool);

  // pooled 2D projection for plotting, role prefixed ids
  std::vector<std::vector<float>> pooled;
  std::vector<std::string> pooled_ids;
  auto pool_role = [&](const char* prefix, auto member) {
    for (std::size_t i = 0; i < set.ids.size(); ++i) {
      if ((set.*member)[i]) {
        pooled.push_back(*(set.*member)[i]);
        pooled_ids.push_back(std::string(prefix) + ":" + set.ids[i]);
      }
    }
  };
  pool_role("V", &ModalityEmbeddingSet::visual);
  pool_role("C", &ModalityEmbeddingSet::caption);
  pool_role("VC", &ModalityEmbeddingSet::fused);
  for (std::size_t i = 0; i < set.text_ids.size(); ++i) {
    pooled.push_back(set.text_pool[i]);
    pooled_ids.push_back("T:" + set.text_ids[i]);
  }
  Projection2D projection = project_2d(pooled);
  if (projection.degenerate) csv << "projection_degenerate,1\n";

  timer.start("write");
  fs::create_directories(args.out);
  write_file_atomic(fs::path(args.out) / "diagnostics.csv", csv.str());
  write_file_atomic(fs::path(args.out) / "coords.csv", projection.to_csv(pooled_ids));
  manifest.seed = args.seed;
  manifest.inputs = {args.emb_visual, args.emb_caption, args.emb_fused, args.emb_text};
  manifest.outputs = {(fs::path(args.out) / "diagnostics.csv").string(),
                      (fs::path(args.out) / "coords.csv").string()};
  manifest.phase_seconds = timer.seconds();
  write_manifest(fs::path(args.out) / "manifest.json", manifest);
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mimic: desk-scale universal multimodal retrieval pipeline"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic multimodal dataset");
  gen->add_option("--preset", gen_args.preset,
                  "dataset preset (webqa-like, evqa-like, t2i-visual)");
  gen->add_option("--out", gen_args.out, "output dataset directory")->required();
  gen->add_option("--seed", gen_args.seed, "generator seed")
      ->each([&](const std::string&) { gen_args.seed_given = true; });
  gen->add_option("--set", gen_args.sets, "override generator keys (key=value)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a retriever checkpoint");
  train->add_option("--data", train_args.data, "dataset directory")->required();
  train->add_option("--config", train_args.config, "key = value config file")->required();
  train->add_option("--out", train_args.out, "output checkpoint path")->required();
  train->add_flag("--stage2", train_args.stage2,
                  "train the ANCE stage from --init with --negatives");
  train->add_option("--negatives", train_args.negatives, "mined negatives file (stage 2)");
  train->add_option("--init", train_args.init, "initial checkpoint (stage 2)");
  train->add_option("--log", train_args.log_path, "write the training log here");
  train->add_option("--set", train_args.sets, "override config keys (key=value)");

  MineArgs mine_args;
  auto* mine = app.add_subcommand("mine", "mine hard negatives with a checkpoint");
  mine->add_option("--ckpt", mine_args.ckpt, "retriever checkpoint")->required();
  mine->add_option("--data", mine_args.data, "dataset directory")->required();
  mine->add_option("--out", mine_args.out, "output negatives file")->required();
  mine->add_option("--top-n", mine_args.top_n, "candidate depth");
  mine->add_option("--per-modality-k", mine_args.per_modality_k, "negatives per modality");
  mine->add_option("--seed", mine_args.seed, "sampling seed");

  EncodeArgs encode_args;
  auto* encode = app.add_subcommand("encode", "encode a dataset split to an embedding file");
  encode->add_option("--ckpt", encode_args.ckpt, "retriever checkpoint")->required();
  encode->add_option("--data", encode_args.data, "dataset directory")->required();
  encode->add_option("--out", encode_args.out, "output embedding file")->required();
  encode->add_option("--split", encode_args.split, "corpus, train, valid or test");
  encode->add_option("--mode", encode_args.mode,
                     "corpus representation: fused, visual, caption or text");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate ranked retrieval against judgments");
  eval->add_option("--emb-queries", eval_args.emb_queries, "query embedding file")->required();
  eval->add_option("--emb-docs", eval_args.emb_docs, "document embedding file")->required();
  eval->add_option("--judgments", eval_args.judgments, "queries_*.jsonl with positives")
      ->required();
  eval->add_option("--out", eval_args.out, "output report directory")->required();

  DiagArgs diag_args;
  auto* diag = app.add_subcommand("diag", "embedding-space diagnostics");
  diag->add_option("--emb-visual", diag_args.emb_visual, "visual-only embeddings")->required();
  diag->add_option("--emb-caption", diag_args.emb_caption, "caption-only embeddings")
      ->required();
  diag->add_option("--emb-fused", diag_args.emb_fused, "fused embeddings")->required();
  diag->add_option("--emb-text", diag_args.emb_text, "text-document embeddings")->required();
  diag->add_option("--out", diag_args.out, "output directory")->required();
  diag->add_option("--k", diag_args.ks, "overlap neighborhood sizes");
  diag->add_option("--sample", diag_args.sample_size, "overlap sample size");
  diag->add_option("--seed", diag_args.seed, "sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen(gen_args, base_manifest("gen", argc, argv));
    if (train->parsed()) return run_train(train_args, base_manifest("train", argc, argv));
    if (mine->parsed()) return run_mine(mine_args, base_manifest("mine", argc, argv));
    if (encode->parsed()) return run_encode(encode_args, base_manifest("encode", argc, argv));
    if (eval->parsed()) return run_eval(eval_args, base_manifest("eval", argc, argv));
    if (diag->parsed()) return run_diag(diag_args, base_manifest("diag", argc, argv));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
