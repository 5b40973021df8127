#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mimic/error.hpp"
#include "mimic/io.hpp"
#include "mimic/rng.hpp"

namespace mimic {

// Embeddings grouped by role for the misalignment analyses: per image
// document its visual-only (x^V), caption-only (x^C) and fused (x^VC)
// embeddings where available, plus a pool of text-document embeddings.
struct ModalityEmbeddingSet {
  int dim = 0;
  std::vector<std::string> ids;  // image-document ids
  std::vector<std::optional<std::vector<float>>> visual, caption, fused;
  std::vector<std::string> text_ids;
  std::vector<std::vector<float>> text_pool;

  std::size_t add_image_item(const std::string& id) {
    ids.push_back(id);
    visual.emplace_back();
    caption.emplace_back();
    fused.emplace_back();
    return ids.size() - 1;
  }
};

namespace detail {

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (!(denom > 0)) throw Error(ErrorKind::diagnostic, "cosine of a zero vector");
  return dot / denom;
}

// Eigenvalues (ascending) and eigenvectors of the sample covariance.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> covariance_eigen(
    const std::vector<std::vector<float>>& embeddings) {
  const int n = static_cast<int>(embeddings.size());
  const int d = static_cast<int>(embeddings[0].size());
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / std::max(1, n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorKind::diagnostic, "covariance eigendecomposition failed");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

}  // namespace detail

// --------------------------------------------------------------------------
// Cross-modal cosine table. Same-item pairs for s(I^V, I^C); one seeded
// uniformly sampled text document per image for the text-pool columns.
// --------------------------------------------------------------------------

struct CrossModalSimilarity {
  double visual_text = 0.0;    // s(I^V, T)
  double visual_caption = 0.0; // s(I^V, I^C)
  double caption_text = 0.0;   // s(I^C, T)
  double fused_text = 0.0;     // s(I^VC, T)

  std::string to_csv() const {
    std::ostringstream out;
    out << "s_visual_text," << visual_text << "\n"
        << "s_visual_caption," << visual_caption << "\n"
        << "s_caption_text," << caption_text << "\n"
        << "s_fused_text," << fused_text << "\n";
    return out.str();
  }
};

inline CrossModalSimilarity cross_modal_similarity(const ModalityEmbeddingSet& set, Rng& rng) {
  if (set.ids.empty()) throw Error(ErrorKind::diagnostic, "no image items");
  if (set.text_pool.empty()) throw Error(ErrorKind::diagnostic, "empty text pool");
  double vt = 0, vc = 0, ct = 0, vct = 0;
  int n_vt = 0, n_vc = 0, n_ct = 0, n_vct = 0;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    const auto& text = set.text_pool[rng.uniform_index(set.text_pool.size())];
    if (set.visual[i]) {
      vt += detail::cosine(*set.visual[i], text);
      ++n_vt;
    }
    if (set.visual[i] && set.caption[i]) {
      vc += detail::cosine(*set.visual[i], *set.caption[i]);
      ++n_vc;
    }
    if (set.caption[i]) {
      ct += detail::cosine(*set.caption[i], text);
      ++n_ct;
    }
    if (set.fused[i]) {
      vct += detail::cosine(*set.fused[i], text);
      ++n_vct;
    }
  }
  if (n_vt == 0 || n_vc == 0 || n_ct == 0 || n_vct == 0) {
    throw Error(ErrorKind::diagnostic, "a similarity column has no pairs");
  }
  return {vt / n_vt, vc / n_vc, ct / n_ct, vct / n_vct};
}

// --------------------------------------------------------------------------
// Cross-modality neighborhood overlap (Table-4 style). Samples items having
// both x^V and x^C, pools the sampled 2m embeddings, and averages
// |kNN(x^V) intersect kNN(x^C)| / k with self excluded.
// --------------------------------------------------------------------------

struct OverlapReport {
  int k = 0;
  int sample_size = 0;
  double mean_overlap = 0.0;
};

inline OverlapReport neighborhood_overlap(const ModalityEmbeddingSet& set, int k,
                                          int sample_size, Rng& rng) {
  if (k < 1) throw Error(ErrorKind::diagnostic, "k must be >= 1");
  std::vector<std::size_t> paired;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    if (set.visual[i] && set.caption[i]) paired.push_back(i);
  }
  if (paired.empty()) throw Error(ErrorKind::diagnostic, "no items with both x^V and x^C");
  rng.shuffle(paired);
  const int m = std::min<int>(sample_size, static_cast<int>(paired.size()));
  if (2 * m - 2 < k) {
    throw Error(ErrorKind::diagnostic, "pooled set must be larger than k");
  }
  paired.resize(static_cast<std::size_t>(m));

  std::vector<const std::vector<float>*> pool;
  pool.reserve(static_cast<std::size_t>(2 * m));
  for (std::size_t i : paired) pool.push_back(&*set.visual[i]);
  for (std::size_t i : paired) pool.push_back(&*set.caption[i]);

  // "Self" is the item, not the pool entry: both of the item's entries are
  // excluded from its neighbor lists, so identical roles overlap fully.
  auto neighbors = [&](int anchor, int counterpart) {
    std::vector<std::pair<double, int>> scored;
    scored.reserve(pool.size() - 2);
    for (int j = 0; j < static_cast<int>(pool.size()); ++j) {
      if (j == anchor || j == counterpart) continue;
      scored.emplace_back(detail::cosine(*pool[static_cast<std::size_t>(anchor)],
                                         *pool[static_cast<std::size_t>(j)]),
                          j);
    }
    const int take = std::min<int>(k, static_cast<int>(scored.size()));
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                      [](const auto& a, const auto& b) {
                        if (a.first != b.first) return a.first > b.first;
                        return a.second < b.second;
                      });
    std::set<int> ids;
    for (int i = 0; i < take; ++i) ids.insert(scored[static_cast<std::size_t>(i)].second);
    return ids;
  };

  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const auto nv = neighbors(i, m + i);
    const auto nc = neighbors(m + i, i);
    int common = 0;
    for (int id : nv) common += nc.count(id);
    total += static_cast<double>(common) / static_cast<double>(k);
  }
  return {k, m, total / m};
}

// --------------------------------------------------------------------------
// Collapse/dispersion statistics.
// --------------------------------------------------------------------------

struct DispersionReport {
  double mean_pairwise_cosine = 0.0;
  // (sum lambda)^2 / sum lambda^2 of the covariance spectrum; 1 = rank-one
  // collapse, embed_dim = isotropic spread.
  double participation_ratio = 0.0;
};

inline DispersionReport dispersion_report(const std::vector<std::vector<float>>& embeddings) {
  if (embeddings.size() < 2) throw Error(ErrorKind::diagnostic, "need at least 2 embeddings");
  double cos_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      cos_sum += detail::cosine(embeddings[i], embeddings[j]);
      ++pairs;
    }
  }
  auto [eigenvalues, eigenvectors] = detail::covariance_eigen(embeddings);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < eigenvalues.size(); ++i) {
    const double l = std::max(0.0, eigenvalues(i));
    s1 += l;
    s2 += l * l;
  }
  DispersionReport report;
  report.mean_pairwise_cosine = cos_sum / static_cast<double>(pairs);
  // All-identical points give a zero spectrum; report full collapse.
  report.participation_ratio = s1 > 1e-12 ? s1 * s1 / s2 : 1.0;
  return report;
}

// --------------------------------------------------------------------------
// Deterministic 2D projection onto the top two principal components (the
// paper's t-SNE plots are replaced by PCA coordinates for plotting).
// --------------------------------------------------------------------------

struct Projection2D {
  std::vector<std::array<double, 2>> coords;
  bool degenerate = false;

  std::string to_csv(const std::vector<std::string>& ids) const {
    std::ostringstream out;
    out << "id,x,y\n";
    for (std::size_t i = 0; i < coords.size(); ++i) {
      out << (i < ids.size() ? ids[i] : std::to_string(i)) << ',' << coords[i][0] << ','
          << coords[i][1] << '\n';
    }
    return out.str();
  }
};

inline Projection2D project_2d(const std::vector<std::vector<float>>& embeddings) {
  if (embeddings.size() < 3) throw Error(ErrorKind::diagnostic, "need at least 3 embeddings");
  const int n = static_cast<int>(embeddings.size());
  const int d = static_cast<int>(embeddings[0].size());
  auto [eigenvalues, eigenvectors] = detail::covariance_eigen(embeddings);

  Projection2D out;
  out.coords.assign(static_cast<std::size_t>(n), {0.0, 0.0});
  if (eigenvalues(d - 1) <= 1e-12) {
    out.degenerate = true;
    return out;
  }
  Eigen::VectorXd axes[2] = {eigenvectors.col(d - 1), Eigen::VectorXd::Zero(d)};
  if (d >= 2) axes[1] = eigenvectors.col(d - 2);
  for (auto& axis : axes) {
    int arg = 0;
    for (int i = 1; i < axis.size(); ++i) {
      if (std::abs(axis(i)) > std::abs(axis(arg))) arg = i;
    }
    if (axis(arg) < 0) axis = -axis;
  }
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
  for (const auto& e : embeddings)
    for (int j = 0; j < d; ++j) mean(j) += e[static_cast<std::size_t>(j)];
  mean /= static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd row(d);
    for (int j = 0; j < d; ++j) row(j) = embeddings[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    row -= mean;
    out.coords[static_cast<std::size_t>(i)] = {row * axes[0], row * axes[1]};
  }
  return out;
}

}  // namespace mimic
