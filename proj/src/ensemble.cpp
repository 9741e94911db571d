#include "hdovd/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hdovd/losses.hpp"

namespace hdovd {

void Classifier::add(const std::string& name, const Vec& embedding, bool base) {
  if (embedding.size() != dim_) throw std::invalid_argument("classifier column has wrong dimension");
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw std::invalid_argument("duplicate classifier column: " + name);
  }
  if (base && base_count_ != size()) {
    throw std::invalid_argument("base columns must precede novel columns");
  }
  names_.push_back(name);
  embeddings_.conservativeResize(embeddings_.rows() + 1, Eigen::NoChange);
  embeddings_.row(embeddings_.rows() - 1) = normalized(embedding).transpose();
  if (base) ++base_count_;
}

std::vector<bool> Classifier::base_mask() const {
  std::vector<bool> mask(names_.size(), false);
  std::fill_n(mask.begin(), base_count_, true);
  return mask;
}

void EnsembleConfig::validate() const {
  if (!(beta_base >= 0.0 && beta_base <= 1.0 && beta_novel >= 0.0 && beta_novel <= 1.0)) {
    throw std::invalid_argument("ensemble exponents must lie in [0, 1]");
  }
}

namespace {

void check_shapes(const Mat& a, const Mat& b, const std::vector<bool>& mask) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("ensemble: score matrices differ in shape");
  }
  if (static_cast<Eigen::Index>(mask.size()) != a.cols()) {
    throw std::invalid_argument("ensemble: base mask length differs from column count");
  }
}

}  // namespace

Mat ensemble_log(const Mat& log_cls, const Mat& log_dis, const std::vector<bool>& base_mask,
                 double beta_base, double beta_novel) {
  check_shapes(log_cls, log_dis, base_mask);
  EnsembleConfig{beta_base, beta_novel}.validate();
  Mat out(log_cls.rows(), log_cls.cols());
  for (Eigen::Index j = 0; j < log_cls.cols(); ++j) {
    const double b = base_mask[static_cast<std::size_t>(j)] ? beta_base : beta_novel;
    for (Eigen::Index i = 0; i < log_cls.rows(); ++i) {
      if (b == 0.0) {
        out(i, j) = log_cls(i, j);
      } else if (b == 1.0) {
        out(i, j) = log_dis(i, j);
      } else {
        out(i, j) = log_cls(i, j) + b * (log_dis(i, j) - log_cls(i, j));
      }
    }
  }
  return out;
}

Mat ensemble(const Mat& p_cls, const Mat& p_dis, const std::vector<bool>& base_mask,
             double beta_base, double beta_novel) {
  check_shapes(p_cls, p_dis, base_mask);
  auto in_range = [](double p) { return p > 0.0 && p < 1.0; };
  if (!std::all_of(p_cls.data(), p_cls.data() + p_cls.size(), in_range) ||
      !std::all_of(p_dis.data(), p_dis.data() + p_dis.size(), in_range)) {
    throw std::invalid_argument("ensemble: probabilities must lie in (0, 1)");
  }
  const Mat logs = ensemble_log(p_cls.array().log().matrix(), p_dis.array().log().matrix(),
                                base_mask, beta_base, beta_novel);
  Mat out = logs.array().exp().matrix();
  // Exact pass-through at the endpoints.
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double b = base_mask[static_cast<std::size_t>(j)] ? beta_base : beta_novel;
    if (b == 0.0) out.col(j) = p_cls.col(j);
    if (b == 1.0) out.col(j) = p_dis.col(j);
  }
  return out;
}

HeadScores score_heads(const Mat& q, const Mat& q_hat, const Classifier& classifier,
                       double tau_ckd, double tau_cls) {
  if (classifier.size() == 0) throw std::invalid_argument("score_heads: empty classifier");
  if (q.cols() != classifier.dim() || q_hat.cols() != classifier.dim()) {
    throw std::invalid_argument("score_heads: query dimension differs from classifier");
  }
  if (q.rows() != q_hat.rows()) throw std::invalid_argument("score_heads: query count mismatch");
  const Mat& w = classifier.embeddings();
  auto unit_rows = [](const Mat& m) {
    Mat u = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) u.row(i).normalize();
    return u;
  };
  const Mat cos_cls = (unit_rows(q_hat) * w.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  const Mat cos_dis = (unit_rows(q) * w.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  HeadScores s;
  s.p_cls = (tau_cls * cos_cls).unaryExpr([](double x) { return sigmoid(x); });
  s.p_dis = (tau_ckd * cos_dis).unaryExpr([](double x) { return sigmoid(x); });
  s.log_cls = (tau_cls * cos_cls).unaryExpr([](double x) { return -softplus(-x); });
  s.log_dis = (tau_ckd * cos_dis).unaryExpr([](double x) { return -softplus(-x); });
  return s;
}

std::vector<Detection> postprocess(const Mat& scores, const std::vector<Box>& boxes, int top_n) {
  if (top_n < 1) throw std::invalid_argument("postprocess: top_n must be at least 1");
  if (static_cast<Eigen::Index>(boxes.size()) != scores.rows()) {
    throw std::invalid_argument("postprocess: one box per query required");
  }
  const auto cols = scores.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  // Flat index = query * cols + class, so stable sort keeps the tie order.
  auto score_of = [&](Eigen::Index flat) { return scores(flat / cols, flat % cols); };
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return score_of(a) > score_of(b); });
  const std::size_t keep = std::min(order.size(), static_cast<std::size_t>(top_n));
  std::vector<Detection> out;
  out.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) {
    const auto flat = order[k];
    const int qi = static_cast<int>(flat / cols);
    out.push_back({qi, static_cast<int>(flat % cols), score_of(flat), boxes[static_cast<std::size_t>(qi)]});
  }
  return out;
}

}  // namespace hdovd
