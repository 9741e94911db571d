#pragma once

#include <string>
#include <vector>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"

namespace hdovd {

/// Text-embedding classifier: base columns first, then novel or pseudo
/// columns. Rows are unit-norm, names unique.
class Classifier {
 public:
  explicit Classifier(int dim) : dim_(dim), embeddings_(0, dim) {}

  /// Appends a column. Base columns must all precede the others.
  void add(const std::string& name, const Vec& embedding, bool base);

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] int size() const noexcept { return static_cast<int>(names_.size()); }
  [[nodiscard]] int base_count() const noexcept { return base_count_; }
  [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
  [[nodiscard]] const Mat& embeddings() const noexcept { return embeddings_; }
  [[nodiscard]] std::vector<bool> base_mask() const;

 private:
  int dim_;
  int base_count_ = 0;
  std::vector<std::string> names_;
  Mat embeddings_;
};

struct EnsembleConfig {
  double beta_base = 0.35;
  double beta_novel = 0.65;

  static EnsembleConfig coco() { return {0.35, 0.65}; }
  static EnsembleConfig lvis() { return {0.25, 0.45}; }
  void validate() const;
};

/// p_cls^(1-b) * p_dis^b per column, b = beta_base on base columns and
/// beta_novel elsewhere. Inputs must lie strictly inside (0, 1).
Mat ensemble(const Mat& p_cls, const Mat& p_dis, const std::vector<bool>& base_mask,
             double beta_base, double beta_novel);

/// Same fusion on log-probabilities; returns log scores.
Mat ensemble_log(const Mat& log_cls, const Mat& log_dis, const std::vector<bool>& base_mask,
                 double beta_base, double beta_novel);

struct HeadScores {
  Mat p_cls;    ///< sigmoid(tau_cls * cos(q_hat, e))
  Mat p_dis;    ///< sigmoid(tau_ckd * cos(q, e))
  Mat log_cls;  ///< log p_cls, kept to rank saturated probabilities
  Mat log_dis;
};

HeadScores score_heads(const Mat& q, const Mat& q_hat, const Classifier& classifier,
                       double tau_ckd, double tau_cls);

struct Detection {
  int query = 0;
  int class_index = 0;
  double score = 0.0;
  Box box;
};

/// Top `top_n` (query, class) pairs by score; ties ordered by query then
/// class.
std::vector<Detection> postprocess(const Mat& scores, const std::vector<Box>& boxes, int top_n = 100);

}  // namespace hdovd
