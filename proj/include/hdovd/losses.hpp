#pragma once

#include <array>
#include <span>
#include <vector>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"

namespace hdovd {

struct DistillConfig {
  double tau_ckd = 20.0;
  double tau_rkd = 5.0;
  double tau_cls = 50.0;
  double alpha_ckd = 0.5;   ///< instance contrastive coefficient
  double alpha_rkd = 5.0;   ///< instance relational coefficient
  double alpha_img = 0.2;   ///< image contrastive coefficient
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  int layers = 2;
  std::size_t instance_queue = 2048;
  std::size_t image_queue = 512;

  /// Throws std::invalid_argument on non-positive temperatures or negative
  /// coefficients.
  void validate() const;
};

/// Scalar loss and its gradient with respect to the student rows.
struct LossGrad {
  double value = 0.0;
  Mat grad;
};

/// Sigmoid-BCE contrastive distillation. Row i of `queries` pairs with row i
/// of `region_embs`; the other rows and all of `extra_negatives` are
/// negatives. Teachers are constants.
LossGrad ckd_instance(const Mat& queries, const Mat& region_embs, const Mat& extra_negatives,
                      double tau);

/// Mean row KL(softmax(tau*Rq[i]) || softmax(tau*Re[i])) with cosine
/// relation matrices. Zero for fewer than two rows.
LossGrad rkd_instance(const Mat& queries, const Mat& region_embs, double tau);

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.25;
};

/// Sigmoid focal classification over p = sigmoid(tau * cos(q_hat_i, e_j)).
/// `target_column[i]` is the positive column of query i or -1 for
/// background. `column_weights[j]` scales positive terms of column j
/// (1 for base columns). The sum is divided by the number of queries.
LossGrad classification_loss(const Mat& q_hat, const Mat& class_embs,
                             std::span<const int> target_column,
                             std::span<const double> column_weights, double tau, FocalParams focal);

/// One pyramid level, stored channel-last: row (y * width + x) holds the
/// channel vector of that pixel.
struct FeatureMap {
  int height = 0;
  int width = 0;
  Mat values;

  [[nodiscard]] int channels() const { return static_cast<int>(values.cols()); }
};
using FeaturePyramid = std::vector<FeatureMap>;

/// Half-pixel-centred bilinear resampling (edges clamped).
FeatureMap resize_bilinear(const FeatureMap& src, int height, int width);

/// Resize every level to level 0, average the levels, then average-pool
/// spatially. Throws std::invalid_argument on an empty pyramid or channel
/// mismatch.
Vec global_feature(const FeaturePyramid& pyramid);

/// Per-level pixel weights w such that global_feature = sum_l values_l^T w_l.
/// Used to back-propagate into the pyramid.
std::vector<Vec> global_feature_weights(const FeaturePyramid& pyramid);

/// Bidirectional InfoNCE between student global features and teacher global
/// embeddings; `extra_negatives` extend the student-to-teacher direction.
/// Summed over rows and halved.
LossGrad ckd_image(const Mat& global_feats, const Mat& clip_globals, const Mat& extra_negatives,
                   double tau);

struct BoxLoss {
  double value = 0.0;
  std::vector<std::array<double, 4>> grads;  ///< d loss / d pred (x1, y1, x2, y2)
};

/// Mean over pairs of w_l1 * L1(pred/scale, target/scale) + w_giou * (1 - GIoU).
BoxLoss box_loss(std::span<const Box> pred, std::span<const Box> target, double w_l1,
                 double w_giou, double scale);

struct LayerLosses {
  double cls = 0.0;
  double box = 0.0;
  double ckd_ins = 0.0;
  double rkd_ins = 0.0;
};

struct LossReport {
  std::vector<LayerLosses> layers;
  double ckd_img = 0.0;
  double total = 0.0;
};

/// total = sum over layers of (cls + box + a1*ckd + a2*rkd) + a3*img.
LossReport total_loss(std::span<const LayerLosses> layers, double ckd_img, const DistillConfig& cfg);

double softplus(double x);
double sigmoid(double x);

}  // namespace hdovd
