#include "hdovd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hdovd {

void DistillConfig::validate() const {
  if (!(tau_ckd > 0.0 && tau_rkd > 0.0 && tau_cls > 0.0)) {
    throw std::invalid_argument("temperatures must be positive");
  }
  if (alpha_ckd < 0.0 || alpha_rkd < 0.0 || alpha_img < 0.0) {
    throw std::invalid_argument("loss coefficients must be non-negative");
  }
  if (focal_gamma < 0.0 || focal_alpha < 0.0 || focal_alpha > 1.0) {
    throw std::invalid_argument("focal parameters out of range");
  }
  if (layers < 1) throw std::invalid_argument("need at least one decoder layer");
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

struct RowNorms {
  Mat unit;
  Vec norms;
};

RowNorms normalize_rows(const Mat& m) {
  RowNorms r{m, m.rowwise().norm()};
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (r.norms[i] == 0.0) throw std::invalid_argument("zero embedding row");
    r.unit.row(i) /= r.norms[i];
  }
  return r;
}

/// Back-propagates d loss / d unit-rows to the raw rows.
Mat unnormalize_grad(const RowNorms& rn, const Mat& d_unit) {
  Mat g(d_unit.rows(), d_unit.cols());
  for (Eigen::Index i = 0; i < d_unit.rows(); ++i) {
    const double radial = d_unit.row(i).dot(rn.unit.row(i));
    g.row(i) = (d_unit.row(i) - radial * rn.unit.row(i)) / rn.norms[i];
  }
  return g;
}

void require_dim(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() > 0 && b.rows() > 0 && a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": embedding dimension mismatch");
  }
}

}  // namespace

LossGrad ckd_instance(const Mat& queries, const Mat& region_embs, const Mat& extra_negatives,
                      double tau) {
  const Eigen::Index n = queries.rows();
  LossGrad out{0.0, Mat::Zero(n, queries.cols())};
  if (n == 0) return out;
  if (region_embs.rows() != n) throw std::invalid_argument("ckd_instance: row count mismatch");
  require_dim(queries, region_embs, "ckd_instance");
  require_dim(queries, extra_negatives, "ckd_instance");

  const Eigen::Index p = extra_negatives.rows();
  Mat teachers(n + p, queries.cols());
  teachers.topRows(n) = region_embs;
  if (p > 0) teachers.bottomRows(p) = extra_negatives;
  const RowNorms qn = normalize_rows(queries);
  const Mat tn = normalize_rows(teachers).unit;
  const Mat cos = qn.unit * tn.transpose();

  const double inv_n = 1.0 / static_cast<double>(n);
  Mat d_cos(n, n + p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n + p; ++j) {
      const double z = tau * cos(i, j);
      if (i == j) {
        out.value += softplus(-z);  // -log sigmoid(z)
        d_cos(i, j) = -sigmoid(-z) * tau * inv_n;
      } else {
        out.value += softplus(z);  // -log(1 - sigmoid(z))
        d_cos(i, j) = sigmoid(z) * tau * inv_n;
      }
    }
  }
  out.value *= inv_n;
  out.grad = unnormalize_grad(qn, d_cos * tn);
  return out;
}

LossGrad rkd_instance(const Mat& queries, const Mat& region_embs, double tau) {
  const Eigen::Index n = queries.rows();
  LossGrad out{0.0, Mat::Zero(n, queries.cols())};
  if (n < 2) return out;
  if (region_embs.rows() != n) throw std::invalid_argument("rkd_instance: row count mismatch");
  require_dim(queries, region_embs, "rkd_instance");

  const RowNorms qn = normalize_rows(queries);
  const Mat en = normalize_rows(region_embs).unit;
  const Mat zq = tau * (qn.unit * qn.unit.transpose());
  const Mat ze = tau * (en * en.transpose());

  const double inv_n = 1.0 / static_cast<double>(n);
  Mat d_rel(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mq = zq.row(i).maxCoeff();
    const double me = ze.row(i).maxCoeff();
    const double lse_q = mq + std::log((zq.row(i).array() - mq).exp().sum());
    const double lse_e = me + std::log((ze.row(i).array() - me).exp().sum());
    Eigen::ArrayXd log_p = zq.row(i).transpose().array() - lse_q;
    Eigen::ArrayXd log_t = ze.row(i).transpose().array() - lse_e;
    Eigen::ArrayXd pr = log_p.exp();
    const double kl = (pr * (log_p - log_t)).sum();
    out.value += kl;
    d_rel.row(i) = (pr * (log_p - log_t - kl)).matrix().transpose() * tau * inv_n;
  }
  out.value *= inv_n;
  const Mat d_unit = (d_rel + d_rel.transpose()) * qn.unit;
  out.grad = unnormalize_grad(qn, d_unit);
  return out;
}

LossGrad classification_loss(const Mat& q_hat, const Mat& class_embs,
                             std::span<const int> target_column,
                             std::span<const double> column_weights, double tau,
                             FocalParams focal) {
  const Eigen::Index n = q_hat.rows();
  const Eigen::Index c = class_embs.rows();
  LossGrad out{0.0, Mat::Zero(n, q_hat.cols())};
  if (n == 0) return out;
  if (static_cast<Eigen::Index>(target_column.size()) != n) {
    throw std::invalid_argument("classification_loss: one target per query required");
  }
  if (static_cast<Eigen::Index>(column_weights.size()) != c) {
    throw std::invalid_argument("classification_loss: one weight per column required");
  }
  require_dim(q_hat, class_embs, "classification_loss");

  const RowNorms qn = normalize_rows(q_hat);
  const Mat wn = normalize_rows(class_embs).unit;
  const Mat cos = qn.unit * wn.transpose();
  const double g = focal.gamma;
  const double a = focal.alpha;
  const double inv_n = 1.0 / static_cast<double>(n);

  Mat d_cos = Mat::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int tgt = target_column[static_cast<std::size_t>(i)];
    if (tgt >= c) throw std::invalid_argument("classification_loss: target column out of range");
    for (Eigen::Index j = 0; j < c; ++j) {
      const double x = tau * cos(i, j);
      const double p = sigmoid(x);
      const double q = sigmoid(-x);  // 1 - p without cancellation
      const double log_p = -softplus(-x);
      const double log_q = -softplus(x);
      double loss = 0.0;
      double dx = 0.0;
      if (tgt == j) {
        const double w = a * column_weights[static_cast<std::size_t>(j)];
        loss = -w * std::pow(q, g) * log_p;
        dx = w * (g * p * std::pow(q, g) * log_p - std::pow(q, g + 1.0));
      } else {
        const double w = 1.0 - a;
        loss = -w * std::pow(p, g) * log_q;
        dx = w * (std::pow(p, g + 1.0) - g * std::pow(p, g) * q * log_q);
      }
      out.value += loss;
      d_cos(i, j) = dx * tau * inv_n;
    }
  }
  out.value *= inv_n;
  out.grad = unnormalize_grad(qn, d_cos * wn);
  return out;
}

FeatureMap resize_bilinear(const FeatureMap& src, int height, int width) {
  FeatureMap out{height, width, Mat::Zero(static_cast<Eigen::Index>(height) * width, src.channels())};
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max((y + 0.5) * sy - 0.5, 0.0);
    const int y0 = std::min(static_cast<int>(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double ly = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max((x + 0.5) * sx - 0.5, 0.0);
      const int x0 = std::min(static_cast<int>(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double lx = fx - x0;
      auto at = [&](int yy, int xx) { return src.values.row(static_cast<Eigen::Index>(yy) * src.width + xx); };
      out.values.row(static_cast<Eigen::Index>(y) * width + x) =
          (1 - ly) * ((1 - lx) * at(y0, x0) + lx * at(y0, x1)) + ly * ((1 - lx) * at(y1, x0) + lx * at(y1, x1));
    }
  }
  return out;
}

namespace {

void check_pyramid(const FeaturePyramid& pyramid) {
  if (pyramid.empty()) throw std::invalid_argument("global_feature: empty pyramid");
  for (const auto& level : pyramid) {
    if (level.channels() != pyramid.front().channels()) {
      throw std::invalid_argument("global_feature: pyramid levels disagree on channel count");
    }
    if (level.values.rows() != static_cast<Eigen::Index>(level.height) * level.width) {
      throw std::invalid_argument("global_feature: level shape does not match its values");
    }
  }
}

}  // namespace

Vec global_feature(const FeaturePyramid& pyramid) {
  check_pyramid(pyramid);
  const int h = pyramid.front().height;
  const int w = pyramid.front().width;
  Mat merged = Mat::Zero(static_cast<Eigen::Index>(h) * w, pyramid.front().channels());
  for (const auto& level : pyramid) {
    if (level.height == h && level.width == w) {
      merged += level.values;
    } else {
      merged += resize_bilinear(level, h, w).values;
    }
  }
  merged /= static_cast<double>(pyramid.size());
  return merged.colwise().mean().transpose();
}

std::vector<Vec> global_feature_weights(const FeaturePyramid& pyramid) {
  check_pyramid(pyramid);
  const int h = pyramid.front().height;
  const int w = pyramid.front().width;
  const double scale = 1.0 / (static_cast<double>(pyramid.size()) * h * w);
  std::vector<Vec> weights;
  for (const auto& level : pyramid) {
    Vec wl = Vec::Zero(static_cast<Eigen::Index>(level.height) * level.width);
    if (level.height == h && level.width == w) {
      wl.setConstant(scale);
      weights.push_back(std::move(wl));
      continue;
    }
    // Scatter each output pixel's bilinear taps, mirroring resize_bilinear.
    const double sy = static_cast<double>(level.height) / h;
    const double sx = static_cast<double>(level.width) / w;
    for (int y = 0; y < h; ++y) {
      const double fy = std::max((y + 0.5) * sy - 0.5, 0.0);
      const int y0 = std::min(static_cast<int>(fy), level.height - 1);
      const int y1 = std::min(y0 + 1, level.height - 1);
      const double ly = fy - y0;
      for (int x = 0; x < w; ++x) {
        const double fx = std::max((x + 0.5) * sx - 0.5, 0.0);
        const int x0 = std::min(static_cast<int>(fx), level.width - 1);
        const int x1 = std::min(x0 + 1, level.width - 1);
        const double lx = fx - x0;
        auto at = [&](int yy, int xx) -> double& { return wl[static_cast<Eigen::Index>(yy) * level.width + xx]; };
        at(y0, x0) += scale * (1 - ly) * (1 - lx);
        at(y0, x1) += scale * (1 - ly) * lx;
        at(y1, x0) += scale * ly * (1 - lx);
        at(y1, x1) += scale * ly * lx;
      }
    }
    weights.push_back(std::move(wl));
  }
  return weights;
}

LossGrad ckd_image(const Mat& global_feats, const Mat& clip_globals, const Mat& extra_negatives,
                   double tau) {
  const Eigen::Index m = global_feats.rows();
  LossGrad out{0.0, Mat::Zero(m, global_feats.cols())};
  if (m == 0) return out;
  if (clip_globals.rows() != m) throw std::invalid_argument("ckd_image: row count mismatch");
  require_dim(global_feats, clip_globals, "ckd_image");
  require_dim(global_feats, extra_negatives, "ckd_image");

  const Eigen::Index p = extra_negatives.rows();
  Mat teachers(m + p, global_feats.cols());
  teachers.topRows(m) = clip_globals;
  if (p > 0) teachers.bottomRows(p) = extra_negatives;
  const RowNorms xn = normalize_rows(global_feats);
  const Mat tn = normalize_rows(teachers).unit;
  const Mat z = tau * (xn.unit * tn.transpose());  // z(j, i) = tau cos(x_j, t_i)

  Mat d_z = Mat::Zero(m, m + p);
  // student -> teacher: row i over all teachers (padded)
  for (Eigen::Index i = 0; i < m; ++i) {
    const double mx = z.row(i).maxCoeff();
    const Eigen::ArrayXd e = (z.row(i).array() - mx).exp().transpose();
    const double lse = mx + std::log(e.sum());
    out.value += 0.5 * (lse - z(i, i));
    d_z.row(i) += 0.5 * (e / e.sum()).matrix().transpose();
    d_z(i, i) -= 0.5;
  }
  // teacher -> student: column i over the m students
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::ArrayXd col = z.col(i).head(m).array();
    const double mx = col.maxCoeff();
    const Eigen::ArrayXd e = (col - mx).exp();
    const double lse = mx + std::log(e.sum());
    out.value += 0.5 * (lse - z(i, i));
    d_z.col(i).head(m) += 0.5 * (e / e.sum()).matrix();
    d_z(i, i) -= 0.5;
  }
  out.grad = unnormalize_grad(xn, tau * d_z * tn);
  return out;
}

BoxLoss box_loss(std::span<const Box> pred, std::span<const Box> target, double w_l1,
                 double w_giou, double scale) {
  if (pred.size() != target.size()) throw std::invalid_argument("box_loss: pair count mismatch");
  BoxLoss out;
  out.grads.resize(pred.size());
  if (pred.empty()) return out;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const Box& p = pred[k];
    const Box& t = target[k];
    const std::array<double, 4> pc{p.x1, p.y1, p.x2, p.y2};
    const std::array<double, 4> tc{t.x1, t.y1, t.x2, t.y2};
    const GiouWithGrad gg = giou_with_grad(p, t);
    double l1 = 0.0;
    for (int c = 0; c < 4; ++c) {
      const double diff = pc[c] - tc[c];
      l1 += std::abs(diff) / scale;
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      out.grads[k][c] = inv * (w_l1 * sign / scale - w_giou * gg.d_pred[c]);
    }
    out.value += inv * (w_l1 * l1 + w_giou * (1.0 - gg.value));
  }
  return out;
}

LossReport total_loss(std::span<const LayerLosses> layers, double ckd_img, const DistillConfig& cfg) {
  LossReport r;
  r.layers.assign(layers.begin(), layers.end());
  r.ckd_img = ckd_img;
  double total = 0.0;
  for (const auto& l : layers) {
    total += l.cls + l.box + cfg.alpha_ckd * l.ckd_ins + cfg.alpha_rkd * l.rkd_ins;
  }
  r.total = total + cfg.alpha_img * ckd_img;
  return r;
}

}  // namespace hdovd
