#include "hdovd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "hdovd/rng.hpp"

namespace hdovd {

DistillTargets parse_distill_targets(const std::string& s) {
  if (s == "both") return DistillTargets::Both;
  if (s == "base") return DistillTargets::Base;
  if (s == "pseudo") return DistillTargets::Pseudo;
  throw std::invalid_argument("unknown distill targets '" + s + "' (both, base, pseudo)");
}

std::string to_string(DistillTargets t) {
  switch (t) {
    case DistillTargets::Both: return "both";
    case DistillTargets::Base: return "base";
    case DistillTargets::Pseudo: return "pseudo";
  }
  return "both";
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("epochs >= 0 and batch_size >= 1 required");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be non-negative");
  if (optimizer != "sgd" && optimizer != "adamw") throw std::invalid_argument("optimizer must be sgd or adamw");
}

namespace {

Mat stack(const std::vector<Vec>& rows, int dim) {
  Mat m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

Mat unit_rows(const Mat& m) {
  Mat u = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) u.row(i).normalize();
  return u;
}

struct Columns {
  Mat text;                     ///< (M + K) x d
  std::vector<double> weights;  ///< per column
  std::map<int, int> offset_of_label;  ///< label index -> pseudo offset
};

Columns batch_columns(const TrainingSet& data, std::span<const std::size_t> batch, const TrainConfig& t) {
  const auto m = data.base_text.rows();
  const int d = static_cast<int>(data.base_text.cols());
  std::vector<int> labels;
  std::map<int, std::vector<double>> weights;
  if (t.pseudo_boxes && t.class_wise) {
    for (std::size_t b : batch) {
      for (const auto& pb : data.images[b].pseudo) {
        if (pb.label < 0) continue;
        if (!weights.count(pb.label)) labels.push_back(pb.label);
        weights[pb.label].push_back(pb.weight);
      }
    }
  }
  // Columns ordered by label index so the layout does not depend on image order.
  std::sort(labels.begin(), labels.end());
  Columns c;
  c.text.resize(m + static_cast<Eigen::Index>(labels.size()), d);
  c.text.topRows(m) = data.base_text;
  c.weights.assign(static_cast<std::size_t>(m), 1.0);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int label = labels[k];
    c.text.row(m + static_cast<Eigen::Index>(k)) = data.label_text[static_cast<std::size_t>(label)].transpose();
    const auto& w = weights[label];
    c.weights.push_back(t.weighting ? std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size()) : 1.0);
    c.offset_of_label[label] = static_cast<int>(k);
  }
  return c;
}

}  // namespace

BatchLoss batch_loss(const TrainingSet& data, std::span<const std::size_t> batch,
                     std::span<const ForwardResult> outputs, const DetectorConfig& dcfg,
                     const TrainConfig& tcfg, const DistillConfig& distill, const Mat& instance_queue,
                     const Mat& image_queue) {
  const int n = dcfg.queries();
  const int d = dcfg.dim;
  const int m = static_cast<int>(data.base_text.rows());
  const Columns cols = batch_columns(data, batch, tcfg);
  const Mat col_unit = unit_rows(cols.text);

  BatchLoss out;
  for (std::size_t i = 0; i < batch.size(); ++i) out.grads.push_back(OutputGrads::zeros(dcfg));

  // Per-image targets; the pseudo part mirrors data.images[..].pseudo.
  std::vector<std::vector<Target>> targets(batch.size());
  std::vector<std::vector<const TrainingBox*>> target_src(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainingImage& img = data.images[batch[i]];
    for (const auto& b : img.base) {
      targets[i].push_back({b.box, Target::Kind::Base, b.label});
      target_src[i].push_back(&b);
    }
    if (tcfg.pseudo_boxes) {
      for (const auto& p : img.pseudo) {
        auto it = cols.offset_of_label.find(p.label);
        targets[i].push_back({p.box, Target::Kind::Pseudo, it == cols.offset_of_label.end() ? -1 : it->second});
        target_src[i].push_back(&p);
      }
    }
  }

  std::vector<LayerLosses> layers;
  for (int l = 0; l < dcfg.layers; ++l) {
    LayerLosses ll;
    Mat q_hat_all(static_cast<Eigen::Index>(batch.size()) * n, d);
    std::vector<int> target_col(batch.size() * static_cast<std::size_t>(n), -1);
    std::vector<Box> box_pred, box_tgt;
    std::vector<std::pair<std::size_t, int>> box_owner;  // (batch image, query)
    std::vector<Vec> dq_rows, teachers;
    std::vector<std::pair<std::size_t, int>> dq_owner;

    for (std::size_t i = 0; i < batch.size(); ++i) {
      const LayerOutput& lo = outputs[i].layers[static_cast<std::size_t>(l)];
      q_hat_all.middleRows(static_cast<Eigen::Index>(i) * n, n) = lo.q_hat;
      const Mat probs = (distill.tau_cls * (unit_rows(lo.q_hat) * col_unit.transpose()))
                            .unaryExpr([](double x) { return sigmoid(x); });
      const Assignment asg = match(probs, lo.boxes, targets[i], m, tcfg.cost, dcfg.image_size);
      for (const auto& [qi, ti] : asg.pairs) {
        const Target& t = targets[i][static_cast<std::size_t>(ti)];
        const std::size_t flat = i * static_cast<std::size_t>(n) + static_cast<std::size_t>(qi);
        if (t.kind == Target::Kind::Base) {
          target_col[flat] = t.index;
          box_pred.push_back(lo.boxes[static_cast<std::size_t>(qi)]);
          box_tgt.push_back(t.box);
          box_owner.emplace_back(i, qi);
        } else if (t.index >= 0) {
          target_col[flat] = m + t.index;
        }
        const bool kind_ok = tcfg.distill_targets == DistillTargets::Both ||
                             (tcfg.distill_targets == DistillTargets::Base && t.kind == Target::Kind::Base) ||
                             (tcfg.distill_targets == DistillTargets::Pseudo && t.kind == Target::Kind::Pseudo);
        const auto& region = target_src[i][static_cast<std::size_t>(ti)]->region;
        if (kind_ok && region) {
          dq_rows.push_back(lo.q.row(qi).transpose());
          teachers.push_back(*region);
          dq_owner.emplace_back(i, qi);
        }
      }
    }

    const LossGrad cls = classification_loss(q_hat_all, cols.text, target_col, cols.weights, distill.tau_cls,
                                             {distill.focal_gamma, distill.focal_alpha});
    ll.cls = cls.value;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out.grads[i].d_q_hat[static_cast<std::size_t>(l)] += cls.grad.middleRows(static_cast<Eigen::Index>(i) * n, n);
    }

    const BoxLoss bl = box_loss(box_pred, box_tgt, tcfg.box_l1, tcfg.box_giou, dcfg.image_size);
    ll.box = bl.value;
    for (std::size_t k = 0; k < box_owner.size(); ++k) {
      auto& g = out.grads[box_owner[k].first].d_box[static_cast<std::size_t>(l)];
      for (int c = 0; c < 4; ++c) g(box_owner[k].second, c) += bl.grads[k][static_cast<std::size_t>(c)];
    }

    if (!dq_rows.empty()) {
      const Mat q = stack(dq_rows, d);
      const Mat e = stack(teachers, d);
      const LossGrad ckd = ckd_instance(q, e, instance_queue, distill.tau_ckd);
      const LossGrad rkd = rkd_instance(q, e, distill.tau_rkd);
      ll.ckd_ins = ckd.value;
      ll.rkd_ins = rkd.value;
      const Mat g = distill.alpha_ckd * ckd.grad + distill.alpha_rkd * rkd.grad;
      for (std::size_t k = 0; k < dq_owner.size(); ++k) {
        out.grads[dq_owner[k].first].d_q[static_cast<std::size_t>(l)].row(dq_owner[k].second) +=
            g.row(static_cast<Eigen::Index>(k));
      }
      if (l == 0) out.instance_teachers = teachers;
    }
    layers.push_back(ll);
  }

  std::vector<Vec> globals, clip;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& cg = data.images[batch[i]].clip_global;
    if (!cg) continue;
    globals.push_back(outputs[i].global);
    clip.push_back(*cg);
    owner.push_back(i);
  }
  double img = 0.0;
  if (!globals.empty()) {
    const LossGrad ci = ckd_image(stack(globals, d), stack(clip, d), image_queue, distill.tau_ckd);
    img = ci.value;
    for (std::size_t k = 0; k < owner.size(); ++k) {
      out.grads[owner[k]].d_global += distill.alpha_img * ci.grad.row(static_cast<Eigen::Index>(k)).transpose();
    }
    out.image_teachers = clip;
  }
  out.report = total_loss(layers, img, distill);
  return out;
}

namespace {

nlohmann::json report_json(std::int64_t step, int epoch, const LossReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : r.layers) {
    layers.push_back({{"cls", l.cls}, {"box", l.box}, {"ckd_ins", l.ckd_ins}, {"rkd_ins", l.rkd_ins}});
  }
  return {{"step", step}, {"epoch", epoch}, {"layers", layers}, {"ckd_img", r.ckd_img}, {"total", r.total}};
}

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const DetectorParams& like) : cfg_(cfg) {
    if (cfg.optimizer == "adamw") {
      m_ = like.zeros_like();
      v_ = like.zeros_like();
    }
  }

  void step(DetectorParams& params, DetectorParams& grads) {
    auto gs = grads.tensors();
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (const Mat* g : gs) sq += g->squaredNorm();
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) {
        for (Mat* g : gs) *g *= cfg_.grad_clip / norm;
      }
    }
    auto ps = params.tensors();
    if (cfg_.optimizer == "sgd") {
      for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] -= cfg_.learning_rate * *gs[i];
      return;
    }
    ++t_;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      *ms[i] = b1 * *ms[i] + (1.0 - b1) * *gs[i];
      *vs[i] = b2 * *vs[i] + (1.0 - b2) * gs[i]->cwiseAbs2();
      const Mat update = (*ms[i] / c1).array() / ((*vs[i] / c2).array().sqrt() + eps);
      *ps[i] -= cfg_.learning_rate * (update + cfg_.weight_decay * *ps[i]);
    }
  }

 private:
  TrainConfig cfg_;
  DetectorParams m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace

TrainResult train(const TrainingSet& data, const DetectorConfig& dcfg, const TrainConfig& tcfg,
                  const DistillConfig& distill, std::ostream* metrics) {
  tcfg.validate();
  distill.validate();
  if (data.images.empty()) throw std::invalid_argument("training set is empty");
  if (dcfg.layers != distill.layers) throw std::invalid_argument("detector and distill layer counts differ");
  TrainResult result{Detector(dcfg, tcfg.seed), {}};
  Detector& det = result.detector;
  Optimizer opt(tcfg, det.params());
  MemoryQueue instance_queue(distill.instance_queue);
  MemoryQueue image_queue(distill.image_queue);
  Rng rng(hash_combine(tcfg.seed, fnv1a("batches")));

  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      if (tcfg.max_steps >= 0 && step >= tcfg.max_steps) return result;
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      std::vector<ForwardResult> outs;
      for (std::size_t b : batch) outs.push_back(det.forward(data.images[b].pyramid));
      const BatchLoss bl = batch_loss(data, batch, outs, dcfg, tcfg, distill, instance_queue.as_matrix(dcfg.dim),
                                      image_queue.as_matrix(dcfg.dim));
      DetectorParams grads = det.params().zeros_like();
      for (std::size_t i = 0; i < outs.size(); ++i) det.backward(outs[i], bl.grads[i], grads);
      opt.step(det.params(), grads);
      instance_queue.push(bl.instance_teachers);
      image_queue.push(bl.image_teachers);
      if (metrics) *metrics << report_json(step, epoch, bl.report).dump() << '\n';
      result.history.push_back(bl.report);
      ++step;
    }
  }
  return result;
}

}  // namespace hdovd
