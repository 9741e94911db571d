#include "hdovd/evaluate.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace hdovd {

std::optional<double> average_precision(std::span<const ScoredBox> detections,
                                        std::span<const ScoredBox> ground_truth, double iou_thresh) {
  if (ground_truth.empty()) return std::nullopt;
  std::map<ImageId, std::vector<std::size_t>> gt_by_image;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) gt_by_image[ground_truth[g].image].push_back(g);
  std::vector<bool> claimed(ground_truth.size(), false);

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return detections[a].score > detections[b].score; });

  std::vector<double> precision, recall;
  int tp = 0;
  int seen = 0;
  for (std::size_t idx : order) {
    const ScoredBox& d = detections[idx];
    ++seen;
    double best = -1.0;
    std::size_t best_g = 0;
    if (auto it = gt_by_image.find(d.image); it != gt_by_image.end()) {
      for (std::size_t g : it->second) {
        const double o = iou(d.box, ground_truth[g].box);
        if (o > best) best = o, best_g = g;
      }
    }
    if (best >= iou_thresh && !claimed[best_g]) {
      claimed[best_g] = true;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / seen);
    recall.push_back(static_cast<double>(tp) / static_cast<double>(ground_truth.size()));
  }
  // Precision envelope from the right, then integrate over recall steps.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

ImagePrediction predict(const Detector& detector, const ImageId& image, FeaturePyramid pyramid,
                        const Classifier& classifier, const DistillConfig& distill, const EnsembleConfig& ens,
                        int top_n) {
  ens.validate();
  const ForwardResult fwd = detector.forward(std::move(pyramid));
  const LayerOutput& last = fwd.layers.back();
  const HeadScores heads = score_heads(last.q, last.q_hat, classifier, distill.tau_ckd, distill.tau_cls);
  ImagePrediction p;
  p.image = image;
  p.query_boxes = last.boxes;
  p.scores = ensemble_log(heads.log_cls, heads.log_dis, classifier.base_mask(), ens.beta_base, ens.beta_novel);
  p.detections = postprocess(p.scores, p.query_boxes, top_n);
  return p;
}

ErrorAnalysisReport error_analysis(std::span<const ImagePrediction> predictions,
                                   std::span<const GroundTruth> ground_truth, const Classifier& classifier,
                                   double iou_thresh) {
  std::map<ImageId, const ImagePrediction*> by_image;
  for (const auto& p : predictions) by_image[p.image] = &p;
  ErrorAnalysisReport r;
  for (const auto& gt : ground_truth) {
    if (!gt.novel) continue;
    ++r.novel_objects;
    auto it = by_image.find(gt.image);
    if (it == by_image.end()) continue;
    const ImagePrediction& p = *it->second;
    if (std::any_of(p.query_boxes.begin(), p.query_boxes.end(),
                    [&](const Box& b) { return iou(b, gt.box) >= iou_thresh; })) {
      ++r.recall_count;
    }
    // Detections are in rank order, so the first covering one scores highest.
    const auto cover = std::find_if(p.detections.begin(), p.detections.end(),
                                    [&](const Detection& d) { return iou(d.box, gt.box) >= iou_thresh; });
    if (cover == p.detections.end()) continue;
    ++r.selected_count;
    Eigen::Index arg = 0;
    p.scores.row(cover->query).maxCoeff(&arg);
    if (arg < classifier.base_count()) {
      ++r.misclassified_as_base;
    } else if (arg == gt.class_index) {
      ++r.correct_novel;
    } else {
      ++r.wrong_novel;
    }
  }
  return r;
}

EvalReport evaluate_predictions(std::span<const ImagePrediction> predictions,
                                std::span<const GroundTruth> ground_truth, const Classifier& classifier,
                                double iou_thresh) {
  if (predictions.empty()) throw std::invalid_argument("evaluation split is empty");
  const int classes = classifier.size();
  std::vector<std::vector<ScoredBox>> dets(static_cast<std::size_t>(classes));
  std::vector<std::vector<ScoredBox>> gts(static_cast<std::size_t>(classes));
  for (const auto& p : predictions) {
    for (const auto& d : p.detections) dets[static_cast<std::size_t>(d.class_index)].push_back({p.image, d.box, d.score});
  }
  for (const auto& g : ground_truth) {
    if (g.class_index < 0 || g.class_index >= classes) throw std::invalid_argument("ground truth class out of range");
    gts[static_cast<std::size_t>(g.class_index)].push_back({g.image, g.box, 0.0});
  }
  EvalReport r;
  double sums[2] = {0.0, 0.0};
  int counts[2] = {0, 0};
  for (int c = 0; c < classes; ++c) {
    const bool novel = c >= classifier.base_count();
    ClassAp ca{classifier.names()[static_cast<std::size_t>(c)], novel,
               static_cast<int>(gts[static_cast<std::size_t>(c)].size()),
               average_precision(dets[static_cast<std::size_t>(c)], gts[static_cast<std::size_t>(c)], iou_thresh)};
    if (ca.ap) {
      sums[novel] += *ca.ap;
      ++counts[novel];
    }
    r.classes.push_back(std::move(ca));
  }
  r.base_map = counts[0] ? sums[0] / counts[0] : 0.0;
  r.novel_map = counts[1] ? sums[1] / counts[1] : 0.0;
  r.all_map = counts[0] + counts[1] ? (sums[0] + sums[1]) / (counts[0] + counts[1]) : 0.0;
  r.errors = error_analysis(predictions, ground_truth, classifier, iou_thresh);
  return r;
}

}  // namespace hdovd
