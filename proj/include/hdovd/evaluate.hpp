#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdovd/detector.hpp"
#include "hdovd/ensemble.hpp"
#include "hdovd/losses.hpp"

namespace hdovd {

struct GroundTruth {
  ImageId image;
  Box box;
  int class_index = 0;
  bool novel = false;
};

struct ScoredBox {
  ImageId image;
  Box box;
  double score = 0.0;
};

/// All-point interpolated AP with greedy matching: detections in descending
/// score order (stable), each claiming its highest-IoU ground truth in the
/// same image; a claim at IoU >= `iou_thresh` on an unclaimed box is a true
/// positive. nullopt when there is no ground truth.
std::optional<double> average_precision(std::span<const ScoredBox> detections,
                                        std::span<const ScoredBox> ground_truth, double iou_thresh = 0.5);

struct ErrorAnalysisReport {
  int novel_objects = 0;
  int recall_count = 0;      ///< novel GT covered by any of the N query boxes
  int selected_count = 0;    ///< novel GT covered by a kept detection
  int misclassified_as_base = 0;
  int wrong_novel = 0;
  int correct_novel = 0;

  [[nodiscard]] double correct_rate() const {
    return selected_count == 0 ? 0.0 : static_cast<double>(correct_novel) / selected_count;
  }
};

struct ImagePrediction {
  ImageId image;
  std::vector<Box> query_boxes;  ///< final layer, all N queries
  Mat scores;                    ///< N x C ensembled log scores
  std::vector<Detection> detections;
};

ImagePrediction predict(const Detector& detector, const ImageId& image, FeaturePyramid pyramid,
                        const Classifier& classifier, const DistillConfig& distill, const EnsembleConfig& ens,
                        int top_n = 100);

ErrorAnalysisReport error_analysis(std::span<const ImagePrediction> predictions,
                                   std::span<const GroundTruth> ground_truth, const Classifier& classifier,
                                   double iou_thresh = 0.5);

struct ClassAp {
  std::string name;
  bool novel = false;
  int gt_count = 0;
  std::optional<double> ap;
};

struct EvalReport {
  std::vector<ClassAp> classes;
  double base_map = 0.0;   ///< mean over base classes with ground truth
  double novel_map = 0.0;
  double all_map = 0.0;
  ErrorAnalysisReport errors;
};

/// Throws std::invalid_argument when there are no predictions.
EvalReport evaluate_predictions(std::span<const ImagePrediction> predictions,
                                std::span<const GroundTruth> ground_truth, const Classifier& classifier,
                                double iou_thresh = 0.5);

}  // namespace hdovd
