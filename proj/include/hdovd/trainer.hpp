#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hdovd/detector.hpp"
#include "hdovd/losses.hpp"
#include "hdovd/matching.hpp"

namespace hdovd {

/// Which matched queries receive instance-level distillation.
enum class DistillTargets { Both, Base, Pseudo };

DistillTargets parse_distill_targets(const std::string& s);
std::string to_string(DistillTargets t);

struct TrainConfig {
  std::uint64_t seed = 7;
  int epochs = 30;
  int batch_size = 4;
  int max_steps = -1;            ///< stop early when >= 0
  double learning_rate = 0.05;
  double grad_clip = 5.0;        ///< global-norm clip; 0 disables
  std::string optimizer = "sgd"; ///< "sgd" or "adamw"
  double weight_decay = 1e-4;    ///< adamw only
  bool pseudo_boxes = true;      ///< add pseudo boxes as matching targets
  bool class_wise = true;        ///< pseudo text columns in the classifier
  bool weighting = true;         ///< confidence weights on pseudo columns
  DistillTargets distill_targets = DistillTargets::Both;
  CostWeights cost;
  double box_l1 = 5.0;
  double box_giou = 2.0;

  void validate() const;
};

struct TrainingBox {
  Box box;
  int label = -1;           ///< base: class index; pseudo: label table index or -1
  double weight = 1.0;      ///< pseudo confidence weight
  std::optional<Vec> region;  ///< teacher region embedding, when cached
};

struct TrainingImage {
  ImageId id;
  FeaturePyramid pyramid;
  std::vector<TrainingBox> base;
  std::vector<TrainingBox> pseudo;
  std::optional<Vec> clip_global;
};

struct TrainingSet {
  std::vector<std::string> base_names;
  Mat base_text;                       ///< M x d, unit rows
  std::vector<std::string> label_names;
  std::vector<Vec> label_text;         ///< unit rows
  std::vector<TrainingImage> images;
};

struct TrainResult {
  Detector detector;
  std::vector<LossReport> history;
};

/// Gradient descent on the total loss. Writes one JSON line per step to
/// `metrics` when given. Deterministic in the config seed.
TrainResult train(const TrainingSet& data, const DetectorConfig& dcfg, const TrainConfig& tcfg,
                  const DistillConfig& distill, std::ostream* metrics = nullptr);

/// Loss and output gradients of one batch, exposed for testing.
struct BatchLoss {
  LossReport report;
  std::vector<OutputGrads> grads;  ///< per batch image
  std::vector<Vec> instance_teachers;  ///< queue entries produced by this batch
  std::vector<Vec> image_teachers;
};
BatchLoss batch_loss(const TrainingSet& data, std::span<const std::size_t> batch,
                     std::span<const ForwardResult> outputs, const DetectorConfig& dcfg,
                     const TrainConfig& tcfg, const DistillConfig& distill, const Mat& instance_queue,
                     const Mat& image_queue);

}  // namespace hdovd
