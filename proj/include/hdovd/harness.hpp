#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "hdovd/config.hpp"
#include "hdovd/embedding_cache.hpp"
#include "hdovd/evaluate.hpp"
#include "hdovd/trainer.hpp"

namespace hdovd {

namespace artifact {
inline constexpr const char* kCatalog = "catalog.json";
inline constexpr const char* kWorld = "world.json";
inline constexpr const char* kGtTrain = "gt_train.tsv";
inline constexpr const char* kGtEval = "gt_eval.tsv";
inline constexpr const char* kProposals = "proposals.tsv";
inline constexpr const char* kCache = "cache.hovd";
inline constexpr const char* kPseudoLabels = "pseudo_labels.tsv";
inline constexpr const char* kPipelineReport = "pipeline_report.json";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kMetrics = "metrics.jsonl";
inline constexpr const char* kEval = "eval.json";
inline constexpr const char* kDetections = "detections.tsv";
}  // namespace artifact

/// Throws std::runtime_error naming the missing artifact and the step that
/// produces it.
std::filesystem::path require_artifact(const std::filesystem::path& dir, const char* name);

/// World, catalog, ground-truth splits and stub proposals.
void gen_world(const Settings& s, const std::filesystem::path& dir);

/// Teacher embeddings: train proposals and base boxes, train globals, and
/// every class name.
EmbeddingCache extract_embeddings(const std::filesystem::path& dir);

/// Runs the pseudo-label pipeline over the train split and adds the chosen
/// labels' text embeddings to the cache.
PipelineReport pseudo_label(const Settings& s, const std::filesystem::path& dir);

TrainingSet load_training_set(const Settings& s, const std::filesystem::path& dir);
TrainResult train_model(const Settings& s, const TrainingSet& data, std::ostream* metrics = nullptr);
/// Trains and writes the checkpoint and metrics log.
TrainResult run_train(const Settings& s, const std::filesystem::path& dir);

struct EvalData {
  Classifier classifier{1};
  std::vector<ImageId> images;
  std::vector<FeaturePyramid> pyramids;
  std::vector<GroundTruth> ground_truth;
};
EvalData load_eval_data(const std::filesystem::path& dir);

EvalReport evaluate_model(const Detector& det, const EvalData& data, const Settings& s, const EnsembleConfig& ens,
                          std::vector<ImagePrediction>* predictions = nullptr);

/// One report per exponent pair; the first pair's detections are written.
std::vector<EvalReport> run_eval(const Settings& s, const std::filesystem::path& dir,
                                 const std::vector<EnsembleConfig>& pairs);

/// Loss curves from a metrics log as CSV, plus an optional SVG plot.
void write_report(const std::filesystem::path& metrics, std::ostream& csv,
                  const std::optional<std::filesystem::path>& svg);

}  // namespace hdovd
