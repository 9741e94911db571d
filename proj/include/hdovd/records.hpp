#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hdovd/geometry.hpp"
#include "hdovd/pseudo_label.hpp"

namespace hdovd {

/// Shortest decimal text that parses back to the identical double.
std::string format_real(double v);
double parse_real(std::string_view text);

/// Tab-separated rows; blank lines and lines starting with '#' are skipped.
/// Throws std::runtime_error naming the file when it cannot be opened.
std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path);

// Proposals: image_id, x1, y1, x2, y2, objectness
void write_proposals(const std::filesystem::path& path, std::span<const Proposal> proposals);
std::vector<Proposal> read_proposals(const std::filesystem::path& path);

// Ground truth: image_id, x1, y1, x2, y2, class, split ("base" or "novel")
struct GtRecord {
  ImageId image_id;
  Box box;
  std::string class_name;
  bool novel = false;
};
void write_ground_truth(const std::filesystem::path& path, std::span<const GtRecord> records);
std::vector<GtRecord> read_ground_truth(const std::filesystem::path& path);

// Pseudo annotations: image_id, x1, y1, x2, y2, label, raw_score, weight
void write_annotations(const std::filesystem::path& path, std::span<const PseudoLabel> labels);
/// Text embeddings are not stored; the returned records carry empty vectors.
std::vector<PseudoLabel> read_annotations(const std::filesystem::path& path);

// Detections: image_id, x1, y1, x2, y2, class, score
struct DetectionRecord {
  ImageId image_id;
  Box box;
  std::string class_name;
  double score = 0.0;
};
void write_detections(const std::filesystem::path& path, std::span<const DetectionRecord> dets);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);

}  // namespace hdovd
