#pragma once

#include <filesystem>
#include <string>

#include "hdovd/detector.hpp"
#include "hdovd/ensemble.hpp"
#include "hdovd/losses.hpp"
#include "hdovd/pseudo_label.hpp"
#include "hdovd/trainer.hpp"
#include "hdovd/world.hpp"

namespace hdovd {

/// Every tunable of the harness. Defaults are the desk-scale toy setup.
struct Settings {
  WorldConfig world;
  PipelineConfig pipeline;
  DistillConfig distill{.instance_queue = 0, .image_queue = 64};
  EnsembleConfig ensemble;
  TrainConfig train;
  DetectorConfig detector;
  int top_n = 100;
  double eval_iou = 0.5;

  /// Detector config with the world- and loss-derived fields filled in.
  [[nodiscard]] DetectorConfig detector_config() const;
  void validate() const;
};

/// Reads an INI document ([world], [pipeline], [distill], [ensemble],
/// [train], [detector]) over the defaults. Unknown sections or keys and
/// unparsable values throw std::runtime_error naming the offending entry.
Settings load_settings(const std::filesystem::path& path);
Settings parse_settings(const std::string& text, const std::string& origin = "<string>");
std::string format_settings(const Settings& s);

}  // namespace hdovd
