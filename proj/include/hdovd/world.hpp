#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "hdovd/geometry.hpp"
#include "hdovd/losses.hpp"
#include "hdovd/providers.hpp"

namespace hdovd {

struct WorldConfig {
  std::uint64_t seed = 7;
  int base_classes = 8;
  int novel_classes = 4;
  int train_images = 200;
  int eval_images = 50;
  int image_size = 96;
  double density = 3.0;  ///< mean objects per image
  int max_objects = 6;
  int min_object_size = 20;
  int max_object_size = 36;
  int embed_dim = 64;
  int semantic_channels = 32;
  double render_noise = 0.05;
  double background_gain = 0.3;
  double class_affinity = 0.6;
  /// Scale of a novel class's own direction (beyond its parent) in the
  /// rendered features; teacher embeddings always carry it in full.
  double novel_visual_gain = 0.5;
  double proposal_jitter = 0.05;  ///< box jitter as a fraction of object size
  int distractors = 4;            ///< background proposals per image

  void validate() const;
};

struct World {
  WorldConfig config;
  ClassCatalog catalog;
  std::vector<ImageId> train;
  std::vector<ImageId> eval;
  SceneTruth scenes;
};

/// Deterministic in config (including its seed). Objects never overlap.
World generate_world(const WorldConfig& cfg);

void save_world(const World& world, const std::filesystem::path& path);
World load_world(const std::filesystem::path& path);

/// Teacher-side stand-ins derived from the world seed.
struct Stubs {
  std::shared_ptr<const SceneTruth> scenes;
  std::unique_ptr<StubTextEncoder> text;
  std::unique_ptr<StubVisionEncoder> vision;
  std::unique_ptr<StubCaptioner> captioner;
};
Stubs make_stubs(const World& world);

/// Number of input channels of a rendered pyramid.
int input_channels(const WorldConfig& cfg);

/// Renders two pyramid levels (stride 4 and 8). Semantic channels are a
/// fixed linear map of the teacher appearance vectors, followed by an
/// objectness channel and four normalized box-edge offsets.
class Renderer {
 public:
  Renderer(const World& world, const StubVisionEncoder& vision);
  [[nodiscard]] FeaturePyramid render(const ImageId& image) const;
  /// Appearance as seen in the rendered features.
  [[nodiscard]] Vec visual_appearance(const ImageId& image, std::size_t index) const;

 private:
  const World& world_;
  const StubVisionEncoder& vision_;
  Mat mix_;
};

/// Stub proposal generator: a jittered box around every object plus random
/// low-objectness distractors.
std::vector<Proposal> generate_proposals(const World& world, const ImageId& image);

}  // namespace hdovd
