#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"
#include "hdovd/losses.hpp"

namespace hdovd {

/// How the text-space queries q_hat are derived.
enum class ProjectionMode {
  Progressive,  ///< q_hat = MLP(q)
  Parallel,     ///< q_hat = MLP(h), alongside q = P h
  SameSpace,    ///< q_hat = q
};

ProjectionMode parse_projection_mode(const std::string& s);
std::string to_string(ProjectionMode m);

struct DetectorConfig {
  int input_channels = 37;
  int channels = 48;   ///< backbone width C
  int hidden = 64;     ///< query state width H
  int dim = 64;        ///< embedding dimension d
  int grid_cols = 6;   ///< reference points per row
  int grid_rows = 5;
  int layers = 2;
  double image_size = 96.0;
  double box_bias = -1.85;
  ProjectionMode projection = ProjectionMode::Progressive;

  [[nodiscard]] int queries() const { return grid_cols * grid_rows; }
  void validate() const;
};

/// All learnable tensors. Vectors are stored as one-column matrices.
struct DetectorParams {
  Mat Wb, bb;          ///< backbone 1x1 conv: Cin -> C
  Mat G;               ///< global projection: C -> d
  Mat Z;               ///< query content seeds, N x H
  std::vector<Mat> W;  ///< per layer: sampled features (2C) -> H
  std::vector<Mat> U;  ///< per layer: previous state -> H
  std::vector<Mat> c;
  std::vector<Mat> V;  ///< per layer box head: H -> 4
  std::vector<Mat> v;
  Mat P;               ///< visual projection: H -> d
  Mat M1, m1, M2, m2;  ///< text-space MLP

  [[nodiscard]] std::vector<Mat*> tensors();
  [[nodiscard]] std::vector<const Mat*> tensors() const;
  /// Same shapes, all zeros.
  [[nodiscard]] DetectorParams zeros_like() const;
  friend bool operator==(const DetectorParams& a, const DetectorParams& b);
};

struct LayerOutput {
  Mat points;   ///< N x 2 sampling points (constants)
  Mat sampled;  ///< N x 2C
  Mat pre;      ///< N x H
  Mat h;
  Mat a;        ///< N x 4 box logits
  std::vector<Box> boxes;
  Mat q;        ///< N x d visual-space queries
  Mat t_pre;    ///< N x d text MLP hidden pre-activation
  Mat q_hat;    ///< N x d text-space queries
};

struct ForwardResult {
  FeaturePyramid input;
  std::vector<Mat> backbone_pre;
  FeaturePyramid features;
  Vec pooled;   ///< C
  Vec global;   ///< d
  std::vector<LayerOutput> layers;
};

/// Loss gradients with respect to the detector outputs of one image.
struct OutputGrads {
  std::vector<Mat> d_q;      ///< per layer N x d
  std::vector<Mat> d_q_hat;  ///< per layer N x d
  std::vector<Mat> d_box;    ///< per layer N x 4
  Vec d_global;              ///< d

  static OutputGrads zeros(const DetectorConfig& cfg);
};

class Detector {
 public:
  Detector(DetectorConfig cfg, std::uint64_t seed);
  Detector(DetectorConfig cfg, DetectorParams params);

  [[nodiscard]] const DetectorConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const DetectorParams& params() const noexcept { return params_; }
  [[nodiscard]] DetectorParams& params() noexcept { return params_; }

  [[nodiscard]] ForwardResult forward(FeaturePyramid input) const;
  /// Accumulates parameter gradients into `grads`.
  void backward(const ForwardResult& fwd, const OutputGrads& dout, DetectorParams& grads) const;

  void save(const std::filesystem::path& path) const;
  static Detector load(const std::filesystem::path& path);

 private:
  DetectorConfig cfg_;
  DetectorParams params_;
};

}  // namespace hdovd
