#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"

namespace hdovd {

class EmbeddingCache;

struct ClassSpec {
  std::string name;
  bool novel = false;
  std::vector<std::string> aliases;
  int parent = -1;  ///< index of a semantically related base class, or -1
};

class ClassCatalog {
 public:
  ClassCatalog() = default;
  explicit ClassCatalog(std::vector<ClassSpec> classes);

  [[nodiscard]] const std::vector<ClassSpec>& classes() const noexcept { return classes_; }
  [[nodiscard]] const ClassSpec& operator[](std::size_t i) const { return classes_.at(i); }
  [[nodiscard]] std::size_t size() const noexcept { return classes_.size(); }
  [[nodiscard]] std::vector<int> base_indices() const;
  [[nodiscard]] std::vector<int> novel_indices() const;
  [[nodiscard]] std::optional<int> find(std::string_view name) const;
  /// Class name plus aliases.
  [[nodiscard]] std::vector<std::string> nouns(int index) const;

 private:
  std::vector<ClassSpec> classes_;
};

/// Built-in catalog: novel classes are paired with a base "parent".
/// Throws std::invalid_argument for fewer than 2 base or 1 novel class.
ClassCatalog default_catalog(int base_classes, int novel_classes);

struct SceneObject {
  Box box;
  int class_index = 0;
};

/// Full ground truth per image, as seen by the teacher stubs.
using SceneTruth = std::map<ImageId, std::vector<SceneObject>>;

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  [[nodiscard]] virtual int dim() const = 0;
  /// Unit-norm embedding of a non-empty text.
  [[nodiscard]] virtual Vec text(std::string_view text) const = 0;
};

class RegionEncoder {
 public:
  virtual ~RegionEncoder() = default;
  [[nodiscard]] virtual int dim() const = 0;
  [[nodiscard]] virtual std::optional<Vec> region(const ImageId& image, const Box& box) const = 0;
  [[nodiscard]] virtual std::optional<Vec> global(const ImageId& image) const = 0;
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  [[nodiscard]] virtual std::string caption(const ImageId& image, const Box& box) const = 0;
};

/// Stands in for a frozen text encoder. Class names map to fixed class
/// vectors (novel classes share `affinity` with their parent), aliases are
/// small perturbations of their class, other words are keyed random vectors,
/// and multi-word text is the normalized sum of its word vectors.
class StubTextEncoder final : public TextEncoder {
 public:
  StubTextEncoder(std::uint64_t seed, int dim, ClassCatalog catalog, double affinity = 0.6,
                  double alias_noise = 0.3);

  [[nodiscard]] int dim() const override { return dim_; }
  [[nodiscard]] Vec text(std::string_view text) const override;
  [[nodiscard]] Vec class_vector(int index) const { return class_vectors_.at(static_cast<std::size_t>(index)); }
  [[nodiscard]] const ClassCatalog& catalog() const noexcept { return catalog_; }

 private:
  [[nodiscard]] Vec word(std::string_view w) const;

  std::uint64_t seed_;
  int dim_;
  ClassCatalog catalog_;
  double alias_noise_;
  std::vector<Vec> class_vectors_;
};

struct VisionStubConfig {
  double instance_spread = 0.5;   ///< per-instance deviation from the class vector
  double background_weight = 0.3;
  double region_noise = 0.25;
};

/// Stands in for a frozen image encoder over crops. Regions are
/// IoU-weighted mixtures of the per-instance appearance vectors of the
/// objects they cover.
class StubVisionEncoder final : public RegionEncoder {
 public:
  StubVisionEncoder(std::uint64_t seed, const StubTextEncoder& text,
                    std::shared_ptr<const SceneTruth> scenes, VisionStubConfig cfg = {});

  [[nodiscard]] int dim() const override { return text_.dim(); }
  [[nodiscard]] std::optional<Vec> region(const ImageId& image, const Box& box) const override;
  [[nodiscard]] std::optional<Vec> global(const ImageId& image) const override;

  /// Appearance vector of object `index` in `image`; the renderer uses the
  /// same vectors so image features correlate with teacher embeddings.
  [[nodiscard]] Vec appearance(const ImageId& image, std::size_t index) const;
  [[nodiscard]] Vec background(const ImageId& image) const;
  /// Instance-specific part of appearance() before normalization.
  [[nodiscard]] Vec instance_offset(const ImageId& image, std::size_t index) const;
  [[nodiscard]] const StubTextEncoder& text_encoder() const noexcept { return text_; }

 private:
  std::uint64_t seed_;
  const StubTextEncoder& text_;
  std::shared_ptr<const SceneTruth> scenes_;
  VisionStubConfig cfg_;
};

struct CaptionStubConfig {
  double hallucination_rate = 0.05;     ///< caption names a wrong class
  double distractor_class_rate = 0.2;   ///< caption mentions an extra wrong class
  double min_object_iou = 0.3;          ///< below this the region is described as scenery
};

/// Templated region captions naming the covered object's class noun (or an
/// alias) amid distractor words.
class StubCaptioner final : public Captioner {
 public:
  StubCaptioner(std::uint64_t seed, ClassCatalog catalog, std::shared_ptr<const SceneTruth> scenes,
                CaptionStubConfig cfg = {});

  [[nodiscard]] std::string caption(const ImageId& image, const Box& box) const override;

 private:
  std::uint64_t seed_;
  ClassCatalog catalog_;
  std::shared_ptr<const SceneTruth> scenes_;
  CaptionStubConfig cfg_;
};

/// Region/global lookups served from a pre-extracted cache.
class CachedRegionEncoder final : public RegionEncoder {
 public:
  explicit CachedRegionEncoder(const EmbeddingCache& cache) : cache_(cache) {}
  [[nodiscard]] int dim() const override;
  [[nodiscard]] std::optional<Vec> region(const ImageId& image, const Box& box) const override;
  [[nodiscard]] std::optional<Vec> global(const ImageId& image) const override;

 private:
  const EmbeddingCache& cache_;
};

/// Cache first, then an optional fallback encoder; throws std::out_of_range
/// when neither has the text.
class CachedTextEncoder final : public TextEncoder {
 public:
  CachedTextEncoder(const EmbeddingCache& cache, const TextEncoder* fallback = nullptr)
      : cache_(cache), fallback_(fallback) {}
  [[nodiscard]] int dim() const override;
  [[nodiscard]] Vec text(std::string_view text) const override;

 private:
  const EmbeddingCache& cache_;
  const TextEncoder* fallback_;
};

/// Stable string form of a box for hashing (exact bit patterns).
std::string box_key(const Box& box);

}  // namespace hdovd
