#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"

namespace hdovd {

class CacheError : public std::runtime_error {
 public:
  enum class Kind { MissingFile, MalformedHeader, DimensionMismatch, Truncated, Io };

  CacheError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Lowercases and collapses runs of whitespace; trims both ends.
std::string normalize_text_key(std::string_view text);

/// Offline store of teacher embeddings. Every vector is normalized on insert.
/// Const member functions may be called concurrently; mutation needs
/// exclusive access.
///
/// On-disk layout (all integers and reals little-endian):
///   "HOVD" | u32 version | u32 dim
///   then three sections, each: u8 tag (1 region, 2 global, 3 text) | u64 count | records
///   region record: u32 len | image id bytes | 4 x f64 box | dim x f64
///   global record: u32 len | image id bytes | dim x f64
///   text record:   u32 len | key bytes      | dim x f64
class EmbeddingCache {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  explicit EmbeddingCache(int dim);

  [[nodiscard]] int dim() const noexcept { return dim_; }

  void put_region(const ImageId& image, const Box& box, const Vec& v);
  void put_global(const ImageId& image, const Vec& v);
  void put_text(std::string_view text, const Vec& v);

  [[nodiscard]] std::optional<Vec> region(const ImageId& image, const Box& box) const;
  [[nodiscard]] std::optional<Vec> global(const ImageId& image) const;
  [[nodiscard]] std::optional<Vec> text(std::string_view text) const;

  [[nodiscard]] std::size_t region_count() const noexcept { return regions_.size(); }
  [[nodiscard]] std::size_t global_count() const noexcept { return globals_.size(); }
  [[nodiscard]] std::size_t text_count() const noexcept { return texts_.size(); }

  void save(const std::filesystem::path& path) const;

  /// Throws CacheError. When `expected_dim` is set, a file with another
  /// dimension is rejected with Kind::DimensionMismatch.
  static EmbeddingCache load(const std::filesystem::path& path,
                             std::optional<int> expected_dim = std::nullopt);

  friend bool operator==(const EmbeddingCache& a, const EmbeddingCache& b);

 private:
  using RegionKey = std::tuple<ImageId, double, double, double, double>;
  static RegionKey key_of(const ImageId& image, const Box& box) {
    return {image, box.x1, box.y1, box.x2, box.y2};
  }
  Vec checked(const Vec& v) const;

  int dim_;
  std::map<RegionKey, Vec> regions_;
  std::map<ImageId, Vec> globals_;
  std::map<std::string, Vec, std::less<>> texts_;
};

}  // namespace hdovd
