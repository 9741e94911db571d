#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

namespace hdovd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Throws std::invalid_argument on a zero or non-finite vector.
Vec normalized(const Vec& v);

/// Cosine similarity clamped to [-1, 1]. Dimension mismatch and zero vectors
/// are contract violations (std::invalid_argument).
double cosine(const Vec& a, const Vec& b);

/// Deterministic unit vector drawn from a key; used by the stub encoders.
Vec keyed_unit_vector(std::uint64_t seed, std::string_view key, int dim);

/// Stacks vectors as matrix rows. All vectors must share a dimension.
Mat stack_rows(std::span<const Vec> rows, int dim);

/// Bounded FIFO of detached teacher embeddings used as extra negatives.
class MemoryQueue {
 public:
  explicit MemoryQueue(std::size_t capacity) : capacity_(capacity) {}

  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] const std::deque<Vec>& entries() const noexcept { return entries_; }

  /// Appends in order, evicting the oldest entries beyond capacity.
  void push(std::span<const Vec> batch);

  /// Current contents as rows (oldest first); zero rows when empty.
  [[nodiscard]] Mat as_matrix(int dim) const;

 private:
  std::size_t capacity_;
  std::deque<Vec> entries_;
};

/// Returns batch ++ current queue contents, then pushes the batch into the
/// queue.
std::vector<Vec> queue_pad(std::span<const Vec> batch, MemoryQueue& queue);

}  // namespace hdovd
