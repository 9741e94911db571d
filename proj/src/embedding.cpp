#include "hdovd/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hdovd/rng.hpp"

namespace hdovd {

Vec normalized(const Vec& v) {
  if (!v.allFinite()) throw std::invalid_argument("non-finite embedding component");
  const double n = v.norm();
  if (n == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  return v / n;
}

double cosine(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

Vec keyed_unit_vector(std::uint64_t seed, std::string_view key, int dim) {
  Rng rng(hash_combine(seed, fnv1a(key)));
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.normal();
  return normalized(v);
}

Mat stack_rows(std::span<const Vec> rows, int dim) {
  Mat m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != dim) throw std::invalid_argument("stack_rows: dimension mismatch");
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

void MemoryQueue::push(std::span<const Vec> batch) {
  for (const Vec& v : batch) {
    entries_.push_back(v);
    if (entries_.size() > capacity_) entries_.pop_front();
  }
}

Mat MemoryQueue::as_matrix(int dim) const {
  Mat m(static_cast<Eigen::Index>(entries_.size()), dim);
  Eigen::Index r = 0;
  for (const Vec& v : entries_) m.row(r++) = v.transpose();
  return m;
}

std::vector<Vec> queue_pad(std::span<const Vec> batch, MemoryQueue& queue) {
  std::vector<Vec> negatives(batch.begin(), batch.end());
  negatives.insert(negatives.end(), queue.entries().begin(), queue.entries().end());
  queue.push(batch);
  return negatives;
}

}  // namespace hdovd
