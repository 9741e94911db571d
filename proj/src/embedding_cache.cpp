#include "hdovd/embedding_cache.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <vector>

namespace hdovd {

std::string normalize_text_key(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

EmbeddingCache::EmbeddingCache(int dim) : dim_(dim) {
  if (dim < 1) throw CacheError(CacheError::Kind::DimensionMismatch, "cache dimension must be >= 1");
}

Vec EmbeddingCache::checked(const Vec& v) const {
  if (v.size() != dim_) {
    throw CacheError(CacheError::Kind::DimensionMismatch,
                     "embedding of dimension " + std::to_string(v.size()) +
                         " inserted into cache of dimension " + std::to_string(dim_));
  }
  return normalized(v);
}

void EmbeddingCache::put_region(const ImageId& image, const Box& box, const Vec& v) {
  regions_.insert_or_assign(key_of(image, box), checked(v));
}

void EmbeddingCache::put_global(const ImageId& image, const Vec& v) {
  globals_.insert_or_assign(image, checked(v));
}

void EmbeddingCache::put_text(std::string_view text, const Vec& v) {
  texts_.insert_or_assign(normalize_text_key(text), checked(v));
}

std::optional<Vec> EmbeddingCache::region(const ImageId& image, const Box& box) const {
  auto it = regions_.find(key_of(image, box));
  if (it == regions_.end()) return std::nullopt;
  return it->second;
}

std::optional<Vec> EmbeddingCache::global(const ImageId& image) const {
  auto it = globals_.find(image);
  if (it == globals_.end()) return std::nullopt;
  return it->second;
}

std::optional<Vec> EmbeddingCache::text(std::string_view text) const {
  auto it = texts_.find(normalize_text_key(text));
  if (it == texts_.end()) return std::nullopt;
  return it->second;
}

bool operator==(const EmbeddingCache& a, const EmbeddingCache& b) {
  auto same = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (auto i = x.begin(), j = y.begin(); i != x.end(); ++i, ++j) {
      if (i->first != j->first) return false;
      if (i->second.size() != j->second.size()) return false;
      if (std::memcmp(i->second.data(), j->second.data(),
                      sizeof(double) * static_cast<std::size_t>(i->second.size())) != 0) {
        return false;
      }
    }
    return true;
  };
  return a.dim_ == b.dim_ && same(a.regions_, b.regions_) && same(a.globals_, b.globals_) &&
         same(a.texts_, b.texts_);
}

namespace {

enum : std::uint8_t { kRegionTag = 1, kGlobalTag = 2, kTextTag = 3 };

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void u8(std::uint8_t v) { os_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void vec(const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }

 private:
  template <typename T>
  void le(T v) {
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(buf, sizeof(T));
  }
  std::ostream& os_;
};

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 20)) throw CacheError(CacheError::Kind::Truncated, "cache key length out of range");
    return bytes(n);
  }
  Vec vec(int dim) {
    Vec v(dim);
    for (int i = 0; i < dim; ++i) v[i] = f64();
    return v;
  }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    is_.read(s.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) {
      throw CacheError(CacheError::Kind::Truncated, "unexpected end of cache file");
    }
    return s;
  }

 private:
  template <typename T>
  T le() {
    const std::string b = bytes(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(b[i])) << (8 * i);
    }
    return v;
  }
  std::istream& is_;
};

}  // namespace

void EmbeddingCache::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CacheError(CacheError::Kind::Io, "cannot open " + path.string() + " for writing");
  Writer w(os);
  os.write("HOVD", 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(dim_));

  w.u8(kRegionTag);
  w.u64(regions_.size());
  for (const auto& [key, v] : regions_) {
    w.str(std::get<0>(key));
    w.f64(std::get<1>(key));
    w.f64(std::get<2>(key));
    w.f64(std::get<3>(key));
    w.f64(std::get<4>(key));
    w.vec(v);
  }
  w.u8(kGlobalTag);
  w.u64(globals_.size());
  for (const auto& [id, v] : globals_) {
    w.str(id);
    w.vec(v);
  }
  w.u8(kTextTag);
  w.u64(texts_.size());
  for (const auto& [key, v] : texts_) {
    w.str(key);
    w.vec(v);
  }
  if (!os) throw CacheError(CacheError::Kind::Io, "write failed for " + path.string());
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path,
                                    std::optional<int> expected_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CacheError(CacheError::Kind::MissingFile, "embedding cache not found: " + path.string());
  Reader r(is);

  std::string magic;
  std::uint32_t version = 0;
  std::uint32_t dim = 0;
  try {
    magic = r.bytes(4);
    version = r.u32();
    dim = r.u32();
  } catch (const CacheError&) {
    throw CacheError(CacheError::Kind::MalformedHeader, "truncated cache header: " + path.string());
  }
  if (magic != "HOVD") throw CacheError(CacheError::Kind::MalformedHeader, "bad magic in " + path.string());
  if (version != kFormatVersion) {
    throw CacheError(CacheError::Kind::MalformedHeader,
                     "unsupported cache version " + std::to_string(version));
  }
  if (dim == 0 || dim > (1u << 16)) {
    throw CacheError(CacheError::Kind::MalformedHeader, "cache dimension out of range");
  }
  if (expected_dim && static_cast<int>(dim) != *expected_dim) {
    throw CacheError(CacheError::Kind::DimensionMismatch,
                     "cache dimension " + std::to_string(dim) + " but expected " +
                         std::to_string(*expected_dim));
  }

  EmbeddingCache cache(static_cast<int>(dim));
  const int d = cache.dim_;
  for (std::uint8_t expected_tag : {kRegionTag, kGlobalTag, kTextTag}) {
    if (r.u8() != expected_tag) throw CacheError(CacheError::Kind::Truncated, "unexpected cache section tag");
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
      if (expected_tag == kRegionTag) {
        ImageId id = r.str();
        const double x1 = r.f64(), y1 = r.f64(), x2 = r.f64(), y2 = r.f64();
        cache.regions_.emplace(RegionKey{std::move(id), x1, y1, x2, y2}, r.vec(d));
      } else if (expected_tag == kGlobalTag) {
        ImageId id = r.str();
        cache.globals_.emplace(std::move(id), r.vec(d));
      } else {
        std::string key = r.str();
        cache.texts_.emplace(std::move(key), r.vec(d));
      }
    }
  }
  return cache;
}

}  // namespace hdovd
