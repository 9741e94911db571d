#include "hdovd/providers.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "hdovd/embedding_cache.hpp"
#include "hdovd/rng.hpp"

namespace hdovd {

ClassCatalog::ClassCatalog(std::vector<ClassSpec> classes) : classes_(std::move(classes)) {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (classes_[i].name == classes_[j].name) {
        throw std::invalid_argument("duplicate class name: " + classes_[i].name);
      }
    }
  }
}

std::vector<int> ClassCatalog::base_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (!classes_[i].novel) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> ClassCatalog::novel_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].novel) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::optional<int> ClassCatalog::find(std::string_view name) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].name == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::vector<std::string> ClassCatalog::nouns(int index) const {
  const ClassSpec& c = classes_.at(static_cast<std::size_t>(index));
  std::vector<std::string> out{c.name};
  out.insert(out.end(), c.aliases.begin(), c.aliases.end());
  return out;
}

namespace {

struct NamedClass {
  const char* name;
  const char* alias;
};

constexpr NamedClass kBaseNames[] = {
    {"person", "man"},    {"car", "automobile"}, {"horse", "pony"},     {"bear", "cub"},
    {"bottle", "flask"},  {"chair", "stool"},    {"bird", "sparrow"},   {"laptop", "notebook"},
    {"truck", "lorry"},   {"boat", "ship"},      {"sheep", "lamb"},     {"clock", "timepiece"},
    {"vase", "urn"},      {"bench", "pew"},      {"kite", "glider"},    {"oven", "stove"},
};
struct NamedNovel {
  const char* name;
  const char* alias;
  const char* parent;
};

constexpr NamedNovel kNovelNames[] = {
    {"bus", "coach", "car"},          {"cat", "kitten", "bear"},
    {"cup", "mug", "bottle"},         {"couch", "sofa", "chair"},
    {"dog", "puppy", "horse"},        {"elephant", "mammoth", "sheep"},
    {"umbrella", "parasol", "kite"},  {"keyboard", "keypad", "laptop"},
    {"cake", "pastry", "oven"},       {"sink", "basin", "vase"},
    {"knife", "blade", "clock"},      {"scissors", "shears", "bench"},
};

std::string synthetic_word(std::uint64_t n) {
  static constexpr const char* kSyllables[] = {"zor", "bat", "kel", "mup", "dra", "vin", "tos", "rek"};
  std::string s = "q";
  do {
    s += kSyllables[n % 8];
    n /= 8;
  } while (n > 0);
  return s;
}

}  // namespace

ClassCatalog default_catalog(int base_classes, int novel_classes) {
  if (base_classes < 2 || novel_classes < 1) {
    throw std::invalid_argument("world needs at least 2 base classes and 1 novel class");
  }
  std::vector<ClassSpec> classes;
  constexpr int kNamedBase = static_cast<int>(std::size(kBaseNames));
  constexpr int kNamedNovel = static_cast<int>(std::size(kNovelNames));
  for (int i = 0; i < base_classes; ++i) {
    ClassSpec c;
    if (i < kNamedBase) {
      c.name = kBaseNames[i].name;
      c.aliases = {kBaseNames[i].alias};
    } else {
      c.name = synthetic_word(static_cast<std::uint64_t>(i) * 2);
    }
    classes.push_back(std::move(c));
  }
  for (int i = 0; i < novel_classes; ++i) {
    ClassSpec c;
    c.novel = true;
    c.parent = i % base_classes;
    if (i < kNamedNovel) {
      c.name = kNovelNames[i].name;
      c.aliases = {kNovelNames[i].alias};
      for (int b = 0; b < base_classes; ++b) {
        if (classes[static_cast<std::size_t>(b)].name == kNovelNames[i].parent) c.parent = b;
      }
    } else {
      c.name = synthetic_word(static_cast<std::uint64_t>(i) * 2 + 1 + 1000);
    }
    classes.push_back(std::move(c));
  }
  return ClassCatalog(std::move(classes));
}

std::string box_key(const Box& b) {
  char buf[80];
  std::snprintf(buf, sizeof buf, "%016llx%016llx%016llx%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(b.x1)),
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(b.y1)),
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(b.x2)),
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(b.y2)));
  return buf;
}

// ---------------------------------------------------------------- text stub

StubTextEncoder::StubTextEncoder(std::uint64_t seed, int dim, ClassCatalog catalog,
                                 double affinity, double alias_noise)
    : seed_(seed), dim_(dim), catalog_(std::move(catalog)), alias_noise_(alias_noise) {
  if (dim < 2) throw std::invalid_argument("embedding dimension must be >= 2");
  class_vectors_.reserve(catalog_.size());
  for (std::size_t i = 0; i < catalog_.size(); ++i) {
    const ClassSpec& c = catalog_[i];
    Vec own = keyed_unit_vector(seed_, "class:" + c.name, dim_);
    if (c.parent >= 0 && static_cast<std::size_t>(c.parent) < i) {
      const Vec& parent = class_vectors_[static_cast<std::size_t>(c.parent)];
      own = normalized(affinity * parent + std::sqrt(1.0 - affinity * affinity) * own);
    }
    class_vectors_.push_back(std::move(own));
  }
}

Vec StubTextEncoder::word(std::string_view w) const {
  for (std::size_t i = 0; i < catalog_.size(); ++i) {
    const ClassSpec& c = catalog_[i];
    if (c.name == w) return class_vectors_[i];
    for (const auto& alias : c.aliases) {
      if (alias == w) {
        return normalized(class_vectors_[i] +
                          alias_noise_ * keyed_unit_vector(seed_, "alias:" + alias, dim_));
      }
    }
  }
  return keyed_unit_vector(seed_, std::string("word:").append(w), dim_);
}

Vec StubTextEncoder::text(std::string_view raw) const {
  const std::string key = normalize_text_key(raw);
  if (key.empty()) throw std::invalid_argument("cannot embed empty text");
  if (key.find(' ') == std::string::npos) return word(key);
  Vec sum = Vec::Zero(dim_);
  std::istringstream words(key);
  for (std::string w; words >> w;) sum += word(w);
  return normalized(sum);
}

// -------------------------------------------------------------- vision stub

StubVisionEncoder::StubVisionEncoder(std::uint64_t seed, const StubTextEncoder& text,
                                     std::shared_ptr<const SceneTruth> scenes,
                                     VisionStubConfig cfg)
    : seed_(seed), text_(text), scenes_(std::move(scenes)), cfg_(cfg) {}

Vec StubVisionEncoder::appearance(const ImageId& image, std::size_t index) const {
  const int cls = scenes_->at(image).at(index).class_index;
  return normalized(text_.class_vector(cls) + instance_offset(image, index));
}

Vec StubVisionEncoder::instance_offset(const ImageId& image, std::size_t index) const {
  return cfg_.instance_spread * keyed_unit_vector(seed_, "inst:" + image + "#" + std::to_string(index), dim());
}

Vec StubVisionEncoder::background(const ImageId& image) const {
  return keyed_unit_vector(seed_, "bg:" + image, dim());
}

std::optional<Vec> StubVisionEncoder::region(const ImageId& image, const Box& box) const {
  const Vec noise = keyed_unit_vector(seed_, "region:" + image + ":" + box_key(box), dim());
  auto it = scenes_ ? scenes_->find(image) : SceneTruth::const_iterator{};
  if (!scenes_ || it == scenes_->end()) return noise;
  Vec v = cfg_.background_weight * background(image) + cfg_.region_noise * noise;
  for (std::size_t i = 0; i < it->second.size(); ++i) {
    const double w = iou(box, it->second[i].box);
    if (w > 0.0) v += w * appearance(image, i);
  }
  return normalized(v);
}

std::optional<Vec> StubVisionEncoder::global(const ImageId& image) const {
  const Vec noise = keyed_unit_vector(seed_, "global:" + image, dim());
  auto it = scenes_ ? scenes_->find(image) : SceneTruth::const_iterator{};
  if (!scenes_ || it == scenes_->end()) return noise;
  Vec v = 0.5 * background(image) + 0.2 * noise;
  for (std::size_t i = 0; i < it->second.size(); ++i) v += appearance(image, i);
  return normalized(v);
}

// ------------------------------------------------------------- caption stub

StubCaptioner::StubCaptioner(std::uint64_t seed, ClassCatalog catalog,
                             std::shared_ptr<const SceneTruth> scenes, CaptionStubConfig cfg)
    : seed_(seed), catalog_(std::move(catalog)), scenes_(std::move(scenes)), cfg_(cfg) {}

namespace {

constexpr const char* kAdjectives[] = {"small", "large", "red", "old", "white", "black", "wooden", "bright"};
constexpr const char* kVerbs[] = {"sitting", "standing", "lying", "resting", "waiting", "parked"};
constexpr const char* kPreps[] = {"on", "in", "near", "beside", "under", "behind"};
constexpr const char* kScenery[] = {"grass", "street", "table", "floor", "room", "field",
                                    "road", "wall", "beach", "snow", "kitchen", "yard"};

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&words)[N]) {
  return words[rng.below(N)];
}

}  // namespace

std::string StubCaptioner::caption(const ImageId& image, const Box& box) const {
  Rng rng(hash_combine(seed_, fnv1a("caption:" + image + ":" + box_key(box))));

  int best = -1;
  double best_iou = cfg_.min_object_iou;
  if (scenes_) {
    if (auto it = scenes_->find(image); it != scenes_->end()) {
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        const double v = iou(box, it->second[i].box);
        if (v >= best_iou) {
          best_iou = v;
          best = static_cast<int>(i);
        }
      }
    }
  }

  std::string out;
  if (best < 0) {
    if (rng.bernoulli(0.5)) {
      out = std::string("a ") + pick(rng, kAdjectives) + " " + pick(rng, kScenery) + " " +
            pick(rng, kPreps) + " the " + pick(rng, kScenery);
    } else {
      out = std::string("an empty ") + pick(rng, kScenery);
    }
    return out;
  }

  const auto n_classes = static_cast<std::uint64_t>(catalog_.size());
  int cls = scenes_->at(image)[static_cast<std::size_t>(best)].class_index;
  if (n_classes > 1 && rng.bernoulli(cfg_.hallucination_rate)) {
    cls = static_cast<int>((static_cast<std::uint64_t>(cls) + 1 + rng.below(n_classes - 1)) % n_classes);
  }
  const auto nouns = catalog_.nouns(cls);
  const std::string& noun = nouns[rng.below(nouns.size())];

  switch (rng.below(3)) {
    case 0:
      out = std::string("a ") + pick(rng, kAdjectives) + " " + noun + " " + pick(rng, kVerbs) + " " +
            pick(rng, kPreps) + " the " + pick(rng, kScenery);
      break;
    case 1:
      out = "the " + noun + " " + pick(rng, kPreps) + " a " + pick(rng, kAdjectives) + " " +
            pick(rng, kScenery);
      break;
    default:
      out = "a " + noun + " " + pick(rng, kVerbs) + " " + pick(rng, kPreps) + " the " +
            pick(rng, kScenery);
      break;
  }
  if (n_classes > 1 && rng.bernoulli(cfg_.distractor_class_rate)) {
    const auto other = static_cast<int>((static_cast<std::uint64_t>(cls) + 1 + rng.below(n_classes - 1)) % n_classes);
    const auto other_nouns = catalog_.nouns(other);
    out += " next to a " + other_nouns[rng.below(other_nouns.size())];
  }
  return out;
}

// ------------------------------------------------------------ cache-backed

int CachedRegionEncoder::dim() const { return cache_.dim(); }

std::optional<Vec> CachedRegionEncoder::region(const ImageId& image, const Box& box) const {
  return cache_.region(image, box);
}

std::optional<Vec> CachedRegionEncoder::global(const ImageId& image) const {
  return cache_.global(image);
}

int CachedTextEncoder::dim() const { return cache_.dim(); }

Vec CachedTextEncoder::text(std::string_view text) const {
  if (auto v = cache_.text(text)) return *v;
  if (fallback_) return fallback_->text(text);
  throw std::out_of_range("text embedding not cached: " + std::string(text));
}

}  // namespace hdovd
