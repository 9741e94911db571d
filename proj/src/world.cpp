#include "hdovd/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "hdovd/rng.hpp"

namespace hdovd {

using nlohmann::json;

void WorldConfig::validate() const {
  if (base_classes < 2) throw std::invalid_argument("world needs at least 2 base classes");
  if (novel_classes < 1) throw std::invalid_argument("world needs at least 1 novel class");
  if (train_images < 1 || eval_images < 1) throw std::invalid_argument("world needs images in both splits");
  if (image_size < 16 || image_size % 8 != 0) {
    throw std::invalid_argument("image_size must be a multiple of 8 and at least 16");
  }
  if (min_object_size < 4 || max_object_size < min_object_size || max_object_size > image_size) {
    throw std::invalid_argument("invalid object size range");
  }
  if (density < 1.0 || max_objects < 1) throw std::invalid_argument("density must be >= 1");
  if (embed_dim < 2 || semantic_channels < 1) throw std::invalid_argument("invalid dimensions");
  if (novel_visual_gain < 0.0) throw std::invalid_argument("novel_visual_gain must be non-negative");
  if (distractors < 0 || proposal_jitter < 0.0) throw std::invalid_argument("invalid proposal settings");
}

namespace {

std::vector<SceneObject> sample_scene(const WorldConfig& cfg, int classes, Rng& rng) {
  const int wanted = std::min(1 + rng.poisson(cfg.density - 1.0), cfg.max_objects);
  std::vector<SceneObject> objects;
  for (int k = 0; k < wanted; ++k) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const int span = cfg.max_object_size - cfg.min_object_size + 1;
      const int w = cfg.min_object_size + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
      const int h = cfg.min_object_size + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
      const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.image_size - w + 1)));
      const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.image_size - h + 1)));
      const Box b{double(x), double(y), double(x + w), double(y + h)};
      const bool clear = std::none_of(objects.begin(), objects.end(), [&](const SceneObject& o) {
        return b.x1 < o.box.x2 && o.box.x1 < b.x2 && b.y1 < o.box.y2 && o.box.y1 < b.y2;
      });
      if (clear) {
        objects.push_back({b, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)))});
        break;
      }
    }
  }
  return objects;
}

std::string image_name(const char* split, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", split, i);
  return buf;
}

}  // namespace

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World w{cfg, default_catalog(cfg.base_classes, cfg.novel_classes), {}, {}, {}};
  const int classes = static_cast<int>(w.catalog.size());
  Rng rng(hash_combine(cfg.seed, fnv1a("scenes")));
  for (int i = 0; i < cfg.train_images; ++i) {
    w.train.push_back(image_name("train", i));
    w.scenes[w.train.back()] = sample_scene(cfg, classes, rng);
  }
  for (int i = 0; i < cfg.eval_images; ++i) {
    w.eval.push_back(image_name("eval", i));
    w.scenes[w.eval.back()] = sample_scene(cfg, classes, rng);
  }
  return w;
}

namespace {

json config_json(const WorldConfig& c) {
  return {{"seed", c.seed},
          {"base_classes", c.base_classes},
          {"novel_classes", c.novel_classes},
          {"train_images", c.train_images},
          {"eval_images", c.eval_images},
          {"image_size", c.image_size},
          {"density", c.density},
          {"max_objects", c.max_objects},
          {"min_object_size", c.min_object_size},
          {"max_object_size", c.max_object_size},
          {"embed_dim", c.embed_dim},
          {"semantic_channels", c.semantic_channels},
          {"render_noise", c.render_noise},
          {"background_gain", c.background_gain},
          {"class_affinity", c.class_affinity},
          {"novel_visual_gain", c.novel_visual_gain},
          {"proposal_jitter", c.proposal_jitter},
          {"distractors", c.distractors}};
}

WorldConfig config_from_json(const json& j) {
  WorldConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.base_classes = j.at("base_classes").get<int>();
  c.novel_classes = j.at("novel_classes").get<int>();
  c.train_images = j.at("train_images").get<int>();
  c.eval_images = j.at("eval_images").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.density = j.at("density").get<double>();
  c.max_objects = j.at("max_objects").get<int>();
  c.min_object_size = j.at("min_object_size").get<int>();
  c.max_object_size = j.at("max_object_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.semantic_channels = j.at("semantic_channels").get<int>();
  c.render_noise = j.at("render_noise").get<double>();
  c.background_gain = j.at("background_gain").get<double>();
  c.class_affinity = j.at("class_affinity").get<double>();
  c.novel_visual_gain = j.at("novel_visual_gain").get<double>();
  c.proposal_jitter = j.at("proposal_jitter").get<double>();
  c.distractors = j.at("distractors").get<int>();
  return c;
}

json split_json(const World& w, const std::vector<ImageId>& ids) {
  json out = json::array();
  for (const auto& id : ids) {
    json objs = json::array();
    for (const auto& o : w.scenes.at(id)) {
      objs.push_back({{"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}},
                      {"class", w.catalog[static_cast<std::size_t>(o.class_index)].name}});
    }
    out.push_back({{"id", id}, {"objects", objs}});
  }
  return out;
}

}  // namespace

void save_world(const World& world, const std::filesystem::path& path) {
  json classes = json::array();
  for (const auto& c : world.catalog.classes()) {
    classes.push_back({{"name", c.name}, {"novel", c.novel}, {"aliases", c.aliases}, {"parent", c.parent}});
  }
  const json doc{{"config", config_json(world.config)},
                 {"classes", classes},
                 {"train", split_json(world, world.train)},
                 {"eval", split_json(world, world.eval)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

World load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing world file: " + path.string() + " (run gen-world first)");
  const json doc = json::parse(in);
  World w;
  w.config = config_from_json(doc.at("config"));
  std::vector<ClassSpec> specs;
  for (const auto& c : doc.at("classes")) {
    specs.push_back({c.at("name").get<std::string>(), c.at("novel").get<bool>(),
                     c.at("aliases").get<std::vector<std::string>>(), c.at("parent").get<int>()});
  }
  w.catalog = ClassCatalog(std::move(specs));
  auto read_split = [&](const json& arr, std::vector<ImageId>& ids) {
    for (const auto& img : arr) {
      const auto id = img.at("id").get<std::string>();
      ids.push_back(id);
      auto& objs = w.scenes[id];
      for (const auto& o : img.at("objects")) {
        const auto b = o.at("box").get<std::vector<double>>();
        const auto cls = w.catalog.find(o.at("class").get<std::string>());
        if (b.size() != 4 || !cls) throw std::runtime_error("malformed object in " + path.string());
        objs.push_back({Box::checked(b[0], b[1], b[2], b[3]), *cls});
      }
    }
  };
  read_split(doc.at("train"), w.train);
  read_split(doc.at("eval"), w.eval);
  return w;
}

Stubs make_stubs(const World& world) {
  Stubs s;
  s.scenes = std::make_shared<const SceneTruth>(world.scenes);
  const std::uint64_t seed = world.config.seed;
  s.text = std::make_unique<StubTextEncoder>(hash_combine(seed, fnv1a("text")), world.config.embed_dim,
                                             world.catalog, world.config.class_affinity);
  s.vision = std::make_unique<StubVisionEncoder>(hash_combine(seed, fnv1a("vision")), *s.text, s.scenes);
  s.captioner = std::make_unique<StubCaptioner>(hash_combine(seed, fnv1a("caption")), world.catalog, s.scenes);
  return s;
}

int input_channels(const WorldConfig& cfg) { return cfg.semantic_channels + 5; }

Renderer::Renderer(const World& world, const StubVisionEncoder& vision)
    : world_(world), vision_(vision), mix_(world.config.semantic_channels, world.config.embed_dim) {
  Rng rng(hash_combine(world.config.seed, fnv1a("render-mix")));
  for (Eigen::Index i = 0; i < mix_.rows(); ++i) {
    for (Eigen::Index j = 0; j < mix_.cols(); ++j) mix_(i, j) = 0.25 * rng.normal();
  }
}

Vec Renderer::visual_appearance(const ImageId& image, std::size_t index) const {
  const ClassSpec& spec = world_.catalog[static_cast<std::size_t>(world_.scenes.at(image).at(index).class_index)];
  if (!spec.novel || spec.parent < 0 || world_.config.novel_visual_gain == 1.0) {
    return vision_.appearance(image, index);
  }
  const auto& text = vision_.text_encoder();
  const Vec anchor = world_.config.class_affinity * text.class_vector(spec.parent);
  const Vec cls = text.class_vector(*world_.catalog.find(spec.name));
  return normalized(normalized(anchor + world_.config.novel_visual_gain * (cls - anchor)) +
                    vision_.instance_offset(image, index));
}

FeaturePyramid Renderer::render(const ImageId& image) const {
  const WorldConfig& cfg = world_.config;
  const auto& objects = world_.scenes.at(image);
  const int cs = cfg.semantic_channels;
  const int size = cfg.image_size / 4;
  const double scale = cfg.image_size / 4.0;  // edge distances in feature-cell units
  std::vector<Vec> looks;
  for (std::size_t i = 0; i < objects.size(); ++i) looks.push_back(mix_ * visual_appearance(image, i));
  const Vec backdrop = cfg.background_gain * (mix_ * vision_.background(image));

  Rng rng(hash_combine(cfg.seed, fnv1a("pixels:" + image)));
  FeatureMap fine{size, size, Mat::Zero(size * size, input_channels(cfg))};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double cx = 4.0 * x + 2.0;
      const double cy = 4.0 * y + 2.0;
      auto row = fine.values.row(y * size + x);
      row.head(cs) = backdrop.transpose();
      for (std::size_t i = 0; i < objects.size(); ++i) {
        const Box& b = objects[i].box;
        if (cx >= b.x1 && cx < b.x2 && cy >= b.y1 && cy < b.y2) {
          row.head(cs) = looks[i].transpose();
          row(cs) = 1.0;
          row(cs + 1) = (cx - b.x1) / scale;
          row(cs + 2) = (cy - b.y1) / scale;
          row(cs + 3) = (b.x2 - cx) / scale;
          row(cs + 4) = (b.y2 - cy) / scale;
          break;
        }
      }
      for (int c = 0; c < cs; ++c) row(c) += cfg.render_noise * rng.normal();
    }
  }
  const int half = size / 2;
  FeatureMap coarse{half, half, Mat::Zero(half * half, fine.channels())};
  for (int y = 0; y < half; ++y) {
    for (int x = 0; x < half; ++x) {
      coarse.values.row(y * half + x) =
          0.25 * (fine.values.row(2 * y * size + 2 * x) + fine.values.row(2 * y * size + 2 * x + 1) +
                  fine.values.row((2 * y + 1) * size + 2 * x) + fine.values.row((2 * y + 1) * size + 2 * x + 1));
    }
  }
  return {std::move(fine), std::move(coarse)};
}

std::vector<Proposal> generate_proposals(const World& world, const ImageId& image) {
  const WorldConfig& cfg = world.config;
  const double limit = cfg.image_size;
  Rng rng(hash_combine(cfg.seed, fnv1a("proposals:" + image)));
  std::vector<Proposal> out;
  auto clamp = [&](double v) { return std::clamp(v, 0.0, limit); };
  for (const auto& o : world.scenes.at(image)) {
    const double sw = cfg.proposal_jitter * o.box.width();
    const double sh = cfg.proposal_jitter * o.box.height();
    double x1 = clamp(o.box.x1 + sw * rng.normal());
    double y1 = clamp(o.box.y1 + sh * rng.normal());
    double x2 = clamp(o.box.x2 + sw * rng.normal());
    double y2 = clamp(o.box.y2 + sh * rng.normal());
    if (x2 - x1 < 1.0 || y2 - y1 < 1.0) {
      x1 = o.box.x1, y1 = o.box.y1, x2 = o.box.x2, y2 = o.box.y2;
    }
    // Round to 1/64 pixel so boxes survive text round trips unchanged.
    auto q = [](double v) { return std::round(v * 64.0) / 64.0; };
    out.push_back({Box::checked(q(x1), q(y1), q(x2), q(y2)), 0.6 + 0.4 * rng.uniform(), image});
  }
  for (int k = 0; k < cfg.distractors; ++k) {
    const double w = 12.0 + std::floor(28.0 * rng.uniform());
    const double h = 12.0 + std::floor(28.0 * rng.uniform());
    const double x = std::floor((limit - w) * rng.uniform());
    const double y = std::floor((limit - h) * rng.uniform());
    out.push_back({Box::checked(x, y, x + w, y + h), 0.05 + 0.65 * rng.uniform(), image});
  }
  return out;
}

}  // namespace hdovd
