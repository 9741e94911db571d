#include "hdovd/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hdovd/records.hpp"

namespace hdovd {

DetectorConfig Settings::detector_config() const {
  DetectorConfig d = detector;
  d.input_channels = input_channels(world);
  d.dim = world.embed_dim;
  d.layers = distill.layers;
  d.image_size = world.image_size;
  return d;
}

void Settings::validate() const {
  world.validate();
  distill.validate();
  ensemble.validate();
  train.validate();
  detector_config().validate();
  if (pipeline.max_iou < 0.0 || pipeline.max_iou > 1.0) throw std::invalid_argument("pipeline.max_iou must lie in [0, 1]");
  if (top_n < 1) throw std::invalid_argument("ensemble.top_n must be at least 1");
  if (eval_iou <= 0.0 || eval_iou > 1.0) throw std::invalid_argument("ensemble.eval_iou must lie in (0, 1]");
}

namespace {

struct Binding {
  std::string section;
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string to_text(double v) { return format_real(v); }
std::string to_text(int v) { return std::to_string(v); }
std::string to_text(std::uint64_t v) { return std::to_string(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(const std::string& v) { return v; }

void from_text(const std::string& s, double& v) { v = parse_real(s); }
void from_text(const std::string& s, int& v) {
  std::size_t used = 0;
  v = std::stoi(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
}
void from_text(const std::string& s, std::uint64_t& v) {
  std::size_t used = 0;
  if (!s.empty() && s[0] == '-') throw std::invalid_argument("must be non-negative");
  v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
}
void from_text(const std::string& s, bool& v) {
  if (s == "true" || s == "1" || s == "yes") v = true;
  else if (s == "false" || s == "0" || s == "no") v = false;
  else throw std::invalid_argument("expected true or false");
}
void from_text(const std::string& s, std::string& v) { v = s; }

template <typename T>
Binding field_binding(const std::string& section, const std::string& key, T& field) {
  return {section, key, [&field](const std::string& s) { from_text(s, field); }, [&field] { return to_text(field); }};
}

Binding bind_size(const std::string& section, const std::string& key, std::size_t& field) {
  return {section, key,
          [&field](const std::string& s) {
            std::uint64_t v = 0;
            from_text(s, v);
            field = static_cast<std::size_t>(v);
          },
          [&field] { return std::to_string(field); }};
}

std::vector<Binding> bindings(Settings& s) {
  auto& w = s.world;
  auto& p = s.pipeline;
  auto& d = s.distill;
  auto& t = s.train;
  auto& det = s.detector;
  return {
      field_binding("world", "seed", w.seed),
      field_binding("world", "base_classes", w.base_classes),
      field_binding("world", "novel_classes", w.novel_classes),
      field_binding("world", "train_images", w.train_images),
      field_binding("world", "eval_images", w.eval_images),
      field_binding("world", "image_size", w.image_size),
      field_binding("world", "density", w.density),
      field_binding("world", "max_objects", w.max_objects),
      field_binding("world", "min_object_size", w.min_object_size),
      field_binding("world", "max_object_size", w.max_object_size),
      field_binding("world", "embed_dim", w.embed_dim),
      field_binding("world", "semantic_channels", w.semantic_channels),
      field_binding("world", "render_noise", w.render_noise),
      field_binding("world", "background_gain", w.background_gain),
      field_binding("world", "class_affinity", w.class_affinity),
      field_binding("world", "novel_visual_gain", w.novel_visual_gain),
      field_binding("world", "proposal_jitter", w.proposal_jitter),
      field_binding("world", "distractors", w.distractors),
      bind_size("pipeline", "top_k", p.top_k),
      field_binding("pipeline", "max_iou", p.max_iou),
      {"pipeline", "label_mode",
       [&p](const std::string& v) {
         if (v == "nouns") p.label_mode = LabelMode::Nouns;
         else if (v == "raw") p.label_mode = LabelMode::RawCaption;
         else throw std::invalid_argument("expected nouns or raw");
       },
       [&p] { return std::string(p.label_mode == LabelMode::Nouns ? "nouns" : "raw"); }},
      field_binding("distill", "tau_ckd", d.tau_ckd),
      field_binding("distill", "tau_rkd", d.tau_rkd),
      field_binding("distill", "tau_cls", d.tau_cls),
      field_binding("distill", "alpha_ckd", d.alpha_ckd),
      field_binding("distill", "alpha_rkd", d.alpha_rkd),
      field_binding("distill", "alpha_img", d.alpha_img),
      field_binding("distill", "focal_gamma", d.focal_gamma),
      field_binding("distill", "focal_alpha", d.focal_alpha),
      field_binding("distill", "layers", d.layers),
      bind_size("distill", "instance_queue", d.instance_queue),
      bind_size("distill", "image_queue", d.image_queue),
      field_binding("ensemble", "beta_base", s.ensemble.beta_base),
      field_binding("ensemble", "beta_novel", s.ensemble.beta_novel),
      field_binding("ensemble", "top_n", s.top_n),
      field_binding("ensemble", "eval_iou", s.eval_iou),
      field_binding("train", "seed", t.seed),
      field_binding("train", "epochs", t.epochs),
      field_binding("train", "batch_size", t.batch_size),
      field_binding("train", "max_steps", t.max_steps),
      field_binding("train", "learning_rate", t.learning_rate),
      field_binding("train", "grad_clip", t.grad_clip),
      field_binding("train", "optimizer", t.optimizer),
      field_binding("train", "weight_decay", t.weight_decay),
      field_binding("train", "pseudo_boxes", t.pseudo_boxes),
      field_binding("train", "class_wise", t.class_wise),
      field_binding("train", "weighting", t.weighting),
      {"train", "distill_targets", [&t](const std::string& v) { t.distill_targets = parse_distill_targets(v); },
       [&t] { return to_string(t.distill_targets); }},
      field_binding("train", "cost_cls", t.cost.cls),
      field_binding("train", "cost_l1", t.cost.l1),
      field_binding("train", "cost_giou", t.cost.giou),
      field_binding("train", "box_l1", t.box_l1),
      field_binding("train", "box_giou", t.box_giou),
      field_binding("detector", "channels", det.channels),
      field_binding("detector", "hidden", det.hidden),
      field_binding("detector", "grid_cols", det.grid_cols),
      field_binding("detector", "grid_rows", det.grid_rows),
      field_binding("detector", "box_bias", det.box_bias),
      {"detector", "projection", [&det](const std::string& v) { det.projection = parse_projection_mode(v); },
       [&det] { return to_string(det.projection); }},
  };
}

}  // namespace

Settings parse_settings(const std::string& text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::runtime_error(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  Settings s;
  auto binds = bindings(s);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw std::runtime_error(origin + ": key '" + section + "' must be inside a section");
    }
    for (const auto& [key, value] : body) {
      auto it = std::find_if(binds.begin(), binds.end(),
                             [&](const Binding& b) { return b.section == section && b.key == key; });
      if (it == binds.end()) throw std::runtime_error(origin + ": unknown setting [" + section + "] " + key);
      try {
        it->set(value.data());
      } catch (const std::exception& e) {
        throw std::runtime_error(origin + ": bad value '" + value.data() + "' for [" + section + "] " + key +
                                 ": " + e.what());
      }
    }
  }
  s.validate();
  return s;
}

Settings load_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_settings(buf.str(), path.string());
}

std::string format_settings(const Settings& s) {
  Settings copy = s;
  std::ostringstream out;
  std::string section;
  for (const auto& b : bindings(copy)) {
    if (b.section != section) {
      if (!section.empty()) out << '\n';
      section = b.section;
      out << '[' << section << "]\n";
    }
    out << b.key << " = " << b.get() << '\n';
  }
  return out.str();
}

}  // namespace hdovd
