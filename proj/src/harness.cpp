#include "hdovd/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "hdovd/records.hpp"

namespace hdovd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* producer_of(const std::string& name) {
  if (name == artifact::kCache) return "extract-embeddings";
  if (name == artifact::kPseudoLabels || name == artifact::kPipelineReport) return "pseudo-label";
  if (name == artifact::kCheckpoint || name == artifact::kMetrics) return "train";
  if (name == artifact::kEval || name == artifact::kDetections) return "eval";
  return "gen-world";
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

std::map<ImageId, std::vector<Proposal>> proposals_by_image(const fs::path& dir) {
  std::map<ImageId, std::vector<Proposal>> out;
  for (auto& p : read_proposals(require_artifact(dir, artifact::kProposals))) out[p.image_id].push_back(p);
  return out;
}

std::map<ImageId, std::vector<GtRecord>> gt_by_image(const fs::path& path) {
  std::map<ImageId, std::vector<GtRecord>> out;
  for (auto& g : read_ground_truth(path)) out[g.image_id].push_back(g);
  return out;
}

EmbeddingCache load_cache(const fs::path& dir, int dim) {
  return EmbeddingCache::load(require_artifact(dir, artifact::kCache), dim);
}

Vec cached_text(const EmbeddingCache& cache, const std::string& text, const char* step) {
  auto v = cache.text(text);
  if (!v) throw std::runtime_error("no cached text embedding for '" + text + "' (rerun " + step + ")");
  return *v;
}

/// Class columns in classifier order: base classes, then novel classes.
std::vector<int> column_order(const ClassCatalog& catalog) {
  auto order = catalog.base_indices();
  for (int n : catalog.novel_indices()) order.push_back(n);
  return order;
}

}  // namespace

fs::path require_artifact(const fs::path& dir, const char* name) {
  fs::path p = dir / name;
  if (!fs::exists(p)) {
    throw std::runtime_error("missing artifact " + p.string() + " (run " + producer_of(name) + " first)");
  }
  return p;
}

void gen_world(const Settings& s, const fs::path& dir) {
  s.world.validate();
  fs::create_directories(dir);
  const World world = generate_world(s.world);
  save_world(world, dir / artifact::kWorld);

  json classes = json::array();
  for (const auto& c : world.catalog.classes()) {
    classes.push_back({{"name", c.name},
                       {"split", c.novel ? "novel" : "base"},
                       {"aliases", c.aliases},
                       {"parent", c.parent >= 0 ? json(world.catalog[static_cast<std::size_t>(c.parent)].name) : json()}});
  }
  write_json(dir / artifact::kCatalog, {{"classes", classes}});

  std::vector<GtRecord> train_gt, eval_gt;
  std::vector<Proposal> proposals;
  for (const auto& id : world.train) {
    for (const auto& o : world.scenes.at(id)) {
      const auto& cls = world.catalog[static_cast<std::size_t>(o.class_index)];
      if (!cls.novel) train_gt.push_back({id, o.box, cls.name, false});
    }
    auto props = generate_proposals(world, id);
    proposals.insert(proposals.end(), props.begin(), props.end());
  }
  for (const auto& id : world.eval) {
    for (const auto& o : world.scenes.at(id)) {
      const auto& cls = world.catalog[static_cast<std::size_t>(o.class_index)];
      eval_gt.push_back({id, o.box, cls.name, cls.novel});
    }
  }
  write_ground_truth(dir / artifact::kGtTrain, train_gt);
  write_ground_truth(dir / artifact::kGtEval, eval_gt);
  write_proposals(dir / artifact::kProposals, proposals);
}

EmbeddingCache extract_embeddings(const fs::path& dir) {
  const World world = load_world(require_artifact(dir, artifact::kWorld));
  const Stubs stubs = make_stubs(world);
  const auto props = proposals_by_image(dir);
  const auto gt = gt_by_image(require_artifact(dir, artifact::kGtTrain));
  EmbeddingCache cache(world.config.embed_dim);
  for (const auto& id : world.train) {
    if (auto it = props.find(id); it != props.end()) {
      for (const auto& p : it->second) cache.put_region(id, p.box, *stubs.vision->region(id, p.box));
    }
    if (auto it = gt.find(id); it != gt.end()) {
      for (const auto& g : it->second) cache.put_region(id, g.box, *stubs.vision->region(id, g.box));
    }
    cache.put_global(id, *stubs.vision->global(id));
  }
  for (const auto& c : world.catalog.classes()) cache.put_text(c.name, stubs.text->text(c.name));
  cache.save(dir / artifact::kCache);
  return cache;
}

PipelineReport pseudo_label(const Settings& s, const fs::path& dir) {
  const World world = load_world(require_artifact(dir, artifact::kWorld));
  const Stubs stubs = make_stubs(world);
  EmbeddingCache cache = load_cache(dir, world.config.embed_dim);

  PipelineInputs inputs;
  inputs.images = world.train;
  inputs.proposals = proposals_by_image(dir);
  for (const auto& [id, recs] : gt_by_image(require_artifact(dir, artifact::kGtTrain))) {
    for (const auto& r : recs) inputs.base_gt[id].push_back(r.box);
  }
  const CachedRegionEncoder regions(cache);
  PipelineResult result = run_pipeline(inputs, regions, *stubs.captioner, *stubs.text, s.pipeline);

  for (const auto& l : result.labels) cache.put_text(l.label, l.text_embedding);
  write_annotations(dir / artifact::kPseudoLabels, result.labels);
  const PipelineReport& r = result.report;
  write_json(dir / artifact::kPipelineReport,
             {{"images", r.images},
              {"proposals_in", r.proposals_in},
              {"proposals_considered", r.proposals_considered},
              {"discarded_overlap", r.discarded_overlap},
              {"pseudo_boxes", r.pseudo_boxes},
              {"captioned", r.captioned},
              {"labeled", r.labeled},
              {"no_noun", r.no_noun},
              {"skipped_missing_embedding", r.skipped_missing_embedding}});
  cache.save(dir / artifact::kCache);
  return r;
}

TrainingSet load_training_set(const Settings& s, const fs::path& dir) {
  const World world = load_world(require_artifact(dir, artifact::kWorld));
  const Stubs stubs = make_stubs(world);
  const EmbeddingCache cache = load_cache(dir, world.config.embed_dim);
  const auto props = proposals_by_image(dir);
  const auto gt = gt_by_image(require_artifact(dir, artifact::kGtTrain));
  const auto records = read_annotations(require_artifact(dir, artifact::kPseudoLabels));
  const Renderer renderer(world, *stubs.vision);

  TrainingSet data;
  std::map<int, int> base_column;
  const auto base = world.catalog.base_indices();
  data.base_text.resize(static_cast<Eigen::Index>(base.size()), world.config.embed_dim);
  for (std::size_t k = 0; k < base.size(); ++k) {
    const std::string& name = world.catalog[static_cast<std::size_t>(base[k])].name;
    data.base_names.push_back(name);
    data.base_text.row(static_cast<Eigen::Index>(k)) = cached_text(cache, name, "extract-embeddings").transpose();
    base_column[base[k]] = static_cast<int>(k);
  }

  // Label table in sorted order; labels naming a base class stay unlabeled.
  std::map<std::string, int> label_index;
  for (const auto& r : records) {
    if (!world.catalog.find(r.label) || world.catalog[static_cast<std::size_t>(*world.catalog.find(r.label))].novel) {
      label_index.emplace(r.label, 0);
    }
  }
  for (auto& [label, idx] : label_index) {
    idx = static_cast<int>(data.label_names.size());
    data.label_names.push_back(label);
    data.label_text.push_back(cached_text(cache, label, "pseudo-label"));
  }
  std::map<std::pair<ImageId, std::string>, const PseudoLabel*> by_box;
  for (const auto& r : records) by_box[{r.image_id, box_key(r.box)}] = &r;

  static const std::vector<Proposal> kNone;
  for (const auto& id : world.train) {
    TrainingImage img;
    img.id = id;
    img.pyramid = renderer.render(id);
    std::vector<Box> base_boxes;
    if (auto it = gt.find(id); it != gt.end()) {
      for (const auto& g : it->second) {
        const auto cls = world.catalog.find(g.class_name);
        if (!cls || !base_column.count(*cls)) throw std::runtime_error("train ground truth names a non-base class: " + g.class_name);
        img.base.push_back({g.box, base_column.at(*cls), 1.0, cache.region(id, g.box)});
        base_boxes.push_back(g.box);
      }
    }
    auto pit = props.find(id);
    const auto& mine = pit == props.end() ? kNone : pit->second;
    for (const Box& b : filter_pseudo_proposals(mine, base_boxes, s.pipeline.max_iou, s.pipeline.top_k)) {
      TrainingBox tb{b, -1, 1.0, cache.region(id, b)};
      if (auto lit = by_box.find({id, box_key(b)}); lit != by_box.end()) {
        if (auto li = label_index.find(lit->second->label); li != label_index.end()) tb.label = li->second;
        tb.weight = lit->second->weight;
      }
      img.pseudo.push_back(std::move(tb));
    }
    img.clip_global = cache.global(id);
    data.images.push_back(std::move(img));
  }
  return data;
}

TrainResult train_model(const Settings& s, const TrainingSet& data, std::ostream* metrics) {
  s.validate();
  return train(data, s.detector_config(), s.train, s.distill, metrics);
}

TrainResult run_train(const Settings& s, const fs::path& dir) {
  const TrainingSet data = load_training_set(s, dir);
  std::ofstream metrics(dir / artifact::kMetrics);
  if (!metrics) throw std::runtime_error("cannot write " + (dir / artifact::kMetrics).string());
  TrainResult r = train_model(s, data, &metrics);
  r.detector.save(dir / artifact::kCheckpoint);
  return r;
}

EvalData load_eval_data(const fs::path& dir) {
  const World world = load_world(require_artifact(dir, artifact::kWorld));
  const Stubs stubs = make_stubs(world);
  const EmbeddingCache cache = load_cache(dir, world.config.embed_dim);
  const Renderer renderer(world, *stubs.vision);

  EvalData data;
  data.classifier = Classifier(world.config.embed_dim);
  std::map<std::string, int> column;
  for (int c : column_order(world.catalog)) {
    const auto& spec = world.catalog[static_cast<std::size_t>(c)];
    column[spec.name] = data.classifier.size();
    data.classifier.add(spec.name, cached_text(cache, spec.name, "extract-embeddings"), !spec.novel);
  }
  for (const auto& g : read_ground_truth(require_artifact(dir, artifact::kGtEval))) {
    auto it = column.find(g.class_name);
    if (it == column.end()) throw std::runtime_error("eval ground truth names an unknown class: " + g.class_name);
    data.ground_truth.push_back({g.image_id, g.box, it->second, g.novel});
  }
  for (const auto& id : world.eval) {
    data.images.push_back(id);
    data.pyramids.push_back(renderer.render(id));
  }
  return data;
}

EvalReport evaluate_model(const Detector& det, const EvalData& data, const Settings& s, const EnsembleConfig& ens,
                          std::vector<ImagePrediction>* predictions) {
  std::vector<ImagePrediction> preds;
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    preds.push_back(predict(det, data.images[i], data.pyramids[i], data.classifier, s.distill, ens, s.top_n));
  }
  EvalReport r = evaluate_predictions(preds, data.ground_truth, data.classifier, s.eval_iou);
  if (predictions) *predictions = std::move(preds);
  return r;
}

std::vector<EvalReport> run_eval(const Settings& s, const fs::path& dir, const std::vector<EnsembleConfig>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("run_eval needs at least one exponent pair");
  const Detector det = Detector::load(require_artifact(dir, artifact::kCheckpoint));
  const EvalData data = load_eval_data(dir);
  std::vector<EvalReport> reports;
  json runs = json::array();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    std::vector<ImagePrediction> preds;
    EvalReport r = evaluate_model(det, data, s, pairs[k], k == 0 ? &preds : nullptr);
    if (k == 0) {
      std::vector<DetectionRecord> recs;
      for (const auto& p : preds) {
        for (const auto& d : p.detections) {
          recs.push_back({p.image, d.box, data.classifier.names()[static_cast<std::size_t>(d.class_index)],
                          std::exp(d.score)});
        }
      }
      write_detections(dir / artifact::kDetections, recs);
    }
    json classes = json::array();
    for (const auto& c : r.classes) {
      classes.push_back({{"name", c.name}, {"novel", c.novel}, {"gt", c.gt_count}, {"ap", c.ap ? json(*c.ap) : json()}});
    }
    const auto& e = r.errors;
    runs.push_back({{"beta_base", pairs[k].beta_base},
                    {"beta_novel", pairs[k].beta_novel},
                    {"base_map", r.base_map},
                    {"novel_map", r.novel_map},
                    {"all_map", r.all_map},
                    {"classes", classes},
                    {"errors",
                     {{"novel_objects", e.novel_objects},
                      {"recall_count", e.recall_count},
                      {"selected_count", e.selected_count},
                      {"misclassified_as_base", e.misclassified_as_base},
                      {"wrong_novel", e.wrong_novel},
                      {"correct_novel", e.correct_novel}}}});
    reports.push_back(std::move(r));
  }
  write_json(dir / artifact::kEval, {{"iou", s.eval_iou}, {"top_n", s.top_n}, {"runs", runs}});
  return reports;
}

void write_report(const fs::path& metrics, std::ostream& csv, const std::optional<fs::path>& svg) {
  std::ifstream in(metrics);
  if (!in) throw std::runtime_error("cannot read metrics log " + metrics.string() + " (run train first)");
  static const char* kSeries[] = {"cls", "box", "ckd_ins", "rkd_ins", "ckd_img", "total"};
  std::vector<std::int64_t> steps;
  std::vector<std::array<double, 6>> rows;
  std::string line;
  std::size_t lineno = 0;
  csv << "step,epoch,cls,box,ckd_ins,rkd_ins,ckd_img,total\n";
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(metrics.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    std::array<double, 6> v{};
    for (const auto& l : j.at("layers")) {
      v[0] += l.at("cls").get<double>();
      v[1] += l.at("box").get<double>();
      v[2] += l.at("ckd_ins").get<double>();
      v[3] += l.at("rkd_ins").get<double>();
    }
    v[4] = j.at("ckd_img").get<double>();
    v[5] = j.at("total").get<double>();
    steps.push_back(j.at("step").get<std::int64_t>());
    rows.push_back(v);
    csv << steps.back() << ',' << j.at("epoch").get<int>();
    for (double x : v) csv << ',' << format_real(x);
    csv << '\n';
  }
  if (!svg) return;

  constexpr double W = 720, H = 400, left = 60, right = 130, top = 20, bottom = 40;
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#222222"};
  double ymax = 0.0;
  for (const auto& r : rows) ymax = std::max(ymax, *std::max_element(r.begin(), r.end()));
  if (ymax <= 0.0) ymax = 1.0;
  const double xmax = steps.empty() ? 1.0 : std::max<double>(1.0, static_cast<double>(steps.back()));
  std::ofstream out(*svg);
  if (!out) throw std::runtime_error("cannot write " + svg->string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << left << "\" y=\"" << H - 10 << "\" font-size=\"12\">step 0.." << xmax << "</text>\n"
      << "<text x=\"5\" y=\"" << top + 10 << "\" font-size=\"12\">" << format_real(ymax) << "</text>\n";
  for (std::size_t s = 0; s < 6; ++s) {
    out << "<polyline fill=\"none\" stroke=\"" << kColors[s] << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double x = left + (W - left - right) * static_cast<double>(steps[i]) / xmax;
      const double y = H - bottom - (H - top - bottom) * rows[i][s] / ymax;
      out << x << ',' << y << ' ';
    }
    out << "\"/>\n<text x=\"" << W - right + 10 << "\" y=\"" << top + 20 + 18 * s << "\" font-size=\"12\" fill=\""
        << kColors[s] << "\">" << kSeries[s] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace hdovd
