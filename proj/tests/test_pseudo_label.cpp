#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hdovd/embedding_cache.hpp"
#include "hdovd/pseudo_label.hpp"
#include "hdovd/records.hpp"
#include "hdovd/world.hpp"
#include "oracles.hpp"

using namespace hdovd;

namespace {

/// Text encoder over a fixed word table, for tie and oracle tests.
class TableText final : public TextEncoder {
 public:
  explicit TableText(std::map<std::string, Vec> table) : table_(std::move(table)) {}
  int dim() const override { return static_cast<int>(table_.begin()->second.size()); }
  Vec text(std::string_view t) const override { return table_.at(std::string(t)); }

 private:
  std::map<std::string, Vec> table_;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

PipelineInputs world_inputs(const World& w) {
  PipelineInputs in;
  in.images = w.train;
  for (const auto& id : w.train) {
    in.proposals[id] = generate_proposals(w, id);
    for (const auto& o : w.scenes.at(id)) {
      if (!w.catalog[static_cast<std::size_t>(o.class_index)].novel) in.base_gt[id].push_back(o.box);
    }
  }
  return in;
}

}  // namespace

TEST_CASE("noun phrase extraction matches the golden file") {
  std::ifstream in(std::filesystem::path(HDOVD_TEST_DATA) / "noun_phrases.tsv");
  REQUIRE(in);
  int rows = 0;
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    std::vector<std::string> expected;
    std::istringstream words(line.substr(tab + 1));
    for (std::string w; words >> w;) expected.push_back(w);
    CHECK_MESSAGE(extract_noun_phrases(line.substr(0, tab)) == expected, line);
    ++rows;
  }
  CHECK(rows >= 10);
}

TEST_CASE("noun phrase edge cases") {
  CHECK(extract_noun_phrases("").empty());
  CHECK(extract_noun_phrases("running quickly").empty());
  CHECK(extract_noun_phrases("a red fire hydrant on the street") == std::vector<std::string>{"hydrant", "street"});
  CHECK(extract_noun_phrases("a cat and a cat") == std::vector<std::string>{"cat"});
  CHECK(extract_noun_phrases("A  CAT!") == std::vector<std::string>{"cat"});
}

TEST_CASE("select_pseudo_label examples") {
  std::mt19937_64 rng(21);
  const Mat m = oracle::random_unit_rows(rng, 3, 8);
  const Vec region = m.row(0).transpose();
  const TableText text({{"alpha", m.row(1).transpose()}, {"beta", m.row(1).transpose()}, {"gamma", m.row(2).transpose()}});

  const std::vector<std::string> one{"gamma"};
  const auto single = select_pseudo_label(one, region, text);
  REQUIRE(single);
  CHECK(single->label == "gamma");
  CHECK(single->raw_score == doctest::Approx(m.row(0).dot(m.row(2))));

  const std::vector<std::string> tied{"beta", "alpha"};
  CHECK(select_pseudo_label(tied, region, text)->label == "beta");

  CHECK_FALSE(select_pseudo_label(std::vector<std::string>{}, region, text).has_value());
}

TEST_CASE("select_pseudo_label equals the exhaustive argmax") {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 100; ++t) {
    const Mat m = oracle::random_unit_rows(rng, 11, 6);
    std::map<std::string, Vec> table;
    std::vector<std::string> names;
    for (int i = 1; i <= 10; ++i) {
      names.push_back("w" + std::to_string(i));
      table[names.back()] = m.row(i).transpose();
    }
    const TableText text(table);
    int best = 0;
    for (int i = 1; i < 10; ++i) {
      if (oracle::cos_rows(m, 0, m, i + 1) > oracle::cos_rows(m, 0, m, best + 1)) best = i;
    }
    const auto got = select_pseudo_label(names, m.row(0).transpose(), text);
    REQUIRE(got);
    CHECK(got->label == names[static_cast<std::size_t>(best)]);
  }
}

TEST_CASE("standardize_weights examples") {
  std::vector<PseudoLabel> one(1);
  one[0].raw_score = 0.37;
  standardize_weights(one);
  CHECK(one[0].weight == 0.5);

  std::vector<PseudoLabel> two(2);
  two[0].raw_score = -1.0;
  two[1].raw_score = 1.0;
  standardize_weights(two);
  CHECK(two[0].weight == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  CHECK(two[1].weight == doctest::Approx(0.7310585786300049).epsilon(1e-12));

  std::vector<PseudoLabel> flat(3);
  for (auto& r : flat) r.raw_score = 0.2;
  standardize_weights(flat);
  for (const auto& r : flat) CHECK(r.weight == 0.5);
}

TEST_CASE("standardized weights are affine invariant and strictly inside (0, 1)") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1, 1), a_d(0.1, 5), b_d(-3, 3);
  for (int t = 0; t < 100; ++t) {
    std::vector<PseudoLabel> base(12), shifted(12);
    const double a = a_d(rng), b = b_d(rng);
    for (int i = 0; i < 12; ++i) {
      base[static_cast<std::size_t>(i)].raw_score = u(rng);
      shifted[static_cast<std::size_t>(i)].raw_score = a * base[static_cast<std::size_t>(i)].raw_score + b;
    }
    standardize_weights(base);
    standardize_weights(shifted);
    for (int i = 0; i < 12; ++i) {
      CHECK(std::abs(base[static_cast<std::size_t>(i)].weight - shifted[static_cast<std::size_t>(i)].weight) <= 1e-12);
      CHECK(base[static_cast<std::size_t>(i)].weight > 0.0);
      CHECK(base[static_cast<std::size_t>(i)].weight < 1.0);
    }
  }
}

TEST_CASE("pipeline with zero proposals emits nothing") {
  const ClassCatalog catalog = default_catalog(8, 4);
  const StubTextEncoder text(1, 16, catalog);
  auto scenes = std::make_shared<SceneTruth>();
  const StubVisionEncoder vision(2, text, scenes);
  const StubCaptioner cap(3, catalog, scenes);
  PipelineInputs in;
  in.images = {"a", "b"};
  const auto r = run_pipeline(in, vision, cap, text, {});
  CHECK(r.labels.empty());
  CHECK(r.report.pseudo_boxes == 0);
  CHECK(r.report.labeled == 0);
  CHECK(r.report.proposals_in == 0);
}

TEST_CASE("pipeline counts boxes without a teacher embedding") {
  const ClassCatalog catalog = default_catalog(8, 4);
  const StubTextEncoder text(1, 16, catalog);
  const EmbeddingCache empty(16);
  const CachedRegionEncoder regions(empty);
  auto scenes = std::make_shared<SceneTruth>();
  const StubCaptioner cap(3, catalog, scenes);
  PipelineInputs in;
  in.images = {"a"};
  in.proposals["a"] = {{Box{0, 0, 10, 10}, 0.9, "a"}, {Box{20, 20, 30, 30}, 0.8, "a"}};
  const auto r = run_pipeline(in, regions, cap, text, {});
  CHECK(r.labels.empty());
  CHECK(r.report.skipped_missing_embedding == 2);
}

TEST_CASE("pipeline on a synthetic world labels covered novel objects correctly") {
  WorldConfig cfg;
  cfg.train_images = 50;
  cfg.eval_images = 1;
  const World w = generate_world(cfg);
  const Stubs stubs = make_stubs(w);
  const auto in = world_inputs(w);
  const auto r = run_pipeline(in, *stubs.vision, *stubs.captioner, *stubs.text, {});

  std::map<ImageId, int> per_image;
  int covering = 0, correct = 0;
  for (const auto& l : r.labels) {
    ++per_image[l.image_id];
    CHECK(l.weight > 0.0);
    CHECK(l.weight < 1.0);
    for (const auto& o : w.scenes.at(l.image_id)) {
      const auto& spec = w.catalog[static_cast<std::size_t>(o.class_index)];
      if (!spec.novel || iou(l.box, o.box) < 0.5) continue;
      ++covering;
      const auto nouns = w.catalog.nouns(o.class_index);
      if (std::find(nouns.begin(), nouns.end(), l.label) != nouns.end()) ++correct;
    }
  }
  for (const auto& [id, n] : per_image) CHECK(n <= 5);
  REQUIRE(covering >= 20);
  MESSAGE("novel-covering pseudo boxes: ", covering, ", correctly named: ", correct);
  CHECK(static_cast<double>(correct) >= 0.9 * covering);
}

TEST_CASE("pipeline is idempotent down to the annotation bytes") {
  WorldConfig cfg;
  cfg.train_images = 20;
  cfg.eval_images = 1;
  const World w = generate_world(cfg);
  const Stubs stubs = make_stubs(w);
  const auto in = world_inputs(w);
  const auto dir = std::filesystem::temp_directory_path();
  const auto a = dir / "hdovd_test_ann_a.tsv";
  const auto b = dir / "hdovd_test_ann_b.tsv";
  write_annotations(a, run_pipeline(in, *stubs.vision, *stubs.captioner, *stubs.text, {}).labels);
  write_annotations(b, run_pipeline(in, *stubs.vision, *stubs.captioner, *stubs.text, {}).labels);
  CHECK(slurp(a) == slurp(b));
  CHECK_FALSE(slurp(a).empty());
}

TEST_CASE("raw caption mode labels with the whole caption") {
  WorldConfig cfg;
  cfg.train_images = 5;
  cfg.eval_images = 1;
  const World w = generate_world(cfg);
  const Stubs stubs = make_stubs(w);
  PipelineConfig pc;
  pc.label_mode = LabelMode::RawCaption;
  const auto r = run_pipeline(world_inputs(w), *stubs.vision, *stubs.captioner, *stubs.text, pc);
  REQUIRE_FALSE(r.labels.empty());
  for (const auto& l : r.labels) CHECK(l.label.find(' ') != std::string::npos);
}
