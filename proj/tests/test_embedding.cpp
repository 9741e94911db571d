#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hdovd/embedding.hpp"
#include "hdovd/embedding_cache.hpp"
#include "hdovd/providers.hpp"
#include "oracles.hpp"

using namespace hdovd;

namespace {

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("hdovd_test_" + name);
}

}  // namespace

TEST_CASE("cosine examples and contract") {
  std::mt19937_64 rng(5);
  const Mat r = oracle::random_unit_rows(rng, 1, 7);
  const Vec a = r.row(0).transpose();
  CHECK(cosine(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine(v2(1, 0), v2(0, 1)) == 0.0);
  CHECK(cosine(v2(1, 0), v2(-1, 0)) == -1.0);
  CHECK(cosine(v2(3, 0), v2(1, 0)) == 1.0);
  CHECK_THROWS_AS(cosine(v2(1, 0), Vec::Ones(3)), std::invalid_argument);
  CHECK_THROWS_AS(cosine(v2(0, 0), v2(1, 0)), std::invalid_argument);
}

TEST_CASE("normalized vectors have unit length") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    const Mat m = oracle::random_matrix(rng, 1, 9) * 17.0;
    CHECK(normalized(m.row(0).transpose()).norm() == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(normalized(Vec::Zero(3)), std::invalid_argument);
  Vec bad = Vec::Ones(3);
  bad[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(normalized(bad), std::invalid_argument);
}

TEST_CASE("queue_pad examples") {
  MemoryQueue cold(8);
  std::vector<Vec> batch{v2(1, 0), v2(0, 1), v2(1, 1)};
  CHECK(queue_pad(batch, cold).size() == 3);
  CHECK(cold.size() == 3);

  MemoryQueue full(4);
  std::vector<Vec> first;
  for (int i = 0; i < 4; ++i) first.push_back(v2(i, 1));
  full.push(first);
  std::vector<Vec> second{v2(10, 1), v2(11, 1)};
  const auto negatives = queue_pad(second, full);
  REQUIRE(negatives.size() == 6);
  CHECK(negatives[0] == second[0]);
  CHECK(negatives[1] == second[1]);
  CHECK(negatives[2] == first[0]);  // queue order follows the batch
  REQUIRE(full.size() == 4);
  // The 4 newest of {0,1,2,3,10,11}.
  CHECK(full.entries()[0] == first[2]);
  CHECK(full.entries()[1] == first[3]);
  CHECK(full.entries()[2] == second[0]);
  CHECK(full.entries()[3] == second[1]);
}

TEST_CASE("queue stays within capacity and evicts first-in-first-out") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cap_d(0, 6), len_d(0, 5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t cap = static_cast<std::size_t>(cap_d(rng));
    MemoryQueue q(cap);
    std::vector<Vec> history;
    int next = 0;
    for (int op = 0; op < 20; ++op) {
      std::vector<Vec> batch;
      for (int k = len_d(rng); k > 0; --k) batch.push_back(v2(next++, 1));
      const std::size_t before = q.size();
      const auto neg = queue_pad(batch, q);
      CHECK(neg.size() == batch.size() + std::min(before, cap));
      for (std::size_t i = 0; i < batch.size(); ++i) CHECK(neg[i] == batch[i]);
      history.insert(history.end(), batch.begin(), batch.end());
      CHECK(q.size() <= cap);
      const std::size_t expect = std::min(cap, history.size());
      REQUIRE(q.size() == expect);
      for (std::size_t i = 0; i < expect; ++i) CHECK(q.entries()[i] == history[history.size() - expect + i]);
    }
  }
  CHECK(MemoryQueue(0).as_matrix(3).rows() == 0);
}

TEST_CASE("stub text encoder: aliases close, classes apart, deterministic") {
  const ClassCatalog catalog = default_catalog(8, 4);
  const StubTextEncoder text(11, 64, catalog);
  CHECK(cosine(text.text("cat"), text.text("kitten")) >= 0.9);
  CHECK(cosine(text.text("bus"), text.text("coach")) >= 0.9);
  for (int i = 0; i < 1000; ++i) CHECK(text.text("cat") == text.text("cat"));
  CHECK(text.text("  Cat ") == text.text("cat"));

  // Expectation over random class pairs across encoder seeds.
  const ClassCatalog wide = default_catalog(16, 12);
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(wide.size()) - 1);
  double sum = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const StubTextEncoder enc(static_cast<std::uint64_t>(t), 64, wide);
    int a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    sum += cosine(enc.text(wide[static_cast<std::size_t>(a)].name), enc.text(wide[static_cast<std::size_t>(b)].name));
  }
  CHECK(sum / 1000.0 <= 0.3);
}

TEST_CASE("stub vision encoder is deterministic and unit norm") {
  auto scenes = std::make_shared<SceneTruth>();
  (*scenes)["img"] = {{Box{0, 0, 20, 20}, 0}, {Box{30, 30, 60, 60}, 9}};
  const StubTextEncoder text(3, 32, default_catalog(8, 4));
  const StubVisionEncoder vision(4, text, scenes);
  const Box b{1, 1, 21, 19};
  const auto first = vision.region("img", b);
  REQUIRE(first);
  CHECK(first->norm() == doctest::Approx(1.0));
  for (int i = 0; i < 1000; ++i) CHECK(*vision.region("img", b) == *first);
  CHECK(*vision.global("img") == *vision.global("img"));
  // A tight box is closer to its object's class than to an unrelated class.
  CHECK(cosine(*first, text.class_vector(0)) > cosine(*first, text.class_vector(5)));
}

TEST_CASE("stub captioner mentions the covered object's noun") {
  auto scenes = std::make_shared<SceneTruth>();
  (*scenes)["img"] = {{Box{0, 0, 30, 30}, 1}};
  const ClassCatalog catalog = default_catalog(8, 4);
  const StubCaptioner cap(5, catalog, scenes, CaptionStubConfig{0.0, 0.0, 0.3});
  const std::string c = cap.caption("img", Box{0, 0, 30, 30});
  CHECK((c.find("car") != std::string::npos || c.find("automobile") != std::string::npos));
  CHECK(cap.caption("img", Box{0, 0, 30, 30}) == c);
}

TEST_CASE("cache round trips bit-exactly") {
  SUBCASE("empty") {
    const EmbeddingCache empty(5);
    const auto path = temp_path("empty.hovd");
    empty.save(path);
    const auto back = EmbeddingCache::load(path);
    CHECK(back == empty);
    CHECK(back.region_count() + back.global_count() + back.text_count() == 0);
  }
  SUBCASE("100 random entries") {
    std::mt19937_64 rng(9);
    EmbeddingCache cache(6);
    for (int i = 0; i < 100; ++i) {
      const Mat m = oracle::random_matrix(rng, 1, 6);
      const Vec v = m.row(0).transpose();
      switch (i % 3) {
        case 0: cache.put_region("im" + std::to_string(i), oracle::random_box(rng), v); break;
        case 1: cache.put_global("im" + std::to_string(i), v); break;
        default: cache.put_text("word " + std::to_string(i), v); break;
      }
    }
    const auto path = temp_path("random.hovd");
    cache.save(path);
    const auto back = EmbeddingCache::load(path, 6);
    CHECK(back == cache);
    // Re-saving the loaded cache yields the same bytes.
    const auto again = temp_path("random2.hovd");
    back.save(again);
    std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
}

TEST_CASE("cache stores unit vectors and reports absent keys") {
  EmbeddingCache cache(2);
  cache.put_text("Red  Car", v2(3, 4));
  const auto t = cache.text("red car");
  REQUIRE(t);
  CHECK((*t)[0] == doctest::Approx(0.6));
  CHECK_FALSE(cache.text("blue car").has_value());
  CHECK_FALSE(cache.region("x", Box{0, 0, 1, 1}).has_value());
  CHECK_FALSE(cache.global("x").has_value());
  CHECK_THROWS_AS(cache.put_text("bad", Vec::Ones(3)), CacheError);
}

TEST_CASE("cache load errors are distinct") {
  auto kind_of = [](const std::filesystem::path& p, std::optional<int> dim = std::nullopt) {
    try {
      (void)EmbeddingCache::load(p, dim);
    } catch (const CacheError& e) {
      return e.kind();
    }
    FAIL("load succeeded");
    return CacheError::Kind::Io;
  };
  CHECK(kind_of(temp_path("does_not_exist.hovd")) == CacheError::Kind::MissingFile);

  const auto junk = temp_path("junk.hovd");
  std::ofstream(junk) << "JUNKJUNKJUNKJUNK";
  CHECK(kind_of(junk) == CacheError::Kind::MalformedHeader);

  const auto good = temp_path("dim3.hovd");
  EmbeddingCache(3).save(good);
  CHECK(kind_of(good, 4) == CacheError::Kind::DimensionMismatch);
}
