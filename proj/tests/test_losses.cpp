#include <doctest.h>

#include <random>

#include "hdovd/losses.hpp"
#include "oracles.hpp"

using namespace hdovd;

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kFdTolerance = 1e-4;

/// Textbook sigmoid focal loss on logits with one-hot targets, mean over rows.
double plain_focal(const Mat& logits, const std::vector<int>& target, double gamma, double alpha) {
  double total = 0.0;
  for (int i = 0; i < logits.rows(); ++i) {
    for (int j = 0; j < logits.cols(); ++j) {
      const double y = target[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
      const double x = logits(i, j);
      const double p = 1.0 / (1.0 + std::exp(-x));
      // Binary cross-entropy with logits, in its overflow-free form.
      const double ce = std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
      const double p_t = p * y + (1 - p) * (1 - y);
      const double a_t = alpha * y + (1 - alpha) * (1 - y);
      total += a_t * ce * std::pow(1 - p_t, gamma);
    }
  }
  return total / static_cast<double>(logits.rows());
}

FeatureMap constant_map(int h, int w, int c, double v) { return {h, w, Mat::Constant(h * w, c, v)}; }

}  // namespace

// ------------------------------------------------------------------ CKD

TEST_CASE("ckd_instance closed forms") {
  Mat e(1, 3);
  e << 1, 0, 0;
  const double pos_only = ckd_instance(e, e, Mat(0, 3), 20.0).value;
  CHECK(std::abs(pos_only - std::log1p(std::exp(-20.0))) <= 1e-12);
  CHECK(pos_only == doctest::Approx(2.061e-9).epsilon(1e-3));

  const double with_antipodal = ckd_instance(e, e, -e, 20.0).value;
  CHECK(std::abs(with_antipodal - 2.0 * std::log1p(std::exp(-20.0))) <= 1e-12);
  CHECK(with_antipodal == doctest::Approx(4.12e-9).epsilon(1e-3));

  CHECK(ckd_instance(Mat(0, 3), Mat(0, 3), Mat(0, 3), 20.0).value == 0.0);
  CHECK_THROWS_AS(ckd_instance(e, Mat::Ones(1, 4), Mat(0, 3), 20.0), std::invalid_argument);
}

TEST_CASE("ckd_instance matches the loop oracle") {
  std::mt19937_64 rng(41);
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + t % 4, p = t % 3, d = 2 + t % 7;
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat e = oracle::random_unit_rows(rng, n, d);
    const Mat x = oracle::random_unit_rows(rng, p, d);
    CHECK(ckd_instance(q, e, x, 20.0).value == doctest::Approx(oracle::ckd_instance(q, e, x, 20.0)).epsilon(1e-12));
  }
}

TEST_CASE("ckd_instance falls as a positive pair aligns and never falls with more negatives") {
  std::mt19937_64 rng(42);
  // Axis-aligned teachers and a path from an orthogonal direction toward e0:
  // only the positive cosine of row 0 changes along it.
  const Mat e = Mat::Identity(3, 6);
  Vec away = Vec::Zero(6);
  away[5] = 1.0;
  for (int t = 0; t < 50; ++t) {
    Mat q = oracle::random_matrix(rng, 3, 6);
    double previous = std::numeric_limits<double>::infinity();
    for (double s = 0.0; s <= 1.0; s += 0.125) {
      q.row(0) = ((1 - s) * away + s * e.row(0).transpose()).transpose();
      const double l = ckd_instance(q, e, Mat(0, 6), 20.0).value;
      CHECK(l < previous);
      previous = l;
    }
    const Mat extra = oracle::random_unit_rows(rng, 4, 6);
    double last = ckd_instance(q, e, Mat(0, 6), 20.0).value;
    for (int k = 1; k <= 4; ++k) {
      const double now = ckd_instance(q, e, extra.topRows(k), 20.0).value;
      CHECK(now >= last);
      last = now;
    }
  }
}

TEST_CASE("ckd_instance gradient matches finite differences") {
  std::mt19937_64 rng(43);
  for (int t = 0; t < 20; ++t) {
    const int n = 1 + t % 4, p = t % 3, d = 2 + t % 7;
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat e = oracle::random_unit_rows(rng, n, d);
    const Mat x = oracle::random_unit_rows(rng, p, d);
    const Mat numeric = oracle::numeric_gradient([&](const Mat& m) { return ckd_instance(m, e, x, 20.0).value; }, q, kFdStep);
    CHECK(oracle::relative_error(ckd_instance(q, e, x, 20.0).grad, numeric) <= kFdTolerance);
  }
}

// ------------------------------------------------------------------ RKD

TEST_CASE("rkd_instance is zero on agreement and for fewer than two rows") {
  std::mt19937_64 rng(44);
  const Mat e = oracle::random_unit_rows(rng, 4, 5);
  CHECK(std::abs(rkd_instance(e, e, 5.0).value) <= 1e-12);
  CHECK(rkd_instance(e.topRows(1), e.topRows(1), 5.0).value == 0.0);
  CHECK(rkd_instance(Mat(0, 5), Mat(0, 5), 5.0).value == 0.0);
}

TEST_CASE("rkd_instance on an engineered two-row case") {
  // Row softmax of tau*[1, c] is (1/(1+e^{tau(c-1)}), ...). Choose cosines so
  // that the student rows are (0.9, 0.1) and the teacher rows (0.5, 0.5).
  const double tau = 5.0;
  const double c_student = 1.0 - std::log(9.0) / tau;
  const double angle = std::acos(c_student);
  Mat q(2, 2);
  q << 1, 0, std::cos(angle), std::sin(angle);
  Mat e(2, 2);  // identical teachers: every teacher row is (0.5, 0.5)
  e << 1, 0, 1, 0;
  const double kl = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
  CHECK(rkd_instance(q, e, tau).value == doctest::Approx(kl).epsilon(1e-12));
}

TEST_CASE("rkd_instance matches the loop oracle and is non-negative") {
  std::mt19937_64 rng(45);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + t % 3, d = 2 + t % 7;
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat e = oracle::random_unit_rows(rng, n, d);
    const double v = rkd_instance(q, e, 5.0).value;
    CHECK(v >= 0.0);
    CHECK(v == doctest::Approx(oracle::rkd_instance(q, e, 5.0)).epsilon(1e-10));
  }
}

TEST_CASE("rkd_instance gradient matches finite differences") {
  std::mt19937_64 rng(46);
  for (int t = 0; t < 20; ++t) {
    const int n = 2 + t % 3, d = 2 + t % 7;
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat e = oracle::random_unit_rows(rng, n, d);
    const Mat numeric = oracle::numeric_gradient([&](const Mat& m) { return rkd_instance(m, e, 5.0).value; }, q, kFdStep);
    CHECK(oracle::relative_error(rkd_instance(q, e, 5.0).grad, numeric) <= kFdTolerance);
  }
}

// ------------------------------------------------------------------ classification

TEST_CASE("classification_loss closed forms") {
  Mat e(1, 2);
  e << 1, 0;
  const std::vector<int> target{0};
  const std::vector<double> w{1.0};
  const double v = classification_loss(e, e, target, w, 50.0, {}).value;
  const double p = 1.0 / (1.0 + std::exp(-50.0));
  CHECK(v == doctest::Approx(-0.25 * (1 - p) * (1 - p) * std::log(p)).epsilon(1e-9));
  CHECK(v < 1e-20);

  // Orthogonal positive: p = 0.5, positive term only.
  Mat q(1, 2);
  q << 0, 1;
  const double half = 0.25 * 0.25 * std::log(2.0);
  CHECK(classification_loss(q, e, target, w, 50.0, {}).value == doctest::Approx(half).epsilon(1e-12));
  const std::vector<double> w_half{0.5};
  CHECK(classification_loss(q, e, target, w_half, 50.0, {}).value == doctest::Approx(0.5 * half).epsilon(1e-12));
}

TEST_CASE("classification_loss matches the loop oracle") {
  std::mt19937_64 rng(47);
  std::uniform_real_distribution<double> wd(0.05, 0.95);
  for (int t = 0; t < 50; ++t) {
    const int n = 4, m = 3, k = 2, d = 5;
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat cls = oracle::random_unit_rows(rng, m + k, d);
    std::vector<int> target{0, -1, 3, 4};
    std::shuffle(target.begin(), target.end(), rng);
    std::vector<double> w{1, 1, 1, wd(rng), wd(rng)};
    const double got = classification_loss(q, cls, target, w, 50.0, {}).value;
    CHECK(got == doctest::Approx(oracle::focal(q, cls, target, w, 50.0, 2.0, 0.25)).epsilon(1e-10));
  }
}

TEST_CASE("unit weights without pseudo columns give plain sigmoid focal loss") {
  std::mt19937_64 rng(48);
  for (int t = 0; t < 20; ++t) {
    const Mat q = oracle::random_matrix(rng, 5, 4);
    const Mat cls = oracle::random_unit_rows(rng, 3, 4);
    const std::vector<int> target{0, 2, -1, 1, -1};
    const std::vector<double> w(3, 1.0);
    Mat logits(5, 3);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 3; ++j) logits(i, j) = 50.0 * oracle::cos_rows(q, i, cls, j);
    CHECK(classification_loss(q, cls, target, w, 50.0, {}).value ==
          doctest::Approx(plain_focal(logits, target, 2.0, 0.25)).epsilon(1e-10));
  }
}

TEST_CASE("classification_loss gradient matches finite differences") {
  std::mt19937_64 rng(49);
  std::uniform_real_distribution<double> wd(0.05, 0.95);
  for (int t = 0; t < 20; ++t) {
    const int n = 1 + t % 4, c = 2 + t % 3, d = 2 + t % 7;
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat cls = oracle::random_unit_rows(rng, c, d);
    std::vector<int> target;
    for (int i = 0; i < n; ++i) target.push_back(static_cast<int>(rng() % static_cast<unsigned>(c + 1)) - 1);
    std::vector<double> w;
    for (int j = 0; j < c; ++j) w.push_back(j == 0 ? 1.0 : wd(rng));
    // A lower temperature keeps sigmoids away from saturation so the check
    // is informative; tau does not change the algebra.
    const double tau = 50.0 / (1 + t % 5);
    const Mat numeric = oracle::numeric_gradient(
        [&](const Mat& m) { return classification_loss(m, cls, target, w, tau, {}).value; }, q, kFdStep);
    CHECK(oracle::relative_error(classification_loss(q, cls, target, w, tau, {}).grad, numeric) <= kFdTolerance);
  }
}

// ------------------------------------------------------------------ pyramid

TEST_CASE("global_feature of constant pyramids") {
  const Vec single = global_feature({constant_map(4, 5, 3, 2.5)});
  for (int c = 0; c < 3; ++c) CHECK(single[c] == doctest::Approx(2.5).epsilon(1e-15));
  const Vec two = global_feature({constant_map(8, 8, 2, 1.0), constant_map(4, 4, 2, 4.0)});
  for (int c = 0; c < 2; ++c) CHECK(two[c] == doctest::Approx(2.5).epsilon(1e-15));
  CHECK_THROWS_AS(global_feature({}), std::invalid_argument);
  CHECK_THROWS_AS(global_feature({constant_map(2, 2, 2, 0), constant_map(2, 2, 3, 0)}), std::invalid_argument);
}

TEST_CASE("global_feature matches the resize-then-mean oracle") {
  std::mt19937_64 rng(50);
  for (int t = 0; t < 20; ++t) {
    const int h = 3 + t % 6, w = 2 + t % 5;
    FeaturePyramid p{{h, w, oracle::random_matrix(rng, h * w, 4)},
                     {(h + 1) / 2, (w + 1) / 2, oracle::random_matrix(rng, ((h + 1) / 2) * ((w + 1) / 2), 4)},
                     {2, 3, oracle::random_matrix(rng, 6, 4)}};
    const Vec got = global_feature(p);
    const auto expect = oracle::global_feature(p);
    for (int c = 0; c < 4; ++c) CHECK(std::abs(got[c] - expect[static_cast<std::size_t>(c)]) <= 1e-6);

    // The pixel weights reproduce the same vector linearly.
    const auto weights = global_feature_weights(p);
    Vec linear = Vec::Zero(4);
    for (std::size_t l = 0; l < p.size(); ++l) linear += p[l].values.transpose() * weights[l];
    CHECK((linear - got).norm() <= 1e-12);
  }
}

// ------------------------------------------------------------------ image CKD

TEST_CASE("ckd_image closed forms") {
  Mat one(1, 3);
  one << 0.3, -0.2, 0.9;
  CHECK(ckd_image(one, one, Mat(0, 3), 20.0).value == 0.0);
  Mat other(1, 3);
  other << 1, 0, 0;
  CHECK(ckd_image(one, other, Mat(0, 3), 20.0).value == 0.0);

  // Two orthogonal matched pairs: every row of both directions contributes
  // log(1 + e^-20); summing 2 rows x 2 directions and halving leaves two.
  const Mat x = Mat::Identity(2, 4);
  CHECK(ckd_image(x, x, Mat(0, 4), 20.0).value == doctest::Approx(2.0 * std::log1p(std::exp(-20.0))).epsilon(1e-9));
  CHECK(ckd_image(Mat(0, 4), Mat(0, 4), Mat(0, 4), 20.0).value == 0.0);
}

TEST_CASE("ckd_image matches the loop oracle") {
  std::mt19937_64 rng(51);
  for (int t = 0; t < 30; ++t) {
    const int m = 1 + t % 4, p = t % 3, d = 2 + t % 7;
    const Mat x = oracle::random_matrix(rng, m, d);
    const Mat e = oracle::random_unit_rows(rng, m, d);
    const Mat extra = oracle::random_unit_rows(rng, p, d);
    CHECK(ckd_image(x, e, extra, 20.0).value == doctest::Approx(oracle::ckd_image(x, e, extra, 20.0)).epsilon(1e-10));
  }
}

TEST_CASE("ckd_image gradient matches finite differences") {
  std::mt19937_64 rng(52);
  for (int t = 0; t < 20; ++t) {
    const int m = 1 + t % 4, p = t % 3, d = 2 + t % 7;
    const Mat x = oracle::random_matrix(rng, m, d);
    const Mat e = oracle::random_unit_rows(rng, m, d);
    const Mat extra = oracle::random_unit_rows(rng, p, d);
    const Mat numeric = oracle::numeric_gradient([&](const Mat& v) { return ckd_image(v, e, extra, 20.0).value; }, x, kFdStep);
    CHECK(oracle::relative_error(ckd_image(x, e, extra, 20.0).grad, numeric) <= kFdTolerance);
  }
}

// ------------------------------------------------------------------ boxes and totals

TEST_CASE("box_loss value and gradient") {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 20; ++t) {
    std::vector<Box> pred, tgt;
    for (int i = 0; i < 3; ++i) {
      pred.push_back(oracle::random_box(rng, 60));
      tgt.push_back(oracle::random_box(rng, 60));
    }
    const BoxLoss bl = box_loss(pred, tgt, 5.0, 2.0, 96.0);
    double expect = 0.0;
    for (int i = 0; i < 3; ++i) {
      const Box& p = pred[static_cast<std::size_t>(i)];
      const Box& g = tgt[static_cast<std::size_t>(i)];
      const double l1 = std::abs(p.x1 - g.x1) + std::abs(p.y1 - g.y1) + std::abs(p.x2 - g.x2) + std::abs(p.y2 - g.y2);
      expect += 5.0 * l1 / 96.0 + 2.0 * (1.0 - giou(p, g));
    }
    CHECK(bl.value == doctest::Approx(expect / 3.0).epsilon(1e-12));

    for (int i = 0; i < 3; ++i) {
      for (int c = 0; c < 4; ++c) {
        auto at = [&](double delta) {
          auto moved = pred;
          (&moved[static_cast<std::size_t>(i)].x1)[c] += delta;
          return box_loss(moved, tgt, 5.0, 2.0, 96.0).value;
        };
        const double numeric = (at(kFdStep) - at(-kFdStep)) / (2 * kFdStep);
        const double kink = std::abs(at(1e-3) - 2 * at(0) + at(-1e-3));
        if (kink > 1e-7) continue;  // L1 and GIoU extent kinks
        CHECK(bl.grads[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] == doctest::Approx(numeric).epsilon(1e-5));
      }
    }
  }
  CHECK(box_loss({}, {}, 5.0, 2.0, 96.0).value == 0.0);
}

TEST_CASE("total_loss arithmetic") {
  const DistillConfig cfg;
  CHECK(cfg.alpha_ckd == 0.5);
  CHECK(cfg.alpha_rkd == 5.0);
  CHECK(cfg.alpha_img == 0.2);
  CHECK(cfg.tau_ckd == 20.0);
  CHECK(cfg.tau_rkd == 5.0);
  CHECK(cfg.tau_cls == 50.0);
  CHECK(cfg.instance_queue == 2048);
  CHECK(cfg.image_queue == 512);

  const std::vector<LayerLosses> zero(2);
  CHECK(total_loss(zero, 0.0, cfg).total == 0.0);

  const std::vector<LayerLosses> unit{{1, 1, 1, 1}};
  CHECK(total_loss(unit, 1.0, cfg).total == 7.7);

  const std::vector<LayerLosses> twice{{1, 1, 1, 1}, {1, 1, 1, 1}};
  CHECK(total_loss(twice, 1.0, cfg).total == doctest::Approx(2 * 7.5 + 0.2).epsilon(1e-15));

  std::mt19937_64 rng(54);
  std::uniform_real_distribution<double> u(0, 3);
  for (int t = 0; t < 100; ++t) {
    std::vector<LayerLosses> layers(3);
    for (auto& l : layers) l = {u(rng), u(rng), u(rng), u(rng)};
    const double img = u(rng);
    double expect = 0.0;
    for (const auto& l : layers) expect += l.cls + l.box + cfg.alpha_ckd * l.ckd_ins + cfg.alpha_rkd * l.rkd_ins;
    expect += cfg.alpha_img * img;
    const LossReport r = total_loss(layers, img, cfg);
    CHECK(r.total == expect);
    CHECK(r.ckd_img == img);
    CHECK(r.layers.size() == 3);
  }
}

TEST_CASE("distill config validation") {
  DistillConfig c;
  CHECK_NOTHROW(c.validate());
  c.tau_rkd = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.alpha_img = -0.1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
