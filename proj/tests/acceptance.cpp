// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "hdovd/harness.hpp"
#include "hdovd/matching.hpp"
#include "hdovd/pseudo_label.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace hdovd;

namespace {

// Tolerances and thresholds.
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
constexpr int kFdInstances = 20;
constexpr double kSuiteSeconds = 60.0;
constexpr double kCkdPositiveOnly = 2.061e-9;  // -log sigmoid(20)
constexpr double kCkdAbsTol = 1e-12;
constexpr double kRkdZeroTol = 1e-12;
constexpr double kEnsembleTol = 1e-12;
constexpr double kAffineTol = 1e-12;
constexpr double kBaseOnlyMaxCorrect = 0.10;
constexpr double kFullMinCorrect = 0.60;
constexpr double kNovelApRatio = 5.0;
constexpr double kToySeconds = 600.0;
constexpr double kWeightingBaseApSlack = 0.01;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

class TableText final : public TextEncoder {
 public:
  explicit TableText(std::map<std::string, Vec> table) : table_(std::move(table)) {}
  int dim() const override { return static_cast<int>(table_.begin()->second.size()); }
  Vec text(std::string_view t) const override { return table_.at(std::string(t)); }

 private:
  std::map<std::string, Vec> table_;
};

// ------------------------------------------------------------------ 1

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> nd(1, 4), dd(2, 8), pd(0, 3);
  std::uniform_real_distribution<double> wd(0.05, 1.0);
  double worst[4] = {0, 0, 0, 0};
  for (int t = 0; t < kFdInstances; ++t) {
    const int n = nd(rng), d = dd(rng), p = pd(rng);
    const Mat q = oracle::random_matrix(rng, n, d);
    const Mat e = oracle::random_unit_rows(rng, n, d);
    const Mat extra = oracle::random_unit_rows(rng, p, d);

    auto ckd = [&](const Mat& m) { return ckd_instance(m, e, extra, 20.0).value; };
    worst[0] = std::max(worst[0], oracle::relative_error(ckd_instance(q, e, extra, 20.0).grad,
                                                         oracle::numeric_gradient(ckd, q, kFdStep)));

    const int nr = std::max(n, 2);
    const Mat qr = oracle::random_matrix(rng, nr, d);
    const Mat er = oracle::random_unit_rows(rng, nr, d);
    auto rkd = [&](const Mat& m) { return rkd_instance(m, er, 5.0).value; };
    worst[1] = std::max(worst[1], oracle::relative_error(rkd_instance(qr, er, 5.0).grad,
                                                         oracle::numeric_gradient(rkd, qr, kFdStep)));

    const int m = nd(rng);
    const Mat cls = oracle::random_unit_rows(rng, m, d);
    std::vector<int> target;
    for (int i = 0; i < n; ++i) target.push_back(static_cast<int>(rng() % static_cast<unsigned>(m + 1)) - 1);
    std::vector<double> w;
    for (int j = 0; j < m; ++j) w.push_back(wd(rng));
    const double tau = 10.0;  // unsaturated sigmoids keep the comparison informative
    auto focal = [&](const Mat& x) { return classification_loss(x, cls, target, w, tau, {}).value; };
    worst[2] = std::max(worst[2], oracle::relative_error(classification_loss(q, cls, target, w, tau, {}).grad,
                                                         oracle::numeric_gradient(focal, q, kFdStep)));

    auto img = [&](const Mat& x) { return ckd_image(x, e, extra, 20.0).value; };
    worst[3] = std::max(worst[3], oracle::relative_error(ckd_image(q, e, extra, 20.0).grad,
                                                         oracle::numeric_gradient(img, q, kFdStep)));
  }
  const char* names[4] = {"ckd_instance", "rkd_instance", "classification_loss", "ckd_image"};
  for (int k = 0; k < 4; ++k) o.require(worst[k] <= kFdRelTol, std::string(names[k]) + fmt(" rel err %.3g", worst[k]));
  const double secs = seconds_since(t0);
  o.require(secs < kSuiteSeconds, fmt("took %.1f s", secs));
  if (o.pass) o.detail = fmt("worst relative error %.2e", *std::max_element(worst, worst + 4)) + fmt(", %.2f s", secs);
  return o;
}

// ------------------------------------------------------------------ 2

Outcome oracle_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> u(0, 1);

  int bad = 0;
  for (int c = 0; c < 200; ++c) {
    const int t = 1 + c % 7;
    const int n = t + static_cast<int>(rng() % 2);
    const Mat cost = oracle::random_matrix(rng, n, t);
    const double got = min_cost_assignment(cost).total_cost(cost);
    if (std::abs(got - oracle::brute_force_assignment(cost)) > 1e-9) ++bad;
  }
  o.require(bad == 0, std::to_string(bad) + " assignment mismatches");

  bad = 0;
  for (int c = 0; c < 100; ++c) {
    const Mat m = oracle::random_unit_rows(rng, 9, 6);
    std::map<std::string, Vec> table;
    std::vector<std::string> names;
    for (int i = 1; i < 9; ++i) {
      names.push_back("w" + std::to_string(i));
      table[names.back()] = m.row(i).transpose();
    }
    int best = 0;
    for (int i = 1; i < 8; ++i)
      if (oracle::cos_rows(m, 0, m, i + 1) > oracle::cos_rows(m, 0, m, best + 1)) best = i;
    const auto got = select_pseudo_label(names, m.row(0).transpose(), TableText(table));
    if (!got || got->label != names[static_cast<std::size_t>(best)]) ++bad;
  }
  o.require(bad == 0, std::to_string(bad) + " pseudo label mismatches");

  bad = 0;
  for (int c = 0; c < 100; ++c) {
    std::vector<Proposal> props;
    for (int i = 0; i < 10; ++i) props.push_back({oracle::random_box(rng), std::round(u(rng) * 10) / 10, "i"});
    const std::vector<Box> gt{oracle::random_box(rng), oracle::random_box(rng), oracle::random_box(rng)};
    const double max_iou = u(rng);
    if (filter_pseudo_proposals(props, gt, max_iou, 5) != oracle::filter(props, gt, max_iou, 5)) ++bad;
  }
  o.require(bad == 0, std::to_string(bad) + " filter mismatches");

  bad = 0;
  for (int c = 0; c < 50; ++c) {
    std::vector<ScoredBox> gts, dets;
    std::vector<oracle::Det> ogts, odets;
    for (int g = 1 + static_cast<int>(rng() % 5); g > 0; --g) {
      const int im = static_cast<int>(rng() % 3);
      const Box b = oracle::random_box(rng, 40);
      gts.push_back({std::to_string(im), b, 0});
      ogts.push_back({im, b, 0});
    }
    for (int d = 1 + static_cast<int>(rng() % 20); d > 0; --d) {
      const auto& g = ogts[static_cast<std::size_t>(rng() % ogts.size())];
      const bool near = u(rng) < 0.5;
      const int im = near ? g.image : static_cast<int>(rng() % 3);
      const Box b = near ? Box{g.box.x1 + u(rng), g.box.y1 + u(rng), g.box.x2 + u(rng), g.box.y2 + u(rng)}
                         : oracle::random_box(rng, 40);
      const double score = std::round(u(rng) * 5) / 5;
      dets.push_back({std::to_string(im), b, score});
      odets.push_back({im, b, score});
    }
    if (std::abs(*average_precision(dets, gts, 0.5) - oracle::average_precision(odets, ogts, 0.5)) > 1e-12) ++bad;
  }
  o.require(bad == 0, std::to_string(bad) + " AP mismatches");

  const double secs = seconds_since(t0);
  o.require(secs < kSuiteSeconds, fmt("took %.1f s", secs));
  if (o.pass) o.detail = "450 oracle cases agree" + fmt(", %.2f s", secs);
  return o;
}

// ------------------------------------------------------------------ 3

Outcome closed_forms() {
  Outcome o;
  Mat e(1, 3);
  e << 1, 0, 0;
  const double ckd = ckd_instance(e, e, Mat(0, 3), 20.0).value;
  o.require(std::abs(ckd - std::log1p(std::exp(-20.0))) <= kCkdAbsTol, "CKD n=1 differs from -log sigmoid(20)");
  o.require(std::abs(ckd - kCkdPositiveOnly) <= 1e-12, fmt("CKD n=1 = %.6g", ckd));

  std::mt19937_64 rng(103);
  const Mat q = oracle::random_unit_rows(rng, 4, 6);
  const double rkd = rkd_instance(q, q, 5.0).value;
  o.require(std::abs(rkd) <= kRkdZeroTol, fmt("RKD(Q=E) = %.3g", rkd));

  const Mat x = oracle::random_matrix(rng, 1, 6);
  const Mat g = oracle::random_unit_rows(rng, 1, 6);
  const double img = ckd_image(x, g, Mat(0, 6), 20.0).value;
  o.require(img == 0.0, fmt("ckd_image m=1 = %.3g", img));

  const std::vector<LayerLosses> unit{{1, 1, 1, 1}};
  const double total = total_loss(unit, 1.0, DistillConfig{}).total;
  o.require(total == 7.7, fmt("total_loss = %.17g", total));
  if (o.pass) o.detail = fmt("CKD %.4e", ckd) + fmt(", RKD %.1e", rkd) + ", image 0, total 7.7";
  return o;
}

// ------------------------------------------------------------------ 4

Outcome ensemble_identities() {
  Outcome o;
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> u(1e-9, 1 - 1e-9), b(0, 1);
  Mat p_cls(1000, 2), p_dis(1000, 2);
  for (int i = 0; i < p_cls.size(); ++i) {
    p_cls.data()[i] = u(rng);
    p_dis.data()[i] = u(rng);
  }
  const std::vector<bool> mask{true, false};
  const Mat lc = p_cls.array().log().matrix();
  const Mat ld = p_dis.array().log().matrix();
  const double d0 = (ensemble_log(lc, ld, mask, 0.0, 0.0).array().exp().matrix() - p_cls).cwiseAbs().maxCoeff();
  const double d1 = (ensemble_log(lc, ld, mask, 1.0, 1.0).array().exp().matrix() - p_dis).cwiseAbs().maxCoeff();
  o.require(d0 <= kEnsembleTol, fmt("beta=0 deviates by %.3g", d0));
  o.require(d1 <= kEnsembleTol, fmt("beta=1 deviates by %.3g", d1));
  o.require(ensemble(p_cls, p_dis, mask, 0.0, 0.0) == p_cls, "beta=0 not bit-exact");
  o.require(ensemble(p_cls, p_dis, mask, 1.0, 1.0) == p_dis, "beta=1 not bit-exact");

  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double bb = b(rng), bn = b(rng);
    const Mat same = p_cls.row(i);
    const Mat s = ensemble(same, same, mask, bb, bn);
    worst = std::max(worst, ((s - same).array().abs() / same.array()).maxCoeff());
  }
  o.require(worst <= kEnsembleTol, fmt("fixed point deviates by %.3g", worst));
  if (o.pass) o.detail = fmt("endpoint deviation %.1e", std::max(d0, d1)) + fmt(", fixed point %.1e", worst);
  return o;
}

// ------------------------------------------------------------------ 5

Outcome standardization() {
  Outcome o;
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(-1, 1), a(0.01, 10), c(-5, 5);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    std::vector<PseudoLabel> x(1 + t % 30), y(x.size());
    const double scale = a(rng), shift = c(rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i].raw_score = u(rng);
      y[i].raw_score = scale * x[i].raw_score + shift;
    }
    standardize_weights(x);
    standardize_weights(y);
    for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i].weight - y[i].weight));
  }
  o.require(worst <= kAffineTol, fmt("affine deviation %.3g", worst));
  std::vector<PseudoLabel> single(1);
  single[0].raw_score = 0.731;
  standardize_weights(single);
  o.require(single[0].weight == 0.5, fmt("single weight %.17g", single[0].weight));
  if (o.pass) o.detail = fmt("affine deviation %.1e", worst) + ", single record 0.5";
  return o;
}

// ------------------------------------------------------------------ 6, 7, 8

struct ToyRun {
  EvalReport report;
  std::string metrics;
};

ToyRun run_config(const fs::path& prepared, const fs::path& dir, const Settings& s) {
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(prepared)) {
    if (entry.is_regular_file()) fs::copy_file(entry.path(), dir / entry.path().filename(), fs::copy_options::overwrite_existing);
  }
  const TrainResult r = run_train(s, dir);
  ToyRun out;
  out.report = evaluate_model(r.detector, load_eval_data(dir), s, s.ensemble);
  out.metrics = slurp(dir / artifact::kMetrics);
  return out;
}

std::string row(const char* name, const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "  %-10s base AP %.4f  novel AP %.4f  selected %d  as_base %d  wrong %d  correct %d\n",
                name, r.base_map, r.novel_map, r.errors.selected_count, r.errors.misclassified_as_base,
                r.errors.wrong_novel, r.errors.correct_novel);
  return buf;
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&](int n, const char* what, const Outcome& o) {
    all = all && o.pass;
    std::printf("criterion %d: %s  %s (%s)\n", n, o.pass ? "PASS" : "FAIL", what, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "loss gradients match finite differences", gradient_suite());
  report(2, "oracle agreement", oracle_suite());
  report(3, "closed-form loss values", closed_forms());
  report(4, "ensemble identities", ensemble_identities());
  report(5, "confidence weight standardization", standardization());

  const auto t0 = std::chrono::steady_clock::now();
  const fs::path root = fs::temp_directory_path() / "hdovd_acceptance";
  fs::remove_all(root);
  const Settings defaults;
  const fs::path prepared = root / "prepared";
  gen_world(defaults, prepared);
  const EmbeddingCache cache = extract_embeddings(prepared);
  (void)pseudo_label(defaults, prepared);

  Settings base = defaults;
  base.distill.alpha_ckd = base.distill.alpha_rkd = base.distill.alpha_img = 0.0;
  base.train.pseudo_boxes = false;
  base.ensemble = {0.0, 0.0};  // the visual-space head is untrained without distillation
  Settings inst = defaults;
  inst.train.class_wise = false;
  Settings unweighted = defaults;
  unweighted.train.weighting = false;

  const ToyRun r_base = run_config(prepared, root / "base", base);
  const ToyRun r_full = run_config(prepared, root / "full", defaults);
  const double toy_secs = seconds_since(t0);
  const ToyRun r_inst = run_config(prepared, root / "instance", inst);
  const ToyRun r_unw = run_config(prepared, root / "unweighted", unweighted);
  std::printf("%s%s%s%s", row("base-only", r_base.report).c_str(), row("full", r_full.report).c_str(),
              row("instance", r_inst.report).c_str(), row("unweighted", r_unw.report).c_str());

  Outcome c6;
  const double base_rate = r_base.report.errors.correct_rate();
  const double full_rate = r_full.report.errors.correct_rate();
  const double ratio = r_base.report.novel_map > 0 ? r_full.report.novel_map / r_base.report.novel_map : INFINITY;
  c6.require(base_rate < kBaseOnlyMaxCorrect, fmt("base-only correct rate %.3f not below 0.10", base_rate));
  c6.require(full_rate >= kFullMinCorrect, fmt("full correct rate %.3f below 0.60", full_rate));
  c6.require(ratio >= kNovelApRatio, fmt("novel AP ratio %.2f below 5", ratio));
  c6.require(toy_secs < kToySeconds, fmt("took %.0f s", toy_secs));
  c6.detail = fmt("base-only correct %.3f", base_rate) + fmt(", full correct %.3f", full_rate) +
              fmt(", novel AP ratio %.1f", ratio) + fmt(", %.0f s", toy_secs) +
              (c6.detail.empty() ? "" : "; " + c6.detail);
  report(6, "toy base-only vs full reproduction", c6);

  Outcome c7;
  c7.require(r_unw.report.novel_map > r_inst.report.novel_map, "class-wise supervision did not raise novel AP");
  c7.require(r_full.report.novel_map > r_inst.report.novel_map, "weighted class-wise did not raise novel AP");
  c7.require(r_full.report.base_map >= r_unw.report.base_map - kWeightingBaseApSlack,
             "weighting lowered base AP by more than 1 point");
  c7.detail = fmt("novel AP instance %.4f", r_inst.report.novel_map) + fmt(" -> class-wise %.4f", r_unw.report.novel_map) +
              fmt(" / weighted %.4f", r_full.report.novel_map) +
              fmt(", base AP weighted %.4f", r_full.report.base_map) + fmt(" vs unweighted %.4f", r_unw.report.base_map) +
              (c7.detail.empty() ? "" : "; " + c7.detail);
  report(7, "ablation monotonicity", c7);

  Outcome c8;
  const ToyRun repeat = run_config(prepared, root / "full_repeat", defaults);
  c8.require(!r_full.metrics.empty() && repeat.metrics == r_full.metrics, "metrics logs differ");
  // The extracted cache as saved, and the on-disk cache after pseudo-labeling
  // added label texts to it.
  const fs::path first = root / "cache_first.hovd";
  const fs::path second = root / "cache_second.hovd";
  cache.save(first);
  const EmbeddingCache loaded = EmbeddingCache::load(first);
  loaded.save(second);
  c8.require(loaded == cache, "loaded cache differs from the saved one");
  c8.require(slurp(first) == slurp(second), "re-saved cache bytes differ");
  const EmbeddingCache on_disk = EmbeddingCache::load(prepared / artifact::kCache);
  on_disk.save(second);
  c8.require(slurp(second) == slurp(prepared / artifact::kCache), "re-saved pipeline cache bytes differ");
  if (c8.pass) {
    c8.detail = std::to_string(r_full.metrics.size()) + "-byte metrics logs identical, cache of " +
                std::to_string(cache.region_count() + cache.global_count() + cache.text_count()) + " entries bit-exact";
  }
  report(8, "determinism", c8);
  return all ? 0 : 1;
}
