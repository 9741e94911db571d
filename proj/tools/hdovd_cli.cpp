// Command-line driver: gen-world, extract-embeddings, pseudo-label, train,
// eval, report.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hdovd/harness.hpp"
#include "hdovd/records.hpp"

namespace fs = std::filesystem;
using namespace hdovd;

namespace {

EnsembleConfig parse_pair(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("expected BASE,NOVEL but got '" + text + "'");
  EnsembleConfig e{parse_real(text.substr(0, comma)), parse_real(text.substr(comma + 1))};
  e.validate();
  return e;
}

void print_eval_table(const std::vector<EnsembleConfig>& pairs, const std::vector<EvalReport>& reports) {
  std::printf("%-6s %-6s %9s %9s %9s %9s %9s %9s %9s\n", "b_base", "b_nov", "base_AP", "novel_AP", "all_AP", "recall",
              "selected", "as_base", "correct");
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    std::printf("%-6.2f %-6.2f %9.4f %9.4f %9.4f %9d %9d %9d %9d\n", pairs[k].beta_base, pairs[k].beta_novel,
                r.base_map, r.novel_map, r.all_map, r.errors.recall_count, r.errors.selected_count,
                r.errors.misclassified_as_base, r.errors.correct_novel);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-vocabulary detection distillation toolkit on a synthetic world"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  app.add_option("--config", config_path, "INI settings file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "seed for the subcommand's randomness (world or training)");
  app.add_option("--out", out_dir, "artifact directory")->capture_default_str();

  auto* gen = app.add_subcommand("gen-world", "generate the synthetic world, splits and proposals");
  auto* extract = app.add_subcommand("extract-embeddings", "cache teacher region, image and class embeddings");
  auto* pseudo = app.add_subcommand("pseudo-label", "caption pseudo boxes and pick their text labels");
  auto* train_cmd = app.add_subcommand("train", "train the detector");
  int max_steps = -1;
  train_cmd->add_option("--max-steps", max_steps, "stop after this many steps");
  auto* eval = app.add_subcommand("eval", "evaluate the checkpoint on the eval split");
  std::vector<std::string> betas;
  eval->add_option("--beta", betas, "ensemble exponents BASE,NOVEL; repeat for a sweep");
  auto* report = app.add_subcommand("report", "loss curves from the metrics log");
  std::string csv_path, plot_path, metrics_path;
  report->add_option("--metrics", metrics_path, "metrics log (default <out>/metrics.jsonl)");
  report->add_option("--csv", csv_path, "write the table here instead of stdout");
  report->add_option("--plot", plot_path, "also write an SVG plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    Settings s = config_path.empty() ? Settings{} : load_settings(config_path);
    const fs::path dir(out_dir);
    if (*gen) {
      if (seed) s.world.seed = *seed;
      gen_world(s, dir);
      std::ofstream(dir / "config.ini") << format_settings(s);
      std::cout << "world written to " << dir.string() << '\n';
    } else if (*extract) {
      const auto cache = extract_embeddings(dir);
      std::cout << "cached " << cache.region_count() << " regions, " << cache.global_count() << " images, "
                << cache.text_count() << " texts\n";
    } else if (*pseudo) {
      const auto r = pseudo_label(s, dir);
      std::cout << "pseudo boxes " << r.pseudo_boxes << ", labeled " << r.labeled << ", no noun " << r.no_noun
                << ", skipped " << r.skipped_missing_embedding << '\n';
    } else if (*train_cmd) {
      if (seed) s.train.seed = *seed;
      if (max_steps >= 0) s.train.max_steps = max_steps;
      const auto r = run_train(s, dir);
      std::cout << "trained " << r.history.size() << " steps";
      if (!r.history.empty()) std::cout << ", final loss " << r.history.back().total;
      std::cout << '\n';
    } else if (*eval) {
      std::vector<EnsembleConfig> pairs;
      for (const auto& b : betas) pairs.push_back(parse_pair(b));
      if (pairs.empty()) pairs.push_back(s.ensemble);
      print_eval_table(pairs, run_eval(s, dir, pairs));
    } else if (*report) {
      const fs::path metrics = metrics_path.empty() ? dir / artifact::kMetrics : fs::path(metrics_path);
      const std::optional<fs::path> svg = plot_path.empty() ? std::nullopt : std::optional<fs::path>(plot_path);
      if (csv_path.empty()) {
        write_report(metrics, std::cout, svg);
      } else {
        std::ofstream csv(csv_path);
        if (!csv) throw std::runtime_error("cannot write " + csv_path);
        write_report(metrics, csv, svg);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
