#include "hdovd/pseudo_label.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

#include "hdovd/embedding_cache.hpp"

namespace hdovd {

namespace {

bool in(std::string_view w, std::initializer_list<std::string_view> list) {
  return std::find(list.begin(), list.end(), w) != list.end();
}

bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() > suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

PosTag tag_word(std::string_view w) {
  if (in(w, {"a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every",
             "another", "its", "his", "her", "their", "my", "your", "our", "one", "two", "three",
             "four", "five", "several", "many", "few", "no"})) {
    return PosTag::Determiner;
  }
  if (in(w, {"on", "in", "at", "of", "with", "near", "beside", "under", "behind", "next", "to",
             "by", "from", "over", "into", "onto", "across", "above", "below", "between", "inside",
             "outside", "around", "through", "for", "and", "or", "but", "while", "is", "are",
             "was", "were", "be", "been", "it", "he", "she", "they", "there", "here", "up",
             "down", "out", "off", "has", "have", "had", "can", "will", "as", "than", "then"})) {
    return PosTag::Function;
  }
  if (in(w, {"small", "large", "big", "little", "red", "blue", "green", "yellow", "white", "black",
             "brown", "gray", "grey", "old", "young", "new", "wooden", "bright", "dark", "empty",
             "blurry", "shiny", "tall", "short", "long", "round", "open", "closed", "busy",
             "sunny", "cloudy", "wet", "dry", "clean", "dirty", "pink", "orange", "purple"})) {
    return PosTag::Adjective;
  }
  if (in(w, {"very", "quickly", "slowly", "together", "alone", "away", "very", "too", "not"})) {
    return PosTag::Adverb;
  }
  if (in(w, {"sits", "stands", "holds", "runs", "looks", "walks", "lies", "rides", "eats",
             "sit", "stand", "hold", "run", "look", "walk", "lie", "ride", "eat"})) {
    return PosTag::Verb;
  }
  // -ing / -ed nouns that the suffix rules would mistag.
  if (in(w, {"thing", "building", "ceiling", "painting", "ring", "king", "wing", "string", "swing",
             "spring", "clothing", "evening", "morning", "pudding", "sibling", "bed", "shed",
             "sled", "seed", "steed", "reed", "weed", "sledding"})) {
    return PosTag::Noun;
  }
  if (ends_with(w, "ly")) return PosTag::Adverb;
  if (w.size() >= 5 && (ends_with(w, "ing") || ends_with(w, "ed"))) return PosTag::Verb;
  if (ends_with(w, "ous") || ends_with(w, "ful") || ends_with(w, "ive") || ends_with(w, "less")) {
    return PosTag::Adjective;
  }
  return PosTag::Noun;
}

std::vector<std::string> extract_noun_phrases(std::string_view caption) {
  const auto tokens = tokenize(caption);
  std::vector<std::string> heads;
  auto emit = [&](const std::string& head) {
    if (std::find(heads.begin(), heads.end(), head) == heads.end()) heads.push_back(head);
  };
  // DT? JJ* NN+ ; the determiner and adjectives never change the head.
  const std::string* last_noun = nullptr;
  for (const auto& tok : tokens) {
    if (tag_word(tok) == PosTag::Noun) {
      last_noun = &tok;
    } else if (last_noun) {
      emit(*last_noun);
      last_noun = nullptr;
    }
  }
  if (last_noun) emit(*last_noun);
  return heads;
}

std::optional<SelectedLabel> select_pseudo_label(std::span<const std::string> candidates,
                                                 const Vec& region, const TextEncoder& text) {
  std::optional<SelectedLabel> best;
  for (const auto& cand : candidates) {
    Vec emb = text.text(cand);
    const double s = cosine(region, emb);
    if (!best || s > best->raw_score) {
      best = SelectedLabel{normalize_text_key(cand), s, std::move(emb)};
    }
  }
  return best;
}

void standardize_weights(std::span<PseudoLabel> records) {
  if (records.empty()) return;
  const double n = static_cast<double>(records.size());
  double mean = 0.0;
  for (const auto& r : records) mean += r.raw_score;
  mean /= n;
  double var = 0.0;
  for (const auto& r : records) var += (r.raw_score - mean) * (r.raw_score - mean);
  var /= n;
  // Rounding leaves a residual variance on identical scores; treat it as zero.
  const double flat = 1e-24 * std::max(1.0, mean * mean);
  const double sd = (records.size() < 2 || var <= flat) ? 1.0 : std::sqrt(var);
  for (auto& r : records) {
    const double z = (r.raw_score - mean) / sd;
    r.weight = 1.0 / (1.0 + std::exp(-z));
  }
}

PipelineResult run_pipeline(const PipelineInputs& inputs, const RegionEncoder& regions,
                            const Captioner& captioner, const TextEncoder& text,
                            const PipelineConfig& cfg) {
  PipelineResult out;
  PipelineReport& rep = out.report;
  static const std::vector<Proposal> kNoProposals;
  static const std::vector<Box> kNoBoxes;

  for (const ImageId& image : inputs.images) {
    ++rep.images;
    auto pit = inputs.proposals.find(image);
    const auto& props = pit == inputs.proposals.end() ? kNoProposals : pit->second;
    auto git = inputs.base_gt.find(image);
    const auto& gt = git == inputs.base_gt.end() ? kNoBoxes : git->second;

    rep.proposals_in += props.size();
    const std::size_t considered = std::min(cfg.top_k, props.size());
    rep.proposals_considered += considered;
    const auto pseudo = filter_pseudo_proposals(props, gt, cfg.max_iou, cfg.top_k);
    rep.discarded_overlap += considered - pseudo.size();
    rep.pseudo_boxes += pseudo.size();

    for (const Box& box : pseudo) {
      const auto region = regions.region(image, box);
      if (!region) {
        ++rep.skipped_missing_embedding;
        continue;
      }
      const std::string caption = captioner.caption(image, box);
      ++rep.captioned;

      std::vector<std::string> candidates;
      if (cfg.label_mode == LabelMode::RawCaption) {
        if (!normalize_text_key(caption).empty()) candidates.push_back(caption);
      } else {
        candidates = extract_noun_phrases(caption);
      }
      auto chosen = select_pseudo_label(candidates, *region, text);
      if (!chosen) {
        ++rep.no_noun;
        continue;
      }
      ++rep.labeled;
      out.labels.push_back(PseudoLabel{image, box, std::move(chosen->label), chosen->raw_score, 0.5,
                                       std::move(chosen->embedding)});
    }
  }
  standardize_weights(out.labels);
  return out;
}

}  // namespace hdovd
