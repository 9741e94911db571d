#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hdovd/embedding.hpp"
#include "hdovd/geometry.hpp"
#include "hdovd/providers.hpp"

namespace hdovd {

struct PseudoLabel {
  ImageId image_id;
  Box box;
  std::string label;       ///< lowercase, whitespace-normalized
  double raw_score = 0.0;  ///< region/text cosine
  double weight = 0.5;     ///< sigmoid of the standardized raw score
  Vec text_embedding;
};

enum class PosTag { Determiner, Adjective, Noun, Verb, Adverb, Function };

/// Lowercase alphabetic tokens; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Lexicon-plus-suffix part-of-speech guess; unknown words are nouns.
PosTag tag_word(std::string_view word);

/// Head nouns of the noun phrases in `caption` (the last noun of every
/// maximal noun run), deduplicated in order of first occurrence.
std::vector<std::string> extract_noun_phrases(std::string_view caption);

struct SelectedLabel {
  std::string label;
  double raw_score = 0.0;
  Vec embedding;
};

/// Argmax of cosine(region, text(candidate)); earliest candidate wins ties.
std::optional<SelectedLabel> select_pseudo_label(std::span<const std::string> candidates,
                                                 const Vec& region, const TextEncoder& text);

/// z = (s - mean) / std over all records (population std; 1 when fewer than
/// two records or zero variance), weight = sigmoid(z).
void standardize_weights(std::span<PseudoLabel> records);

enum class LabelMode { Nouns, RawCaption };

struct PipelineConfig {
  std::size_t top_k = 5;
  double max_iou = 0.5;
  LabelMode label_mode = LabelMode::Nouns;
};

struct PipelineReport {
  std::size_t images = 0;
  std::size_t proposals_in = 0;
  std::size_t proposals_considered = 0;  ///< after the top-k cut
  std::size_t discarded_overlap = 0;
  std::size_t pseudo_boxes = 0;
  std::size_t captioned = 0;
  std::size_t labeled = 0;
  std::size_t no_noun = 0;
  std::size_t skipped_missing_embedding = 0;

  friend bool operator==(const PipelineReport&, const PipelineReport&) = default;
};

struct PipelineInputs {
  std::vector<ImageId> images;
  std::map<ImageId, std::vector<Proposal>> proposals;
  std::map<ImageId, std::vector<Box>> base_gt;
};

struct PipelineResult {
  std::vector<PseudoLabel> labels;
  PipelineReport report;
};

/// filter -> caption -> noun extraction -> selection -> standardization.
PipelineResult run_pipeline(const PipelineInputs& inputs, const RegionEncoder& regions,
                            const Captioner& captioner, const TextEncoder& text,
                            const PipelineConfig& cfg);

}  // namespace hdovd
