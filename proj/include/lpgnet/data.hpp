#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lpgnet/tensor.hpp"

namespace lpgnet::data {

inline constexpr int kPadLabel = -1;

/// One utterance's pre-extracted features. There is deliberately no speaker field.
struct UtteranceRecord {
  std::vector<double> text;
  std::vector<double> audio;
  int label = kPadLabel;

  bool operator==(const UtteranceRecord&) const = default;
};

struct Dialogue {
  std::string id;
  std::vector<UtteranceRecord> utterances;

  bool operator==(const Dialogue&) const = default;
};

struct FeatureHeader {
  int version = 1;
  std::size_t f_t = 0;
  std::size_t f_a = 0;
  std::size_t num_classes = 0;
  std::vector<std::string> labels;

  bool operator==(const FeatureHeader&) const = default;
};

struct Dataset {
  FeatureHeader header;
  std::vector<Dialogue> dialogues;

  std::size_t utterance_count() const;
};

std::size_t utterance_count(std::span<const Dialogue> dialogues);
std::vector<std::size_t> class_counts(std::span<const Dialogue> dialogues, std::size_t num_classes);

// ---- LPG-JSONL --------------------------------------------------------------------
//
// Line 1: {"version":1,"f_t":int,"f_a":int,"num_classes":int,"labels":[name,...]}
// Then one dialogue per line: {"id":str,"utterances":[{"t":[..],"a":[..],"y":int},..]}

/// Throws ParseError (with 1-based line number) on malformed JSON or missing
/// fields, SchemaError on dimension or label violations.
Dataset read_feature_stream(std::istream& in);
Dataset load_feature_file(const std::filesystem::path& path);
void write_feature_stream(std::ostream& out, const Dataset& dataset);
void write_feature_file(const std::filesystem::path& path, const Dataset& dataset);

// ---- batching ---------------------------------------------------------------------

/// Whole dialogues padded at the tail to the longest one in the batch.
struct DialogueBatch {
  Tensor text;   // [B, U_max, F_t]
  Tensor audio;  // [B, U_max, F_a]
  Tensor mask;   // [B, U_max], 1 on valid utterances
  std::vector<int> labels;  // B * U_max, kPadLabel on padding
  std::vector<std::size_t> lengths;
  std::vector<std::string> ids;

  std::size_t batch_size() const { return lengths.size(); }
  std::size_t max_len() const { return mask.dim(1); }
  std::vector<std::uint8_t> valid() const;
  std::size_t valid_count() const;
};

/// Builds one batch from all given dialogues. ContractError on an empty input
/// or a dialogue without utterances; DimensionError on inconsistent features.
DialogueBatch make_batch(std::span<const Dialogue> dialogues);
/// Consecutive chunks of at most max_batch dialogues, order preserved.
std::vector<DialogueBatch> pad_batch(std::span<const Dialogue> dialogues, std::size_t max_batch);

// ---- splits -----------------------------------------------------------------------

struct DatasetSplit {
  FeatureHeader header;
  std::vector<Dialogue> train;
  std::vector<Dialogue> validation;
  std::vector<Dialogue> test;

  std::vector<std::size_t> class_counts(std::span<const Dialogue> part) const {
    return data::class_counts(part, header.num_classes);
  }
};

/// Dialogues whose id is in ids go to .first, the rest to .second; order kept.
std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_by_ids(std::span<const Dialogue> dialogues,
                                                                     const std::set<std::string>& ids);

/// Carves a validation share out of a training pool with a seeded shuffle of
/// dialogue ids. At least one dialogue stays on each side when the pool has two or more.
std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_train_validation(std::span<const Dialogue> pool,
                                                                               double validation_fraction,
                                                                               std::uint64_t seed);

// ---- synthetic dialogues ------------------------------------------------------------

enum class ModalityMode { both, text_only_informative, audio_only_informative, complementary };

std::string to_string(ModalityMode mode);
/// Accepts both "text-only-informative" and "text_only_informative" spellings.
ModalityMode parse_modality_mode(const std::string& name);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t f_t = 64;
  std::size_t f_a = 64;
  std::size_t train_dialogues = 100;
  std::size_t validation_dialogues = 20;
  std::size_t test_dialogues = 40;
  std::size_t min_len = 4;
  std::size_t max_len = 12;
  /// Norm of each class centre; 0 removes all class signal.
  double separation = 3.0;
  double noise = 1.0;
  ModalityMode mode = ModalityMode::both;
};

/// Gaussian class clusters per modality, deterministic in seed.
///
/// complementary mode: text centres distinguish classes 0 and 1 while every
/// class >= 2 draws its text from one of those two centres at random; audio
/// gives each class >= 2 its own centre while classes 0 and 1 share one.
/// Neither modality alone identifies the class; both together do.
DatasetSplit synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace lpgnet::data
