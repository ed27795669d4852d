#include "lpgnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "lpgnet/errors.hpp"
#include "lpgnet/rng.hpp"

namespace lpgnet::data {

using nlohmann::json;

std::size_t Dataset::utterance_count() const { return data::utterance_count(dialogues); }

std::size_t utterance_count(std::span<const Dialogue> dialogues) {
  std::size_t n = 0;
  for (const auto& d : dialogues) n += d.utterances.size();
  return n;
}

std::vector<std::size_t> class_counts(std::span<const Dialogue> dialogues, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& d : dialogues)
    for (const auto& u : d.utterances)
      if (u.label >= 0 && static_cast<std::size_t>(u.label) < num_classes) ++counts[static_cast<std::size_t>(u.label)];
  return counts;
}

// ---- LPG-JSONL ----------------------------------------------------------------

namespace {

std::vector<double> read_vector(const json& j, std::size_t expected, const char* field, std::size_t line) {
  if (!j.is_array()) throw ParseError(line, std::string("field '") + field + "' must be an array");
  if (j.size() != expected) {
    throw SchemaError("line " + std::to_string(line) + ": field '" + field + "' has " + std::to_string(j.size()) +
                      " values, header declares " + std::to_string(expected));
  }
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError(line, std::string("non-numeric entry in '") + field + "'");
    v.push_back(x.get<double>());
  }
  return v;
}

std::size_t read_positive(const json& h, const char* key, std::size_t line) {
  if (!h.contains(key) || !h[key].is_number_integer() || h[key].get<long long>() <= 0) {
    throw ParseError(line, std::string("header field '") + key + "' must be a positive integer");
  }
  return h[key].get<std::size_t>();
}

}  // namespace

Dataset read_feature_stream(std::istream& in) {
  Dataset ds;
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");

    if (!have_header) {
      if (!j.contains("version") || j["version"] != 1) throw ParseError(line, "header must declare \"version\":1");
      ds.header.f_t = read_positive(j, "f_t", line);
      ds.header.f_a = read_positive(j, "f_a", line);
      ds.header.num_classes = read_positive(j, "num_classes", line);
      if (j.contains("labels")) {
        if (!j["labels"].is_array()) throw ParseError(line, "header field 'labels' must be an array");
        for (const auto& l : j["labels"]) {
          if (!l.is_string()) throw ParseError(line, "label names must be strings");
          ds.header.labels.push_back(l.get<std::string>());
        }
        if (ds.header.labels.size() != ds.header.num_classes) {
          throw SchemaError("header lists " + std::to_string(ds.header.labels.size()) + " label names for " +
                            std::to_string(ds.header.num_classes) + " classes");
        }
      }
      have_header = true;
      continue;
    }

    Dialogue d;
    if (!j.contains("id") || !j["id"].is_string()) throw ParseError(line, "dialogue needs a string 'id'");
    d.id = j["id"].get<std::string>();
    if (!j.contains("utterances") || !j["utterances"].is_array()) {
      throw ParseError(line, "dialogue needs an 'utterances' array");
    }
    for (const auto& u : j["utterances"]) {
      if (!u.is_object() || !u.contains("t") || !u.contains("a") || !u.contains("y")) {
        throw ParseError(line, "utterance needs fields 't', 'a' and 'y'");
      }
      if (!u["y"].is_number_integer()) throw ParseError(line, "label 'y' must be an integer");
      UtteranceRecord r;
      r.text = read_vector(u["t"], ds.header.f_t, "t", line);
      r.audio = read_vector(u["a"], ds.header.f_a, "a", line);
      const long long y = u["y"].get<long long>();
      if (y < 0 || static_cast<std::size_t>(y) >= ds.header.num_classes) {
        throw SchemaError("line " + std::to_string(line) + ": unknown label id " + std::to_string(y));
      }
      r.label = static_cast<int>(y);
      d.utterances.push_back(std::move(r));
    }
    ds.dialogues.push_back(std::move(d));
  }
  if (!have_header) throw ParseError(line + 1, "missing header line");
  return ds;
}

Dataset load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open feature file " + path.string());
  return read_feature_stream(in);
}

void write_feature_stream(std::ostream& out, const Dataset& dataset) {
  const auto& h = dataset.header;
  json header = {{"version", 1}, {"f_t", h.f_t}, {"f_a", h.f_a}, {"num_classes", h.num_classes}};
  header["labels"] = h.labels;
  out << header.dump() << '\n';
  for (const auto& d : dataset.dialogues) {
    json utts = json::array();
    for (const auto& u : d.utterances) utts.push_back({{"t", u.text}, {"a", u.audio}, {"y", u.label}});
    out << json{{"id", d.id}, {"utterances", std::move(utts)}}.dump() << '\n';
  }
}

void write_feature_file(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write feature file " + path.string());
  write_feature_stream(out, dataset);
}

// ---- batching ----------------------------------------------------------------

std::vector<std::uint8_t> DialogueBatch::valid() const {
  std::vector<std::uint8_t> v(mask.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] != 0.0;
  return v;
}

std::size_t DialogueBatch::valid_count() const {
  std::size_t n = 0;
  for (auto l : lengths) n += l;
  return n;
}

DialogueBatch make_batch(std::span<const Dialogue> dialogues) {
  if (dialogues.empty()) throw ContractError("cannot build a batch from zero dialogues");
  std::size_t max_len = 0;
  for (const auto& d : dialogues) {
    if (d.utterances.empty()) throw ContractError("dialogue '" + d.id + "' has no utterances");
    max_len = std::max(max_len, d.utterances.size());
  }
  const std::size_t f_t = dialogues[0].utterances[0].text.size();
  const std::size_t f_a = dialogues[0].utterances[0].audio.size();
  if (f_t == 0 || f_a == 0) throw DimensionError("utterance features must be non-empty");
  const std::size_t b = dialogues.size();

  std::vector<double> text(b * max_len * f_t, 0.0), audio(b * max_len * f_a, 0.0), mask(b * max_len, 0.0);
  DialogueBatch out;
  out.labels.assign(b * max_len, kPadLabel);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& d = dialogues[i];
    out.lengths.push_back(d.utterances.size());
    out.ids.push_back(d.id);
    for (std::size_t u = 0; u < d.utterances.size(); ++u) {
      const auto& r = d.utterances[u];
      if (r.text.size() != f_t || r.audio.size() != f_a) {
        throw DimensionError("dialogue '" + d.id + "' utterance " + std::to_string(u) +
                             " has inconsistent feature dimensions");
      }
      std::copy(r.text.begin(), r.text.end(), text.begin() + static_cast<std::ptrdiff_t>((i * max_len + u) * f_t));
      std::copy(r.audio.begin(), r.audio.end(), audio.begin() + static_cast<std::ptrdiff_t>((i * max_len + u) * f_a));
      mask[i * max_len + u] = 1.0;
      out.labels[i * max_len + u] = r.label;
    }
  }
  out.text = Tensor({b, max_len, f_t}, std::move(text));
  out.audio = Tensor({b, max_len, f_a}, std::move(audio));
  out.mask = Tensor({b, max_len}, std::move(mask));
  return out;
}

std::vector<DialogueBatch> pad_batch(std::span<const Dialogue> dialogues, std::size_t max_batch) {
  if (max_batch == 0) throw ContractError("max_batch must be at least 1");
  std::vector<DialogueBatch> batches;
  for (std::size_t start = 0; start < dialogues.size(); start += max_batch) {
    const std::size_t n = std::min(max_batch, dialogues.size() - start);
    batches.push_back(make_batch(dialogues.subspan(start, n)));
  }
  return batches;
}

// ---- splits ------------------------------------------------------------------

std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_by_ids(std::span<const Dialogue> dialogues,
                                                                     const std::set<std::string>& ids) {
  std::pair<std::vector<Dialogue>, std::vector<Dialogue>> out;
  for (const auto& d : dialogues) (ids.contains(d.id) ? out.first : out.second).push_back(d);
  return out;
}

std::pair<std::vector<Dialogue>, std::vector<Dialogue>> split_train_validation(std::span<const Dialogue> pool,
                                                                               double validation_fraction,
                                                                               std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ContractError("validation fraction must lie in (0, 1)");
  }
  std::vector<std::string> ids;
  for (const auto& d : pool) ids.push_back(d.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(seed, "data.validation_split");
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);

  std::size_t n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(ids.size())));
  if (ids.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
  const std::set<std::string> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  auto [val, train] = split_by_ids(pool, val_ids);
  return {std::move(train), std::move(val)};
}

// ---- synthetic ---------------------------------------------------------------

std::string to_string(ModalityMode mode) {
  switch (mode) {
    case ModalityMode::both: return "both";
    case ModalityMode::text_only_informative: return "text-only-informative";
    case ModalityMode::audio_only_informative: return "audio-only-informative";
    case ModalityMode::complementary: return "complementary";
  }
  return "both";
}

ModalityMode parse_modality_mode(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  for (auto m : {ModalityMode::both, ModalityMode::text_only_informative, ModalityMode::audio_only_informative,
                 ModalityMode::complementary}) {
    if (to_string(m) == n) return m;
  }
  throw ContractError("unknown modality mode '" + name + "'");
}

namespace {

std::vector<double> random_direction(std::size_t dim, double norm, Rng& rng) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double s = sq > 0 ? norm / std::sqrt(sq) : 0.0;
  for (auto& x : v) x *= s;
  return v;
}

// Centre table indexed [class][variant]; a class draws one variant per utterance.
using Centres = std::vector<std::vector<std::vector<double>>>;

std::vector<Dialogue> generate_part(const SynthSpec& spec, const Centres& text, const Centres& audio,
                                    std::size_t count, const std::string& prefix, Rng& rng) {
  std::vector<Dialogue> out;
  out.reserve(count);
  const std::size_t span = spec.max_len - spec.min_len + 1;
  for (std::size_t i = 0; i < count; ++i) {
    Dialogue d;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05zu", prefix.c_str(), i);
    d.id = buf;
    const std::size_t len = spec.min_len + rng.below(span);
    for (std::size_t u = 0; u < len; ++u) {
      UtteranceRecord r;
      const auto c = rng.below(spec.classes);
      r.label = static_cast<int>(c);
      const auto& tc = text[c][rng.below(text[c].size())];
      const auto& ac = audio[c][rng.below(audio[c].size())];
      r.text.resize(spec.f_t);
      r.audio.resize(spec.f_a);
      for (std::size_t k = 0; k < spec.f_t; ++k) r.text[k] = tc[k] + spec.noise * rng.normal();
      for (std::size_t k = 0; k < spec.f_a; ++k) r.audio[k] = ac[k] + spec.noise * rng.normal();
      d.utterances.push_back(std::move(r));
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

DatasetSplit synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw ContractError("synthetic data needs at least 2 classes");
  if (spec.f_t == 0 || spec.f_a == 0) throw ContractError("feature dimensions must be positive");
  if (spec.min_len == 0 || spec.max_len < spec.min_len) throw ContractError("invalid dialogue length range");
  if (spec.separation < 0 || spec.noise < 0) throw ContractError("separation and noise must be non-negative");
  if (spec.mode == ModalityMode::complementary && spec.classes < 3) {
    throw ContractError("complementary mode needs at least 3 classes");
  }

  Rng centre_rng(seed, "synth.centres");
  const std::size_t c = spec.classes;
  Centres text(c), audio(c);
  const std::vector<double> zero_t(spec.f_t, 0.0), zero_a(spec.f_a, 0.0);
  std::vector<std::vector<double>> t_own, a_own;
  for (std::size_t k = 0; k < c; ++k) t_own.push_back(random_direction(spec.f_t, spec.separation, centre_rng));
  for (std::size_t k = 0; k < c; ++k) a_own.push_back(random_direction(spec.f_a, spec.separation, centre_rng));
  const auto a_shared = random_direction(spec.f_a, spec.separation, centre_rng);

  for (std::size_t k = 0; k < c; ++k) {
    switch (spec.mode) {
      case ModalityMode::both:
        text[k] = {t_own[k]};
        audio[k] = {a_own[k]};
        break;
      case ModalityMode::text_only_informative:
        text[k] = {t_own[k]};
        audio[k] = {zero_a};
        break;
      case ModalityMode::audio_only_informative:
        text[k] = {zero_t};
        audio[k] = {a_own[k]};
        break;
      case ModalityMode::complementary:
        text[k] = k < 2 ? Centres::value_type{t_own[k]} : Centres::value_type{t_own[0], t_own[1]};
        audio[k] = k < 2 ? Centres::value_type{a_shared} : Centres::value_type{a_own[k]};
        break;
    }
  }

  DatasetSplit split;
  split.header.f_t = spec.f_t;
  split.header.f_a = spec.f_a;
  split.header.num_classes = c;
  for (std::size_t k = 0; k < c; ++k) split.header.labels.push_back("class" + std::to_string(k));

  Rng train_rng(seed, "synth.train"), val_rng(seed, "synth.validation"), test_rng(seed, "synth.test");
  split.train = generate_part(spec, text, audio, spec.train_dialogues, "train", train_rng);
  split.validation = generate_part(spec, text, audio, spec.validation_dialogues, "val", val_rng);
  split.test = generate_part(spec, text, audio, spec.test_dialogues, "test", test_rng);
  return split;
}

}  // namespace lpgnet::data
