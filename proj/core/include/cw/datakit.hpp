#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace cw {

struct EntityTag {
  std::string span;
  std::string type;  // GPE | ORG | NUM | PER
};

struct Example {
  std::string id;
  std::string lang;  // ISO-639-1 style code
  std::string text;
  std::optional<int> label;  // 1 = check-worthy
  std::optional<std::string> topic_gold;
  std::vector<EntityTag> entity_tags;
};

struct Corpus {
  std::string name;   // e.g. "synth.ar.train"
  std::string split;  // train | dev | test | unlabeled
  std::vector<Example> examples;

  void validate() const;  // unique ids, langs non-empty, labels in {0,1}
  size_t size() const { return examples.size(); }
};

// Drops URL tokens and @-mentions, strips one leading "RT @user" marker, and
// collapses whitespace. Idempotent; never lengthens the text.
std::string clean_text(const std::string& text);

// Whitespace tokenizer over a vocabulary shared across languages, with the
// reserved ids below. Unknown tokens map to [UNK].
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecial = 4;

  Tokenizer();

  static Tokenizer build(const std::vector<const Corpus*>& corpora);
  static Tokenizer build_from_texts(const std::vector<std::string>& texts);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  std::vector<int> tokenize(const std::string& text) const;  // no [CLS], unpadded
  // Prepends [CLS], then pads with [PAD] or truncates at the tail to exactly max_len.
  static std::vector<int> pad_truncate(std::vector<int> ids, int max_len = 128);
  // clean -> tokenize -> pad_truncate; the canonical model-input path
  std::vector<int> encode(const std::string& text, int max_len = 128) const;
  std::string detokenize(const std::vector<int>& ids) const;  // skips special ids
  int id_of(const std::string& token) const;

  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);

 private:
  void add_token(const std::string& tok);
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

enum class CorpusFormat { tsv, jsonl };

CorpusFormat corpus_format_from_string(const std::string& s);
CorpusFormat guess_corpus_format(const std::string& path);

// tsv columns: id, lang, text, label[, topic_gold]; label may be "-" for
// unlabeled rows. jsonl rows may additionally carry entity_tags.
Corpus load_corpus(const std::string& path, CorpusFormat format);
void save_corpus(const Corpus& corpus, const std::string& path, CorpusFormat format);

struct PredictionRow {
  std::string id;
  std::string lang;
  double score = 0.0;
  int pred_label = 0;
};

void save_predictions(const std::string& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> load_predictions(const std::string& path);

struct CorpusStats {
  long total = 0;
  long labeled = 0;
  long cw = 0;
  double pct_cw = 0.0;  // of labeled rows
};

CorpusStats corpus_stats(const Corpus& corpus);

std::vector<std::string> split_whitespace(const std::string& text);

}  // namespace cw
