#include "cw/datakit.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "cw/error.hpp"

namespace cw {

using nlohmann::json;

std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.push_back(text.substr(start, i - start));
  }
  return tokens;
}

namespace {

bool is_url_token(const std::string& t) {
  return t.rfind("http://", 0) == 0 || t.rfind("https://", 0) == 0 || t.rfind("www.", 0) == 0;
}

bool is_mention_token(const std::string& t) { return !t.empty() && t[0] == '@'; }

}  // namespace

std::string clean_text(const std::string& text) {
  std::vector<std::string> tokens = split_whitespace(text);
  size_t start = 0;
  // one leading "RT @user" marker only
  if (tokens.size() >= 2 && tokens[0] == "RT" && is_mention_token(tokens[1])) start = 2;
  std::string out;
  for (size_t i = start; i < tokens.size(); ++i) {
    if (is_url_token(tokens[i]) || is_mention_token(tokens[i])) continue;
    if (!out.empty()) out += ' ';
    out += tokens[i];
  }
  return out;
}

void Corpus::validate() const {
  std::set<std::string> ids;
  for (const Example& e : examples) {
    if (e.lang.empty()) raise(ErrorCategory::validation, "example '" + e.id + "' has empty language code");
    if (e.label && *e.label != 0 && *e.label != 1) {
      raise(ErrorCategory::validation,
            "example '" + e.id + "': label must be 0 or 1, got " + std::to_string(*e.label));
    }
    if (!ids.insert(e.id).second) raise(ErrorCategory::validation, "duplicate example id '" + e.id + "'");
  }
}

Tokenizer::Tokenizer() {
  add_token("[PAD]");
  add_token("[CLS]");
  add_token("[UNK]");
  add_token("[MASK]");
}

void Tokenizer::add_token(const std::string& tok) {
  if (token_to_id_.count(tok)) return;
  token_to_id_[tok] = static_cast<int>(id_to_token_.size());
  id_to_token_.push_back(tok);
}

Tokenizer Tokenizer::build(const std::vector<const Corpus*>& corpora) {
  Tokenizer t;
  for (const Corpus* c : corpora) {
    for (const Example& e : c->examples) {
      for (const std::string& tok : split_whitespace(clean_text(e.text))) t.add_token(tok);
    }
  }
  return t;
}

Tokenizer Tokenizer::build_from_texts(const std::vector<std::string>& texts) {
  Tokenizer t;
  for (const std::string& s : texts) {
    for (const std::string& tok : split_whitespace(clean_text(s))) t.add_token(tok);
  }
  return t;
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& tok : split_whitespace(text)) {
    auto it = token_to_id_.find(tok);
    ids.push_back(it == token_to_id_.end() ? kUnk : it->second);
  }
  return ids;
}

std::vector<int> Tokenizer::pad_truncate(std::vector<int> ids, int max_len) {
  if (max_len < 1) raise(ErrorCategory::config, "max_len must be at least 1");
  std::vector<int> out;
  out.reserve(static_cast<size_t>(max_len));
  out.push_back(kCls);
  for (int id : ids) {
    if (static_cast<int>(out.size()) >= max_len) break;
    out.push_back(id);
  }
  while (static_cast<int>(out.size()) < max_len) out.push_back(kPad);
  return out;
}

std::vector<int> Tokenizer::encode(const std::string& text, int max_len) const {
  return pad_truncate(tokenize(clean_text(text)), max_len);
}

std::string Tokenizer::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < kNumSpecial) continue;
    if (id >= size()) raise(ErrorCategory::index, "token id " + std::to_string(id) + " outside vocabulary");
    if (!out.empty()) out += ' ';
    out += id_to_token_[static_cast<size_t>(id)];
  }
  return out;
}

int Tokenizer::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

void Tokenizer::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCategory::io, "cannot write " + path);
  for (int i = kNumSpecial; i < size(); ++i) os << id_to_token_[static_cast<size_t>(i)] << '\n';
}

Tokenizer Tokenizer::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  Tokenizer t;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) t.add_token(line);
  }
  return t;
}

CorpusFormat corpus_format_from_string(const std::string& s) {
  if (s == "tsv") return CorpusFormat::tsv;
  if (s == "jsonl") return CorpusFormat::jsonl;
  raise(ErrorCategory::config, "unknown corpus format '" + s + "' (expected tsv or jsonl)");
}

CorpusFormat guess_corpus_format(const std::string& path) {
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") return CorpusFormat::jsonl;
  return CorpusFormat::tsv;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t pos = 0;
  while (true) {
    const size_t tab = line.find('\t', pos);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, tab - pos));
    pos = tab + 1;
  }
  return fields;
}

std::optional<int> parse_label(const std::string& s, const std::string& row_id) {
  if (s.empty() || s == "-") return std::nullopt;
  if (s == "0") return 0;
  if (s == "1") return 1;
  raise(ErrorCategory::validation, "row '" + row_id + "': label must be 0 or 1, got '" + s + "'");
}

std::string sanitize_field(std::string s) {
  for (char& c : s) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

Corpus load_corpus_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  Corpus corpus;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_tabs(line);
    if (f.size() < 4) {
      raise(ErrorCategory::parse, path + " line " + std::to_string(line_no) +
                                      ": expected at least 4 tab-separated fields, got " +
                                      std::to_string(f.size()));
    }
    Example e;
    e.id = f[0];
    e.lang = f[1];
    e.text = f[2];
    e.label = parse_label(f[3], e.id);
    if (f.size() >= 5 && !f[4].empty() && f[4] != "-") e.topic_gold = f[4];
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

Corpus load_corpus_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  Corpus corpus;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& ex) {
      raise(ErrorCategory::parse, path + " line " + std::to_string(line_no) + ": " + ex.what());
    }
    Example e;
    try {
      e.id = row.at("id").get<std::string>();
      e.lang = row.at("lang").get<std::string>();
      e.text = row.at("text").get<std::string>();
      if (row.contains("label") && !row["label"].is_null()) {
        const int v = row["label"].get<int>();
        if (v != 0 && v != 1) {
          raise(ErrorCategory::validation, "row '" + e.id + "': label must be 0 or 1, got " + std::to_string(v));
        }
        e.label = v;
      }
      if (row.contains("topic_gold") && !row["topic_gold"].is_null()) {
        e.topic_gold = row["topic_gold"].get<std::string>();
      }
      if (row.contains("entity_tags")) {
        for (const auto& t : row["entity_tags"]) {
          e.entity_tags.push_back({t.at("span").get<std::string>(), t.at("type").get<std::string>()});
        }
      }
    } catch (const json::exception& ex) {
      raise(ErrorCategory::parse, path + " line " + std::to_string(line_no) + ": " + ex.what());
    }
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

}  // namespace

Corpus load_corpus(const std::string& path, CorpusFormat format) {
  Corpus corpus = format == CorpusFormat::tsv ? load_corpus_tsv(path) : load_corpus_jsonl(path);
  corpus.name = path;
  corpus.validate();
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path, CorpusFormat format) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCategory::io, "cannot write " + path);
  if (format == CorpusFormat::tsv) {
    for (const Example& e : corpus.examples) {
      os << sanitize_field(e.id) << '\t' << sanitize_field(e.lang) << '\t' << sanitize_field(e.text) << '\t';
      os << (e.label ? std::to_string(*e.label) : std::string("-"));
      os << '\t' << (e.topic_gold ? sanitize_field(*e.topic_gold) : std::string("-"));
      os << '\n';
    }
  } else {
    for (const Example& e : corpus.examples) {
      json row;
      row["id"] = e.id;
      row["lang"] = e.lang;
      row["text"] = e.text;
      if (e.label) row["label"] = *e.label;
      if (e.topic_gold) row["topic_gold"] = *e.topic_gold;
      if (!e.entity_tags.empty()) {
        json tags = json::array();
        for (const EntityTag& t : e.entity_tags) tags.push_back({{"span", t.span}, {"type", t.type}});
        row["entity_tags"] = tags;
      }
      os << row.dump() << '\n';
    }
  }
  if (!os) raise(ErrorCategory::io, "write failed: " + path);
}

void save_predictions(const std::string& path, const std::vector<PredictionRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) raise(ErrorCategory::io, "cannot write " + path);
  os << "id\tlang\tscore\tpred_label\n";
  os.precision(17);
  for (const PredictionRow& r : rows) {
    os << r.id << '\t' << r.lang << '\t' << r.score << '\t' << r.pred_label << '\n';
  }
}

std::vector<PredictionRow> load_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  std::vector<PredictionRow> rows;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;  // header
    std::vector<std::string> f = split_tabs(line);
    if (f.size() != 4) {
      raise(ErrorCategory::parse, path + " line " + std::to_string(line_no) + ": expected 4 fields");
    }
    rows.push_back({f[0], f[1], std::stod(f[2]), std::stoi(f[3])});
  }
  return rows;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.total = static_cast<long>(corpus.examples.size());
  for (const Example& e : corpus.examples) {
    if (e.label) {
      ++s.labeled;
      if (*e.label == 1) ++s.cw;
    }
  }
  s.pct_cw = s.labeled > 0 ? 100.0 * static_cast<double>(s.cw) / static_cast<double>(s.labeled) : 0.0;
  return s;
}

}  // namespace cw
