#include "cw/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "cw/error.hpp"
#include "cw/rng.hpp"

namespace cw {

using nlohmann::json;
namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (wl_languages.empty()) raise(ErrorCategory::config, "need at least one world language");
  std::set<std::string> wl(wl_languages.begin(), wl_languages.end());
  if (wl.size() != wl_languages.size()) raise(ErrorCategory::config, "duplicate world language");
  for (const std::string& z : zs_languages) {
    if (wl.count(z)) raise(ErrorCategory::config, "language '" + z + "' cannot be both WL and zero-shot");
  }
  if (n_topics_global < static_cast<int>(wl_languages.size()) ||
      n_topics_global % static_cast<int>(wl_languages.size()) != 0) {
    raise(ErrorCategory::config, "n_topics_global must be a positive multiple of the WL count");
  }
  if (n_topics_local_per_lang < 0) raise(ErrorCategory::config, "negative n_topics_local_per_lang");
  if (train_per_wl < 1 || dev_per_wl < 1 || test_per_lang < 1) {
    raise(ErrorCategory::config, "split sizes must be positive");
  }
  if (cw_rate <= 0.0 || cw_rate >= 1.0) raise(ErrorCategory::config, "cw_rate must be in (0, 1)");
  if (local_test_frac < 0.0 || local_test_frac >= 1.0) raise(ErrorCategory::config, "local_test_frac must be in [0, 1)");
  if (mlm_local_frac < 0.0 || mlm_local_frac >= 1.0) raise(ErrorCategory::config, "mlm_local_frac must be in [0, 1)");
  if (train_offhome_frac < 0.0 || train_offhome_frac >= 1.0) {
    raise(ErrorCategory::config, "train_offhome_frac must be in [0, 1)");
  }
  if (zs_primary_mass <= 0.0 || zs_primary_mass >= 1.0) raise(ErrorCategory::config, "zs_primary_mass must be in (0, 1)");
  if (anchors_per_example < 1 || anchors_per_example > anchor_tokens_per_topic) {
    raise(ErrorCategory::config, "anchors_per_example must be in [1, anchor_tokens_per_topic]");
  }
  if (confusable_overlap < 0 || confusable_overlap >= anchor_tokens_per_topic) {
    raise(ErrorCategory::config, "confusable_overlap must be in [0, anchor_tokens_per_topic)");
  }
  if (confusable_overlap > 0 && n_topics_global / static_cast<int>(wl_languages.size()) < 2) {
    raise(ErrorCategory::config, "confusable_overlap needs at least 2 topics per WL home group");
  }
  if (surface_per_example < 1 || surface_per_example > surface_vocab_per_lang) {
    raise(ErrorCategory::config, "surface_per_example must be in [1, surface_vocab_per_lang]");
  }
}

const TopicInfo& SynthData::topic_info(const std::string& topic_id) const {
  for (const TopicInfo& t : topics) {
    if (t.id == topic_id) return t;
  }
  raise(ErrorCategory::index, "unknown topic '" + topic_id + "'");
}

bool SynthData::topic_is_global(const std::string& topic_id) const { return topic_info(topic_id).global; }

std::vector<int> apportion(int n, const std::vector<double>& weights) {
  if (weights.empty()) raise(ErrorCategory::config, "apportion: no buckets");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) raise(ErrorCategory::config, "apportion: negative weight");
    total += w;
  }
  if (total <= 0.0) raise(ErrorCategory::config, "apportion: zero total weight");
  std::vector<int> counts(weights.size(), 0);
  std::vector<std::pair<double, size_t>> remainders;
  int assigned = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double exact = n * weights[i] / total;
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n - assigned; ++k) counts[remainders[static_cast<size_t>(k)].second] += 1;
  return counts;
}

namespace {

constexpr const char* kCueToken = "cue";
const char* kEntityTypes[4] = {"GPE", "ORG", "NUM", "PER"};

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ULL;
  }
  return h;
}

struct Slot {
  std::string topic;
  bool cue = false;
  bool label = false;
};

std::vector<std::string> sample_distinct(const std::vector<std::string>& pool, int k, Rng& rng) {
  std::vector<size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const size_t j = static_cast<size_t>(i) + static_cast<size_t>(rng.next_u64() % (idx.size() - static_cast<size_t>(i)));
    std::swap(idx[static_cast<size_t>(i)], idx[j]);
  }
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(pool[idx[static_cast<size_t>(i)]]);
  return out;
}

// Assigns cue flags so that exactly round(cw_rate * n) check-worthy-topic
// slots carry the cue (these become label 1), and non-CW-topic slots carry
// the cue at the same per-topic rate (label stays 0), keeping the cue
// uninformative about the topic class.
void assign_cues(std::vector<Slot>& slots, double cw_rate, const std::map<std::string, bool>& topic_cw,
                 const std::string& where) {
  const int n = static_cast<int>(slots.size());
  const int n_cw = static_cast<int>(std::lround(cw_rate * n));
  std::map<std::string, std::vector<size_t>> by_topic;
  for (size_t i = 0; i < slots.size(); ++i) by_topic[slots[i].topic].push_back(i);

  long eligible = 0, other = 0;
  for (const auto& [topic, idxs] : by_topic) {
    (topic_cw.at(topic) ? eligible : other) += static_cast<long>(idxs.size());
  }
  if (n_cw > eligible) {
    raise(ErrorCategory::config, "cw_rate unreachable in " + where + ": need " + std::to_string(n_cw) +
                                     " check-worthy slots, only " + std::to_string(eligible) +
                                     " on check-worthy topics");
  }
  const double rate = eligible > 0 ? static_cast<double>(n_cw) / static_cast<double>(eligible) : 0.0;

  // per-topic largest-remainder allocation of cue flags
  std::vector<std::string> cw_topics, other_topics;
  std::vector<double> cw_weights, other_weights;
  for (const auto& [topic, idxs] : by_topic) {
    if (topic_cw.at(topic)) {
      cw_topics.push_back(topic);
      cw_weights.push_back(static_cast<double>(idxs.size()));
    } else {
      other_topics.push_back(topic);
      other_weights.push_back(static_cast<double>(idxs.size()));
    }
  }
  if (!cw_topics.empty() && n_cw > 0) {
    std::vector<int> counts = apportion(n_cw, cw_weights);
    for (size_t t = 0; t < cw_topics.size(); ++t) {
      const auto& idxs = by_topic[cw_topics[t]];
      const int take = std::min<int>(counts[t], static_cast<int>(idxs.size()));
      for (int i = 0; i < take; ++i) {
        slots[idxs[static_cast<size_t>(i)]].cue = true;
        slots[idxs[static_cast<size_t>(i)]].label = true;
      }
    }
  }
  if (!other_topics.empty() && other > 0) {
    const int n_other_cue = static_cast<int>(std::lround(rate * static_cast<double>(other)));
    if (n_other_cue > 0) {
      std::vector<int> counts = apportion(n_other_cue, other_weights);
      for (size_t t = 0; t < other_topics.size(); ++t) {
        const auto& idxs = by_topic[other_topics[t]];
        const int take = std::min<int>(counts[t], static_cast<int>(idxs.size()));
        for (int i = 0; i < take; ++i) slots[idxs[static_cast<size_t>(i)]].cue = true;
      }
    }
  }
}

}  // namespace

SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthData data;
  data.config = cfg;
  Rng root(cfg.seed);

  const int n_wl = static_cast<int>(cfg.wl_languages.size());
  const int group_size = cfg.n_topics_global / n_wl;

  std::vector<std::string> all_langs = cfg.wl_languages;
  all_langs.insert(all_langs.end(), cfg.zs_languages.begin(), cfg.zs_languages.end());

  // topic roster: contiguous home blocks per WL; one check-worthy topic per
  // block start so no WL owns all of the check-worthy class
  std::map<std::string, bool> topic_cw;
  std::vector<std::string> global_ids;
  for (int i = 0; i < cfg.n_topics_global; ++i) {
    TopicInfo t;
    t.id = "g" + std::to_string(i);
    t.global = true;
    t.cw_class = (i % group_size) == 0;
    t.owner_lang = cfg.wl_languages[static_cast<size_t>(i / group_size)];
    topic_cw[t.id] = t.cw_class;
    global_ids.push_back(t.id);
    data.topics.push_back(std::move(t));
  }
  std::map<std::string, std::vector<std::string>> local_ids;  // lang -> topic ids
  for (size_t li = 0; li < all_langs.size(); ++li) {
    for (int j = 0; j < cfg.n_topics_local_per_lang; ++j) {
      TopicInfo t;
      t.id = "loc." + all_langs[li] + "." + std::to_string(j);
      t.global = false;
      t.cw_class = (li + static_cast<size_t>(j)) % 2 == 0;
      t.owner_lang = all_langs[li];
      topic_cw[t.id] = t.cw_class;
      local_ids[all_langs[li]].push_back(t.id);
      data.topics.push_back(std::move(t));
    }
  }
  for (int w = 0; w < n_wl; ++w) {
    std::vector<std::string> home(global_ids.begin() + w * group_size,
                                  global_ids.begin() + (w + 1) * group_size);
    data.wl_train_topics[cfg.wl_languages[static_cast<size_t>(w)]] = home;
  }

  // token pools; each check-worthy topic swaps its trailing anchors for a
  // block shared with a non-check-worthy partner homed in the next WL
  std::map<std::string, std::vector<std::string>> anchor_pool;
  for (const TopicInfo& t : data.topics) {
    std::vector<std::string> pool;
    for (int k = 0; k < cfg.anchor_tokens_per_topic; ++k) {
      pool.push_back(t.id + ".a" + std::to_string(k));
    }
    anchor_pool[t.id] = std::move(pool);
  }
  if (cfg.confusable_overlap > 0) {
    int pair_id = 0;
    for (int w = 0; w < n_wl; ++w) {
      const std::string cw_topic = "g" + std::to_string(w * group_size);
      const int partner_index = ((w + 1) % n_wl) * group_size + 1;
      const std::string partner = "g" + std::to_string(partner_index);
      for (int k = 0; k < cfg.confusable_overlap; ++k) {
        const std::string shared = "cfa" + std::to_string(pair_id) + ".a" + std::to_string(k);
        anchor_pool[cw_topic][static_cast<size_t>(cfg.anchor_tokens_per_topic - 1 - k)] = shared;
        anchor_pool[partner][static_cast<size_t>(cfg.anchor_tokens_per_topic - 1 - k)] = shared;
      }
      ++pair_id;
    }
  }
  std::map<std::string, std::vector<std::string>> surface_pool;
  for (const std::string& lang : all_langs) {
    std::vector<std::string> pool;
    for (int k = 0; k < cfg.surface_vocab_per_lang; ++k) {
      pool.push_back(lang + ".s" + std::to_string(k));
    }
    surface_pool[lang] = std::move(pool);
  }

  auto make_text = [&](const std::string& lang, const Slot& slot, Rng& rng) {
    std::vector<std::string> tokens = sample_distinct(anchor_pool.at(slot.topic), cfg.anchors_per_example, rng);
    std::vector<std::string> surf = sample_distinct(surface_pool.at(lang), cfg.surface_per_example, rng);
    tokens.insert(tokens.end(), surf.begin(), surf.end());
    if (slot.cue) tokens.push_back(kCueToken);
    rng.shuffle(tokens);
    std::string text;
    for (const std::string& t : tokens) {
      if (!text.empty()) text += ' ';
      text += t;
    }
    return text;
  };

  auto topic_slots = [&](const std::vector<std::string>& topic_list, const std::vector<double>& weights,
                         int n, const std::string& where, bool require_all) {
    std::vector<int> counts = apportion(n, weights);
    if (require_all) {
      for (size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] < 1) {
          raise(ErrorCategory::config,
                where + ": split too small to cover planted topic '" + topic_list[i] + "'");
        }
      }
    }
    std::vector<Slot> slots;
    for (size_t i = 0; i < topic_list.size(); ++i) {
      for (int k = 0; k < counts[i]; ++k) slots.push_back({topic_list[i], false, false});
    }
    return slots;
  };

  auto build_corpus = [&](const std::string& lang, const std::string& split, std::vector<Slot> slots,
                          Rng& rng, bool with_entities) {
    assign_cues(slots, cfg.cw_rate, topic_cw, lang + "." + split);
    rng.shuffle(slots);
    Corpus corpus;
    corpus.name = "synth." + lang + "." + split;
    corpus.split = split;
    for (size_t i = 0; i < slots.size(); ++i) {
      Example e;
      e.id = lang + "." + split + "." + std::to_string(i);
      e.lang = lang;
      e.text = make_text(lang, slots[i], rng);
      e.label = slots[i].label ? 1 : 0;
      e.topic_gold = slots[i].topic;
      if (with_entities) {
        // deterministic stand-in entity annotation keyed off the topic
        const std::string& topic = slots[i].topic;
        size_t h = 0;
        for (char c : topic) h = h * 131 + static_cast<size_t>(c);
        const std::string span = split_whitespace(e.text).front();
        e.entity_tags.push_back({span, kEntityTypes[h % 4]});
      }
      data.gold_topic[e.id] = slots[i].topic;
      corpus.examples.push_back(std::move(e));
    }
    corpus.validate();
    return corpus;
  };

  // world-language train/dev: dominated by the home topic group, with a
  // minority drawn from the other WLs' topics
  for (const std::string& wl : cfg.wl_languages) {
    Rng rng = root.fork(Rng::mix(1, fnv1a(wl)));
    const std::vector<std::string>& home = data.wl_train_topics[wl];
    std::vector<double> weights(global_ids.size(), 0.0);
    for (int i = 0; i < cfg.n_topics_global; ++i) {
      const bool is_home = std::find(home.begin(), home.end(), global_ids[static_cast<size_t>(i)]) != home.end();
      weights[static_cast<size_t>(i)] =
          is_home ? (1.0 - cfg.train_offhome_frac) / static_cast<double>(home.size())
                  : cfg.train_offhome_frac / static_cast<double>(cfg.n_topics_global - home.size());
    }
    const bool require_all = cfg.train_offhome_frac > 0.0;
    data.train[wl] = build_corpus(
        wl, "train", topic_slots(global_ids, weights, cfg.train_per_wl, wl + ".train", require_all), rng, false);
    data.dev[wl] =
        build_corpus(wl, "dev", topic_slots(global_ids, weights, cfg.dev_per_wl, wl + ".dev", false), rng, false);
  }

  // tests: every language sees every global topic; zero-shot languages put
  // zs_primary_mass of their test on their primary WL's home topics
  auto test_weights = [&](const std::string& lang) {
    std::vector<double> w(global_ids.size(), 1.0);
    auto zs_it = std::find(cfg.zs_languages.begin(), cfg.zs_languages.end(), lang);
    if (zs_it != cfg.zs_languages.end()) {
      const int zi = static_cast<int>(zs_it - cfg.zs_languages.begin());
      const int primary = zi % n_wl;
      const double rest = (1.0 - cfg.zs_primary_mass) / static_cast<double>(n_wl - 1);
      for (int i = 0; i < cfg.n_topics_global; ++i) {
        const int grp = i / group_size;
        w[static_cast<size_t>(i)] = (grp == primary ? cfg.zs_primary_mass : rest) / group_size;
      }
    }
    return w;
  };

  for (const std::string& lang : all_langs) {
    Rng rng = root.fork(Rng::mix(2, fnv1a(lang)));
    const std::vector<std::string>& locals = local_ids[lang];
    const int n_local = locals.empty() ? 0 : static_cast<int>(std::lround(cfg.local_test_frac * cfg.test_per_lang));
    const int n_global = cfg.test_per_lang - n_local;
    std::vector<Slot> slots = topic_slots(global_ids, test_weights(lang), n_global, lang + ".test", true);
    if (n_local > 0) {
      std::vector<double> uniform(locals.size(), 1.0);
      std::vector<Slot> loc = topic_slots(locals, uniform, n_local, lang + ".test(local)", true);
      slots.insert(slots.end(), loc.begin(), loc.end());
    }
    data.test[lang] = build_corpus(lang, "test", std::move(slots), rng, true);
  }

  // unlabeled text per language: like the test split but with a richer
  // local-topic share
  for (const std::string& lang : all_langs) {
    Rng rng = root.fork(Rng::mix(3, fnv1a(lang)));
    const std::vector<std::string>& locals = local_ids[lang];
    const int n_local = locals.empty() ? 0 : static_cast<int>(std::lround(cfg.mlm_local_frac * cfg.mlm_texts_per_lang));
    const int n_global = cfg.mlm_texts_per_lang - n_local;
    std::vector<Slot> slots = topic_slots(global_ids, test_weights(lang), n_global, lang + ".mlm", false);
    if (n_local > 0) {
      std::vector<double> uniform(locals.size(), 1.0);
      std::vector<Slot> loc = topic_slots(locals, uniform, n_local, lang + ".mlm(local)", false);
      slots.insert(slots.end(), loc.begin(), loc.end());
    }
    // unlabeled text: the cue token just needs pretraining exposure, so it
    // lands on a fixed fraction of slots regardless of topic class
    const int n_cued = static_cast<int>(std::lround(cfg.cw_rate * static_cast<double>(slots.size())));
    for (int i = 0; i < n_cued && i < static_cast<int>(slots.size()); ++i) slots[static_cast<size_t>(i)].cue = true;
    rng.shuffle(slots);
    std::vector<std::string> texts;
    texts.reserve(slots.size());
    for (const Slot& s : slots) texts.push_back(make_text(lang, s, rng));
    data.mlm_texts[lang] = std::move(texts);
  }

  // planted share of each WL's training topics in the zero-shot tests
  for (const std::string& zs : cfg.zs_languages) {
    const Corpus& test = data.test.at(zs);
    for (const std::string& wl : cfg.wl_languages) {
      const std::vector<std::string>& home = data.wl_train_topics[wl];
      long hits = 0;
      for (const Example& e : test.examples) {
        if (std::find(home.begin(), home.end(), *e.topic_gold) != home.end()) ++hits;
      }
      data.zs_train_share[zs][wl] = static_cast<double>(hits) / static_cast<double>(test.examples.size());
    }
  }
  return data;
}

std::string synth_corpus_filename(const std::string& lang, const std::string& split) {
  const std::string ext = split == "test" ? ".jsonl" : ".tsv";
  return "synth." + lang + "." + split + ext;
}

void save_synth(const SynthData& data, const std::string& dir) {
  fs::create_directories(dir);
  for (const auto& [lang, corpus] : data.train) {
    save_corpus(corpus, (fs::path(dir) / synth_corpus_filename(lang, "train")).string(), CorpusFormat::tsv);
  }
  for (const auto& [lang, corpus] : data.dev) {
    save_corpus(corpus, (fs::path(dir) / synth_corpus_filename(lang, "dev")).string(), CorpusFormat::tsv);
  }
  for (const auto& [lang, corpus] : data.test) {
    save_corpus(corpus, (fs::path(dir) / synth_corpus_filename(lang, "test")).string(), CorpusFormat::jsonl);
  }
  for (const auto& [lang, texts] : data.mlm_texts) {
    std::ofstream os(fs::path(dir) / ("synth." + lang + ".mlm.txt"), std::ios::trunc);
    if (!os) raise(ErrorCategory::io, "cannot write mlm corpus for " + lang);
    for (const std::string& t : texts) os << t << '\n';
  }
  {
    std::ofstream os(fs::path(dir) / "gold_topics.tsv", std::ios::trunc);
    if (!os) raise(ErrorCategory::io, "cannot write gold topic map");
    for (const auto& [id, topic] : data.gold_topic) {
      const TopicInfo& info = data.topic_info(topic);
      os << id << '\t' << topic << '\t' << (info.global ? "global" : "local") << '\t'
         << (info.cw_class ? 1 : 0) << '\n';
    }
  }
  {
    json stats;
    stats["config"] = json::parse(synth_config_to_json(data.config));
    for (const auto& [zs, shares] : data.zs_train_share) {
      for (const auto& [wl, share] : shares) stats["zs_train_share"][zs][wl] = share;
    }
    for (const auto& [wl, topics] : data.wl_train_topics) stats["wl_train_topics"][wl] = topics;
    json topic_list = json::array();
    for (const TopicInfo& t : data.topics) {
      topic_list.push_back({{"id", t.id}, {"global", t.global}, {"cw_class", t.cw_class}, {"owner", t.owner_lang}});
    }
    stats["topics"] = topic_list;
    std::ofstream os(fs::path(dir) / "stats.json", std::ios::trunc);
    os << stats.dump(2) << '\n';
  }
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  json j;
  j["wl_languages"] = cfg.wl_languages;
  j["zs_languages"] = cfg.zs_languages;
  j["n_topics_global"] = cfg.n_topics_global;
  j["n_topics_local_per_lang"] = cfg.n_topics_local_per_lang;
  j["train_per_wl"] = cfg.train_per_wl;
  j["dev_per_wl"] = cfg.dev_per_wl;
  j["test_per_lang"] = cfg.test_per_lang;
  j["mlm_texts_per_lang"] = cfg.mlm_texts_per_lang;
  j["cw_rate"] = cfg.cw_rate;
  j["local_test_frac"] = cfg.local_test_frac;
  j["mlm_local_frac"] = cfg.mlm_local_frac;
  j["train_offhome_frac"] = cfg.train_offhome_frac;
  j["zs_primary_mass"] = cfg.zs_primary_mass;
  j["anchor_tokens_per_topic"] = cfg.anchor_tokens_per_topic;
  j["anchors_per_example"] = cfg.anchors_per_example;
  j["surface_vocab_per_lang"] = cfg.surface_vocab_per_lang;
  j["surface_per_example"] = cfg.surface_per_example;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

SynthConfig synth_config_from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise(ErrorCategory::io, "cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& ex) {
    raise(ErrorCategory::parse, path + ": " + ex.what());
  }
  SynthConfig cfg;
  try {
    if (j.contains("wl_languages")) cfg.wl_languages = j["wl_languages"].get<std::vector<std::string>>();
    if (j.contains("zs_languages")) cfg.zs_languages = j["zs_languages"].get<std::vector<std::string>>();
    if (j.contains("n_topics_global")) cfg.n_topics_global = j["n_topics_global"].get<int>();
    if (j.contains("n_topics_local_per_lang")) cfg.n_topics_local_per_lang = j["n_topics_local_per_lang"].get<int>();
    if (j.contains("train_per_wl")) cfg.train_per_wl = j["train_per_wl"].get<int>();
    if (j.contains("dev_per_wl")) cfg.dev_per_wl = j["dev_per_wl"].get<int>();
    if (j.contains("test_per_lang")) cfg.test_per_lang = j["test_per_lang"].get<int>();
    if (j.contains("mlm_texts_per_lang")) cfg.mlm_texts_per_lang = j["mlm_texts_per_lang"].get<int>();
    if (j.contains("cw_rate")) cfg.cw_rate = j["cw_rate"].get<double>();
    if (j.contains("local_test_frac")) cfg.local_test_frac = j["local_test_frac"].get<double>();
    if (j.contains("mlm_local_frac")) cfg.mlm_local_frac = j["mlm_local_frac"].get<double>();
    if (j.contains("train_offhome_frac")) cfg.train_offhome_frac = j["train_offhome_frac"].get<double>();
    if (j.contains("zs_primary_mass")) cfg.zs_primary_mass = j["zs_primary_mass"].get<double>();
    if (j.contains("anchor_tokens_per_topic")) cfg.anchor_tokens_per_topic = j["anchor_tokens_per_topic"].get<int>();
    if (j.contains("anchors_per_example")) cfg.anchors_per_example = j["anchors_per_example"].get<int>();
    if (j.contains("surface_vocab_per_lang")) cfg.surface_vocab_per_lang = j["surface_vocab_per_lang"].get<int>();
    if (j.contains("surface_per_example")) cfg.surface_per_example = j["surface_per_example"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  } catch (const json::exception& ex) {
    raise(ErrorCategory::parse, path + ": " + ex.what());
  }
  return cfg;
}

}  // namespace cw
