#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cw/datakit.hpp"

namespace cw {

// Configuration of the synthetic multilingual suite. Texts mix
// language-specific surface tokens with topic anchor tokens shared across
// languages; the label is "check-worthy topic AND claim cue present", the
// same function in every language, so cross-lingual transfer must flow
// through the shared anchors.
struct SynthConfig {
  std::vector<std::string> wl_languages{"en", "ar", "es"};
  std::vector<std::string> zs_languages{"tr", "bg", "nl"};
  int n_topics_global = 9;         // split into equal per-WL home groups
  int n_topics_local_per_lang = 1; // present only in that language's test split
  int train_per_wl = 240;
  int dev_per_wl = 60;
  int test_per_lang = 120;
  int mlm_texts_per_lang = 240;
  // Fraction of each WL's train/dev drawn from the other WLs' home topics
  // (0 keeps training coverage strictly on the home group).
  double train_offhome_frac = 0.0;
  double cw_rate = 0.25;
  double local_test_frac = 0.15;
  // Unlabeled text covers local topics more richly than the labeled test
  // split so their anchor embeddings get real pretraining exposure.
  double mlm_local_frac = 0.3;
  double zs_primary_mass = 0.6;  // test mass a zero-shot language puts on its primary WL's topics
  // Each check-worthy topic shares this many anchor tokens with a
  // non-check-worthy partner topic homed in another WL, so a task adapter
  // trained on one WL misreads the partner's examples and only
  // input-dependent fusion routing can reconcile the members.
  int confusable_overlap = 3;
  int anchor_tokens_per_topic = 10;
  int anchors_per_example = 6;
  int surface_vocab_per_lang = 30;
  int surface_per_example = 3;
  uint64_t seed = 1;

  void validate() const;
};

struct TopicInfo {
  std::string id;
  bool global = true;
  bool cw_class = false;
  std::string owner_lang;  // home WL of a global topic; the single language of a local one
};

struct SynthData {
  SynthConfig config;
  std::vector<TopicInfo> topics;
  std::map<std::string, Corpus> train;  // world languages only
  std::map<std::string, Corpus> dev;    // world languages only
  std::map<std::string, Corpus> test;   // every language
  std::map<std::string, std::vector<std::string>> mlm_texts;  // unlabeled, every language
  std::map<std::string, std::string> gold_topic;              // example id -> topic id

  // planted structure used by the evaluation mirrors
  std::map<std::string, std::vector<std::string>> wl_train_topics;     // wl -> topic ids
  std::map<std::string, std::map<std::string, double>> zs_train_share; // zs -> wl -> test mass share

  const TopicInfo& topic_info(const std::string& topic_id) const;
  bool topic_is_global(const std::string& topic_id) const;
};

SynthData synth_generate(const SynthConfig& cfg);

// Largest-remainder apportionment of n into weighted buckets.
std::vector<int> apportion(int n, const std::vector<double>& weights);

void save_synth(const SynthData& data, const std::string& dir);
std::string synth_corpus_filename(const std::string& lang, const std::string& split);

SynthConfig synth_config_from_json_file(const std::string& path);
std::string synth_config_to_json(const SynthConfig& cfg);

}  // namespace cw
