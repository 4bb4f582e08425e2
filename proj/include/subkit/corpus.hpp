#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "subkit/common.hpp"

namespace subkit {

// One (query, item title, locale, label) record; the unit of classification.
// label: 1 = substitute, 0 = not-substitute.
struct Example {
    std::int64_t id = 0;
    std::string query;
    std::string title;
    std::string locale;
    int label = 0;
};

// Token -> id map with dense ids. 0/1/2 are reserved for PAD/UNK/SEP and are
// never reassigned; real tokens start at 3 in first-seen order.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kSep = 2;

    Vocabulary();

    int add(const std::string& token);      // returns existing id if present
    int id_of(std::string_view token) const;  // kUnk if absent
    bool contains(std::string_view token) const;
    const std::string& token_of(int id) const;
    std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

    // Stable content hash used to pair checkpoints with their vocabulary.
    std::uint64_t fingerprint() const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Fixed-length encoded (query, title) pair: ids padded with PAD to max_len,
// mask 1 on real positions. mask[i]=0 <=> token_ids[i]=PAD.
struct EncodedPair {
    std::vector<std::int32_t> token_ids;
    std::vector<std::uint8_t> mask;
    int label = 0;
};

// Parameters of the synthetic dataset generator. Stands in for the real
// shopping-queries corpus: three disjoint token pools (heads, attributes,
// noise) plus a constructive labeling rule, so labels have an exact oracle.
struct SynthSpec {
    int n_queries = 800;
    int items_per_query = 6;
    int attr_pool_size = 60;
    int head_pool_size = 30;
    int noise_pool_size = 30;
    double positive_ratio_target = 0.4;
    std::uint64_t seed = 7;
};

// Replaces every char that is not a Unicode letter, digit or space with a
// space, collapses runs and trims. Letters of any script survive; the exact
// classification is the committed rule documented in the README.
std::string clean_title(std::string_view raw);

// Lowercased (ASCII) whitespace tokens of clean_title(text).
std::vector<std::string> clean_tokens(std::string_view text);

Vocabulary build_vocab(const std::vector<Example>& examples, int min_count);

EncodedPair encode_pair(std::string_view query, std::string_view title, const Vocabulary& vocab, int max_len);

std::vector<Example> generate_synthetic(const SynthSpec& spec);

// True label as implied by the generator's constructive rule: substitute iff
// the query head is present in the title but at least one attribute is missing.
int synthetic_label_oracle(const Example& ex);

std::vector<Example> load_csv(const std::string& path);
void save_csv(const std::string& path, const std::vector<Example>& examples);

}  // namespace subkit
