#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lcirc/config.hpp"
#include "lcirc/rng.hpp"
#include "lcirc/tensor.hpp"

namespace lcirc {

/// Byte-level tokenizer: token id == byte value, plus BOS/EOS/PAD above 255.
std::vector<TokenId> encode(std::string_view text);
/// Inverse of `encode`; specials render as <bos>/<eos>/<pad>.
std::string decode(std::span<const TokenId> ids);

/// Bytes 128..255 never occur in the Markov text. Motifs draw from all of
/// them; needle values from the first `kValueSymbols`.
inline constexpr TokenId kMotifBase = 128;
inline constexpr int kMotifSymbols = 128;
inline constexpr int kValueSymbols = 16;

/// Second-order Markov source over lowercase letters, space and ". , ;".
/// The transition table depends only on `language_seed`, so training and
/// evaluation corpora share one language.
class MarkovLanguage {
 public:
  explicit MarkovLanguage(std::uint64_t language_seed = 1234);

  /// Appends `n` tokens continuing from the last two tokens of `out` (or a
  /// fresh start when they are not text symbols).
  void emit(Rng& rng, std::vector<TokenId>& out, std::int64_t n) const;

  static constexpr int kAlphabet = 30;
  static TokenId symbol(int i);
  static int index_of(TokenId t);  // -1 for non-text tokens

  /// Entropy rate of the chain in nats per token under its stationary law.
  double entropy_rate() const;

 private:
  // cdf_[a][b] is the cumulative distribution of the next symbol after (a, b).
  std::vector<std::array<double, kAlphabet>> cdf_;
};

struct CorpusConfig {
  std::int64_t n_docs = 100;
  std::int64_t min_len = 2048;
  std::int64_t max_len = 2048;
  std::int64_t window = 256;  // M; governs motif placement
  int motif_len = 32;
  int motif_symbols = kMotifSymbols;  // motif bytes are drawn from 128 .. 128 + motif_symbols - 1
  double motif_rate = 1.0;  // fraction of documents carrying a motif
  std::uint64_t language_seed = 1234;
};

struct Document {
  std::vector<TokenId> ids;
  std::int64_t motif_first = -1;   // offset of the planted motif, -1 if none
  std::int64_t motif_second = -1;  // offset of its re-emission near the end
};

/// Markov text with a motif of distinct high bytes planted early and repeated
/// inside the last M/2 tokens. For documents longer than M + motif_len the
/// first occurrence lies outside the last M tokens.
std::vector<Document> gen_lm_corpus(Rng& rng, const CorpusConfig& cfg);

struct QASample {
  std::vector<TokenId> context;
  std::vector<TokenId> query;
  std::vector<TokenId> answer;
  std::vector<std::int64_t> needle_offsets;  // one per needle, in key order
  std::int64_t target = 0;                   // index into needle_offsets
};

struct QAConfig {
  std::int64_t prompt_len = 2048;  // |context| + |query|
  std::int64_t window = 256;       // M
  std::int64_t segment = 128;      // R; needles never straddle R-aligned blocks
  int n_needles = 4;
  int answer_len = 1;
  std::uint64_t language_seed = 1234;
};

inline constexpr int kNeedleLen = 16;

/// Needles "{{key:K val:v}} " with distinct uppercase keys and high-byte values
/// in Markov distractor text. Every needle sits inside its own R-aligned block
/// that is compressed when the prompt is decoded with `answer_len` new tokens,
/// i.e. outside the live window. The query is "{{key:K val:" and the answer the
/// single value token.
std::vector<QASample> gen_needle_qa(Rng& rng, std::int64_t n, const QAConfig& cfg);

/// Query prefix for key `key` ('A'..'Z').
std::vector<TokenId> needle_query(char key);

/// Unigram perplexity of `tokens` under their own empirical distribution.
double unigram_ppl(std::span<const std::vector<TokenId>> docs);

nlohmann::json to_json(const Document& d);
nlohmann::json to_json(const QASample& s);
Document document_from_json(const nlohmann::json& j);
QASample qa_from_json(const nlohmann::json& j);
void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> read_jsonl(const std::string& path);

}  // namespace lcirc
