#include "lcirc/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "lcirc/errors.hpp"

namespace lcirc {

std::vector<TokenId> encode(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string decode(std::span<const TokenId> ids) {
  std::string out;
  for (auto t : ids) {
    if (t >= 0 && t < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    } else if (t == tokens::kBos) {
      out += "<bos>";
    } else if (t == tokens::kEos) {
      out += "<eos>";
    } else if (t == tokens::kPad) {
      out += "<pad>";
    } else {
      throw IndexError("decode: token id " + std::to_string(t) + " outside the vocabulary");
    }
  }
  return out;
}

namespace {

constexpr std::string_view kTextSymbols = "abcdefghijklmnopqrstuvwxyz .,;";
static_assert(kTextSymbols.size() == MarkovLanguage::kAlphabet);

template <std::size_t N>
int sample_cdf(Rng& rng, const std::array<double, N>& cdf) {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), N - 1));
}

}  // namespace

TokenId MarkovLanguage::symbol(int i) { return static_cast<TokenId>(static_cast<unsigned char>(kTextSymbols[i])); }

int MarkovLanguage::index_of(TokenId t) {
  if (t < 0 || t > 255) return -1;
  const auto pos = kTextSymbols.find(static_cast<char>(t));
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

MarkovLanguage::MarkovLanguage(std::uint64_t language_seed) : cdf_(kAlphabet * kAlphabet) {
  Rng rng = Rng(language_seed).split("markov-language");
  auto sparse = [&rng](std::int64_t lo, std::int64_t hi, double mass) {
    std::array<double, kAlphabet> w{};
    const auto support = rng.uniform_int(lo, hi);
    double total = 0.0;
    for (std::int64_t s = 0; s < support; ++s) {
      const double x = -std::log(1.0 - rng.uniform());
      w[static_cast<std::size_t>(rng.uniform_int(0, kAlphabet - 1))] += x;
      total += x;
    }
    for (auto& v : w) v *= mass / total;
    return w;
  };
  // A first-order part shared by every predecessor pair with the same last
  // symbol, plus a pair-specific second-order part.
  std::vector<std::array<double, kAlphabet>> first(kAlphabet);
  for (auto& f : first) f = sparse(4, 7, 0.6);
  for (int a = 0; a < kAlphabet; ++a) {
    for (int b = 0; b < kAlphabet; ++b) {
      const auto second = sparse(1, 3, 0.4);
      auto& row = cdf_[static_cast<std::size_t>(a * kAlphabet + b)];
      double run = 0.0;
      for (int i = 0; i < kAlphabet; ++i) {
        run += first[static_cast<std::size_t>(b)][i] + second[i];
        row[i] = run;
      }
      for (auto& v : row) v /= run;
      row[kAlphabet - 1] = 1.0;
    }
  }
}

void MarkovLanguage::emit(Rng& rng, std::vector<TokenId>& out, std::int64_t n) const {
  int a = -1, b = -1;
  if (out.size() >= 2) {
    a = index_of(out[out.size() - 2]);
    b = index_of(out.back());
  }
  if (a < 0 || b < 0) {
    a = static_cast<int>(rng.uniform_int(0, kAlphabet - 1));
    b = static_cast<int>(rng.uniform_int(0, kAlphabet - 1));
  }
  for (std::int64_t i = 0; i < n; ++i) {
    const int c = sample_cdf(rng, cdf_[static_cast<std::size_t>(a * kAlphabet + b)]);
    out.push_back(symbol(c));
    a = b;
    b = c;
  }
}

double MarkovLanguage::entropy_rate() const {
  const int n = kAlphabet * kAlphabet;
  std::vector<double> pi(n, 1.0 / n), next(n);
  auto prob = [&](int state, int c) {
    const auto& row = cdf_[static_cast<std::size_t>(state)];
    return c == 0 ? row[0] : row[c] - row[c - 1];
  };
  for (int it = 0; it < 500; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (int s = 0; s < n; ++s) {
      const int b = s % kAlphabet;
      for (int c = 0; c < kAlphabet; ++c) next[b * kAlphabet + c] += pi[s] * prob(s, c);
    }
    pi.swap(next);
  }
  double h = 0.0;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < kAlphabet; ++c) {
      const double p = prob(s, c);
      if (p > 0) h -= pi[s] * p * std::log(p);
    }
  }
  return h;
}

std::vector<Document> gen_lm_corpus(Rng& rng, const CorpusConfig& cfg) {
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len) throw ConfigError("corpus length law must satisfy 1 <= min <= max");
  if (cfg.motif_symbols < 1 || cfg.motif_symbols > kMotifSymbols) throw ConfigError("motif alphabet must hold 1..128 symbols");
  if (cfg.motif_len > cfg.motif_symbols) throw ConfigError("motif longer than its alphabet");
  const MarkovLanguage lang(cfg.language_seed);
  std::vector<Document> docs;
  docs.reserve(static_cast<std::size_t>(cfg.n_docs));
  const std::int64_t ml = cfg.motif_len;
  for (std::int64_t d = 0; d < cfg.n_docs; ++d) {
    Rng r = rng.split(static_cast<std::uint64_t>(d));
    Document doc;
    const auto len = r.uniform_int(cfg.min_len, cfg.max_len);
    const bool planted = r.uniform() < cfg.motif_rate && len >= 2 * ml + 2;
    if (planted) {
      std::vector<TokenId> pool(static_cast<std::size_t>(cfg.motif_symbols));
      std::iota(pool.begin(), pool.end(), kMotifBase);
      for (std::int64_t i = 0; i < ml; ++i) std::swap(pool[i], pool[r.uniform_int(i, cfg.motif_symbols - 1)]);
      const std::vector<TokenId> motif(pool.begin(), pool.begin() + ml);
      const auto lo2 = std::max(ml + 1, len - cfg.window / 2);
      doc.motif_second = r.uniform_int(lo2, len - ml);
      const auto hi1 = std::max<std::int64_t>(0, std::min(doc.motif_second - ml - 1, len - cfg.window - ml));
      doc.motif_first = r.uniform_int(0, hi1);
      lang.emit(r, doc.ids, doc.motif_first);
      doc.ids.insert(doc.ids.end(), motif.begin(), motif.end());
      lang.emit(r, doc.ids, doc.motif_second - static_cast<std::int64_t>(doc.ids.size()));
      doc.ids.insert(doc.ids.end(), motif.begin(), motif.end());
      lang.emit(r, doc.ids, len - static_cast<std::int64_t>(doc.ids.size()));
    } else {
      lang.emit(r, doc.ids, len);
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

std::vector<TokenId> needle_query(char key) {
  return encode(std::string("{{key:") + key + " val:");
}

std::vector<QASample> gen_needle_qa(Rng& rng, std::int64_t n, const QAConfig& cfg) {
  if (cfg.n_needles < 1 || cfg.n_needles > 26) throw ConfigError("n_needles must lie in [1, 26]");
  if (cfg.answer_len != 1) throw ConfigError("needle answers are single tokens");
  const auto query_len = static_cast<std::int64_t>(needle_query('A').size());
  const auto ctx_len = cfg.prompt_len - query_len;
  // Prompt tokens compressed when decoding `answer_len` tokens.
  const auto compressed = cfg.prompt_len - (cfg.window - cfg.answer_len);
  const auto blocks = compressed / cfg.segment;
  if (blocks < cfg.n_needles || cfg.segment < kNeedleLen) {
    throw ConfigError("needle QA: only " + std::to_string(blocks) + " compressible blocks for " +
                      std::to_string(cfg.n_needles) + " needles");
  }
  const MarkovLanguage lang(cfg.language_seed);
  std::vector<QASample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t s = 0; s < n; ++s) {
    Rng r = rng.split(static_cast<std::uint64_t>(s));
    std::vector<std::int64_t> block_ids(static_cast<std::size_t>(blocks));
    std::iota(block_ids.begin(), block_ids.end(), 0);
    std::vector<int> keys(26);
    std::iota(keys.begin(), keys.end(), 0);
    std::vector<int> values(kValueSymbols);
    std::iota(values.begin(), values.end(), 0);
    for (int i = 0; i < cfg.n_needles; ++i) {
      std::swap(block_ids[i], block_ids[r.uniform_int(i, blocks - 1)]);
      std::swap(keys[i], keys[r.uniform_int(i, 25)]);
      std::swap(values[i], values[r.uniform_int(i, kValueSymbols - 1)]);
    }
    struct Needle {
      std::int64_t offset;
      int key, value;
    };
    std::vector<Needle> needles;
    for (int i = 0; i < cfg.n_needles; ++i) {
      const auto off = block_ids[i] * cfg.segment + r.uniform_int(0, cfg.segment - kNeedleLen);
      needles.push_back({off, keys[i], values[i]});
    }
    std::sort(needles.begin(), needles.end(), [](const Needle& a, const Needle& b) { return a.offset < b.offset; });
    QASample qa;
    for (const auto& nd : needles) {
      lang.emit(r, qa.context, nd.offset - static_cast<std::int64_t>(qa.context.size()));
      auto text = encode(std::string("{{key:") + static_cast<char>('A' + nd.key) + " val:");
      text.push_back(kMotifBase + nd.value);
      const auto tail = encode("}} ");
      text.insert(text.end(), tail.begin(), tail.end());
      qa.context.insert(qa.context.end(), text.begin(), text.end());
    }
    lang.emit(r, qa.context, ctx_len - static_cast<std::int64_t>(qa.context.size()));
    std::vector<int> order(needles.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return needles[a].key < needles[b].key; });
    for (int i : order) qa.needle_offsets.push_back(needles[static_cast<std::size_t>(i)].offset);
    qa.target = r.uniform_int(0, cfg.n_needles - 1);
    const auto& target = needles[static_cast<std::size_t>(order[static_cast<std::size_t>(qa.target)])];
    qa.query = needle_query(static_cast<char>('A' + target.key));
    qa.answer = {kMotifBase + target.value};
    out.push_back(std::move(qa));
  }
  return out;
}

double unigram_ppl(std::span<const std::vector<TokenId>> docs) {
  std::map<TokenId, double> counts;
  double total = 0.0;
  for (const auto& d : docs) {
    for (auto t : d) {
      counts[t] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw ContractError("unigram_ppl: empty corpus");
  double nll = 0.0;
  for (const auto& [t, c] : counts) nll -= c * std::log(c / total);
  return std::exp(nll / total);
}

nlohmann::json to_json(const Document& d) {
  return {{"ids", d.ids}, {"motif_first", d.motif_first}, {"motif_second", d.motif_second}};
}

nlohmann::json to_json(const QASample& s) {
  return {{"context", s.context},
          {"query", s.query},
          {"answer", s.answer},
          {"needle_offsets", s.needle_offsets},
          {"target", s.target}};
}

Document document_from_json(const nlohmann::json& j) {
  Document d;
  d.ids = j.at("ids").get<std::vector<TokenId>>();
  d.motif_first = j.value("motif_first", std::int64_t{-1});
  d.motif_second = j.value("motif_second", std::int64_t{-1});
  return d;
}

QASample qa_from_json(const nlohmann::json& j) {
  QASample s;
  s.context = j.at("context").get<std::vector<TokenId>>();
  s.query = j.at("query").get<std::vector<TokenId>>();
  s.answer = j.at("answer").get<std::vector<TokenId>>();
  s.needle_offsets = j.value("needle_offsets", std::vector<std::int64_t>{});
  s.target = j.value("target", std::int64_t{0});
  return s;
}

void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  for (const auto& r : rows) out << r.dump() << '\n';
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<nlohmann::json> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": bad JSON line: " + e.what());
    }
  }
  return rows;
}

}  // namespace lcirc
