#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "lcirc/complexity.hpp"
#include "lcirc/eval.hpp"
#include "lcirc/pipeline.hpp"

using namespace lcirc;

namespace {

using Real = float;

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string ckpt;
  std::string out;
};

ModelConfig load_config(const Globals& g) {
  ModelConfig cfg = g.config.empty() ? ModelConfig{} : ModelConfig::load(g.config);
  if (g.seed_set) cfg.seed = g.seed;
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

std::vector<std::int64_t> parse_grid(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw ConfigError("bad integer '" + item + "' in list");
    }
  }
  return out;
}

TrainOptions train_options(const ModelConfig& cfg, const std::string& metrics, const std::string& out,
                           double time_limit) {
  auto o = options_from_config(cfg);
  o.metrics_path = metrics;
  o.checkpoint_path = out;
  o.time_limit_s = time_limit;
  o.log = [](const std::string& line) { std::cerr << line << '\n'; };
  return o;
}

struct DataArgs {
  std::string path;
  std::int64_t n = 2000;
  std::int64_t min_len = 512;
  std::int64_t max_len = 2048;
  std::int64_t context = 2048;
  int needles = 4;
  double motif_rate = 1.0;
};

void add_data_flags(CLI::App* c, DataArgs& d) {
  c->add_option("--data", d.path, "JSONL data file (generated from the seed when omitted)");
  c->add_option("--n", d.n, "documents or samples to generate");
  c->add_option("--min-len", d.min_len, "minimum document length");
  c->add_option("--max-len", d.max_len, "maximum document length");
  c->add_option("--context", d.context, "QA prompt length");
  c->add_option("--needles", d.needles, "needles per QA sample");
  c->add_option("--motif-rate", d.motif_rate, "fraction of documents with a planted motif");
}

CorpusConfig corpus_config(const ModelConfig& cfg, const DataArgs& d) {
  CorpusConfig c;
  c.n_docs = d.n;
  c.min_len = d.min_len;
  c.max_len = d.max_len;
  c.window = cfg.max_positions;
  c.motif_rate = d.motif_rate;
  return c;
}

QAConfig qa_config(const ModelConfig& cfg, const DataArgs& d) {
  QAConfig q;
  q.prompt_len = d.context;
  q.window = cfg.max_positions;
  q.segment = cfg.max_segment;
  q.n_needles = d.needles;
  return q;
}

std::vector<std::vector<TokenId>> lm_docs(const ModelConfig& cfg, const DataArgs& d, const char* stream) {
  if (!d.path.empty()) {
    std::vector<std::vector<TokenId>> out;
    for (const auto& row : read_jsonl(d.path)) out.push_back(document_from_json(row).ids);
    return out;
  }
  Rng rng = Rng(cfg.seed).split(stream);
  return document_ids(gen_lm_corpus(rng, corpus_config(cfg, d)));
}

std::vector<QASample> qa_samples(const ModelConfig& cfg, const DataArgs& d, const char* stream) {
  if (!d.path.empty()) {
    std::vector<QASample> out;
    for (const auto& row : read_jsonl(d.path)) out.push_back(qa_from_json(row));
    return out;
  }
  Rng rng = Rng(cfg.seed).split(stream);
  return gen_needle_qa(rng, d.n, qa_config(cfg, d));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent context compression for a small frozen byte-level LM"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON model config");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) {
    g.seed = s;
    g.seed_set = true;
  }, "seed (overrides the config)");
  app.add_option("--ckpt", g.ckpt, "input checkpoint");
  app.add_option("--out", g.out, "output path");

  std::string metrics;
  double time_limit = 0.0;
  DataArgs data;
  std::function<void()> run;

  auto* pretrain = app.add_subcommand("pretrain-base", "train the base LM from scratch");
  pretrain->add_option("--metrics", metrics, "JSONL metrics log");
  pretrain->add_option("--time-limit", time_limit, "stop after this many seconds");
  add_data_flags(pretrain, data);
  pretrain->callback([&] {
    run = [&] {
      require(g.out, "--out");
      const auto cfg = load_config(g);
      const auto docs = lm_docs(cfg, data, "train");
      auto base = BaseLM<Real>::init(cfg, Rng(cfg.seed).split("base"));
      pretrain_base(base, docs, train_options(cfg, metrics, g.out, time_limit));
    };
  });

  auto* train_lcirc = app.add_subcommand("train-lcirc", "train compressor and injector on a frozen base");
  train_lcirc->add_option("--metrics", metrics, "JSONL metrics log");
  train_lcirc->add_option("--time-limit", time_limit, "stop after this many seconds");
  add_data_flags(train_lcirc, data);
  train_lcirc->callback([&] {
    run = [&] {
      require(g.ckpt, "--ckpt");
      require(g.out, "--out");
      auto model = load_model<Real>(g.ckpt, g.seed);
      const auto cfg = g.config.empty() ? model.config() : load_config(g);
      const auto docs = lm_docs(cfg, data, "train");
      train(model, lm_batches(docs, cfg), train_options(cfg, metrics, g.out, time_limit));
    };
  });

  bool qd_only_lcirc = false;
  auto* train_qd = app.add_subcommand("train-qd", "fine-tune on needle QA with query-dependent compression");
  train_qd->add_option("--metrics", metrics, "JSONL metrics log");
  train_qd->add_option("--time-limit", time_limit, "stop after this many seconds");
  train_qd->add_flag("--no-query", qd_only_lcirc, "fine-tune without the query block");
  add_data_flags(train_qd, data);
  train_qd->callback([&] {
    run = [&] {
      require(g.ckpt, "--ckpt");
      require(g.out, "--out");
      auto model = load_model<Real>(g.ckpt, g.seed);
      if (!qd_only_lcirc && !model.has_qd()) model.enable_qd(Rng(g.seed).split("qd"));
      const auto cfg = g.config.empty() ? model.config() : load_config(g);
      const auto samples = qa_samples(cfg, data, "train");
      train(model, qa_batches(samples, cfg, !qd_only_lcirc), train_options(cfg, metrics, g.out, time_limit));
    };
  });

  std::string grid = "256,512,2048,4096";
  std::int64_t target_len = 0;
  auto* eval_ppl_cmd = app.add_subcommand("eval-ppl", "perplexity of the last tokens over a context grid");
  eval_ppl_cmd->add_option("--grid", grid, "comma-separated context lengths N");
  eval_ppl_cmd->add_option("--target-len", target_len, "scored tokens (default M/2)");
  add_data_flags(eval_ppl_cmd, data);
  eval_ppl_cmd->callback([&] {
    run = [&] {
      require(g.ckpt, "--ckpt");
      const auto model = load_model<Real>(g.ckpt, g.seed);
      const auto& cfg = model.config();
      auto d = data;
      const auto ns = parse_grid(grid);
      if (d.path.empty() && !ns.empty()) d.min_len = d.max_len = std::max(*std::max_element(ns.begin(), ns.end()), d.max_len);
      Globals eg = g;
      eg.config.clear();
      ModelConfig seeded = cfg;
      seeded.seed = g.seed;
      const auto docs = lm_docs(seeded, d, "eval");
      auto report = eval_ppl(model, docs, ns, target_len > 0 ? target_len : cfg.max_positions / 2, g.seed);
      write_text(g.out, report.to_json().dump(2) + "\n");
    };
  });

  std::string mode = "qd";
  bool restrict_values = true;
  auto* eval_qa_cmd = app.add_subcommand("eval-qa", "exact match on needle QA");
  eval_qa_cmd->add_option("--mode", mode, "qd | lcirc | base")->check(CLI::IsMember({"qd", "lcirc", "base"}));
  eval_qa_cmd->add_option("--restrict", restrict_values, "restrict greedy answers to the value alphabet");
  add_data_flags(eval_qa_cmd, data);
  eval_qa_cmd->callback([&] {
    run = [&] {
      require(g.ckpt, "--ckpt");
      const auto model = load_model<Real>(g.ckpt, g.seed);
      ModelConfig seeded = model.config();
      seeded.seed = g.seed;
      auto d = data;
      if (d.path.empty()) d.n = std::min<std::int64_t>(d.n, 200);
      const auto samples = qa_samples(seeded, d, "eval");
      const auto candidates = restrict_values ? needle_value_tokens() : std::vector<TokenId>{};
      const auto report = mode == "base" ? eval_qa_truncated(model.base(), samples, candidates)
                                         : eval_qa(model, samples, mode == "qd", candidates, g.seed);
      write_text(g.out, report.to_json().dump(2) + "\n");
    };
  });

  std::string prompt, prompt_file, query, trace, state_out;
  std::int64_t max_new = 64;
  auto* generate = app.add_subcommand("generate", "greedy decoding with compression past the window");
  generate->add_option("--prompt", prompt, "prompt text");
  generate->add_option("--prompt-file", prompt_file, "read the prompt from a file");
  generate->add_option("--query", query, "query text for query-dependent compression");
  generate->add_option("--max-new", max_new, "tokens to generate");
  generate->add_option("--trace", trace, "JSONL trace of every decode step");
  generate->add_option("--state-out", state_out, "write the final compressed state");
  generate->callback([&] {
    run = [&] {
      require(g.ckpt, "--ckpt");
      const auto model = load_model<Real>(g.ckpt, g.seed);
      if (!prompt_file.empty()) {
        std::ifstream in(prompt_file);
        if (!in) throw FormatError("cannot open " + prompt_file);
        prompt.assign(std::istreambuf_iterator<char>(in), {});
      }
      if (prompt.empty()) throw ConfigError("--prompt or --prompt-file is required");
      std::ofstream trace_out;
      InferOptions opt;
      if (!trace.empty()) {
        trace_out.open(trace);
        if (!trace_out) throw FormatError("cannot write " + trace);
        opt.on_step = [&](const TraceEvent& e) { trace_out << to_json(e).dump() << '\n'; };
      }
      const auto ids = encode(prompt);
      const auto q = encode(query);
      const auto res = infer(model, ids, max_new, q, opt);
      write_text(g.out, decode(res.tokens) + "\n");
      if (!state_out.empty()) save_state(state_out, model.config(), res.state);
    };
  });

  std::string preset = "llama2-7b";
  std::string ns = "4096,8192,65536,131072";
  auto* flops = app.add_subcommand("flops", "analytic cost table");
  flops->add_option("--preset", preset, "llama2-7b | desk")->check(CLI::IsMember({"llama2-7b", "desk"}));
  flops->add_option("--n", ns, "comma-separated token counts");
  flops->callback([&] {
    run = [&] {
      const auto cm = preset == "desk" ? desk_preset(load_config(g)) : llama2_7b_preset();
      const auto report = cost_report(cm, parse_grid(ns));
      std::cout << report.text();
      if (!g.out.empty()) write_text(g.out, report.csv());
    };
  });

  std::string kind = "lm";
  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus or QA set as JSONL");
  gen->add_option("--kind", kind, "lm | qa")->check(CLI::IsMember({"lm", "qa"}));
  add_data_flags(gen, data);
  gen->callback([&] {
    run = [&] {
      require(g.out, "--out");
      const auto cfg = load_config(g);
      Rng rng(cfg.seed);
      std::vector<nlohmann::json> rows;
      if (kind == "lm") {
        for (const auto& d : gen_lm_corpus(rng, corpus_config(cfg, data))) rows.push_back(to_json(d));
      } else {
        for (const auto& s : gen_needle_qa(rng, data.n, qa_config(cfg, data))) rows.push_back(to_json(s));
      }
      write_jsonl(g.out, rows);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
