#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mafin/checkpoint.hpp"
#include "mafin/config.hpp"
#include "mafin/error.hpp"
#include "mafin/evalx.hpp"
#include "mafin/genqueries.hpp"
#include "mafin/pipeline.hpp"
#include "mafin/providers.hpp"
#include "mafin/trainer.hpp"

using json = nlohmann::json;
using namespace mafin;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kProvider = 3 };

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

// Options shared by every subcommand, bound straight into the config so
// flags given on the command line override the config file.
void add_data_options(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--corpus", c.corpus, "corpus.jsonl");
  cmd->add_option("--queries", c.queries, "queries.jsonl");
  cmd->add_option("--qrels", c.qrels, "dev (or train) qrels TSV");
  cmd->add_option("--validation-qrels", c.validation_qrels, "validation qrels TSV (provided splits)");
  cmd->add_option("--test-qrels", c.test_qrels, "test qrels TSV");
  cmd->add_option("--splits", c.splits, "split manifest written by ingest");
  cmd->add_option("--seed", c.seed, "global seed");
  cmd->add_flag("!--no-title", c.include_title, "embed passage bodies without titles");
}

void add_provider_options(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--provider", c.provider.kind, "black-box provider: stub, file, http");
  cmd->add_option("--stub-seed", c.provider.stub_seed, "stub provider seed");
  cmd->add_option("--stub-dim", c.provider.stub_dim, "stub provider dimension");
  cmd->add_option("--store", c.provider.store_path, "file provider store (MAFC cache or JSONL)");
  cmd->add_option("--embed-url", c.provider.base_url, "HTTP provider base URL");
  cmd->add_option("--embed-model", c.provider.model, "HTTP provider model name");
  cmd->add_option("--embed-dim", c.provider.dim, "HTTP provider embedding dimension");
  cmd->add_option("--cache", c.cache, "embedding cache file");
}

void add_model_options(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--feature-dim", c.feature_dim, "hashed feature space size (power of two)");
  cmd->add_option("--aug-dim", c.aug_dim, "augmenting embedding dimension");
  cmd->add_option("--rank", c.transform_rank, "linear transform rank (0 = full matrix)");
  cmd->add_option("--checkpoint", c.checkpoint, "augmenting model checkpoint");
  cmd->add_option("--transform-checkpoint", c.transform_checkpoint, "linear transform checkpoint");
}

int cmd_ingest(RunConfig& c, const std::vector<std::string>& split_args, const std::string& manifest) {
  Diagnostics diag;
  const auto data = load_dataset(c, &diag);
  std::cout << "passages\t" << data.corpus.size() << '\n'
            << "queries\t" << data.queries.size() << '\n'
            << "qrels\t" << data.qrels.size() << '\n'
            << "judged_queries\t" << data.qrels.query_count() << '\n';
  if (!data.test_qrels.entries().empty()) {
    std::cout << "test_judged_queries\t" << data.test_qrels.query_count() << '\n';
  }
  std::cout << "warnings\t" << diag.warnings.size() << '\n';
  if (split_args.empty()) return kOk;
  QuerySplits splits;
  if (split_args[0] == "fraction") {
    if (split_args.size() > 1) c.train_fraction = std::stod(split_args[1]);
    c.splits.clear();
    c.validation_qrels.clear();
    splits = resolve_splits(c, data);
  } else if (split_args[0] == "provided") {
    if (c.validation_qrels.empty() || c.test_qrels.empty()) {
      throw UsageError("--split provided needs --validation-qrels and --test-qrels");
    }
    splits = split_provided(data.queries, data.qrels, data.validation_qrels, data.test_qrels);
  } else {
    throw UsageError("--split takes 'fraction [F]' or 'provided'");
  }
  save_splits(splits, c, manifest);
  std::cout << "train\t" << splits.train.size() << '\n'
            << "validation\t" << splits.validation.size() << '\n'
            << "test\t" << splits.test.size() << '\n'
            << "manifest\t" << manifest << '\n';
  return kOk;
}

int cmd_cache(RunConfig& c) {
  if (c.cache.empty()) throw UsageError("cache needs --cache PATH");
  const auto data = load_dataset(c);
  RunConfig raw = c;
  raw.cache.clear();
  auto provider = make_provider(raw);
  const auto report = cache_fill(*provider, data.corpus, data.queries, c.cache, c.include_title);
  std::cout << "hits\t" << report.hits << '\n'
            << "misses\t" << report.misses << '\n'
            << "fetched\t" << report.fetched << '\n';
  return kOk;
}

std::unique_ptr<QueryGenerator> make_generator(const RunConfig& c) {
  if (c.generator.kind == "offline") return std::make_unique<OfflineGenerator>();
  RemoteGeneratorConfig rc;
  rc.base_url = c.generator.base_url;
  rc.path = c.generator.endpoint;
  rc.model = c.generator.model;
  rc.token_env = c.generator.token_env;
  rc.temperature = c.generator.temperature;
  rc.retries = c.generator.retries;
  return std::make_unique<RemoteGenerator>(rc);
}

int cmd_gen_queries(RunConfig& c) {
  if (c.pairs.empty()) throw UsageError("gen-queries needs --out PATH");
  Diagnostics diag;
  const auto corpus = load_corpus(c.corpus, &diag);
  auto generator = make_generator(c);
  const auto pairs = generate_pairs(*generator, corpus, derive_seed(c.seed, "genqueries"), false, &diag);
  save_pairs(pairs, c.pairs);
  std::cout << "generator\t" << generator->identity() << '\n'
            << "pairs\t" << pairs.pairs.size() << '\n'
            << "skipped\t" << pairs.skipped.size() << '\n'
            << "out\t" << c.pairs << '\n';
  return kOk;
}

int cmd_train(RunConfig& c, bool unsupervised, bool default_grid) {
  if (default_grid && c.smoothing_grid.empty()) c.smoothing_grid = kDefaultSmoothingGrid;
  const auto out = run_training(c, unsupervised);
  if (out.contains("report")) {
    const auto& r = out.at("report");
    const auto monitor = r.at("trainer").at("monitor").get<std::string>();
    std::cout << "best_epoch\t" << r.at("best_epoch") << '\n'
              << "stopping_epoch\t" << r.at("stopping_epoch") << '\n'
              << monitor << "\t" << r.at("best_metric") << '\n';
  } else {
    const auto& g = out.at("grid_search");
    const auto& best = g.at("runs").at(g.at("best_index").get<std::size_t>());
    const auto monitor = best.at("trainer").at("monitor").get<std::string>();
    std::cout << "runs\t" << g.at("runs").size() << '\n'
              << "best_smoothing\t" << g.at("best_smoothing") << '\n'
              << monitor << "\t" << best.at("best_metric") << '\n';
  }
  if (out.contains("checkpoint")) {
    std::cout << "checkpoint\t" << out.at("checkpoint").get<std::string>() << '\n';
  }
  if (!c.output.empty()) {
    write_json(out, c.output);
    std::cout << "report\t" << c.output << '\n';
  }
  return kOk;
}

std::map<std::string, std::string> parse_models(const std::vector<std::string>& specs) {
  std::map<std::string, std::string> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--model takes KIND=PATH, got '" + s + "'");
    scorer_kind_from_string(s.substr(0, eq));
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

int cmd_evaluate(RunConfig& c, const std::string& scorers, const std::string& cutoffs,
                 const std::vector<std::string>& model_specs, const std::string& ranked_out) {
  if (!cutoffs.empty()) {
    c.cutoffs.clear();
    for (const auto& k : split_list(cutoffs)) c.cutoffs.push_back(std::stoul(k));
  }
  std::vector<ScorerKind> kinds;
  for (const auto& name : split_list(scorers.empty() ? std::string(to_string(c.scorer)) : scorers)) {
    kinds.push_back(scorer_kind_from_string(name));
  }
  std::vector<std::vector<RankedList>> ranked;
  const auto reports = run_evaluation(c, kinds, parse_models(model_specs), &ranked);
  if (!ranked_out.empty()) {
    std::ofstream ranked_file(ranked_out, std::ios::trunc);
    if (!ranked_file) throw DataError("cannot write " + ranked_out);
    for (const auto& lists : ranked) write_ranked_tsv(ranked_file, lists);
  }
  std::cout << format_table(reports);
  if (!c.output.empty()) {
    json out;
    out["config"] = c.to_json();
    out["reports"] = json::array();
    for (const auto& r : reports) out["reports"].push_back(r.to_json());
    write_json(out, c.output);
  }
  return kOk;
}

std::vector<Query> read_query_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<Query> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line.front() == '{') {
      try {
        const auto j = json::parse(line);
        out.push_back({j.at("_id").get<std::string>(), j.at("text").get<std::string>()});
      } catch (const json::exception& e) {
        throw DataError(path + ":" + std::to_string(n) + ": " + e.what());
      }
    } else {
      out.push_back({"q" + std::to_string(out.size() + 1), line});
    }
  }
  return out;
}

int cmd_retrieve(RunConfig& c, const std::string& scorer_name, const std::string& text,
                 const std::string& query_file, std::size_t k,
                 const std::vector<std::string>& model_specs) {
  const auto kind = scorer_kind_from_string(scorer_name.empty() ? to_string(c.scorer) : scorer_name);
  const auto models = parse_models(model_specs);
  if (c.corpus.empty()) throw UsageError("retrieve needs --corpus");
  const auto corpus = load_corpus(c.corpus);
  std::vector<Query> queries;
  if (!query_file.empty()) {
    queries = read_query_file(query_file);
  } else if (!text.empty()) {
    queries.push_back({"q1", text});
  } else {
    std::string line;
    while (std::getline(std::cin, line)) {
      if (!line.empty()) queries.push_back({"q" + std::to_string(queries.size() + 1), line});
    }
  }
  if (queries.empty()) throw UsageError("no query given (use --query, --query-file or stdin)");
  auto provider = uses_black_box(kind) ? make_provider(c) : nullptr;
  const auto scorer = make_scorer(kind, provider, state_for(kind, c, models));
  const auto index = build_index(scorer, corpus, c.include_title);
  std::vector<std::string> texts;
  for (const auto& q : queries) texts.push_back(q.text);
  const auto emb = scorer.embed_many(texts);
  std::vector<RankedList> lists;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    lists.push_back(retrieve_topk(index, queries[i].id, emb[i], k));
  }
  write_ranked_tsv(std::cout, lists);
  return kOk;
}

std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("mafin"));
  spdlog::set_pattern("[%l] %v");

  RunConfig c;
  try {
    if (const auto path = find_config_path(argc, argv); !path.empty()) c = load_run_config(path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  CLI::App app{"Retrieval fine-tuning with black-box embeddings plus a trainable augmenting model"};
  app.require_subcommand(1);
  std::string config_path;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON run config (flags override it)");
  app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

  auto* ingest = app.add_subcommand("ingest", "validate and summarize a dataset, optionally split it");
  add_data_options(ingest, c);
  std::vector<std::string> split_args;
  std::string manifest = "splits.json";
  ingest->add_option("--split", split_args, "fraction [F] | provided")->expected(1, 2);
  ingest->add_option("--train-fraction", c.train_fraction, "train share of the dev queries");
  ingest->add_option("--manifest", manifest, "split manifest output path");

  auto* cache = app.add_subcommand("cache", "fill the embedding cache for corpus and queries");
  add_data_options(cache, c);
  add_provider_options(cache, c);

  auto* gen = app.add_subcommand("gen-queries", "generate one synthetic query per passage");
  add_data_options(gen, c);
  gen->add_option("--generator", c.generator.kind, "offline or remote");
  gen->add_option("--llm-url", c.generator.base_url, "remote generator base URL");
  gen->add_option("--llm-model", c.generator.model, "remote generator model");
  gen->add_option("--llm-temperature", c.generator.temperature, "remote generation temperature");
  gen->add_option("--out", c.pairs, "pair file (JSONL)");

  auto* train_cmd = app.add_subcommand("train", "train a scorer");
  add_data_options(train_cmd, c);
  add_provider_options(train_cmd, c);
  add_model_options(train_cmd, c);
  std::string scorer_name, loss_name, optimizer_name, train_score;
  bool supervised = false, unsupervised = false, default_grid = false;
  std::string grid_list;
  train_cmd->add_option("--scorer", scorer_name, "scorer kind");
  train_cmd->add_option("--loss", loss_name, "pl_full, top1_kl or infonce");
  train_cmd->add_option("--neg", c.loss.negatives, "candidate list size M");
  train_cmd->add_option("--temperature", c.loss.temperature, "target temperature tau");
  train_cmd->add_option("--smoothing", c.loss.smoothing, "label smoothing rate");
  train_cmd->add_option("--train-score", train_score, "combined_mafin or aug_only");
  train_cmd->add_flag("--smoothing-grid", default_grid, "search the default smoothing grid");
  train_cmd->add_option("--grid", grid_list, "comma-separated smoothing grid");
  train_cmd->add_option("--optimizer", optimizer_name, "adam or sgd");
  train_cmd->add_option("--lr", c.trainer.optimizer.learning_rate, "learning rate");
  train_cmd->add_option("--max-epochs", c.trainer.max_epochs, "epoch cap");
  train_cmd->add_option("--patience", c.trainer.patience, "early-stopping patience");
  train_cmd->add_option("--monitor", c.trainer.monitor, "monitored validation metric");
  train_cmd->add_option("--train-fraction", c.train_fraction, "train share of the dev queries");
  train_cmd->add_option("--pairs", c.pairs, "synthetic pair file for --unsupervised");
  train_cmd->add_option("--report", c.output, "train report output (JSON)");
  auto* sup_flag = train_cmd->add_flag("--supervised", supervised, "train on qrels labels (default)");
  train_cmd->add_flag("--unsupervised", unsupervised, "train on synthetic pairs")->excludes(sup_flag);

  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate scorers side by side");
  add_data_options(eval_cmd, c);
  add_provider_options(eval_cmd, c);
  add_model_options(eval_cmd, c);
  std::string scorers, cutoffs, ranked_out;
  std::vector<std::string> eval_models;
  eval_cmd->add_option("--scorers", scorers, "comma-separated scorer kinds");
  eval_cmd->add_option("--k", cutoffs, "comma-separated cutoffs, e.g. 1,3,5");
  eval_cmd->add_option("--model", eval_models, "KIND=PATH checkpoint for one scorer");
  eval_cmd->add_option("--report", c.output, "evaluation report output (JSON)");
  eval_cmd->add_option("--ranked", ranked_out, "write ranked lists (TSV)");

  auto* retrieve = app.add_subcommand("retrieve", "top-K passages for ad-hoc queries");
  add_data_options(retrieve, c);
  add_provider_options(retrieve, c);
  add_model_options(retrieve, c);
  std::string retrieve_scorer, query_text, query_file;
  std::size_t top_k = 10;
  std::vector<std::string> retrieve_models;
  retrieve->add_option("--scorer", retrieve_scorer, "scorer kind");
  retrieve->add_option("--query", query_text, "query text");
  retrieve->add_option("--query-file", query_file, "queries (JSONL or one per line)");
  retrieve->add_option("-k,--k", top_k, "number of passages");
  retrieve->add_option("--model", retrieve_models, "KIND=PATH checkpoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (!scorer_name.empty()) c.scorer = scorer_kind_from_string(scorer_name);
    if (!loss_name.empty()) c.loss.kind = loss_kind_from_string(loss_name);
    if (!optimizer_name.empty()) c.trainer.optimizer.kind = optimizer_kind_from_string(optimizer_name);
    if (!train_score.empty()) c.loss.train_score = train_score_mode_from_string(train_score);
    if (!grid_list.empty()) {
      c.smoothing_grid.clear();
      for (const auto& v : split_list(grid_list)) c.smoothing_grid.push_back(std::stod(v));
    }
    c.validate();
    if (*ingest) return cmd_ingest(c, split_args, manifest);
    if (*cache) return cmd_cache(c);
    if (*gen) return cmd_gen_queries(c);
    if (*train_cmd) return cmd_train(c, unsupervised, default_grid);
    if (*eval_cmd) return cmd_evaluate(c, scorers, cutoffs, eval_models, ranked_out);
    if (*retrieve) return cmd_retrieve(c, retrieve_scorer, query_text, query_file, top_k, retrieve_models);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ProviderError& e) {
    std::cerr << "provider error: " << e.what() << '\n';
    return kProvider;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: bad number: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
