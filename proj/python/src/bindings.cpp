#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mafin/error.hpp"
#include "mafin/evalx.hpp"
#include "mafin/genqueries.hpp"
#include "mafin/pipeline.hpp"
#include "mafin/ranking.hpp"
#include "mafin/scoring.hpp"

namespace py = pybind11;
using namespace mafin;

namespace {

using Vec = std::vector<double>;

Vec values(const EmbeddingVector& v) { return {v.values().begin(), v.values().end()}; }

RunConfig config_from(const std::string& text) {
  return text.empty() ? RunConfig{} : RunConfig::from_json(nlohmann::json::parse(text));
}

RankedList ranked_from(const std::vector<std::string>& ids) {
  RankedList list{"q", {}};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    list.entries.push_back({ids[i], static_cast<double>(ids.size() - i)});
  }
  return list;
}

std::vector<std::vector<std::pair<std::string, double>>> retrieve(
    const std::string& config_json, const std::string& scorer, const std::vector<std::string>& texts,
    std::size_t k, const ModelOverrides& models) {
  const auto c = config_from(config_json);
  const auto kind = scorer_kind_from_string(scorer);
  if (c.corpus.empty()) throw UsageError("retrieve needs a corpus path in the config");
  const auto corpus = load_corpus(c.corpus);
  auto provider = uses_black_box(kind) ? make_provider(c) : nullptr;
  const auto s = make_scorer(kind, provider, state_for(kind, c, models));
  const auto index = build_index(s, corpus, c.include_title);
  const auto emb = s.embed_many(texts);
  std::vector<std::vector<std::pair<std::string, double>>> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto& row = out.emplace_back();
    for (const auto& e : retrieve_topk(index, "q", emb[i], k).entries) row.emplace_back(e.doc, e.score);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_mafin, m) {
  m.doc() = "Native core of the mafin retrieval fine-tuning engine";

  static py::exception<Error> base(m, "MafinError", PyExc_RuntimeError);
  static py::exception<UsageError> usage(m, "UsageError", base.ptr());
  static py::exception<DataError> data(m, "DataError", base.ptr());
  static py::exception<ProviderError> provider(m, "ProviderError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const UsageError& e) {
      usage(e.what());
    } catch (const DataError& e) {
      data(e.what());
    } catch (const ProviderError& e) {
      provider(e.what());
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def("stub_embed", [](const std::string& text, std::uint64_t seed, std::size_t dim) {
    return values(stub_embed(seed, dim, text));
  }, py::arg("text"), py::arg("seed") = 0, py::arg("dim") = 256);

  m.def("featurize", [](const std::string& text, std::uint32_t feature_dim, std::uint64_t seed) {
    const auto f = FeatureHasher(feature_dim, seed).featurize(text);
    return std::make_pair(f.index, f.value);
  }, py::arg("text"), py::arg("feature_dim") = FeatureHasher::kDefaultFeatureDim, py::arg("seed") = 0);

  m.def("mafin_embed", [](const Vec& bb, const Vec& aug) {
    return values(mafin_embed(EmbeddingVector(bb), EmbeddingVector(aug)));
  }, py::arg("bb"), py::arg("aug"));
  m.def("lambda_mafin_embed", [](const Vec& bb, const Vec& aug) {
    return values(lambda_mafin_embed(EmbeddingVector(bb), EmbeddingVector(aug)));
  }, py::arg("bb"), py::arg("aug"));
  m.def("lambda_weights", [](double a, double b) {
    const auto w = lambda_weights(a, b);
    return std::make_pair(w.bb, w.aug);
  }, py::arg("a"), py::arg("b"));

  m.def("pl_prob", [](const Vec& scores, const std::vector<std::size_t>& perm) {
    return pl_prob(scores, perm);
  }, py::arg("scores"), py::arg("perm"));
  m.def("top1_target", [](const std::vector<int>& labels, double tau, double smoothing) {
    return top1_target(labels, tau, smoothing);
  }, py::arg("labels"), py::arg("tau") = 1.0, py::arg("smoothing") = 0.0);
  m.def("loss", [](const std::string& kind, const std::vector<int>& labels, const Vec& scores,
                   double tau, double smoothing) {
    LossConfig c;
    c.kind = loss_kind_from_string(kind);
    c.temperature = tau;
    c.smoothing = smoothing;
    const auto v = compute_loss(c, labels, scores);
    return std::make_pair(v.loss, v.dscores);
  }, py::arg("kind"), py::arg("labels"), py::arg("scores"), py::arg("tau") = 1.0,
     py::arg("smoothing") = 0.0, "Loss value and its gradient with respect to the scores.");

  m.def("recall_at_k", [](const std::vector<std::string>& ranked, const std::map<DocId, int>& judged,
                          std::size_t k) { return recall_at_k(ranked_from(ranked), judged, k); },
        py::arg("ranked"), py::arg("judged"), py::arg("k"));
  m.def("ndcg_at_k", [](const std::vector<std::string>& ranked, const std::map<DocId, int>& judged,
                        std::size_t k) { return ndcg_at_k(ranked_from(ranked), judged, k); },
        py::arg("ranked"), py::arg("judged"), py::arg("k"));

  m.def("offline_generate", [](const std::string& text, std::uint64_t seed) {
    return offline_generate(text, seed);
  }, py::arg("text"), py::arg("seed") = 0);

  m.def("default_config", [] { return RunConfig{}.to_json().dump(); });
  m.def("train_json", [](const std::string& config, bool unsupervised) {
    py::gil_scoped_release release;
    return run_training(config_from(config), unsupervised).dump();
  }, py::arg("config"), py::arg("unsupervised") = false);
  m.def("evaluate_json", [](const std::string& config, const std::vector<std::string>& scorers,
                            const ModelOverrides& models) {
    std::vector<ScorerKind> kinds;
    for (const auto& s : scorers) kinds.push_back(scorer_kind_from_string(s));
    nlohmann::json out = nlohmann::json::array();
    {
      py::gil_scoped_release release;
      for (const auto& r : run_evaluation(config_from(config), kinds, models)) out.push_back(r.to_json());
    }
    return out.dump();
  }, py::arg("config"), py::arg("scorers"), py::arg("models") = ModelOverrides{});
  m.def("retrieve", &retrieve, py::arg("config"), py::arg("scorer"), py::arg("queries"),
        py::arg("k") = 10, py::arg("models") = ModelOverrides{});
}
