#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "mafin/evalx.hpp"
#include "mafin/pipeline.hpp"
#include "mafin/ranking.hpp"
#include "mafin/scoring.hpp"
#include "metric_oracle.hpp"
#include "synthetic.hpp"

using namespace mafin;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* pattern, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

int failures = 0;

void report(int id, const std::string& title, const Outcome& o, double secs, double budget) {
  const bool ok = o.pass && secs < budget;
  if (!ok) ++failures;
  std::cout << "criterion " << id << " " << (ok ? "PASS" : "FAIL") << " " << title << ": "
            << o.detail << " (" << fmt("%.2f", secs) << "s, budget " << budget << "s)" << std::endl;
}

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  for (auto& x : v) x /= std::sqrt(n);
  return v;
}

double plain_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Outcome mafin_identity() {
  Rng rng(101);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto bb1 = unit_vector(rng, 32), bb2 = unit_vector(rng, 32);
    const auto a1 = unit_vector(rng, 16), a2 = unit_vector(rng, 16);
    const auto e1 = mafin_embed(EmbeddingVector(bb1), EmbeddingVector(a1));
    const auto e2 = mafin_embed(EmbeddingVector(bb2), EmbeddingVector(a2));
    const double expected = (plain_dot(bb1, bb2) + plain_dot(a1, a2)) / 2;
    worst = std::max(worst, std::abs(cosine(e1, e2) - expected));
  }
  return {worst <= 1e-12, "max |cos - (dot_bb + dot_aug)/2| = " + fmt("%.3g", worst)};
}

Outcome lambda_identity() {
  Rng rng(202);
  double worst = 0, worst_unit = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto bb1 = unit_vector(rng, 32), bb2 = unit_vector(rng, 32);
    const double a = 5 * rng.uniform_real(), b = 5 * rng.uniform_real();
    auto u1 = unit_vector(rng, 16), u2 = unit_vector(rng, 16);
    const double cos_aug = plain_dot(u1, u2);
    for (auto& x : u1) x *= a;
    for (auto& x : u2) x *= b;
    const auto e1 = lambda_mafin_embed(EmbeddingVector(bb1), EmbeddingVector(u1));
    const auto e2 = lambda_mafin_embed(EmbeddingVector(bb2), EmbeddingVector(u2));
    const double lambda1 = 1.0 / std::sqrt((1 + a * a) * (1 + b * b));
    const double lambda2 = a * b / std::sqrt((1 + a * a) * (1 + b * b));
    const double expected = lambda1 * plain_dot(bb1, bb2) + lambda2 * cos_aug;
    worst = std::max(worst, std::abs(plain_dot(e1.values(), e2.values()) - expected));

    // Unit augmenting norms reduce to vanilla Mafin.
    const auto n1 = unit_vector(rng, 16), n2 = unit_vector(rng, 16);
    const double l = plain_dot(lambda_mafin_embed(EmbeddingVector(bb1), EmbeddingVector(n1)).values(),
                               lambda_mafin_embed(EmbeddingVector(bb2), EmbeddingVector(n2)).values());
    const double m = plain_dot(mafin_embed(EmbeddingVector(bb1), EmbeddingVector(n1)).values(),
                               mafin_embed(EmbeddingVector(bb2), EmbeddingVector(n2)).values());
    worst_unit = std::max(worst_unit, std::abs(l - m));
  }
  return {worst <= 1e-10 && worst_unit <= 1e-12,
          "max weighted-sum error " + fmt("%.3g", worst) + ", max |lambda - mafin| at a=b=1 " +
              fmt("%.3g", worst_unit)};
}

Outcome loss_oracles() {
  Rng rng(303);
  double pl_sum = 0, pl_top1 = 0, info_top1 = 0;
  for (std::size_t k = 1; k <= 6; ++k) {
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<double> s(k);
      for (auto& x : s) x = 3 * rng.normal();
      std::vector<std::size_t> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      double total = 0;
      do total += pl_prob(s, perm);
      while (std::next_permutation(perm.begin(), perm.end()));
      pl_sum = std::max(pl_sum, std::abs(total - 1));
    }
  }
  for (int i = 0; i < 200; ++i) {
    const std::vector<double> s{3 * rng.normal(), 3 * rng.normal()};
    const std::vector<int> y{int(rng.uniform_index(4)), int(rng.uniform_index(4))};
    const double tau = 0.1 + 2 * rng.uniform_real();
    pl_top1 = std::max(pl_top1, std::abs(pl_kl_loss(y, s, tau).loss -
                                         top1_kl_loss(top1_target(y, tau, 0.0), s).loss));
    const std::size_t m = 2 + rng.uniform_index(40);
    std::vector<double> sc(m);
    for (auto& x : sc) x = 4 * rng.normal();
    const std::size_t pos = rng.uniform_index(m);
    std::vector<double> delta(m, 0.0);
    delta[pos] = 1;
    info_top1 = std::max(info_top1, std::abs(infonce_loss(pos, sc).loss - top1_kl_loss(delta, sc).loss));
  }
  const std::vector<int> y{1, 4, 0, 2, 4};
  const auto target = top1_target(y, 1e-6, 0.0);
  // Ties at the maximum split the mass; a unique maximum collapses to the delta.
  const std::vector<int> unique{1, 4, 0, 2, 3};
  const auto t = top1_target(unique, 1e-6, 0.0);
  double tv = 0;
  for (std::size_t k = 0; k < t.size(); ++k) tv += std::abs(t[k] - (k == 1 ? 1.0 : 0.0));
  tv /= 2;
  const bool ok = pl_sum <= 1e-9 && pl_top1 <= 1e-12 && info_top1 <= 1e-12 && tv <= 1e-6 &&
                  std::abs(target[1] - 0.5) < 1e-12;
  return {ok, "pl sum err " + fmt("%.3g", pl_sum) + ", pl vs top1 " + fmt("%.3g", pl_top1) +
                  ", infonce vs top1 " + fmt("%.3g", info_top1) + ", TV to delta " + fmt("%.3g", tv)};
}

struct GradCase {
  std::string name;
  std::size_t sampled = 0;
  double worst = 0;
};

Outcome gradient_suite() {
  const FeatureHasher hasher(1u << 9, 5);
  const char* texts[] = {"how do black box embeddings get fine tuned",
                         "fine tuning a small model next to a frozen embedding api",
                         "recipes for bread and sourdough starters",
                         "ranking losses over candidate lists",
                         "the weather in the mountains this weekend",
                         "augmenting frozen embeddings with trainable features",
                         "train schedules and platform changes"};
  constexpr std::size_t kBb = 12;
  std::vector<SparseFeatures> features;
  std::vector<EmbeddingVector> bb;
  for (const char* t : texts) {
    features.push_back(hasher.featurize(t));
    bb.push_back(stub_embed(9, kBb, t));
  }
  const TextInputs query{&bb[0], &features[0]};
  std::vector<TextInputs> cands;
  for (std::size_t i = 1; i < bb.size(); ++i) cands.push_back({&bb[i], &features[i]});
  const std::vector<int> labels{2, 0, 1, 0, 1, 0};

  std::vector<LossConfig> losses;
  for (auto kind : {LossKind::pl_full, LossKind::top1_kl, LossKind::infonce}) {
    LossConfig c;
    c.kind = kind;
    c.temperature = 0.7;
    c.smoothing = 0.2;
    losses.push_back(c);
  }

  const double step = 1e-5;
  auto rel_err = [](double fd, double an) {
    return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
  };
  std::vector<GradCase> cases;
  Rng pick(404);

  auto run_aug = [&](ScorerKind kind, EmbeddingMode mode) {
    for (const auto& loss : losses) {
      auto model = AugmentingModel::random(hasher, 8, mode, 17);
      ListScorer scorer(kind, &model, nullptr);
      GradientBuffer grad;
      loss_backward(loss, labels, scorer, query, cands, &grad);
      std::vector<std::uint32_t> cols;
      for (const auto& [f, c] : grad.aug.columns()) cols.push_back(f);
      std::sort(cols.begin(), cols.end());
      GradCase gc{std::string(to_string(kind)) + "/" + to_string(loss.kind)};
      for (std::size_t n = 0; n < 120; ++n) {
        const auto f = cols[pick.uniform_index(cols.size())];
        const auto r = pick.uniform_index(model.dim());
        const double w = model.weight(r, f);
        model.set_weight(r, f, w + step);
        const double up = loss_backward(loss, labels, scorer, query, cands, nullptr);
        model.set_weight(r, f, w - step);
        const double down = loss_backward(loss, labels, scorer, query, cands, nullptr);
        model.set_weight(r, f, w);
        gc.worst = std::max(gc.worst, rel_err((up - down) / (2 * step), grad.aug.get(r, f)));
        ++gc.sampled;
      }
      cases.push_back(gc);
    }
  };
  auto run_transform = [&](const LinearTransform& initial, const std::string& label) {
    for (const auto& loss : losses) {
      auto t = initial;
      ListScorer scorer(ScorerKind::linear_transform, nullptr, &t);
      GradientBuffer grad;
      grad.transform = t.zero_gradient();
      loss_backward(loss, labels, scorer, query, cands, &grad);
      GradCase gc{label + "/" + to_string(loss.kind)};
      std::vector<std::pair<std::vector<double>*, const std::vector<double>*>> blocks;
      if (t.mode() == LinearTransform::Mode::full) {
        blocks.push_back({&t.full_weights(), &grad.transform.full});
      } else {
        blocks.push_back({&t.left(), &grad.transform.left});
        blocks.push_back({&t.right(), &grad.transform.right});
      }
      for (std::size_t n = 0; n < 120; ++n) {
        auto& [params, g] = blocks[n % blocks.size()];
        const auto i = pick.uniform_index(params->size());
        const double w = (*params)[i];
        (*params)[i] = w + step;
        const double up = loss_backward(loss, labels, scorer, query, cands, nullptr);
        (*params)[i] = w - step;
        const double down = loss_backward(loss, labels, scorer, query, cands, nullptr);
        (*params)[i] = w;
        gc.worst = std::max(gc.worst, rel_err((up - down) / (2 * step), (*g)[i]));
        ++gc.sampled;
      }
      cases.push_back(gc);
    }
  };

  run_aug(ScorerKind::aug_only, EmbeddingMode::normalized);
  run_aug(ScorerKind::aug_only, EmbeddingMode::unnormalized);
  run_aug(ScorerKind::mafin, EmbeddingMode::normalized);
  run_aug(ScorerKind::lambda_mafin, EmbeddingMode::unnormalized);
  run_transform(LinearTransform::near_identity(kBb, 3, 0.2), "linear_full");
  run_transform(LinearTransform::near_identity_low_rank(kBb, 5, 3, 0.2), "linear_low_rank");

  bool ok = true;
  double worst = 0;
  std::string worst_case;
  for (const auto& c : cases) {
    ok = ok && c.sampled >= 100 && c.worst < 1e-4;
    if (c.worst >= worst) {
      worst = c.worst;
      worst_case = c.name;
    }
  }
  return {ok, std::to_string(cases.size()) + " scorer/loss cases x 120 parameters, worst relative error " +
                  fmt("%.3g", worst) + " (" + worst_case + ")"};
}

Outcome metric_suite() {
  using namespace mafin::testing;
  Rng rng(505);
  double worst = 0;
  bool presence = true;
  for (int i = 0; i < 500; ++i) {
    const auto inst = random_metric_instance(rng);
    RankedList list{"q", {}};
    for (std::size_t j = 0; j < inst.ranked.size(); ++j) list.entries.push_back({inst.ranked[j], inst.scores[j]});
    for (std::size_t k : {1, 3, 5, 10, 20}) {
      const auto r = recall_at_k(list, inst.judged, k), r0 = naive_recall(inst.ranked, inst.judged, k);
      const auto n = ndcg_at_k(list, inst.judged, k), n0 = naive_ndcg(inst.ranked, inst.judged, k);
      presence = presence && r.has_value() == r0.has_value() && n.has_value() == n0.has_value();
      if (r && r0) worst = std::max(worst, std::abs(*r - *r0));
      if (n && n0) worst = std::max(worst, std::abs(*n - *n0));
    }
  }
  const double d1 = dcg_at_k(std::vector<int>{2, 1, 0}, 3);
  const double d2 = dcg_at_k(std::vector<int>{0, 1, 2}, 3);
  RankedList reversed{"q", {{"c", 3}, {"b", 2}, {"a", 1}}};
  const double n = *ndcg_at_k(reversed, {{"a", 2}, {"b", 1}, {"c", 0}}, 3);
  const bool worked = std::abs(d1 - 3.6309298) < 5e-8 && std::abs(d2 - 2.1309298) < 5e-8 &&
                      std::abs(n - 0.5868827) < 5e-8;
  return {presence && worst <= 1e-12 && worked,
          "max oracle diff " + fmt("%.3g", worst) + ", DCG " + fmt("%.7f", d1) + " / " + fmt("%.7f", d2) +
              ", NDCG " + fmt("%.7f", n)};
}

// Synthetic end-to-end experiment.

constexpr std::size_t kStubDim = 128;
constexpr std::uint64_t kStubSeed = 0;

struct E2EResult {
  double bb_r1 = 0, bb_n5 = 0, aug_r1 = 0, aug_n5 = 0, mafin_r1 = 0, mafin_n5 = 0, unsup_n5 = 0,
         unsup_r1 = 0;
  std::string supervised_json;
  std::string unsupervised_json;
  std::vector<const TrainReport*> reports;
  GridSearchResult aug_grid, mafin_grid, unsup_grid;
  double supervised_secs = 0, unsupervised_secs = 0;
};

RunConfig e2e_config() {
  RunConfig rc;
  rc.aug_dim = 32;
  rc.feature_dim = 1u << 14;
  return rc;
}

TrainerConfig e2e_trainer() {
  TrainerConfig tc;
  tc.optimizer.learning_rate = 1e-3;
  tc.seed = 3;
  tc.validation_cutoffs = {1, 5};
  return tc;
}

E2EResult run_e2e() {
  E2EResult out;
  Clock sup_clock;
  const auto data = mafin::testing::make_synthetic(mafin::testing::SyntheticSpec{});
  SplitSpec ss;
  ss.seed = 7;
  const auto splits = split(data.queries, data.dev_qrels, ss, &data.test_qrels);
  const Dataset ds{data.corpus, data.queries, data.dev_qrels, {}, data.test_qrels};
  const auto supervised = supervised_data(ds, splits);
  auto provider = std::make_shared<StubProvider>(kStubSeed, kStubDim);
  const std::size_t cutoffs[] = {1, 5};
  const auto specs = metric_specs(cutoffs);
  const auto rc = e2e_config();
  const auto tc = e2e_trainer();
  LossConfig lc;
  lc.kind = LossKind::infonce;
  lc.negatives = 32;

  auto test_eval = [&](ScorerKind kind, const ModelState& s) {
    return evaluate(make_scorer(kind, provider, s), splits.test, data.queries, data.corpus,
                    data.test_qrels, specs, true);
  };
  nlohmann::json sup;
  const auto bb = test_eval(ScorerKind::bb_only, {});
  out.bb_r1 = bb.at("Recall@1");
  out.bb_n5 = bb.at("NDCG@5");
  sup["bb_only"] = bb.to_json(false);

  out.aug_grid = grid_search_smoothing(ScorerKind::aug_only, provider,
                                       initial_state(ScorerKind::aug_only, rc, kStubDim, 11),
                                       supervised, lc, tc);
  const auto aug = test_eval(ScorerKind::aug_only, out.aug_grid.best);
  out.aug_r1 = aug.at("Recall@1");
  out.aug_n5 = aug.at("NDCG@5");
  sup["aug_only"] = aug.to_json(false);
  sup["aug_only_training"] = out.aug_grid.to_json();

  out.mafin_grid = grid_search_smoothing(ScorerKind::mafin, provider,
                                         initial_state(ScorerKind::mafin, rc, kStubDim, 11),
                                         supervised, lc, tc);
  const auto mafin = test_eval(ScorerKind::mafin, out.mafin_grid.best);
  out.mafin_r1 = mafin.at("Recall@1");
  out.mafin_n5 = mafin.at("NDCG@5");
  sup["mafin"] = mafin.to_json(false);
  sup["mafin_training"] = out.mafin_grid.to_json();
  out.supervised_json = sup.dump();
  out.supervised_secs = sup_clock.seconds();

  Clock unsup_clock;
  OfflineGenerator generator;
  const auto pairs = generate_pairs(generator, data.corpus, 5);
  const auto unsupervised = unsupervised_data(data.corpus, pairs, 0.2, 9);
  out.unsup_grid = grid_search_smoothing(ScorerKind::mafin, provider,
                                         initial_state(ScorerKind::mafin, rc, kStubDim, 11),
                                         unsupervised, lc, tc);
  const auto unsup = test_eval(ScorerKind::mafin, out.unsup_grid.best);
  out.unsup_r1 = unsup.at("Recall@1");
  out.unsup_n5 = unsup.at("NDCG@5");
  nlohmann::json un;
  un["mafin_unsupervised"] = unsup.to_json(false);
  un["training"] = out.unsup_grid.to_json();
  out.unsupervised_json = un.dump();
  out.unsupervised_secs = unsup_clock.seconds() + 0.0;
  return out;
}

double rel_gain(double a, double b) { return b > 0 ? (a - b) / b : INFINITY; }

Outcome supervised_outcome(const E2EResult& r) {
  const bool in_band = r.bb_r1 >= 0.3 && r.bb_r1 <= 0.7;
  const bool beats = r.mafin_r1 > r.bb_r1 && r.mafin_r1 > r.aug_r1 && r.mafin_n5 > r.bb_n5 &&
                     r.mafin_n5 > r.aug_n5;
  const double g_r1 = rel_gain(r.mafin_r1, r.aug_r1), g_n5 = rel_gain(r.mafin_n5, r.aug_n5);
  const bool margin = g_r1 >= 0.03 && g_n5 >= 0.03;
  std::ostringstream d;
  d << "R@1 bb " << fmt("%.3f", r.bb_r1) << " aug " << fmt("%.3f", r.aug_r1) << " mafin "
    << fmt("%.3f", r.mafin_r1) << "; NDCG@5 bb " << fmt("%.4f", r.bb_n5) << " aug "
    << fmt("%.4f", r.aug_n5) << " mafin " << fmt("%.4f", r.mafin_n5) << "; gain over aug R@1 "
    << fmt("%+.1f%%", 100 * g_r1) << " NDCG@5 " << fmt("%+.1f%%", 100 * g_n5) << "; eps aug "
    << r.aug_grid.best_smoothing << " mafin " << r.mafin_grid.best_smoothing;
  if (!in_band) d << "; bb_only R@1 outside [0.3, 0.7]";
  return {in_band && beats && margin, d.str()};
}

Outcome unsupervised_outcome(const E2EResult& r) {
  return {r.unsup_n5 > r.bb_n5, "NDCG@5 bb " + fmt("%.4f", r.bb_n5) + " mafin/unsup " +
                                    fmt("%.4f", r.unsup_n5) + " (R@1 " + fmt("%.3f", r.unsup_r1) +
                                    ", eps " + fmt("%.1f", r.unsup_grid.best_smoothing) + ")"};
}

Outcome protocol_conformance(const E2EResult& r) {
  // Frozen model: one baseline epoch plus four non-improving ones.
  auto data = mafin::testing::make_synthetic(
      {.passages = 60, .queries = 30, .topic_words = 20, .filler_words = 40, .test_queries = 5});
  SplitSpec ss;
  ss.seed = 1;
  const auto splits = split(data.queries, data.dev_qrels, ss);
  const Dataset ds{data.corpus, data.queries, data.dev_qrels, {}, {}};
  const auto td = supervised_data(ds, splits);
  auto provider = std::make_shared<StubProvider>(0, 32);
  auto rc = e2e_config();
  auto tc = e2e_trainer();
  tc.optimizer.learning_rate = 0.0;
  LossConfig lc;
  lc.negatives = 8;
  const auto frozen =
      train(ScorerKind::mafin, provider, initial_state(ScorerKind::mafin, rc, 32, 1), td, lc, tc);
  bool ok = frozen.report.stopping_epoch == 5 && frozen.report.stop_reason == "patience";

  // Every real run stopped right after its fourth consecutive non-improving epoch.
  std::size_t runs = 0;
  for (const auto* grid : {&r.aug_grid, &r.mafin_grid, &r.unsup_grid}) {
    ok = ok && grid->reports.size() == 6 && grid->grid == std::vector<double>{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    for (std::size_t i = 0; i < grid->reports.size(); ++i) {
      const auto& rep = grid->reports[i];
      ok = ok && rep.loss.smoothing == grid->grid[i];
      std::size_t streak = 0;
      for (std::size_t e = 0; e < rep.epochs.size(); ++e) {
        streak = rep.epochs[e].improved ? 0 : streak + 1;
        const bool last = e + 1 == rep.epochs.size();
        if (!last) ok = ok && streak < 4;
      }
      if (rep.stop_reason == "patience") {
        ok = ok && streak == 4;
      } else {
        ok = ok && rep.stopping_epoch == 100 && streak < 4;
      }
      ++runs;
    }
  }
  return {ok, "frozen model stopped at epoch " + std::to_string(frozen.report.stopping_epoch) + "; " +
                  std::to_string(runs) + " grid runs over {0, 0.1, 0.2, 0.3, 0.4, 0.5} checked"};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  {
    Clock c;
    auto o = mafin_identity();
    report(1, "mafin cosine identity", o, c.seconds(), 1);
  }
  {
    Clock c;
    auto o = lambda_identity();
    report(2, "lambda-mafin weighted identity", o, c.seconds(), 1);
  }
  {
    Clock c;
    auto o = loss_oracles();
    report(3, "ranking-loss oracles", o, c.seconds(), 10);
  }
  {
    Clock c;
    auto o = gradient_suite();
    report(4, "gradient check", o, c.seconds(), 60);
  }
  {
    Clock c;
    auto o = metric_suite();
    report(5, "metric oracles", o, c.seconds(), 5);
  }
  const auto first = run_e2e();
  report(6, "supervised synthetic experiment", supervised_outcome(first), first.supervised_secs, 300);
  report(7, "unsupervised synthetic experiment", unsupervised_outcome(first), first.unsupervised_secs, 300);
  {
    const auto second = run_e2e();
    const bool same = first.supervised_json == second.supervised_json &&
                      first.unsupervised_json == second.unsupervised_json;
    report(8, "determinism", {same, same ? "rerun reports are byte-identical"
                                          : "rerun reports differ"},
           second.supervised_secs + second.unsupervised_secs, 600);
  }
  {
    Clock c;
    auto o = protocol_conformance(first);
    report(9, "protocol conformance", o, c.seconds(), 60);
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
