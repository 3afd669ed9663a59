#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "mafin/error.hpp"
#include "mafin/ranking.hpp"

using namespace mafin;

namespace {

std::vector<double> random_scores(Rng& rng, std::size_t k, double scale = 2.0) {
  std::vector<double> s(k);
  for (auto& x : s) x = scale * rng.normal();
  return s;
}

std::vector<int> random_labels(Rng& rng, std::size_t k) {
  std::vector<int> y(k);
  for (auto& x : y) x = static_cast<int>(rng.uniform_index(4));
  return y;
}

/// Unstabilized softmax, written out directly.
std::vector<double> naive_softmax(const std::vector<double>& s) {
  double z = 0;
  for (double x : s) z += std::exp(x);
  std::vector<double> p;
  for (double x : s) p.push_back(std::exp(x) / z);
  return p;
}

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

double naive_pl_prob(const std::vector<double>& s, const std::vector<std::size_t>& perm) {
  double p = 1;
  for (std::size_t r = 0; r < perm.size(); ++r) {
    double z = 0;
    for (std::size_t j = r; j < perm.size(); ++j) z += std::exp(s[perm[j]]);
    p *= std::exp(s[perm[r]]) / z;
  }
  return p;
}

Corpus make_corpus(std::size_t n) {
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) c.add({"d" + std::to_string(i), "", "text " + std::to_string(i)});
  return c;
}

}  // namespace

TEST_CASE("plackett-luce probabilities") {
  const std::vector<double> s{1, 0, 0};
  const std::vector<std::size_t> id{0, 1, 2};
  const double e = std::exp(1.0);
  CHECK(pl_prob(s, id) == doctest::Approx(e / (e + 2) * 0.5).epsilon(1e-12));
  CHECK(pl_prob(s, id) == doctest::Approx(0.2880584).epsilon(1e-7));
  const std::vector<double> flat{0, 0};
  CHECK(pl_prob(flat, std::vector<std::size_t>{1, 0}) == doctest::Approx(0.5));

  Rng rng(1);
  for (std::size_t k = 2; k <= 6; ++k) {
    const auto sc = random_scores(rng, k);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    double total = 0;
    do {
      const double p = pl_prob(sc, perm);
      CHECK(p == doctest::Approx(naive_pl_prob(sc, perm)).epsilon(1e-10));
      total += p;
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("top-1 targets") {
  const std::vector<int> y{2, 1, 0};
  const auto t = top1_target(y, 1.0, 0.0);
  CHECK(t[0] == doctest::Approx(0.6652410).epsilon(1e-7));
  CHECK(t[1] == doctest::Approx(0.2447285).epsilon(1e-7));
  CHECK(t[2] == doctest::Approx(0.0900306).epsilon(1e-7));
  CHECK(std::abs(t[0] + t[1] + t[2] - 1.0) < 1e-12);

  const auto eq = top1_target(std::vector<int>{1, 1}, 0.3, 0.0);
  CHECK(eq[0] == doctest::Approx(0.5));
  const auto sm = top1_target(std::vector<int>{1, 0}, 1e-6, 0.2);
  CHECK(sm[0] == doctest::Approx(0.9));
  CHECK(sm[1] == doctest::Approx(0.1));

  // Small temperature approaches the delta at the maximum.
  const auto d = top1_target(std::vector<int>{0, 3, 1, 2}, 1e-6, 0.0);
  double tv = 0;
  for (std::size_t k = 0; k < d.size(); ++k) tv += std::abs(d[k] - (k == 1 ? 1.0 : 0.0));
  CHECK(tv / 2 < 1e-6);
}

TEST_CASE("infonce values") {
  CHECK(infonce_loss(0, std::vector<double>{2, 0}).loss == doctest::Approx(0.1269280).epsilon(1e-7));
  CHECK(infonce_loss(1, std::vector<double>{0.3, 0.3}).loss == doctest::Approx(std::log(2.0)));
  CHECK(argmax_label(std::vector<int>{1, 3, 3, 0}) == 1);
}

TEST_CASE("top-1 loss matches direct arithmetic") {
  Rng rng(2);
  const auto s = random_scores(rng, 5);
  const auto t = naive_softmax(random_scores(rng, 5));
  const auto p = naive_softmax(s);
  double expected = 0;
  for (std::size_t k = 0; k < 5; ++k) expected -= t[k] * std::log(p[k]);
  CHECK(top1_kl_loss(t, s).loss == doctest::Approx(expected).epsilon(1e-10));
  // Matching distributions leave only the entropy.
  CHECK(top1_kl_loss(p, s).loss == doctest::Approx(entropy(p)).epsilon(1e-9));
  // One-hot target against a uniform model.
  CHECK(top1_kl_loss(std::vector<double>{0, 0, 1, 0}, std::vector<double>{1, 1, 1, 1}).loss ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("infonce equals top-1 with a delta target") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const std::size_t k = 2 + rng.uniform_index(30);
    const auto s = random_scores(rng, k, 5.0);
    const std::size_t pos = rng.uniform_index(k);
    std::vector<double> delta(k, 0.0);
    delta[pos] = 1.0;
    const auto a = infonce_loss(pos, s);
    const auto b = top1_kl_loss(delta, s);
    CHECK(std::abs(a.loss - b.loss) <= 1e-12);
    for (std::size_t j = 0; j < k; ++j) CHECK(std::abs(a.dscores[j] - b.dscores[j]) <= 1e-12);
  }
}

TEST_CASE("full plackett-luce loss") {
  SUBCASE("two items reduce to binary cross-entropy and match top-1") {
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      const auto s = random_scores(rng, 2);
      const auto y = random_labels(rng, 2);
      const double tau = 0.5 + rng.uniform_real();
      const auto ps = naive_softmax({y[0] / tau, y[1] / tau});
      const auto pt = naive_softmax(s);
      const double bce = -(ps[0] * std::log(pt[0]) + ps[1] * std::log(pt[1]));
      CHECK(pl_kl_loss(y, s, tau).loss == doctest::Approx(bce).epsilon(1e-12));
      CHECK(std::abs(pl_kl_loss(y, s, tau).loss - top1_kl_loss(top1_target(y, tau, 0), s).loss) <
            1e-12);
    }
  }
  SUBCASE("equal labels give the mean negative log-likelihood") {
    const std::vector<double> s{0.4, -1.0, 2.0};
    std::vector<std::size_t> perm{0, 1, 2};
    double mean = 0;
    do mean -= std::log(naive_pl_prob(s, perm)) / 6;
    while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(pl_kl_loss(std::vector<int>{1, 1, 1}, s, 1.0).loss == doctest::Approx(mean).epsilon(1e-12));
  }
  SUBCASE("enumeration oracle with smoothing") {
    Rng rng(5);
    const auto s = random_scores(rng, 4);
    const std::vector<int> y{2, 0, 1, 1};
    const double tau = 0.7, eps = 0.3;
    std::vector<double> ylab(y.begin(), y.end());
    for (auto& v : ylab) v /= tau;
    std::vector<std::size_t> perm{0, 1, 2, 3};
    double expected = 0;
    do {
      const double target = (1 - eps) * naive_pl_prob(ylab, perm) + eps / 24.0;
      expected -= target * std::log(naive_pl_prob(s, perm));
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(pl_kl_loss(y, s, tau, eps).loss == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK_THROWS_WITH_AS(pl_kl_loss(std::vector<int>(9, 0), std::vector<double>(9, 0.0), 1.0),
                       doctest::Contains("top1_kl"), UsageError);
}

TEST_CASE("loss gradients match finite differences on the scores") {
  Rng rng(6);
  for (auto kind : {LossKind::pl_full, LossKind::top1_kl, LossKind::infonce}) {
    for (double eps : {0.0, 0.3}) {
      LossConfig cfg;
      cfg.kind = kind;
      cfg.smoothing = eps;
      cfg.temperature = 0.8;
      const auto y = std::vector<int>{0, 2, 1, 0, 1};
      auto s = random_scores(rng, 5);
      const auto v = compute_loss(cfg, y, s);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double h = 1e-6, orig = s[k];
        s[k] = orig + h;
        const double up = compute_loss(cfg, y, s).loss;
        s[k] = orig - h;
        const double down = compute_loss(cfg, y, s).loss;
        s[k] = orig;
        CHECK(v.dscores[k] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("loss invariants on random cases") {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng.uniform_index(5);
    const auto s = random_scores(rng, k);
    const auto y = random_labels(rng, k);
    const double tau = 0.2 + 2 * rng.uniform_real();
    const double eps = 0.5 * rng.uniform_real();
    auto shifted = s;
    const double c = 10 * rng.normal();
    for (auto& x : shifted) x += c;
    for (auto kind : {LossKind::pl_full, LossKind::top1_kl, LossKind::infonce}) {
      LossConfig cfg;
      cfg.kind = kind;
      cfg.temperature = tau;
      cfg.smoothing = eps;
      const double a = compute_loss(cfg, y, s).loss;
      CHECK(std::abs(a - compute_loss(cfg, y, shifted).loss) < 1e-9);
    }
    const auto t = top1_target(y, tau, eps);
    CHECK(top1_kl_loss(t, s).loss - entropy(t) >= -1e-12);
  }
}

TEST_CASE("loss config validation and names") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.smoothing = 0.6;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c.smoothing = 0.0;
  c.temperature = 0.0;
  CHECK_NOTHROW(c.validate());  // infonce ignores the temperature
  c.kind = LossKind::top1_kl;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c.temperature = 1.0;
  c.negatives = 1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c.kind = LossKind::pl_full;
  c.negatives = 9;
  CHECK_THROWS_AS(c.validate(), UsageError);
  for (auto k : {LossKind::pl_full, LossKind::top1_kl, LossKind::infonce})
    CHECK(loss_kind_from_string(to_string(k)) == k);
  CHECK(train_score_mode_from_string(to_string(TrainScoreMode::aug_only)) == TrainScoreMode::aug_only);
  CHECK_THROWS_AS(loss_kind_from_string("hinge"), UsageError);
}

TEST_CASE("negative sampling") {
  SUBCASE("corpus of exactly M passages") {
    const auto corpus = make_corpus(5);
    Qrels q;
    q.set("q", "d2", 1);
    Rng rng(1);
    const auto l = sample_negatives("q", q, corpus, 5, rng);
    auto sorted = l.passages;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(l.passages[l.positive_index] == 2);
    CHECK(l.labels[l.positive_index] == 1);
    CHECK(std::accumulate(l.labels.begin(), l.labels.end(), 0) == 1);
  }
  SUBCASE("deterministic per seed") {
    const auto corpus = make_corpus(50);
    Qrels q;
    q.set("q", "d7", 1);
    Rng a(9), b(9);
    const auto x = sample_negatives("q", q, corpus, 8, a);
    const auto y = sample_negatives("q", q, corpus, 8, b);
    CHECK(x.passages == y.passages);
    CHECK(x.positive_index == y.positive_index);
  }
  SUBCASE("negatives are uniform over label-0 passages") {
    for (std::size_t n : {12, 60}) {
      const auto corpus = make_corpus(n);
      Qrels q;
      q.set("q", "d0", 2);
      q.set("q", "d1", 1);
      const std::size_t m = 4, eligible = n - 2, draws = 10000;
      Rng rng(11);
      std::map<std::size_t, int> counts;
      for (std::size_t i = 0; i < draws; ++i) {
        const auto l = sample_negatives("q", q, corpus, m, rng);
        CHECK(l.passages[l.positive_index] == 0);
        std::set<std::size_t> distinct(l.passages.begin(), l.passages.end());
        CHECK(distinct.size() == m);
        for (std::size_t j = 0; j < m; ++j)
          if (j != l.positive_index) ++counts[l.passages[j]];
      }
      CHECK(counts.count(1) == 0);
      const double p = double(m - 1) / eligible;
      const double mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
      CHECK(counts.size() == eligible);
      for (const auto& [idx, c] : counts) CHECK(std::abs(c - mean) <= 3 * sigma);
    }
  }
  SUBCASE("positives are uniform among the top label") {
    const auto corpus = make_corpus(20);
    Qrels q;
    q.set("q", "d3", 2);
    q.set("q", "d4", 2);
    q.set("q", "d5", 1);
    Rng rng(2);
    int first = 0;
    for (int i = 0; i < 2000; ++i) {
      const auto l = sample_negatives("q", q, corpus, 3, rng);
      const auto pos = l.passages[l.positive_index];
      CHECK((pos == 3 || pos == 4));
      first += pos == 3;
    }
    CHECK(std::abs(first - 1000) < 3 * std::sqrt(500.0));
  }
  SUBCASE("too few negatives samples with replacement and warns") {
    const auto corpus = make_corpus(3);
    Qrels q;
    q.set("q", "d0", 1);
    Rng rng(3);
    Diagnostics diag;
    const auto l = sample_negatives("q", q, corpus, 6, rng, &diag);
    CHECK(l.passages.size() == 6);
    CHECK(diag.warnings.size() == 1);
    for (std::size_t j = 0; j < 6; ++j)
      if (j != l.positive_index) CHECK(l.passages[j] != 0);
  }
  SUBCASE("errors") {
    const auto corpus = make_corpus(3);
    Qrels q;
    q.set("q", "d0", 0);
    Rng rng(3);
    CHECK_THROWS_AS(sample_negatives("q", q, corpus, 2, rng), DataError);
    CHECK_THROWS_AS(sample_negatives("q", q, corpus, 1, rng), UsageError);
  }
}

TEST_CASE("pipeline gradient through the scorer matches finite differences") {
  const FeatureHasher h(1u << 8, 3);
  auto model = AugmentingModel::random(h, 6, EmbeddingMode::normalized, 5);
  const char* texts[] = {"query about retrieval", "retrieval passage", "unrelated cooking text",
                         "another retrieval text", "sports results"};
  std::vector<SparseFeatures> f;
  std::vector<EmbeddingVector> bb;
  for (const char* t : texts) {
    f.push_back(h.featurize(t));
    bb.push_back(stub_embed(0, 8, t));
  }
  std::vector<TextInputs> cands;
  for (std::size_t i = 1; i < 5; ++i) cands.push_back({&bb[i], &f[i]});
  const TextInputs q{&bb[0], &f[0]};
  const std::vector<int> labels{1, 0, 0, 0};
  for (auto kind : {LossKind::top1_kl, LossKind::infonce, LossKind::pl_full}) {
    LossConfig cfg;
    cfg.kind = kind;
    cfg.smoothing = 0.1;
    ListScorer scorer(ScorerKind::mafin, &model, nullptr);
    GradientBuffer grad;
    loss_backward(cfg, labels, scorer, q, cands, &grad);
    double max_rel = 0;
    for (const auto& [feature, col] : grad.aug.columns()) {
      for (std::size_t r = 0; r < model.dim(); ++r) {
        const double w = model.weight(r, feature), step = 1e-5;
        model.set_weight(r, feature, w + step);
        const double up = loss_backward(cfg, labels, scorer, q, cands, nullptr);
        model.set_weight(r, feature, w - step);
        const double down = loss_backward(cfg, labels, scorer, q, cands, nullptr);
        model.set_weight(r, feature, w);
        const double fd = (up - down) / (2 * step);
        max_rel = std::max(max_rel, std::abs(fd - col[r]) / std::max(1e-3, std::abs(fd)));
      }
    }
    CHECK(max_rel < 1e-4);
  }
}

TEST_CASE("train-score modes give different gradients") {
  const FeatureHasher h(1u << 8, 3);
  const auto model = AugmentingModel::random(h, 6, EmbeddingMode::normalized, 5);
  const char* texts[] = {"query", "first passage", "second passage"};
  std::vector<SparseFeatures> f;
  std::vector<EmbeddingVector> bb;
  for (const char* t : texts) {
    f.push_back(h.featurize(t));
    bb.push_back(stub_embed(1, 8, t));
  }
  const std::vector<TextInputs> cands{{&bb[1], &f[1]}, {&bb[2], &f[2]}};
  LossConfig cfg;
  GradientBuffer combined, aug;
  ListScorer a(ScorerKind::mafin, &model, nullptr), b(ScorerKind::aug_only, &model, nullptr);
  loss_backward(cfg, std::vector<int>{1, 0}, a, {&bb[0], &f[0]}, cands, &combined);
  loss_backward(cfg, std::vector<int>{1, 0}, b, {&bb[0], &f[0]}, cands, &aug);
  double diff = 0;
  for (const auto& [feature, col] : combined.aug.columns())
    for (std::size_t r = 0; r < 6; ++r) diff += std::abs(col[r] - aug.aug.get(r, feature));
  CHECK(diff > 1e-6);
}

TEST_CASE("gradient vanishes after convergence on a separable toy set") {
  const FeatureHasher h(1u << 10, 1);
  auto model = AugmentingModel::random(h, 4, EmbeddingMode::normalized, 2);
  const char* texts[] = {"alpha", "alpha beta", "gamma delta"};
  std::vector<SparseFeatures> f;
  for (const char* t : texts) f.push_back(h.featurize(t));
  const std::vector<TextInputs> cands{{nullptr, &f[1]}, {nullptr, &f[2]}};
  LossConfig cfg;
  ListScorer scorer(ScorerKind::aug_only, &model, nullptr);
  double gnorm = 1;
  for (int step = 0; step < 20000 && gnorm > 1e-6; ++step) {
    GradientBuffer grad;
    loss_backward(cfg, std::vector<int>{1, 0}, scorer, {nullptr, &f[0]}, cands, &grad);
    gnorm = std::sqrt(grad.aug.squared_norm());
    for (const auto& [feature, col] : grad.aug.columns())
      for (std::size_t r = 0; r < model.dim(); ++r)
        model.set_weight(r, feature, model.weight(r, feature) - 0.5 * col[r]);
  }
  CHECK(gnorm < 1e-6);
}
