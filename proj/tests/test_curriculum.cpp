#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "xmt/curriculum.hpp"
#include "xmt/retrieval.hpp"

using namespace xmt;

namespace {

struct Bench {
  CrossMediaDataset source;
  CrossMediaDataset target;
  DcktModel model;
};

Bench small_bench(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_src_classes = 4;
  spec.num_tgt_classes = 3;
  spec.overlap_classes = 1;
  spec.pairs_per_class = 12;
  spec.image_dim = 8;
  spec.text_dim = 6;
  spec.latent_dim = 4;
  spec.seed = seed;
  const SyntheticDomains d = generate_synthetic(spec);
  Bench b{normalize(d.source).dataset, normalize(d.target).dataset,
          make_model({8, 6, 8, 4}, {8, 6, 8, 3}, LossWeights{}, MmdConfig{}, seed)};
  return b;
}

ConsistencyScores scores_of(std::vector<double> ap_sum, int iteration) {
  ConsistencyScores s;
  s.ap_sum = ap_sum;
  s.ap_img.assign(ap_sum.size(), 0.0);
  s.ap_txt = ap_sum;
  s.iteration = iteration;
  return s;
}

}  // namespace

TEST_CASE("selection probability boundary values") {
  CHECK(selection_prob(1.3, 1.3, 1, 0.2) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(selection_prob(1.3, 1.3, 9, 0.7) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(std::abs(selection_prob(0.0, 1.3, 1, 0.2)) < 1e-12);
  CHECK(std::abs(selection_prob(0.0, 1.3, 2, 0.2) - 0.2 * (1.0 - std::log2(1.5))) < 1e-12);
  CHECK(selection_prob(0.0, 0.0, 3, 0.4) == 0.4);
  CHECK_THROWS_AS(selection_prob(1.5, 1.3, 1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(selection_prob(0.5, 1.3, 0, 0.2), std::invalid_argument);
}

TEST_CASE("selection probability stays in its band and approaches alpha") {
  for (int iter : {1, 2, 5, 50}) {
    const double low = 0.3 * (1.0 - std::log2(1.0 + 1.0 / iter));
    for (double ap = 0.0; ap <= 2.0; ap += 0.125) {
      const double p = selection_prob(ap, 2.0, iter, 0.3);
      CHECK(p <= 0.3);
      CHECK(p >= low - 1e-15);
      CHECK(p == doctest::Approx(oracle::selection_prob(ap, 2.0, iter, 0.3)).epsilon(1e-12));
    }
  }
  CHECK(selection_prob(0.0, 2.0, 100000, 0.3) == doctest::Approx(0.3).epsilon(1e-4));
}

TEST_CASE("an empty draw force-selects the top pair") {
  CurriculumConfig cfg;
  cfg.alpha = 1e-12;
  std::mt19937_64 rng(0);
  const SelectionRecord r = select_samples(scores_of({0.2, 1.5, 1.5, 0.1}, 1), cfg, rng);
  CHECK(r.forced);
  CHECK(r.count() == 1);
  CHECK(r.selected[1]);
  CHECK(r.draws.size() == 4);
}

TEST_CASE("alpha 1 with equal scores selects everything") {
  CurriculumConfig cfg;
  cfg.alpha = 1.0;
  std::mt19937_64 rng(0);
  const SelectionRecord r = select_samples(scores_of({0.8, 0.8, 0.8}, 3), cfg, rng);
  CHECK(r.count() == 3);
  CHECK_FALSE(r.forced);
}

TEST_CASE("the random rule ignores scores and the all rule keeps every pair") {
  CurriculumConfig cfg;
  cfg.alpha = 0.25;
  cfg.rule = SelectionRule::Random;
  std::mt19937_64 rng(1);
  const SelectionRecord r = select_samples(scores_of({0.0, 2.0, 1.0}, 1), cfg, rng);
  for (double p : r.probability) CHECK(p == 0.25);
  cfg.rule = SelectionRule::All;
  CHECK(select_samples(scores_of({0.0, 2.0, 1.0}, 1), cfg, rng).count() == 3);
}

TEST_CASE("selection frequencies follow the probabilities") {
  // 40 pairs make an empty draw (and the forced fallback) negligible.
  std::vector<double> ap(40);
  for (std::size_t i = 0; i < ap.size(); ++i) ap[i] = 2.0 * static_cast<double>(i) / 39.0;
  const ConsistencyScores s = scores_of(ap, 2);
  CurriculumConfig cfg;
  cfg.alpha = 0.6;
  std::mt19937_64 rng(42);
  std::vector<int> hits(ap.size(), 0);
  std::vector<double> prob;
  for (int trial = 0; trial < 10000; ++trial) {
    const SelectionRecord r = select_samples(s, cfg, rng);
    prob = r.probability;
    for (std::size_t i = 0; i < ap.size(); ++i) hits[i] += r.selected[i] ? 1 : 0;
  }
  for (std::size_t i = 0; i < ap.size(); ++i) CHECK(std::abs(hits[i] / 10000.0 - prob[i]) <= 0.02);
}

TEST_CASE("consistency scores add the two retrieval directions") {
  const Bench b = small_bench(3);
  const ConsistencyScores s = score_consistency(b.model.source, b.target, 4);
  CHECK(s.iteration == 4);
  REQUIRE(s.ap_sum.size() == b.target.size());
  const PairedBatch batch = make_batch(b.target);
  const Matrix img = embed_batch(b.model.source, Media::Image, batch.image);
  const Matrix txt = embed_batch(b.model.source, Media::Text, batch.text);
  CHECK(s.ap_img == oracle::query_aps(img, batch.labels, txt, batch.labels));
  CHECK(s.ap_txt == oracle::query_aps(txt, batch.labels, img, batch.labels));
  for (std::size_t q = 0; q < s.ap_sum.size(); ++q) {
    CHECK(s.ap_sum[q] == s.ap_img[q] + s.ap_txt[q]);
    CHECK(s.ap_sum[q] <= 2.0);
  }

  CrossMediaDataset missing = b.target;
  std::erase_if(missing.pairs, [](const CrossMediaPair& p) { return p.label == 2; });
  CHECK_THROWS_AS(score_consistency(b.model.source, missing, 1), std::invalid_argument);
  CHECK_THROWS_AS(score_consistency(b.model.source, b.target.empty_like(), 1), std::invalid_argument);
}

TEST_CASE("progressive transfer runs pretraining once and scores every iteration") {
  Bench b = small_bench(5);
  CurriculumConfig cfg;
  cfg.max_iterations = 3;
  cfg.seed = 9;
  TrainingSchedule schedule;
  schedule.pretrain_epochs = 2;
  schedule.batch_size = 8;
  const TrainingLog log = progressive_transfer(b.model, b.source, b.target, cfg, schedule, SgdConfig{});
  CHECK(log.pretrain_runs == 1);
  CHECK(log.scoring_runs == 3);
  REQUIRE(log.records.size() == 4);
  CHECK(log.records[0].mmd_evaluations == 0);
  CHECK(log.records[0].mean_losses.mmd_corr == 0.0);
  for (std::size_t i = 1; i < 4; ++i) {
    CHECK(log.records[i].iteration == static_cast<int>(i));
    CHECK(log.records[i].steps == 6);
    CHECK(log.records[i].mmd_evaluations == 36);
    CHECK(log.records[i].selected >= 1);
    CHECK(log.records[i].ap_min <= log.records[i].ap_median);
    CHECK(log.records[i].ap_median <= log.records[i].ap_max);
  }
}

TEST_CASE("progressive transfer with one iteration is pretraining plus one pass") {
  Bench b = small_bench(6);
  CurriculumConfig cfg;
  cfg.max_iterations = 1;
  TrainingSchedule schedule;
  schedule.pretrain_epochs = 1;
  schedule.batch_size = 8;
  const TrainingLog log = progressive_transfer(b.model, b.source, b.target, cfg, schedule, SgdConfig{});
  CHECK(log.records.size() == 2);
  CHECK(log.scoring_runs == 1);
}

TEST_CASE("progressive transfer is bit-exact for equal seeds") {
  CurriculumConfig cfg;
  cfg.max_iterations = 2;
  cfg.seed = 3;
  TrainingSchedule schedule;
  schedule.pretrain_epochs = 2;
  schedule.batch_size = 8;
  Bench a = small_bench(7);
  Bench b = small_bench(7);
  const TrainingLog la = progressive_transfer(a.model, a.source, a.target, cfg, schedule, SgdConfig{});
  const TrainingLog lb = progressive_transfer(b.model, b.source, b.target, cfg, schedule, SgdConfig{});
  CHECK(format_training_log(la) == format_training_log(lb));
  CHECK(a.model.source == b.model.source);
  CHECK(a.model.target == b.model.target);

  cfg.seed = 4;
  Bench c = small_bench(7);
  const TrainingLog lc = progressive_transfer(c.model, c.source, c.target, cfg, schedule, SgdConfig{});
  CHECK_FALSE(c.model.target == a.model.target);
}

TEST_CASE("progressive transfer validates its inputs") {
  Bench b = small_bench(8);
  const DcktModel before = b.model;
  CurriculumConfig cfg;
  CHECK_THROWS_AS(progressive_transfer(b.model, b.source.empty_like(), b.target, cfg, {}, {}), std::invalid_argument);
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(progressive_transfer(b.model, b.source, b.target, cfg, {}, {}), std::invalid_argument);
  CHECK(b.model.source == before.source);
}

TEST_CASE("training log has a header and one row per record") {
  TrainingLog log;
  IterationRecord r;
  r.iteration = 2;
  r.steps = 5;
  r.selected = 3;
  r.candidates = 9;
  r.ap_min = 0.5;
  r.ap_median = 1.0;
  r.ap_max = 1.5;
  r.mmd_evaluations = 30;
  r.mean_losses.mmd_text = 0.25;
  log.records.push_back(r);
  const std::string text = format_training_log(log, {"seed = 1"});
  CHECK(text ==
        "# seed = 1\n"
        "iteration\tsteps\tmmd_image\tmmd_text\tmmd_corr\tpair_src\tpair_tgt\tsem_src\tsem_tgt\ttotal\tselected\t"
        "candidates\tap_min\tap_median\tap_max\tmmd_evals\n"
        "2\t5\t0\t0.25\t0\t0\t0\t0\t0\t0\t3\t9\t0.5\t1\t1.5\t30\n");
}
