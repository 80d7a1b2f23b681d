#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "xmt/experiment.hpp"

using namespace xmt;
namespace fs = std::filesystem;

namespace {

const char* kTiny =
    "# small benchmark\n"
    "data = synthetic\n"
    "synthetic.num_src_classes = 4\n"
    "synthetic.num_tgt_classes = 3\n"
    "synthetic.overlap_classes = 1\n"
    "synthetic.pairs_per_class = 12\n"
    "synthetic.image_dim = 8\n"
    "synthetic.text_dim = 6\n"
    "synthetic.latent_dim = 4\n"
    "target_split = 0.5, 0.5, 0\n"
    "seed = 11\n"
    "hidden = 8\n"
    "batch_size = 8\n"
    "pretrain_epochs = 2\n"
    "max_iterations = 2   # short\n";

ExperimentConfig tiny(Mode mode = Mode::Full) {
  ExperimentConfig cfg = parse_config(kTiny, "tiny");
  cfg.mode = mode;
  return cfg;
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "c.cfg");
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xmt_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config parsing fills defaults and keeps explicit values") {
  const ExperimentConfig cfg = tiny();
  REQUIRE(cfg.synthetic.has_value());
  CHECK_FALSE(cfg.files.has_value());
  CHECK(cfg.synthetic->num_tgt_classes == 3);
  CHECK(cfg.synthetic->noise_sigma == 1.0);
  CHECK(cfg.target_split == SplitFractions{0.5, 0.5, 0.0});
  CHECK(cfg.seed == 11);
  CHECK(cfg.curriculum.alpha == 0.2);
  CHECK(cfg.curriculum.max_iterations == 2);
  CHECK(cfg.weights == LossWeights{});
  CHECK(cfg.synthetic->seed == derive_seed(11, 1));
}

TEST_CASE("format_config round-trips through parse_config") {
  ExperimentConfig cfg = tiny(Mode::CorrOnly);
  cfg.weights.w_pair_src = 0.123;
  cfg.mmd.bandwidth_rule = BandwidthRule::Fixed;
  cfg.sgd.learning_rate = 0.07;
  CHECK(parse_config(format_config(cfg)) == cfg);

  ExperimentConfig files = parse_config(
      "data = files\nsource_path = a.tsv\ntarget_train_path = b.tsv\ntarget_test_path = c.tsv\n"
      "source_overlap_classes = 0, 3\nseed = 2\n");
  CHECK(files.files->source_overlap_classes == std::vector<int>{0, 3});
  CHECK(parse_config(format_config(files)) == files);
}

TEST_CASE("config errors name the file, line and key") {
  CHECK(error_of("data = synthetic\nbogus = 1\n").find("c.cfg:2") != std::string::npos);
  CHECK(error_of("data = synthetic\nalpha = 0.1\nalpha = 0.2\n").find("duplicate") != std::string::npos);
  CHECK(error_of("data = synthetic\nalpha = lots\n").find("c.cfg:2: alpha") != std::string::npos);
  CHECK(error_of("data = synthetic\nalpha = 0\n").find("alpha") != std::string::npos);
  CHECK(error_of("data = synthetic\nsource_path = x.tsv\n").find("source_path") != std::string::npos);
  CHECK(error_of("seed = 1\n").find("data") != std::string::npos);
  CHECK(error_of("data = synthetic\nmode = everything\n").find("unknown mode") != std::string::npos);
  CHECK(error_of("data = synthetic\nsynthetic.overlap_classes = 9\n").find("overlap") != std::string::npos);
  CHECK(error_of("data = synthetic\nno equals sign\n").find("c.cfg:2") != std::string::npos);
  CHECK(error_of("data = files\nsource_path = a.tsv\n").find("target_train_path") != std::string::npos);
}

TEST_CASE("mode names round-trip") {
  for (Mode m : kAllModes) CHECK(parse_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_mode("Full"), std::invalid_argument);
}

TEST_CASE("pretrain-only never computes an MMD loss") {
  const ExperimentResult r = run_experiment(tiny(Mode::PretrainOnly));
  REQUIRE(r.log.records.size() == 1);
  CHECK(r.log.scoring_runs == 0);
  CHECK(r.log.records[0].mmd_evaluations == 0);
  CHECK(r.log.records[0].mean_losses.mmd_image == 0.0);
  CHECK(r.report.map_average > 0.0);
}

TEST_CASE("ablation modes zero exactly their disabled loss columns") {
  const ExperimentResult media = run_experiment(tiny(Mode::MediaOnly));
  const ExperimentResult corr = run_experiment(tiny(Mode::CorrOnly));
  REQUIRE(media.log.records.size() == 3);
  for (const auto& rec : media.log.records) CHECK(rec.mean_losses.mmd_corr == 0.0);
  for (const auto& rec : corr.log.records) {
    CHECK(rec.mean_losses.mmd_image == 0.0);
    CHECK(rec.mean_losses.mmd_text == 0.0);
  }
  CHECK(media.log.records[1].mean_losses.mmd_image > 0.0);
  CHECK(corr.log.records[1].mean_losses.mmd_corr > 0.0);
  CHECK(media.checkpoint.model.weights.w_mmd_corr == 0.0);
}

TEST_CASE("all-data trains on every target pair") {
  const ExperimentResult r = run_experiment(tiny(Mode::AllData));
  for (std::size_t i = 1; i < r.log.records.size(); ++i) {
    CHECK(r.log.records[i].selected == r.log.records[i].candidates);
  }
}

TEST_CASE("no-overlap drops the shared source classes") {
  const ExperimentConfig cfg = tiny(Mode::NoOverlap);
  const PreparedData data = prepare_data(cfg);
  CHECK(data.overlap_source_classes == std::vector<int>{0});
  const ExperimentResult r = run_experiment(cfg, data);
  CHECK(r.checkpoint.model.source.num_classes() == 4);
  const ExperimentResult full = run_experiment(tiny(Mode::Full), data);
  CHECK(r.log.records[1].steps < full.log.records[1].steps);
}

TEST_CASE("equal seeds give identical logs, reports and checkpoints") {
  const ExperimentResult a = run_experiment(tiny());
  const ExperimentResult b = run_experiment(tiny());
  CHECK(format_training_log(a.log) == format_training_log(b.log));
  CHECK(format_report(a.report) == format_report(b.report));
  CHECK(format_checkpoint(a.checkpoint) == format_checkpoint(b.checkpoint));

  ExperimentConfig other = tiny();
  other.set_seed(12);
  CHECK(format_report(run_experiment(other).report) != format_report(a.report));
}

TEST_CASE("a stored checkpoint reproduces the training report") {
  const ExperimentConfig cfg = tiny();
  const PreparedData data = prepare_data(cfg);
  const ExperimentResult r = run_experiment(cfg, data);
  const Checkpoint back = parse_checkpoint(format_checkpoint(r.checkpoint));
  REQUIRE(back.target_stats.has_value());
  const CrossMediaDataset test = normalize(data.raw_target_test, *back.target_stats).dataset;
  CHECK(format_report(evaluate(back.model, test, Domain::Target)) == format_report(r.report));
}

TEST_CASE("generated files train exactly like the in-memory benchmark") {
  const ExperimentConfig cfg = tiny();
  const GeneratedData g = generate_data(cfg);
  const fs::path dir = scratch("files_mode");
  write_artifacts(dir, {{"src.tsv", format_dataset(g.source)},
                        {"train.tsv", format_dataset(g.target.train)},
                        {"test.tsv", format_dataset(g.target.test)},
                        {"run.cfg", "data = files\nsource_path = src.tsv\ntarget_train_path = train.tsv\n"
                                    "target_test_path = test.tsv\nsource_overlap_classes = 0\nseed = 11\n"
                                    "hidden = 8\nbatch_size = 8\npretrain_epochs = 2\nmax_iterations = 2\n"}});
  const ExperimentConfig files = load_config(dir / "run.cfg");
  CHECK(files.files->source == dir / "src.tsv");
  const ExperimentResult from_files = run_experiment(files);
  const ExperimentResult in_memory = run_experiment(cfg);
  CHECK(format_report(from_files.report) == format_report(in_memory.report));
  CHECK(format_training_log(from_files.log) == format_training_log(in_memory.log));
  fs::remove_all(dir);
}

TEST_CASE("alpha sweep returns one row per alpha") {
  ExperimentConfig cfg = tiny();
  cfg.mode = Mode::PretrainOnly;
  const auto rows = sweep_alpha(cfg, {0.1, 1.0});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].first == 0.1);
  ExperimentConfig single = tiny();
  single.curriculum.alpha = 1.0;
  CHECK(rows[1].second == run_experiment(single).report.map_average);
  CHECK(format_sweep(rows).rfind("alpha\tmap_average\n0.1\t", 0) == 0);
  CHECK_THROWS_AS(sweep_alpha(cfg, {0.5, 1.5}), std::invalid_argument);
  CHECK_THROWS_AS(sweep_alpha(cfg, {}), std::invalid_argument);
}

TEST_CASE("artifacts appear together or not at all") {
  const fs::path dir = scratch("artifacts");
  write_artifacts(dir, {{"a.txt", "one"}, {"b.txt", "two"}});
  std::ifstream in(dir / "b.txt");
  std::string body;
  std::getline(in, body);
  CHECK(body == "two");
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().filename().string()[0] != '.');

  const fs::path blocked = dir / "a.txt" / "sub";
  CHECK_THROWS(write_artifacts(blocked, {{"c.txt", "x"}}));
  CHECK_THROWS(write_artifacts(dir, {{"c.txt", "x"}, {"missing/d.txt", "y"}}));
  CHECK_FALSE(fs::exists(dir / "c.txt"));
  fs::remove_all(dir);
}
