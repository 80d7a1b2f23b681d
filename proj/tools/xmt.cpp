// xmt: generate synthetic transfer data, train, evaluate and sweep alpha.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "xmt/checkpoint.hpp"
#include "xmt/experiment.hpp"

namespace {

using namespace xmt;

void configure_logging() {
  const char* env = std::getenv("XMT_LOG");
  const std::string level = env ? env : "info";
  if (level == "quiet") {
    spdlog::set_level(spdlog::level::off);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    if (level != "info") std::cerr << "xmt: unknown XMT_LOG '" << level << "', using info\n";
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%l] %v");
}

std::string join_csv(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

ExperimentConfig resolve(const std::string& path, std::optional<std::uint64_t> seed, const std::string& mode) {
  ExperimentConfig cfg = load_config(path);
  if (seed) cfg.set_seed(*seed);
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  cfg.validate();
  return cfg;
}

std::vector<double> parse_alphas(const std::string& csv) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto end = std::min(csv.find(',', start), csv.size());
    const std::string part = csv.substr(start, end - start);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size()) throw std::invalid_argument("bad alpha '" + part + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

void cmd_generate(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  const ExperimentConfig cfg = resolve(config_path, seed, "");
  const GeneratedData data = generate_data(cfg);

  // The manifest doubles as a files-mode config for the written datasets.
  std::string manifest = "# generated from\n";
  std::string resolved = format_config(cfg);
  for (std::size_t start = 0; start < resolved.size();) {
    const auto end = resolved.find('\n', start);
    manifest += "#   " + resolved.substr(start, end - start) + "\n";
    start = end + 1;
  }
  manifest += "data = files\n";
  manifest += "source_path = src.tsv\n";
  manifest += "target_train_path = tgt_train.tsv\n";
  manifest += "target_test_path = tgt_test.tsv\n";
  manifest += "source_overlap_classes = " + join_csv(data.overlap_source_classes) + "\n";
  manifest += "seed = " + std::to_string(cfg.seed) + "\n";

  write_artifacts(out_dir, {
                               {"src.tsv", format_dataset(data.source)},
                               {"tgt_train.tsv", format_dataset(data.target.train)},
                               {"tgt_test.tsv", format_dataset(data.target.test)},
                               {"tgt_val.tsv", format_dataset(data.target.validation)},
                               {"manifest.txt", manifest},
                           });
  spdlog::info("wrote {} source, {}/{}/{} target pairs to {}", data.source.size(), data.target.train.size(),
               data.target.test.size(), data.target.validation.size(), out_dir);
}

void cmd_train(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
               const std::string& mode) {
  const ExperimentConfig cfg = resolve(config_path, seed, mode);
  const PreparedData data = prepare_data(cfg);
  const ExperimentResult result = run_experiment(cfg, data);

  std::vector<std::string> preamble;
  const std::string resolved = format_config(cfg);
  for (std::size_t start = 0; start < resolved.size();) {
    const auto end = resolved.find('\n', start);
    preamble.push_back(resolved.substr(start, end - start));
    start = end + 1;
  }
  const std::string report = format_report(result.report);
  write_artifacts(out_dir, {
                               {"config.txt", resolved},
                               {"checkpoint.txt", format_checkpoint(result.checkpoint)},
                               {"training_log.tsv", format_training_log(result.log, preamble)},
                               {"report.txt", report},
                               {"per_query_ap.tsv", format_per_query_ap(result.report)},
                               {"target_test.tsv", format_dataset(data.raw_target_test)},
                           });
  std::cout << report;
}

void cmd_eval(const std::string& checkpoint_path, const std::string& data_path, const std::string& domain_name,
              const std::string& direction_name, const std::string& dump_ap) {
  const Direction direction = parse_direction(direction_name);
  Domain domain;
  if (domain_name == "target") {
    domain = Domain::Target;
  } else if (domain_name == "source") {
    domain = Domain::Source;
  } else {
    throw std::invalid_argument("unknown domain '" + domain_name + "' (expected source or target)");
  }
  const Checkpoint cp = load_checkpoint(checkpoint_path);
  CrossMediaDataset data = load_dataset(data_path);
  const DomainNetwork& net = domain == Domain::Target ? cp.model.target : cp.model.source;
  const NetworkShape shape = net.shape();
  if (data.image_dim != shape.image_dim || data.text_dim != shape.text_dim) {
    throw std::invalid_argument("dimension mismatch: checkpoint " + std::string(to_string(domain)) +
                                " network expects (image " + std::to_string(shape.image_dim) + ", text " +
                                std::to_string(shape.text_dim) + "), dataset has (image " +
                                std::to_string(data.image_dim) + ", text " + std::to_string(data.text_dim) + ")");
  }
  const auto& stats = domain == Domain::Target ? cp.target_stats : cp.source_stats;
  if (stats) data = normalize(data, *stats).dataset;
  const RetrievalReport report = evaluate(cp.model, data, domain);
  const std::string text = format_report(report, direction);
  if (!dump_ap.empty()) {
    const std::filesystem::path dump(dump_ap);
    const auto dir = dump.has_parent_path() ? dump.parent_path() : std::filesystem::path(".");
    write_artifacts(dir, {{dump.filename().string(), format_per_query_ap(report)}});
  }
  std::cout << text;
}

void cmd_sweep(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
               const std::string& alphas_csv) {
  const ExperimentConfig cfg = resolve(config_path, seed, "");
  const auto rows = sweep_alpha(cfg, parse_alphas(alphas_csv));
  const std::string table = format_sweep(rows);
  ExperimentConfig resolved = cfg;
  resolved.mode = Mode::Full;
  write_artifacts(out_dir, {{"config.txt", format_config(resolved)}, {"alpha_sweep.tsv", table}});
  std::cout << table;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Cross-media knowledge transfer experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string alphas = "0.01,0.05,0.1,0.2,0.5,1.0";
  std::string checkpoint_path;
  std::string data_path;
  std::string domain = "target";
  std::string direction = "both";
  std::string dump_ap;

  auto* gen = app.add_subcommand("generate", "Write a synthetic source/target benchmark");
  gen->add_option("--config", config_path, "Experiment config with synthetic.* keys")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the config seed");

  auto* train = app.add_subcommand("train", "Pretrain, transfer and evaluate on the target test split");
  train->add_option("--config", config_path, "Experiment config")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--mode", mode, "full, pretrain-only, media-only, corr-only, all-data, random-select, no-overlap");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint written by train")->required();
  eval->add_option("--data", data_path, "Dataset TSV (raw features)")->required();
  eval->add_option("--domain", domain, "source or target network")->capture_default_str();
  eval->add_option("--direction", direction, "both, i2t or t2i")->capture_default_str();
  eval->add_option("--dump-ap", dump_ap, "Also write per-query AP to this file");

  auto* sweep = app.add_subcommand("sweep-alpha", "Train mode=full once per alpha");
  sweep->add_option("--config", config_path, "Experiment config")->required();
  sweep->add_option("--out", out_dir, "Output directory")->required();
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--alphas", alphas, "Comma-separated alpha values")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) cmd_generate(config_path, out_dir, seed);
    if (*train) cmd_train(config_path, out_dir, seed, mode);
    if (*eval) cmd_eval(checkpoint_path, data_path, domain, direction, dump_ap);
    if (*sweep) cmd_sweep(config_path, out_dir, seed, alphas);
  } catch (const std::exception& e) {
    std::cerr << "xmt: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
