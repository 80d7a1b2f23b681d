#include "xmt/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "text_util.hpp"

namespace xmt {
namespace {

// Seed streams below the master seed.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kSplitStream = 3;
constexpr std::uint64_t kInitStream = 4;
constexpr std::uint64_t kSgdStream = 5;
constexpr std::uint64_t kSelectStream = 6;

struct ModeName {
  Mode mode;
  std::string_view name;
};

constexpr std::array<ModeName, 7> kModeNames = {{
    {Mode::Full, "full"},
    {Mode::PretrainOnly, "pretrain-only"},
    {Mode::MediaOnly, "media-only"},
    {Mode::CorrOnly, "corr-only"},
    {Mode::AllData, "all-data"},
    {Mode::RandomSelect, "random-select"},
    {Mode::NoOverlap, "no-overlap"},
}};

struct Entry {
  std::string value;
  int line = 0;
};

class ConfigReader {
 public:
  ConfigReader(std::map<std::string, Entry, std::less<>> entries, std::string name)
      : entries_(std::move(entries)), name_(std::move(name)) {}

  bool has(std::string_view key) const { return entries_.count(key) > 0; }

  // Marks the key as consumed and returns its raw value.
  std::optional<Entry> take(std::string_view key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    Entry e = it->second;
    entries_.erase(it);
    return e;
  }

  [[noreturn]] void fail(const Entry& e, std::string_view key, const std::string& msg) const {
    throw std::invalid_argument(name_ + ":" + std::to_string(e.line) + ": " + std::string(key) + ": " + msg);
  }

  void read(std::string_view key, double& out) {
    if (auto e = take(key)) {
      auto v = text::parse_double(e->value);
      if (!v) fail(*e, key, "expected a number, got '" + e->value + "'");
      out = *v;
    }
  }

  template <typename Int>
  void read_int(std::string_view key, Int& out) {
    if (auto e = take(key)) {
      auto v = text::parse_int<Int>(e->value);
      if (!v) fail(*e, key, "expected an integer, got '" + e->value + "'");
      out = *v;
    }
  }

  template <typename T>
  void read_with(std::string_view key, T& out, const std::function<T(std::string_view)>& parse) {
    if (auto e = take(key)) {
      try {
        out = parse(e->value);
      } catch (const std::invalid_argument& ex) {
        fail(*e, key, ex.what());
      }
    }
  }

  // Anything left over was never consumed by a known key.
  void finish() const {
    if (!entries_.empty()) {
      const auto& [key, e] = *entries_.begin();
      throw std::invalid_argument(name_ + ":" + std::to_string(e.line) + ": unknown or misplaced key '" + key + "'");
    }
  }

 private:
  std::map<std::string, Entry, std::less<>> entries_;
  std::string name_;
};

std::vector<double> parse_doubles(std::string_view csv) {
  std::vector<double> out;
  for (auto part : text::split(csv, ',')) {
    auto v = text::parse_double(text::trim(part));
    if (!v) throw std::invalid_argument("bad number '" + std::string(part) + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<int> parse_ints(std::string_view csv) {
  std::vector<int> out;
  if (text::trim(csv).empty()) return out;
  for (auto part : text::split(csv, ',')) {
    auto v = text::parse_int<int>(text::trim(part));
    if (!v) throw std::invalid_argument("bad integer '" + std::string(part) + "'");
    out.push_back(*v);
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string weight_key(const LossField& f) { return "weight." + std::string(f.name); }

CrossMediaDataset checked_target(const CrossMediaDataset& train, const CrossMediaDataset& test) {
  if (test.image_dim != train.image_dim || test.text_dim != train.text_dim) {
    throw std::invalid_argument("target test dims (" + std::to_string(test.image_dim) + ", " +
                                std::to_string(test.text_dim) + ") differ from target train dims (" +
                                std::to_string(train.image_dim) + ", " + std::to_string(train.text_dim) + ")");
  }
  if (test.num_classes != train.num_classes) {
    throw std::invalid_argument("target test has " + std::to_string(test.num_classes) +
                                " classes, target train has " + std::to_string(train.num_classes));
  }
  return test;
}

}  // namespace

std::string_view to_string(Mode mode) {
  for (const auto& m : kModeNames)
    if (m.mode == mode) return m.name;
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  for (const auto& m : kModeNames)
    if (m.name == name) return m.mode;
  std::string known;
  for (const auto& m : kModeNames) known += (known.empty() ? "" : ", ") + std::string(m.name);
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (expected one of " + known + ")");
}

void ExperimentConfig::validate() const {
  if (synthetic.has_value() == files.has_value()) {
    throw std::invalid_argument("config needs exactly one data source (synthetic or files)");
  }
  if (synthetic) {
    synthetic->validate();
    target_split.validate();
    if (target_split.train <= 0.0 || target_split.test <= 0.0) {
      throw std::invalid_argument("target_split needs nonzero train and test fractions");
    }
  }
  if (files) {
    if (files->source.empty() || files->target_train.empty() || files->target_test.empty()) {
      throw std::invalid_argument("files config needs source_path, target_train_path and target_test_path");
    }
  }
  curriculum.validate();
  weights.validate();
  mmd.validate();
  sgd.validate();
  schedule.validate();
  if (hidden < 1) throw std::invalid_argument("hidden must be >= 1");
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  if (synthetic) synthetic->seed = derive_seed(s, kDataStream);
  sgd.seed = derive_seed(s, kSgdStream);
  curriculum.seed = derive_seed(s, kSelectStream);
}

ExperimentConfig parse_config(std::string_view text, std::string_view name) {
  std::map<std::string, Entry, std::less<>> entries;
  int line_no = 0;
  for (auto raw : text::split(text, '\n')) {
    ++line_no;
    auto line = raw.substr(0, raw.find('#'));
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = std::string(name) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw std::invalid_argument(where + "expected 'key = value'");
    const std::string key(text::trim(line.substr(0, eq)));
    const std::string value(text::trim(line.substr(eq + 1)));
    if (key.empty()) throw std::invalid_argument(where + "empty key");
    if (!entries.emplace(key, Entry{value, line_no}).second) {
      throw std::invalid_argument(where + "duplicate key '" + key + "'");
    }
  }

  ConfigReader in(std::move(entries), std::string(name));
  ExperimentConfig cfg;
  auto data = in.take("data");
  if (!data) throw std::invalid_argument(std::string(name) + ": missing 'data = synthetic|files'");
  if (data->value == "synthetic") {
    SyntheticSpec s;
    in.read_int("synthetic.num_src_classes", s.num_src_classes);
    in.read_int("synthetic.num_tgt_classes", s.num_tgt_classes);
    in.read_int("synthetic.overlap_classes", s.overlap_classes);
    in.read_int("synthetic.pairs_per_class", s.pairs_per_class);
    in.read_int("synthetic.image_dim", s.image_dim);
    in.read_int("synthetic.text_dim", s.text_dim);
    in.read_int("synthetic.latent_dim", s.latent_dim);
    in.read("synthetic.cluster_separation", s.cluster_separation);
    in.read("synthetic.domain_shift", s.domain_shift);
    in.read("synthetic.noise_sigma", s.noise_sigma);
    cfg.synthetic = s;
    if (auto e = in.take("target_split")) {
      std::vector<double> f;
      try {
        f = parse_doubles(e->value);
      } catch (const std::invalid_argument& ex) {
        in.fail(*e, "target_split", ex.what());
      }
      if (f.size() != 3) in.fail(*e, "target_split", "expected train,test,validation");
      cfg.target_split = {f[0], f[1], f[2]};
    }
  } else if (data->value == "files") {
    FileSources f;
    if (auto e = in.take("source_path")) f.source = e->value;
    if (auto e = in.take("target_train_path")) f.target_train = e->value;
    if (auto e = in.take("target_test_path")) f.target_test = e->value;
    in.read_with<std::vector<int>>("source_overlap_classes", f.source_overlap_classes, parse_ints);
    cfg.files = f;
  } else {
    in.fail(*data, "data", "expected 'synthetic' or 'files', got '" + data->value + "'");
  }

  std::uint64_t seed = 0;
  in.read_int("seed", seed);
  in.read_with<Mode>("mode", cfg.mode, parse_mode);
  in.read("alpha", cfg.curriculum.alpha);
  in.read_int("max_iterations", cfg.curriculum.max_iterations);
  in.read_int("epochs_per_iteration", cfg.curriculum.epochs_per_iteration);
  for (const auto& f : kLossFields) in.read(weight_key(f), cfg.weights.*f.weight);
  in.read_int("mmd.num_kernels", cfg.mmd.num_kernels);
  in.read("mmd.ladder_factor", cfg.mmd.ladder_factor);
  in.read_with<BandwidthRule>("mmd.bandwidth", cfg.mmd.bandwidth_rule, [](std::string_view v) {
    if (v == "median") return BandwidthRule::MedianHeuristic;
    if (v == "fixed") return BandwidthRule::Fixed;
    throw std::invalid_argument("expected 'median' or 'fixed'");
  });
  in.read("mmd.fixed_bandwidth", cfg.mmd.fixed_bandwidth);
  in.read("learning_rate", cfg.sgd.learning_rate);
  in.read("weight_decay", cfg.sgd.weight_decay);
  in.read_int("hidden", cfg.hidden);
  in.read_int("batch_size", cfg.schedule.batch_size);
  in.read_int("pretrain_epochs", cfg.schedule.pretrain_epochs);
  in.finish();

  cfg.set_seed(seed);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig cfg = parse_config(text::read_file(path), path.string());
  if (cfg.files) {
    const auto base = path.parent_path();
    for (auto* p : {&cfg.files->source, &cfg.files->target_train, &cfg.files->target_test}) {
      if (p->is_relative()) *p = base / *p;
    }
  }
  return cfg;
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  auto put = [&](std::string_view key, const std::string& value) {
    out += std::string(key) + " = " + value + "\n";
  };
  auto num = [](double v) { return text::format_double(v); };
  if (config.synthetic) {
    const SyntheticSpec& s = *config.synthetic;
    put("data", "synthetic");
    put("synthetic.num_src_classes", std::to_string(s.num_src_classes));
    put("synthetic.num_tgt_classes", std::to_string(s.num_tgt_classes));
    put("synthetic.overlap_classes", std::to_string(s.overlap_classes));
    put("synthetic.pairs_per_class", std::to_string(s.pairs_per_class));
    put("synthetic.image_dim", std::to_string(s.image_dim));
    put("synthetic.text_dim", std::to_string(s.text_dim));
    put("synthetic.latent_dim", std::to_string(s.latent_dim));
    put("synthetic.cluster_separation", num(s.cluster_separation));
    put("synthetic.domain_shift", num(s.domain_shift));
    put("synthetic.noise_sigma", num(s.noise_sigma));
    put("target_split", num(config.target_split.train) + "," + num(config.target_split.test) + "," +
                            num(config.target_split.validation));
  } else if (config.files) {
    put("data", "files");
    put("source_path", config.files->source.string());
    put("target_train_path", config.files->target_train.string());
    put("target_test_path", config.files->target_test.string());
    put("source_overlap_classes", join_ints(config.files->source_overlap_classes));
  }
  put("seed", std::to_string(config.seed));
  put("mode", std::string(to_string(config.mode)));
  put("alpha", num(config.curriculum.alpha));
  put("max_iterations", std::to_string(config.curriculum.max_iterations));
  put("epochs_per_iteration", std::to_string(config.curriculum.epochs_per_iteration));
  for (const auto& f : kLossFields) put(weight_key(f), num(config.weights.*f.weight));
  put("mmd.num_kernels", std::to_string(config.mmd.num_kernels));
  put("mmd.ladder_factor", num(config.mmd.ladder_factor));
  put("mmd.bandwidth", config.mmd.bandwidth_rule == BandwidthRule::MedianHeuristic ? "median" : "fixed");
  put("mmd.fixed_bandwidth", num(config.mmd.fixed_bandwidth));
  put("learning_rate", num(config.sgd.learning_rate));
  put("weight_decay", num(config.sgd.weight_decay));
  put("hidden", std::to_string(config.hidden));
  put("batch_size", std::to_string(config.schedule.batch_size));
  put("pretrain_epochs", std::to_string(config.schedule.pretrain_epochs));
  return out;
}

GeneratedData generate_data(const ExperimentConfig& config) {
  if (!config.synthetic) throw std::invalid_argument("generate needs a synthetic data config");
  config.validate();
  SyntheticDomains domains = generate_synthetic(*config.synthetic);
  GeneratedData out;
  out.target = split(domains.target, config.target_split, derive_seed(config.seed, kSplitStream));
  out.source = std::move(domains.source);
  out.overlap_source_classes = std::move(domains.overlap_source_classes);
  return out;
}

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  CrossMediaDataset source;
  CrossMediaDataset train;
  CrossMediaDataset test;
  PreparedData out;
  if (config.synthetic) {
    GeneratedData g = generate_data(config);
    source = std::move(g.source);
    train = std::move(g.target.train);
    test = std::move(g.target.test);
    out.overlap_source_classes = std::move(g.overlap_source_classes);
  } else {
    source = load_dataset(config.files->source);
    train = load_dataset(config.files->target_train);
    test = checked_target(train, load_dataset(config.files->target_test));
    out.overlap_source_classes = config.files->source_overlap_classes;
    for (int c : out.overlap_source_classes) {
      if (c < 0 || c >= source.num_classes) {
        throw std::invalid_argument("source_overlap_classes: class " + std::to_string(c) + " out of range");
      }
    }
  }
  source.validate();
  train.validate();
  test.validate();
  Normalized ns = normalize(source);
  Normalized nt = normalize(train);
  out.source = std::move(ns.dataset);
  out.source_stats = std::move(ns.stats);
  out.target_train = std::move(nt.dataset);
  out.target_test = normalize(test, nt.stats).dataset;
  out.target_stats = std::move(nt.stats);
  out.raw_target_test = std::move(test);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const PreparedData& data) {
  config.validate();
  LossWeights weights = config.weights;
  CurriculumConfig curriculum = config.curriculum;
  const CrossMediaDataset* source = &data.source;
  CrossMediaDataset reduced;
  switch (config.mode) {
    case Mode::Full:
    case Mode::PretrainOnly: break;
    case Mode::MediaOnly: weights.w_mmd_corr = 0.0; break;
    case Mode::CorrOnly: weights.w_mmd_image = weights.w_mmd_text = 0.0; break;
    case Mode::AllData: curriculum.rule = SelectionRule::All; break;
    case Mode::RandomSelect: curriculum.rule = SelectionRule::Random; break;
    case Mode::NoOverlap:
      reduced = drop_classes(data.source, data.overlap_source_classes);
      if (reduced.empty()) throw std::invalid_argument("no-overlap: every source class overlaps the target");
      source = &reduced;
      break;
  }

  const NetworkShape src_shape{source->image_dim, source->text_dim, config.hidden, source->num_classes};
  const NetworkShape tgt_shape{data.target_train.image_dim, data.target_train.text_dim, config.hidden,
                               data.target_train.num_classes};
  DcktModel model = make_model(src_shape, tgt_shape, weights, config.mmd, derive_seed(config.seed, kInitStream));

  spdlog::info("mode {}: {} source pairs, {} target train pairs, {} target test pairs", to_string(config.mode),
               source->size(), data.target_train.size(), data.target_test.size());
  TrainingLog log;
  if (config.mode == Mode::PretrainOnly) {
    log.records.push_back(pretrain_models(model, *source, data.target_train, config.schedule, config.sgd));
    log.pretrain_runs = 1;
  } else {
    log = progressive_transfer(model, *source, data.target_train, curriculum, config.schedule, config.sgd);
  }
  RetrievalReport report = evaluate(model, data.target_test, Domain::Target);
  spdlog::info("mode {}: target MAP i2t {:.4f}, t2i {:.4f}, average {:.4f}", to_string(config.mode),
               report.map_img_to_txt, report.map_txt_to_img, report.map_average);
  return {std::move(log), std::move(report),
          Checkpoint{std::move(model), config.seed, data.source_stats, data.target_stats}};
}

ExperimentResult run_experiment(const ExperimentConfig& config) { return run_experiment(config, prepare_data(config)); }

std::vector<std::pair<double, double>> sweep_alpha(const ExperimentConfig& config, const std::vector<double>& alphas) {
  if (alphas.empty()) throw std::invalid_argument("sweep_alpha: no alpha values");
  ExperimentConfig base = config;
  base.mode = Mode::Full;
  for (double a : alphas) {
    base.curriculum.alpha = a;
    base.curriculum.validate();
  }
  const PreparedData data = prepare_data(base);
  std::vector<std::pair<double, double>> rows;
  for (double a : alphas) {
    base.curriculum.alpha = a;
    rows.emplace_back(a, run_experiment(base, data).report.map_average);
  }
  return rows;
}

std::string format_sweep(const std::vector<std::pair<double, double>>& rows) {
  std::string out = "alpha\tmap_average\n";
  for (const auto& [a, m] : rows) out += text::format_double(a) + "\t" + text::format_double(m) + "\n";
  return out;
}

void write_artifacts(const std::filesystem::path& dir, const std::map<std::string, std::string>& files) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());

  std::vector<std::pair<fs::path, fs::path>> staged;
  auto discard = [&] {
    std::error_code ignore;
    for (const auto& [tmp, final_path] : staged) fs::remove(tmp, ignore);
  };
  for (const auto& [name, content] : files) {
    const fs::path tmp = dir / ("." + name + ".tmp");
    staged.emplace_back(tmp, dir / name);
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) {
      discard();
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  for (std::size_t i = 0; i < staged.size(); ++i) {
    const auto& [tmp, final_path] = staged[i];
    fs::rename(tmp, final_path, ec);
    if (ec) {
      std::error_code ignore;
      for (std::size_t j = 0; j < i; ++j) fs::remove(staged[j].second, ignore);
      discard();
      throw std::runtime_error("cannot move " + tmp.string() + " to " + final_path.string() + ": " + ec.message());
    }
  }
}

}  // namespace xmt
