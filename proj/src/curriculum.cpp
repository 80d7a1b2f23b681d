#include "xmt/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "text_util.hpp"
#include "xmt/retrieval.hpp"

namespace xmt {
namespace {

// Endless reshuffled pass over a fixed index set.
class Cycler {
 public:
  Cycler(std::vector<std::size_t> items, std::mt19937_64& rng) : order_(std::move(items)), rng_(rng) {
    if (order_.empty()) throw std::invalid_argument("cannot cycle an empty selection");
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> take(std::size_t n) {
    std::vector<std::size_t> out;
    out.reserve(n);
    while (out.size() < n) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64& rng_;
  std::size_t pos_ = 0;
};

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

void check_dataset_fits(const DomainNetwork& net, const CrossMediaDataset& data, std::string_view role) {
  data.validate();
  const auto s = net.shape();
  if (data.image_dim != s.image_dim || data.text_dim != s.text_dim) {
    throw std::invalid_argument(std::string(role) + " data dims (" + std::to_string(data.image_dim) + ", " +
                                std::to_string(data.text_dim) + ") do not match network (" +
                                std::to_string(s.image_dim) + ", " + std::to_string(s.text_dim) + ")");
  }
  if (data.num_classes != s.num_classes) {
    throw std::invalid_argument(std::string(role) + " data has " + std::to_string(data.num_classes) +
                                " classes, network has " + std::to_string(s.num_classes));
  }
}

SgdConfig reseeded(const SgdConfig& sgd, std::uint64_t stream) {
  SgdConfig out = sgd;
  out.seed = derive_seed(sgd.seed, stream);
  return out;
}

}  // namespace

void CurriculumConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0, 1]");
  if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (epochs_per_iteration < 1) throw std::invalid_argument("epochs_per_iteration must be >= 1");
}

void TrainingSchedule::validate() const {
  if (pretrain_epochs < 1) throw std::invalid_argument("pretrain_epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
}

double ConsistencyScores::max_ap() const {
  if (ap_sum.empty()) throw std::invalid_argument("ConsistencyScores: empty");
  return *std::max_element(ap_sum.begin(), ap_sum.end());
}

ConsistencyScores score_consistency(const DomainNetwork& source_net, const CrossMediaDataset& tar_tr, int iteration) {
  tar_tr.validate();
  const auto counts = tar_tr.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) {
      throw std::invalid_argument("score_consistency: target class " + tar_tr.class_names[c] + " has no pairs");
    }
  }
  const PairedBatch batch = make_batch(tar_tr);
  const Matrix img = embed_batch(source_net, Media::Image, batch.image);
  const Matrix txt = embed_batch(source_net, Media::Text, batch.text);
  ConsistencyScores scores;
  scores.iteration = iteration;
  scores.ap_img = query_average_precisions(img, batch.labels, txt, batch.labels);
  scores.ap_txt = query_average_precisions(txt, batch.labels, img, batch.labels);
  scores.ap_sum.resize(scores.ap_img.size());
  for (std::size_t q = 0; q < scores.ap_sum.size(); ++q) scores.ap_sum[q] = scores.ap_img[q] + scores.ap_txt[q];
  return scores;
}

double selection_prob(double ap_sum, double max_ap, int iteration, double alpha) {
  if (iteration < 1) throw std::invalid_argument("selection_prob: iteration must be >= 1");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("selection_prob: alpha must be in (0, 1]");
  if (!(ap_sum >= 0.0) || ap_sum > max_ap) {
    throw std::invalid_argument("selection_prob: need 0 <= ap_sum <= max_ap");
  }
  if (max_ap == 0.0) return alpha;
  const double gap = (max_ap - ap_sum) / (max_ap * static_cast<double>(iteration));
  return alpha * (1.0 - std::log2(gap + 1.0));
}

std::size_t SelectionRecord::count() const {
  return static_cast<std::size_t>(std::count(selected.begin(), selected.end(), true));
}

std::vector<std::size_t> SelectionRecord::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < selected.size(); ++i)
    if (selected[i]) out.push_back(i);
  return out;
}

SelectionRecord select_samples(const ConsistencyScores& scores, const CurriculumConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (scores.ap_sum.empty()) throw std::invalid_argument("select_samples: no scores");
  const std::size_t n = scores.ap_sum.size();
  SelectionRecord rec;
  rec.probability.resize(n);
  rec.draws.resize(n);
  rec.selected.resize(n);
  const double max_ap = scores.max_ap();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t q = 0; q < n; ++q) {
    switch (cfg.rule) {
      case SelectionRule::Consistency:
        rec.probability[q] = selection_prob(scores.ap_sum[q], max_ap, std::max(scores.iteration, 1), cfg.alpha);
        break;
      case SelectionRule::Random: rec.probability[q] = cfg.alpha; break;
      case SelectionRule::All: rec.probability[q] = 1.0; break;
    }
    rec.draws[q] = unit(rng);
    rec.selected[q] = rec.draws[q] < rec.probability[q];
  }
  if (rec.count() == 0) {
    const auto top = std::max_element(scores.ap_sum.begin(), scores.ap_sum.end()) - scores.ap_sum.begin();
    rec.selected[static_cast<std::size_t>(top)] = true;
    rec.forced = true;
  }
  return rec;
}

IterationRecord pretrain_models(DcktModel& model, const CrossMediaDataset& src, const CrossMediaDataset& tar_tr,
                                const TrainingSchedule& schedule, const SgdConfig& sgd) {
  schedule.validate();
  model.validate();
  check_dataset_fits(model.source, src, "source");
  check_dataset_fits(model.target, tar_tr, "target");
  const PretrainSummary s = pretrain_domain(model.source, src, Domain::Source, schedule.pretrain_epochs,
                                            schedule.batch_size, model.weights, reseeded(sgd, 10));
  const PretrainSummary t = pretrain_domain(model.target, tar_tr, Domain::Target, schedule.pretrain_epochs,
                                            schedule.batch_size, model.weights, reseeded(sgd, 11));
  IterationRecord rec;
  rec.iteration = 0;
  rec.steps = s.steps + t.steps;
  LossBreakdown terms;
  terms.sem_src = s.mean_semantic;
  terms.pair_src = s.mean_pairwise;
  terms.sem_tgt = t.mean_semantic;
  terms.pair_tgt = t.mean_pairwise;
  rec.mean_losses = combine(terms, model.weights);
  rec.selected = tar_tr.size();
  rec.candidates = tar_tr.size();
  rec.ap_min = rec.ap_median = rec.ap_max = std::numeric_limits<double>::quiet_NaN();
  spdlog::debug("pretrain: {} steps, source sem {:.4f}, target sem {:.4f}", rec.steps, s.mean_semantic,
                t.mean_semantic);
  return rec;
}

TrainingLog progressive_transfer(DcktModel& model, const CrossMediaDataset& src, const CrossMediaDataset& tar_tr,
                                 const CurriculumConfig& cfg, const TrainingSchedule& schedule, const SgdConfig& sgd) {
  cfg.validate();
  schedule.validate();
  sgd.validate();
  model.validate();
  if (!(model.weights.w_sem_src > 0.0 || model.weights.w_sem_tgt > 0.0)) {
    throw std::invalid_argument("at least one semantic loss weight must be > 0 for training");
  }
  check_dataset_fits(model.source, src, "source");
  check_dataset_fits(model.target, tar_tr, "target");

  TrainingLog log;
  log.records.push_back(pretrain_models(model, src, tar_tr, schedule, sgd));
  ++log.pretrain_runs;

  std::mt19937_64 select_rng(cfg.seed);
  std::mt19937_64 batch_rng(derive_seed(sgd.seed, 20));
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    const DcktModel snapshot = model;
    try {
      const ConsistencyScores scores = score_consistency(model.source, tar_tr, iter);
      ++log.scoring_runs;
      const SelectionRecord selection = select_samples(scores, cfg, select_rng);

      IterationRecord rec;
      rec.iteration = iter;
      rec.selected = selection.count();
      rec.candidates = tar_tr.size();
      rec.ap_min = *std::min_element(scores.ap_sum.begin(), scores.ap_sum.end());
      rec.ap_max = scores.max_ap();
      rec.ap_median = median_of(scores.ap_sum);

      Cycler target_pairs(selection.indices(), batch_rng);
      LossBreakdown sum;
      for (int e = 0; e < cfg.epochs_per_iteration; ++e) {
        for (const auto& src_idx : epoch_batches(src.size(), schedule.batch_size, batch_rng)) {
          const auto tgt_idx = target_pairs.take(src_idx.size());
          const JointGradients g = compute_joint_gradients(model, make_batch(src, src_idx), make_batch(tar_tr, tgt_idx));
          auto src_layers = model.source.layers();
          auto tgt_layers = model.target.layers();
          sgd_step(src_layers, g.source.layers, sgd);
          sgd_step(tgt_layers, g.target.layers, sgd);
          for (const auto& f : kLossFields) sum.*f.term += g.losses.*f.term;
          sum.total += g.losses.total;
          rec.mmd_evaluations += g.mmd_evaluations;
          ++rec.steps;
        }
      }
      for (const auto& f : kLossFields) rec.mean_losses.*f.term = sum.*f.term / static_cast<double>(rec.steps);
      rec.mean_losses.total = sum.total / static_cast<double>(rec.steps);
      spdlog::debug("iteration {}: selected {}/{}{}, ap_sum median {:.3f}, total loss {:.4f}", iter, rec.selected,
                    rec.candidates, selection.forced ? " (forced)" : "", rec.ap_median, rec.mean_losses.total);
      log.records.push_back(rec);
    } catch (...) {
      model = snapshot;
      throw;
    }
  }
  return log;
}

std::string format_training_log(const TrainingLog& log, const std::vector<std::string>& preamble) {
  std::string out;
  for (const auto& line : preamble) out += "# " + line + "\n";
  out += "iteration\tsteps";
  for (const auto& f : kLossFields) out += "\t" + std::string(f.name);
  out += "\ttotal\tselected\tcandidates\tap_min\tap_median\tap_max\tmmd_evals\n";
  for (const auto& r : log.records) {
    out += std::to_string(r.iteration) + "\t" + std::to_string(r.steps);
    for (const auto& f : kLossFields) out += "\t" + text::format_double(r.mean_losses.*f.term);
    out += "\t" + text::format_double(r.mean_losses.total);
    out += "\t" + std::to_string(r.selected) + "\t" + std::to_string(r.candidates);
    out += "\t" + text::format_double(r.ap_min) + "\t" + text::format_double(r.ap_median) + "\t" +
           text::format_double(r.ap_max);
    out += "\t" + std::to_string(r.mmd_evaluations) + "\n";
  }
  return out;
}

}  // namespace xmt
