#include "xmt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "text_util.hpp"

namespace xmt {
namespace {

std::span<const double> row_span(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_distance: dimension mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_distance: zero vector");
  const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
  return 1.0 - std::clamp(cos, -1.0, 1.0);
}

std::vector<std::size_t> rank_gallery(std::span<const double> query, const Matrix& gallery) {
  if (gallery.rows() == 0) throw std::invalid_argument("rank_gallery: empty gallery");
  std::vector<double> dist(static_cast<std::size_t>(gallery.rows()));
  for (Eigen::Index r = 0; r < gallery.rows(); ++r) dist[static_cast<std::size_t>(r)] = cosine_distance(query, row_span(gallery, r));
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

double average_precision(const std::vector<bool>& ranked_relevance, std::size_t relevant) {
  if (ranked_relevance.empty()) throw std::invalid_argument("average_precision: empty ranking");
  const auto actual = static_cast<std::size_t>(std::count(ranked_relevance.begin(), ranked_relevance.end(), true));
  if (actual != relevant) {
    throw std::invalid_argument("average_precision: R = " + std::to_string(relevant) + " but list has " +
                                std::to_string(actual) + " relevant entries");
  }
  if (relevant == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked_relevance.size(); ++k) {
    if (ranked_relevance[k]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return sum / static_cast<double>(relevant);
}

std::vector<double> query_average_precisions(const Matrix& queries, std::span<const int> query_labels,
                                             const Matrix& gallery, std::span<const int> gallery_labels) {
  if (static_cast<Eigen::Index>(query_labels.size()) != queries.rows() ||
      static_cast<Eigen::Index>(gallery_labels.size()) != gallery.rows()) {
    throw std::invalid_argument("query_average_precisions: label count mismatch");
  }
  std::vector<double> aps;
  aps.reserve(query_labels.size());
  std::vector<bool> rel(gallery_labels.size());
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const int label = query_labels[static_cast<std::size_t>(q)];
    const auto order = rank_gallery(row_span(queries, q), gallery);
    std::size_t relevant = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      rel[k] = gallery_labels[order[k]] == label;
      relevant += rel[k] ? 1 : 0;
    }
    aps.push_back(average_precision(rel, relevant));
  }
  return aps;
}

RetrievalReport evaluate_embeddings(const Matrix& image_embeddings, const Matrix& text_embeddings,
                                    std::span<const int> labels) {
  if (image_embeddings.rows() == 0) throw std::invalid_argument("evaluate: empty test set");
  RetrievalReport report;
  report.ap_img_to_txt = query_average_precisions(image_embeddings, labels, text_embeddings, labels);
  report.ap_txt_to_img = query_average_precisions(text_embeddings, labels, image_embeddings, labels);
  report.map_img_to_txt = mean(report.ap_img_to_txt);
  report.map_txt_to_img = mean(report.ap_txt_to_img);
  report.map_average = (report.map_img_to_txt + report.map_txt_to_img) / 2.0;
  return report;
}

RetrievalReport evaluate(const DcktModel& model, const CrossMediaDataset& test_set, Domain domain) {
  test_set.validate();
  const DomainNetwork& net = domain == Domain::Source ? model.source : model.target;
  const PairedBatch batch = make_batch(test_set);
  return evaluate_embeddings(embed_batch(net, Media::Image, batch.image), embed_batch(net, Media::Text, batch.text),
                             batch.labels);
}

Direction parse_direction(std::string_view name) {
  if (name == "both") return Direction::Both;
  if (name == "i2t" || name == "I2T") return Direction::ImageToText;
  if (name == "t2i" || name == "T2I") return Direction::TextToImage;
  throw std::invalid_argument("unknown direction '" + std::string(name) + "' (expected both, i2t or t2i)");
}

std::string format_report(const RetrievalReport& report, Direction direction) {
  std::string out;
  if (direction != Direction::TextToImage) {
    out += "map_img_to_txt = " + text::format_double(report.map_img_to_txt) + "\n";
    out += "queries_img_to_txt = " + std::to_string(report.ap_img_to_txt.size()) + "\n";
  }
  if (direction != Direction::ImageToText) {
    out += "map_txt_to_img = " + text::format_double(report.map_txt_to_img) + "\n";
    out += "queries_txt_to_img = " + std::to_string(report.ap_txt_to_img.size()) + "\n";
  }
  if (direction == Direction::Both) out += "map_average = " + text::format_double(report.map_average) + "\n";
  return out;
}

std::string format_per_query_ap(const RetrievalReport& report) {
  std::string out = "i2t\tt2i\n";
  const std::size_t n = std::max(report.ap_img_to_txt.size(), report.ap_txt_to_img.size());
  for (std::size_t q = 0; q < n; ++q) {
    out += q < report.ap_img_to_txt.size() ? text::format_double(report.ap_img_to_txt[q]) : "";
    out += '\t';
    out += q < report.ap_txt_to_img.size() ? text::format_double(report.ap_txt_to_img[q]) : "";
    out += '\n';
  }
  return out;
}

}  // namespace xmt
