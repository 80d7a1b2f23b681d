#pragma once

// Bidirectional cross-media retrieval: cosine ranking of common
// representations, average precision over the full ranking and MAP.

#include <span>
#include <string>
#include <vector>

#include "xmt/data.hpp"
#include "xmt/model.hpp"
#include "xmt/nn.hpp"

namespace xmt {

/// 1 - cos(a, b). Throws on a zero vector or a dimension mismatch.
double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Gallery row indices by ascending cosine distance to the query, ties by
/// ascending index.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const Matrix& gallery);

/// (1/R) * sum_k (R_k / k) * rel_k over the whole list; 0 when R = 0.
/// `relevant` must equal the number of true entries.
double average_precision(const std::vector<bool>& ranked_relevance, std::size_t relevant);

/// AP of every query row against the whole gallery, relevance = equal label.
std::vector<double> query_average_precisions(const Matrix& queries, std::span<const int> query_labels,
                                             const Matrix& gallery, std::span<const int> gallery_labels);

struct RetrievalReport {
  double map_img_to_txt = 0.0;
  double map_txt_to_img = 0.0;
  double map_average = 0.0;
  std::vector<double> ap_img_to_txt;
  std::vector<double> ap_txt_to_img;
};

/// Image queries against all texts and text queries against all images.
RetrievalReport evaluate_embeddings(const Matrix& image_embeddings, const Matrix& text_embeddings,
                                    std::span<const int> labels);

/// Embeds the test set through one domain network and evaluates it. Labels
/// are used for relevance only.
RetrievalReport evaluate(const DcktModel& model, const CrossMediaDataset& test_set, Domain domain);

enum class Direction { Both, ImageToText, TextToImage };

Direction parse_direction(std::string_view name);

/// Flat `key = value` record; fields of a filtered-out direction are omitted,
/// as is map_average unless both directions are present.
std::string format_report(const RetrievalReport& report, Direction direction = Direction::Both);

/// Two-column table `i2t<TAB>t2i`, one row per query.
std::string format_per_query_ap(const RetrievalReport& report);

}  // namespace xmt
