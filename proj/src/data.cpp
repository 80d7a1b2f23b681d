#include "xmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "text_util.hpp"

namespace xmt {

namespace text {

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace text

namespace {

[[noreturn]] void fail_at(std::string_view source, std::size_t line, const std::string& what) {
  throw std::runtime_error(std::string(source) + ":" + std::to_string(line) + ": " + what);
}

Vector parse_vector(std::string_view field, int expected, std::string_view source, std::size_t line,
                    std::string_view what) {
  const auto parts = text::split(field, ',');
  if (static_cast<int>(parts.size()) != expected) {
    fail_at(source, line,
            std::string(what) + " has " + std::to_string(parts.size()) + " values, expected " + std::to_string(expected));
  }
  Vector v(expected);
  for (int i = 0; i < expected; ++i) {
    auto d = text::parse_double(parts[static_cast<std::size_t>(i)]);
    if (!d || !std::isfinite(*d)) {
      fail_at(source, line, std::string(what) + " value " + std::to_string(i + 1) + " is not a finite number");
    }
    v(i) = *d;
  }
  return v;
}

void append_vector(std::string& out, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += text::format_double(v(i));
  }
}

std::vector<std::size_t> allocate_counts(std::size_t n, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    const double exact = fractions[p] * static_cast<double>(n);
    // Guard against 0.8 * 10 = 7.999999...
    counts[p] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[p] = exact - static_cast<double>(counts[p]);
    assigned += counts[p];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < 3; ++p)
      if (remainder[p] > remainder[best]) best = p;
    ++counts[best];
    remainder[best] = -1.0;
    ++assigned;
  }
  while (assigned > n) {
    std::size_t best = 0;
    for (std::size_t p = 1; p < 3; ++p)
      if (counts[p] > counts[best]) best = p;
    --counts[best];
    --assigned;
  }
  for (std::size_t p = 0; p < 3; ++p) {
    if (fractions[p] > 0.0 && counts[p] == 0) {
      std::size_t donor = 0;
      for (std::size_t q = 1; q < 3; ++q)
        if (counts[q] > counts[donor]) donor = q;
      --counts[donor];
      ++counts[p];
    }
  }
  return {counts[0], counts[1], counts[2]};
}

Vector random_normal(Eigen::Index n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * dist(rng);
  return v;
}

Matrix random_map(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  return m;
}

std::string two_digit(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

}  // namespace

bool CrossMediaPair::operator==(const CrossMediaPair& other) const {
  return id == other.id && label == other.label && image.size() == other.image.size() &&
         text.size() == other.text.size() && image == other.image && text == other.text;
}

std::vector<std::string> default_class_names(int num_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
  return names;
}

void CrossMediaDataset::validate(bool allow_empty) const {
  if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
  if (image_dim < 1 || text_dim < 1) throw std::invalid_argument("dataset: feature dims must be >= 1");
  if (static_cast<int>(class_names.size()) != num_classes) {
    throw std::invalid_argument("dataset: " + std::to_string(class_names.size()) + " class names for " +
                                std::to_string(num_classes) + " classes");
  }
  if (!allow_empty && pairs.empty()) throw std::invalid_argument("dataset is empty");
  std::set<std::string_view> ids;
  for (const auto& p : pairs) {
    if (p.image.size() != image_dim || p.text.size() != text_dim) {
      throw std::invalid_argument("dataset: pair '" + p.id + "' has wrong feature dims");
    }
    if (p.label < 0 || p.label >= num_classes) {
      throw std::invalid_argument("dataset: pair '" + p.id + "' label out of range");
    }
    if (!ids.insert(p.id).second) throw std::invalid_argument("dataset: duplicate id '" + p.id + "'");
  }
}

std::vector<int> CrossMediaDataset::labels() const {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.label);
  return out;
}

std::vector<std::size_t> CrossMediaDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (const auto& p : pairs) ++counts[static_cast<std::size_t>(p.label)];
  return counts;
}

CrossMediaDataset CrossMediaDataset::empty_like() const {
  CrossMediaDataset out;
  out.num_classes = num_classes;
  out.class_names = class_names;
  out.image_dim = image_dim;
  out.text_dim = text_dim;
  return out;
}

bool CrossMediaDataset::operator==(const CrossMediaDataset& other) const {
  return num_classes == other.num_classes && class_names == other.class_names && image_dim == other.image_dim &&
         text_dim == other.text_dim && pairs == other.pairs;
}

CrossMediaDataset parse_dataset(std::istream& in, std::string_view source_name) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail_at(source_name, 1, "missing #dims header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = text::split(line, '\t');
  if (header.size() != 4 || header[0] != "#dims") {
    fail_at(source_name, 1, "header must be '#dims<TAB>d_i<TAB>d_t<TAB>num_classes'");
  }
  CrossMediaDataset ds;
  auto di = text::parse_int<int>(header[1]);
  auto dt = text::parse_int<int>(header[2]);
  auto nc = text::parse_int<int>(header[3]);
  if (!di || !dt || !nc || *di < 1 || *dt < 1 || *nc < 1) {
    fail_at(source_name, 1, "header dims and class count must be positive integers");
  }
  ds.image_dim = *di;
  ds.text_dim = *dt;
  ds.num_classes = *nc;
  ds.class_names = default_class_names(ds.num_classes);

  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = text::split(line, '\t');
    if (line_no == 2 && fields[0] == "#classes") {
      if (fields.size() != static_cast<std::size_t>(ds.num_classes) + 1) {
        fail_at(source_name, line_no, "expected " + std::to_string(ds.num_classes) + " class names");
      }
      for (std::size_t c = 1; c < fields.size(); ++c) {
        if (fields[c].empty()) fail_at(source_name, line_no, "empty class name");
        ds.class_names[c - 1] = std::string(fields[c]);
      }
      continue;
    }
    if (fields.size() != 4) {
      fail_at(source_name, line_no, "expected 4 tab-separated fields, found " + std::to_string(fields.size()));
    }
    CrossMediaPair pair;
    pair.id = std::string(fields[0]);
    if (pair.id.empty()) fail_at(source_name, line_no, "empty id");
    if (!ids.insert(pair.id).second) fail_at(source_name, line_no, "duplicate id '" + pair.id + "'");
    auto label = text::parse_int<int>(fields[1]);
    if (!label) fail_at(source_name, line_no, "label is not an integer");
    if (*label < 0 || *label >= ds.num_classes) {
      fail_at(source_name, line_no,
              "label " + std::to_string(*label) + " outside [0, " + std::to_string(ds.num_classes) + ")");
    }
    pair.label = *label;
    pair.image = parse_vector(fields[2], ds.image_dim, source_name, line_no, "image feature");
    pair.text = parse_vector(fields[3], ds.text_dim, source_name, line_no, "text feature");
    ds.pairs.push_back(std::move(pair));
  }
  if (ds.pairs.empty()) fail_at(source_name, line_no, "dataset has no rows");
  return ds;
}

CrossMediaDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  return parse_dataset(in, path.string());
}

std::string format_dataset(const CrossMediaDataset& dataset) {
  dataset.validate(true);
  std::string out = "#dims\t" + std::to_string(dataset.image_dim) + "\t" + std::to_string(dataset.text_dim) + "\t" +
                    std::to_string(dataset.num_classes) + "\n";
  // Class names only need a line when they differ from the defaults.
  if (dataset.class_names != default_class_names(dataset.num_classes)) {
    out += "#classes";
    for (const auto& name : dataset.class_names) {
      if (name.empty() || name.find_first_of("\t\n") != std::string::npos) {
        throw std::invalid_argument("class name '" + name + "' is empty or contains a tab or newline");
      }
      out += '\t' + name;
    }
    out += '\n';
  }
  for (const auto& p : dataset.pairs) {
    if (p.id.find_first_of("\t\n") != std::string::npos) {
      throw std::invalid_argument("dataset id '" + p.id + "' contains a tab or newline");
    }
    out += p.id;
    out += '\t';
    out += std::to_string(p.label);
    out += '\t';
    append_vector(out, p.image);
    out += '\t';
    append_vector(out, p.text);
    out += '\n';
  }
  return out;
}

void save_dataset(const CrossMediaDataset& dataset, const std::filesystem::path& path) {
  text::write_file_atomic(path, format_dataset(dataset));
}

void SplitFractions::validate() const {
  for (double f : {train, test, validation}) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw std::invalid_argument("split fractions must be >= 0");
  }
  if (std::abs(train + test + validation - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }
}

DatasetSplit split(const CrossMediaDataset& dataset, const SplitFractions& fractions, std::uint64_t seed) {
  fractions.validate();
  dataset.validate(true);
  const std::array<double, 3> f = {fractions.train, fractions.test, fractions.validation};
  const std::size_t parts = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](double v) { return v > 0; }));

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(dataset.num_classes));
  for (std::size_t i = 0; i < dataset.size(); ++i) by_class[static_cast<std::size_t>(dataset.pairs[i].label)].push_back(i);

  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> assigned;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    if (members.size() < parts) {
      throw std::invalid_argument("split: class " + dataset.class_names[c] + " has " + std::to_string(members.size()) +
                                  " members for " + std::to_string(parts) + " split parts");
    }
    std::shuffle(members.begin(), members.end(), rng);
    const auto counts = allocate_counts(members.size(), f);
    std::size_t at = 0;
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t k = 0; k < counts[p]; ++k) assigned[p].push_back(members[at++]);
  }

  std::array<CrossMediaDataset, 3> out = {dataset.empty_like(), dataset.empty_like(), dataset.empty_like()};
  for (std::size_t p = 0; p < 3; ++p) {
    std::sort(assigned[p].begin(), assigned[p].end());
    for (std::size_t i : assigned[p]) out[p].pairs.push_back(dataset.pairs[i]);
  }
  return {std::move(out[0]), std::move(out[1]), std::move(out[2])};
}

CrossMediaDataset drop_classes(const CrossMediaDataset& dataset, std::span<const int> classes) {
  CrossMediaDataset out = dataset.empty_like();
  for (const auto& p : dataset.pairs) {
    if (std::find(classes.begin(), classes.end(), p.label) == classes.end()) out.pairs.push_back(p);
  }
  return out;
}

bool FeatureStats::operator==(const FeatureStats& other) const {
  auto same = [](const Vector& a, const Vector& b) { return a.size() == b.size() && a == b; };
  return same(image_mean, other.image_mean) && same(image_std, other.image_std) &&
         same(text_mean, other.text_mean) && same(text_std, other.text_std);
}

Normalized normalize(const CrossMediaDataset& dataset, const std::optional<FeatureStats>& stats) {
  dataset.validate(true);
  FeatureStats s;
  if (stats) {
    s = *stats;
    if (s.image_mean.size() != dataset.image_dim || s.image_std.size() != dataset.image_dim ||
        s.text_mean.size() != dataset.text_dim || s.text_std.size() != dataset.text_dim) {
      throw std::invalid_argument("normalize: stats dims do not match dataset dims");
    }
  } else {
    if (dataset.empty()) throw std::invalid_argument("normalize: cannot compute stats of an empty dataset");
    const double n = static_cast<double>(dataset.size());
    auto moments = [&](auto member, int dim, Vector& mean, Vector& stdev) {
      mean = Vector::Zero(dim);
      for (const auto& p : dataset.pairs) mean += p.*member;
      mean /= n;
      Vector var = Vector::Zero(dim);
      for (const auto& p : dataset.pairs) var += (p.*member - mean).cwiseAbs2();
      stdev = (var / n).cwiseSqrt();
      for (Eigen::Index i = 0; i < stdev.size(); ++i)
        if (!(stdev(i) > 1e-12)) stdev(i) = 1.0;
    };
    moments(&CrossMediaPair::image, dataset.image_dim, s.image_mean, s.image_std);
    moments(&CrossMediaPair::text, dataset.text_dim, s.text_mean, s.text_std);
  }
  Normalized out{dataset, s};
  for (auto& p : out.dataset.pairs) {
    p.image = (p.image - s.image_mean).cwiseQuotient(s.image_std);
    p.text = (p.text - s.text_mean).cwiseQuotient(s.text_std);
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (num_src_classes < 1 || num_tgt_classes < 1) throw std::invalid_argument("synthetic: class counts must be >= 1");
  if (overlap_classes < 0 || overlap_classes > std::min(num_src_classes, num_tgt_classes)) {
    throw std::invalid_argument("synthetic: overlap_classes must be in [0, min(num_src_classes, num_tgt_classes)]");
  }
  if (pairs_per_class < 1) throw std::invalid_argument("synthetic: pairs_per_class must be >= 1");
  if (image_dim < 1 || text_dim < 1 || latent_dim < 1) throw std::invalid_argument("synthetic: dims must be >= 1");
  if (!(cluster_separation > 0.0) || !std::isfinite(cluster_separation)) {
    throw std::invalid_argument("synthetic: cluster_separation must be > 0");
  }
  if (!(domain_shift >= 0.0) || !std::isfinite(domain_shift)) {
    throw std::invalid_argument("synthetic: domain_shift must be >= 0");
  }
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) throw std::invalid_argument("synthetic: noise_sigma must be > 0");
}

SyntheticDomains generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Matrix image_map = random_map(spec.image_dim, spec.latent_dim, rng);
  const Matrix text_map = random_map(spec.text_dim, spec.latent_dim, rng);
  Vector offset = random_normal(spec.image_dim, 1.0, rng);
  offset /= offset.norm();

  // Expected distance between two prototypes equals cluster_separation.
  const double proto_scale = spec.cluster_separation / std::sqrt(2.0 * spec.latent_dim);
  std::vector<Vector> src_protos;
  for (int c = 0; c < spec.num_src_classes; ++c) src_protos.push_back(random_normal(spec.latent_dim, proto_scale, rng));
  std::vector<Vector> tgt_protos;
  for (int c = 0; c < spec.num_tgt_classes; ++c) {
    tgt_protos.push_back(c < spec.overlap_classes ? src_protos[static_cast<std::size_t>(c)]
                                                  : random_normal(spec.latent_dim, proto_scale, rng));
  }

  SyntheticDomains out;
  auto build = [&](const std::vector<Vector>& protos, const std::vector<std::string>& names, double shift,
                   std::string_view prefix) {
    CrossMediaDataset ds;
    ds.num_classes = static_cast<int>(protos.size());
    ds.class_names = names;
    ds.image_dim = spec.image_dim;
    ds.text_dim = spec.text_dim;
    for (int c = 0; c < ds.num_classes; ++c) {
      const Vector img_center = image_map * protos[static_cast<std::size_t>(c)] + shift * offset;
      const Vector txt_center = text_map * protos[static_cast<std::size_t>(c)];
      for (int k = 0; k < spec.pairs_per_class; ++k) {
        CrossMediaPair p;
        p.id = std::string(prefix) + "_c" + two_digit(c) + "_" + std::to_string(k);
        p.label = c;
        p.image = img_center + random_normal(spec.image_dim, spec.noise_sigma, rng);
        p.text = txt_center + random_normal(spec.text_dim, spec.noise_sigma, rng);
        ds.pairs.push_back(std::move(p));
      }
    }
    return ds;
  };

  std::vector<std::string> src_names;
  for (int c = 0; c < spec.num_src_classes; ++c) src_names.push_back("src_" + two_digit(c));
  std::vector<std::string> tgt_names;
  for (int c = 0; c < spec.num_tgt_classes; ++c) {
    tgt_names.push_back(c < spec.overlap_classes ? src_names[static_cast<std::size_t>(c)] : "tgt_" + two_digit(c));
  }
  out.source = build(src_protos, src_names, 0.0, "src");
  out.target = build(tgt_protos, tgt_names, spec.domain_shift, "tgt");
  for (int c = 0; c < spec.overlap_classes; ++c) out.overlap_source_classes.push_back(c);
  return out;
}

PairedBatch make_batch(const CrossMediaDataset& dataset, std::span<const std::size_t> indices) {
  PairedBatch b;
  b.image.resize(static_cast<Eigen::Index>(indices.size()), dataset.image_dim);
  b.text.resize(static_cast<Eigen::Index>(indices.size()), dataset.text_dim);
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= dataset.size()) throw std::out_of_range("make_batch: index out of range");
    const auto& p = dataset.pairs[indices[r]];
    b.image.row(static_cast<Eigen::Index>(r)) = p.image.transpose();
    b.text.row(static_cast<Eigen::Index>(r)) = p.text.transpose();
    b.labels.push_back(p.label);
  }
  return b;
}

PairedBatch make_batch(const CrossMediaDataset& dataset) {
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(dataset, all);
}

}  // namespace xmt
