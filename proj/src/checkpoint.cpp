#include "xmt/checkpoint.hpp"

#include <cstdio>
#include <stdexcept>
#include <vector>

#include "text_util.hpp"

namespace xmt {
namespace {

constexpr std::string_view kMagic = "xmt-checkpoint 1";

[[noreturn]] void corrupt(const std::string& what) { throw std::runtime_error("checkpoint: " + what); }

std::string join(const double* data, Eigen::Index n) {
  std::string out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) out += ',';
    out += text::format_double(data[i]);
  }
  return out;
}

std::vector<double> parse_values(std::string_view field, std::size_t expected, std::string_view what) {
  std::vector<double> out;
  if (expected == 0) return out;
  for (auto part : text::split(field, ',')) {
    auto v = text::parse_double(part);
    if (!v) corrupt("bad number in " + std::string(what));
    out.push_back(*v);
  }
  if (out.size() != expected) {
    corrupt(std::string(what) + " has " + std::to_string(out.size()) + " values, expected " + std::to_string(expected));
  }
  return out;
}

class LineReader {
 public:
  explicit LineReader(std::string_view body) : lines_(text::split(body, '\n')) {
    while (!lines_.empty() && lines_.back().empty()) lines_.pop_back();
  }

  // Next line split on spaces; the first token must equal `key`.
  std::vector<std::string_view> expect(std::string_view key) {
    if (at_ >= lines_.size()) corrupt("unexpected end of file, wanted '" + std::string(key) + "'");
    auto tokens = text::split(lines_[at_++], ' ');
    if (tokens.empty() || tokens[0] != key) {
      corrupt("line " + std::to_string(at_) + ": expected '" + std::string(key) + "'");
    }
    return tokens;
  }

  bool peek(std::string_view key) const {
    if (at_ >= lines_.size()) return false;
    auto tokens = text::split(lines_[at_], ' ');
    return !tokens.empty() && tokens[0] == key;
  }

  bool done() const { return at_ >= lines_.size(); }

 private:
  std::vector<std::string_view> lines_;
  std::size_t at_ = 0;
};

template <typename Int>
Int to_int(std::string_view s, std::string_view what) {
  auto v = text::parse_int<Int>(s);
  if (!v) corrupt("bad integer for " + std::string(what));
  return *v;
}

double to_double(std::string_view s, std::string_view what) {
  auto v = text::parse_double(s);
  if (!v) corrupt("bad number for " + std::string(what));
  return *v;
}

void write_network(std::string& out, std::string_view role, const DomainNetwork& net) {
  const auto s = net.shape();
  out += "network " + std::string(role) + " " + std::to_string(s.image_dim) + " " + std::to_string(s.text_dim) + " " +
         std::to_string(s.hidden) + " " + std::to_string(s.num_classes) + "\n";
  const auto layers = net.layers();
  for (std::size_t i = 0; i < kNetworkLayers; ++i) {
    const DenseLayer& l = *layers[i];
    out += "layer " + std::string(kNetworkLayerNames[i]) + " " + std::to_string(l.out_dim()) + " " +
           std::to_string(l.in_dim()) + " " + std::string(to_string(l.activation())) + "\n";
    out += "weights " + join(l.weights().data(), l.weights().size()) + "\n";
    out += "bias " + join(l.bias().data(), l.bias().size()) + "\n";
  }
}

DomainNetwork read_network(LineReader& in, std::string_view role) {
  auto head = in.expect("network");
  if (head.size() != 6 || head[1] != role) corrupt("malformed network header for " + std::string(role));
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i < kNetworkLayers; ++i) {
    auto lh = in.expect("layer");
    if (lh.size() != 5 || lh[1] != kNetworkLayerNames[i]) {
      corrupt("expected layer " + std::string(kNetworkLayerNames[i]));
    }
    const auto rows = to_int<Eigen::Index>(lh[2], "layer rows");
    const auto cols = to_int<Eigen::Index>(lh[3], "layer cols");
    if (rows < 1 || cols < 1) corrupt("non-positive layer shape");
    Activation act;
    try {
      act = parse_activation(lh[4]);
    } catch (const std::invalid_argument&) {
      corrupt("unknown activation");
    }
    auto wl = in.expect("weights");
    if (wl.size() != 2) corrupt("malformed weights line");
    auto w = parse_values(wl[1], static_cast<std::size_t>(rows * cols), "weights");
    auto bl = in.expect("bias");
    if (bl.size() != 2) corrupt("malformed bias line");
    auto b = parse_values(bl[1], static_cast<std::size_t>(rows), "bias");
    layers.emplace_back(Eigen::Map<const Matrix>(w.data(), rows, cols), Eigen::Map<const Vector>(b.data(), rows), act);
  }
  DomainNetwork net{layers[0], layers[1], layers[2], layers[3], layers[4], layers[5], layers[6]};
  net.validate();
  const auto s = net.shape();
  if (to_int<int>(head[2], "image_dim") != s.image_dim || to_int<int>(head[3], "text_dim") != s.text_dim ||
      to_int<int>(head[4], "hidden") != s.hidden || to_int<int>(head[5], "classes") != s.num_classes) {
    corrupt("network header disagrees with layer shapes");
  }
  return net;
}

void write_stats(std::string& out, std::string_view role, const FeatureStats& s) {
  out += "stats " + std::string(role) + " " + std::to_string(s.image_mean.size()) + " " +
         std::to_string(s.text_mean.size()) + "\n";
  out += "image_mean " + join(s.image_mean.data(), s.image_mean.size()) + "\n";
  out += "image_std " + join(s.image_std.data(), s.image_std.size()) + "\n";
  out += "text_mean " + join(s.text_mean.data(), s.text_mean.size()) + "\n";
  out += "text_std " + join(s.text_std.data(), s.text_std.size()) + "\n";
}

std::pair<std::string, FeatureStats> read_stats(LineReader& in) {
  auto head = in.expect("stats");
  if (head.size() != 4) corrupt("malformed stats header");
  std::string role(head[1]);
  const auto di = to_int<std::size_t>(head[2], "stats image dim");
  const auto dt = to_int<std::size_t>(head[3], "stats text dim");
  auto vec = [&](std::string_view key, std::size_t n) {
    auto line = in.expect(key);
    if (line.size() != 2) corrupt("malformed " + std::string(key));
    auto v = parse_values(line[1], n, key);
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(n)));
  };
  FeatureStats s;
  s.image_mean = vec("image_mean", di);
  s.image_std = vec("image_std", di);
  s.text_mean = vec("text_mean", dt);
  s.text_std = vec("text_std", dt);
  return {std::move(role), std::move(s)};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string format_checkpoint(const Checkpoint& checkpoint) {
  checkpoint.model.validate();
  std::string out(kMagic);
  out += "\nseed " + std::to_string(checkpoint.seed) + "\n";
  out += "loss_weights";
  for (const auto& f : kLossFields) out += " " + text::format_double(checkpoint.model.weights.*f.weight);
  out += "\n";
  const MmdConfig& m = checkpoint.model.mmd;
  out += "mmd " + std::to_string(m.num_kernels) + " " + text::format_double(m.ladder_factor) + " " +
         (m.bandwidth_rule == BandwidthRule::MedianHeuristic ? "median" : "fixed") + " " +
         text::format_double(m.fixed_bandwidth) + "\n";
  write_network(out, "source", checkpoint.model.source);
  write_network(out, "target", checkpoint.model.target);
  if (checkpoint.source_stats) write_stats(out, "source", *checkpoint.source_stats);
  if (checkpoint.target_stats) write_stats(out, "target", *checkpoint.target_stats);
  out += "checksum " + hex64(text::fnv1a(out)) + "\n";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  const auto pos = text.rfind("checksum ");
  if (pos == std::string_view::npos || (pos > 0 && text[pos - 1] != '\n')) corrupt("missing checksum");
  const std::string_view body = text.substr(0, pos);
  const std::string_view stored = text::trim(text.substr(pos + 9));
  if (stored != hex64(text::fnv1a(body))) corrupt("checksum mismatch");

  LineReader in(body);
  auto magic = in.expect("xmt-checkpoint");
  if (magic.size() != 2 || magic[1] != "1") corrupt("unsupported version");
  auto seed_line = in.expect("seed");
  if (seed_line.size() != 2) corrupt("malformed seed");
  const auto seed = to_int<std::uint64_t>(seed_line[1], "seed");

  auto wl = in.expect("loss_weights");
  if (wl.size() != kLossFields.size() + 1) corrupt("malformed loss_weights");
  LossWeights weights;
  for (std::size_t i = 0; i < kLossFields.size(); ++i) weights.*kLossFields[i].weight = to_double(wl[i + 1], "loss weight");

  auto ml = in.expect("mmd");
  if (ml.size() != 5) corrupt("malformed mmd line");
  MmdConfig mmd;
  mmd.num_kernels = to_int<int>(ml[1], "num_kernels");
  mmd.ladder_factor = to_double(ml[2], "ladder_factor");
  if (ml[3] == "median") {
    mmd.bandwidth_rule = BandwidthRule::MedianHeuristic;
  } else if (ml[3] == "fixed") {
    mmd.bandwidth_rule = BandwidthRule::Fixed;
  } else {
    corrupt("unknown bandwidth rule");
  }
  mmd.fixed_bandwidth = to_double(ml[4], "fixed_bandwidth");

  DomainNetwork source = read_network(in, "source");
  DomainNetwork target = read_network(in, "target");
  Checkpoint cp{DcktModel{std::move(source), std::move(target), weights, mmd}, seed, std::nullopt, std::nullopt};
  try {
    cp.model.validate();
  } catch (const std::invalid_argument& e) {
    corrupt(e.what());
  }
  while (in.peek("stats")) {
    auto [role, stats] = read_stats(in);
    auto& slot = role == "source" ? cp.source_stats : cp.target_stats;
    if ((role != "source" && role != "target") || slot) corrupt("unexpected stats block '" + role + "'");
    slot = std::move(stats);
  }
  if (!in.done()) corrupt("trailing content");
  return cp;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  text::write_file_atomic(path, format_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(text::read_file(path)); }

}  // namespace xmt
