#include "xmt/model.hpp"

#include <numeric>
#include <stdexcept>

namespace xmt {
namespace {

// Cache slots of one pathway pass.
enum Slot : std::size_t { kFc6, kFc7, kFc8, kFc9, kFc10, kSlots };

constexpr std::array<std::string_view, kSlots> kSlotNames = {"fc6", "fc7", "fc8", "fc9", "fc10"};

struct PathwayPass {
  Media media = Media::Image;
  ForwardTrace trace;
  std::array<ForwardCache, kSlots> caches;
};

struct DomainForward {
  PathwayPass img;
  PathwayPass txt;
};

// Loss gradients to be pushed back through one domain network.
struct DomainInjections {
  ActivationGrads img;
  ActivationGrads txt;
  Matrix logits_img;
  Matrix logits_txt;
  double semantic = 0.0;
  double pairwise = 0.0;
};

const DenseLayer& pathway_layer(const DomainNetwork& net, Media media, Slot slot) {
  switch (slot) {
    case kFc6: return media == Media::Image ? net.img_fc6 : net.txt_fc6;
    case kFc7: return media == Media::Image ? net.img_fc7 : net.txt_fc7;
    case kFc8: return net.shared_fc8;
    case kFc9: return net.shared_fc9;
    default: return net.classifier_fc10;
  }
}

std::size_t grad_index(Media media, Slot slot) {
  switch (slot) {
    case kFc6: return media == Media::Image ? 0 : 2;
    case kFc7: return media == Media::Image ? 1 : 3;
    case kFc8: return 4;
    case kFc9: return 5;
    default: return 6;
  }
}

PathwayPass run_pathway(const DomainNetwork& net, Media media, const Matrix& features) {
  PathwayPass pass;
  pass.media = media;
  const Matrix* input = &features;
  Matrix current;
  for (std::size_t s = 0; s < kSlots; ++s) {
    const auto slot = static_cast<Slot>(s);
    LayerOutput out = forward(pathway_layer(net, media, slot), *input);
    pass.trace.record(std::string(kSlotNames[s]), {out.cache.pre, out.output});
    pass.caches[s] = std::move(out.cache);
    current = std::move(out.output);
    input = &current;
  }
  const Matrix& logits = pass.trace.at("fc10").pre;
  pass.trace.record("softmax", {logits, softmax(logits)});
  return pass;
}

void check_features(const DomainNetwork& net, Media media, const Matrix& features) {
  const auto expected = pathway_layer(net, media, kFc6).in_dim();
  if (features.cols() != expected) {
    throw std::invalid_argument(std::string(to_string(media)) + " features have " + std::to_string(features.cols()) +
                                " dims, network expects " + std::to_string(expected));
  }
}

void add_scaled(ActivationGrads& dst, const ActivationGrads& src, double weight) {
  for (const auto& [name, grad] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, weight * grad);
    } else {
      it->second += weight * grad;
    }
  }
}

void backward_pathway(const DomainNetwork& net, const PathwayPass& pass, const ActivationGrads& injections,
                      const Matrix& grad_logits, DomainGrads& acc) {
  Matrix grad = grad_logits;
  for (std::size_t s = kSlots; s-- > 0;) {
    const auto slot = static_cast<Slot>(s);
    if (slot != kFc10) {
      auto it = injections.find(kSlotNames[s]);
      if (it != injections.end()) grad += it->second;
    }
    BackwardResult r = backward(pathway_layer(net, pass.media, slot), grad, pass.caches[s]);
    acc.layers[grad_index(pass.media, slot)] += r.grads;
    grad = std::move(r.grad_input);
  }
}

void check_batch(const DomainNetwork& net, const PairedBatch& batch, std::string_view which) {
  if (batch.image.rows() != batch.text.rows() || static_cast<Eigen::Index>(batch.labels.size()) != batch.image.rows()) {
    throw std::invalid_argument(std::string(which) + " batch is not aligned");
  }
  if (batch.size() < 1) throw std::invalid_argument(std::string(which) + " batch is empty");
  check_features(net, Media::Image, batch.image);
  check_features(net, Media::Text, batch.text);
  for (int y : batch.labels) {
    if (y < 0 || y >= net.num_classes()) {
      throw std::invalid_argument(std::string(which) + " batch label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(net.num_classes()) + ")");
    }
  }
}

DomainForward forward_domain(const DomainNetwork& net, const PairedBatch& batch) {
  return {run_pathway(net, Media::Image, batch.image), run_pathway(net, Media::Text, batch.text)};
}

DomainInjections local_losses(const DomainForward& fwd, const PairedBatch& batch, const DomainLossWeights& w) {
  DomainInjections inj;
  const Matrix& logits_img = fwd.img.trace.at("fc10").pre;
  const Matrix& logits_txt = fwd.txt.trace.at("fc10").pre;
  if (w.semantic > 0.0) {
    SoftmaxLoss ce_img = softmax_cross_entropy(logits_img, batch.labels);
    SoftmaxLoss ce_txt = softmax_cross_entropy(logits_txt, batch.labels);
    inj.semantic = ce_img.loss + ce_txt.loss;
    inj.logits_img = w.semantic * ce_img.grad_logits;
    inj.logits_txt = w.semantic * ce_txt.grad_logits;
  } else {
    inj.logits_img = Matrix::Zero(logits_img.rows(), logits_img.cols());
    inj.logits_txt = Matrix::Zero(logits_txt.rows(), logits_txt.cols());
  }
  if (w.pairwise > 0.0) {
    LossTerm pair = pairwise_loss(fwd.img.trace, fwd.txt.trace, kMediaLayers);
    inj.pairwise = pair.value;
    add_scaled(inj.img, pair.grads[0], w.pairwise);
    add_scaled(inj.txt, pair.grads[1], w.pairwise);
  }
  return inj;
}

DomainGrads backward_domain(const DomainNetwork& net, const DomainForward& fwd, const DomainInjections& inj) {
  DomainGrads grads = DomainGrads::zeros_like(net);
  backward_pathway(net, fwd.img, inj.img, inj.logits_img, grads);
  backward_pathway(net, fwd.txt, inj.txt, inj.logits_txt, grads);
  return grads;
}

void apply(DomainNetwork& net, const DomainGrads& grads, const SgdConfig& sgd) {
  auto layers = net.layers();
  sgd_step(layers, grads.layers, sgd);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(Media media) { return media == Media::Image ? "image" : "text"; }
std::string_view to_string(Domain domain) { return domain == Domain::Source ? "source" : "target"; }

std::array<DenseLayer*, kNetworkLayers> DomainNetwork::layers() {
  return {&img_fc6, &img_fc7, &txt_fc6, &txt_fc7, &shared_fc8, &shared_fc9, &classifier_fc10};
}

std::array<const DenseLayer*, kNetworkLayers> DomainNetwork::layers() const {
  return {&img_fc6, &img_fc7, &txt_fc6, &txt_fc7, &shared_fc8, &shared_fc9, &classifier_fc10};
}

NetworkShape DomainNetwork::shape() const {
  return {static_cast<int>(img_fc6.in_dim()), static_cast<int>(txt_fc6.in_dim()), static_cast<int>(img_fc6.out_dim()),
          num_classes()};
}

void DomainNetwork::validate() const {
  const auto h = img_fc6.out_dim();
  auto expect = [](const DenseLayer& l, Eigen::Index in, Eigen::Index out, Activation act, std::string_view name) {
    if (l.in_dim() != in || l.out_dim() != out || l.activation() != act) {
      throw std::invalid_argument("network layer " + std::string(name) + " has inconsistent shape");
    }
  };
  expect(img_fc6, img_fc6.in_dim(), h, Activation::ReLU, "img_fc6");
  expect(img_fc7, h, h, Activation::ReLU, "img_fc7");
  expect(txt_fc6, txt_fc6.in_dim(), h, Activation::ReLU, "txt_fc6");
  expect(txt_fc7, h, h, Activation::ReLU, "txt_fc7");
  expect(shared_fc8, h, h, Activation::ReLU, "shared_fc8");
  expect(shared_fc9, h, h, Activation::ReLU, "shared_fc9");
  expect(classifier_fc10, h, classifier_fc10.out_dim(), Activation::Identity, "classifier_fc10");
}

bool DomainNetwork::operator==(const DomainNetwork& other) const {
  auto a = layers();
  auto b = other.layers();
  for (std::size_t i = 0; i < kNetworkLayers; ++i)
    if (!(*a[i] == *b[i])) return false;
  return true;
}

DomainNetwork make_domain_network(const NetworkShape& shape, std::mt19937_64& rng) {
  const int h = shape.hidden;
  auto img6 = init_layer(shape.image_dim, h, Activation::ReLU, rng);
  auto img7 = init_layer(h, h, Activation::ReLU, rng);
  auto txt6 = init_layer(shape.text_dim, h, Activation::ReLU, rng);
  auto txt7 = init_layer(h, h, Activation::ReLU, rng);
  auto fc8 = init_layer(h, h, Activation::ReLU, rng);
  auto fc9 = init_layer(h, h, Activation::ReLU, rng);
  auto fc10 = init_layer(h, shape.num_classes, Activation::Identity, rng);
  return {std::move(img6), std::move(img7), std::move(txt6), std::move(txt7),
          std::move(fc8),  std::move(fc9),  std::move(fc10)};
}

void DcktModel::validate() const {
  source.validate();
  target.validate();
  const auto s = source.shape();
  const auto t = target.shape();
  if (s.image_dim != t.image_dim || s.text_dim != t.text_dim || s.hidden != t.hidden) {
    throw std::invalid_argument("source and target networks must share layer shapes except the classifier");
  }
  weights.validate();
  mmd.validate();
}

DcktModel make_model(const NetworkShape& source_shape, const NetworkShape& target_shape, const LossWeights& weights,
                     const MmdConfig& mmd, std::uint64_t seed) {
  std::mt19937_64 src_rng(derive_seed(seed, 1));
  std::mt19937_64 tgt_rng(derive_seed(seed, 2));
  DcktModel model{make_domain_network(source_shape, src_rng), make_domain_network(target_shape, tgt_rng), weights, mmd};
  model.validate();
  return model;
}

ForwardTrace forward_item(const DomainNetwork& net, Media media, const Matrix& features) {
  check_features(net, media, features);
  return run_pathway(net, media, features).trace;
}

ForwardTrace forward_item(const DomainNetwork& net, Media media, const Vector& feature) {
  return forward_item(net, media, Matrix(feature.transpose()));
}

Vector embed(const DomainNetwork& net, Media media, const Vector& feature) {
  return forward_item(net, media, feature).post("softmax").row(0).transpose();
}

Matrix embed_batch(const DomainNetwork& net, Media media, const Matrix& features) {
  return forward_item(net, media, features).post("softmax");
}

DomainGrads DomainGrads::zeros_like(const DomainNetwork& net) {
  DomainGrads g;
  const auto layers = net.layers();
  for (std::size_t i = 0; i < kNetworkLayers; ++i) g.layers[i] = LayerGrads::zeros_like(*layers[i]);
  return g;
}

DomainLossWeights domain_weights(const LossWeights& weights, Domain domain) {
  return domain == Domain::Source ? DomainLossWeights{weights.w_sem_src, weights.w_pair_src}
                                  : DomainLossWeights{weights.w_sem_tgt, weights.w_pair_tgt};
}

DomainStepResult compute_domain_gradients(const DomainNetwork& net, const PairedBatch& batch,
                                          const DomainLossWeights& weights) {
  check_batch(net, batch, "domain");
  const DomainForward fwd = forward_domain(net, batch);
  const DomainInjections inj = local_losses(fwd, batch, weights);
  return {inj.semantic, inj.pairwise, backward_domain(net, fwd, inj)};
}

DomainStepResult domain_step(DomainNetwork& net, const PairedBatch& batch, const DomainLossWeights& weights,
                             const SgdConfig& sgd) {
  sgd.validate();
  DomainStepResult r = compute_domain_gradients(net, batch, weights);
  apply(net, r.grads, sgd);
  return r;
}

JointGradients compute_joint_gradients(const DcktModel& model, const PairedBatch& src, const PairedBatch& tgt) {
  model.validate();
  check_batch(model.source, src, "source");
  check_batch(model.target, tgt, "target");
  const LossWeights& w = model.weights;
  const bool any_mmd = w.w_mmd_image > 0.0 || w.w_mmd_text > 0.0 || w.w_mmd_corr > 0.0;
  if (any_mmd && (src.size() < 2 || tgt.size() < 2)) {
    throw std::invalid_argument("joint step needs at least 2 pairs per domain batch for MMD");
  }

  const DomainForward fs = forward_domain(model.source, src);
  const DomainForward ft = forward_domain(model.target, tgt);
  DomainInjections is = local_losses(fs, src, domain_weights(w, Domain::Source));
  DomainInjections it = local_losses(ft, tgt, domain_weights(w, Domain::Target));

  JointGradients out;
  LossBreakdown terms;
  terms.sem_src = is.semantic;
  terms.pair_src = is.pairwise;
  terms.sem_tgt = it.semantic;
  terms.pair_tgt = it.pairwise;

  if (w.w_mmd_image > 0.0) {
    LossTerm t = mmd_media_loss(fs.img.trace, ft.img.trace, kMediaLayers, model.mmd);
    terms.mmd_image = t.value;
    add_scaled(is.img, t.grads[0], w.w_mmd_image);
    add_scaled(it.img, t.grads[1], w.w_mmd_image);
    out.mmd_evaluations += kMediaLayers.size();
  }
  if (w.w_mmd_text > 0.0) {
    LossTerm t = mmd_media_loss(fs.txt.trace, ft.txt.trace, kMediaLayers, model.mmd);
    terms.mmd_text = t.value;
    add_scaled(is.txt, t.grads[0], w.w_mmd_text);
    add_scaled(it.txt, t.grads[1], w.w_mmd_text);
    out.mmd_evaluations += kMediaLayers.size();
  }
  if (w.w_mmd_corr > 0.0) {
    LossTerm t = mmd_corr_loss(fs.img.trace, fs.txt.trace, ft.img.trace, ft.txt.trace, kSharedLayers, model.mmd);
    terms.mmd_corr = t.value;
    add_scaled(is.img, t.grads[0], w.w_mmd_corr);
    add_scaled(is.txt, t.grads[1], w.w_mmd_corr);
    add_scaled(it.img, t.grads[2], w.w_mmd_corr);
    add_scaled(it.txt, t.grads[3], w.w_mmd_corr);
    out.mmd_evaluations += kSharedLayers.size();
  }

  out.losses = combine(terms, w);
  out.source = backward_domain(model.source, fs, is);
  out.target = backward_domain(model.target, ft, it);
  return out;
}

LossBreakdown joint_step(DcktModel& model, const PairedBatch& src, const PairedBatch& tgt, const SgdConfig& sgd) {
  sgd.validate();
  const JointGradients g = compute_joint_gradients(model, src, tgt);
  apply(model.source, g.source, sgd);
  apply(model.target, g.target, sgd);
  return g.losses;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (n == 0) throw std::invalid_argument("cannot batch an empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto b = static_cast<std::size_t>(batch_size);
  if (n < b) return {order};
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start + b <= n; start += b) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + b));
  }
  return batches;
}

PretrainSummary pretrain_domain(DomainNetwork& net, const CrossMediaDataset& data, Domain domain, int epochs,
                                int batch_size, const LossWeights& weights, const SgdConfig& sgd) {
  if (epochs < 1) throw std::invalid_argument("pretrain_domain: epochs must be >= 1");
  if (data.empty()) throw std::invalid_argument("pretrain_domain: dataset is empty");
  sgd.validate();
  weights.validate();
  const DomainLossWeights w = domain_weights(weights, domain);
  std::mt19937_64 rng(sgd.seed);
  PretrainSummary summary;
  for (int e = 0; e < epochs; ++e) {
    for (const auto& idx : epoch_batches(data.size(), batch_size, rng)) {
      const DomainStepResult r = domain_step(net, make_batch(data, idx), w, sgd);
      summary.mean_semantic += r.semantic;
      summary.mean_pairwise += r.pairwise;
      ++summary.steps;
    }
  }
  summary.mean_semantic /= static_cast<double>(summary.steps);
  summary.mean_pairwise /= static_cast<double>(summary.steps);
  return summary;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x6a09e667f3bcc908ULL));
}

}  // namespace xmt
