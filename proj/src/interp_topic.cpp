#include "coreinterp/interp_topic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "coreinterp/errors.hpp"
#include "coreinterp/npy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coreinterp::topic {

namespace {

using RowMap = Eigen::Map<const Matrix>;

RowMap sample_matrix(const Tensor4& t, std::size_t i) {
  const auto& s = t.shape();
  return RowMap(t.sample(i).data(), static_cast<Eigen::Index>(s.h * s.w),
                static_cast<Eigen::Index>(s.d));
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

void check_head(const Tensor4& acts, const ClassifierHead& head, const TopicParams& p) {
  if (acts.shape().d != head.input_depth()) {
    throw ValidationError("topic model: activation depth " + std::to_string(acts.shape().d) +
                          " does not match classifier head input " +
                          std::to_string(head.input_depth()));
  }
  if (static_cast<std::size_t>(p.topics.rows()) != acts.shape().d) {
    throw ValidationError("topic model: depth mismatch between topics and activations");
  }
}

// Returns the cross-entropy for one sample and, when grad != nullptr, adds its
// gradient scaled by `scale`.
double sample_pass(const TopicParams& p, const RowMap& a, ClassId label, const ClassifierHead& head,
                   TopicParams* grad, double scale) {
  const Matrix pre_topic = a * p.topics;        // [L, m]
  const Matrix q = relu(pre_topic);
  const Matrix hidden = q * p.recovery_w1;      // [L, l]
  const Matrix pre_out = hidden * p.recovery_w2;  // [L, d]
  const Matrix r = relu(pre_out);
  const double inv_l = 1.0 / static_cast<double>(a.rows());
  const Vector pooled = r.colwise().sum().transpose() * inv_l;
  const Vector logits = head.weights * pooled + head.bias;
  const double top = logits.maxCoeff();
  const Vector expz = (logits.array() - top).exp().matrix();
  const double sum = expz.sum();
  const double loss = std::log(sum) + top - logits[static_cast<Eigen::Index>(label)];
  if (grad == nullptr) return loss;

  Vector dlogits = expz / sum;
  dlogits[static_cast<Eigen::Index>(label)] -= 1.0;
  dlogits *= scale;
  const Eigen::RowVectorXd dpooled = (head.weights.transpose() * dlogits).transpose() * inv_l;
  Matrix d_pre_out = (pre_out.array() > 0.0).cast<double>().matrix();
  d_pre_out.array().rowwise() *= dpooled.array();
  grad->recovery_w2.noalias() += hidden.transpose() * d_pre_out;
  const Matrix d_hidden = d_pre_out * p.recovery_w2.transpose();
  grad->recovery_w1.noalias() += q.transpose() * d_hidden;
  Matrix d_pre_topic = d_hidden * p.recovery_w1.transpose();
  d_pre_topic.array() *= (pre_topic.array() > 0.0).cast<double>();
  grad->topics.noalias() += a.transpose() * d_pre_topic;
  return loss;
}

void normalize_topics(TopicParams& p) {
  for (Eigen::Index j = 0; j < p.topics.cols(); ++j) {
    const double norm = p.topics.col(j).norm();
    if (norm > 0.0) {
      p.topics.col(j) /= norm;
      p.recovery_w1.row(j) *= norm;
    }
  }
}

}  // namespace

TopicParams init_params(std::size_t d, const TopicOptions& opts) {
  if (opts.m == 0 || opts.m > d) {
    throw ValidationError("topic count m=" + std::to_string(opts.m) + " must lie in [1, d=" +
                          std::to_string(d) + "]");
  }
  if (opts.l < opts.m) {
    throw ValidationError("recovery width l must be >= m");
  }
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto D = static_cast<Eigen::Index>(d);
  const auto M = static_cast<Eigen::Index>(opts.m);
  const auto L = static_cast<Eigen::Index>(opts.l);

  TopicParams p;
  if (opts.init == TopicInit::Identity) {
    p.topics = Matrix::Identity(D, D).leftCols(M);
  } else {
    Eigen::MatrixXd g(D, M);
    for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = gauss(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(D, M);
    p.topics = q;
  }
  p.recovery_w1 = Matrix::Zero(M, L);
  p.recovery_w1.leftCols(M).setIdentity();
  p.recovery_w2 = Matrix::Zero(L, D);
  p.recovery_w2.topRows(M) = p.topics.transpose();
  if (opts.init_noise > 0.0) {
    for (Eigen::Index k = 0; k < p.recovery_w1.size(); ++k) {
      p.recovery_w1.data()[k] += opts.init_noise * gauss(rng);
    }
    for (Eigen::Index k = 0; k < p.recovery_w2.size(); ++k) {
      p.recovery_w2.data()[k] += opts.init_noise * gauss(rng);
    }
  }
  return p;
}

LossAndGradients loss_and_gradients(const TopicParams& p, const Tensor4& acts,
                                    std::span<const ClassId> labels,
                                    std::span<const std::size_t> samples,
                                    const ClassifierHead& head) {
  check_head(acts, head, p);
  LossAndGradients out;
  out.grad.topics = Matrix::Zero(p.topics.rows(), p.topics.cols());
  out.grad.recovery_w1 = Matrix::Zero(p.recovery_w1.rows(), p.recovery_w1.cols());
  out.grad.recovery_w2 = Matrix::Zero(p.recovery_w2.rows(), p.recovery_w2.cols());
  const double scale = 1.0 / static_cast<double>(samples.size());
  for (std::size_t i : samples) {
    out.loss += sample_pass(p, sample_matrix(acts, i), labels[i], head, &out.grad, scale);
  }
  out.loss *= scale;
  return out;
}

double mean_loss(const TopicParams& p, const Tensor4& acts, std::span<const ClassId> labels,
                 const ClassifierHead& head) {
  check_head(acts, head, p);
  double total = 0.0;
  for (std::size_t i = 0; i < acts.shape().n; ++i) {
    total += sample_pass(p, sample_matrix(acts, i), labels[i], head, nullptr, 0.0);
  }
  return total / static_cast<double>(acts.shape().n);
}

TopicModel fit_topics(const Tensor4& acts, std::span<const ClassId> labels,
                      const ClassifierHead& head, const TopicOptions& opts) {
  if (labels.size() != acts.shape().n) throw ValidationError("topic model: label count mismatch");
  if (opts.batch_size == 0) throw ValidationError("batch size must be positive");
  TopicModel model;
  model.m = opts.m;
  model.l = opts.l;
  model.seed = opts.seed;
  model.params = init_params(acts.shape().d, opts);
  check_head(acts, head, model.params);
  model.initial_loss = mean_loss(model.params, acts, labels, head);

  std::mt19937_64 rng(opts.seed ^ 0x5eedULL);
  std::vector<std::size_t> order(acts.shape().n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const LossAndGradients lg = loss_and_gradients(model.params, acts, labels, batch, head);
      model.params.topics -= opts.lr * lg.grad.topics;
      model.params.recovery_w1 -= opts.lr * lg.grad.recovery_w1;
      model.params.recovery_w2 -= opts.lr * lg.grad.recovery_w2;
    }
    normalize_topics(model.params);
    const double loss = mean_loss(model.params, acts, labels, head);
    if (!std::isfinite(loss)) {
      throw ComputationError("topic training diverged at epoch " + std::to_string(epoch + 1) +
                             " (loss is not finite); lower the learning rate");
    }
    model.train_loss_curve.push_back(loss);
  }
  normalize_topics(model.params);
  return model;
}

TopicModel fit_topics(const DatasetView& view, const ClassifierHead& head, const TopicOptions& opts) {
  const Tensor4 acts = view.layer(head.input_layer_id);
  return fit_topics(acts, view.labels(), head, opts);
}

Tensor4 topic_maps(const Tensor4& t, const TopicModel& model) {
  if (t.shape().d != static_cast<std::size_t>(model.params.topics.rows())) {
    throw ValidationError("depth mismatch: tensor depth " + std::to_string(t.shape().d) +
                          ", topics expect " + std::to_string(model.params.topics.rows()));
  }
  Shape4 s = t.shape();
  s.d = static_cast<std::size_t>(model.params.topics.cols());
  return unflatten(relu(flatten(t) * model.params.topics), s);
}

Tensor4 topic_reconstruct(const Tensor4& maps, const TopicModel& model) {
  if (maps.shape().d != static_cast<std::size_t>(model.params.recovery_w1.rows())) {
    throw ValidationError("shape mismatch: maps depth " + std::to_string(maps.shape().d) +
                          ", recovery expects " + std::to_string(model.params.recovery_w1.rows()));
  }
  Shape4 s = maps.shape();
  s.d = static_cast<std::size_t>(model.params.recovery_w2.cols());
  return unflatten(relu(flatten(maps) * model.params.recovery_w1 * model.params.recovery_w2), s);
}

void save(const TopicModel& model, const fs::path& dir, const json& extra) {
  fs::create_directories(dir);
  npy::save_matrix(dir / "topics.npy", model.params.topics);
  npy::save_matrix(dir / "recovery_w1.npy", model.params.recovery_w1);
  npy::save_matrix(dir / "recovery_w2.npy", model.params.recovery_w2);
  json j = extra;
  j["method"] = "topic";
  j["m"] = model.m;
  j["l"] = model.l;
  j["seed"] = model.seed;
  j["initial_loss"] = model.initial_loss;
  j["loss_curve"] = model.train_loss_curve;
  std::ofstream out(dir / "topic.json", std::ios::trunc);
  out << j.dump(2) << "\n";
}

TopicModel load(const fs::path& dir) {
  std::ifstream in(dir / "topic.json");
  if (!in) throw ValidationError("missing " + (dir / "topic.json").string());
  TopicModel model;
  try {
    const json j = json::parse(in);
    model.m = j.at("m").get<std::size_t>();
    model.l = j.at("l").get<std::size_t>();
    model.seed = j.at("seed").get<std::uint64_t>();
    model.initial_loss = j.value("initial_loss", 0.0);
    model.train_loss_curve = j.at("loss_curve").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ValidationError("malformed topic.json: " + std::string(e.what()));
  }
  model.params.topics = npy::load_matrix(dir / "topics.npy");
  model.params.recovery_w1 = npy::load_matrix(dir / "recovery_w1.npy");
  model.params.recovery_w2 = npy::load_matrix(dir / "recovery_w2.npy");
  return model;
}

}  // namespace coreinterp::topic
