#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "coreinterp/activation_store.hpp"

namespace coreinterp::topic {

struct TopicParams {
  Matrix topics;       // T, [d, m]
  Matrix recovery_w1;  // [m, l]
  Matrix recovery_w2;  // [l, d]
};

struct TopicModel {
  TopicParams params;
  std::size_t m = 0;
  std::size_t l = 0;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  std::vector<double> train_loss_curve;  // loss over the training view after each epoch

  const Matrix& topics() const { return params.topics; }
};

enum class TopicInit {
  /// Random orthonormal topics; recovery W1*W2 starts as T^T so the untrained
  /// model reconstructs the projection onto the topic span.
  Orthonormal,
  /// T = first m columns of the identity, same recovery; with m = d the
  /// untrained model passes activations through unchanged.
  Identity,
};

struct TopicOptions {
  std::size_t m = 10;
  std::size_t l = 64;
  std::size_t epochs = 20;
  double lr = 1e-2;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  TopicInit init = TopicInit::Orthonormal;
  /// Std of Gaussian noise added to the recovery weights at init.
  double init_noise = 0.01;
};

TopicParams init_params(std::size_t d, const TopicOptions& opts);

struct LossAndGradients {
  double loss = 0.0;  // mean cross-entropy over the batch
  TopicParams grad;
};

/// Cross-entropy of head(GAP(relu(relu(A T) W1 W2))) against labels, with its
/// analytic gradients. `samples` lists the rows of `acts` forming the batch.
LossAndGradients loss_and_gradients(const TopicParams& p, const Tensor4& acts,
                                    std::span<const ClassId> labels,
                                    std::span<const std::size_t> samples,
                                    const ClassifierHead& head);

/// Mean cross-entropy over all samples of `acts`, no gradients.
double mean_loss(const TopicParams& p, const Tensor4& acts, std::span<const ClassId> labels,
                 const ClassifierHead& head);

/// Mini-batch gradient descent on T, W1, W2 with the head frozen. After each
/// epoch every topic column is scaled to unit norm and the matching row of W1
/// is scaled inversely, which leaves the network function unchanged.
TopicModel fit_topics(const Tensor4& acts, std::span<const ClassId> labels,
                      const ClassifierHead& head, const TopicOptions& opts);
TopicModel fit_topics(const DatasetView& view, const ClassifierHead& head, const TopicOptions& opts);

/// Z[i,u,v,:] = relu(A[i,u,v,:] T), shape [n, h, w, m].
Tensor4 topic_maps(const Tensor4& t, const TopicModel& model);

/// relu(Z W1 W2), shape [n, h, w, d].
Tensor4 topic_reconstruct(const Tensor4& maps, const TopicModel& model);

/// topics.npy, recovery_w1.npy, recovery_w2.npy and topic.json.
void save(const TopicModel& model, const std::filesystem::path& dir, const nlohmann::json& extra);
TopicModel load(const std::filesystem::path& dir);

}  // namespace coreinterp::topic
