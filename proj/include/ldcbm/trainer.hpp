#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldcbm/backbone.hpp"
#include "ldcbm/error.hpp"
#include "ldcbm/grouping.hpp"
#include "ldcbm/heads.hpp"
#include "ldcbm/model.hpp"
#include "ldcbm/synth_data.hpp"

namespace ldcbm {

/// How concepts are mapped onto filter groups.
struct ConceptGroupPolicy {
  enum class Kind { kPart, kModulo, kExplicit };
  Kind kind = Kind::kPart;
  std::vector<std::size_t> table;  // only for kExplicit

  friend bool operator==(const ConceptGroupPolicy&, const ConceptGroupPolicy&) = default;
};

/// Resolves the policy into a concept -> group table. `part` maps the concepts
/// of part p to group floor(p * K / P); `modulo` maps concept i to i mod K.
std::vector<std::size_t> resolve_concept_groups(const ConceptGroupPolicy& policy,
                                                const DatasetBundle& data, std::size_t k);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  /// Rescale the full gradient to at most this L2 norm before the update; 0 disables.
  double clip_grad_norm = 0.0;
  double lambda_c = 0.5;
  double lambda_g = 0.1;
  /// Stabiliser in the intra/inter ratio of the grouping loss during training.
  /// Large enough to bound each ratio by intra / 0.5 as inter-group similarity
  /// falls to 0.
  double grouping_epsilon = 0.5;
  /// Probability that the class head sees a concept's ground truth instead of
  /// its prediction during training; 0 disables.
  double concept_substitution = 0.25;
  std::size_t groups = 4;
  std::size_t recluster_period = 2;
  std::size_t warmup_epochs = 2;
  std::size_t reference_batch = 128;
  std::uint64_t seed = 0;
  /// Off: no spectral clustering and no grouping loss (vanilla CBM path).
  bool grouping = true;
  /// Emit a checkpoint every this many epochs; 0 disables periodic checkpoints.
  std::size_t checkpoint_every = 0;
  ConceptGroupPolicy concept_groups;
  BackboneConfig backbone;

  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Baseline configuration: lambda_g = 0, one group, clustering disabled.
TrainConfig vanilla_cbm_mode(TrainConfig config);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  LossBreakdown loss;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_total = 0.0;
  double val_c_acc = 0.0;
  double val_a_acc = 0.0;
};

struct ReclusterEvent {
  std::size_t epoch = 0;
  std::size_t step = 0;  // first step that uses the new groups
  GroupAssignment assignment;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochMetrics> epochs;
  std::vector<ReclusterEvent> reclusters;
  std::size_t spectral_calls = 0;
  /// Similarity structure of the final model on the reference batch.
  GroupSeparation final_separation;
};

struct TrainResult {
  Model model;
  TrainLog log;
};

struct TrainHooks {
  /// Called after every `checkpoint_every` epochs with the epoch number.
  std::function<void(const Model&, std::size_t)> on_checkpoint;
  /// Called after every optimizer step with the updated model.
  std::function<void(const StepRecord&, const Model&)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Raised when a step produces a non-finite loss.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const StepRecord& record, const std::string& what)
      : NumericError(what), record_(record) {}
  [[nodiscard]] const StepRecord& record() const noexcept { return record_; }

 private:
  StepRecord record_;
};

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`; 0 disables.
void clip_by_norm(std::vector<ad::Tensor>& grads, double max_norm);

/// Heavy-ball update: v = momentum * v + g, p -= lr * v. `velocity` and
/// `grads` follow the parameter order of `params`.
void sgd_step(ad::ParameterStore& params, ad::ParameterStore& velocity,
              const std::vector<ad::Tensor>& grads, double lr, double momentum);

/// Fresh parameters from the (seed, 1) backbone and (seed, 2) head streams.
Model initialize_model(const TrainConfig& config, const DatasetBundle& data);

/// Shuffled sample order for a 1-based epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count);

/// Row-major rows x cols mask for a 0-based step: 1 where the class head gets the
/// ground-truth concept, each entry independently with probability `rate`.
ad::Tensor substitution_mask(std::uint64_t seed, std::size_t step, std::size_t rows, std::size_t cols,
                             double rate);

TrainResult train(const TrainConfig& config, const DatasetBundle& data, const TrainHooks& hooks = {});

/// Separation of the model's filter similarities on the first `reference`
/// training samples.
GroupSeparation measure_separation(const Model& model, const DatasetBundle& data,
                                   std::size_t reference);

/// `step,epoch,l_y,l_c,l_g,lambda_c,lambda_g,l_total` rows.
std::string train_log_csv(const TrainLog& log);
nlohmann::json run_summary(const TrainConfig& config, const TrainLog& log);

}  // namespace ldcbm
