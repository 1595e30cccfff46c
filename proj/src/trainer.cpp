#include "ldcbm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/config.hpp"
#include "ldcbm/evaluation.hpp"
#include "ldcbm/filter_stats.hpp"
#include "ldcbm/io_util.hpp"

namespace ldcbm {
namespace {

// Named random streams: 1 backbone init, 2 head init, 3 shuffling, 4 clustering.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t name, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), name,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

ad::ParameterStore zeros_like(const ad::ParameterStore& params) {
  ad::ParameterStore out;
  for (const auto& e : params.entries()) out.add(e.name, ad::Tensor(e.value.shape(), 0.0));
  return out;
}

std::vector<std::size_t> first_n(std::span<const std::size_t> order, std::size_t n) {
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n, order.size()))};
}

ad::Tensor reference_similarity(const Model& model, const DatasetBundle& data,
                                std::span<const std::size_t> indices) {
  const Predictions pred = predict(model, data, data.train, indices);
  ad::Tape tape;
  return similarity_matrix(response_matrix(tape.constant(pred.responses))).s.value();
}

}  // namespace

void clip_by_norm(std::vector<ad::Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (auto& g : grads)
    for (double& v : g.values()) v *= factor;
}

void sgd_step(ad::ParameterStore& params, ad::ParameterStore& velocity,
              const std::vector<ad::Tensor>& grads, double lr, double momentum) {
  auto entries = params.entries();
  auto vel = velocity.entries();
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto value = entries[p].value.values();
    auto v = vel[p].value.values();
    const auto& g = grads[p].values();
    for (std::size_t i = 0; i < value.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      value[i] -= lr * v[i];
    }
  }
}

std::vector<std::size_t> resolve_concept_groups(const ConceptGroupPolicy& policy,
                                                const DatasetBundle& data, std::size_t k) {
  const std::size_t m = data.spec.concepts;
  std::vector<std::size_t> table(m);
  switch (policy.kind) {
    case ConceptGroupPolicy::Kind::kPart:
      for (std::size_t i = 0; i < m; ++i) table[i] = data.layout.concept_part[i] * k / data.spec.parts;
      break;
    case ConceptGroupPolicy::Kind::kModulo:
      for (std::size_t i = 0; i < m; ++i) table[i] = i % k;
      break;
    case ConceptGroupPolicy::Kind::kExplicit:
      if (policy.table.size() != m) {
        throw ConfigError("concept_to_group lists " + std::to_string(policy.table.size()) +
                          " concepts, the dataset has " + std::to_string(m));
      }
      table = policy.table;
      break;
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (table[i] >= k) {
      throw ConfigError("concept_to_group maps concept " + std::to_string(i) + " to group " +
                        std::to_string(table[i]) + ", K = " + std::to_string(k));
    }
  }
  return table;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(concept_substitution >= 0.0 && concept_substitution <= 1.0)) {
    throw ConfigError("train.concept_substitution must be in [0, 1]");
  }
  if (!(grouping_epsilon > 0.0) || !std::isfinite(grouping_epsilon)) {
    throw ConfigError("train.grouping_epsilon must be > 0");
  }
  if (!(clip_grad_norm >= 0.0) || !std::isfinite(clip_grad_norm)) {
    throw ConfigError("train.clip_grad_norm must be >= 0 (0 disables clipping)");
  }
  if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c)) throw ConfigError("train.lambda_c must be >= 0");
  if (!(lambda_g >= 0.0) || !std::isfinite(lambda_g)) throw ConfigError("train.lambda_g must be >= 0");
  if (groups == 0) throw ConfigError("train.groups (K) must be >= 1");
  if (recluster_period == 0) throw ConfigError("train.recluster_period must be >= 1");
  if (grouping && reference_batch < 2) throw ConfigError("train.reference_batch must be >= 2");
  backbone.validate(groups);
}

TrainConfig vanilla_cbm_mode(TrainConfig config) {
  config.lambda_g = 0.0;
  config.groups = 1;
  config.grouping = false;
  return config;
}

Model initialize_model(const TrainConfig& config, const DatasetBundle& data) {
  config.validate();
  const BackboneConfig& bb = config.backbone;
  if (bb.input_height != data.spec.image_height || bb.input_width != data.spec.image_width ||
      bb.input_channels != data.spec.image_channels) {
    throw DimensionError("backbone expects " + std::to_string(bb.input_height) + "x" +
                         std::to_string(bb.input_width) + "x" + std::to_string(bb.input_channels) +
                         " images, dataset has " + std::to_string(data.spec.image_height) + "x" +
                         std::to_string(data.spec.image_width) + "x" +
                         std::to_string(data.spec.image_channels));
  }
  Model model;
  model.backbone = bb;
  model.data = DataShape::of(data.spec);
  model.assignment = contiguous_groups(bb.grouped_filters(), config.groups);
  model.heads.concept_to_group = resolve_concept_groups(config.concept_groups, data, config.groups);
  auto backbone_rng = stream(config.seed, 1);
  init_backbone(bb, model.params, backbone_rng);
  auto head_rng = stream(config.seed, 2);
  init_heads(model.heads, model.assignment, data.spec.classes, model.params, head_rng);
  return model;
}

ad::Tensor substitution_mask(std::uint64_t seed, std::size_t step, std::size_t rows, std::size_t cols,
                             double rate) {
  ad::Tensor mask(ad::Shape{rows, cols}, 0.0);
  if (rate <= 0.0) return mask;
  auto rng = stream(seed, 5, step);
  for (auto& v : mask.values()) v = static_cast<double>(rng() >> 11) * 0x1.0p-53 < rate ? 1.0 : 0.0;
  return mask;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = stream(seed, 3, epoch);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = count; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

GroupSeparation measure_separation(const Model& model, const DatasetBundle& data,
                                   std::size_t reference) {
  std::vector<std::size_t> idx(std::min(reference, data.train.count));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return group_separation(reference_similarity(model, data, idx), model.assignment);
}

TrainResult train(const TrainConfig& config, const DatasetBundle& data, const TrainHooks& hooks) {
  TrainResult result{initialize_model(config, data), {}};
  Model& model = result.model;
  TrainLog& log = result.log;
  ad::ParameterStore velocity = zeros_like(model.params);
  const Split& train_split = data.train;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(config.seed, epoch, train_split.count);
    const bool warm = epoch <= config.warmup_epochs;
    const double lambda_g = config.grouping && !warm ? config.lambda_g : 0.0;
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> batch =
          std::span(order).subspan(start, std::min(config.batch_size, order.size() - start));
      if (batch.size() < 2) continue;
      ad::Tape tape;
      const ad::BoundParameters bound(tape, model.params);
      const ForwardPass pass = forward(model, bound, tape.constant(image_batch(data.spec, train_split, batch)));
      const ad::Tensor truth = concept_batch(data.spec, train_split, batch);
      ad::Var logits = pass.class_logits;
      if (config.concept_substitution > 0.0) {
        const ad::Tensor mask =
            substitution_mask(config.seed, step, batch.size(), truth.dim(1), config.concept_substitution);
        ad::Tensor keep(mask.shape()), fixed(mask.shape());
        for (std::size_t i = 0; i < mask.size(); ++i) {
          keep[i] = 1.0 - mask[i];
          fixed[i] = mask[i] * truth[i];
        }
        logits = predict_class(
            ad::add(ad::mul(pass.concept_probs, tape.constant(std::move(keep))), tape.constant(std::move(fixed))),
            bound);
      }
      const ad::Var l_y = class_loss(logits, label_batch(train_split, batch));
      const ad::Var l_c = concept_loss(pass.concept_probs, truth);
      ad::Var l_g;
      if (config.grouping) {
        l_g = grouping_loss(similarity_matrix(response_matrix(pass.responses)), model.assignment,
                           config.grouping_epsilon);
      }
      const ad::Var total = combine_losses(l_y, l_c, lambda_g > 0.0 ? l_g : ad::Var{}, config.lambda_c, lambda_g);

      StepRecord record{step, epoch, {}};
      record.loss.l_y = l_y.value().item();
      record.loss.l_c = l_c.value().item();
      record.loss.l_g = l_g.valid() ? l_g.value().item() : 0.0;
      record.loss.lambda_c = config.lambda_c;
      record.loss.lambda_g = lambda_g;
      record.loss.l_total = total.value().item();
      if (!std::isfinite(record.loss.l_total) || !std::isfinite(record.loss.l_g)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (epoch " << epoch << "): l_y=" << record.loss.l_y
            << " l_c=" << record.loss.l_c << " l_g=" << record.loss.l_g
            << " lambda_c=" << record.loss.lambda_c << " lambda_g=" << record.loss.lambda_g
            << " l_total=" << record.loss.l_total;
        throw TrainingDiverged(record, msg.str());
      }

      const ad::Gradients grads = tape.backward(total);
      std::vector<ad::Tensor> g;
      g.reserve(bound.size());
      for (std::size_t p = 0; p < bound.size(); ++p) g.push_back(grads.of(bound.at(p)));
      clip_by_norm(g, config.clip_grad_norm);
      sgd_step(model.params, velocity, g, config.learning_rate, config.momentum);

      log.steps.push_back(record);
      if (hooks.on_step) hooks.on_step(record, model);
      epoch_total += record.loss.l_total;
      ++epoch_steps;
      ++step;
    }

    // With one group the partition is fixed, and after the last epoch no step
    // would train the re-sized heads.
    if (config.grouping && config.groups > 1 && epoch % config.recluster_period == 0 && epoch < config.epochs) {
      const auto reference = first_n(order, config.reference_batch);
      const ad::Tensor s = reference_similarity(model, data, reference);
      const std::uint64_t cluster_seed = stream(config.seed, 4, epoch)();
      GroupAssignment next = spectral_cluster(s, config.groups, cluster_seed);
      ++log.spectral_calls;
      next = align_to_heads(model.heads, model.assignment, next, model.params);
      resync_heads(model.heads, model.assignment, next, model.params);
      resync_heads(model.heads, model.assignment, next, velocity);
      model.assignment = next;
      log.reclusters.push_back(ReclusterEvent{epoch, step, next});
    }

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.mean_total = epoch_steps > 0 ? epoch_total / static_cast<double>(epoch_steps) : 0.0;
    if (data.val.count > 0) {
      const MetricsReport report = evaluate(model, data, data.val);
      metrics.val_c_acc = report.c_acc;
      metrics.val_a_acc = report.a_acc;
    }
    log.epochs.push_back(metrics);
    if (hooks.on_epoch) hooks.on_epoch(metrics);

    if (hooks.on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      hooks.on_checkpoint(model, epoch);
    }
  }
  if (train_split.count >= 2) {
    log.final_separation = measure_separation(model, data, config.reference_batch);
  }
  return result;
}

std::string train_log_csv(const TrainLog& log) {
  std::string out = "step,epoch,l_y,l_c,l_g,lambda_c,lambda_g,l_total\n";
  for (const auto& r : log.steps) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," +
           io::format_double(r.loss.l_y) + "," + io::format_double(r.loss.l_c) + "," +
           io::format_double(r.loss.l_g) + "," + io::format_double(r.loss.lambda_c) + "," +
           io::format_double(r.loss.lambda_g) + "," + io::format_double(r.loss.l_total) + "\n";
  }
  return out;
}

nlohmann::json run_summary(const TrainConfig& config, const TrainLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"mean_total", e.mean_total},
                      {"val_c_acc", e.val_c_acc}, {"val_a_acc", e.val_a_acc}});
  }
  nlohmann::json reclusters = nlohmann::json::array();
  for (const auto& r : log.reclusters) {
    reclusters.push_back({{"epoch", r.epoch}, {"step", r.step}, {"group_of", r.assignment.group_of}});
  }
  return {{"train", to_json(config)},
          {"steps", log.steps.size()},
          {"spectral_calls", log.spectral_calls},
          {"epochs", epochs},
          {"reclusters", reclusters},
          {"final_separation",
           {{"intra_mean", log.final_separation.intra_mean},
            {"inter_mean", log.final_separation.inter_mean},
            {"gap", log.final_separation.gap()}}}};
}

}  // namespace ldcbm
