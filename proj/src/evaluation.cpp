#include "ldcbm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "ldcbm/error.hpp"
#include "ldcbm/io_util.hpp"

namespace ldcbm {
namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint32_t name, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), name,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> permutation(std::mt19937_64& rng, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

void require_same_shape(const char* what, const ad::Tensor& a, const ad::Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + ad::shape_string(a.shape()) + " and " +
                     ad::shape_string(b.shape()) + " differ");
  }
}

std::size_t correct_count(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("class_accuracy: logits " + ad::shape_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) hits += argmax_row(logits, n) == labels[n] ? 1 : 0;
  return hits;
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double concept_accuracy(const ad::Tensor& probabilities, const ad::Tensor& targets) {
  require_same_shape("concept_accuracy", probabilities, targets);
  if (probabilities.empty()) throw ShapeError("concept_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double pred = probabilities[i] >= kConceptThreshold ? 1.0 : 0.0;
    hits += pred == targets[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(probabilities.size());
}

std::size_t argmax_row(const ad::Tensor& logits, std::size_t row) {
  const std::size_t y = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < y; ++c) {
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  }
  return best;
}

double class_accuracy(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  if (labels.empty()) throw ShapeError("class_accuracy: empty input");
  return static_cast<double>(correct_count(logits, labels)) / static_cast<double>(labels.size());
}

MetricsReport metrics_report(const ad::Tensor& probabilities, const ad::Tensor& logits,
                             const ad::Tensor& targets, std::span<const std::size_t> labels) {
  require_same_shape("metrics_report", probabilities, targets);
  MetricsReport r;
  r.samples = labels.size();
  r.c_acc = concept_accuracy(probabilities, targets);
  r.a_acc = class_accuracy(logits, labels);
  const std::size_t n = probabilities.dim(0), m = probabilities.dim(1);
  r.per_concept.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t hits = 0;
    for (std::size_t s = 0; s < n; ++s) {
      const double pred = probabilities.at(s, i) >= kConceptThreshold ? 1.0 : 0.0;
      hits += pred == targets.at(s, i) ? 1 : 0;
    }
    r.per_concept[i] = static_cast<double>(hits) / static_cast<double>(n);
  }
  const std::size_t y = logits.dim(1);
  r.confusion.assign(y, std::vector<std::size_t>(y, 0));
  for (std::size_t s = 0; s < n; ++s) ++r.confusion.at(labels[s]).at(argmax_row(logits, s));
  return r;
}

MetricsReport evaluate(const Model& model, const DatasetBundle& data, const Split& split) {
  model.data.check_compatible(data.spec);
  const Predictions pred = predict_split(model, data, split);
  std::vector<std::size_t> all(split.count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return metrics_report(pred.concept_probs, pred.class_logits, concept_batch(data.spec, split, all),
                        label_batch(split, all));
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"c_acc", r.c_acc}, {"a_acc", r.a_acc}, {"samples", r.samples},
          {"per_concept_accuracy", r.per_concept}, {"confusion", r.confusion}};
}

std::string to_string(InterventionMode mode) {
  return mode == InterventionMode::kCorrect ? "correct" : "incorrect";
}

InterventionMode parse_mode(const std::string& text) {
  if (text == "correct") return InterventionMode::kCorrect;
  if (text == "incorrect") return InterventionMode::kIncorrect;
  throw ConfigError("unknown intervention mode \"" + text + "\" (expected correct or incorrect)");
}

std::string to_string(InterventionUnit unit) {
  return unit == InterventionUnit::kConcept ? "concept" : "group";
}

InterventionUnit parse_unit(const std::string& text) {
  if (text == "concept") return InterventionUnit::kConcept;
  if (text == "group") return InterventionUnit::kConceptGroup;
  throw ConfigError("unknown intervention unit \"" + text + "\" (expected concept or group)");
}

void InterventionPolicy::validate(std::size_t concepts) const {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError("intervention rate " + io::format_double(rate) + " is outside [0, 1]");
  }
  if (unit != InterventionUnit::kConceptGroup) return;
  std::vector<int> seen(concepts, 0);
  for (const auto& g : concept_groups) {
    if (g.empty()) throw ConfigError("concept groups must be non-empty");
    for (std::size_t c : g) {
      if (c >= concepts) throw ConfigError("concept group names concept " + std::to_string(c) + " of " + std::to_string(concepts));
      ++seen[c];
    }
  }
  for (std::size_t c = 0; c < concepts; ++c) {
    if (seen[c] != 1) throw ConfigError("concept groups are not a partition: concept " + std::to_string(c) + " appears " + std::to_string(seen[c]) + " times");
  }
}

ad::Tensor intervene(const ad::Tensor& probabilities, const ad::Tensor& truth,
                     const InterventionPolicy& policy) {
  require_same_shape("intervene", probabilities, truth);
  if (probabilities.rank() != 2) throw ShapeError("intervene: expected N x M concepts, got " + ad::shape_string(probabilities.shape()));
  const std::size_t n = probabilities.dim(0), m = probabilities.dim(1);
  policy.validate(m);

  std::vector<std::vector<std::size_t>> units;
  if (policy.unit == InterventionUnit::kConcept) {
    for (std::size_t i = 0; i < m; ++i) units.push_back({i});
  } else {
    units = policy.concept_groups;
  }
  const auto chosen = static_cast<std::size_t>(std::floor(policy.rate * static_cast<double>(units.size()) + 0.5));

  ad::Tensor out = probabilities;
  for (std::size_t s = 0; s < n; ++s) {
    auto rng = seeded(policy.seed, 7, s);
    const auto order = permutation(rng, units.size());
    for (std::size_t u = 0; u < chosen; ++u) {
      for (std::size_t c : units[order[u]]) {
        const double gt = truth.at(s, c);
        out.at(s, c) = policy.mode == InterventionMode::kCorrect ? gt : 1.0 - gt;
      }
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> part_concept_groups(const CanvasLayout& layout) {
  std::vector<std::vector<std::size_t>> groups(layout.part_boxes.size());
  for (std::size_t c = 0; c < layout.concept_part.size(); ++c) groups[layout.concept_part[c]].push_back(c);
  return groups;
}

void EvalOptions::validate() const {
  if (rates.empty()) throw ConfigError("eval.rates must not be empty");
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval.rates: " + io::format_double(r) + " is outside [0, 1]");
  }
  if (modes.empty()) throw ConfigError("eval.modes must not be empty");
  if (repetitions == 0) throw ConfigError("eval.repetitions must be >= 1");
  if (reference_batch < 2) throw ConfigError("eval.reference_batch must be >= 2");
}

std::vector<CurvePoint> intervention_curve(const Model& model, const DatasetBundle& data,
                                           const EvalOptions& options) {
  options.validate();
  model.data.check_compatible(data.spec);
  const Split& test = data.test;
  if (test.count == 0) throw ConfigError("intervention curve needs a non-empty test split");
  std::vector<std::size_t> all(test.count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const ad::Tensor probs = predict_split(model, data, test).concept_probs;
  const ad::Tensor truth = concept_batch(data.spec, test, all);
  const auto labels = label_batch(test, all);

  auto modes = options.modes;
  std::sort(modes.begin(), modes.end());
  modes.erase(std::unique(modes.begin(), modes.end()), modes.end());
  auto rates = options.rates;
  std::sort(rates.begin(), rates.end());

  std::vector<CurvePoint> curve;
  for (InterventionMode mode : modes) {
    for (double rate : rates) {
      std::size_t hits = 0;
      for (std::size_t rep = 0; rep < options.repetitions; ++rep) {
        InterventionPolicy policy;
        policy.mode = mode;
        policy.rate = rate;
        policy.unit = options.unit;
        if (options.unit == InterventionUnit::kConceptGroup) policy.concept_groups = part_concept_groups(data.layout);
        policy.seed = seeded(options.seed, 8, rep)();
        hits += correct_count(class_logits_for(model, intervene(probs, truth, policy)), labels);
      }
      // Summing counts keeps identical repetitions exactly equal to one of them.
      curve.push_back({mode, rate,
                       static_cast<double>(hits) / static_cast<double>(options.repetitions * test.count)});
    }
  }
  return curve;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "mode,rate,a_acc\n";
  for (const auto& p : curve) {
    out += to_string(p.mode) + "," + io::format_double(p.rate) + "," + io::format_double(p.a_acc) + "\n";
  }
  return out;
}

std::string curve_svg(const std::vector<CurvePoint>& curve) {
  constexpr double kW = 480, kH = 320, kPad = 48;
  auto px = [&](double rate) { return kPad + rate * (kW - 2 * kPad); };
  auto py = [&](double acc) { return kH - kPad - acc * (kH - 2 * kPad); };
  char buf[160];
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" viewBox=\"0 0 480 320\">\n";
  out += "<rect width=\"480\" height=\"320\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<path d=\"M%g %g V%g H%g\" fill=\"none\" stroke=\"black\"/>\n", kPad, kPad, kH - kPad, kW - kPad);
  out += buf;
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"10\" text-anchor=\"middle\">%.1f</text>\n", px(v), kH - kPad + 14, v);
    out += buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"10\" text-anchor=\"end\">%.1f</text>\n", kPad - 4, py(v) + 3, v);
    out += buf;
  }
  out += "<text x=\"240\" y=\"310\" font-size=\"12\" text-anchor=\"middle\">intervention rate</text>\n";
  out += "<text x=\"14\" y=\"160\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 160)\">A_acc</text>\n";
  for (InterventionMode mode : {InterventionMode::kCorrect, InterventionMode::kIncorrect}) {
    const char* colour = mode == InterventionMode::kCorrect ? "#1f77b4" : "#d62728";
    std::string points;
    for (const auto& p : curve) {
      if (p.mode != mode) continue;
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", points.empty() ? "" : " ", px(p.rate), py(p.a_acc));
      points += buf;
    }
    if (points.empty()) continue;
    out += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    const double ly = mode == InterventionMode::kCorrect ? 20 : 36;
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" fill=\"%s\">%s</text>\n", kW - 120, ly, colour, to_string(mode).c_str());
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

std::string export_cluster_embeddings(const Model& model, const DatasetBundle& data,
                                      std::size_t reference, std::uint64_t seed) {
  model.data.check_compatible(data.spec);
  model.assignment.validate();
  const Split& split = data.test;
  auto rng = seeded(seed, 9, 0);
  auto order = permutation(rng, split.count);
  order.resize(std::min(reference, order.size()));
  const ad::Tensor responses = predict(model, data, split, order).responses;

  std::string out = "filter_id,group_id";
  for (std::size_t b = 0; b < order.size(); ++b) out += ",r" + std::to_string(b);
  out += "\n";
  for (std::size_t f = 0; f < model.assignment.filters(); ++f) {
    out += std::to_string(f) + "," + std::to_string(model.assignment.group_of[f]);
    for (std::size_t b = 0; b < order.size(); ++b) out += "," + io::format_double(responses.at(b, f));
    out += "\n";
  }
  return out;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: lengths differ");
  if (x.size() < 2) return 0.0;
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ldcbm
