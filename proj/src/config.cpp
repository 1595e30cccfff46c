#include "ldcbm/config.hpp"

#include <set>
#include <string>
#include <type_traits>

#include "ldcbm/error.hpp"
#include "ldcbm/io_util.hpp"

namespace ldcbm {
namespace {

using nlohmann::json;

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      }
      out = it->get<T>();
    } catch (const std::exception&) {
      throw ConfigError(name_ + "." + key + ": invalid value " + it->dump());
    }
  }

  [[nodiscard]] const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  [[nodiscard]] std::string path(const char* key) const { return name_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(name_ + ": unknown key \"" + key + "\"");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

const char* policy_name(ConceptGroupPolicy::Kind kind) {
  switch (kind) {
    case ConceptGroupPolicy::Kind::kPart: return "part";
    case ConceptGroupPolicy::Kind::kModulo: return "modulo";
    case ConceptGroupPolicy::Kind::kExplicit: return "explicit";
  }
  return "part";
}

}  // namespace

json to_json(const DatasetSpec& s) {
  return {{"image_height", s.image_height}, {"image_width", s.image_width},
          {"image_channels", s.image_channels}, {"parts", s.parts},
          {"concepts", s.concepts}, {"classes", s.classes},
          {"train_samples", s.train_samples}, {"val_samples", s.val_samples},
          {"test_samples", s.test_samples}, {"noise", s.noise}, {"seed", s.seed}};
}

json to_json(const BackboneConfig& c) {
  json stages = json::array();
  for (const auto& st : c.stages) {
    stages.push_back({{"filters", st.filters}, {"kernel", st.kernel}, {"stride", st.stride}});
  }
  return {{"input_height", c.input_height}, {"input_width", c.input_width},
          {"input_channels", c.input_channels}, {"stages", stages},
          {"grouped_layer_index", c.grouped_layer_index}};
}

json to_json(const TrainConfig& c) {
  json policy = c.concept_groups.kind == ConceptGroupPolicy::Kind::kExplicit
                    ? json(c.concept_groups.table)
                    : json(policy_name(c.concept_groups.kind));
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"clip_grad_norm", c.clip_grad_norm},
          {"grouping_epsilon", c.grouping_epsilon},
          {"concept_substitution", c.concept_substitution},
          {"lambda_c", c.lambda_c}, {"lambda_g", c.lambda_g}, {"groups", c.groups},
          {"recluster_period", c.recluster_period}, {"warmup_epochs", c.warmup_epochs},
          {"reference_batch", c.reference_batch}, {"seed", c.seed}, {"grouping", c.grouping},
          {"checkpoint_every", c.checkpoint_every}, {"concept_to_group", policy}};
}

json to_json(const EvalOptions& o) {
  json modes = json::array();
  for (auto m : o.modes) modes.push_back(to_string(m));
  return {{"rates", o.rates}, {"modes", modes}, {"repetitions", o.repetitions},
          {"unit", to_string(o.unit)}, {"seed", o.seed}, {"reference_batch", o.reference_batch}};
}

json to_json(const RunConfig& c) {
  return {{"data", to_json(c.data)}, {"backbone", to_json(c.train.backbone)},
          {"train", to_json(c.train)}, {"eval", to_json(c.eval)}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  Section sec(j, "data");
  sec.read("image_height", s.image_height);
  sec.read("image_width", s.image_width);
  sec.read("image_channels", s.image_channels);
  sec.read("parts", s.parts);
  sec.read("concepts", s.concepts);
  sec.read("classes", s.classes);
  sec.read("train_samples", s.train_samples);
  sec.read("val_samples", s.val_samples);
  sec.read("test_samples", s.test_samples);
  sec.read("noise", s.noise);
  sec.read("seed", s.seed);
  sec.finish();
  return s;
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig c;
  Section sec(j, "backbone");
  sec.read("input_height", c.input_height);
  sec.read("input_width", c.input_width);
  sec.read("input_channels", c.input_channels);
  sec.read("grouped_layer_index", c.grouped_layer_index);
  if (const json* stages = sec.find("stages")) {
    if (!stages->is_array()) throw ConfigError("backbone.stages: expected an array");
    c.stages.clear();
    for (std::size_t i = 0; i < stages->size(); ++i) {
      ConvStage st;
      Section ss((*stages)[i], "backbone.stages[" + std::to_string(i) + "]");
      ss.read("filters", st.filters);
      ss.read("kernel", st.kernel);
      ss.read("stride", st.stride);
      ss.finish();
      c.stages.push_back(st);
    }
  }
  sec.finish();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Section sec(j, "train");
  sec.read("epochs", c.epochs);
  sec.read("batch_size", c.batch_size);
  sec.read("learning_rate", c.learning_rate);
  sec.read("momentum", c.momentum);
  sec.read("clip_grad_norm", c.clip_grad_norm);
  sec.read("grouping_epsilon", c.grouping_epsilon);
  sec.read("concept_substitution", c.concept_substitution);
  sec.read("lambda_c", c.lambda_c);
  sec.read("lambda_g", c.lambda_g);
  sec.read("groups", c.groups);
  sec.read("recluster_period", c.recluster_period);
  sec.read("warmup_epochs", c.warmup_epochs);
  sec.read("reference_batch", c.reference_batch);
  sec.read("seed", c.seed);
  sec.read("grouping", c.grouping);
  sec.read("checkpoint_every", c.checkpoint_every);
  if (const json* p = sec.find("concept_to_group")) {
    if (p->is_string()) {
      const auto name = p->get<std::string>();
      if (name == "part") {
        c.concept_groups.kind = ConceptGroupPolicy::Kind::kPart;
      } else if (name == "modulo") {
        c.concept_groups.kind = ConceptGroupPolicy::Kind::kModulo;
      } else {
        throw ConfigError(sec.path("concept_to_group") + ": expected \"part\", \"modulo\" or a list, got \"" + name + "\"");
      }
    } else if (p->is_array()) {
      c.concept_groups.kind = ConceptGroupPolicy::Kind::kExplicit;
      for (const auto& v : *p) {
        if (!v.is_number_unsigned()) throw ConfigError(sec.path("concept_to_group") + ": group ids must be non-negative integers");
        c.concept_groups.table.push_back(v.get<std::size_t>());
      }
    } else {
      throw ConfigError(sec.path("concept_to_group") + ": invalid value " + p->dump());
    }
  }
  sec.finish();
  return c;
}

EvalOptions eval_options_from_json(const json& j) {
  EvalOptions o;
  Section sec(j, "eval");
  sec.read("rates", o.rates);
  sec.read("repetitions", o.repetitions);
  sec.read("seed", o.seed);
  sec.read("reference_batch", o.reference_batch);
  if (const json* modes = sec.find("modes")) {
    if (!modes->is_array()) throw ConfigError("eval.modes: expected an array");
    o.modes.clear();
    for (const auto& m : *modes) {
      if (!m.is_string()) throw ConfigError("eval.modes: expected strings");
      o.modes.push_back(parse_mode(m.get<std::string>()));
    }
  }
  if (const json* unit = sec.find("unit")) {
    if (!unit->is_string()) throw ConfigError("eval.unit: expected a string");
    o.unit = parse_unit(unit->get<std::string>());
  }
  sec.finish();
  return o;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section sec(j, "config");
  if (const json* d = sec.find("data")) c.data = dataset_spec_from_json(*d);
  if (const json* t = sec.find("train")) c.train = train_config_from_json(*t);
  if (const json* b = sec.find("backbone")) c.train.backbone = backbone_from_json(*b);
  if (const json* e = sec.find("eval")) c.eval = eval_options_from_json(*e);
  sec.finish();
  c.data.validate();
  c.train.validate();
  c.eval.validate();
  if (c.train.backbone.input_height != c.data.image_height ||
      c.train.backbone.input_width != c.data.image_width ||
      c.train.backbone.input_channels != c.data.image_channels) {
    throw ConfigError("backbone input " + std::to_string(c.train.backbone.input_height) + "x" +
                      std::to_string(c.train.backbone.input_width) + "x" +
                      std::to_string(c.train.backbone.input_channels) +
                      " does not match data image size " + std::to_string(c.data.image_height) +
                      "x" + std::to_string(c.data.image_width) + "x" +
                      std::to_string(c.data.image_channels));
  }
  return c;
}

namespace {
json parse_file(const std::filesystem::path& path) {
  const std::string text = io::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
}
}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  if (path.empty()) return run_config_from_json(json::object());
  return run_config_from_json(parse_file(path));
}

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
  if (path.empty()) return DatasetSpec{};
  const json j = parse_file(path);
  DatasetSpec spec = j.is_object() && j.contains("data") ? run_config_from_json(j).data
                                                        : dataset_spec_from_json(j);
  spec.validate();
  return spec;
}

}  // namespace ldcbm
