#include "brsda/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "brsda/errors.hpp"

namespace brsda {

namespace {

using json = nlohmann::json;

json default_config_json() {
  return json{
      {"dataset",
       {{"kind", "synthetic"},
        {"synthetic",
         {{"classes", 4},
          {"samples_per_class", 100},
          {"image_side", 16},
          {"noise_sigma", 0.30},
          {"signal_amplitude", 0.08},
          {"signal_modes", 5},
          {"seed", 1},
          {"split_ratios", {0.7, 0.15, 0.15}}}},
        {"blobs",
         {{"classes", 3},
          {"samples_per_class", 100},
          {"dim", 16},
          {"center_distance", 3.0},
          {"spread", 1.0},
          {"seed", 1},
          {"split_ratios", {0.7, 0.15, 0.15}}}},
        {"archive", {{"path", ""}}}}},
      {"backbone",
       {{"kind", "cnn_small"},
        {"feature_dim", 64},
        {"estimator_hidden", 0},
        {"backbone_hidden", 128}}},
      {"augmentation",
       {{"lambda", 0.5},
        {"u", 2},
        {"alpha_final", 0.5},
        {"alpha_ramp_fraction", 0.2},
        {"recon_input", "masked"}}},
      {"schedule",
       {{"epochs", 30},
        {"warmup_epochs", 5},
        {"base_lr", 0.001},
        {"batch_size", 32},
        {"weight_decay", 0.01},
        {"clip_norm", 5.0}}},
      {"seed", 1},
      {"output_dir", ""}};
}

// Hyperparameter presets per benchmark row: (lambda, U, alpha) plus the
// shared optimizer settings. Dataset archives are not bundled; presets
// leave dataset.archive.path for the caller to fill in.
json archive_preset(const std::string& backbone, double lambda, int u,
                    double alpha) {
  return json{{"dataset", {{"kind", "archive"}}},
              {"backbone", {{"kind", backbone}}},
              {"augmentation",
               {{"lambda", lambda}, {"u", u}, {"alpha_final", alpha}}}};
}

const std::map<std::string, json>& preset_table() {
  static const std::map<std::string, json> presets = {
      {"breastmnist-resnet18", archive_preset("resnet18", 0.6, 7, 0.5)},
      {"breastmnist-resnet50", archive_preset("resnet50", 0.6, 7, 0.5)},
      {"breastmnist-efficientnetb0",
       archive_preset("efficientnetb0", 0.6, 7, 0.5)},
      {"breastmnist-densenet121", archive_preset("densenet121", 0.6, 10, 0.5)},
      {"retinamnist-resnet18", archive_preset("resnet18", 0.6, 10, 0.5)},
      {"lung-resnet18", archive_preset("resnet18", 0.8, 10, 0.5)},
      {"btmri-resnet18", archive_preset("resnet18", 0.8, 10, 0.5)},
      {"catar-resnet18", archive_preset("resnet18", 0.9, 10, 0.5)},
      {"organmnist3d-resnet18", archive_preset("resnet18", 0.8, 10, 0.5)},
      {"nodulemnist3d-resnet18", archive_preset("resnet18", 0.9, 10, 0.5)},
      {"adrenalmnist3d-resnet18", archive_preset("resnet18", 0.9, 10, 0.5)},
      {"fracturemnist3d-resnet18", archive_preset("resnet18", 0.5, 10, 0.5)},
      {"vesselmnist3d-resnet18", archive_preset("resnet18", 0.8, 10, 0.5)},
      {"synapsemnist3d-resnet18", archive_preset("resnet18", 0.4, 10, 0.5)},
      // Desk-scale default: synthetic data on the shipped compact CNN.
      {"synthetic-desk", json{{"dataset", {{"kind", "synthetic"}}},
                              {"backbone", {{"kind", "cnn_small"}}}}},
  };
  return presets;
}

void merge_patch_strict(json& base, const json& patch, const std::string& path) {
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      throw ConfigError("unknown config field '" + here + "'");
    }
    if (value.is_object() && base[key].is_object()) {
      merge_patch_strict(base[key], value, here);
    } else {
      base[key] = value;
    }
  }
}

void apply_override(json& config, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects dotted.path=value, got '" + assignment +
                      "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string value_str = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(value_str);
  } catch (const json::exception&) {
    value = value_str;  // bare strings are taken literally
  }

  json* node = &config;
  std::stringstream ps(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ps, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("--set: empty path in '" + assignment + "'");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) {
      throw ConfigError("--set: unknown config field '" + path + "'");
    }
    node = &(*node)[parts[i]];
  }
  if (!node->contains(parts.back())) {
    throw ConfigError("--set: unknown config field '" + path + "'");
  }
  (*node)[parts.back()] = value;
}

template <typename T>
T field(const json& j, const std::string& section, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + section + "." + key + "': " + e.what());
  }
}

std::array<double, 3> ratios_field(const json& j, const std::string& section) {
  const auto v = field<std::vector<double>>(j, section, "split_ratios");
  if (v.size() != 3) {
    throw ConfigError("config field '" + section +
                      ".split_ratios' must have 3 entries");
  }
  return {v[0], v[1], v[2]};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  const json& ds = j.at("dataset");
  c.dataset.kind = field<std::string>(ds, "dataset", "kind");
  {
    const json& s = ds.at("synthetic");
    c.dataset.synthetic.classes = field<int>(s, "dataset.synthetic", "classes");
    c.dataset.synthetic.samples_per_class =
        field<int>(s, "dataset.synthetic", "samples_per_class");
    c.dataset.synthetic.image_side =
        field<int>(s, "dataset.synthetic", "image_side");
    c.dataset.synthetic.noise_sigma =
        field<double>(s, "dataset.synthetic", "noise_sigma");
    c.dataset.synthetic.signal_amplitude =
        field<double>(s, "dataset.synthetic", "signal_amplitude");
    c.dataset.synthetic.signal_modes =
        field<int>(s, "dataset.synthetic", "signal_modes");
    c.dataset.synthetic.seed =
        field<std::uint64_t>(s, "dataset.synthetic", "seed");
    c.dataset.synthetic.split_ratios = ratios_field(s, "dataset.synthetic");
  }
  {
    const json& b = ds.at("blobs");
    c.dataset.blobs.classes = field<int>(b, "dataset.blobs", "classes");
    c.dataset.blobs.samples_per_class =
        field<int>(b, "dataset.blobs", "samples_per_class");
    c.dataset.blobs.dim = field<int>(b, "dataset.blobs", "dim");
    c.dataset.blobs.center_distance =
        field<double>(b, "dataset.blobs", "center_distance");
    c.dataset.blobs.spread = field<double>(b, "dataset.blobs", "spread");
    c.dataset.blobs.seed = field<std::uint64_t>(b, "dataset.blobs", "seed");
    c.dataset.blobs.split_ratios = ratios_field(b, "dataset.blobs");
  }
  c.dataset.archive_path =
      field<std::string>(ds.at("archive"), "dataset.archive", "path");

  const json& bb = j.at("backbone");
  c.backbone.kind = field<std::string>(bb, "backbone", "kind");
  c.backbone.feature_dim = field<int>(bb, "backbone", "feature_dim");
  c.backbone.estimator_hidden = field<int>(bb, "backbone", "estimator_hidden");
  c.backbone.backbone_hidden = field<int>(bb, "backbone", "backbone_hidden");

  const json& aug = j.at("augmentation");
  c.augmentation.lambda = field<double>(aug, "augmentation", "lambda");
  c.augmentation.u = field<int>(aug, "augmentation", "u");
  c.augmentation.alpha_final = field<double>(aug, "augmentation", "alpha_final");
  c.augmentation.alpha_ramp_fraction =
      field<double>(aug, "augmentation", "alpha_ramp_fraction");
  c.augmentation.recon_input =
      field<std::string>(aug, "augmentation", "recon_input");

  const json& sch = j.at("schedule");
  c.schedule.total_epochs = field<int>(sch, "schedule", "epochs");
  c.schedule.warmup_epochs = field<int>(sch, "schedule", "warmup_epochs");
  c.schedule.base_lr = field<double>(sch, "schedule", "base_lr");
  c.schedule.batch_size = field<int>(sch, "schedule", "batch_size");
  c.schedule.weight_decay = field<double>(sch, "schedule", "weight_decay");
  c.schedule.clip_norm = field<double>(sch, "schedule", "clip_norm");

  c.seed = field<std::uint64_t>(j, "", "seed");
  c.output_dir = field<std::string>(j, "", "output_dir");
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j = default_config_json();
  j["dataset"]["kind"] = c.dataset.kind;
  auto& s = j["dataset"]["synthetic"];
  s["classes"] = c.dataset.synthetic.classes;
  s["samples_per_class"] = c.dataset.synthetic.samples_per_class;
  s["image_side"] = c.dataset.synthetic.image_side;
  s["noise_sigma"] = c.dataset.synthetic.noise_sigma;
  s["signal_amplitude"] = c.dataset.synthetic.signal_amplitude;
  s["signal_modes"] = c.dataset.synthetic.signal_modes;
  s["seed"] = c.dataset.synthetic.seed;
  s["split_ratios"] = c.dataset.synthetic.split_ratios;
  auto& b = j["dataset"]["blobs"];
  b["classes"] = c.dataset.blobs.classes;
  b["samples_per_class"] = c.dataset.blobs.samples_per_class;
  b["dim"] = c.dataset.blobs.dim;
  b["center_distance"] = c.dataset.blobs.center_distance;
  b["spread"] = c.dataset.blobs.spread;
  b["seed"] = c.dataset.blobs.seed;
  b["split_ratios"] = c.dataset.blobs.split_ratios;
  j["dataset"]["archive"]["path"] = c.dataset.archive_path;
  j["backbone"]["kind"] = c.backbone.kind;
  j["backbone"]["feature_dim"] = c.backbone.feature_dim;
  j["backbone"]["estimator_hidden"] = c.backbone.estimator_hidden;
  j["backbone"]["backbone_hidden"] = c.backbone.backbone_hidden;
  j["augmentation"]["lambda"] = c.augmentation.lambda;
  j["augmentation"]["u"] = c.augmentation.u;
  j["augmentation"]["alpha_final"] = c.augmentation.alpha_final;
  j["augmentation"]["alpha_ramp_fraction"] = c.augmentation.alpha_ramp_fraction;
  j["augmentation"]["recon_input"] = c.augmentation.recon_input;
  j["schedule"]["epochs"] = c.schedule.total_epochs;
  j["schedule"]["warmup_epochs"] = c.schedule.warmup_epochs;
  j["schedule"]["base_lr"] = c.schedule.base_lr;
  j["schedule"]["batch_size"] = c.schedule.batch_size;
  j["schedule"]["weight_decay"] = c.schedule.weight_decay;
  j["schedule"]["clip_norm"] = c.schedule.clip_norm;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("invalid config: " + field + " " + why);
  };
  if (dataset.kind != "synthetic" && dataset.kind != "blobs" &&
      dataset.kind != "archive") {
    fail("dataset.kind", "must be synthetic, blobs or archive");
  }
  if (dataset.kind == "archive" && dataset.archive_path.empty()) {
    fail("dataset.archive.path", "is required for archive datasets");
  }
  if (backbone.feature_dim < 1) fail("backbone.feature_dim", "must be >= 1");
  if (!(augmentation.lambda >= 0.0 && augmentation.lambda <= 1.0)) {
    fail("augmentation.lambda", "must be in [0,1]");
  }
  if (augmentation.u < 0) fail("augmentation.u", "must be >= 0");
  if (!(augmentation.alpha_final >= 0.0 && augmentation.alpha_final <= 1.0)) {
    fail("augmentation.alpha_final", "must be in [0,1]");
  }
  if (!(augmentation.alpha_ramp_fraction > 0.0 &&
        augmentation.alpha_ramp_fraction <= 1.0)) {
    fail("augmentation.alpha_ramp_fraction", "must be in (0,1]");
  }
  if (augmentation.recon_input != "masked" && augmentation.recon_input != "raw") {
    fail("augmentation.recon_input", "must be masked or raw");
  }
  if (schedule.total_epochs < 1) fail("schedule.epochs", "must be >= 1");
  if (schedule.warmup_epochs < 0 ||
      schedule.warmup_epochs >= schedule.total_epochs) {
    fail("schedule.warmup_epochs", "must be in [0, epochs)");
  }
  if (!(schedule.base_lr > 0.0)) fail("schedule.base_lr", "must be > 0");
  if (schedule.batch_size < 1) fail("schedule.batch_size", "must be >= 1");
  if (schedule.weight_decay < 0.0) fail("schedule.weight_decay", "must be >= 0");
  if (schedule.clip_norm < 0.0) fail("schedule.clip_norm", "must be >= 0");
}

ExperimentConfig resolve_config(const ConfigSource& source) {
  json j = default_config_json();
  if (!source.preset.empty()) {
    const auto& table = preset_table();
    const auto it = table.find(source.preset);
    if (it == table.end()) {
      std::string names;
      for (const auto& [name, _] : table) names += "\n  " + name;
      throw ConfigError("unknown preset '" + source.preset + "'; available:" +
                        names);
    }
    merge_patch_strict(j, it->second, "");
  }
  if (!source.file_path.empty()) {
    std::ifstream f(source.file_path);
    if (!f) throw ConfigError("cannot open config file '" + source.file_path + "'");
    json filed;
    try {
      filed = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config file '" + source.file_path +
                        "': " + std::string(e.what()));
    }
    merge_patch_strict(j, filed, "");
  }
  for (const std::string& assignment : source.overrides) {
    apply_override(j, assignment);
  }
  ExperimentConfig c = config_from_json(j);
  c.validate();
  return c;
}

std::string config_to_json_string(const ExperimentConfig& config, int indent) {
  return config_to_json(config).dump(indent);
}

std::string config_digest(const ExperimentConfig& config) {
  // output_dir is where results land, not what the experiment is; it is
  // excluded so relocated reruns keep their identity.
  json j = config_to_json(config);
  j.erase("output_dir");
  const std::uint64_t h = fnv1a64(j.dump());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : preset_table()) names.push_back(name);
  return names;
}

DatasetBundle build_dataset(const DatasetConfig& config) {
  if (config.kind == "synthetic") return generate_synthetic(config.synthetic);
  if (config.kind == "blobs") return generate_blobs(config.blobs);
  if (config.kind == "archive") return load_archive(config.archive_path);
  throw ConfigError("dataset.kind '" + config.kind + "' is not supported");
}

}  // namespace brsda
