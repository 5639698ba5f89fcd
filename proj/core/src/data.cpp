#include "brsda/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "brsda/errors.hpp"
#include "brsda/npz.hpp"
#include "brsda/rng.hpp"

namespace brsda {

namespace {

// Largest-remainder apportionment of n into the given ratios; counts sum
// to n and each differs from the exact share by less than 1.
std::array<int, 3> stratify_counts(int n, const std::array<double, 3>& ratios) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (!(total > 0.0)) throw ConfigError("split_ratios must sum to a positive value");
  std::array<double, 3> exact{};
  std::array<int, 3> counts{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    exact[i] = n * ratios[i] / total;
    counts[i] = static_cast<int>(std::floor(exact[i]));
    assigned += counts[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ra = exact[a] - std::floor(exact[a]);
    const double rb = exact[b] - std::floor(exact[b]);
    if (ra != rb) return ra > rb;
    return a < b;
  });
  for (int i = 0; assigned < n; ++i) {
    counts[order[static_cast<std::size_t>(i % 3)]]++;
    ++assigned;
  }
  return counts;
}

void validate_dataset(const LabeledDataset& ds, int classes,
                      const std::string& name) {
  if (ds.size() == 0) throw DataError(name + ": empty split");
  if (ds.images.dim(0) != ds.size()) {
    throw DataError(name + ": image/label count mismatch");
  }
  if (!ds.images.all_finite()) throw DataError(name + ": NaN pixels");
  for (int label : ds.labels) {
    if (label < 0 || label >= classes) {
      throw DataError(name + ": label " + std::to_string(label) +
                      " out of range [0," + std::to_string(classes) + ")");
    }
  }
}

// Low-frequency cosine modes, lowest spatial frequencies first.
std::vector<std::pair<int, int>> pattern_modes(int count) {
  static const std::vector<std::pair<int, int>> kOrder = {
      {0, 1}, {1, 0}, {1, 1}, {0, 2}, {2, 0}, {1, 2}, {2, 1}, {2, 2}};
  if (count < 1 || count > static_cast<int>(kOrder.size())) {
    throw ConfigError("signal_modes must be in [1," +
                      std::to_string(kOrder.size()) + "]");
  }
  return {kOrder.begin(), kOrder.begin() + count};
}

struct SplitBuilder {
  std::vector<double> pixels;
  std::vector<int> labels;
};

}  // namespace

DatasetBundle generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic: classes must be >= 2");
  if (spec.samples_per_class < 1) {
    throw ConfigError("synthetic: samples_per_class must be >= 1");
  }
  if (spec.image_side < 4) throw ConfigError("synthetic: image_side must be >= 4");
  if (spec.noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");

  const int side = spec.image_side;
  const std::size_t pixels_per_image = static_cast<std::size_t>(side) * side;
  const auto modes = pattern_modes(spec.signal_modes);

  // Per-class pattern: random mix of low-frequency cosines, normalized to
  // unit per-pixel RMS so signal_amplitude is the pattern's pixel std.
  std::vector<std::vector<double>> patterns(spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    RngStream rng(derive_seed(spec.seed, streams::kSynthetic,
                              0x1000 + static_cast<std::uint64_t>(c)));
    std::vector<double> weights(modes.size());
    for (double& w : weights) w = rng.normal();
    std::vector<double> img(pixels_per_image, 0.0);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        double v = 0.0;
        for (std::size_t m = 0; m < modes.size(); ++m) {
          const double cy = std::cos(M_PI * modes[m].first * (y + 0.5) / side);
          const double cx = std::cos(M_PI * modes[m].second * (x + 0.5) / side);
          v += weights[m] * cy * cx;
        }
        img[static_cast<std::size_t>(y) * side + x] = v;
      }
    }
    double rms = 0.0;
    for (double v : img) rms += v * v;
    rms = std::sqrt(rms / static_cast<double>(pixels_per_image));
    if (rms == 0.0) rms = 1.0;
    for (double& v : img) v = v / rms * spec.signal_amplitude;
    patterns[c] = std::move(img);
  }

  const auto counts = stratify_counts(spec.samples_per_class, spec.split_ratios);
  SplitBuilder builders[3];

  for (int c = 0; c < spec.classes; ++c) {
    RngStream noise_rng(derive_seed(spec.seed, streams::kSynthetic,
                                    0x2000 + static_cast<std::uint64_t>(c)));
    int emitted = 0;
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < counts[s]; ++i, ++emitted) {
        SplitBuilder& b = builders[s];
        for (std::size_t p = 0; p < pixels_per_image; ++p) {
          double v = 0.5 + patterns[c][p];
          if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise_rng.normal();
          b.pixels.push_back(std::min(1.0, std::max(0.0, v)));
        }
        b.labels.push_back(c);
      }
    }
  }

  DatasetBundle bundle;
  bundle.classes = spec.classes;
  const char* names[3] = {"train", "val", "test"};
  LabeledDataset* splits[3] = {&bundle.train, &bundle.val, &bundle.test};
  for (int s = 0; s < 3; ++s) {
    const std::size_t n = builders[s].labels.size();
    splits[s]->images =
        Tensor({n, static_cast<std::size_t>(side), static_cast<std::size_t>(side), 1},
               std::move(builders[s].pixels));
    splits[s]->labels = std::move(builders[s].labels);
    splits[s]->split_name = names[s];
    validate_dataset(*splits[s], bundle.classes, names[s]);
  }
  return bundle;
}

DatasetBundle generate_blobs(const BlobsSpec& spec) {
  if (spec.classes < 2) throw ConfigError("blobs: classes must be >= 2");
  if (spec.samples_per_class < 1 || spec.dim < 1) {
    throw ConfigError("blobs: samples_per_class and dim must be >= 1");
  }

  // Class centers: random unit directions scaled by center_distance.
  std::vector<std::vector<double>> centers(spec.classes);
  for (int c = 0; c < spec.classes; ++c) {
    RngStream rng(derive_seed(spec.seed, streams::kSynthetic,
                              0x3000 + static_cast<std::uint64_t>(c)));
    std::vector<double> dir(spec.dim);
    double norm = 0.0;
    for (double& v : dir) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) norm = 1.0;
    for (double& v : dir) v = v / norm * spec.center_distance;
    centers[c] = std::move(dir);
  }

  const auto counts = stratify_counts(spec.samples_per_class, spec.split_ratios);
  SplitBuilder builders[3];
  for (int c = 0; c < spec.classes; ++c) {
    RngStream rng(derive_seed(spec.seed, streams::kSynthetic,
                              0x4000 + static_cast<std::uint64_t>(c)));
    for (int s = 0; s < 3; ++s) {
      for (int i = 0; i < counts[s]; ++i) {
        for (int d = 0; d < spec.dim; ++d) {
          // Squash into [0,1] to honor the dataset value range.
          const double raw = centers[c][d] + spec.spread * rng.normal();
          builders[s].pixels.push_back(1.0 / (1.0 + std::exp(-raw)));
        }
        builders[s].labels.push_back(c);
      }
    }
  }

  DatasetBundle bundle;
  bundle.classes = spec.classes;
  const char* names[3] = {"train", "val", "test"};
  LabeledDataset* splits[3] = {&bundle.train, &bundle.val, &bundle.test};
  for (int s = 0; s < 3; ++s) {
    const std::size_t n = builders[s].labels.size();
    splits[s]->images = Tensor({n, static_cast<std::size_t>(spec.dim)},
                               std::move(builders[s].pixels));
    splits[s]->labels = std::move(builders[s].labels);
    splits[s]->split_name = names[s];
    validate_dataset(*splits[s], bundle.classes, names[s]);
  }
  return bundle;
}

namespace {

LabeledDataset ingest_split(const std::string& prefix, const npz::Array& images,
                            const npz::Array& labels,
                            std::vector<std::string>& notes) {
  // ---- labels: shape N or N x 1, integral values
  std::vector<int> out_labels;
  if (labels.shape.size() == 2 && labels.shape[1] == 1) {
    // N x 1 accepted alongside N
  } else if (labels.shape.size() != 1) {
    throw DataError(prefix + "_labels: expected shape N or Nx1");
  }
  out_labels.reserve(labels.values.size());
  for (double v : labels.values) {
    if (!std::isfinite(v) || v != std::floor(v)) {
      throw DataError(prefix + "_labels: non-integral label value");
    }
    out_labels.push_back(static_cast<int>(v));
  }

  // ---- images: rank 2..5; rank 3 is coerced to channel-1
  std::vector<std::size_t> shape = images.shape;
  if (shape.size() < 2 || shape.size() > 5) {
    throw DataError(prefix + "_images: unsupported rank " +
                    std::to_string(shape.size()));
  }
  if (shape.size() == 3) {
    shape.push_back(1);
    notes.push_back(prefix + "_images: rank-3 array coerced to N,H,W,1");
  }
  if (shape[0] != out_labels.size()) {
    throw DataError(prefix + "_images: sample count " + std::to_string(shape[0]) +
                    " does not match " + prefix + "_labels size " +
                    std::to_string(out_labels.size()));
  }

  std::vector<double> values = images.values;
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError(prefix + "_images: NaN/Inf pixel");
  }
  const std::string& dt = images.source_dtype;
  if (dt == "|u1" || dt == "|b1") {
    for (double& v : values) v /= 255.0;
    notes.push_back(prefix + "_images: uint8 rescaled by 1/255");
  } else if (dt == "<u2") {
    for (double& v : values) v /= 65535.0;
    notes.push_back(prefix + "_images: uint16 rescaled by 1/65535");
  } else {
    double lo = values.empty() ? 0.0 : values[0], hi = lo;
    for (double v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (lo < 0.0 || hi > 1.0) {
      if (hi == lo) {
        throw DataError(prefix + "_images: constant array outside [0,1]");
      }
      for (double& v : values) v = (v - lo) / (hi - lo);
      notes.push_back(prefix + "_images: values min-max rescaled from [" +
                      std::to_string(lo) + "," + std::to_string(hi) +
                      "] to [0,1]");
    }
  }

  LabeledDataset ds;
  ds.images = Tensor(shape, std::move(values));
  ds.labels = std::move(out_labels);
  ds.split_name = prefix;
  return ds;
}

}  // namespace

DatasetBundle load_archive(const std::string& path, const ArchiveLayout& layout,
                           int expected_classes) {
  const npz::Contents contents = npz::load(path);

  DatasetBundle bundle;
  LabeledDataset* splits[3] = {&bundle.train, &bundle.val, &bundle.test};
  for (int s = 0; s < 3; ++s) {
    const std::string& prefix = layout.split_prefixes[s];
    for (const char* suffix : {"_images", "_labels"}) {
      const std::string key = prefix + suffix;
      if (contents.arrays.find(key) == contents.arrays.end()) {
        throw DataError("archive '" + path + "' missing required array '" +
                        key + "'");
      }
    }
    *splits[s] = ingest_split(prefix, contents.arrays.at(prefix + "_images"),
                              contents.arrays.at(prefix + "_labels"),
                              bundle.notes);
  }

  int max_label = 0;
  for (auto* split : splits) {
    for (int label : split->labels) {
      if (label < 0) throw DataError(split->split_name + "_labels: negative label");
      max_label = std::max(max_label, label);
    }
  }
  bundle.classes = expected_classes >= 0 ? expected_classes : max_label + 1;
  if (bundle.classes < 2) {
    throw DataError("archive '" + path + "': fewer than 2 classes present");
  }
  for (auto* split : splits) {
    validate_dataset(*split, bundle.classes, split->split_name);
  }
  return bundle;
}

void save_archive(const DatasetBundle& bundle, const std::string& path,
                  const ArchiveLayout& layout) {
  const LabeledDataset* splits[3] = {&bundle.train, &bundle.val, &bundle.test};
  std::vector<std::pair<std::string, npz::Array>> arrays;
  for (int s = 0; s < 3; ++s) {
    const std::string& prefix = layout.split_prefixes[s];
    arrays.emplace_back(prefix + "_images",
                        npz::from_tensor(splits[s]->images, "<f8"));
    npz::Array labels;
    labels.shape = {splits[s]->labels.size()};
    labels.source_dtype = "<i8";
    labels.values.assign(splits[s]->labels.begin(), splits[s]->labels.end());
    arrays.emplace_back(prefix + "_labels", std::move(labels));
  }
  npz::save(path, arrays);
}

}  // namespace brsda
