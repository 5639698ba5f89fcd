#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "brsda/tensor.hpp"

namespace brsda {

// Immutable after construction; safe for shared read access.
// images: {N,H,W,C} for 2D data, {N,D,H,W,C} for volumes, {N,D} for vectors.
// Pixel values live in [0,1].
struct LabeledDataset {
  Tensor images;
  std::vector<int> labels;
  std::string split_name;

  std::size_t size() const { return labels.size(); }
};

struct DatasetBundle {
  LabeledDataset train, val, test;
  int classes = 0;
  std::vector<std::string> notes;  // ingestion coercions, logged
};

// Class-dependent low-frequency image patterns plus Gaussian pixel noise.
// Same spec -> byte-identical datasets.
struct SyntheticSpec {
  int classes = 4;
  int samples_per_class = 100;
  int image_side = 16;
  double noise_sigma = 0.30;
  // class_signal: per-class pattern parameters.
  double signal_amplitude = 0.08;  // per-pixel RMS of the class pattern
  int signal_modes = 5;            // low-frequency cosine modes per pattern
  std::uint64_t seed = 1;
  std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
};

DatasetBundle generate_synthetic(const SyntheticSpec& spec);

// Gaussian class blobs in R^dim; vector-data counterpart of the image
// generator, used with the MLP backbone.
struct BlobsSpec {
  int classes = 3;
  int samples_per_class = 100;
  int dim = 16;
  double center_distance = 3.0;
  double spread = 1.0;
  std::uint64_t seed = 1;
  std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
};

DatasetBundle generate_blobs(const BlobsSpec& spec);

// Archive layout: named arrays <prefix>_images / <prefix>_labels for the
// three splits, MedMNIST-style.
struct ArchiveLayout {
  std::array<std::string, 3> split_prefixes{"train", "val", "test"};
};

// Loads and validates a named-array archive. Accepted image ranks: 2
// (vectors), 3 (N,H,W; coerced to channel-1 and logged), 4 (N,H,W,C) and 5
// (N,D,H,W,C). Labels of shape N or N x 1. uint8 images are rescaled by
// 1/255; float images outside [0,1] are min-max rescaled with a logged
// note. expected_classes < 0 infers the class count from the labels.
DatasetBundle load_archive(const std::string& path,
                           const ArchiveLayout& layout = {},
                           int expected_classes = -1);

// Writes the bundle in the same layout (f8 images, i8 labels), so that
// load_archive(save_archive(b)) round-trips exactly.
void save_archive(const DatasetBundle& bundle, const std::string& path,
                  const ArchiveLayout& layout = {});

}  // namespace brsda
