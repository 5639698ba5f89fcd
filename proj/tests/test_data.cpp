#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <vector>

#include "brsda/data.hpp"
#include "brsda/errors.hpp"
#include "brsda/npz.hpp"

using namespace brsda;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "brsda_tests";
  fs::create_directories(dir);
  return dir / name;
}

// Closed-form multiclass ridge regression on raw pixels: the independent
// difficulty oracle used to pin the synthetic generator's defaults.
struct RidgeOracle {
  std::vector<std::vector<double>> weights;  // (d+1) x c

  static RidgeOracle fit(const LabeledDataset& ds, int classes, double reg) {
    const std::size_t n = ds.size();
    const std::size_t d = ds.images.size() / n;
    const std::size_t dim = d + 1;  // bias column
    std::vector<std::vector<double>> gram(dim, std::vector<double>(dim, 0.0));
    std::vector<std::vector<double>> xty(dim, std::vector<double>(classes, 0.0));
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) row[j] = ds.images[i * d + j];
      row[d] = 1.0;
      for (std::size_t a = 0; a < dim; ++a) {
        for (std::size_t b = a; b < dim; ++b) gram[a][b] += row[a] * row[b];
        xty[a][static_cast<std::size_t>(ds.labels[i])] += row[a];
      }
    }
    for (std::size_t a = 0; a < dim; ++a) {
      gram[a][a] += reg;
      for (std::size_t b = 0; b < a; ++b) gram[a][b] = gram[b][a];
    }
    // Gaussian elimination with partial pivoting on [gram | xty].
    for (std::size_t col = 0; col < dim; ++col) {
      std::size_t pivot = col;
      for (std::size_t r = col + 1; r < dim; ++r) {
        if (std::abs(gram[r][col]) > std::abs(gram[pivot][col])) pivot = r;
      }
      std::swap(gram[col], gram[pivot]);
      std::swap(xty[col], xty[pivot]);
      const double diag = gram[col][col];
      for (std::size_t r = 0; r < dim; ++r) {
        if (r == col || gram[r][col] == 0.0) continue;
        const double f = gram[r][col] / diag;
        for (std::size_t c2 = col; c2 < dim; ++c2) gram[r][c2] -= f * gram[col][c2];
        for (int c2 = 0; c2 < classes; ++c2) {
          xty[r][static_cast<std::size_t>(c2)] -=
              f * xty[col][static_cast<std::size_t>(c2)];
        }
      }
    }
    RidgeOracle out;
    out.weights.assign(dim, std::vector<double>(classes));
    for (std::size_t a = 0; a < dim; ++a) {
      for (int c = 0; c < classes; ++c) {
        out.weights[a][static_cast<std::size_t>(c)] =
            xty[a][static_cast<std::size_t>(c)] / gram[a][a];
      }
    }
    return out;
  }

  double accuracy(const LabeledDataset& ds) const {
    const std::size_t n = ds.size();
    const std::size_t d = weights.size() - 1;
    const std::size_t classes = weights[0].size();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_score = -1e300;
      for (std::size_t c = 0; c < classes; ++c) {
        double s = weights[d][c];
        for (std::size_t j = 0; j < d; ++j) s += ds.images[i * d + j] * weights[j][c];
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      if (static_cast<int>(best) == ds.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
  }
};

}  // namespace

TEST_CASE("stratified split arithmetic is exact") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.samples_per_class = 100;
  spec.split_ratios = {0.70, 0.15, 0.15};
  spec.image_side = 8;
  const DatasetBundle b = generate_synthetic(spec);
  CHECK(b.train.size() == 210);
  CHECK(b.val.size() == 45);
  CHECK(b.test.size() == 45);
  // Exact per-class stratification.
  for (int c = 0; c < 3; ++c) {
    auto count = [&](const LabeledDataset& ds) {
      std::size_t k = 0;
      for (int y : ds.labels) k += y == c ? 1 : 0;
      return k;
    };
    CHECK(count(b.train) == 70);
    CHECK(count(b.val) == 15);
    CHECK(count(b.test) == 15);
  }
}

TEST_CASE("noiseless generation collapses within-class variation") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.samples_per_class = 10;
  spec.noise_sigma = 0.0;
  spec.image_side = 8;
  const DatasetBundle b = generate_synthetic(spec);
  const std::size_t d = 64;
  for (std::size_t i = 1; i < b.train.size(); ++i) {
    if (b.train.labels[i] != b.train.labels[0]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(b.train.images[i * d + j] == b.train.images[j]);
    }
  }
}

TEST_CASE("generation is deterministic") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.samples_per_class = 12;
  spec.image_side = 8;
  const DatasetBundle a = generate_synthetic(spec);
  const DatasetBundle b = generate_synthetic(spec);
  CHECK(a.train.images == b.train.images);
  CHECK(a.val.images == b.val.images);
  CHECK(a.test.images == b.test.images);
  CHECK(a.train.labels == b.train.labels);
}

TEST_CASE("degenerate specs are configuration errors") {
  SyntheticSpec spec;
  spec.classes = 1;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  spec.classes = 3;
  spec.samples_per_class = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("ridge oracle pins the default difficulty scale") {
  // Easy regime: a linear classifier on raw pixels must reach 0.9.
  SyntheticSpec easy;
  easy.classes = 4;
  easy.samples_per_class = 100;
  easy.image_side = 16;
  easy.noise_sigma = 0.05;
  const DatasetBundle be = generate_synthetic(easy);
  const RidgeOracle re = RidgeOracle::fit(be.train, 4, 1.0);
  CHECK(re.accuracy(be.test) >= 0.9);

  // Hard regime: same signal, tenfold noise keeps the oracle at or below 0.6.
  SyntheticSpec hard = easy;
  hard.noise_sigma = 0.5;
  const DatasetBundle bh = generate_synthetic(hard);
  const RidgeOracle rh = RidgeOracle::fit(bh.train, 4, 1.0);
  CHECK(rh.accuracy(bh.test) <= 0.6);
}

TEST_CASE("blobs generator produces valid vector datasets") {
  BlobsSpec spec;
  spec.classes = 3;
  spec.samples_per_class = 20;
  spec.dim = 5;
  const DatasetBundle b = generate_blobs(spec);
  CHECK(b.train.images.rank() == 2);
  CHECK(b.train.images.cols() == 5);
  CHECK(b.classes == 3);
  for (std::size_t i = 0; i < b.train.images.size(); ++i) {
    CHECK(b.train.images[i] >= 0.0);
    CHECK(b.train.images[i] <= 1.0);
  }
}

TEST_CASE("archive round-trip is exact") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.samples_per_class = 6;
  spec.image_side = 8;
  const DatasetBundle b = generate_synthetic(spec);
  const fs::path path = temp_file("roundtrip.npz");
  save_archive(b, path.string());
  const DatasetBundle loaded = load_archive(path.string());
  CHECK(loaded.train.images == b.train.images);
  CHECK(loaded.train.labels == b.train.labels);
  CHECK(loaded.val.images == b.val.images);
  CHECK(loaded.test.images == b.test.images);
  CHECK(loaded.classes == b.classes);
}

TEST_CASE("missing archive key names the offending array") {
  std::vector<std::pair<std::string, npz::Array>> arrays;
  auto img = [&](std::size_t n) {
    npz::Array a;
    a.shape = {n, 4, 4, 1};
    a.values.assign(n * 16, 0.5);
    return a;
  };
  auto lab = [&](std::size_t n) {
    npz::Array a;
    a.shape = {n};
    a.source_dtype = "<i8";
    for (std::size_t i = 0; i < n; ++i) a.values.push_back(i % 2 == 0 ? 0.0 : 1.0);
    return a;
  };
  arrays.emplace_back("train_images", img(4));
  arrays.emplace_back("train_labels", lab(4));
  arrays.emplace_back("val_images", img(2));
  // val_labels intentionally absent
  arrays.emplace_back("test_images", img(2));
  arrays.emplace_back("test_labels", lab(2));
  const fs::path path = temp_file("missing_key.npz");
  npz::save(path.string(), arrays);
  CHECK_THROWS_WITH_AS(load_archive(path.string()),
                       doctest::Contains("val_labels"), DataError);
}

TEST_CASE("labels containing the class count are a range error") {
  std::vector<std::pair<std::string, npz::Array>> arrays;
  auto img = [&](std::size_t n) {
    npz::Array a;
    a.shape = {n, 4, 4, 1};
    a.values.assign(n * 16, 0.5);
    return a;
  };
  npz::Array bad_labels;
  bad_labels.shape = {4};
  bad_labels.source_dtype = "<i8";
  bad_labels.values = {0.0, 1.0, 1.0, 2.0};  // label 2 with expected c=2
  npz::Array ok_labels;
  ok_labels.shape = {2};
  ok_labels.source_dtype = "<i8";
  ok_labels.values = {0.0, 1.0};
  arrays.emplace_back("train_images", img(4));
  arrays.emplace_back("train_labels", bad_labels);
  arrays.emplace_back("val_images", img(2));
  arrays.emplace_back("val_labels", ok_labels);
  arrays.emplace_back("test_images", img(2));
  arrays.emplace_back("test_labels", ok_labels);
  const fs::path path = temp_file("bad_labels.npz");
  npz::save(path.string(), arrays);
  CHECK_THROWS_AS(load_archive(path.string(), {}, 2), DataError);
}

TEST_CASE("uint8 pixels rescale and rank-3 images gain a channel, logged") {
  std::vector<std::pair<std::string, npz::Array>> arrays;
  auto img = [&](std::size_t n) {
    npz::Array a;
    a.shape = {n, 4, 4};  // rank 3
    a.source_dtype = "|u1";
    for (std::size_t i = 0; i < n * 16; ++i) {
      a.values.push_back(static_cast<double>(i % 256));
    }
    return a;
  };
  auto lab = [&](std::size_t n) {
    npz::Array a;
    a.shape = {n, 1};  // Nx1 accepted
    a.source_dtype = "|u1";
    for (std::size_t i = 0; i < n; ++i) a.values.push_back(i % 2 == 0 ? 0.0 : 1.0);
    return a;
  };
  arrays.emplace_back("train_images", img(4));
  arrays.emplace_back("train_labels", lab(4));
  arrays.emplace_back("val_images", img(2));
  arrays.emplace_back("val_labels", lab(2));
  arrays.emplace_back("test_images", img(2));
  arrays.emplace_back("test_labels", lab(2));
  const fs::path path = temp_file("u8_rank3.npz");
  npz::save(path.string(), arrays);

  const DatasetBundle b = load_archive(path.string());
  CHECK(b.train.images.rank() == 4);
  CHECK(b.train.images.dim(3) == 1);
  CHECK(b.train.images[1] == doctest::Approx(1.0 / 255.0));
  bool rescale_logged = false, rank_logged = false;
  for (const std::string& note : b.notes) {
    rescale_logged |= note.find("1/255") != std::string::npos;
    rank_logged |= note.find("rank-3") != std::string::npos;
  }
  CHECK(rescale_logged);
  CHECK(rank_logged);
}

TEST_CASE("numpy interop: reads savez_compressed, numpy reads our output") {
  const fs::path from_py = temp_file("from_python.npz");
  const fs::path to_py = temp_file("to_python.npz");
  fs::remove(from_py);

  const std::string writer =
      "import numpy as np, sys\n"
      "rng = np.random.default_rng(0)\n"
      "def img(n): return rng.integers(0, 256, size=(n, 4, 4, 1)).astype('uint8')\n"
      "def lab(n): return (np.arange(n) % 2).astype('uint8').reshape(n, 1)\n"
      "np.savez_compressed(sys.argv[1], train_images=img(6), train_labels=lab(6),\n"
      "                    val_images=img(2), val_labels=lab(2),\n"
      "                    test_images=img(2), test_labels=lab(2))\n";
  const fs::path script = temp_file("write_npz.py");
  std::ofstream(script) << writer;
  const std::string cmd =
      "python3 " + script.string() + " " + from_py.string() + " 2>/dev/null";
  if (std::system(cmd.c_str()) != 0) {
    MESSAGE("python3/numpy unavailable; skipping interop check");
    return;
  }

  const DatasetBundle b = load_archive(from_py.string());
  CHECK(b.train.size() == 6);
  CHECK(b.train.images.rank() == 4);
  CHECK(b.classes == 2);
  for (std::size_t i = 0; i < b.train.images.size(); ++i) {
    CHECK(b.train.images[i] >= 0.0);
    CHECK(b.train.images[i] <= 1.0);
  }

  save_archive(b, to_py.string());
  const std::string reader =
      "import numpy as np, sys\n"
      "z = np.load(sys.argv[1])\n"
      "assert z['train_images'].shape == (6, 4, 4, 1), z['train_images'].shape\n"
      "assert z['train_images'].dtype == np.float64\n"
      "assert z['train_labels'].tolist() == [0, 1, 0, 1, 0, 1]\n"
      "assert float(z['train_images'].max()) <= 1.0\n";
  const fs::path script2 = temp_file("read_npz.py");
  std::ofstream(script2) << reader;
  const std::string cmd2 =
      "python3 " + script2.string() + " " + to_py.string();
  CHECK(std::system(cmd2.c_str()) == 0);
}
