#include "doctest.h"

#include "nail/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace nail;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("nail_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p);
  out << content;
}

/// Manifest with views 4x3 and 4x2 plus 4x2 labels, fully observed.
TempDir make_small_dataset(const std::string& v1_row0 = "1,2,3") {
  TempDir dir;
  write_file(dir.path / "v1.csv", v1_row0 + "\n4,5,6\n7,8,9\n1,0,1\n");
  write_file(dir.path / "v2.csv", "1,2\n3,4\n5,6\n7,8\n");
  write_file(dir.path / "y.csv", "0,1\n1,0\n1,1\n0,0\n");
  write_file(dir.path / "manifest.json",
             R"({"views": ["v1.csv", "v2.csv"], "labels": "y.csv"})");
  return dir;
}

bool masks_identical(const MultiViewDataset& a, const MultiViewDataset& b) {
  for (Index v = 0; v < a.m; ++v) {
    if (a.feature_masks[static_cast<std::size_t>(v)] !=
        b.feature_masks[static_cast<std::size_t>(v)]) {
      return false;
    }
  }
  return a.label_mask == b.label_mask && a.eval_mask == b.eval_mask;
}

}  // namespace

TEST_CASE("load_dataset reads a fully observed manifest") {
  auto dir = make_small_dataset();
  const auto ds = load_dataset(dir.path / "manifest.json");
  CHECK(ds.n == 4);
  CHECK(ds.m == 2);
  CHECK(ds.l == 2);
  CHECK(ds.views[0].rows() == 4);
  CHECK(ds.views[0].cols() == 3);
  CHECK(ds.views[1].cols() == 2);
  for (const auto& mask : ds.feature_masks) {
    CHECK(mask.minCoeff() == 1.0);
  }
  CHECK(ds.label_mask.minCoeff() == 1.0);
  CHECK(ds.views[0](1, 2) == 6.0);
  CHECK(ds.labels(2, 0) == 1.0);
}

TEST_CASE("load_dataset maps a NaN cell to a single zero mask entry") {
  auto dir = make_small_dataset("1,NaN,3");
  const auto ds = load_dataset(dir.path / "manifest.json");
  CHECK(ds.feature_masks[0](0, 1) == 0.0);
  CHECK(ds.views[0](0, 1) == 0.0);  // sentinel zeroed
  CHECK(ds.feature_masks[0].sum() == 11.0);
  CHECK(ds.feature_masks[1].minCoeff() == 1.0);
}

TEST_CASE("load_dataset rejects bad inputs") {
  SUBCASE("label outside {0,1,NaN}") {
    auto dir = make_small_dataset();
    write_file(dir.path / "y.csv", "0,1\n2,0\n1,1\n0,0\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir.path / "manifest.json"), "invalid label value",
                         DataError);
  }
  SUBCASE("missing file") {
    auto dir = make_small_dataset();
    fs::remove(dir.path / "v2.csv");
    CHECK_THROWS_AS(load_dataset(dir.path / "manifest.json"), DataError);
  }
  SUBCASE("inconsistent row counts") {
    auto dir = make_small_dataset();
    write_file(dir.path / "v2.csv", "1,2\n3,4\n5,6\n");
    CHECK_THROWS_AS(load_dataset(dir.path / "manifest.json"), DataError);
  }
  SUBCASE("row with no observed features in any view") {
    auto dir = make_small_dataset("NaN,NaN,NaN");
    write_file(dir.path / "v2.csv", "NaN,NaN\n3,4\n5,6\n7,8\n");
    CHECK_THROWS_AS(load_dataset(dir.path / "manifest.json"), DataError);
  }
  SUBCASE("unparseable cell") {
    auto dir = make_small_dataset("1,x,3");
    CHECK_THROWS_AS(load_dataset(dir.path / "manifest.json"), DataError);
  }
}

TEST_CASE("save then load round-trips bit-identically") {
  SyntheticSpec spec;
  spec.n = 23;
  spec.m = 2;
  spec.l = 4;
  spec.k_true = 3;
  spec.view_dims = {7, 5};
  spec.noise_std = {0.3, 0.3};
  spec.seed = 7;
  auto [ds, planted] = synthesize(spec);
  ds = apply_feature_mask(ds, {0.2, 0.0, 5});
  ds = apply_label_mask(ds, {0.0, 0.3, 5});

  TempDir dir;
  save_dataset(ds, dir.path);
  const auto back = load_dataset(dir.path / "manifest.json");
  for (Index v = 0; v < ds.m; ++v) {
    CHECK(back.views[static_cast<std::size_t>(v)] == ds.views[static_cast<std::size_t>(v)]);
    CHECK(back.feature_masks[static_cast<std::size_t>(v)] ==
          ds.feature_masks[static_cast<std::size_t>(v)]);
  }
  CHECK(back.labels == ds.labels);
  CHECK(back.label_mask == ds.label_mask);

  // A second save must produce byte-identical files.
  TempDir dir2;
  save_dataset(back, dir2.path);
  for (const auto* name : {"v1.csv", "v2.csv", "y.csv", "manifest.json"}) {
    std::ifstream a(dir.path / name), b(dir2.path / name);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("apply_feature_mask removes whole rows per view") {
  SyntheticSpec spec;
  spec.n = 10;
  spec.m = 2;
  spec.l = 3;
  spec.k_true = 2;
  spec.view_dims = {4, 3};
  spec.seed = 3;
  auto ds = synthesize(spec).first;

  SUBCASE("r = 0 leaves masks unchanged") {
    const auto out = apply_feature_mask(ds, {0.0, 0.0, 1});
    CHECK(masks_identical(out, ds));
  }

  SUBCASE("r = 0.5 removes 5 rows per view, none in both") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto out = apply_feature_mask(ds, {0.5, 0.0, seed});
      for (Index v = 0; v < 2; ++v) {
        Index removed = 0;
        for (Index i = 0; i < out.n; ++i) {
          if (out.feature_masks[static_cast<std::size_t>(v)].row(i).maxCoeff() == 0.0) ++removed;
        }
        CHECK(removed == 5);
      }
      for (Index i = 0; i < out.n; ++i) {
        bool covered = false;
        for (Index v = 0; v < 2 && !covered; ++v) {
          covered = out.feature_masks[static_cast<std::size_t>(v)].row(i).minCoeff() == 1.0;
        }
        CHECK(covered);
      }
    }
  }

  SUBCASE("removed rows are zeroed") {
    const auto out = apply_feature_mask(ds, {0.3, 0.0, 11});
    for (Index v = 0; v < 2; ++v) {
      for (Index i = 0; i < out.n; ++i) {
        if (out.feature_masks[static_cast<std::size_t>(v)].row(i).maxCoeff() == 0.0) {
          CHECK(out.views[static_cast<std::size_t>(v)].row(i).cwiseAbs().maxCoeff() == 0.0);
        }
      }
    }
  }

  SUBCASE("identical spec gives byte-identical masks") {
    const auto a = apply_feature_mask(ds, {0.5, 0.0, 42});
    const auto b = apply_feature_mask(ds, {0.5, 0.0, 42});
    CHECK(masks_identical(a, b));
    const auto c = apply_feature_mask(ds, {0.5, 0.0, 43});
    CHECK_FALSE(masks_identical(a, c));
  }
}

TEST_CASE("apply_feature_mask rejects an unsatisfiable rate") {
  SyntheticSpec spec;
  spec.n = 2;
  spec.m = 1;
  spec.l = 2;
  spec.k_true = 1;
  spec.view_dims = {3};
  spec.positive_rate = 0.5;
  spec.seed = 9;
  auto ds = synthesize(spec).first;
  CHECK_THROWS_AS(apply_feature_mask(ds, {0.5, 0.0, 1}), DataError);
  CHECK_THROWS_AS(apply_feature_mask(ds, {1.0, 0.0, 1}), ConfigError);
}

TEST_CASE("apply_label_mask hides the floor counts per class") {
  // One column: 4 positives, 6 negatives.
  MultiViewDataset ds;
  ds.n = 10;
  ds.m = 1;
  ds.l = 1;
  ds.views.push_back(Matrix::Ones(10, 2));
  ds.feature_masks.push_back(Matrix::Ones(10, 2));
  ds.labels = Matrix::Zero(10, 1);
  for (Index i = 0; i < 4; ++i) ds.labels(i, 0) = 1.0;
  ds.label_mask = Matrix::Ones(10, 1);
  ds.eval_truth = Matrix::Zero(10, 1);
  ds.eval_mask = Matrix::Zero(10, 1);

  SUBCASE("s = 0 leaves the mask unchanged") {
    const auto out = apply_label_mask(ds, {0.0, 0.0, 1});
    CHECK(out.label_mask == ds.label_mask);
    CHECK(out.eval_mask.sum() == 0.0);
  }

  SUBCASE("s = 0.5 hides 2 positives and 3 negatives") {
    const auto out = apply_label_mask(ds, {0.0, 0.5, 1});
    Index hidden_pos = 0, hidden_neg = 0;
    for (Index i = 0; i < 10; ++i) {
      if (out.eval_mask(i, 0) == 1.0) {
        CHECK(out.label_mask(i, 0) == 0.0);
        CHECK(out.labels(i, 0) == 0.0);
        (out.eval_truth(i, 0) == 1.0 ? hidden_pos : hidden_neg)++;
      }
    }
    CHECK(hidden_pos == 2);
    CHECK(hidden_neg == 3);
  }

  SUBCASE("a single positive with s = 0.5 stays observed") {
    ds.labels.setZero();
    ds.labels(3, 0) = 1.0;
    const auto out = apply_label_mask(ds, {0.0, 0.5, 1});
    CHECK(out.eval_truth.sum() == 0.0);  // floor(0.5) = 0 positives hidden
    CHECK(out.label_mask(3, 0) == 1.0);
  }

  SUBCASE("determinism") {
    const auto a = apply_label_mask(ds, {0.0, 0.4, 7});
    const auto b = apply_label_mask(ds, {0.0, 0.4, 7});
    CHECK(a.eval_mask == b.eval_mask);
    CHECK(a.eval_truth == b.eval_truth);
  }
}

TEST_CASE("split_rows partitions deterministically") {
  SyntheticSpec spec;
  spec.n = 10;
  spec.m = 2;
  spec.l = 3;
  spec.k_true = 2;
  spec.view_dims = {4, 3};
  spec.seed = 1;
  const auto ds = synthesize(spec).first;

  auto [train, val] = split_rows(ds, 0.7, 5);
  CHECK(train.n == 7);
  CHECK(val.n == 3);

  auto [train2, val2] = split_rows(ds, 0.7, 5);
  CHECK(train.views[0] == train2.views[0]);
  CHECK(val.labels == val2.labels);

  // Disjointness: every original row appears exactly once across the split.
  double total = 0.0;
  total += train.views[0].sum() + val.views[0].sum();
  CHECK(total == doctest::Approx(ds.views[0].sum()).epsilon(1e-12));

  CHECK_THROWS_AS(split_rows(ds, 0.05, 1), DataError);  // empty train side
  CHECK_THROWS_AS(split_rows(ds, 1.5, 1), ConfigError);

  SyntheticSpec tiny = spec;
  tiny.n = 2;
  const auto two = synthesize(tiny).first;
  auto [a, b] = split_rows(two, 0.5, 3);
  CHECK(a.n == 1);
  CHECK(b.n == 1);
}

TEST_CASE("synthesize plants the advertised structure") {
  SUBCASE("noiseless views have rank at most k_true") {
    SyntheticSpec spec;
    spec.n = 40;
    spec.m = 2;
    spec.l = 4;
    spec.k_true = 3;
    spec.view_dims = {8, 6};
    spec.noise_std = {0.0, 0.0};
    spec.seed = 2;
    auto [ds, planted] = synthesize(spec);
    for (Index v = 0; v < spec.m; ++v) {
      const auto svd = ds.views[static_cast<std::size_t>(v)].jacobiSvd();
      const auto& sv = svd.singularValues();
      for (Index i = spec.k_true; i < sv.size(); ++i) {
        CHECK(sv(i) < 1e-10 * sv(0));
      }
      CHECK(ds.views[static_cast<std::size_t>(v)] ==
            planted.F * planted.U[static_cast<std::size_t>(v)]);
    }
  }

  SUBCASE("realized label density lands within 0.02 of the target") {
    SyntheticSpec spec;
    spec.n = 500;
    spec.m = 2;
    spec.l = 10;
    spec.k_true = 4;
    spec.view_dims = {12, 9};
    spec.positive_rate = 0.1;
    spec.seed = 4;
    const auto ds = synthesize(spec).first;
    const double density = ds.labels.sum() / static_cast<double>(spec.n * spec.l);
    CHECK(density >= 0.08);
    CHECK(density <= 0.12);
  }

  SUBCASE("a pure-noise view is uncorrelated with its clean counterpart") {
    SyntheticSpec spec;
    spec.n = 500;
    spec.m = 3;
    spec.l = 5;
    spec.k_true = 4;
    spec.view_dims = {10, 10, 10};
    spec.noise_std = {0.1, 0.1, 0.1};
    spec.noisy_view_count = 1;
    spec.seed = 6;
    auto [ds, planted] = synthesize(spec);
    const Matrix clean = planted.F * planted.U[2];
    const Matrix& noisy = ds.views[2];
    const double ca = clean.mean(), cb = noisy.mean();
    const Matrix da = clean.array() - ca, db = noisy.array() - cb;
    const double corr = da.cwiseProduct(db).sum() / std::sqrt(da.squaredNorm() * db.squaredNorm());
    CHECK(std::abs(corr) < 0.05);
  }

  SUBCASE("an unreachable density errors out") {
    SyntheticSpec spec;
    spec.n = 2;
    spec.m = 1;
    spec.l = 2;
    spec.k_true = 1;
    spec.view_dims = {3};
    spec.positive_rate = 0.37;  // granularity is 1/4, so +-0.02 is unreachable
    spec.seed = 1;
    CHECK_THROWS_AS(synthesize(spec), DataError);
  }

  SUBCASE("determinism") {
    SyntheticSpec spec;
    spec.n = 30;
    spec.m = 2;
    spec.l = 3;
    spec.k_true = 2;
    spec.view_dims = {5, 4};
    spec.noise_std = {0.2};
    spec.seed = 10;
    const auto a = synthesize(spec).first;
    const auto b = synthesize(spec).first;
    CHECK(a.views[0] == b.views[0]);
    CHECK(a.views[1] == b.views[1]);
    CHECK(a.labels == b.labels);
  }
}

TEST_CASE("subsample_rows keeps the requested count") {
  SyntheticSpec spec;
  spec.n = 30;
  spec.m = 2;
  spec.l = 3;
  spec.k_true = 2;
  spec.view_dims = {5, 4};
  spec.seed = 12;
  const auto ds = synthesize(spec).first;
  const auto small = subsample_rows(ds, 11, 3);
  CHECK(small.n == 11);
  CHECK(small.views[0].rows() == 11);
  const auto again = subsample_rows(ds, 11, 3);
  CHECK(small.views[0] == again.views[0]);
  CHECK_THROWS_AS(subsample_rows(ds, 0, 1), ConfigError);
}
