#include "nail/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace nail {

namespace {

// Seed streams, one per purpose, so draws never alias across operations.
constexpr std::uint64_t kStreamFeatureMask = 0x11;
constexpr std::uint64_t kStreamLabelMask = 0x22;
constexpr std::uint64_t kStreamSplit = 0x33;
constexpr std::uint64_t kStreamSubsample = 0x44;
constexpr std::uint64_t kStreamSynthF = 0x55;
constexpr std::uint64_t kStreamSynthU = 0x66;
constexpr std::uint64_t kStreamSynthNoise = 0x77;
constexpr std::uint64_t kStreamSynthLabel = 0x88;

Matrix select_rows(const Matrix& a, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = a.row(rows[i]);
  }
  return out;
}

MultiViewDataset take_rows(const MultiViewDataset& ds, const std::vector<Index>& rows) {
  MultiViewDataset out;
  out.n = static_cast<Index>(rows.size());
  out.m = ds.m;
  out.l = ds.l;
  out.views.reserve(ds.views.size());
  out.feature_masks.reserve(ds.views.size());
  for (Index v = 0; v < ds.m; ++v) {
    out.views.push_back(select_rows(ds.views[static_cast<std::size_t>(v)], rows));
    out.feature_masks.push_back(select_rows(ds.feature_masks[static_cast<std::size_t>(v)], rows));
  }
  out.labels = select_rows(ds.labels, rows);
  out.label_mask = select_rows(ds.label_mask, rows);
  out.eval_truth = select_rows(ds.eval_truth, rows);
  out.eval_mask = select_rows(ds.eval_mask, rows);
  return out;
}

std::vector<std::vector<double>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const char* begin = cell.c_str();
      char* end = nullptr;
      const double value = std::strtod(begin, &end);
      if (end == begin) {
        throw DataError("unparseable cell '" + cell + "' in " + path.string());
      }
      row.push_back(value);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("empty CSV: " + path.string());
  const std::size_t width = rows.front().size();
  for (const auto& row : rows) {
    if (row.size() != width) {
      throw DataError("ragged CSV (unequal column counts): " + path.string());
    }
  }
  return rows;
}

void write_csv(const fs::path& path, const Matrix& values, const Matrix& mask) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path.string());
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (j > 0) out << ',';
      if (mask(i, j) != 0.0) {
        out << format_double(values(i, j));
      } else {
        out << "NaN";
      }
    }
    out << '\n';
  }
}

}  // namespace

std::vector<Index> MultiViewDataset::view_dims() const {
  std::vector<Index> dims;
  dims.reserve(views.size());
  for (const auto& v : views) dims.push_back(v.cols());
  return dims;
}

void MultiViewDataset::validate() const {
  if (m != static_cast<Index>(views.size()) || views.size() != feature_masks.size()) {
    throw DataError("view/mask count mismatch");
  }
  if (m == 0 || n == 0) throw DataError("dataset has no views or no rows");
  for (Index v = 0; v < m; ++v) {
    const auto& x = views[static_cast<std::size_t>(v)];
    const auto& o = feature_masks[static_cast<std::size_t>(v)];
    if (x.rows() != n || o.rows() != n || x.cols() != o.cols()) {
      throw DataError("view " + std::to_string(v + 1) + " has inconsistent dimensions");
    }
  }
  if (labels.rows() != n || label_mask.rows() != n || labels.cols() != l ||
      label_mask.cols() != l) {
    throw DataError("label matrix has inconsistent dimensions");
  }
  if (eval_truth.rows() != n || eval_mask.rows() != n) {
    throw DataError("evaluation shadow has inconsistent dimensions");
  }
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < l; ++j) {
      if (label_mask(i, j) != 0.0) {
        const double y = labels(i, j);
        if (y != 0.0 && y != 1.0) throw DataError("invalid label value");
      }
    }
  }
  for (Index i = 0; i < n; ++i) {
    bool any = false;
    for (Index v = 0; v < m && !any; ++v) {
      any = feature_masks[static_cast<std::size_t>(v)].row(i).sum() > 0.0;
    }
    if (!any) {
      throw DataError("sample " + std::to_string(i) + " has no observed features in any view");
    }
  }
}

MultiViewDataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("views") || !manifest.contains("labels")) {
    throw DataError("manifest must contain \"views\" and \"labels\"");
  }
  const fs::path base = manifest_path.parent_path();

  MultiViewDataset ds;
  for (const auto& rel : manifest.at("views")) {
    const auto rows = read_csv(base / rel.get<std::string>());
    const Index r = static_cast<Index>(rows.size());
    const Index c = static_cast<Index>(rows.front().size());
    Matrix x(r, c), o(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index j = 0; j < c; ++j) {
        const double value = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (std::isnan(value)) {
          x(i, j) = 0.0;
          o(i, j) = 0.0;
        } else {
          x(i, j) = value;
          o(i, j) = 1.0;
        }
      }
    }
    ds.views.push_back(std::move(x));
    ds.feature_masks.push_back(std::move(o));
  }
  if (ds.views.empty()) throw DataError("manifest lists no views");

  const auto yrows = read_csv(base / manifest.at("labels").get<std::string>());
  const Index r = static_cast<Index>(yrows.size());
  const Index c = static_cast<Index>(yrows.front().size());
  ds.labels = Matrix::Zero(r, c);
  ds.label_mask = Matrix::Zero(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) {
      const double value = yrows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (std::isnan(value)) continue;
      if (value != 0.0 && value != 1.0) throw DataError("invalid label value");
      ds.labels(i, j) = value;
      ds.label_mask(i, j) = 1.0;
    }
  }

  ds.n = ds.views.front().rows();
  ds.m = static_cast<Index>(ds.views.size());
  ds.l = c;
  for (const auto& x : ds.views) {
    if (x.rows() != ds.n) throw DataError("views have inconsistent row counts");
  }
  if (r != ds.n) throw DataError("label row count differs from the views");
  ds.eval_truth = Matrix::Zero(ds.n, ds.l);
  ds.eval_mask = Matrix::Zero(ds.n, ds.l);
  ds.validate();
  return ds;
}

void save_dataset(const MultiViewDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["views"] = json::array();
  for (Index v = 0; v < ds.m; ++v) {
    const std::string name = "v" + std::to_string(v + 1) + ".csv";
    write_csv(dir / name, ds.views[static_cast<std::size_t>(v)],
              ds.feature_masks[static_cast<std::size_t>(v)]);
    manifest["views"].push_back(name);
  }
  write_csv(dir / "y.csv", ds.labels, ds.label_mask);
  manifest["labels"] = "y.csv";
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

namespace {

bool row_fully_observed(const Matrix& mask, Index i) {
  return mask.row(i).minCoeff() > 0.0;
}

std::vector<Index> removal_set(const MaskSpec& spec, Index view, Index attempt, Index n,
                               Index count) {
  Rng rng(derive_seed(spec.seed,
                      derive_seed(kStreamFeatureMask,
                                  static_cast<std::uint64_t>(view) * 1000003ULL +
                                      static_cast<std::uint64_t>(attempt))));
  return rng.sample_indices(n, count);
}

}  // namespace

MultiViewDataset apply_feature_mask(const MultiViewDataset& ds, const MaskSpec& spec) {
  const double r = spec.feature_removal_rate;
  if (r < 0.0 || r >= 1.0) throw ConfigError("feature removal rate must be in [0,1)");
  MultiViewDataset out = ds;
  const Index count = static_cast<Index>(std::floor(r * static_cast<double>(ds.n)));
  if (count == 0) return out;

  // Only a view that fully observes a row can "cover" it; rows nobody covers
  // to begin with place no constraint on the removal sets.
  std::vector<std::vector<Index>> eligible(static_cast<std::size_t>(ds.n));
  Index constrained_rows = 0;
  std::vector<Index> sole_cover(static_cast<std::size_t>(ds.m), 0);
  for (Index i = 0; i < ds.n; ++i) {
    auto& views_of_i = eligible[static_cast<std::size_t>(i)];
    for (Index v = 0; v < ds.m; ++v) {
      if (row_fully_observed(ds.feature_masks[static_cast<std::size_t>(v)], i)) {
        views_of_i.push_back(v);
      }
    }
    if (!views_of_i.empty()) ++constrained_rows;
    if (views_of_i.size() == 1) ++sole_cover[static_cast<std::size_t>(views_of_i.front())];
  }
  // Each view can leave at most n - count rows observed; the constraint is
  // unsatisfiable when the joint capacity (or a sole-covering view's) runs out.
  const Index capacity = ds.n - count;
  if (static_cast<double>(ds.m) * static_cast<double>(capacity) <
      static_cast<double>(constrained_rows)) {
    throw DataError("feature removal rate too large: a sample would lose all views");
  }
  for (Index v = 0; v < ds.m; ++v) {
    if (sole_cover[static_cast<std::size_t>(v)] > capacity) {
      throw DataError("feature removal rate too large: a sample would lose all views");
    }
  }

  std::vector<std::set<Index>> removed(static_cast<std::size_t>(ds.m));
  for (Index v = 0; v < ds.m; ++v) {
    const auto s = removal_set(spec, v, 0, ds.n, count);
    removed[static_cast<std::size_t>(v)].insert(s.begin(), s.end());
  }

  auto conflicts = [&]() {
    std::vector<Index> bad;
    for (Index i = 0; i < ds.n; ++i) {
      const auto& views_of_i = eligible[static_cast<std::size_t>(i)];
      if (views_of_i.empty()) continue;
      bool covered = false;
      for (const Index v : views_of_i) {
        if (!removed[static_cast<std::size_t>(v)].count(i)) {
          covered = true;
          break;
        }
      }
      if (!covered) bad.push_back(i);
    }
    return bad;
  };

  // Rejection: redraw the offending view's set (the last view that removed
  // the first conflicting row) up to 1000 times.
  std::vector<Index> bad = conflicts();
  for (Index attempt = 1; attempt <= 1000 && !bad.empty(); ++attempt) {
    const Index offender = eligible[static_cast<std::size_t>(bad.front())].back();
    const auto s = removal_set(spec, offender, attempt, ds.n, count);
    removed[static_cast<std::size_t>(offender)] =
        std::set<Index>(s.begin(), s.end());
    bad = conflicts();
  }

  // Deterministic repair: un-remove the lowest-index conflicting row, swapping
  // in the lowest replacement row that stays covered so counts are preserved.
  while (!bad.empty()) {
    const Index i = bad.front();
    const Index v = eligible[static_cast<std::size_t>(i)].front();
    auto& set_v = removed[static_cast<std::size_t>(v)];
    set_v.erase(i);
    for (Index j = 0; j < ds.n; ++j) {
      if (set_v.count(j) || j == i) continue;
      const auto& views_of_j = eligible[static_cast<std::size_t>(j)];
      bool safe = true;
      if (std::find(views_of_j.begin(), views_of_j.end(), v) != views_of_j.end()) {
        safe = false;
        for (const Index w : views_of_j) {
          if (w != v && !removed[static_cast<std::size_t>(w)].count(j)) {
            safe = true;
            break;
          }
        }
      }
      if (safe) {
        set_v.insert(j);
        break;
      }
    }
    bad = conflicts();
  }

  for (Index v = 0; v < ds.m; ++v) {
    for (const Index i : removed[static_cast<std::size_t>(v)]) {
      out.feature_masks[static_cast<std::size_t>(v)].row(i).setZero();
      out.views[static_cast<std::size_t>(v)].row(i).setZero();
    }
  }
  out.validate();
  return out;
}

MultiViewDataset apply_label_mask(const MultiViewDataset& ds, const MaskSpec& spec) {
  const double s = spec.label_removal_rate;
  if (s < 0.0 || s >= 1.0) throw ConfigError("label removal rate must be in [0,1)");
  MultiViewDataset out = ds;
  if (s == 0.0) return out;

  for (Index j = 0; j < ds.l; ++j) {
    std::vector<Index> pos, neg;
    for (Index i = 0; i < ds.n; ++i) {
      if (ds.label_mask(i, j) == 0.0) continue;
      (ds.labels(i, j) == 1.0 ? pos : neg).push_back(i);
    }
    Rng rng(derive_seed(spec.seed, derive_seed(kStreamLabelMask, static_cast<std::uint64_t>(j))));
    auto hide = [&](const std::vector<Index>& entries) {
      const Index count = static_cast<Index>(
          std::floor(s * static_cast<double>(entries.size())));
      const auto chosen = rng.sample_indices(static_cast<Index>(entries.size()), count);
      for (const Index c : chosen) {
        const Index i = entries[static_cast<std::size_t>(c)];
        out.eval_truth(i, j) = out.labels(i, j);
        out.eval_mask(i, j) = 1.0;
        out.label_mask(i, j) = 0.0;
        out.labels(i, j) = 0.0;
      }
    };
    hide(pos);
    hide(neg);
  }
  return out;
}

std::pair<MultiViewDataset, MultiViewDataset> split_rows(const MultiViewDataset& ds,
                                                         double train_fraction,
                                                         std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw ConfigError("train fraction must be in (0,1)");
  }
  const Index n_train =
      static_cast<Index>(std::floor(train_fraction * static_cast<double>(ds.n)));
  if (n_train == 0 || n_train == ds.n) {
    throw DataError("split leaves one side empty");
  }
  std::vector<Index> perm(static_cast<std::size_t>(ds.n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(derive_seed(seed, kStreamSplit));
  rng.shuffle(perm);
  std::vector<Index> train(perm.begin(), perm.begin() + n_train);
  std::vector<Index> rest(perm.begin() + n_train, perm.end());
  std::sort(train.begin(), train.end());
  std::sort(rest.begin(), rest.end());
  return {take_rows(ds, train), take_rows(ds, rest)};
}

MultiViewDataset subsample_rows(const MultiViewDataset& ds, Index count, std::uint64_t seed) {
  if (count <= 0 || count > ds.n) throw ConfigError("subsample count out of range");
  if (count == ds.n) return ds;
  Rng rng(derive_seed(seed, kStreamSubsample));
  return take_rows(ds, rng.sample_indices(ds.n, count));
}

std::pair<MultiViewDataset, PlantedModel> synthesize(const SyntheticSpec& spec) {
  if (spec.n <= 0 || spec.m <= 0 || spec.l <= 0 || spec.k_true <= 0) {
    throw ConfigError("synthetic dimensions must be positive");
  }
  if (static_cast<Index>(spec.view_dims.size()) != spec.m) {
    throw ConfigError("view_dims must list one dimension per view");
  }
  std::vector<double> noise = spec.noise_std;
  if (noise.empty()) noise.assign(static_cast<std::size_t>(spec.m), 0.0);
  if (noise.size() == 1 && spec.m > 1) noise.assign(static_cast<std::size_t>(spec.m), noise[0]);
  if (static_cast<Index>(noise.size()) != spec.m) {
    throw ConfigError("noise_std must have one entry per view");
  }
  for (const Index d : spec.view_dims) {
    if (spec.k_true >= d) throw ConfigError("k_true must be below every view dimension");
  }
  if (spec.positive_rate <= 0.0 || spec.positive_rate >= 1.0) {
    throw ConfigError("positive_rate must be in (0,1)");
  }
  if (spec.noisy_view_count < 0 || spec.noisy_view_count > spec.m) {
    throw ConfigError("noisy_view_count out of range");
  }

  PlantedModel planted;
  {
    Rng rng(derive_seed(spec.seed, kStreamSynthF));
    planted.F.resize(spec.n, spec.k_true);
    for (Index i = 0; i < spec.n; ++i) {
      for (Index j = 0; j < spec.k_true; ++j) planted.F(i, j) = rng.uniform01();
    }
  }

  MultiViewDataset ds;
  ds.n = spec.n;
  ds.m = spec.m;
  ds.l = spec.l;
  for (Index v = 0; v < spec.m; ++v) {
    Rng rng(derive_seed(spec.seed, derive_seed(kStreamSynthU, static_cast<std::uint64_t>(v))));
    const Index d = spec.view_dims[static_cast<std::size_t>(v)];
    Matrix u(spec.k_true, d);
    for (Index i = 0; i < spec.k_true; ++i) {
      for (Index j = 0; j < d; ++j) u(i, j) = rng.uniform01();
    }
    planted.U.push_back(u);

    Matrix x = planted.F * u;
    Rng nrng(derive_seed(spec.seed, derive_seed(kStreamSynthNoise, static_cast<std::uint64_t>(v))));
    if (v >= spec.m - spec.noisy_view_count) {
      // Pure noise at the magnitude the clean view would have had.
      const double mean = x.mean();
      const double sd = std::sqrt((x.array() - mean).square().mean());
      for (Index i = 0; i < spec.n; ++i) {
        for (Index j = 0; j < d; ++j) x(i, j) = mean + sd * nrng.normal();
      }
    } else if (noise[static_cast<std::size_t>(v)] > 0.0) {
      for (Index i = 0; i < spec.n; ++i) {
        for (Index j = 0; j < d; ++j) x(i, j) += noise[static_cast<std::size_t>(v)] * nrng.normal();
      }
    }
    ds.views.push_back(std::move(x));
    ds.feature_masks.push_back(Matrix::Ones(spec.n, d));
  }

  {
    Rng rng(derive_seed(spec.seed, kStreamSynthLabel));
    Matrix u(spec.k_true, spec.l);
    for (Index i = 0; i < spec.k_true; ++i) {
      for (Index j = 0; j < spec.l; ++j) u(i, j) = rng.uniform(-3.0, 3.0);
    }
    planted.U.push_back(u);
    const Matrix z = planted.F * u;
    Matrix draws(spec.n, spec.l);
    for (Index i = 0; i < spec.n; ++i) {
      for (Index j = 0; j < spec.l; ++j) draws(i, j) = rng.uniform01();
    }
    const auto realized = [&](double b) {
      double count = 0.0;
      for (Index i = 0; i < spec.n; ++i) {
        for (Index j = 0; j < spec.l; ++j) {
          if (draws(i, j) < sigmoid(z(i, j) + b)) count += 1.0;
        }
      }
      return count / static_cast<double>(spec.n * spec.l);
    };
    double lo = -30.0, hi = 30.0, b = 0.0;
    bool ok = false;
    for (int step = 0; step < 200; ++step) {
      b = 0.5 * (lo + hi);
      const double density = realized(b);
      if (std::abs(density - spec.positive_rate) <= 0.02) {
        ok = true;
        break;
      }
      (density > spec.positive_rate ? hi : lo) = b;
    }
    if (!ok) {
      throw DataError("label density bisection failed to reach the target rate");
    }
    planted.label_bias = b;
    ds.labels.resize(spec.n, spec.l);
    for (Index i = 0; i < spec.n; ++i) {
      for (Index j = 0; j < spec.l; ++j) {
        ds.labels(i, j) = draws(i, j) < sigmoid(z(i, j) + b) ? 1.0 : 0.0;
      }
    }
    ds.label_mask = Matrix::Ones(spec.n, spec.l);
  }

  ds.eval_truth = Matrix::Zero(spec.n, spec.l);
  ds.eval_mask = Matrix::Zero(spec.n, spec.l);
  ds.validate();
  return {std::move(ds), std::move(planted)};
}

}  // namespace nail
