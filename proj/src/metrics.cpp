#include "nail/metrics.hpp"

#include <algorithm>
#include <vector>

namespace nail {

namespace {

void require_shapes(const Matrix& a, const Matrix& truth, const Matrix& mask) {
  if (a.rows() != truth.rows() || a.cols() != truth.cols() || truth.rows() != mask.rows() ||
      truth.cols() != mask.cols()) {
    throw ConfigError("metric input shapes differ");
  }
}

}  // namespace

double hamming_score(const Matrix& pred, const Matrix& truth, const Matrix& mask) {
  require_shapes(pred, truth, mask);
  double selected = 0.0;
  double correct = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) {
    for (Index j = 0; j < pred.cols(); ++j) {
      if (mask(i, j) == 0.0) continue;
      selected += 1.0;
      if ((pred(i, j) > 0.5) == (truth(i, j) > 0.5)) correct += 1.0;
    }
  }
  if (selected == 0.0) throw DataError("hamming score over an empty mask");
  return correct / selected;
}

double hamming_score(const Matrix& pred, const EvalMask& eval) {
  return hamming_score(pred, eval.truth, eval.selector);
}

double average_precision(const Matrix& scores, const Matrix& truth, const Matrix& mask) {
  require_shapes(scores, truth, mask);
  double ap_sum = 0.0;
  Index qualifying = 0;
  for (Index j = 0; j < scores.cols(); ++j) {
    std::vector<std::pair<double, double>> entries;  // (score, y)
    for (Index i = 0; i < scores.rows(); ++i) {
      if (mask(i, j) != 0.0) entries.emplace_back(scores(i, j), truth(i, j));
    }
    double positives = 0.0;
    for (const auto& e : entries) positives += e.second > 0.5 ? 1.0 : 0.0;
    if (positives == 0.0) continue;
    ++qualifying;

    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    // Walk tie groups in descending-score order. Within a group a positive
    // sits at in-group position t (1-based) uniformly at random; its expected
    // precision is averaged in closed form (hypergeometric mean for the
    // number of positive group-mates ranked above it).
    double column_ap = 0.0;
    std::size_t start = 0;
    double before = 0.0;      // entries in earlier groups
    double pos_before = 0.0;  // positives in earlier groups
    while (start < entries.size()) {
      std::size_t end = start;
      while (end < entries.size() && entries[end].first == entries[start].first) ++end;
      const double group_size = static_cast<double>(end - start);
      double group_pos = 0.0;
      for (std::size_t i = start; i < end; ++i) group_pos += entries[i].second > 0.5 ? 1.0 : 0.0;
      if (group_pos > 0.0) {
        double expected = 0.0;
        for (double t = 1.0; t <= group_size; ++t) {
          const double mates_above =
              group_size > 1.0 ? (t - 1.0) * (group_pos - 1.0) / (group_size - 1.0) : 0.0;
          expected += (pos_before + 1.0 + mates_above) / (before + t);
        }
        column_ap += group_pos * expected / group_size;
      }
      before += group_size;
      pos_before += group_pos;
      start = end;
    }
    ap_sum += column_ap / positives;
  }
  if (qualifying == 0) throw DataError("average precision needs a held-out positive");
  return ap_sum / static_cast<double>(qualifying);
}

double average_precision(const Matrix& scores, const EvalMask& eval) {
  return average_precision(scores, eval.truth, eval.selector);
}

}  // namespace nail
