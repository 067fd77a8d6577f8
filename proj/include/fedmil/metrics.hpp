#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmil/errors.hpp"
#include "fedmil/model.hpp"

namespace fedmil {

struct EvalResult {
  double accuracy = 0.0;
  double f1 = 0.0;                // class-1 F1 for binary, macro-F1 otherwise
  std::optional<double> auc;      // absent when undefined (single-class test set)
  std::vector<std::vector<int>> confusion; // [true][predicted]
  int num_samples = 0;
  bool f1_zero_division = false;  // some class had an undefined precision/recall
  std::string f1_kind;            // "binary" | "macro"
};

// Rank-based (Mann-Whitney) AUC with midranks, so tied scores count 1/2.
// Returns nullopt when either class is absent. Exact: the numerator is a
// half-integer, identical to exhaustive pair counting.
inline std::optional<double> binary_auc(std::span<const int> labels,
                                        std::span<const double> scores) {
  require(labels.size() == scores.size(), ErrorCode::shape_mismatch,
          "auc: labels/scores size mismatch");
  const std::size_t n = labels.size();
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += (y == 1);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Metrics from labels and per-class scores; `scores` is row-major
// num_samples x num_classes. Prediction is the argmax (ties -> lowest id).
inline EvalResult evaluate_scores(std::span<const int> labels,
                                  std::span<const double> scores, int num_classes) {
  const std::size_t n = labels.size();
  require(n >= 1, ErrorCode::config, "evaluate: empty test set");
  require(scores.size() == n * static_cast<std::size_t>(num_classes),
          ErrorCode::shape_mismatch, "evaluate: score matrix shape mismatch");

  EvalResult out;
  out.num_samples = static_cast<int>(n);
  out.confusion.assign(static_cast<std::size_t>(num_classes),
                       std::vector<int>(static_cast<std::size_t>(num_classes), 0));

  std::vector<int> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = scores.data() + i * static_cast<std::size_t>(num_classes);
    int best = 0;
    for (int c = 1; c < num_classes; ++c)
      if (row[c] > row[best]) best = c;
    predicted[i] = best;
    require(labels[i] >= 0 && labels[i] < num_classes, ErrorCode::config,
            "evaluate: label out of range");
    out.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(best)]++;
  }

  int correct = 0;
  for (int c = 0; c < num_classes; ++c)
    correct += out.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  // F1 per class from the confusion counts; zero denominators score 0 and
  // are flagged.
  auto class_f1 = [&](int c) {
    long tp = out.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    long fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += out.confusion[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      fn += out.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(o)];
    }
    if (tp + fp == 0 || tp + fn == 0 || tp == 0) {
      if (tp + fp == 0 || tp + fn == 0) out.f1_zero_division = true;
      return 0.0;
    }
    double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
  };

  if (num_classes == 2) {
    out.f1_kind = "binary";
    out.f1 = class_f1(1);
  } else {
    out.f1_kind = "macro";
    double acc = 0.0;
    for (int c = 0; c < num_classes; ++c) acc += class_f1(c);
    out.f1 = acc / static_cast<double>(num_classes);
  }

  // AUC: class-1 scores for binary; one-vs-rest macro over classes with
  // both positives and negatives otherwise.
  if (num_classes == 2) {
    std::vector<double> s1(n);
    for (std::size_t i = 0; i < n; ++i) s1[i] = scores[i * 2 + 1];
    out.auc = binary_auc(labels, s1);
  } else {
    double acc = 0.0;
    int counted = 0;
    std::vector<int> ovr(n);
    std::vector<double> sc(n);
    for (int c = 0; c < num_classes; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        ovr[i] = labels[i] == c ? 1 : 0;
        sc[i] = scores[i * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(c)];
      }
      if (auto a = binary_auc(ovr, sc)) {
        acc += *a;
        ++counted;
      }
    }
    if (counted > 0) out.auc = acc / counted;
  }
  return out;
}

// Scores every test bag with the model (softmax probabilities) and reduces.
inline EvalResult evaluate(const ModelParams& params, const BagDataset& test) {
  require(!test.bags.empty(), ErrorCode::config, "evaluate: empty test set");
  const int c = test.num_classes;
  std::vector<int> labels(test.bags.size());
  std::vector<double> scores(test.bags.size() * static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < test.bags.size(); ++i) {
    labels[i] = test.bags[i].label;
    ForwardAux aux = forward_loss(params, test.bags[i]);
    std::copy(aux.probs.begin(), aux.probs.end(),
              scores.begin() + i * static_cast<std::size_t>(c));
  }
  return evaluate_scores(labels, scores, c);
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // (n-1)-denominator sample deviation; 0 when n == 1
  int n = 0;
  bool single_run = false;
};

inline MeanStd aggregate_runs(std::span<const double> values) {
  require(!values.empty(), ErrorCode::config, "aggregate_runs: no runs");
  MeanStd out;
  out.n = static_cast<int>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(out.n);
  if (out.n == 1) {
    out.single_run = true;
    out.std = 0.0;
    return out;
  }
  double ss = 0.0;
  for (double v : values) {
    double d = v - out.mean;
    ss += d * d;
  }
  out.std = std::sqrt(ss / static_cast<double>(out.n - 1));
  return out;
}

} // namespace fedmil
