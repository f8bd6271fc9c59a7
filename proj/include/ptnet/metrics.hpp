// Copyright 2026 The ptnet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ptnet/error.hpp"
#include "ptnet/grid.hpp"

namespace ptnet {

/// Mean over points of -log softmax(logits)[label], with dL/dlogits.
template <typename T>
struct LossResult {
  double loss = 0.0;
  Grid<T> grad;
};

template <typename T>
LossResult<T> cross_entropy(const Grid<T>& logits, const std::vector<int>& labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw InvalidInput("cross_entropy: label count does not match logit rows");
  LossResult<T> out{0.0, Grid<T>(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> p(c);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InvalidInput("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(logits(i, j)));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += (p[j] = std::exp(static_cast<double>(logits(i, j)) - mx));
    out.loss += (std::log(sum) + mx - static_cast<double>(logits(i, static_cast<std::size_t>(y)))) * inv_n;
    for (std::size_t j = 0; j < c; ++j) {
      const double g = p[j] / sum - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0);
      out.grad(i, j) = static_cast<T>(g * inv_n);
    }
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Grid<T>& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

/// Confusion-matrix metrics. confusion[t][p] counts truth t predicted as p.
/// A class absent from both truth and prediction has NaN IoU and is left
/// out of mIoU; mAcc averages over classes present in the truth.
struct MetricsReport {
  double oa = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  std::vector<double> per_class_iou;
  std::vector<double> per_class_acc;
  std::vector<std::vector<long>> confusion;

  std::string to_json() const {
    std::ostringstream os;
    os.precision(17);
    auto num = [&](double v) {
      if (std::isnan(v)) {
        os << "null";
      } else {
        os << v;
      }
    };
    os << "{\n  \"oa\": ";
    num(oa);
    os << ",\n  \"macc\": ";
    num(macc);
    os << ",\n  \"miou\": ";
    num(miou);
    os << ",\n  \"per_class_iou\": [";
    for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
      if (c) os << ", ";
      num(per_class_iou[c]);
    }
    os << "],\n  \"confusion\": [";
    for (std::size_t t = 0; t < confusion.size(); ++t) {
      os << (t ? ", [" : "[");
      for (std::size_t p = 0; p < confusion[t].size(); ++p) os << (p ? ", " : "") << confusion[t][p];
      os << "]";
    }
    os << "]\n}\n";
    return os.str();
  }

  /// class,iou,acc,support rows.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "class,iou,acc,support\n";
    for (std::size_t c = 0; c < confusion.size(); ++c) {
      long support = 0;
      for (long v : confusion[c]) support += v;
      os << c << ',';
      if (!std::isnan(per_class_iou[c])) os << per_class_iou[c];
      os << ',';
      if (!std::isnan(per_class_acc[c])) os << per_class_acc[c];
      os << ',' << support << '\n';
    }
    os << "overall,,," << '\n';
    os << "oa," << oa << ",,\nmacc," << macc << ",,\nmiou," << miou << ",,\n";
    return os.str();
  }
};

inline std::vector<std::vector<long>> confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred,
                                                       std::size_t classes) {
  if (truth.size() != pred.size()) throw InvalidArgument("metrics: prediction/truth length mismatch");
  std::vector<std::vector<long>> m(classes, std::vector<long>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
        static_cast<std::size_t>(pred[i]) >= classes) {
      throw InvalidArgument("metrics: label outside the class range");
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return m;
}

inline MetricsReport metrics_from_confusion(std::vector<std::vector<long>> confusion) {
  const std::size_t c = confusion.size();
  MetricsReport r;
  r.per_class_iou.assign(c, std::numeric_limits<double>::quiet_NaN());
  r.per_class_acc.assign(c, std::numeric_limits<double>::quiet_NaN());
  long total = 0, correct = 0;
  std::vector<long> row(c, 0), col(c, 0);
  for (std::size_t t = 0; t < c; ++t)
    for (std::size_t p = 0; p < c; ++p) {
      row[t] += confusion[t][p];
      col[p] += confusion[t][p];
      total += confusion[t][p];
      if (t == p) correct += confusion[t][p];
    }
  if (total == 0) throw InvalidArgument("metrics: no points");
  r.oa = static_cast<double>(correct) / static_cast<double>(total);
  double acc_sum = 0.0, iou_sum = 0.0;
  int acc_n = 0, iou_n = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const long tp = confusion[k][k];
    const long fn = row[k] - tp;
    const long fp = col[k] - tp;
    if (row[k] > 0) {
      r.per_class_acc[k] = static_cast<double>(tp) / static_cast<double>(row[k]);
      acc_sum += r.per_class_acc[k];
      ++acc_n;
    }
    if (tp + fp + fn > 0) {
      r.per_class_iou[k] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      iou_sum += r.per_class_iou[k];
      ++iou_n;
    }
  }
  r.macc = acc_sum / acc_n;
  r.miou = iou_sum / iou_n;
  r.confusion = std::move(confusion);
  return r;
}

inline MetricsReport evaluate_predictions(const std::vector<int>& truth, const std::vector<int>& pred,
                                          std::size_t classes) {
  return metrics_from_confusion(confusion_matrix(truth, pred, classes));
}

/// One object of a part-segmentation set: its category, the part ids that
/// category owns, and per-point truth and prediction.
struct PartObject {
  int category = 0;
  std::vector<int> parts;
  std::vector<int> truth;
  std::vector<int> pred;
};

struct PartMiou {
  double category_miou = 0.0;
  double instance_miou = 0.0;
};

/// Instance mIoU: mean over objects of each object's mean part IoU.
/// Category mIoU: mean over categories of the mean over their objects.
/// Parts absent from both an object's truth and prediction are skipped.
inline PartMiou part_miou(const std::vector<PartObject>& objects) {
  if (objects.empty()) throw InvalidArgument("part_miou: no objects");
  std::map<int, std::pair<double, int>> per_cat;
  double ins_sum = 0.0;
  for (const auto& obj : objects) {
    if (obj.truth.size() != obj.pred.size()) throw InvalidArgument("part_miou: prediction/truth length mismatch");
    double sum = 0.0;
    int counted = 0;
    for (int part : obj.parts) {
      long tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < obj.truth.size(); ++i) {
        const bool t = obj.truth[i] == part, p = obj.pred[i] == part;
        tp += t && p;
        fp += !t && p;
        fn += t && !p;
      }
      if (tp + fp + fn == 0) continue;
      sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      ++counted;
    }
    if (counted == 0) throw InvalidArgument("part_miou: object with no part present in truth or prediction");
    const double obj_miou = sum / counted;
    ins_sum += obj_miou;
    auto& acc = per_cat[obj.category];
    acc.first += obj_miou;
    ++acc.second;
  }
  PartMiou out;
  out.instance_miou = ins_sum / static_cast<double>(objects.size());
  for (const auto& [cat, acc] : per_cat) out.category_miou += acc.first / acc.second;
  out.category_miou /= static_cast<double>(per_cat.size());
  return out;
}

}  // namespace ptnet
