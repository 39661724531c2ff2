#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "rdl/errors.hpp"
#include "rdl/experiments.hpp"

namespace rdl::exp {

ActivationMatrix export_activations(const tg::Checkpoint &checkpoint, const arch::NetworkSpec &spec,
                                    const data::Dataset &data, const data::Normalizer &norm,
                                    const std::vector<int> &class_ids) {
  const auto counts = data.class_counts();
  for (int c : class_ids) {
    if (c < 0 || c >= spec.num_classes || c >= static_cast<int>(counts.size()) || counts[c] == 0) {
      throw UnknownClass("class " + std::to_string(c) + " has no samples in the dataset");
    }
  }
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (std::find(class_ids.begin(), class_ids.end(), data.labels[i]) != class_ids.end()) chosen.push_back(i);
  }

  tg::Network<float> net(spec, 0);
  net.load_state(checkpoint);
  tg::NoGradGuard guard;
  ActivationMatrix m;
  constexpr std::size_t kBatch = 256;
  for (std::size_t start = 0; start < chosen.size(); start += kBatch) {
    const std::size_t end = std::min(chosen.size(), start + kBatch);
    std::span<const std::size_t> idx(chosen.data() + start, end - start);
    tg::Var<float> feats;
    net.forward(data::to_tensor(data, idx, norm), tg::Mode::Eval, nullptr, &feats);
    const int width = feats.shape()[1];
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float *row = feats.value().data() + r * width;
      m.sample_ids.push_back(static_cast<int>(idx[r]));
      m.class_ids.push_back(data.labels[idx[r]]);
      m.features.emplace_back(row, row + width);
    }
  }
  return m;
}

std::vector<ProjectedPoint> project_2d(const ActivationMatrix &matrix) {
  const std::size_t n = matrix.features.size();
  if (n < 3) throw DegenerateData("projection needs at least 3 rows, got " + std::to_string(n));
  const std::size_t d = matrix.features.front().size();
  Eigen::MatrixXd X(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (matrix.features[i].size() != d) throw ShapeMismatch("activation rows differ in length");
    for (std::size_t j = 0; j < d; ++j) X(i, j) = matrix.features[i][j];
  }
  bool identical = true;
  for (std::size_t i = 1; i < n && identical; ++i) identical = matrix.features[i] == matrix.features[0];
  if (identical) throw DegenerateData("all activation rows are identical");
  X.rowwise() -= X.colwise().mean();

  // Principal axes are the right singular vectors of the centered data.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(d, 2);
  const Eigen::Index k = std::min<Eigen::Index>(2, svd.matrixV().cols());
  V.leftCols(k) = svd.matrixV().leftCols(k);
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    V.col(c).cwiseAbs().maxCoeff(&arg);
    if (V(arg, c) < 0) V.col(c) = -V.col(c);
  }
  const Eigen::MatrixXd P = X * V;
  std::vector<ProjectedPoint> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = {matrix.sample_ids[i], P(i, 0), P(i, 1), matrix.class_ids[i]};
  }
  return out;
}

std::vector<int> worst_classes(const std::vector<int> &predictions, const std::vector<int> &labels, int num_classes,
                               int k) {
  if (predictions.size() != labels.size()) throw ShapeMismatch("predictions and labels differ in length");
  std::vector<int> hit(num_classes, 0), total(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++total[labels[i]];
    hit[labels[i]] += predictions[i] == labels[i];
  }
  std::vector<int> present;
  for (int c = 0; c < num_classes; ++c) {
    if (total[c]) present.push_back(c);
  }
  if (k < 1 || k > static_cast<int>(present.size())) {
    throw UnknownClass("cannot pick " + std::to_string(k) + " classes out of " + std::to_string(present.size()));
  }
  std::stable_sort(present.begin(), present.end(), [&](int a, int b) {
    return static_cast<double>(hit[a]) / total[a] < static_cast<double>(hit[b]) / total[b];
  });
  present.resize(k);
  return present;
}

std::string activations_csv(const ActivationMatrix &m) {
  std::string out = "sample_id,class_id";
  const std::size_t d = m.features.empty() ? 0 : m.features.front().size();
  for (std::size_t j = 0; j < d; ++j) out += ",f" + std::to_string(j);
  out += "\n";
  char buf[32];
  for (std::size_t i = 0; i < m.features.size(); ++i) {
    out += std::to_string(m.sample_ids[i]) + "," + std::to_string(m.class_ids[i]);
    for (double v : m.features[i]) {
      std::snprintf(buf, sizeof buf, ",%.9g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::string projection_csv(const std::vector<ProjectedPoint> &points) {
  std::string out = "sample_id,class_id,x,y\n";
  char buf[96];
  for (const auto &p : points) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g\n", p.sample_id, p.class_id, p.x, p.y);
    out += buf;
  }
  return out;
}

}  // namespace rdl::exp
