#include "dpl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dpl/assignment.hpp"
#include "dpl/kmeans.hpp"

namespace dpl {

namespace eval {

std::vector<int> TruthReader::labels(const GidDataset& dataset, std::span<const std::size_t> rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto i : rows) out.push_back(label(dataset, i));
  return out;
}

}  // namespace eval

MetricsReport joint_metrics(std::span<const int> predictions, std::span<const int> truth, int n_ind,
                            int n_ood) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("predictions and truth differ in length");
  }
  if (predictions.empty()) throw std::invalid_argument("nothing to evaluate");
  const int c = n_ind + n_ood;
  auto check = [c](int v, const char* what) {
    if (v < 0 || v >= c) throw std::out_of_range(std::string(what) + " label outside [0, N+M)");
  };
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check(predictions[i], "predicted");
    check(truth[i], "true");
  }

  MetricsReport r;
  // Square M x M table so the mapping is a full bijection over OOD indices.
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n_ood, n_ood);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predictions[i] >= n_ind && truth[i] >= n_ind) counts(predictions[i] - n_ind, truth[i] - n_ind) += 1.0;
  }
  std::vector<int> to_class(static_cast<std::size_t>(c));
  for (int k = 0; k < n_ind; ++k) to_class[static_cast<std::size_t>(k)] = k;
  if (n_ood > 0) {
    const auto pick = solve_max_assignment(counts);
    for (int p = 0; p < n_ood; ++p) {
      const int t = n_ind + pick[static_cast<std::size_t>(p)];
      to_class[static_cast<std::size_t>(n_ind + p)] = t;
      r.mapping[n_ind + p] = t;
    }
  }

  std::vector<double> tp(static_cast<std::size_t>(c), 0.0), pred_n(tp), true_n(tp);
  std::size_t hit_ind = 0, n_ind_s = 0, hit_ood = 0, n_ood_s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = to_class[static_cast<std::size_t>(predictions[i])];
    const int t = truth[i];
    pred_n[static_cast<std::size_t>(p)] += 1.0;
    true_n[static_cast<std::size_t>(t)] += 1.0;
    const bool hit = p == t;
    if (hit) tp[static_cast<std::size_t>(t)] += 1.0;
    if (t < n_ind) {
      ++n_ind_s;
      hit_ind += hit;
    } else {
      ++n_ood_s;
      hit_ood += hit;
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  r.ind_acc = ratio(hit_ind, n_ind_s);
  r.ood_acc = ratio(hit_ood, n_ood_s);
  r.all_acc = ratio(hit_ind + hit_ood, truth.size());

  r.per_class_f1.assign(static_cast<std::size_t>(c), 0.0);
  double sum_all = 0.0, sum_ood = 0.0;
  int cnt_all = 0, cnt_ood = 0;
  for (int k = 0; k < c; ++k) {
    const auto u = static_cast<std::size_t>(k);
    if (pred_n[u] + true_n[u] == 0.0) continue;
    const double f1 = 2.0 * tp[u] / (pred_n[u] + true_n[u]);
    r.per_class_f1[u] = f1;
    sum_all += f1;
    ++cnt_all;
    if (k >= n_ind) {
      sum_ood += f1;
      ++cnt_ood;
    }
  }
  r.all_f1 = cnt_all ? sum_all / cnt_all : 0.0;
  r.ood_f1 = cnt_ood ? sum_ood / cnt_ood : 0.0;
  return r;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["ind_acc"] = report.ind_acc;
  j["ood_acc"] = report.ood_acc;
  j["ood_f1"] = report.ood_f1;
  j["all_acc"] = report.all_acc;
  j["all_f1"] = report.all_f1;
  nlohmann::ordered_json mapping = nlohmann::ordered_json::object();
  for (const auto& [from, to] : report.mapping) mapping[std::to_string(from)] = to;
  j["mapping"] = mapping;
  j["per_class_f1"] = report.per_class_f1;
  return j.dump(2);
}

namespace {

struct Centroids {
  std::vector<int> ids;
  Matrix centers;
  std::map<int, Eigen::Index> row_of;
};

Centroids centroids_of(const Matrix& x, std::span<const int> labels) {
  Centroids c;
  std::set<int> ids(labels.begin(), labels.end());
  c.ids.assign(ids.begin(), ids.end());
  c.centers = Matrix::Zero(static_cast<Eigen::Index>(c.ids.size()), x.cols());
  std::vector<double> n(c.ids.size(), 0.0);
  for (std::size_t k = 0; k < c.ids.size(); ++k) c.row_of[c.ids[k]] = static_cast<Eigen::Index>(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = c.row_of[labels[i]];
    c.centers.row(r) += x.row(static_cast<Eigen::Index>(i));
    n[static_cast<std::size_t>(r)] += 1.0;
  }
  for (std::size_t k = 0; k < n.size(); ++k) c.centers.row(static_cast<Eigen::Index>(k)) /= n[k];
  return c;
}

}  // namespace

Compactness compactness(const Matrix& embeddings, std::span<const int> labels) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw std::invalid_argument("embeddings and labels differ in length");
  }
  const auto c = centroids_of(embeddings, labels);
  const auto k = static_cast<Eigen::Index>(c.ids.size());
  if (k < 2) throw std::invalid_argument("compactness needs at least two classes");
  Compactness out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.intra += (embeddings.row(static_cast<Eigen::Index>(i)) - c.centers.row(c.row_of.at(labels[i]))).norm();
  }
  out.intra /= static_cast<double>(labels.size());
  if (!(out.intra > 0.0)) throw std::invalid_argument("degenerate classes: intra-class distance is zero");
  for (Eigen::Index a = 0; a < k; ++a) {
    double s = 0.0;
    for (Eigen::Index b = 0; b < k; ++b) {
      if (a != b) s += (c.centers.row(a) - c.centers.row(b)).norm();
    }
    out.inter += s / static_cast<double>(k - 1);
  }
  out.inter /= static_cast<double>(k);
  out.ratio = out.inter / out.intra;
  return out;
}

CompactnessReport compactness_report(const Matrix& embeddings, std::span<const int> labels,
                                     int n_ind) {
  std::vector<Eigen::Index> ind_rows, ood_rows;
  std::vector<int> ind_labels, ood_labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < n_ind) {
      ind_rows.push_back(static_cast<Eigen::Index>(i));
      ind_labels.push_back(labels[i]);
    } else {
      ood_rows.push_back(static_cast<Eigen::Index>(i));
      ood_labels.push_back(labels[i]);
    }
  }
  CompactnessReport r;
  r.ind = compactness(embeddings(ind_rows, Eigen::all), ind_labels);
  r.ood = compactness(embeddings(ood_rows, Eigen::all), ood_labels);
  r.all = compactness(embeddings, labels);
  return r;
}

double silhouette(const Matrix& embeddings, std::span<const int> assignments) {
  const auto n = embeddings.rows();
  if (static_cast<std::size_t>(n) != assignments.size()) {
    throw std::invalid_argument("embeddings and assignments differ in length");
  }
  std::map<int, std::size_t> col;
  for (int a : assignments) col.emplace(a, 0);
  if (col.size() < 2) throw std::invalid_argument("silhouette needs at least two clusters");
  std::size_t next = 0;
  for (auto& [id, c] : col) c = next++;
  std::vector<std::size_t> cluster(assignments.size());
  std::vector<double> size(col.size(), 0.0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    cluster[i] = col[assignments[i]];
    size[cluster[i]] += 1.0;
  }
  // Summed distance from each sample to each cluster.
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(col.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (embeddings.row(i) - embeddings.row(j)).norm();
      sums(i, static_cast<Eigen::Index>(cluster[static_cast<std::size_t>(j)])) += d;
      sums(j, static_cast<Eigen::Index>(cluster[static_cast<std::size_t>(i)])) += d;
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto own = cluster[static_cast<std::size_t>(i)];
    if (size[own] <= 1.0) continue;
    const double a = sums(i, static_cast<Eigen::Index>(own)) / (size[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < size.size(); ++k) {
      if (k != own) b = std::min(b, sums(i, static_cast<Eigen::Index>(k)) / size[k]);
    }
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

int estimate_k(const Matrix& embeddings, int k_max, std::uint64_t seed) {
  if (k_max < 2) throw std::invalid_argument("k_max must be at least 2");
  if (k_max > embeddings.rows()) {
    throw std::invalid_argument("k_max exceeds the number of samples");
  }
  KMeansOptions opt;
  opt.seed = seed;
  const auto km = kmeans(embeddings, k_max, opt);
  std::vector<double> sizes(static_cast<std::size_t>(k_max), 0.0);
  for (int a : km.assignments) sizes[static_cast<std::size_t>(a)] += 1.0;
  const double threshold = static_cast<double>(embeddings.rows()) / k_max;
  return static_cast<int>(std::count_if(sizes.begin(), sizes.end(), [&](double s) { return s >= threshold; }));
}

Projection project_2d(const Matrix& embeddings, const Matrix& prototypes) {
  if (embeddings.cols() < 2) throw std::invalid_argument("projection needs dimension >= 2");
  if (embeddings.rows() < 1) throw std::invalid_argument("nothing to project");
  if (prototypes.size() > 0 && prototypes.cols() != embeddings.cols()) {
    throw std::invalid_argument("prototype width differs from embeddings");
  }
  const Eigen::RowVectorXd mean = embeddings.colwise().mean();
  const Matrix centered = embeddings.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(embeddings.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto& values = eig.eigenvalues();  // ascending
  const double total = values.sum();
  const auto d = values.size();
  Projection p;
  Eigen::MatrixXd axes(embeddings.cols(), 2);
  if (!(total > 0.0) || values[d - 2] <= 1e-12 * total) {
    p.degenerate = true;
    axes.setZero();
    axes(0, 0) = 1.0;
    axes(1, 1) = 1.0;
    p.explained_variance = total > 0.0 ? (cov(0, 0) + cov(1, 1)) / total : 0.0;
  } else {
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
      Eigen::Index big = 0;
      v.cwiseAbs().maxCoeff(&big);
      if (v[big] < 0.0) v = -v;  // fixed sign for reproducible output
      axes.col(k) = v;
    }
    p.explained_variance = (values[d - 1] + values[d - 2]) / total;
  }
  p.samples = centered * axes;
  if (prototypes.size() > 0) p.prototypes = (prototypes.rowwise() - mean) * axes;
  else p.prototypes = Matrix(0, 2);
  return p;
}

Projection export_projection(const Matrix& embeddings, std::span<const int> labels,
                             const Matrix& prototypes, const std::filesystem::path& path) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw std::invalid_argument("embeddings and labels differ in length");
  }
  auto p = project_2d(embeddings, prototypes);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "# explained_variance=" << p.explained_variance << ",degenerate=" << (p.degenerate ? 1 : 0) << "\n";
  out << "x,y,label,kind\n";
  for (Eigen::Index i = 0; i < p.samples.rows(); ++i) {
    out << p.samples(i, 0) << ',' << p.samples(i, 1) << ',' << labels[static_cast<std::size_t>(i)] << ",sample\n";
  }
  for (Eigen::Index i = 0; i < p.prototypes.rows(); ++i) {
    out << p.prototypes(i, 0) << ',' << p.prototypes(i, 1) << ',' << i << ",prototype\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
  return p;
}

}  // namespace dpl
