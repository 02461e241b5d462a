#include "beta/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "beta/rng.hpp"

namespace beta {

LabeledVectorSet::LabeledVectorSet(Domain domain, Tensor features)
    : domain_(domain), features_(std::move(features)) {
  if (features_.rank() != 2) {
    throw std::invalid_argument("LabeledVectorSet: features must be N x d");
  }
}

LabeledVectorSet::LabeledVectorSet(Domain domain, Tensor features,
                                   std::vector<int> true_labels)
    : LabeledVectorSet(domain, std::move(features)) {
  if (true_labels.size() != features_.rows()) {
    throw std::invalid_argument("LabeledVectorSet: label count " +
                                std::to_string(true_labels.size()) +
                                " does not match row count " +
                                std::to_string(features_.rows()));
  }
  for (int l : true_labels) {
    if (l < 0) throw std::invalid_argument("LabeledVectorSet: negative label");
  }
  true_labels_ = std::move(true_labels);
}

const std::vector<int>& LabeledVectorSet::supervised_labels() const {
  if (domain_ != Domain::source) {
    throw std::logic_error(
        "supervised_labels: target-domain ground truth is reserved for "
        "diagnostics");
  }
  if (true_labels_.empty()) {
    throw std::logic_error("supervised_labels: set is unlabeled");
  }
  return true_labels_;
}

std::size_t LabeledVectorSet::label_classes() const {
  std::size_t k = 0;
  for (int l : true_labels_) k = std::max(k, static_cast<std::size_t>(l) + 1);
  return k;
}

const Tensor& LabeledVectorSet::pseudo_labels() const {
  if (!pseudo_labels_) throw std::logic_error("pseudo_labels: none stored");
  return *pseudo_labels_;
}

void LabeledVectorSet::set_pseudo_labels(Tensor soft) {
  if (soft.rows() != size()) {
    throw std::invalid_argument("set_pseudo_labels: row count mismatch");
  }
  for (std::size_t i = 0; i < soft.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < soft.cols(); ++j) {
      if (soft.at(i, j) < 0.0) {
        throw std::invalid_argument("set_pseudo_labels: negative mass");
      }
      s += soft.at(i, j);
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("set_pseudo_labels: row " + std::to_string(i) +
                                  " sums to " + std::to_string(s));
    }
  }
  pseudo_labels_ = std::move(soft);
}

void LabeledVectorSet::set_clean_prob(std::vector<double> p) {
  if (p.size() != size()) {
    throw std::invalid_argument("set_clean_prob: count mismatch");
  }
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("set_clean_prob: value outside [0,1]");
    }
  }
  clean_prob_ = std::move(p);
}

const std::vector<int>& DiagnosticsAccess::true_labels(
    const LabeledVectorSet& set) {
  if (!set.has_true_labels()) {
    throw std::logic_error("DiagnosticsAccess: set has no ground truth");
  }
  return set.true_labels_;
}

namespace {

LabeledVectorSet shuffled(Domain domain, const Tensor& x,
                          const std::vector<int>& y, Rng& rng) {
  const std::size_t n = x.rows();
  auto perm = rng.permutation(n);
  Tensor xs = Tensor::zeros({n, x.cols()});
  std::vector<int> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) xs.at(i, j) = x.at(perm[i], j);
    ys[i] = y[perm[i]];
  }
  return LabeledVectorSet(domain, std::move(xs), std::move(ys));
}

}  // namespace

LabeledVectorSet gen_two_moons(std::size_t n, double noise_sigma,
                               double rotation_deg, std::uint64_t seed,
                               Domain domain) {
  if (n < 2) throw std::invalid_argument("gen_two_moons: need n >= 2");
  if (noise_sigma < 0.0) {
    throw std::invalid_argument("gen_two_moons: negative noise sigma");
  }
  Rng rng(mix_seed(seed));
  const std::size_t n0 = (n + 1) / 2;
  const double rad = rotation_deg * std::numbers::pi / 180.0;
  const double cr = std::cos(rad), sr = std::sin(rad);

  Tensor x = Tensor::zeros({n, 2});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i < n0 ? 0 : 1;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double px, py;
    if (label == 0) {
      px = std::cos(t);
      py = std::sin(t);
    } else {
      px = 1.0 - std::cos(t);
      py = std::sin(t) - 0.5;
    }
    px += noise_sigma * rng.normal();
    py += noise_sigma * rng.normal();
    x.at(i, 0) = cr * px - sr * py;
    x.at(i, 1) = sr * px + cr * py;
    y[i] = label;
  }
  return shuffled(domain, x, y, rng);
}

std::pair<LabeledVectorSet, LabeledVectorSet> gen_gaussian_shift(
    std::size_t n, std::size_t d, std::size_t num_classes, double mean_shift,
    std::uint64_t seed) {
  if (num_classes < 2) {
    throw std::invalid_argument("gen_gaussian_shift: need >= 2 classes");
  }
  if (d < 1) throw std::invalid_argument("gen_gaussian_shift: need d >= 1");
  if (n < num_classes) {
    throw std::invalid_argument("gen_gaussian_shift: need n >= num_classes");
  }
  Rng rng(mix_seed(seed));

  std::vector<std::vector<double>> means(num_classes, std::vector<double>(d));
  std::vector<std::vector<double>> dirs(num_classes, std::vector<double>(d));
  for (std::size_t k = 0; k < num_classes; ++k) {
    for (std::size_t j = 0; j < d; ++j) means[k][j] = rng.uniform(-4.0, 4.0);
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dirs[k][j] = rng.normal();
      norm += dirs[k][j] * dirs[k][j];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      dirs[k].assign(d, 0.0);
      dirs[k][0] = 1.0;
    } else {
      for (std::size_t j = 0; j < d; ++j) dirs[k][j] /= norm;
    }
  }

  std::vector<std::size_t> counts(num_classes, n / num_classes);
  for (std::size_t k = 0; k < n % num_classes; ++k) ++counts[k];

  auto draw = [&](bool shifted) {
    Tensor x = Tensor::zeros({n, d});
    std::vector<int> y(n);
    std::size_t row = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      for (std::size_t c = 0; c < counts[k]; ++c, ++row) {
        for (std::size_t j = 0; j < d; ++j) {
          double base = means[k][j] + (shifted ? mean_shift * dirs[k][j] : 0.0);
          x.at(row, j) = base + rng.normal();
        }
        y[row] = static_cast<int>(k);
      }
    }
    return std::pair<Tensor, std::vector<int>>(std::move(x), std::move(y));
  };

  auto [xs, ys] = draw(false);
  auto [xt, yt] = draw(true);
  LabeledVectorSet source = shuffled(Domain::source, xs, ys, rng);
  LabeledVectorSet target = shuffled(Domain::target, xt, yt, rng);
  return {std::move(source), std::move(target)};
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? "" : f.substr(b, e - b + 1);
  }
  return out;
}

double parse_cell(const std::string& cell, const std::string& path, int line,
                  const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw std::runtime_error(path + ": line " + std::to_string(line) +
                             ": cannot parse '" + cell + "' in column " + column);
  }
  return v;
}

}  // namespace

LabeledVectorSet load_csv(const std::string& path,
                          const std::string& label_column, Domain domain) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error(path + ": empty file");
  }
  const std::vector<std::string> header = split_fields(line);
  std::size_t label_idx = header.size();
  if (!label_column.empty()) {
    auto it = std::find(header.begin(), header.end(), label_column);
    if (it == header.end()) {
      throw std::runtime_error(path + ": no column named '" + label_column + "'");
    }
    label_idx = static_cast<std::size_t>(it - header.begin());
  } else {
    auto it = std::find(header.begin(), header.end(), "label");
    if (it != header.end()) label_idx = static_cast<std::size_t>(it - header.begin());
  }
  const bool has_labels = label_idx < header.size();
  const std::size_t d = header.size() - (has_labels ? 1 : 0);
  if (d == 0) throw std::runtime_error(path + ": no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  int line_no = 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected " + std::to_string(header.size()) +
                               " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const double v = parse_cell(fields[j], path, line_no, header[j]);
      if (j == label_idx) {
        if (v < 0.0 || std::abs(v - std::round(v)) > 1e-9) {
          throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                                   ": label '" + fields[j] +
                                   "' is not a non-negative integer");
        }
        labels.push_back(static_cast<int>(std::llround(v)));
      } else {
        values.push_back(v);
      }
    }
    ++rows;
  }
  if (rows == 0) throw std::runtime_error(path + ": no data rows");

  Tensor features({rows, d}, std::move(values));
  if (has_labels) {
    return LabeledVectorSet(domain, std::move(features), std::move(labels));
  }
  return LabeledVectorSet(domain, std::move(features));
}

void save_csv(const LabeledVectorSet& set, const std::string& path,
              bool include_labels) {
  if (include_labels && !set.has_true_labels()) {
    throw std::invalid_argument("save_csv: set has no labels to write");
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open csv for writing: " + path);

  for (std::size_t j = 0; j < set.dim(); ++j) {
    if (j) out << ',';
    out << 'f' << j;
  }
  if (include_labels) out << ",label";
  out << '\n';

  const std::vector<int>* labels =
      include_labels ? &DiagnosticsAccess::true_labels(set) : nullptr;
  char buf[40];
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t j = 0; j < set.dim(); ++j) {
      if (j) out << ',';
      std::snprintf(buf, sizeof buf, "%.17g", set.features().at(i, j));
      out << buf;
    }
    if (labels) out << ',' << (*labels)[i];
    out << '\n';
  }
  if (!out) throw std::runtime_error("csv write failed: " + path);
}

ColumnStats feature_stats(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  if (n == 0) throw std::invalid_argument("feature_stats: empty matrix");
  ColumnStats s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += features.at(i, j);
  for (std::size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = features.at(i, j) - s.mean[j];
      s.stddev[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j)
    s.stddev[j] = std::max(std::sqrt(s.stddev[j] / static_cast<double>(n)), 1e-12);
  return s;
}

void standardize_inplace(LabeledVectorSet& set, const ColumnStats& stats) {
  if (stats.mean.size() != set.dim()) {
    throw std::invalid_argument("standardize: stats dimension mismatch");
  }
  Tensor& x = set.mutable_features();
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j)
      x.at(i, j) = (x.at(i, j) - stats.mean[j]) / stats.stddev[j];
}

Tensor one_hot(const std::vector<int>& labels, std::size_t num_classes) {
  Tensor t = Tensor::zeros({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) +
                                  " outside 0.." + std::to_string(num_classes - 1));
    }
    t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return t;
}

}  // namespace beta
