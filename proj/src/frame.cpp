#include "copilot/stats/frame.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace copilot::stats {

bool Frame::is_categorical(const std::string& name) const {
  return std::holds_alternative<std::vector<std::string>>(column(name));
}

Frame& Frame::add_numeric(const std::string& name, std::vector<double> values) {
  if (values.size() != rows_) throw InvalidArgument("column '" + name + "' has the wrong length");
  columns_[name] = std::move(values);
  return *this;
}

Frame& Frame::add_categorical(const std::string& name, std::vector<std::string> values) {
  if (values.size() != rows_) throw InvalidArgument("column '" + name + "' has the wrong length");
  columns_[name] = std::move(values);
  return *this;
}

const Frame::Column& Frame::column(const std::string& name) const {
  const auto it = columns_.find(name);
  if (it == columns_.end()) throw InvalidArgument("no column named '" + name + "'");
  return it->second;
}

const std::vector<double>& Frame::numeric(const std::string& name) const {
  const auto* v = std::get_if<std::vector<double>>(&column(name));
  if (!v) throw InvalidArgument("column '" + name + "' is not numeric");
  return *v;
}

const std::vector<std::string>& Frame::categorical(const std::string& name) const {
  const auto* v = std::get_if<std::vector<std::string>>(&column(name));
  if (!v) throw InvalidArgument("column '" + name + "' is not categorical");
  return *v;
}

std::vector<std::string> Frame::levels(const std::string& name) const {
  const auto& v = categorical(name);
  std::set<std::string> s(v.begin(), v.end());
  return {s.begin(), s.end()};
}

Frame Frame::filter(const std::vector<bool>& keep) const {
  if (keep.size() != rows_) throw InvalidArgument("filter mask has the wrong length");
  Frame out(static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)));
  for (const auto& [name, col] : columns_) {
    std::visit(
        [&](const auto& values) {
          std::decay_t<decltype(values)> kept;
          kept.reserve(out.rows_);
          for (std::size_t i = 0; i < rows_; ++i) {
            if (keep[i]) kept.push_back(values[i]);
          }
          out.columns_[name] = std::move(kept);
        },
        col);
  }
  return out;
}

void append_variable(const Frame& f, const std::string& name, std::vector<std::string>& names,
                     std::vector<Eigen::VectorXd>& cols) {
  const auto n = static_cast<Eigen::Index>(f.rows());
  if (!f.is_categorical(name)) {
    const auto& v = f.numeric(name);
    Eigen::VectorXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = v[static_cast<std::size_t>(i)];
      if (!std::isfinite(x)) throw InvalidArgument("column '" + name + "' has a non-finite value");
      c[i] = x;
    }
    names.push_back(name);
    cols.push_back(std::move(c));
    return;
  }
  const auto& v = f.categorical(name);
  const auto levels = f.levels(name);
  for (std::size_t l = 1; l < levels.size(); ++l) {
    Eigen::VectorXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) c[i] = v[static_cast<std::size_t>(i)] == levels[l] ? 1.0 : 0.0;
    names.push_back(name + "=" + levels[l]);
    cols.push_back(std::move(c));
  }
}

std::vector<int> cluster_ids(const std::vector<std::string>& keys, int* n_clusters) {
  std::map<std::string, int> index;
  for (const auto& k : keys) index.emplace(k, 0);
  int next = 0;
  for (auto& [k, id] : index) id = next++;
  std::vector<int> out;
  out.reserve(keys.size());
  for (const auto& k : keys) out.push_back(index.at(k));
  if (n_clusters) *n_clusters = next;
  return out;
}

Design build_design(const RegressionSpec& spec, const Frame& f) {
  if (f.rows() == 0) throw InvalidArgument("no observations");
  const auto n = static_cast<Eigen::Index>(f.rows());
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> cols;
  if (spec.intercept) {
    names.push_back("(intercept)");
    cols.push_back(Eigen::VectorXd::Ones(n));
  }
  if (spec.treatment) append_variable(f, *spec.treatment, names, cols);
  for (const auto& c : spec.covariates) append_variable(f, c, names, cols);
  if (spec.strata) {
    if (!f.is_categorical(*spec.strata)) throw InvalidArgument("strata column must be categorical");
    append_variable(f, *spec.strata, names, cols);
  }

  Design d;
  d.X.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) d.X.col(static_cast<Eigen::Index>(j)) = cols[j];
  d.columns = std::move(names);
  const auto& y = f.numeric(spec.outcome);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.y[i] = y[static_cast<std::size_t>(i)];
    if (!std::isfinite(d.y[i])) throw InvalidArgument("outcome '" + spec.outcome + "' has a non-finite value");
  }
  if (spec.cluster) d.clusters = cluster_ids(f.categorical(*spec.cluster), &d.n_clusters);
  return d;
}

}  // namespace copilot::stats
