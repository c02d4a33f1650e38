#pragma once

// Column store for regression inputs and the design-matrix builder.

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "copilot/stats/least_squares.hpp"

namespace copilot::stats {

class Frame {
 public:
  Frame() = default;
  explicit Frame(std::size_t rows) : rows_(rows) {}

  std::size_t rows() const { return rows_; }
  bool has(const std::string& name) const { return columns_.count(name) > 0; }
  bool is_categorical(const std::string& name) const;

  // Replaces any column of the same name. Sizes must match rows().
  Frame& add_numeric(const std::string& name, std::vector<double> values);
  Frame& add_categorical(const std::string& name, std::vector<std::string> values);

  const std::vector<double>& numeric(const std::string& name) const;
  const std::vector<std::string>& categorical(const std::string& name) const;

  // Sorted distinct values of a categorical column.
  std::vector<std::string> levels(const std::string& name) const;

  Frame filter(const std::vector<bool>& keep) const;

 private:
  using Column = std::variant<std::vector<double>, std::vector<std::string>>;
  const Column& column(const std::string& name) const;

  std::size_t rows_ = 0;
  std::map<std::string, Column> columns_;
};

// `treatment` and `covariates` may name numeric or categorical columns.
// Categoricals expand to one indicator per level except the first level in
// sorted order. `strata` expands the same way (fixed effects). `cluster`
// names a categorical column; without it variance is HC1.
struct RegressionSpec {
  std::string outcome;
  std::optional<std::string> treatment;
  std::vector<std::string> covariates;
  std::optional<std::string> strata;
  std::optional<std::string> cluster;
  bool intercept = true;
};

struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> columns;
  std::vector<int> clusters;  // empty without a cluster column
  int n_clusters = 0;
};

// Appends the columns for one variable (indicators for categoricals).
void append_variable(const Frame& f, const std::string& name, std::vector<std::string>& names,
                     std::vector<Eigen::VectorXd>& cols);

Design build_design(const RegressionSpec& spec, const Frame& f);

// Dense ids 0..G-1 by sorted key.
std::vector<int> cluster_ids(const std::vector<std::string>& keys, int* n_clusters = nullptr);

}  // namespace copilot::stats
