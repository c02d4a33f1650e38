#pragma once

// One independent binary classifier per label: a linear scorer over hashed
// n-gram features, trained with class-balanced sigmoid cross-entropy.

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "copilot/features.hpp"
#include "copilot/labels.hpp"

namespace copilot {

inline constexpr double kF1Gate = 0.60;

// (1 - beta) / (1 - beta^n): the inverse effective number of samples.
// beta == 0 gives 1 for every n.
double effective_number_weight(std::size_t n, double beta);

// Raw per-class weights, then the same rescaled to mean 1. Counts of zero
// and beta outside [0, 1) throw InvalidArgument.
std::vector<double> class_balanced_raw_weights(std::span<const std::size_t> counts, double beta);
std::vector<double> class_balanced_weights(std::span<const std::size_t> counts, double beta);

// ---------------------------------------------------------------------------
// Data splits

struct SplitSizes {
  std::size_t train = 0, validation = 0, test = 0;
};

// 6:1:3 with validation and train rounded to nearest; test takes the rest.
SplitSizes split_sizes(std::size_t n);

template <typename T>
struct Split {
  std::vector<T> train, validation, test;
};

template <typename T>
Split<T> split_dataset(std::vector<T> data, std::uint64_t seed) {
  if (data.size() < 10) throw InvalidArgument("need at least 10 examples to split");
  const auto sizes = split_sizes(data.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  Split<T> out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < sizes.train                        ? out.train
                : k < sizes.train + sizes.validation ? out.validation
                                                      : out.test;
    dst.push_back(std::move(data[order[k]]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct Example {
  SparseFeatures x;
  bool y = false;
};

std::vector<Example> make_examples(std::span<const LabeledUtterance> data, std::string_view label,
                                   std::uint64_t hash_seed = kDefaultHashSeed);

struct Hyperparameters {
  double beta = 0.9;
  double learning_rate = 1.0;
  double l2 = 1e-5;
  int epochs = 40;
  std::size_t batch_size = 16;

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

struct HyperparameterGrid {
  std::vector<double> betas{0.0, 0.9, 0.99, 0.999};
  std::vector<double> learning_rates{4.0, 16.0, 64.0};
  double l2 = 1e-5;
  int epochs = 40;
  std::size_t batch_size = 16;
};

struct LossWeights {
  double negative = 1.0;
  double positive = 1.0;
};

// Class-balanced weights for a label with the given class counts.
LossWeights loss_weights(std::size_t negatives, std::size_t positives, double beta);

// The training problem restricted to features that occur in it. Column j
// of x() is hashed feature features()[j].
class CompactProblem {
 public:
  explicit CompactProblem(std::span<const Example> examples);

  const Eigen::SparseMatrix<double, Eigen::RowMajor>& x() const { return x_; }
  const Eigen::VectorXd& y() const { return y_; }
  const std::vector<std::uint32_t>& features() const { return features_; }
  std::size_t positives() const { return positives_; }
  std::size_t rows() const { return static_cast<std::size_t>(x_.rows()); }
  std::size_t cols() const { return features_.size(); }

 private:
  Eigen::SparseMatrix<double, Eigen::RowMajor> x_;
  Eigen::VectorXd y_;
  std::vector<std::uint32_t> features_;
  std::size_t positives_ = 0;
};

// Mean weighted sigmoid cross-entropy plus (l2/2)|w|^2 (bias unpenalized).
// theta = [bias, w_0 .. w_{cols-1}].
double balanced_loss(const CompactProblem& p, const Eigen::VectorXd& theta, LossWeights w,
                     double l2);
Eigen::VectorXd balanced_loss_gradient(const CompactProblem& p, const Eigen::VectorXd& theta,
                                       LossWeights w, double l2);

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const Hyperparameters& h, const std::string& label);
  const Hyperparameters& hyperparameters() const { return hyper_; }

 private:
  Hyperparameters hyper_;
};

struct ClassifierModel {
  std::string label;
  std::uint64_t hash_seed = kDefaultHashSeed;
  double bias = 0.0;
  std::vector<float> weights;  // kFeatureDim entries
  double threshold = 0.5;      // on probability; positive when score > threshold
  Hyperparameters hyper;
  std::uint64_t train_seed = 0;
  double validation_loss = 0.0;
  double test_f1 = 0.0;

  double logit(const SparseFeatures& x) const;
  double score(const SparseFeatures& x) const;  // probability
  bool predict(const SparseFeatures& x) const { return score(x) > threshold; }
  bool passes_gate() const { return test_f1 >= kF1Gate; }
};

// Minibatch SGD over the compact problem; threshold left at 0.5.
ClassifierModel train_once(std::span<const Example> train, std::string_view label,
                           const Hyperparameters& hyper, std::uint64_t seed,
                           std::uint64_t hash_seed = kDefaultHashSeed);

// Mean of the per-class average unweighted cross-entropies, so the number
// is comparable across betas. A class absent from `data` is left out.
double class_averaged_loss(const ClassifierModel& m, std::span<const Example> data);

struct ThresholdChoice {
  double threshold = 0.5;
  double f1 = 0.0;
  std::string warning;
};
ThresholdChoice tune_threshold(const ClassifierModel& m, std::span<const Example> validation);

struct GridPoint {
  Hyperparameters hyper;
  double validation_loss = 0.0;
};

struct TrainResult {
  ClassifierModel model;
  std::vector<GridPoint> grid;
  std::vector<std::string> warnings;
};

// Sweeps the grid, keeps the lowest validation loss, then tunes the
// threshold on validation F1.
TrainResult train(std::span<const Example> train, std::span<const Example> validation,
                  std::string_view label, const HyperparameterGrid& grid, std::uint64_t seed,
                  std::uint64_t hash_seed = kDefaultHashSeed);

struct F1Result {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::string warning;  // set when F1 is undefined
};

F1Result f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
F1Result evaluate(const ClassifierModel& m, std::span<const Example> test);

struct LabelTraining {
  TrainResult result;  // result.model.test_f1 is filled in
  F1Result test;
  SplitSizes sizes;
};

// The full protocol for one label: 6:1:3 split with `seed`, grid sweep,
// threshold tuning, then F1 on the held-out test split.
LabelTraining train_label(std::span<const LabeledUtterance> data, std::string_view label,
                          std::uint64_t seed, const HyperparameterGrid& grid = {},
                          std::uint64_t hash_seed = kDefaultHashSeed);

// ---------------------------------------------------------------------------
// Model sets

class ModelSet {
 public:
  void add(ClassifierModel model);
  std::size_t size() const { return models_.size(); }
  const std::vector<ClassifierModel>& models() const { return models_; }
  const ClassifierModel* find(std::string_view label) const;

  std::vector<std::string> labels() const;
  std::vector<std::string> gated_labels() const;  // passing the F1 gate

  // Every label whose score exceeds its threshold.
  std::set<std::string> predict(std::span<const ChatMessage> context, std::string_view target) const;

  // Flags per model, in models() order, for prefeaturized input. All models
  // in a set share one hash seed.
  void predict_into(const SparseFeatures& x, std::vector<char>& fired) const;
  std::uint64_t hash_seed() const;

 private:
  void repack();

  std::vector<ClassifierModel> models_;
  // Row f holds every model's weight for feature f, so scoring touches
  // one cache line per feature.
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> packed_;
};

// Binary model container; see docs/formats.md.
void save_model(std::ostream& out, const ClassifierModel& m);
ClassifierModel load_model(std::istream& in);
// <dir>/<label>.tclm for every model.
void save_models(const std::filesystem::path& dir, const ModelSet& set);
ModelSet load_models(const std::filesystem::path& dir);

// train_label() for every taxonomy label, all sharing one split.
ModelSet train_all_labels(std::span<const LabeledUtterance> data, std::uint64_t seed,
                          const HyperparameterGrid& grid = {},
                          std::vector<LabelTraining>* details = nullptr);

}  // namespace copilot
