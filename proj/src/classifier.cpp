#include "copilot/classifier.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace copilot {

double effective_number_weight(std::size_t n, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidArgument("beta must lie in [0, 1)");
  if (n == 0) throw InvalidArgument("class count must be at least 1");
  if (beta == 0.0) return 1.0;
  // -expm1(n log beta) keeps precision when beta^n is close to 1.
  return (1.0 - beta) / -std::expm1(static_cast<double>(n) * std::log(beta));
}

std::vector<double> class_balanced_raw_weights(std::span<const std::size_t> counts, double beta) {
  std::vector<double> w;
  w.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] == 0) {
      throw InvalidArgument("class " + std::to_string(i) + " is absent from the training data");
    }
    w.push_back(effective_number_weight(counts[i], beta));
  }
  return w;
}

std::vector<double> class_balanced_weights(std::span<const std::size_t> counts, double beta) {
  auto w = class_balanced_raw_weights(counts, beta);
  if (w.empty()) return w;
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (auto& v : w) v /= mean;
  return w;
}

SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.train = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(n)));
  s.validation = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  if (s.train + s.validation > n) s.validation = n - s.train;
  s.test = n - s.train - s.validation;
  return s;
}

std::vector<Example> make_examples(std::span<const LabeledUtterance> data, std::string_view label,
                                   std::uint64_t hash_seed) {
  require_known_label(label);
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& u : data) out.push_back({featurize(u.context, u.target, hash_seed), u.has(label)});
  return out;
}

LossWeights loss_weights(std::size_t negatives, std::size_t positives, double beta) {
  if (negatives == 0 || positives == 0) {
    // One class only: nothing to balance.
    return {};
  }
  const std::size_t counts[] = {negatives, positives};
  const auto w = class_balanced_weights(counts, beta);
  return {w[0], w[1]};
}

CompactProblem::CompactProblem(std::span<const Example> examples) {
  for (const auto& e : examples) {
    features_.insert(features_.end(), e.x.index.begin(), e.x.index.end());
  }
  std::sort(features_.begin(), features_.end());
  features_.erase(std::unique(features_.begin(), features_.end()), features_.end());

  std::vector<Eigen::Triplet<double>> triplets;
  y_.resize(static_cast<Eigen::Index>(examples.size()));
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const auto& e = examples[r];
    y_[static_cast<Eigen::Index>(r)] = e.y ? 1.0 : 0.0;
    positives_ += e.y ? 1 : 0;
    for (std::size_t k = 0; k < e.x.index.size(); ++k) {
      const auto f = e.x.index[k];
      const auto col = std::lower_bound(features_.begin(), features_.end(), f) - features_.begin();
      triplets.emplace_back(static_cast<int>(r), static_cast<int>(col), e.x.value[k]);
    }
  }
  x_.resize(static_cast<Eigen::Index>(examples.size()), static_cast<Eigen::Index>(features_.size()));
  x_.setFromTriplets(triplets.begin(), triplets.end());
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// -[y log s(z) + (1-y) log(1-s(z))]
double cross_entropy(double z, bool y) { return y ? softplus(-z) : softplus(z); }

}  // namespace

double balanced_loss(const CompactProblem& p, const Eigen::VectorXd& theta, LossWeights w,
                     double l2) {
  const auto d = static_cast<Eigen::Index>(p.cols());
  const Eigen::VectorXd z = (p.x() * theta.tail(d)).array() + theta[0];
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const bool y = p.y()[i] > 0.5;
    total += (y ? w.positive : w.negative) * cross_entropy(z[i], y);
  }
  const double n = static_cast<double>(std::max<std::size_t>(p.rows(), 1));
  return total / n + 0.5 * l2 * theta.tail(d).squaredNorm();
}

Eigen::VectorXd balanced_loss_gradient(const CompactProblem& p, const Eigen::VectorXd& theta,
                                       LossWeights w, double l2) {
  const auto d = static_cast<Eigen::Index>(p.cols());
  const Eigen::VectorXd z = (p.x() * theta.tail(d)).array() + theta[0];
  Eigen::VectorXd r(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const bool y = p.y()[i] > 0.5;
    r[i] = (y ? w.positive : w.negative) * (sigmoid(z[i]) - (y ? 1.0 : 0.0));
  }
  const double n = static_cast<double>(std::max<std::size_t>(p.rows(), 1));
  Eigen::VectorXd g(d + 1);
  g[0] = r.sum() / n;
  g.tail(d) = (p.x().transpose() * r) / n + l2 * theta.tail(d);
  return g;
}

namespace {

std::string describe(const Hyperparameters& h) {
  std::ostringstream os;
  os << "beta=" << h.beta << " learning_rate=" << h.learning_rate << " l2=" << h.l2
     << " epochs=" << h.epochs << " batch_size=" << h.batch_size;
  return os.str();
}

}  // namespace

TrainingDiverged::TrainingDiverged(const Hyperparameters& h, const std::string& label)
    : Error("training '" + label + "' diverged with " + describe(h)), hyper_(h) {}

double ClassifierModel::logit(const SparseFeatures& x) const {
  double s = 0.0;
  for (std::size_t k = 0; k < x.index.size(); ++k) s += static_cast<double>(weights[x.index[k]]) * x.value[k];
  return bias + s;
}

double ClassifierModel::score(const SparseFeatures& x) const { return sigmoid(logit(x)); }

ClassifierModel train_once(std::span<const Example> train, std::string_view label,
                           const Hyperparameters& hyper, std::uint64_t seed,
                           std::uint64_t hash_seed) {
  if (train.empty()) throw InvalidArgument("empty training set");
  if (hyper.epochs < 1 || hyper.batch_size < 1 || !(hyper.learning_rate > 0) || !(hyper.l2 >= 0)) {
    throw InvalidArgument("bad hyperparameters: " + describe(hyper));
  }
  const CompactProblem p(train);
  if (p.positives() == 0) {
    throw InvalidArgument("label '" + std::string(label) + "' never occurs in the training data");
  }
  const LossWeights lw = loss_weights(p.rows() - p.positives(), p.positives(), hyper.beta);
  const auto& X = p.x();
  const auto n = static_cast<Eigen::Index>(p.rows());

  // w = scale * v, so the L2 shrink is one multiply per step.
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.cols()));
  double scale = 1.0;
  double bias = 0.0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::vector<double> g(hyper.batch_size);
  const double lr = hyper.learning_rate;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(rng)]);
    }
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      double g_bias = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto r = order[k];
        double z = 0.0;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(X, r); it; ++it) {
          z += v[it.col()] * it.value();
        }
        z = bias + scale * z;
        const bool y = p.y()[r] > 0.5;
        g[k - start] = (y ? lw.positive : lw.negative) * (sigmoid(z) - (y ? 1.0 : 0.0)) * inv_b;
        g_bias += g[k - start];
      }
      scale *= 1.0 - lr * hyper.l2;
      if (scale < 1e-6) {
        v *= scale;
        scale = 1.0;
      }
      bias -= lr * g_bias;
      for (std::size_t k = start; k < end; ++k) {
        const double step = lr * g[k - start] / scale;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(X, order[k]); it; ++it) {
          v[it.col()] -= step * it.value();
        }
      }
    }
    if (!std::isfinite(bias) || !std::isfinite(scale) || !v.allFinite()) {
      throw TrainingDiverged(hyper, std::string(label));
    }
  }

  Eigen::VectorXd theta(v.size() + 1);
  theta[0] = bias;
  theta.tail(v.size()) = scale * v;
  if (!std::isfinite(balanced_loss(p, theta, lw, hyper.l2))) {
    throw TrainingDiverged(hyper, std::string(label));
  }

  ClassifierModel m;
  m.label = std::string(label);
  m.hash_seed = hash_seed;
  m.bias = bias;
  m.weights.assign(kFeatureDim, 0.0f);
  for (std::size_t j = 0; j < p.cols(); ++j) {
    m.weights[p.features()[j]] = static_cast<float>(theta[static_cast<Eigen::Index>(j) + 1]);
  }
  m.hyper = hyper;
  m.train_seed = seed;
  return m;
}

double class_averaged_loss(const ClassifierModel& m, std::span<const Example> data) {
  double sum[2] = {0, 0};
  std::size_t count[2] = {0, 0};
  for (const auto& e : data) {
    sum[e.y] += cross_entropy(m.logit(e.x), e.y);
    ++count[e.y];
  }
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c < 2; ++c) {
    if (count[c] == 0) continue;
    total += sum[c] / static_cast<double>(count[c]);
    ++classes;
  }
  return classes ? total / classes : 0.0;
}

F1Result f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  F1Result r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.tn = tn;
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const std::size_t denom = 2 * tp + fp + fn;
  if (denom == 0) {
    r.f1 = 0.0;
    r.warning = "F1 undefined: no positive examples and no positive predictions";
  } else {
    r.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return r;
}

F1Result evaluate(const ClassifierModel& m, std::span<const Example> test) {
  if (test.empty()) throw InvalidArgument("empty test set");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& e : test) {
    const bool yhat = m.predict(e.x);
    if (yhat && e.y) ++tp;
    else if (yhat) ++fp;
    else if (e.y) ++fn;
    else ++tn;
  }
  return f1_from_counts(tp, fp, fn, tn);
}

ThresholdChoice tune_threshold(const ClassifierModel& m, std::span<const Example> validation) {
  std::vector<std::pair<double, bool>> scored;
  std::size_t positives = 0;
  for (const auto& e : validation) {
    scored.emplace_back(m.score(e.x), e.y);
    positives += e.y;
  }
  ThresholdChoice best;
  if (positives == 0) {
    best.warning = "no positive validation examples; F1 undefined, reported as 0; threshold left at 0.5";
    return best;
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  // Predict the top k; thresholds sit midway between distinct scores.
  std::size_t tp = 0, fp = 0;
  best.f1 = -1.0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    (scored[k].second ? tp : fp) += 1;
    if (k + 1 < scored.size() && scored[k + 1].first == scored[k].first) continue;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + positives);
    if (f1 > best.f1) {
      best.f1 = f1;
      best.threshold = k + 1 < scored.size() ? 0.5 * (scored[k].first + scored[k + 1].first)
                                             : scored[k].first * 0.5;
    }
  }
  return best;
}

TrainResult train(std::span<const Example> train_set, std::span<const Example> validation,
                  std::string_view label, const HyperparameterGrid& grid, std::uint64_t seed,
                  std::uint64_t hash_seed) {
  if (grid.betas.empty() || grid.learning_rates.empty()) throw InvalidArgument("empty grid");
  TrainResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  for (double beta : grid.betas) {
    for (double lr : grid.learning_rates) {
      Hyperparameters h{beta, lr, grid.l2, grid.epochs, grid.batch_size};
      auto m = train_once(train_set, label, h, seed, hash_seed);
      const double loss = validation.empty() ? 0.0 : class_averaged_loss(m, validation);
      if (!std::isfinite(loss)) throw TrainingDiverged(h, std::string(label));
      m.validation_loss = loss;
      result.grid.push_back({h, loss});
      if (loss < best_loss) {
        best_loss = loss;
        result.model = std::move(m);
      }
    }
  }
  const auto choice = tune_threshold(result.model, validation);
  result.model.threshold = choice.threshold;
  if (!choice.warning.empty()) result.warnings.push_back(std::string(label) + ": " + choice.warning);
  return result;
}

LabelTraining train_label(std::span<const LabeledUtterance> data, std::string_view label,
                          std::uint64_t seed, const HyperparameterGrid& grid, std::uint64_t hash_seed) {
  require_known_label(label);
  const auto split = split_dataset(std::vector<LabeledUtterance>(data.begin(), data.end()), seed);
  const auto tr = make_examples(split.train, label, hash_seed);
  const auto va = make_examples(split.validation, label, hash_seed);
  const auto te = make_examples(split.test, label, hash_seed);
  LabelTraining out;
  out.sizes = {split.train.size(), split.validation.size(), split.test.size()};
  out.result = train(tr, va, label, grid, seed, hash_seed);
  out.test = evaluate(out.result.model, te);
  out.result.model.test_f1 = out.test.f1;
  if (!out.test.warning.empty()) out.result.warnings.push_back(std::string(label) + ": " + out.test.warning);
  return out;
}

ModelSet train_all_labels(std::span<const LabeledUtterance> data, std::uint64_t seed,
                          const HyperparameterGrid& grid, std::vector<LabelTraining>* details) {
  ModelSet set;
  for (const auto& label : all_label_names()) {
    auto t = train_label(data, label, seed, grid);
    set.add(t.result.model);
    if (details) details->push_back(std::move(t));
  }
  return set;
}

// ---------------------------------------------------------------------------

void ModelSet::add(ClassifierModel model) {
  require_known_label(model.label);
  if (model.weights.size() != kFeatureDim) throw InvalidArgument("model has wrong feature dimension");
  if (!models_.empty() && model.hash_seed != models_.front().hash_seed) {
    throw InvalidArgument("models in one set must share a hash seed");
  }
  for (auto& m : models_) {
    if (m.label == model.label) {
      m = std::move(model);
      repack();
      return;
    }
  }
  models_.push_back(std::move(model));
  repack();
}

void ModelSet::repack() {
  packed_.resize(kFeatureDim, static_cast<Eigen::Index>(models_.size()));
  for (std::size_t j = 0; j < models_.size(); ++j) {
    packed_.col(static_cast<Eigen::Index>(j)) =
        Eigen::Map<const Eigen::VectorXf>(models_[j].weights.data(), kFeatureDim);
  }
}

const ClassifierModel* ModelSet::find(std::string_view label) const {
  for (const auto& m : models_) {
    if (m.label == label) return &m;
  }
  return nullptr;
}

std::vector<std::string> ModelSet::labels() const {
  std::vector<std::string> out;
  for (const auto& m : models_) out.push_back(m.label);
  return out;
}

std::vector<std::string> ModelSet::gated_labels() const {
  std::vector<std::string> out;
  for (const auto& m : models_) {
    if (m.passes_gate()) out.push_back(m.label);
  }
  return out;
}

std::uint64_t ModelSet::hash_seed() const {
  return models_.empty() ? kDefaultHashSeed : models_.front().hash_seed;
}

void ModelSet::predict_into(const SparseFeatures& x, std::vector<char>& fired) const {
  const auto L = static_cast<Eigen::Index>(models_.size());
  // Same summation order and precision as ClassifierModel::logit.
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(L);
  for (std::size_t k = 0; k < x.index.size(); ++k) {
    acc += packed_.row(x.index[k]).transpose().cast<double>() * x.value[k];
  }
  fired.assign(models_.size(), 0);
  for (Eigen::Index j = 0; j < L; ++j) {
    const auto& m = models_[static_cast<std::size_t>(j)];
    const double z = m.bias + acc[j];
    fired[static_cast<std::size_t>(j)] = sigmoid(z) > m.threshold;
  }
}

std::set<std::string> ModelSet::predict(std::span<const ChatMessage> context,
                                        std::string_view target) const {
  std::set<std::string> out;
  if (models_.empty()) return out;
  std::vector<char> fired;
  predict_into(featurize(context, target, hash_seed()), fired);
  for (std::size_t j = 0; j < models_.size(); ++j) {
    if (fired[j]) out.insert(models_[j].label);
  }
  return out;
}

}  // namespace copilot
