#include <cmath>
#include <random>
#include <sstream>

#include "copilot/classifier.hpp"
#include "copilot/labeling.hpp"
#include "doctest.h"

using namespace copilot;

namespace {

double norm2(const SparseFeatures& f) {
  double s = 0;
  for (double v : f.value) s += v * v;
  return s;
}

// Targets carrying "retry" are positive for ask_retry.
std::vector<LabeledUtterance> toy_corpus(std::size_t n, std::uint64_t seed) {
  const char* pos[] = {"can you try that again", "let's try it again please", "try again slowly"};
  const char* neg[] = {"the answer is 12", "good job today", "what is 3 times 4",
                       "draw a number line first", "let's look at problem 2"};
  std::mt19937_64 rng(seed);
  std::vector<LabeledUtterance> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledUtterance u;
    u.context = {{Sender::tutor, 1, 0, "What is 7 x 8?"}, {Sender::student, 2, 0, "i got 54"}};
    if (rng() % 4 == 0) {
      u.target = pos[rng() % 3];
      u.labels = {"ask_retry"};
    } else {
      u.target = neg[rng() % 5];
      u.labels = {"give_answer"};
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("tokenizer") {
    CHECK(tokenize("What's 12 + 3?") == std::vector<std::string>{"what's", "<num>", "<num>", "?"});
    CHECK(tokenize("1,000 or 3.5.") == std::vector<std::string>{"<num>", "or", "<num>"});
    CHECK(tokenize("WOW!!") == std::vector<std::string>{"wow", "!", "!"});
    CHECK(tokenize("") .empty());
  }

  TEST_CASE("blocks are scaled to norm 1/sqrt(2) each") {
    std::vector<ChatMessage> ctx{{Sender::student, 1, 0, "i think it is 42"},
                                 {Sender::tutor, 2, 0, "ok let me see"}};
    const auto f = featurize(ctx, "Can you explain how you got 42?");
    CHECK(std::is_sorted(f.index.begin(), f.index.end()));
    CHECK(f.index.size() == f.value.size());
    CHECK(norm2(f) == doctest::Approx(1.0).epsilon(1e-9));
    const auto alone = featurize({}, "Can you explain how you got 42?");
    CHECK(norm2(alone) == doctest::Approx(1.0).epsilon(1e-12));
    for (auto i : f.index) CHECK(i < kFeatureDim);

    std::vector<std::uint32_t> c{5, 5, 9}, t{9, 11};
    const auto merged = finish_features(c, t);
    REQUIRE(merged.index == std::vector<std::uint32_t>{5, 9, 11});
    CHECK(merged.value[0] == doctest::Approx(0.5));
    CHECK(merged.value[1] == doctest::Approx(1.0));
    CHECK(merged.value[2] == doctest::Approx(0.5));
  }

  TEST_CASE("hash seed and namespaces change the features") {
    std::vector<ChatMessage> ctx{{Sender::tutor, 1, 0, "try again"}};
    const auto a = featurize(ctx, "try again");
    const auto b = featurize(ctx, "try again", 99);
    CHECK(a.index != b.index);
    std::vector<ChatMessage> student{{Sender::student, 1, 0, "try again"}};
    CHECK(featurize(student, "try again").index != a.index);
    CHECK(featurize(ctx, "try again").index == a.index);
  }
}

TEST_SUITE("classifier") {
  TEST_CASE("class-balanced weights: limits and formula") {
    const std::size_t counts[] = {900, 100};
    const auto flat = class_balanced_weights(counts, 0.0);
    CHECK(flat[0] == 1.0);
    CHECK(flat[1] == 1.0);
    const double beta = 0.99;
    const double w900 = (1 - beta) / (1 - std::pow(beta, 900));
    const double w100 = (1 - beta) / (1 - std::pow(beta, 100));
    const auto raw = class_balanced_raw_weights(counts, beta);
    CHECK(raw[0] == doctest::Approx(w900).epsilon(1e-12));
    CHECK(raw[1] == doctest::Approx(w100).epsilon(1e-12));
    const auto w = class_balanced_weights(counts, beta);
    CHECK(w[0] + w[1] == doctest::Approx(2.0));
    CHECK(w[1] / w[0] == doctest::Approx(w100 / w900));
    const auto near_one = class_balanced_raw_weights(counts, 1.0 - 1e-12);
    CHECK(near_one[0] * 900 == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(near_one[1] * 100 == doctest::Approx(1.0).epsilon(1e-8));
    const std::size_t with_zero[] = {5, 0};
    CHECK_THROWS_AS(class_balanced_weights(with_zero, 0.9), InvalidArgument);
    CHECK_THROWS_AS(effective_number_weight(5, 1.0), InvalidArgument);
  }

  TEST_CASE("loss and gradient against a direct computation") {
    const auto data = toy_corpus(40, 3);
    const auto ex = make_examples(data, "ask_retry");
    CompactProblem p(ex);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0, 0.7);
    Eigen::VectorXd theta(static_cast<Eigen::Index>(p.cols()) + 1);
    for (auto& v : theta) v = nd(rng);
    const LossWeights w{0.6, 2.4};
    const double l2 = 0.01;

    double direct = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      double z = theta[0];
      for (std::size_t k = 0; k < ex[i].x.index.size(); ++k) {
        const auto col = std::lower_bound(p.features().begin(), p.features().end(), ex[i].x.index[k]) -
                         p.features().begin();
        z += theta[col + 1] * ex[i].x.value[k];
      }
      const double s = 1 / (1 + std::exp(-z));
      direct += ex[i].y ? -w.positive * std::log(s) : -w.negative * std::log(1 - s);
    }
    direct = direct / static_cast<double>(ex.size()) + 0.5 * l2 * theta.tail(theta.size() - 1).squaredNorm();
    CHECK(balanced_loss(p, theta, w, l2) == doctest::Approx(direct).epsilon(1e-12));

    const auto g = balanced_loss_gradient(p, theta, w, l2);
    const double h = 1e-6;
    double worst = 0;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      auto up = theta, dn = theta;
      up[j] += h;
      dn[j] -= h;
      const double fd = (balanced_loss(p, up, w, l2) - balanced_loss(p, dn, w, l2)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[j]));
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("split sizes") {
    auto s = split_sizes(3000);
    CHECK(s.train == 1800);
    CHECK(s.validation == 300);
    CHECK(s.test == 900);
    s = split_sizes(15);
    CHECK(s.train + s.validation + s.test == 15);
    std::vector<int> v(100);
    std::iota(v.begin(), v.end(), 0);
    const auto a = split_dataset(v, 1), b = split_dataset(v, 1);
    CHECK(a.train == b.train);
    CHECK(a.test.size() == 30);
    CHECK_THROWS_AS(split_dataset(std::vector<int>(5), 1), InvalidArgument);
  }

  TEST_CASE("F1 edge cases") {
    const auto r = f1_from_counts(8, 2, 2, 88);
    CHECK(r.precision == doctest::Approx(0.8));
    CHECK(r.recall == doctest::Approx(0.8));
    CHECK(r.f1 == doctest::Approx(0.8));
    const auto none = f1_from_counts(0, 0, 0, 10);
    CHECK(none.f1 == 0.0);
    CHECK_FALSE(none.warning.empty());
  }

  TEST_CASE("threshold tuning picks a separating cut") {
    ClassifierModel m;
    m.label = "ask_retry";
    m.weights.assign(kFeatureDim, 0.0f);
    m.weights[1] = 2.0f;
    std::vector<Example> val;
    for (int i = 0; i < 10; ++i) {
      Example e;
      e.x.index = {1};
      e.x.value = {i < 3 ? 1.0 : -1.0};
      e.y = i < 3;
      val.push_back(e);
    }
    const auto t = tune_threshold(m, val);
    CHECK(t.f1 == doctest::Approx(1.0));
    m.threshold = t.threshold;
    CHECK(evaluate(m, val).f1 == doctest::Approx(1.0));
  }

  TEST_CASE("training separates a toy label; the set predicts consistently") {
    const auto data = toy_corpus(400, 11);
    HyperparameterGrid grid;
    grid.betas = {0.0, 0.99};
    grid.learning_rates = {4.0, 16.0};
    grid.epochs = 10;
    const auto lt = train_label(data, "ask_retry", 7, grid);
    CHECK(lt.test.f1 == doctest::Approx(1.0));
    CHECK(lt.result.grid.size() == 4);
    CHECK(lt.result.model.passes_gate());
    CHECK(lt.sizes.train == 240);

    ModelSet set;
    set.add(lt.result.model);
    auto other = lt.result.model;
    other.label = "give_answer";
    other.test_f1 = 0.3;
    set.add(other);
    CHECK(set.gated_labels() == std::vector<std::string>{"ask_retry"});
    std::vector<ChatMessage> ctx{{Sender::student, 1, 0, "i got 54"}};
    const auto fired = set.predict(ctx, "can you try that again");
    CHECK(fired.count("ask_retry") == 1);
    std::vector<char> flags;
    set.predict_into(featurize(ctx, "can you try that again"), flags);
    REQUIRE(flags.size() == 2);
    CHECK(flags[0] == 1);
    CHECK(set.predict(ctx, "the answer is 12").count("ask_retry") == 0);
  }

  TEST_CASE("model files round trip and reject damage") {
    ClassifierModel m;
    m.label = "give_answer";
    m.weights.assign(kFeatureDim, 0.0f);
    m.weights[7] = 1.5f;
    m.weights[kFeatureDim - 1] = -0.25f;
    m.bias = -0.3;
    m.threshold = 0.42;
    m.test_f1 = 0.91;
    m.hyper.beta = 0.99;
    std::stringstream ss;
    save_model(ss, m);
    const auto bytes = ss.str();
    CHECK(bytes.substr(0, 4) == "TCLM");
    const auto back = load_model(ss);
    CHECK(back.label == m.label);
    CHECK(back.weights == m.weights);
    CHECK(back.bias == m.bias);
    CHECK(back.threshold == m.threshold);
    CHECK(back.hyper == m.hyper);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_model(truncated), IoError);
    auto bad = bytes;
    bad[0] = 'X';
    std::istringstream magic(bad);
    CHECK_THROWS_AS(load_model(magic), IoError);
  }

  TEST_CASE("unknown labels are rejected") {
    CHECK(is_known_label("during_exit_ticket"));
    CHECK_FALSE(is_known_label("praise"));
    CHECK(all_label_names().size() == 15);
    CHECK_THROWS_AS(require_known_label("praise"), InvalidArgument);
  }
}

TEST_SUITE("labeling") {
  TEST_CASE("counts per session skip student messages and gated-out labels") {
    const auto data = toy_corpus(300, 2);
    HyperparameterGrid grid;
    grid.betas = {0.9};
    grid.learning_rates = {16.0};
    grid.epochs = 10;
    ModelSet set;
    set.add(train_label(data, "ask_retry", 1, grid).result.model);
    auto weak = set.models()[0];
    weak.label = "give_answer";
    weak.test_f1 = 0.1;
    set.add(weak);

    SessionRecord s;
    s.session_id = "s-1";
    s.tutor_id = "T1";
    s.messages = {{Sender::tutor, 1, 0, "What is 7 x 8?"},
                  {Sender::student, 2, 0, "i got 54"},
                  {Sender::tutor, 3, 0, "can you try that again"},
                  {Sender::student, 4, 0, "can you try that again"},
                  {Sender::tutor, 5, 0, "good job today"}};
    std::vector<SessionRecord> sessions{s};
    const auto labels = label_sessions(set, sessions);
    CHECK(labels.labels == std::vector<std::string>{"ask_retry"});
    REQUIRE(labels.sessions.size() == 1);
    CHECK(labels.sessions[0].tutor_messages == 3);
    CHECK(labels.total("ask_retry") == 1);
    CHECK(labels.frequency("ask_retry") == doctest::Approx(1.0 / 3));
    CHECK_THROWS_AS(labels.label_index("give_answer"), InvalidArgument);

    std::stringstream csv;
    write_label_counts_csv(csv, labels);
    const auto back = read_label_counts_csv(csv);
    CHECK(back.sessions[0].counts == labels.sessions[0].counts);

    std::stringstream jsonl;
    write_jsonl(jsonl, sessions);
    jsonl << "garbage\n";
    std::size_t errors = 0;
    const auto streamed = label_corpus(set, jsonl, [&](const IoError&) { ++errors; });
    CHECK(errors == 1);
    CHECK(streamed.skipped_lines == 1);
    CHECK(streamed.total("ask_retry") == 1);
  }
}
