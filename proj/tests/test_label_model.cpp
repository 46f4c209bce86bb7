#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "multirater/errors.hpp"
#include "multirater/label_model.hpp"
#include "multirater/rng.hpp"

using namespace multirater;

namespace {

Eigen::VectorXi labels_of(std::initializer_list<int> values) {
  Eigen::VectorXi v(static_cast<int>(values.size()));
  int i = 0;
  for (int x : values) v[i++] = x;
  return v;
}

Eigen::VectorXd random_distribution(RandomStream& stream, int k) {
  Eigen::VectorXd p(k);
  for (int i = 0; i < k; ++i) p[i] = stream.gamma(1.0);
  return p / p.sum();
}

}  // namespace

TEST_CASE("consensus_distribution counts votes") {
  CHECK(consensus_distribution(labels_of({0, 0, 0, 0, 0, 0}), 4)
            .isApprox(Eigen::Vector4d(1, 0, 0, 0), 1e-12));
  CHECK(consensus_distribution(labels_of({0, 0, 0, 1, 1, 1}), 4)
            .isApprox(Eigen::Vector4d(0.5, 0.5, 0, 0), 1e-12));
  const Eigen::VectorXd dist = consensus_distribution(labels_of({0, 1, 1, 2, 3, 1}), 4);
  CHECK(dist[0] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(dist[1] == doctest::Approx(3.0 / 6).epsilon(1e-12));
  CHECK(dist[2] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(dist[3] == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK_THROWS_AS(consensus_distribution(labels_of({0, 4}), 4), InputDomainError);
  CHECK_THROWS_AS(consensus_distribution(labels_of({0, -1}), 4), InputDomainError);
}

TEST_CASE("consensus_distribution sums to one and is permutation-equivariant") {
  RandomStream stream = RandomStream::derive(7, {1});
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 3 + static_cast<int>(stream.next_u64() % 4);
    const int r = 2 + static_cast<int>(stream.next_u64() % 7);
    Eigen::VectorXi labels(r);
    for (int i = 0; i < r; ++i) labels[i] = static_cast<int>(stream.next_u64() % k);
    const Eigen::VectorXd dist = consensus_distribution(labels, k);
    CHECK(dist.sum() == doctest::Approx(1.0).epsilon(1e-12));

    // Cyclic class permutation permutes the output identically.
    Eigen::VectorXi permuted(r);
    for (int i = 0; i < r; ++i) permuted[i] = (labels[i] + 1) % k;
    const Eigen::VectorXd dist_perm = consensus_distribution(permuted, k);
    for (int c = 0; c < k; ++c) {
      CHECK(dist_perm[(c + 1) % k] == doctest::Approx(dist[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("majority_vote breaks ties toward the lowest index") {
  CHECK(majority_vote(Eigen::Vector4d(1, 0, 0, 0)) == 0);
  CHECK(majority_vote(Eigen::Vector4d(0.5, 0.5, 0, 0)) == 0);
  CHECK(majority_vote(consensus_distribution(labels_of({0, 1, 1, 2, 3, 1}), 4)) == 1);
  CHECK(majority_vote(Eigen::Vector4d(0, 0.25, 0.375, 0.375)) == 2);
}

TEST_CASE("label_variance closed forms") {
  CHECK(label_variance(Eigen::Vector4d(1, 0, 0, 0)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(label_variance(Eigen::Vector4d(0.25, 0.25, 0.25, 0.25)) ==
        doctest::Approx(0.75).epsilon(1e-12));
  CHECK(label_variance(Eigen::Vector4d(0.5, 0.5, 0, 0)) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("label_variance is permutation-invariant and maximal at uniform") {
  RandomStream stream = RandomStream::derive(11, {2});
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(stream.next_u64() % 5);
    Eigen::VectorXd p = random_distribution(stream, k);
    const double var = label_variance(p);
    CHECK(var >= -1e-12);
    CHECK(var <= 1.0 - 1.0 / k + 1e-12);
    std::reverse(p.begin(), p.end());
    CHECK(label_variance(p) == doctest::Approx(var).epsilon(1e-12));
  }
  CHECK(label_variance(Eigen::VectorXd::Constant(5, 0.2)) ==
        doctest::Approx(1.0 - 1.0 / 5).epsilon(1e-12));
}

TEST_CASE("precision clamps at unanimity") {
  Eigen::Vector4d half(0.5, 0.5, 0, 0);
  CHECK(precision(half) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(precision(Eigen::Vector4d(1, 0, 0, 0), 1e-3) == doctest::Approx(1000.0).epsilon(1e-9));
  CHECK(precision(consensus_distribution(labels_of({0, 1, 1, 2, 3, 1}), 4)) ==
        doctest::Approx(1.5).epsilon(1e-9));
  CHECK_THROWS_AS(precision(half, 0.0), InputDomainError);
}

TEST_CASE("consensus_sample_weight follows exp(-var)") {
  CHECK(consensus_sample_weight(Eigen::Vector4d(1, 0, 0, 0)) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(consensus_sample_weight(Eigen::Vector4d(0.25, 0.25, 0.25, 0.25)) ==
        doctest::Approx(std::exp(-0.75)).epsilon(1e-9));
  CHECK(consensus_sample_weight(Eigen::Vector4d(0.5, 0.5, 0, 0)) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("consensus_sample_weight decreases in variance") {
  RandomStream stream = RandomStream::derive(13, {3});
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd a = random_distribution(stream, 4);
    const Eigen::VectorXd b = random_distribution(stream, 4);
    const double wa = consensus_sample_weight(a);
    const double wb = consensus_sample_weight(b);
    CHECK(wa > std::exp(-(1.0 - 0.25)) - 1e-12);
    CHECK(wa <= 1.0 + 1e-12);
    if (label_variance(a) < label_variance(b)) {
      CHECK(wa >= wb);
    }
  }
}

TEST_CASE("rater_sample_weight is the inverse consensus contribution") {
  CHECK(rater_sample_weight(labels_of({0, 0, 0, 0, 0, 0}), 0, 4) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rater_sample_weight(labels_of({1, 0, 0, 0, 0, 0}), 0, 4) ==
        doctest::Approx(6.0).epsilon(1e-12));
  CHECK(rater_sample_weight(labels_of({0, 1, 1, 2, 3, 1}), 1, 4) ==
        doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("rater_sample_weight stays in [1, R]") {
  RandomStream stream = RandomStream::derive(17, {4});
  for (int trial = 0; trial < 200; ++trial) {
    const int r = 2 + static_cast<int>(stream.next_u64() % 7);
    Eigen::VectorXi labels(r);
    for (int i = 0; i < r; ++i) labels[i] = static_cast<int>(stream.next_u64() % 4);
    const int rater = static_cast<int>(stream.next_u64() % r);
    const double w = rater_sample_weight(labels, rater, 4);
    CHECK(w >= 1.0 - 1e-12);
    CHECK(w <= r + 1e-12);
    const bool unanimous = (labels.array() == labels[rater]).all();
    if (unanimous) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
    if (w == doctest::Approx(1.0).epsilon(1e-12)) CHECK(unanimous);
  }
}

TEST_CASE("observed_confusion matches the spec examples") {
  SUBCASE("unanimous class 0 everywhere") {
    std::vector<RatingRecord> records(3);
    for (int i = 0; i < 3; ++i) {
      records[i].sample_id = i;
      records[i].rater_labels = labels_of({0, 0, 0, 0, 0, 0});
    }
    const ConfusionTensor tensor = observed_confusion(records, 4);
    for (const Eigen::MatrixXd& m : tensor) {
      CHECK(m(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(m.sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("single split sample") {
    std::vector<RatingRecord> records(1);
    records[0].rater_labels = labels_of({0, 0, 0, 1, 1, 1});
    const ConfusionTensor tensor = observed_confusion(records, 4);
    CHECK(tensor[0](0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tensor[0](1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tensor[0].sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tensor[3](0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tensor[3](1, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("two samples average the per-sample outer products") {
    std::vector<RatingRecord> records(2);
    records[0].rater_labels = labels_of({0, 0, 0, 1, 1, 1});
    records[1].rater_labels = labels_of({2, 2, 3, 3, 3, 3});
    const ConfusionTensor tensor = observed_confusion(records, 4);
    // Brute-force accumulation, independent loop order.
    const int n_raters = 6;
    for (int r = 0; r < n_raters; ++r) {
      Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
      for (const RatingRecord& rec : records) {
        const Eigen::VectorXd dist = consensus_distribution(rec.rater_labels, 4);
        for (int i = 0; i < 4; ++i) expected(i, rec.rater_labels[r]) += dist[i] / 2.0;
      }
      CHECK(tensor[r].isApprox(expected, 1e-12));
    }
  }
  SUBCASE("empty dataset is rejected") {
    CHECK_THROWS_AS(observed_confusion({}, 4), InputDomainError);
  }
}

TEST_CASE("observed_confusion marginals recover rater label frequencies") {
  RandomStream stream = RandomStream::derive(23, {5});
  std::vector<RatingRecord> records(40);
  for (int i = 0; i < 40; ++i) {
    Eigen::VectorXi labels(6);
    for (int r = 0; r < 6; ++r) labels[r] = static_cast<int>(stream.next_u64() % 4);
    records[i].sample_id = i;
    records[i].rater_labels = labels;
  }
  const ConfusionTensor tensor = observed_confusion(records, 4);
  for (int r = 0; r < 6; ++r) {
    CHECK((tensor[r].array() >= -1e-15).all());
    CHECK(tensor[r].sum() == doctest::Approx(1.0).epsilon(1e-9));
    const Eigen::VectorXd column_marginal = tensor[r].colwise().sum();
    Eigen::VectorXd freq = Eigen::VectorXd::Zero(4);
    for (const RatingRecord& rec : records) freq[rec.rater_labels[r]] += 1.0 / 40.0;
    CHECK(column_marginal.isApprox(freq, 1e-9));
  }
}
