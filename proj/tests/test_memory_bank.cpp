#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onering/memory_bank.hpp"
#include "support/fd.hpp"

namespace onering {
namespace {

Tensor uniform_predictions(std::size_t rows, std::size_t classes) {
  return Tensor({rows, classes}, 1.0 / static_cast<double>(classes));
}

TEST(MemoryBank, UpdateThenRead) {
  MemoryBank bank(4, 2, 3);
  const Tensor f = Tensor::matrix({{3, 4}});
  const Tensor p = Tensor::matrix({{0.2, 0.3, 0.5}});
  const std::vector<std::size_t> idx{2};
  bank.update(idx, f, p);
  EXPECT_EQ(bank.features().at(2, 0), 0.6);
  EXPECT_EQ(bank.features().at(2, 1), 0.8);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(bank.predictions().at(2, c), p.at(0, c));
}

TEST(MemoryBank, StoredFeaturesAreUnitNorm) {
  Rng rng(4);
  MemoryBank bank(10, 5, 3);
  std::vector<std::size_t> all(10);
  std::iota(all.begin(), all.end(), 0);
  bank.update(all, testing::random_matrix(10, 5, rng, 7.0), uniform_predictions(10, 3));
  for (std::size_t r = 0; r < 10; ++r) {
    double n = 0.0;
    for (double v : bank.features().row(r)) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
  }
}

TEST(MemoryBank, StalenessCounters) {
  MemoryBank bank(5, 2, 2);
  const std::vector<std::size_t> first{0, 1};
  bank.update(first, Tensor({2, 2}, 1.0), uniform_predictions(2, 2));
  EXPECT_EQ(bank.staleness()[0], 0u);
  EXPECT_EQ(bank.staleness()[4], 1u);
  std::vector<std::size_t> all(5);
  std::iota(all.begin(), all.end(), 0);
  bank.update(all, Tensor({5, 2}, 1.0), uniform_predictions(5, 2));
  for (auto s : bank.staleness()) EXPECT_EQ(s, 0u);
}

TEST(MemoryBank, RejectsBadUpdates) {
  MemoryBank bank(3, 2, 2);
  const std::vector<std::size_t> out_of_range{3};
  EXPECT_THROW(bank.update(out_of_range, Tensor({1, 2}, 1.0), uniform_predictions(1, 2)), Error);
  const std::vector<std::size_t> one{0};
  EXPECT_THROW(bank.update(one, Tensor({1, 2}, 1.0), Tensor::matrix({{0.9, 0.9}})), Error);
  EXPECT_THROW(bank.update(one, Tensor({1, 3}, 1.0), uniform_predictions(1, 2)), Error);
}

TEST(Knn, OrthogonalBankUsesTieRule) {
  MemoryBank bank(4, 4, 2);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  const std::vector<std::size_t> all{0, 1, 2, 3};
  bank.update(all, eye, uniform_predictions(4, 2));
  const std::vector<double> e0{1, 0, 0, 0};
  const auto nn = bank.knn(e0, 1, 0);
  ASSERT_EQ(nn.size(), 1u);
  EXPECT_EQ(nn[0], 1u);  // all others tie at 0, lowest index wins
}

TEST(Knn, KEqualsBankSizeMinusOneReturnsAllOthers) {
  Rng rng(2);
  MemoryBank bank(6, 3, 2);
  std::vector<std::size_t> all(6);
  std::iota(all.begin(), all.end(), 0);
  bank.update(all, testing::random_matrix(6, 3, rng), uniform_predictions(6, 2));
  auto nn = bank.knn(bank.features().row(2), 5, 2);
  std::sort(nn.begin(), nn.end());
  EXPECT_EQ(nn, (std::vector<std::size_t>{0, 1, 3, 4, 5}));
  EXPECT_THROW(bank.knn(bank.features().row(2), 6, 2), Error);
  EXPECT_THROW(bank.knn(bank.features().row(2), 0), Error);
}

std::vector<std::size_t> brute_force_knn(const Tensor& raw, std::span<const double> q, std::size_t k,
                                         std::size_t self) {
  std::vector<std::pair<double, std::size_t>> sims;
  double nq = 0.0;
  for (double v : q) nq += v * v;
  for (std::size_t j = 0; j < raw.rows(); ++j) {
    if (j == self) continue;
    double d = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
      d += q[c] * raw.at(j, c);
      nb += raw.at(j, c) * raw.at(j, c);
    }
    sims.push_back({d / std::sqrt(nq * nb), j});
  }
  std::stable_sort(sims.begin(), sims.end(), [](auto& a, auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(sims[i].second);
  return out;
}

TEST(Knn, SixSampleBankMatchesBruteForce) {
  Rng rng(6);
  const Tensor raw = testing::random_matrix(6, 3, rng);
  MemoryBank bank(6, 3, 2);
  std::vector<std::size_t> all(6);
  std::iota(all.begin(), all.end(), 0);
  bank.update(all, raw, uniform_predictions(6, 2));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(bank.knn(raw.row(i), 2, i), brute_force_knn(raw, raw.row(i), 2, i));
}

TEST(Knn, TwentyRandomVectorsMatchBruteForce) {
  for (int s = 0; s < 10; ++s) {
    Rng rng(200 + s);
    const Tensor raw = testing::random_matrix(20, 4, rng);
    MemoryBank bank(20, 4, 2);
    std::vector<std::size_t> all(20);
    std::iota(all.begin(), all.end(), 0);
    bank.update(all, raw, uniform_predictions(20, 2));
    for (std::size_t i = 0; i < 20; ++i)
      EXPECT_EQ(bank.knn(raw.row(i), 5, i), brute_force_knn(raw, raw.row(i), 5, i));
    const auto q = testing::random_vector(4, rng);
    EXPECT_EQ(bank.knn(q.values(), 5), brute_force_knn(raw, q.values(), 5, 99));
  }
}

}  // namespace
}  // namespace onering
