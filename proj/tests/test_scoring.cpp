#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>
#include <thread>

#include "ad_reference.hpp"
#include "metagame/error.hpp"
#include "metagame/scoring.hpp"
#include "test_support.hpp"

using namespace metagame;
using metagame::testing::edges_of;
using metagame::testing::fig4_digraph;
using metagame::testing::game1;

namespace {

const Dataset& default_data() {
  static const Dataset ds = make_default_dataset(game1());
  return ds;
}

std::vector<double> range(int from, int to) {
  std::vector<double> v;
  for (int i = from; i <= to; ++i) v.push_back(i);
  return v;
}

}  // namespace

TEST_CASE("sample mse") {
  Series a(2, 1), b(2, 1);
  a << 0, 2;
  b << 0, 0;
  CHECK(sample_mse(a, a, Scaler::identity(1)) == 0.0);
  CHECK(sample_mse(b, a, Scaler::identity(1)) == 2.0);
  Scaler s(Vector::Zero(1), Vector::Constant(1, 2.0));
  CHECK(sample_mse(b, a, s) == 0.5);
  CHECK_THROWS_AS(sample_mse(Series(3, 1), a, s), Error);
  Series nan = a;
  nan(0, 0) = std::nan("");
  CHECK_THROWS_AS(sample_mse(nan, a, s), Error);
}

TEST_CASE("ecdf percentile") {
  CHECK(ecdf_percentile({0.3, 0.1, 0.2}, 50) == 0.2);
  CHECK(ecdf_percentile({0.3, 0.1, 0.2}, 100) == 0.3);
  for (double p : {1.0, 33.3, 90.0, 100.0}) CHECK(ecdf_percentile(std::vector<double>(10, 0.7), p) == 0.7);
  CHECK_THROWS_AS(ecdf_percentile({}, 50), Error);
  CHECK_THROWS_AS(ecdf_percentile({1.0}, 0), Error);

  // Rank oracle: r = ceil(N * P / 100) on integer-valued data.
  std::vector<double> v = range(1, 150);
  CHECK(ecdf_percentile(v, 90) == 135);
  CHECK(ecdf_percentile(range(1, 50), 90) == 45);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> vals(1 + trial % 17);
    for (auto& x : vals) x = u(rng);
    double p = 1 + 99 * u(rng);
    double base = ecdf_percentile(vals, p);
    std::shuffle(vals.begin(), vals.end(), rng);
    CHECK(ecdf_percentile(vals, p) == base);
  }
}

TEST_CASE("accuracy measure boundary cases") {
  CHECK(accuracy_measure({1e-7, 1e-6}, 90, 1e-6) == 1.0);
  CHECK(accuracy_measure({1e-3}, 90, 1e-6) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(accuracy_measure({1.0}, 90, 1e-6) == 0.0);
  CHECK(accuracy_measure({25.0}, 90, 1e-6) == 0.0);
  CHECK_THROWS_AS(accuracy_measure({}, 90, 1e-6), Error);
  CHECK_THROWS_AS(accuracy_measure({-1.0}, 90, 1e-6), Error);
  CHECK_THROWS_AS(accuracy_measure({0.1}, 90, 1.0), Error);
}

TEST_CASE("accuracy measure is monotone and bounded") {
  double prev = 1.0;
  for (double e = 1e-9; e < 1e3; e *= 1.7) {
    double a = accuracy_measure({e}, 90, 1e-6);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(a <= prev);
    prev = a;
  }
}

TEST_CASE("AD statistic matches scipy on fixed data") {
  // Values from scipy.stats.anderson_ksamp(midrank=True), scipy 1.15.
  CHECK(ad_two_sample(range(1, 50), range(1001, 1050)).statistic == doctest::Approx(50.51847642037711).epsilon(1e-12));
  std::vector<double> x, y;
  for (int i = 0; i < 30; ++i) x.push_back((i * 7919 % 101) / 101.0);
  for (int i = 0; i < 40; ++i) y.push_back((static_cast<long>(i) * 104729 % 97) / 97.0 + 0.1);
  CHECK(ad_two_sample(x, y).statistic == doctest::Approx(-0.030375651688378833).epsilon(1e-10));
  std::vector<double> tx, ty;
  for (int i = 0; i < 20; ++i) tx.push_back(i / 3);
  for (int i = 0; i < 25; ++i) ty.push_back(i / 4);
  CHECK(ad_two_sample(tx, ty).statistic == doctest::Approx(-1.1744358073906338).epsilon(1e-10));
  std::vector<double> same;
  for (int i = 0; i < 12; ++i) same.push_back(0.5 * i);
  CHECK(ad_two_sample(same, same).statistic == doctest::Approx(-1.41565542848753).epsilon(1e-10));
}

TEST_CASE("AD test decisions") {
  std::vector<double> same;
  for (int i = 0; i < 12; ++i) same.push_back(0.5 * i);
  CHECK(ad_two_sample(same, same).p_value > 0.01);
  auto shifted = ad_two_sample(range(1, 50), range(1001, 1050));
  CHECK(shifted.p_value < 0.01);
  CHECK(shifted.p_value == 1e-6);
  CHECK_THROWS_AS(ad_two_sample({1, 2, 3, 4}, range(1, 10)), Error);
}

TEST_CASE("AD p-value follows the critical table") {
  // k = 2: critical values b0 + b1 + b2.
  const double crit[] = {0.325, 1.226, 1.961, 2.718, 3.752, 4.592, 6.546};
  const double sig[] = {0.25, 0.1, 0.05, 0.025, 0.01, 0.005, 0.001};
  for (int i = 0; i < 7; ++i) CHECK(ad_p_value(crit[i], 2) == doctest::Approx(sig[i]).epsilon(1e-9));
  double mid = 0.5 * (crit[3] + crit[4]);
  CHECK(ad_p_value(mid, 2) == doctest::Approx(std::sqrt(0.025 * 0.01)).epsilon(1e-9));
  CHECK(ad_p_value(100.0, 2) == 1e-6);
  CHECK(ad_p_value(-50.0, 2) == 1.0 - 1e-6);
  double prev = 1.0;
  for (double s = -3; s < 10; s += 0.01) {
    double p = ad_p_value(s, 2);
    CHECK(p <= prev);
    prev = p;
  }
}

TEST_CASE("AD statistic agrees with the textbook reference") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> size(5, 60);
  for (int c = 0; c < 50; ++c) {
    std::vector<double> x(size(rng)), y(size(rng));
    bool ties = c % 3 == 0;
    for (auto& v : x) v = ties ? std::round(2 * g(rng)) : g(rng);
    for (auto& v : y) v = ties ? std::round(2 * g(rng) + 0.3) : g(rng) + 0.2 * (c % 5);
    double ours = ad_two_sample(x, y).statistic;
    double ref = metagame::testing::ad_reference_statistic({x, y});
    CHECK(std::abs(ours - ref) <= 1e-6 * std::max(1.0, std::abs(ref)));
    auto swapped = ad_two_sample(y, x);
    CHECK(swapped.statistic == doctest::Approx(ours).epsilon(1e-12));
  }
}

TEST_CASE("AD type-I rate at alpha 0.01") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 1.0);
  int rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> x(100), y(100);
    for (auto& v : x) v = g(rng);
    for (auto& v : y) v = g(rng);
    rejected += consistency_measure(ad_two_sample(x, y).p_value, 0.01) == 0;
  }
  double rate = rejected / 2000.0;
  MESSAGE("type-I rate " << rate);
  CHECK(rate >= 0.004);
  CHECK(rate <= 0.025);
}

TEST_CASE("consistency and composite") {
  CHECK(consistency_measure(0.005, 0.01) == 0);
  CHECK(consistency_measure(0.01, 0.01) == 1);
  CHECK(consistency_measure(0.9, 0.01) == 1);
  CHECK_THROWS_AS(consistency_measure(1.5, 0.01), Error);

  CHECK(composite_score({{1, 0.45}, {1, 0.45}, {1, 0.1}}, {}) == doctest::Approx(1.0));
  CHECK(composite_score({{1, 0.45}, {0, 0.45}, {1, 0.1}}, {}) == doctest::Approx(0.55));
  CHECK(composite_score({{1, 0.45}, {1, 0.45}, {1, 0.1}}, {0}) == 0.0);
  CHECK_THROWS_AS(composite_score({{1, 0.5}}, {}), Error);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    double w1 = u(rng), w2 = (1 - w1) * u(rng);
    double s = composite_score({{u(rng), w1}, {u(rng), w2}, {u(rng), 1 - w1 - w2}}, {u(rng), u(rng)});
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("score spec documents") {
  ScoreSpec s;
  CHECK_NOTHROW(s.validate());
  CHECK(ScoreSpec::from_json(s.to_json()) == s);
  CHECK_THROWS_AS(ScoreSpec::from_json({{"performance", {{"accuracy_calibration", 0.5}}}}), Error);
  CHECK_THROWS_AS(ScoreSpec::from_json({{"performance", {{"speed", 1.0}}}}), Error);
  CHECK_THROWS_AS(ScoreSpec::from_json({{"eps_crit", 2.0}}), Error);
  CHECK_THROWS_AS(ScoreSpec::from_json({{"alpha", 0.0}}), Error);
}

TEST_CASE("planted digraph scores high and outranks the single edge") {
  ScoreCache cache;
  auto planted = evaluate_digraph(game1(), fig4_digraph(game1()), default_data(), ScoreSpec{}, RegressorHyper{}, &cache);
  auto single = evaluate_digraph(game1(), edges_of(game1(), {{"delta_nm", "t_nm"}}), default_data(), ScoreSpec{},
                                 RegressorHyper{}, &cache);
  MESSAGE("planted " << planted.score << " single " << single.score);
  CHECK(planted.score >= 0.9);
  CHECK(planted.score > single.score);
  CHECK(planted.train_mse.size() == 50);
  CHECK(planted.test_mse.size() == 150);
  CHECK(planted.recompute(ScoreSpec{}) == planted.score);
  CHECK(ScoreReport::from_json(nlohmann::json::parse(planted.to_json().dump())) == planted);
}

TEST_CASE("cache hits skip fitting") {
  ScoreCache cache;
  bool hit = true;
  auto bits = fig4_digraph(game1());
  auto first = evaluate_digraph(game1(), bits, default_data(), ScoreSpec{}, RegressorHyper{}, &cache, &hit);
  CHECK(!hit);
  auto fits = regressor_fit_count();
  auto second = evaluate_digraph(game1(), bits, default_data(), ScoreSpec{}, RegressorHyper{}, &cache, &hit);
  CHECK(hit);
  CHECK(regressor_fit_count() == fits);
  CHECK(second == first);
  CHECK(cache.hits() == 1);
  CHECK(cache.misses() == 1);

  RegressorHyper other;
  other.lambda = 1e-3;
  evaluate_digraph(game1(), bits, default_data(), ScoreSpec{}, other, &cache, &hit);
  CHECK(!hit);
}

TEST_CASE("concurrent get-or-compute runs each key once") {
  ScoreCache cache;
  std::atomic<int> computed{0};
  std::vector<std::thread> threads;
  std::vector<double> seen(8);
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      auto [r, hit] = cache.get_or_compute("k", [&] {
        ++computed;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        ScoreReport rep;
        rep.score = 0.25;
        return rep;
      });
      seen[t] = r.score;
    });
  }
  for (auto& th : threads) th.join();
  CHECK(computed == 1);
  for (double s : seen) CHECK(s == 0.25);

  CHECK_THROWS(cache.get_or_compute("bad", []() -> ScoreReport { throw Error(ErrorKind::kNumeric, "boom"); }));
  auto [r, hit] = cache.get_or_compute("bad", [] { return ScoreReport{}; });
  CHECK(!hit);
}

TEST_CASE("cache directory persists reports") {
  auto dir = std::filesystem::temp_directory_path() / "metagame_test_cache";
  std::filesystem::remove_all(dir);
  auto bits = edges_of(game1(), {{"delta_nm", "t_nm"}});
  ScoreReport first;
  {
    ScoreCache cache(dir.string());
    first = evaluate_digraph(game1(), bits, default_data(), ScoreSpec{}, RegressorHyper{}, &cache);
  }
  ScoreCache warm(dir.string());
  bool hit = false;
  auto fits = regressor_fit_count();
  auto again = evaluate_digraph(game1(), bits, default_data(), ScoreSpec{}, RegressorHyper{}, &warm, &hit);
  CHECK(hit);
  CHECK(regressor_fit_count() == fits);
  CHECK(again == first);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluation errors") {
  auto dangling = edges_of(game1(), {{"delta_nm", "t_nm"}, {"delta_nm", "CN"}});
  try {
    evaluate_digraph(game1(), dangling, default_data(), ScoreSpec{}, RegressorHyper{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInadmissible);
  }
  auto bad = default_data();
  bad.schema.erase(bad.schema.begin() + 2);  // phi
  try {
    evaluate_digraph(game1(), fig4_digraph(game1()), bad, ScoreSpec{}, RegressorHyper{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kSchema);
  }
}

TEST_CASE("score csv export") {
  ScoreReport r;
  r.digraph = "1f";
  r.score = 0.5;
  r.a_calibration = 1;
  r.a_prediction = 0.25;
  r.a_consistency = 1;
  std::ostringstream out;
  write_scores_csv(out, {r});
  CHECK(out.str() == "digraph,score,a_calibration,a_prediction,a_consistency\n1f,0.5,1,0.25,1\n");
}
