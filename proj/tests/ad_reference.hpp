#pragma once

// Textbook k-sample Anderson-Darling statistic (Scholz and Stephens 1987,
// midrank form and its variance), written without sharing code with the
// library implementation.

#include <cmath>
#include <vector>

namespace metagame::testing {

inline double ad_reference_statistic(const std::vector<std::vector<double>>& samples) {
  std::vector<double> pooled;
  for (const auto& s : samples) pooled.insert(pooled.end(), s.begin(), s.end());
  const double n = static_cast<double>(pooled.size());
  const double k = static_cast<double>(samples.size());

  std::vector<double> zs;
  for (double v : pooled) {
    bool seen = false;
    for (double z : zs) seen = seen || z == v;
    if (!seen) zs.push_back(v);
  }

  double total = 0.0;
  for (const auto& s : samples) {
    const double ni = static_cast<double>(s.size());
    double sum = 0.0;
    for (double z : zs) {
      double below = 0, equal = 0, below_i = 0, equal_i = 0;
      for (double v : pooled) {
        below += v < z;
        equal += v == z;
      }
      for (double v : s) {
        below_i += v < z;
        equal_i += v == z;
      }
      double m_aij = below_i + equal_i / 2.0;
      double b_aj = below + equal / 2.0;
      double num = n * m_aij - ni * b_aj;
      sum += equal * num * num / (b_aj * (n - b_aj) - n * equal / 4.0);
    }
    total += sum / ni;
  }
  const double a2 = (n - 1.0) / (n * n) * total;

  double big_h = 0.0;
  for (const auto& s : samples) big_h += 1.0 / static_cast<double>(s.size());
  double h = 0.0;
  for (double i = 1; i <= n - 1; ++i) h += 1.0 / i;
  double g = 0.0;
  for (double i = 1; i <= n - 2; ++i)
    for (double j = i + 1; j <= n - 1; ++j) g += 1.0 / ((n - i) * j);
  const double a = (4 * g - 6) * (k - 1) + (10 - 6 * g) * big_h;
  const double b = (2 * g - 4) * k * k + 8 * h * k + (2 * g - 14 * h - 4) * big_h - 8 * h + 4 * g - 6;
  const double c = (6 * h + 2 * g - 2) * k * k + (4 * h - 4 * g + 6) * k + (2 * h - 6) * big_h + 4 * h;
  const double d = (2 * h + 6) * k * k - 4 * h * k;
  const double var = (a * n * n * n + b * n * n + c * n + d) / ((n - 1) * (n - 2) * (n - 3));
  return (a2 - (k - 1)) / std::sqrt(var);
}

}  // namespace metagame::testing
