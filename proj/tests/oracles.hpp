#pragma once

// Independent reference implementations used by the tests. These deliberately
// avoid the library's own helpers so a shared bug cannot hide.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace oracle {

// Full (n+1) x (m+1) LCS table, textbook recurrence.
inline std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      t[i + 1][j + 1] = a[i] == b[j] ? t[i][j] + 1 : std::max(t[i][j + 1], t[i + 1][j]);
  return t[a.size()][b.size()];
}

inline double rouge_l_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  if (pred.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs(pred, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(pred.size());
  const double r = l / static_cast<double>(ref.size());
  return 100.0 * 2.0 * p * r / (p + r);
}

// layers[k][t][c] -> GL[g][t][c], summing V_k over each group's members.
using Stack = std::vector<std::vector<std::vector<double>>>;

inline Stack group_means(const Stack& layers, std::size_t groups) {
  const std::size_t m = layers.size() / groups;
  const std::size_t tokens = layers[0].size(), width = layers[0][0].size();
  Stack out(groups, std::vector<std::vector<double>>(tokens, std::vector<double>(width, 0.0)));
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t c = 0; c < width; ++c) {
        double s = 0.0;
        for (std::size_t k = g * m; k < (g + 1) * m; ++k) s += layers[k][t][c];
        out[g][t][c] = s / static_cast<double>(m);
      }
  return out;
}

// EV[t] = GL_1[t] ++ ... ++ GL_G[t] ++ V_L[t]
inline std::vector<std::vector<double>> embedding(const Stack& layers, std::size_t groups) {
  const Stack gl = group_means(layers, groups);
  std::vector<std::vector<double>> ev(layers[0].size());
  for (std::size_t t = 0; t < ev.size(); ++t) {
    for (const auto& g : gl) ev[t].insert(ev[t].end(), g[t].begin(), g[t].end());
    ev[t].insert(ev[t].end(), layers.back()[t].begin(), layers.back()[t].end());
  }
  return ev;
}

inline std::vector<std::vector<double>> matmul(const std::vector<std::vector<double>>& a,
                                               const std::vector<std::vector<double>>& b) {
  std::vector<std::vector<double>> c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

}  // namespace oracle
