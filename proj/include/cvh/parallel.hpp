#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace cvh {

/// Sum of term(i) for i in [0, n) with a reduction order that does not depend on
/// the thread count: fixed-size blocks are summed independently, then the block
/// partials are added sequentially.
template <class Term>
double ordered_sum(std::size_t n, Term&& term) {
  constexpr std::size_t block = 4096;
  const std::size_t nblocks = (n + block - 1) / block;
  std::vector<double> partial(nblocks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(nblocks); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * block;
    const std::size_t hi = std::min(n, lo + block);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    partial[static_cast<std::size_t>(b)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

/// Maximum of term(i) over [0, n); 0 for an empty range.
template <class Term>
double ordered_max(std::size_t n, Term&& term) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, term(i));
  return m;
}

}  // namespace cvh
