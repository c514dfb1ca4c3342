#pragma once

#include "mfgweak/types.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mfgw {

// Fixed-order pairwise summation.  The reduction tree depends only on the
// element count, never on threading or chunking, so every aggregate built on
// it is bit-reproducible for a given input order.
double pairwise_sum(std::span<const double> values);

double pairwise_mean(std::span<const double> values);

// Sample variance (denominator n), pairwise-summed.
double pairwise_variance(std::span<const double> values);

// Runs fn(i) for i in [begin, end), split into contiguous ranges across at
// most `threads` std::threads.  Safe only for loop bodies whose writes are
// disjoint per index; all reductions in this codebase stay serial.
void parallel_for(Index begin, Index end, int threads,
                  const std::function<void(Index)>& fn);

// parallel_for for loop bodies that may throw (model evaluators, terminal
// conditions): the first failure stops further work and is rethrown on the
// calling thread after the join.
void parallel_for_checked(Index begin, Index end, int threads,
                          const std::function<void(Index)>& fn);

// FNV-1a over a byte buffer / file, used for the run-manifest inventory.
u64 fnv1a64(const void* data, std::size_t size);
u64 fnv1a64_file(const std::string& path);

// Full round-trip float formatting for CSV output ("%.17g").
std::string format_double(double v);

// Median of a scratch copy (empty input is a caller bug).
double median(std::vector<double> values);

} // namespace mfgw
