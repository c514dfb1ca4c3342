#include "mfgweak/util.hpp"

#include "mfgweak/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace mfgw {

namespace {

double pairwise_sum_impl(const double* data, std::size_t n) {
    if (n <= 32) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += data[i];
        return s;
    }
    std::size_t half = n / 2;
    return pairwise_sum_impl(data, half) + pairwise_sum_impl(data + half, n - half);
}

} // namespace

double pairwise_sum(std::span<const double> values) {
    return pairwise_sum_impl(values.data(), values.size());
}

double pairwise_mean(std::span<const double> values) {
    require(!values.empty(), ErrorKind::ShapeMismatch, "mean of empty range");
    return pairwise_sum(values) / static_cast<double>(values.size());
}

double pairwise_variance(std::span<const double> values) {
    require(!values.empty(), ErrorKind::ShapeMismatch, "variance of empty range");
    double m = pairwise_mean(values);
    std::vector<double> sq(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        double d = values[i] - m;
        sq[i] = d * d;
    }
    return pairwise_sum(sq) / static_cast<double>(values.size());
}

void parallel_for(Index begin, Index end, int threads,
                  const std::function<void(Index)>& fn) {
    Index n = end - begin;
    if (n <= 0) return;
    int workers = std::max(1, threads);
    if (workers == 1 || n < 1024) {
        for (Index i = begin; i < end; ++i) fn(i);
        return;
    }
    workers = static_cast<int>(std::min<Index>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    Index chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        Index lo = begin + chunk * w;
        Index hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (Index i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

void parallel_for_checked(Index begin, Index end, int threads,
                          const std::function<void(Index)>& fn) {
    std::mutex gate;
    std::atomic<bool> poisoned{false};
    std::optional<Error> first;
    parallel_for(begin, end, threads, [&](Index i) {
        if (poisoned.load(std::memory_order_relaxed)) return;
        try {
            fn(i);
        } catch (const Error& e) {
            std::lock_guard<std::mutex> lock(gate);
            poisoned.store(true, std::memory_order_relaxed);
            if (!first) first = e;
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(gate);
            poisoned.store(true, std::memory_order_relaxed);
            if (!first) first = Error(ErrorKind::Internal, e.what());
        }
    });
    if (first) throw *first;
}

u64 fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    u64 h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

u64 fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Io, "cannot open for checksum: " + path);
    u64 h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double median(std::vector<double> values) {
    require(!values.empty(), ErrorKind::ShapeMismatch, "median of empty range");
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace mfgw
