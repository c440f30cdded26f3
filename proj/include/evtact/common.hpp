#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace evt {

/// Parse or format failure carrying the byte offset (or line/packet index)
/// that triggered it. offset() is -1 when no position applies.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(std::string msg, std::int64_t offset = -1)
      : std::runtime_error(std::move(msg)), offset_(offset) {}
  std::int64_t offset() const { return offset_; }

 private:
  std::int64_t offset_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Stateless combination of two seeds; used to derive per-sample / per-epoch
// seeds so worker scheduling cannot change outputs.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_str(const std::string& s);

// Uniform double in [0, 1) with 53-bit resolution. mt19937_64 is fully
// specified by the standard, so these draws are portable across platforms.
double uniform01(std::mt19937_64& rng);
double uniform_range(std::mt19937_64& rng, double lo, double hi);
std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi);
double gaussian(std::mt19937_64& rng);  // Box-Muller over uniform01

// Worker cap: EVENTRANSACT_THREADS if set, else hardware concurrency.
int worker_count();

// Runs [0, n) split into at most worker_count() contiguous chunks.
// fn(chunk_index, begin, end); chunk 0 covers the lowest indices so callers
// can reduce per-chunk results in a fixed order.
void parallel_chunks(int n,
                     const std::function<void(int chunk, int begin, int end)>& fn);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace evt
