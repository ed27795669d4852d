#include "lpgnet/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace lpgnet {
namespace {

std::size_t from_env() {
  const char* v = std::getenv("LPGNET_THREADS");
  if (!v) return 1;
  try {
    const long n = std::stol(v);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
  } catch (...) {
    return 1;
  }
}

std::atomic<std::size_t>& cap() {
  static std::atomic<std::size_t> value{from_env()};
  return value;
}

}  // namespace

std::size_t max_threads() { return cap().load(); }
void set_max_threads(std::size_t n) { cap().store(n == 0 ? 1 : n); }

}  // namespace lpgnet
