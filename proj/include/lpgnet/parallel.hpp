#pragma once

#include <cstddef>

namespace lpgnet {

/// Cap on internal worker threads. Defaults to the LPGNET_THREADS environment
/// variable, or 1 when unset. Results never depend on this value.
std::size_t max_threads();
void set_max_threads(std::size_t n);

}  // namespace lpgnet
