// Every heap block starts on a 64-byte boundary. Eigen peels unaligned heads
// off vectorized reductions, so without this the summation order (and the
// last bits of a result) follows whatever alignment malloc happened to give.
#include <cstdlib>
#include <new>

void* operator new(std::size_t n) {
  void* p = std::aligned_alloc(64, (n + 63) / 64 * 64 + (n == 0 ? 64 : 0));
  if (!p) throw std::bad_alloc();
  return p;
}

void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
