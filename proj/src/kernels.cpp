#include <cstdlib>
#include <string_view>

#include "preflab/kernels.hpp"

namespace preflab::kernels {
namespace {

const KernelTable* select_default() {
  const char* env = std::getenv("PREFLAB_KERNELS");
  if (env != nullptr && std::string_view(env) == "scalar") return &scalar_table();
  if (const KernelTable* t = avx2_table()) return t;
  return &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = select_default();
  return table;
}

}  // namespace

const KernelTable& active() { return *current(); }

void set_active(const KernelTable& table) { current() = &table; }

}  // namespace preflab::kernels
