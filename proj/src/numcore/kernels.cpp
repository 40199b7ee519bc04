#include "unitslab/numcore/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace unitslab::numcore::kernels {

#if defined(UNITSLAB_HAVE_AVX2)
const KernelTable& avx2_kernel_table() noexcept;
#endif

const KernelTable* avx2_kernels() noexcept {
#if defined(UNITSLAB_HAVE_AVX2)
    static const bool supported = __builtin_cpu_supports("avx2");
    return supported ? &avx2_kernel_table() : nullptr;
#else
    return nullptr;
#endif
}

namespace {

const KernelTable* widest() noexcept {
    if (const KernelTable* t = avx2_kernels()) return t;
    return &scalar_kernels();
}

const KernelTable* initial() noexcept {
    const char* env = std::getenv("UNITSLAB_KERNELS");
    if (env && std::string_view(env) == "scalar") return &scalar_kernels();
    return widest();
}

std::atomic<const KernelTable*>& slot() noexcept {
    static std::atomic<const KernelTable*> s{initial()};
    return s;
}

} // namespace

const KernelTable& active() noexcept { return *slot().load(std::memory_order_relaxed); }

bool select(std::string_view name) noexcept {
    const KernelTable* t = nullptr;
    if (name == "scalar") {
        t = &scalar_kernels();
    } else if (name == "avx2") {
        t = avx2_kernels();
    } else if (name == "auto") {
        t = widest();
    }
    if (!t) return false;
    slot().store(t, std::memory_order_relaxed);
    return true;
}

} // namespace unitslab::numcore::kernels
