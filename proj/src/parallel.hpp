#pragma once

// Exceptions must not escape an OpenMP region; workers park the first one
// here and the caller rethrows after the region ends.

#include <exception>

namespace stegattn::detail {

class ExceptionSlot {
public:
    template <typename F>
    void run(F&& f) noexcept {
        try {
            f();
        } catch (...) {
#pragma omp critical(stegattn_exception_slot)
            {
                if (!ptr_) ptr_ = std::current_exception();
            }
        }
    }

    void rethrow() const {
        if (ptr_) std::rethrow_exception(ptr_);
    }

private:
    std::exception_ptr ptr_;
};

}  // namespace stegattn::detail
