#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <deque>

namespace tdlm {

/// Process-wide worker count used by parallel_for. Defaults to 1.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(i) for i in [0, n). Work is split into contiguous blocks; each
/// index is processed exactly once and bodies must write disjoint outputs,
/// so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Fixed-capacity FIFO for a single producer and a single consumer.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    void push(T item) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
    }

    /// Blocks until an item is available; nullopt once closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<T> items_;
    bool closed_ = false;
    std::mutex mutex_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
};

} // namespace tdlm
