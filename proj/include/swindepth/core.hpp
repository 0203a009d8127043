#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace swindepth {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Contract violations: bad shapes, bad arguments, misuse of the API.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / file problems.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// Intra-op worker pool. Each output element is computed start-to-finish by a
// single worker with a fixed sequential reduction order, so results are
// bitwise independent of the worker count. SWINDEPTH_THREADS caps the pool.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    static int configured_threads() {
        if (const char* env = std::getenv("SWINDEPTH_THREADS")) {
            int n = std::atoi(env);
            if (n >= 1) return n;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw > 16 ? 16 : hw);
    }

    int lanes() const { return static_cast<int>(workers_.size()) + 1; }

    // Runs fn over disjoint chunks of [0, n). fn must only write state owned
    // by its chunk.
    void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        if (workers_.empty() || n < 2 || in_worker_) {
            fn(0, n);
            return;
        }
        std::unique_lock<std::mutex> lock(m_);
        task_ = &fn;
        task_n_ = n;
        chunks_ = std::min<int64_t>(n, 4 * lanes());
        next_chunk_.store(0, std::memory_order_relaxed);
        pending_ = chunks_;
        ++generation_;
        cv_.notify_all();
        lock.unlock();

        work_chunks(fn);

        lock.lock();
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        task_ = nullptr;
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(m_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

private:
    ThreadPool() {
        int n = configured_threads();
        for (int i = 1; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
    }

    void work_chunks(const std::function<void(int64_t, int64_t)>& fn) {
        const int64_t n = task_n_;
        const int64_t k = chunks_;
        for (;;) {
            int64_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= k) break;
            int64_t b = c * n / k;
            int64_t e = (c + 1) * n / k;
            if (b < e) fn(b, e);
            std::lock_guard<std::mutex> lock(m_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    void worker_loop() {
        in_worker_ = true;
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* task = nullptr;
            {
                std::unique_lock<std::mutex> lock(m_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                task = task_;
            }
            if (task) work_chunks(*task);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex m_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int64_t, int64_t)>* task_ = nullptr;
    int64_t task_n_ = 0;
    int64_t chunks_ = 0;
    int64_t pending_ = 0;
    std::atomic<int64_t> next_chunk_{0};
    uint64_t generation_ = 0;
    bool stop_ = false;
    inline static thread_local bool in_worker_ = false;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    ThreadPool::instance().run(n, fn);
}

}  // namespace swindepth
