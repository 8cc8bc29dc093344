#include "chemnne/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace chemnne {

namespace {

int resolve_worker_count() {
    if (const char* env = std::getenv("CHEM_EMU_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 8u));
}

// Persistent pool; workers park on a condvar between jobs.
class Pool {
public:
    static Pool& instance() {
        static Pool pool(resolve_worker_count() - 1);
        return pool;
    }

    int total_threads() const { return static_cast<int>(workers_.size()) + 1; }

    void run(std::size_t begin, std::size_t end,
             const std::function<void(std::size_t, std::size_t)>& fn) {
        const std::size_t n = end - begin;
        const std::size_t parts = static_cast<std::size_t>(total_threads());
        {
            std::unique_lock<std::mutex> lock(mu_);
            job_fn_ = &fn;
            job_begin_ = begin;
            job_n_ = n;
            job_parts_ = parts;
            next_part_ = 1;  // part 0 runs on the calling thread
            pending_ = parts - 1;
            ++generation_;
        }
        cv_work_.notify_all();
        run_part(fn, begin, n, parts, 0);
        std::unique_lock<std::mutex> lock(mu_);
        cv_done_.wait(lock, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    explicit Pool(int extra_workers) {
        for (int i = 0; i < extra_workers; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~Pool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
        }
        cv_work_.notify_all();
        for (auto& t : workers_) t.join();
    }

    static void run_part(const std::function<void(std::size_t, std::size_t)>& fn,
                         std::size_t begin, std::size_t n, std::size_t parts,
                         std::size_t part) {
        const std::size_t chunk = (n + parts - 1) / parts;
        const std::size_t lo = std::min(n, part * chunk);
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo < hi) fn(begin + lo, begin + hi);
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
            std::size_t begin = 0, n = 0, parts = 0, part = 0;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_work_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                if (next_part_ >= job_parts_) continue;
                part = next_part_++;
                fn = job_fn_;
                begin = job_begin_;
                n = job_n_;
                parts = job_parts_;
            }
            run_part(*fn, begin, n, parts, part);
            {
                std::unique_lock<std::mutex> lock(mu_);
                if (--pending_ == 0) cv_done_.notify_one();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_work_, cv_done_;
    const std::function<void(std::size_t, std::size_t)>* job_fn_ = nullptr;
    std::size_t job_begin_ = 0, job_n_ = 0, job_parts_ = 0, next_part_ = 0, pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace

int worker_count() { return Pool::instance().total_threads(); }

void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
    if (end <= begin) return;
    const std::size_t n = end - begin;
    if (n < 2 || worker_count() == 1) {
        fn(begin, end);
        return;
    }
    Pool::instance().run(begin, end, fn);
}

}  // namespace chemnne
