// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

// Internal: shared HTTP plumbing for the external backend adapters.

#pragma once

#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "cirforge/captioner.hpp"

namespace cirforge::detail {

/// Bounds concurrent requests per backend endpoint.
class InflightLimiter {
public:
    explicit InflightLimiter(int limit) : limit_(limit < 1 ? 1 : limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return inflight_ < limit_; });
        ++inflight_;
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            --inflight_;
        }
        cv_.notify_one();
    }

private:
    int limit_;
    int inflight_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

class InflightGuard {
public:
    explicit InflightGuard(InflightLimiter& limiter) : limiter_(limiter) { limiter_.acquire(); }
    ~InflightGuard() { limiter_.release(); }
    InflightGuard(const InflightGuard&) = delete;
    InflightGuard& operator=(const InflightGuard&) = delete;

private:
    InflightLimiter& limiter_;
};

/// One limiter per endpoint, shared by all calls in the process.
InflightLimiter& limiter_for(const std::string& endpoint, int max_inflight);

/// POST json `body` to endpoint + path. Retries connection failures and 5xx
/// responses, then throws BackendError carrying the raw payload.
std::string post_json(const std::string& endpoint, const std::string& path,
                      const std::string& body, const captioner::HttpOptions& options);

}  // namespace cirforge::detail
