// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#include "http_util.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "cirforge/errors.hpp"
#include "httplib.h"

namespace cirforge::detail {

InflightLimiter& limiter_for(const std::string& endpoint, int max_inflight) {
    static std::mutex mutex;
    static std::map<std::string, std::unique_ptr<InflightLimiter>> limiters;
    std::lock_guard lock(mutex);
    auto it = limiters.find(endpoint);
    if (it == limiters.end())
        it = limiters.emplace(endpoint, std::make_unique<InflightLimiter>(max_inflight)).first;
    return *it->second;
}

std::string post_json(const std::string& endpoint, const std::string& path,
                      const std::string& body, const captioner::HttpOptions& options) {
    InflightGuard guard(limiter_for(endpoint, options.max_inflight));

    httplib::Client client(endpoint);
    const auto timeout = std::chrono::milliseconds(
        static_cast<long>(std::max(1.0, options.timeout_sec * 1000.0)));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    std::string last_error;
    for (int attempt = 0; attempt <= options.retries; ++attempt) {
        auto res = client.Post(path, body, "application/json");
        if (!res) {
            last_error = "connection to " + endpoint + path + " failed: " +
                         httplib::to_string(res.error());
        } else if (res->status >= 500) {
            last_error = endpoint + path + " returned " + std::to_string(res->status);
        } else if (res->status != 200) {
            throw BackendError(endpoint + path + " returned " + std::to_string(res->status),
                               res->body);
        } else {
            return res->body;
        }
        if (attempt < options.retries)
            std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
    }
    throw BackendError(last_error + " after " + std::to_string(options.retries + 1) + " attempts",
                       "");
}

}  // namespace cirforge::detail
