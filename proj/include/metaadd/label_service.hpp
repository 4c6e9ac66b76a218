#pragma once

#include <memory>
#include <string>
#include <thread>

#include "metaadd/active.hpp"

namespace httplib {
class Server;
}

namespace metaadd::service {

/// HTTP/JSON facade over a query queue.
///
///   GET  /api/queries[?status=pending|answered|expired]
///   GET  /api/queries/{id}
///   POST /api/queries/{id}/label   {"class": "sudden"}  -> 204, 404, 409, 422
///   GET  /api/status
///
/// The service only moves queries from pending to answered; the detection
/// loop applies the labels.
class LabelService {
  public:
    struct Config {
        std::string host = "127.0.0.1";
        /// 0 binds any free port.
        int port = 8787;
        std::string cors_origin = "*";
    };

    LabelService(std::shared_ptr<active::QueryQueue> queue, Config cfg);
    explicit LabelService(std::shared_ptr<active::QueryQueue> queue) : LabelService(std::move(queue), Config{}) {}
    ~LabelService();

    LabelService(const LabelService&) = delete;
    LabelService& operator=(const LabelService&) = delete;

    /// Binds and serves on a background thread. Returns the bound port.
    /// Throws std::runtime_error when the address cannot be bound.
    int start();
    void stop();
    bool running() const noexcept { return thread_.joinable(); }
    int port() const noexcept { return port_; }

  private:
    void install_routes();

    std::shared_ptr<active::QueryQueue> queue_;
    Config cfg_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace metaadd::service
