#pragma once

#include <chrono>
#include <stdexcept>
#include <string>
#include <thread>

// Eigen first: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <Eigen/Dense>
#include <httplib.h>

namespace revkit::testing {

/// httplib server on an ephemeral localhost port, served from a background
/// thread for the lifetime of the object.
class MockHttpServer {
 public:
  MockHttpServer() = default;
  MockHttpServer(const MockHttpServer&) = delete;
  MockHttpServer& operator=(const MockHttpServer&) = delete;
  ~MockHttpServer() { stop(); }

  httplib::Server& server() { return server_; }

  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw std::runtime_error("cannot bind mock server");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }
  std::string origin() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::string url(const std::string& path) const { return origin() + path; }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(std::chrono::seconds(30));
    return c;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace revkit::testing
