#pragma once

#include <memory>
#include <string>

#include "resched/service.hpp"

namespace resched::svc {

/// HTTP+JSON front end of a Service, with a server-sent event stream at /api/stream.
class HttpApi {
  public:
    explicit HttpApi(Service& service);
    ~HttpApi();

    /// Binds the listening socket; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void serve();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace resched::svc
