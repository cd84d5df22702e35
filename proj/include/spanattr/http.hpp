// Copyright 2026 The spanattr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

//   GET  /healthz
//   GET  /instances
//   GET  /instances/{id}
//   POST /instances/{id}/attribute

#include <memory>
#include <string>

#include <httplib.h>

#include "spanattr/service.hpp"
#include "spanattr/store.hpp"

namespace spanattr {

class HttpServer {
 public:
  HttpServer(std::shared_ptr<const InstanceStore> store, MethodConfig defaults)
      : store_(std::move(store)), defaults_(std::move(defaults)) {
    routes();
  }

  /// Binds `host:port` (port 0 picks a free one) and returns the bound port, or -1.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }

  /// Serves until stop(); call after bind().
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  bool running() const { return server_.is_running(); }

 private:
  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(canonical_dump(body), "application/json");
  }

  void routes() {
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}});
    });
    server_.Get("/instances", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, list_instances(*store_));
    });
    server_.Get(R"(/instances/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto b = store_->find(req.matches[1]);
      if (!b) return reply(res, 404, error_json("unknown instance '" + std::string(req.matches[1]) + "'"));
      reply(res, 200, instance_to_json(b->instance()));
    });
    server_.Post(R"(/instances/([^/]+)/attribute)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req.matches[1], req.body, res);
    });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        reply(res, 500, error_json(e.what()));
      } catch (...) {
        reply(res, 500, error_json("unknown error"));
      }
    });
  }

  void handle(const std::string& id, const std::string& body, httplib::Response& res) const {
    if (!store_->find(id)) return reply(res, 404, error_json("unknown instance '" + id + "'"));
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::parse_error& e) {
      return reply(res, 422, error_json(std::string("malformed JSON: ") + e.what(), "$"));
    }
    try {
      reply(res, 200, handle_attribute(*store_, defaults_, request_from_json(id, doc)));
    } catch (const RequestError& e) {
      reply(res, 422, error_json(e.message(), e.field()));
    } catch (const MissingInputError& e) {
      reply(res, 422, error_json(e.what(), "method"));
    } catch (const NotFoundError& e) {
      reply(res, 404, error_json(e.what()));
    } catch (const ArgumentError& e) {
      reply(res, 422, error_json(e.what(), "span"));
    } catch (const ZeroNormError& e) {
      reply(res, 422, error_json(e.what(), "span"));
    }
  }

  std::shared_ptr<const InstanceStore> store_;
  MethodConfig defaults_;
  httplib::Server server_;
};

}  // namespace spanattr
