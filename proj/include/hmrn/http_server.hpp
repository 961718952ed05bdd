#pragma once

#include "hmrn/service.hpp"

#include <httplib.h>

namespace hmrn {

// HTTP+JSON front end for RetrievalService.
//
//   POST   /galleries/:id/load            {"manifest": path}? -> gallery summary
//   GET    /galleries/:id/thumbnails/:img -> SVG schematic
//   POST   /sessions                      {"gallery_id", "mode"?}
//   GET    /sessions/:id                  -> session state + cached top-k
//   POST   /sessions/:id/queries          {"text", "k"?}
//   DELETE /sessions/:id/queries/:index
//   GET    /sessions/:id/ranking?k=
//   GET    /sessions/:id/explain/:image_id
//   GET    /healthz
//
// Errors are JSON {"error", "checkpoint_hash", "round"} with 4xx status.
class HttpServer {
 public:
  explicit HttpServer(RetrievalService& svc) : svc_(svc) { install_routes(); }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_to_any_port(const std::string& host) { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  template <typename F>
  httplib::Server::Handler wrap(F&& f) {
    return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      try {
        reply(res, 200, f(req));
      } catch (const ServiceError& e) {
        reply(res, e.status(), error_body(e.what()));
      } catch (const nlohmann::json::exception& e) {
        reply(res, 400, error_body(std::string("malformed request: ") + e.what()));
      } catch (const std::invalid_argument& e) {
        reply(res, 400, error_body(std::string("malformed request: ") + e.what()));
      } catch (const std::out_of_range& e) {
        reply(res, 400, error_body(std::string("malformed request: ") + e.what()));
      } catch (const Error& e) {
        reply(res, 400, error_body(e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body(e.what()));
      }
    };
  }

  nlohmann::json error_body(const std::string& msg) const {
    return {{"error", msg}, {"checkpoint_hash", svc_.models()->checkpoint_hash}, {"round", 0}};
  }

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw bad_request("request body must be a JSON object");
    return j;
  }

  static std::size_t parse_index(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw bad_request(std::string(what) + " must be a non-negative integer, got '" + s + "'");
    return std::stoul(s);
  }

  static std::size_t top_k(const httplib::Request& req) {
    if (!req.has_param("k")) return RetrievalService::kDefaultTopK;
    return parse_index(req.get_param_value("k"), "k");
  }

  void install_routes() {
    server_.Get("/healthz", wrap([this](const httplib::Request&) { return svc_.health(); }));

    server_.Post("/galleries/:id/load", wrap([this](const httplib::Request& req) {
                   const auto body = body_json(req);
                   return svc_.load_gallery(req.path_params.at("id"), body.value("manifest", std::string{}));
                 }));

    server_.Get("/galleries/:id/thumbnails/:image", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        res.set_content(svc_.thumbnail(req.path_params.at("id"), req.path_params.at("image")), "image/svg+xml");
        res.set_header("Access-Control-Allow-Origin", "*");
      } catch (const ServiceError& e) {
        reply(res, e.status(), error_body(e.what()));
      }
    });

    server_.Post("/sessions", wrap([this](const httplib::Request& req) {
                   const auto body = body_json(req);
                   if (!body.contains("gallery_id")) throw bad_request("missing gallery_id");
                   ScoreMode mode = ScoreMode::Ensemble;
                   if (body.contains("mode")) {
                     try {
                       mode = parse_score_mode(body.at("mode").get<std::string>());
                     } catch (const Error& e) {
                       throw bad_request(e.what());
                     }
                   }
                   return svc_.create_session(body.at("gallery_id").get<std::string>(), mode);
                 }));

    server_.Get("/sessions/:id", wrap([this](const httplib::Request& req) {
                  return svc_.get_ranking(req.path_params.at("id"), top_k(req));
                }));

    server_.Post("/sessions/:id/queries", wrap([this](const httplib::Request& req) {
                   const auto body = body_json(req);
                   if (!body.contains("text") || !body.at("text").is_string())
                     throw bad_request("missing query text");
                   std::size_t k = RetrievalService::kDefaultTopK;
                   if (body.contains("k")) k = body.at("k").get<std::size_t>();
                   return svc_.add_query(req.path_params.at("id"), body.at("text").get<std::string>(), k);
                 }));

    server_.Delete("/sessions/:id/queries/:index", wrap([this](const httplib::Request& req) {
                     return svc_.remove_query(req.path_params.at("id"),
                                              parse_index(req.path_params.at("index"), "query index"), top_k(req));
                   }));

    server_.Get("/sessions/:id/ranking", wrap([this](const httplib::Request& req) {
                  return svc_.get_ranking(req.path_params.at("id"), top_k(req));
                }));

    server_.Get("/sessions/:id/explain/:image", wrap([this](const httplib::Request& req) {
                  return svc_.explain(req.path_params.at("id"), req.path_params.at("image"));
                }));

    // CORS preflight for browser clients.
    server_.Options(".*", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server_.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply(res, res.status, error_body("no route: " + std::to_string(res.status)));
    });
  }

  RetrievalService& svc_;
  httplib::Server server_;
};

}  // namespace hmrn
