#include "pneunet/service.h"

#include <cstdlib>

#include "httplib.h"
#include "pneunet/error.h"

namespace pneunet {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

}  // namespace

Service::Service(std::shared_ptr<const InferenceEngine> engine, ServiceConfig config)
    : engine_(std::move(engine)), config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
  if (config_.threshold && !(*config_.threshold >= 0.0 && *config_.threshold <= 1.0)) {
    throw ConfigError("threshold must be in [0, 1]");
  }
  httplib::Server& srv = *server_;
  srv.set_payload_max_length(kMaxUploadBytes);

  srv.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200,
              {{"status", "ok"},
               {"model_loaded", engine_ != nullptr},
               {"version", engine_ ? nlohmann::json(engine_->version()) : nlohmann::json(nullptr)}});
  });

  srv.Get("/api/model", [this](const httplib::Request&, httplib::Response& res) {
    if (!engine_) return send_error(res, 503, "no model loaded");
    nlohmann::json card = engine_->model_card();
    if (config_.threshold) card["threshold"] = *config_.threshold;
    send_json(res, 200, card);
  });

  srv.Post("/api/predict", [this](const httplib::Request& req, httplib::Response& res) {
    if (!engine_) return send_error(res, 503, "no model loaded");
    if (req.body.size() > kMaxUploadBytes) return send_error(res, 413, "upload exceeds 10 MiB");
    if (!req.has_file("image")) return send_error(res, 400, "missing multipart field 'image'");
    const std::string& bytes = req.get_file_value("image").content;
    if (bytes.empty()) return send_error(res, 400, "empty image");

    std::optional<double> threshold = config_.threshold;
    if (req.has_param("threshold")) {
      try {
        std::size_t used = 0;
        const std::string text = req.get_param_value("threshold");
        threshold = std::stod(text, &used);
        if (used != text.size() || !(*threshold >= 0.0 && *threshold <= 1.0)) throw ConfigError("");
      } catch (const std::exception&) {
        return send_error(res, 400, "threshold must be a number in [0, 1]");
      }
    }
    const bool always_cam = req.has_param("always_cam") && req.get_param_value("always_cam") == "1";

    ImageBuffer image;
    try {
      image = decode_image(bytes);
    } catch (const Error& e) {
      return send_error(res, 400, std::string("cannot decode image: ") + e.what());
    }
    try {
      send_json(res, 200, engine_->predict(image, threshold, always_cam).to_json());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  });

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "internal error");
    }
  });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      if (res.status == 413) {
        send_error(res, 413, "upload exceeds 10 MiB");
      } else if (res.status == 404) {
        send_error(res, 404, "not found");
      }
    }
  });

  if (config_.static_dir) {
    if (!srv.set_mount_point("/", config_.static_dir->string())) {
      throw IoError("static directory not found: " + config_.static_dir->string());
    }
  }
}

Service::~Service() { stop(); }

int Service::bind() {
  int port = config_.port;
  if (port == 0) {
    port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw IoError("cannot bind to " + config_.host);
  } else if (!server_->bind_to_port(config_.host, port)) {
    throw IoError("cannot bind to " + config_.host + ":" + std::to_string(port));
  }
  return port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

std::optional<std::filesystem::path> resolve_checkpoint(const std::optional<std::filesystem::path>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("PNEUNET_CHECKPOINT"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

}  // namespace pneunet
