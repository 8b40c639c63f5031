#ifndef PNEUNET_SERVICE_H_
#define PNEUNET_SERVICE_H_

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "pneunet/inference.h"

namespace httplib {
class Server;
}

namespace pneunet {

inline constexpr std::size_t kMaxUploadBytes = 10u * 1024u * 1024u;

struct ServiceConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  // Overrides the checkpoint's threshold when set.
  std::optional<double> threshold;
  std::optional<std::filesystem::path> static_dir;
};

// HTTP front end over an InferenceEngine:
//   POST /api/predict  multipart field "image"; ?threshold=F, ?always_cam=1
//   GET  /api/health   {status, model_loaded, version}
//   GET  /api/model    model card, 503 while no model is loaded
// Errors are JSON objects {"error": message}.
class Service {
 public:
  Service(std::shared_ptr<const InferenceEngine> engine, ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds to config.port, or to a free port when it is 0. Returns the port.
  int bind();
  // Blocks until stop() is called.
  void run();
  void stop();

  httplib::Server& server() { return *server_; }

 private:
  std::shared_ptr<const InferenceEngine> engine_;
  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
};

// --checkpoint if given, else $PNEUNET_CHECKPOINT, else no model.
std::optional<std::filesystem::path> resolve_checkpoint(const std::optional<std::filesystem::path>& flag);

}  // namespace pneunet

#endif  // PNEUNET_SERVICE_H_
