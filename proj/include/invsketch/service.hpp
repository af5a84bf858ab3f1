#pragma once

// HTTP front end over a loaded (style, sbir, gallery) snapshot.
//
// Service holds the state and answers requests as plain (status, body)
// values so it can be exercised without sockets; HttpServer binds those
// handlers to routes.

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "invsketch/fgsbir.hpp"
#include "invsketch/styletransfer.hpp"

namespace httplib {
class Server;
}

namespace invsketch::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string style_ckpt;
  std::string sbir_ckpt;
  std::string gallery_dir;    // dataset root whose photos/ form the gallery
  std::string gallery_cache;  // optional feature cache file
  int default_k = 10;
  std::size_t max_request_bytes = 4u << 20;
  int thumbnail_size = 64;
  // Working resolution for queries; 0 takes the SBIR input size (64 if that is 0 too).
  int image_size = 0;

  // Keys: listen (host:port), style_ckpt, sbir_ckpt, gallery, gallery_cache,
  // k, max_request_bytes, thumbnail_size, image_size.
  void apply(const std::map<std::string, std::string>& kv);
  // INVSKETCH_LISTEN, INVSKETCH_STYLE_CKPT, INVSKETCH_SBIR_CKPT,
  // INVSKETCH_GALLERY, INVSKETCH_GALLERY_CACHE.
  void apply_env(const std::function<const char*(const char*)>& getenv);
  void validate() const;
  static ServiceConfig from_file(const std::string& path);
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Accepts an optional "data:...;base64," prefix; throws ParseError on bad input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();

  // Loads checkpoints and the gallery (building or reusing the cache).
  // During a reload every model-backed endpoint answers 503; the previous
  // snapshot is kept if loading fails.
  void load();
  bool loaded() const;
  bool reloading() const { return reloading_.load(); }

  ApiResponse stylize(const std::string& body) const;
  ApiResponse retrieve(const std::string& body) const;
  ApiResponse gallery(std::optional<std::string> page, std::optional<std::string> page_size) const;
  ApiResponse thumbnail(const std::string& instance_id) const;
  ApiResponse healthz() const;
  ApiResponse admin_reload();

  const ServiceConfig& config() const { return cfg_; }
  // Runs inside load() after the reloading flag is raised; tests use it to
  // hold a reload open.
  void set_reload_hook(std::function<void()> hook) { reload_hook_ = std::move(hook); }

 private:
  struct Snapshot;
  std::shared_ptr<Snapshot> current() const;

  ServiceConfig cfg_;
  mutable std::mutex swap_mu_;
  std::mutex reload_mu_;
  std::shared_ptr<Snapshot> snapshot_;
  std::atomic<bool> reloading_{false};
  std::function<void()> reload_hook_;
};

class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();

  // Returns the bound port (an ephemeral one when port == 0).
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void listen();
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace invsketch::service
