#include "invsketch/service.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <filesystem>

#include "httplib.h"
#include "json.hpp"
#include "invsketch/checkpoint.hpp"
#include "invsketch/data.hpp"
#include "invsketch/errors.hpp"
#include "invsketch/image.hpp"

namespace invsketch::service {

using nlohmann::json;

namespace {

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ParseError(key + ": expected an integer, got '" + v + "'");
  return out;
}

ApiResponse json_response(int status, const json& body) { return {status, body.dump(), "application/json"}; }
ApiResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

std::string thumbnail_url(const std::string& id) { return "/thumbnail/" + id; }

}  // namespace

// ---------------------------------------------------------------------------

void ServiceConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "listen") {
      const auto colon = value.rfind(':');
      if (colon == std::string::npos) throw ParseError("listen: expected host:port, got '" + value + "'");
      host = value.substr(0, colon);
      port = parse_int(key, value.substr(colon + 1));
    } else if (key == "style_ckpt") {
      style_ckpt = value;
    } else if (key == "sbir_ckpt") {
      sbir_ckpt = value;
    } else if (key == "gallery") {
      gallery_dir = value;
    } else if (key == "gallery_cache") {
      gallery_cache = value;
    } else if (key == "k") {
      default_k = parse_int(key, value);
    } else if (key == "max_request_bytes") {
      max_request_bytes = static_cast<std::size_t>(parse_int(key, value));
    } else if (key == "thumbnail_size") {
      thumbnail_size = parse_int(key, value);
    } else if (key == "image_size") {
      image_size = parse_int(key, value);
    } else {
      throw ParseError("unknown service setting '" + key + "'");
    }
  }
}

void ServiceConfig::apply_env(const std::function<const char*(const char*)>& getenv) {
  static const std::pair<const char*, const char*> kVars[] = {{"INVSKETCH_LISTEN", "listen"},
                                                              {"INVSKETCH_STYLE_CKPT", "style_ckpt"},
                                                              {"INVSKETCH_SBIR_CKPT", "sbir_ckpt"},
                                                              {"INVSKETCH_GALLERY", "gallery"},
                                                              {"INVSKETCH_GALLERY_CACHE", "gallery_cache"}};
  std::map<std::string, std::string> kv;
  for (const auto& [var, key] : kVars)
    if (const char* v = getenv(var); v != nullptr && *v != '\0') kv[key] = v;
  apply(kv);
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error("port out of range");
  if (style_ckpt.empty() || sbir_ckpt.empty() || gallery_dir.empty())
    throw Error("service needs style_ckpt, sbir_ckpt and gallery");
  if (default_k < 1) throw InvalidK("default k must be at least 1");
  if (max_request_bytes == 0 || thumbnail_size < 1 || image_size < 0) throw Error("invalid service limits");
}

ServiceConfig ServiceConfig::from_file(const std::string& path) {
  ServiceConfig c;
  c.apply(read_kv_file(path));
  return c;
}

// ---------------------------------------------------------------------------

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::string s = text;
  if (s.rfind("data:", 0) == 0) {
    const auto comma = s.find(',');
    if (comma == std::string::npos || s.substr(0, comma).find(";base64") == std::string::npos)
      throw ParseError("data URL is not base64-encoded");
    s.erase(0, comma + 1);
  }
  std::erase_if(s, [](char c) { return c == '\n' || c == '\r' || c == ' '; });
  if (s.empty() || s.size() % 4 != 0) throw ParseError("base64 length must be a positive multiple of 4");
  std::size_t pad = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const bool alpha = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' ||
                       c == '/';
    if (c == '=') {
      if (i + 2 < s.size()) throw ParseError("misplaced base64 padding");
      ++pad;
    } else if (!alpha || pad > 0) {
      throw ParseError("invalid base64 character");
    }
  }
  std::vector<std::uint8_t> out(3 * s.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(s.data()), static_cast<int>(s.size()));
  if (n < 0) throw ParseError("invalid base64 payload");
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// ---------------------------------------------------------------------------

struct Service::Snapshot {
  std::unique_ptr<style::StyleModel> style;
  std::unique_ptr<sbir::SbirModel> sbir;
  sbir::Gallery gallery;
  std::map<std::string, std::vector<std::uint8_t>> thumbnails;
  std::string style_id, sbir_id;
  int image_size = 64;
  // Forward passes toggle module modes, so inference on one snapshot is serialised.
  mutable std::mutex infer;
};

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {}
Service::~Service() = default;

std::shared_ptr<Service::Snapshot> Service::current() const {
  std::lock_guard<std::mutex> lock(swap_mu_);
  return snapshot_;
}

bool Service::loaded() const { return current() != nullptr; }

void Service::load() {
  cfg_.validate();
  struct Flag {
    std::atomic<bool>& f;
    explicit Flag(std::atomic<bool>& flag) : f(flag) { f = true; }
    ~Flag() { f = false; }
  } flag(reloading_);
  if (reload_hook_) reload_hook_();

  auto snap = std::make_shared<Snapshot>();
  snap->style = style::load_style_model(cfg_.style_ckpt);
  snap->sbir = sbir::load_sbir_model(cfg_.sbir_ckpt);
  snap->style_id = sha256_file(cfg_.style_ckpt);
  snap->sbir_id = sha256_file(cfg_.sbir_ckpt);
  snap->image_size = cfg_.image_size > 0                      ? cfg_.image_size
                     : snap->sbir->config().input_size > 0 ? snap->sbir->config().input_size
                                                              : 64;

  data::LoadOptions opts;
  opts.sketch_size = opts.photo_size = snap->image_size;
  const data::DatasetSplit split = data::load_split(cfg_.gallery_dir, data::SplitMode::kUnpaired, opts);
  if (split.photos.empty()) throw EmptyGallery("no photos under " + cfg_.gallery_dir + "/photos");

  std::vector<std::string> ids;
  for (const auto& p : split.photos) ids.push_back(p.instance_id);
  const std::string fingerprint = module_fingerprint(*snap->sbir);
  bool cached = false;
  if (!cfg_.gallery_cache.empty() && std::filesystem::exists(cfg_.gallery_cache)) {
    try {
      sbir::Gallery g = sbir::load_gallery_cache(cfg_.gallery_cache);
      if (g.model_fingerprint == fingerprint && g.ids == ids) {
        snap->gallery = std::move(g);
        cached = true;
      }
    } catch (const Error&) {
      // stale or foreign cache; rebuilt below
    }
  }
  if (!cached) {
    snap->gallery = sbir::build_gallery(*snap->sbir, split.photos);
    if (!cfg_.gallery_cache.empty()) sbir::save_gallery_cache(cfg_.gallery_cache, snap->gallery);
  }
  for (const auto& p : split.photos)
    snap->thumbnails[p.instance_id] =
        encode_png(to_bytes(data::resize_image(p.image, cfg_.thumbnail_size, cfg_.thumbnail_size)));

  std::lock_guard<std::mutex> lock(swap_mu_);
  snapshot_ = std::move(snap);
}

namespace {

// Parses {"image": base64 PNG, ...}; the decoded image is gray.
struct DecodedRequest {
  json body;
  ImageTensor image;
};

DecodedRequest decode_request(const std::string& text) {
  DecodedRequest r;
  try {
    r.body = json::parse(text);
  } catch (const json::exception&) {
    throw ParseError("request body is not JSON");
  }
  if (!r.body.is_object() || !r.body.contains("image") || !r.body["image"].is_string())
    throw ParseError("request needs an 'image' string");
  const auto bytes = base64_decode(r.body["image"].get<std::string>());
  r.image = from_bytes(decode_png(bytes)).to_gray();
  return r;
}

}  // namespace

ApiResponse Service::stylize(const std::string& body) const {
  if (body.size() > cfg_.max_request_bytes) return error_response(413, "request too large");
  auto snap = current();
  if (!snap || reloading()) return error_response(503, "model not loaded");
  DecodedRequest req;
  try {
    req = decode_request(body);
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  const int h = req.image.height(), w = req.image.width();
  ImageTensor contour;
  {
    std::lock_guard<std::mutex> lock(snap->infer);
    const ImageTensor work = data::resize_image(req.image, snap->image_size, snap->image_size);
    contour = snap->style->translate(work, style::Direction::kSketchToContour);
  }
  contour = data::resize_image(contour, h, w);
  return json_response(200, {{"contour", base64_encode(encode_png(to_bytes(contour)))}, {"width", w}, {"height", h}});
}

ApiResponse Service::retrieve(const std::string& body) const {
  if (body.size() > cfg_.max_request_bytes) return error_response(413, "request too large");
  auto snap = current();
  if (!snap || reloading()) return error_response(503, "gallery not loaded");
  DecodedRequest req;
  try {
    req = decode_request(body);
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  const auto n = static_cast<long long>(snap->gallery.size());
  long long k = std::min<long long>(cfg_.default_k, n);
  if (req.body.contains("k")) {
    const json& jk = req.body["k"];
    if (!jk.is_number_integer()) return error_response(400, "k must be an integer");
    k = jk.get<long long>();
    if (k < 1 || k > n) return error_response(400, "k must lie in [1, " + std::to_string(n) + "]");
  }

  sbir::RetrievalResult result;
  try {
    const ImageTensor query = data::normalize_image(req.image, snap->image_size);
    std::lock_guard<std::mutex> lock(snap->infer);
    result = sbir::retrieve(query, snap->gallery, *snap->sbir, *snap->style);
  } catch (const BlankImage& e) {
    return error_response(400, e.what());
  }
  json items = json::array();
  for (long long i = 0; i < k; ++i) {
    const auto& r = result.ranking[static_cast<std::size_t>(i)];
    items.push_back({{"id", r.instance_id},
                     {"distance", std::round(r.distance * 1e6) / 1e6},
                     {"thumbnail_url", thumbnail_url(r.instance_id)}});
  }
  return json_response(200, {{"k", k}, {"results", items}});
}

ApiResponse Service::gallery(std::optional<std::string> page_s, std::optional<std::string> size_s) const {
  auto snap = current();
  if (!snap || reloading()) return error_response(503, "gallery not loaded");
  int page = 0, page_size = 20;
  try {
    if (page_s) page = parse_int("page", *page_s);
    if (size_s) page_size = parse_int("page_size", *size_s);
  } catch (const ParseError& e) {
    return error_response(400, e.what());
  }
  const auto total = static_cast<long long>(snap->gallery.size());
  const long long pages = page_size > 0 ? (total + page_size - 1) / page_size : 0;
  if (page_size < 1 || page < 0 || page >= pages) return error_response(400, "page out of range");
  json items = json::array();
  const long long first = static_cast<long long>(page) * page_size;
  for (long long i = first; i < std::min(total, first + page_size); ++i) {
    const std::string& id = snap->gallery.ids[static_cast<std::size_t>(i)];
    items.push_back({{"id", id}, {"thumbnail_url", thumbnail_url(id)}});
  }
  return json_response(200, {{"page", page}, {"page_size", page_size}, {"total", total}, {"items", items}});
}

ApiResponse Service::thumbnail(const std::string& instance_id) const {
  auto snap = current();
  if (!snap || reloading()) return error_response(503, "gallery not loaded");
  const auto it = snap->thumbnails.find(instance_id);
  if (it == snap->thumbnails.end()) return error_response(404, "unknown photo '" + instance_id + "'");
  return {200, std::string(it->second.begin(), it->second.end()), "image/png"};
}

ApiResponse Service::healthz() const {
  auto snap = current();
  if (reloading()) return json_response(503, {{"status", "reloading"}});
  if (!snap) return json_response(503, {{"status", "unloaded"}});
  return json_response(200, {{"status", "ok"},
                             {"gallery_size", snap->gallery.size()},
                             {"style_checkpoint", snap->style_id},
                             {"sbir_checkpoint", snap->sbir_id}});
}

ApiResponse Service::admin_reload() {
  std::unique_lock<std::mutex> lock(reload_mu_, std::try_to_lock);
  if (!lock.owns_lock()) return error_response(409, "reload already in progress");
  try {
    load();
  } catch (const std::exception& e) {
    return error_response(500, std::string("reload failed: ") + e.what());
  }
  return healthz();
}

// ---------------------------------------------------------------------------

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server_->set_payload_max_length(service_.config().max_request_bytes);
  server_->Post("/stylize", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.stylize(req.body));
  });
  server_->Post("/retrieve", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.retrieve(req.body));
  });
  server_->Get("/gallery", [this, send](const httplib::Request& req, httplib::Response& res) {
    auto param = [&](const char* name) -> std::optional<std::string> {
      if (!req.has_param(name)) return std::nullopt;
      return req.get_param_value(name);
    };
    send(res, service_.gallery(param("page"), param("page_size")));
  });
  server_->Get(R"(/thumbnail/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service_.thumbnail(req.matches[1]));
  });
  server_->Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.healthz());
  });
  server_->Post("/admin/reload", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, service_.admin_reload());
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!server_->bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() { server_->stop(); }

}  // namespace invsketch::service
