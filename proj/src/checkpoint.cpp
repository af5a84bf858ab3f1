#include "invsketch/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <openssl/evp.h>

#include "invsketch/errors.hpp"

namespace invsketch {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'I', 'S', 'C', 'K'};
}

Checkpoint snapshot(nn::Module& module, const std::string& kind, json config, long iteration) {
  Checkpoint c;
  c.kind = kind;
  c.config = std::move(config);
  c.iteration = iteration;
  for (const auto& p : module.named_parameters()) c.blocks[p.name] = p.var->value();
  for (const auto& b : module.named_buffers()) c.blocks[b.name] = *b.tensor;
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json header;
  header["kind"] = ckpt.kind;
  header["config"] = ckpt.config;
  header["iteration"] = ckpt.iteration;
  json blocks = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.blocks) {
    blocks.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["blocks"] = blocks;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.blocks)
      out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw IoError("short write to " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError(path + ": not a checkpoint");
  std::uint32_t version;
  std::uint64_t len;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&len, bytes.data() + 8, 8);
  if (version != kCheckpointVersion) throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 16 + len) throw ParseError(path + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  Checkpoint c;
  const std::size_t payload = 16 + len;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.config = header.at("config");
    c.iteration = header.at("iteration").get<long>();
    for (const auto& b : header.at("blocks")) {
      Tensor t(b.at("shape").get<Shape>());
      const std::size_t off = payload + b.at("offset").get<std::size_t>() * sizeof(double);
      if (off + t.size() * sizeof(double) > bytes.size()) throw ParseError(path + ": truncated payload");
      std::memcpy(t.data(), bytes.data() + off, t.size() * sizeof(double));
      c.blocks.emplace(b.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return c;
}

void restore(nn::Module& module, const Checkpoint& ckpt, const std::string& prefix) {
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor& {
    auto it = ckpt.blocks.find(prefix + name);
    if (it == ckpt.blocks.end()) throw ParseError("checkpoint is missing block '" + prefix + name + "'");
    if (it->second.shape() != shape)
      throw ShapeError("checkpoint block '" + name + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                       shape_str(shape));
    return it->second;
  };
  for (const auto& p : module.named_parameters()) p.var->mutable_value() = fetch(p.name, p.var->shape());
  for (const auto& b : module.named_buffers()) *b.tensor = fetch(b.name, b.tensor->shape());
}

namespace {

std::string hex(const unsigned char* d, unsigned n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < n; ++i) {
    out.push_back(digits[d[i] >> 4]);
    out.push_back(digits[d[i] & 15]);
  }
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 unavailable");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(const void* data, std::size_t size) { EVP_DigestUpdate(ctx_, data, size); }
  std::string hex_digest() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned n = 0;
    EVP_DigestFinal_ex(ctx_, md, &n);
    return hex(md, n);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex_digest();
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  Sha256 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.hex_digest();
}

std::string module_fingerprint(nn::Module& module) {
  Sha256 h;
  auto add = [&](const std::string& name, const Tensor& t) {
    h.update(name.data(), name.size() + 1);
    for (int d : t.shape()) h.update(&d, sizeof d);
    h.update(t.data(), t.size() * sizeof(double));
  };
  for (const auto& p : module.named_parameters()) add(p.name, p.var->value());
  for (const auto& b : module.named_buffers()) add(b.name, *b.tensor);
  return h.hex_digest();
}

std::map<std::string, std::string> parse_kv(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str(), path);
}

}  // namespace invsketch
