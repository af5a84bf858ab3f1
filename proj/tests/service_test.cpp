#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <future>
#include <random>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "invsketch/checkpoint.hpp"
#include "invsketch/data.hpp"
#include "invsketch/errors.hpp"
#include "invsketch/service.hpp"

namespace svc = invsketch::service;
namespace data = invsketch::data;
namespace sbir = invsketch::sbir;
namespace style = invsketch::style;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "invsketch_service_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Writes a 6-instance toy gallery and untrained checkpoints once.
struct Fixture {
  std::filesystem::path root = temp_dir("fixture");
  data::ToyDataset toy = data::make_toy_dataset(31, 6, 32);
  svc::ServiceConfig cfg;

  Fixture() {
    data::save_split((root / "gallery").string(), toy.sketch_domain);
    style::StyleModel st(style::StyleNetConfig::toy());
    sbir::SbirModel sb(sbir::SbirNetConfig::toy());
    style::save_style_model((root / "style.ckpt").string(), st);
    sbir::save_sbir_model((root / "sbir.ckpt").string(), sb);
    cfg.style_ckpt = (root / "style.ckpt").string();
    cfg.sbir_ckpt = (root / "sbir.ckpt").string();
    cfg.gallery_dir = (root / "gallery").string();
    cfg.gallery_cache = (root / "gallery.cache").string();
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

std::string png_b64(const invsketch::ImageTensor& img) {
  return svc::base64_encode(invsketch::encode_png(invsketch::to_bytes(img)));
}

std::string sketch_request(int size = 64, int k = -1) {
  const auto& toy = fixture().toy;
  json j = {{"image", png_b64(data::resize_image(toy.sketch_domain.sketches[2].image, size, size))}};
  if (k >= 0) j["k"] = k;
  return j.dump();
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(Base64, KnownVectorsAndRoundTrip) {
  auto enc = [](const std::string& s) { return svc::base64_encode({s.begin(), s.end()}); };
  EXPECT_EQ(enc(""), "");
  EXPECT_EQ(enc("f"), "Zg==");
  EXPECT_EQ(enc("fo"), "Zm8=");
  EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
  std::mt19937_64 rng(1);
  for (std::size_t n = 1; n < 40; ++n) {
    std::vector<std::uint8_t> bytes(n);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    EXPECT_EQ(svc::base64_decode(svc::base64_encode(bytes)), bytes);
  }
  EXPECT_EQ(svc::base64_decode("data:image/png;base64,Zm8="), (std::vector<std::uint8_t>{'f', 'o'}));
}

TEST(Base64, RejectsMalformedInput) {
  for (const char* bad : {"", "abc", "ab!d", "a=bc", "Zm8=Zm8=", "data:image/png,Zm8="})
    EXPECT_THROW(svc::base64_decode(bad), invsketch::ParseError) << bad;
}

TEST(ServiceConfig, FileKeysAndEnvironmentOverrides) {
  svc::ServiceConfig c;
  c.apply(invsketch::parse_kv("listen = 0.0.0.0:9000\nk = 5\nsbir_ckpt = a.ckpt"));
  EXPECT_EQ(c.host, "0.0.0.0");
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.default_k, 5);
  std::map<std::string, std::string> env = {{"INVSKETCH_LISTEN", "localhost:7001"},
                                            {"INVSKETCH_SBIR_CKPT", "b.ckpt"}};
  c.apply_env([&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  });
  EXPECT_EQ(c.host, "localhost");
  EXPECT_EQ(c.port, 7001);
  EXPECT_EQ(c.sbir_ckpt, "b.ckpt");
  EXPECT_THROW(c.apply({{"listen", "nohost"}}), invsketch::ParseError);
  EXPECT_THROW(c.apply({{"k", "ten"}}), invsketch::ParseError);
  EXPECT_THROW(c.apply({{"colour", "red"}}), invsketch::ParseError);
  EXPECT_THROW(svc::ServiceConfig{}.validate(), invsketch::Error);
}

// ---------------------------------------------------------------------------

TEST(Service, UnloadedAnswers503) {
  svc::Service s(fixture().cfg);
  EXPECT_EQ(s.stylize(sketch_request()).status, 503);
  EXPECT_EQ(s.retrieve(sketch_request()).status, 503);
  EXPECT_EQ(s.gallery(std::nullopt, std::nullopt).status, 503);
  EXPECT_EQ(s.healthz().status, 503);
}

TEST(Service, StylizeRoundTrip) {
  svc::Service s(fixture().cfg);
  s.load();
  const auto r = s.stylize(sketch_request(64));
  ASSERT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  const auto png = invsketch::decode_png(svc::base64_decode(j.at("contour").get<std::string>()));
  EXPECT_EQ(png.width, 64);
  EXPECT_EQ(png.height, 64);
  EXPECT_EQ(j.at("width"), 64);
  EXPECT_EQ(s.stylize(sketch_request(64)).body, r.body);

  // An RGB upload is accepted and converted to gray.
  const auto rgb = fixture().toy.sketch_domain.sketches[0].image.with_channels(3);
  EXPECT_EQ(s.stylize(json{{"image", png_b64(rgb)}}.dump()).status, 200);
}

TEST(Service, StylizeRejectsBadPayloads) {
  svc::Service s(fixture().cfg);
  s.load();
  EXPECT_EQ(s.stylize("{not json").status, 400);
  EXPECT_EQ(s.stylize(json{{"picture", "x"}}.dump()).status, 400);
  EXPECT_EQ(s.stylize(json{{"image", "@@@@"}}.dump()).status, 400);
  EXPECT_EQ(s.stylize(json{{"image", "Zm9vYmFy"}}.dump()).status, 400);  // valid base64, not a PNG
  auto cfg = fixture().cfg;
  cfg.max_request_bytes = 64;
  svc::Service small(cfg);
  small.load();
  EXPECT_EQ(small.stylize(sketch_request()).status, 413);
  EXPECT_EQ(small.retrieve(sketch_request()).status, 413);
}

TEST(Service, RetrieveOrderingAndValidation) {
  svc::Service s(fixture().cfg);
  s.load();
  const auto r = s.retrieve(sketch_request(32, 3));
  ASSERT_EQ(r.status, 200) << r.body;
  const json j = json::parse(r.body);
  ASSERT_EQ(j.at("results").size(), 3U);
  double prev = -1;
  for (const auto& item : j.at("results")) {
    const double d = item.at("distance").get<double>();
    EXPECT_GE(d, prev);
    EXPECT_NEAR(d * 1e6, std::round(d * 1e6), 1e-6);
    EXPECT_EQ(item.at("thumbnail_url"), "/thumbnail/" + item.at("id").get<std::string>());
    prev = d;
  }
  EXPECT_EQ(s.retrieve(sketch_request(32, 3)).body, r.body);
  EXPECT_EQ(json::parse(s.retrieve(sketch_request(32)).body).at("results").size(), 6U);  // default k capped
  EXPECT_EQ(s.retrieve(sketch_request(32, 0)).status, 400);
  EXPECT_EQ(s.retrieve(sketch_request(32, 7)).status, 400);
  EXPECT_EQ(s.retrieve(json{{"image", png_b64(fixture().toy.sketch_domain.sketches[0].image)}, {"k", "2"}}.dump())
                .status,
            400);
  EXPECT_EQ(s.retrieve(json{{"image", png_b64(invsketch::ImageTensor(1, 32, 32, 1.0))}}.dump()).status, 400);
}

TEST(Service, RetrieveMatchesLibraryPipeline) {
  svc::Service s(fixture().cfg);
  s.load();
  const json j = json::parse(s.retrieve(sketch_request(32, 6)).body);
  auto st = style::load_style_model(fixture().cfg.style_ckpt);
  auto sb = sbir::load_sbir_model(fixture().cfg.sbir_ckpt);
  data::LoadOptions opts;
  opts.sketch_size = opts.photo_size = 32;
  const auto split = data::load_split(fixture().cfg.gallery_dir, data::SplitMode::kUnpaired, opts);
  // The request PNG is the sketch resized to 32 and quantised to 8 bits.
  const auto sent = invsketch::from_bytes(invsketch::decode_png(
      svc::base64_decode(json::parse(sketch_request(32)).at("image").get<std::string>())));
  const auto expected = sbir::retrieve(data::normalize_image(sent.to_gray(), 32), split.photos, *sb, *st);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(j["results"][i]["id"], expected.ranking[i].instance_id);
}

TEST(Service, GalleryPagination) {
  svc::Service s(fixture().cfg);
  s.load();
  auto page = [&](const char* p, const char* n) {
    return s.gallery(p ? std::optional<std::string>(p) : std::nullopt,
                     n ? std::optional<std::string>(n) : std::nullopt);
  };
  std::vector<std::string> ids;
  for (const auto& p : fixture().toy.sketch_domain.photos) ids.push_back(p.instance_id);
  std::sort(ids.begin(), ids.end());

  const json first = json::parse(page("0", "4").body);
  ASSERT_EQ(first.at("items").size(), 4U);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(first["items"][i]["id"], ids[static_cast<std::size_t>(i)]);
  EXPECT_EQ(first.at("total"), 6);
  EXPECT_EQ(json::parse(page("1", "4").body).at("items").size(), 2U);
  EXPECT_EQ(page("2", "4").status, 400);
  EXPECT_EQ(json::parse(page("0", "6").body).at("items").size(), 6U);
  EXPECT_EQ(json::parse(page(nullptr, nullptr).body).at("items").size(), 6U);
  EXPECT_EQ(page("0", "0").status, 400);
  EXPECT_EQ(page("-1", "2").status, 400);
  EXPECT_EQ(page("x", "2").status, 400);
}

TEST(Service, Thumbnails) {
  svc::Service s(fixture().cfg);
  s.load();
  const auto& id = fixture().toy.sketch_domain.photos[1].instance_id;
  const auto r = s.thumbnail(id);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "image/png");
  const auto img = invsketch::decode_png(std::vector<std::uint8_t>(r.body.begin(), r.body.end()));
  EXPECT_EQ(img.width, 64);
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(s.thumbnail("nope").status, 404);
}

TEST(Service, GalleryCacheWrittenAndReused) {
  auto cfg = fixture().cfg;
  cfg.gallery_cache = (temp_dir("cache") / "g.bin").string();
  svc::Service a(cfg);
  a.load();
  ASSERT_TRUE(std::filesystem::exists(cfg.gallery_cache));
  const auto cached = sbir::load_gallery_cache(cfg.gallery_cache);
  EXPECT_EQ(cached.size(), 6U);
  EXPECT_EQ(cached.model_fingerprint, invsketch::module_fingerprint(*sbir::load_sbir_model(cfg.sbir_ckpt)));

  // A cache from another model is ignored and replaced.
  sbir::Gallery foreign = cached;
  foreign.model_fingerprint = std::string(64, '0');
  sbir::save_gallery_cache(cfg.gallery_cache, foreign);
  svc::Service b(cfg);
  b.load();
  EXPECT_EQ(sbir::load_gallery_cache(cfg.gallery_cache).model_fingerprint, cached.model_fingerprint);
  EXPECT_EQ(a.retrieve(sketch_request(32, 6)).body, b.retrieve(sketch_request(32, 6)).body);
}

TEST(Service, ReloadAnswers503WhileInProgress) {
  svc::Service s(fixture().cfg);
  s.load();
  std::promise<void> entered, release;
  auto released = release.get_future().share();
  bool first = true;
  s.set_reload_hook([&] {
    if (!first) return;
    first = false;
    entered.set_value();
    released.wait();
  });
  auto reload = std::async(std::launch::async, [&] { return s.admin_reload(); });
  entered.get_future().wait();
  EXPECT_TRUE(s.reloading());
  EXPECT_EQ(s.stylize(sketch_request()).status, 503);
  EXPECT_EQ(s.retrieve(sketch_request()).status, 503);
  EXPECT_EQ(s.healthz().status, 503);
  EXPECT_EQ(s.admin_reload().status, 409);
  release.set_value();
  EXPECT_EQ(reload.get().status, 200);
  EXPECT_FALSE(s.reloading());
  EXPECT_EQ(s.stylize(sketch_request()).status, 200);
}

TEST(Service, FailedReloadKeepsPreviousSnapshot) {
  auto cfg = fixture().cfg;
  const auto dir = temp_dir("failing");
  std::filesystem::copy_file(cfg.style_ckpt, dir / "style.ckpt");
  cfg.style_ckpt = (dir / "style.ckpt").string();
  svc::Service s(cfg);
  s.load();
  const auto before = s.retrieve(sketch_request(32, 2)).body;
  std::filesystem::remove(dir / "style.ckpt");
  EXPECT_EQ(s.admin_reload().status, 500);
  EXPECT_EQ(s.retrieve(sketch_request(32, 2)).body, before);
}

TEST(Service, HttpRoundTrip) {
  auto cfg = fixture().cfg;
  cfg.max_request_bytes = 200000;
  svc::Service s(cfg);
  s.load();
  svc::HttpServer server(s);
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.listen(); });

  httplib::Client client("127.0.0.1", port);
  client.set_read_timeout(60, 0);
  auto health = client.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("status"), "ok");

  auto st1 = client.Post("/stylize", sketch_request(64), "application/json");
  auto st2 = client.Post("/stylize", sketch_request(64), "application/json");
  ASSERT_TRUE(st1 && st2);
  EXPECT_EQ(st1->status, 200);
  EXPECT_EQ(st1->body, st2->body);

  auto rt = client.Post("/retrieve", sketch_request(32, 4), "application/json");
  ASSERT_TRUE(rt);
  EXPECT_EQ(rt->status, 200);
  EXPECT_EQ(rt->body, s.retrieve(sketch_request(32, 4)).body);
  const std::string id = json::parse(rt->body)["results"][0]["id"];
  auto thumb = client.Get("/thumbnail/" + id);
  ASSERT_TRUE(thumb);
  EXPECT_EQ(thumb->status, 200);
  EXPECT_EQ(thumb->get_header_value("Content-Type"), "image/png");

  auto bad_k = client.Post("/retrieve", sketch_request(32, 0), "application/json");
  ASSERT_TRUE(bad_k);
  EXPECT_EQ(bad_k->status, 400);
  auto gal = client.Get("/gallery?page=0&page_size=5");
  ASSERT_TRUE(gal);
  EXPECT_EQ(json::parse(gal->body).at("items").size(), 5U);
  auto past = client.Get("/gallery?page=9&page_size=5");
  ASSERT_TRUE(past);
  EXPECT_EQ(past->status, 400);
  auto huge = client.Post("/stylize", std::string(300000, 'a'), "application/json");
  ASSERT_TRUE(huge);
  EXPECT_EQ(huge->status, 413);
  auto reload = client.Post("/admin/reload", "", "application/json");
  ASSERT_TRUE(reload);
  EXPECT_EQ(reload->status, 200);

  server.stop();
  t.join();
}
