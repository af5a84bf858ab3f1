#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "invsketch/checkpoint.hpp"
#include "invsketch/contour.hpp"
#include "invsketch/data.hpp"
#include "invsketch/errors.hpp"
#include "invsketch/eval.hpp"
#include "invsketch/fgsbir.hpp"
#include "invsketch/image.hpp"
#include "invsketch/service.hpp"
#include "invsketch/styletransfer.hpp"

namespace fs = std::filesystem;
using namespace invsketch;
using nlohmann::json;

namespace {

std::vector<fs::path> files_with(const std::string& dir, std::initializer_list<const char*> exts) {
  if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    for (const char* ext : exts)
      if (e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::map<std::string, std::string> config_kv(const std::string& path) {
  return path.empty() ? std::map<std::string, std::string>{} : read_kv_file(path);
}

void print_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << j.dump(2) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sketch-to-contour translation and fine-grained sketch-based photo retrieval"};
  app.require_subcommand(1);

  // make-toy
  std::string toy_out;
  int toy_n = 20, toy_size = 32;
  std::uint64_t toy_seed = 7;
  auto* make_toy = app.add_subcommand("make-toy", "Write a synthetic toy corpus");
  make_toy->add_option("--out", toy_out, "Output dataset root")->required();
  make_toy->add_option("--instances", toy_n, "Number of instances");
  make_toy->add_option("--size", toy_size, "Image size");
  make_toy->add_option("--seed", toy_seed, "Generator seed");

  // extract-contours
  std::string ec_in, ec_out, keep_mode = "above";
  contour::ThresholdConfig tcfg;
  int ec_size = 64;
  bool ec_edges = false;
  auto* extract = app.add_subcommand("extract-contours", "Binarised contours from photos or edge maps");
  extract->add_option("--in", ec_in, "Directory of photos (PNG) or edge maps")->required();
  extract->add_option("--out", ec_out, "Output directory")->required();
  extract->add_option("--alpha", tcfg.alpha, "Threshold fraction scale");
  extract->add_option("--beta", tcfg.beta, "Threshold decay rate");
  extract->add_option("--keep-mode", keep_mode, "above or below")->check(CLI::IsMember({"above", "below"}));
  extract->add_option("--size", ec_size, "Output size for photo inputs");
  extract->add_flag("--edges", ec_edges, "Inputs are precomputed edge maps (.grid, .npy, .png)");

  // train-style
  std::string ts_data, ts_config, ts_out, ts_net = "toy", ts_preset = "full";
  std::uint64_t ts_seed = 0;
  int ts_size = 32;
  auto* train_style = app.add_subcommand("train-style", "Train the sketch/contour translation model");
  train_style->add_option("--data", ts_data, "Dataset root with sketches/ and contours/")->required();
  train_style->add_option("--config", ts_config, "Key-value training config");
  train_style->add_option("--seed", ts_seed, "Seed");
  train_style->add_option("--out", ts_out, "Checkpoint path")->required();
  train_style->add_option("--net", ts_net, "toy or vgg16")->check(CLI::IsMember({"toy", "vgg16"}));
  train_style->add_option("--preset", ts_preset, "full or toy schedule")->check(CLI::IsMember({"full", "toy"}));
  train_style->add_option("--size", ts_size, "Image size");

  // stylize
  std::string sz_ckpt, sz_in, sz_out;
  int sz_size = 0;
  auto* stylize = app.add_subcommand("stylize", "Translate a directory of sketches to contours");
  stylize->add_option("--ckpt", sz_ckpt, "Style checkpoint")->required();
  stylize->add_option("--in", sz_in, "Directory of sketch PNGs")->required();
  stylize->add_option("--out", sz_out, "Output directory")->required();
  stylize->add_option("--size", sz_size, "Scale-and-centre inputs to this size first (0 keeps them)");

  // train-sbir
  std::string tb_data, tb_style, tb_config, tb_out, tb_net = "toy", tb_preset = "full";
  std::uint64_t tb_seed = 0;
  int tb_size = 32;
  auto* train_sbir = app.add_subcommand("train-sbir", "Train the four-branch retrieval model");
  train_sbir->add_option("--data", tb_data, "Paired dataset root")->required();
  train_sbir->add_option("--style-ckpt", tb_style, "Trained style checkpoint")->required();
  train_sbir->add_option("--config", tb_config, "Key-value training config");
  train_sbir->add_option("--seed", tb_seed, "Seed");
  train_sbir->add_option("--out", tb_out, "Checkpoint path")->required();
  train_sbir->add_option("--net", tb_net, "toy or resnet50")->check(CLI::IsMember({"toy", "resnet50"}));
  train_sbir->add_option("--preset", tb_preset, "full or toy schedule")->check(CLI::IsMember({"full", "toy"}));
  train_sbir->add_option("--size", tb_size, "Image size (resnet50 forces 256)");

  // retrieve
  std::string rt_sbir, rt_style, rt_query, rt_gallery, rt_cache;
  int rt_k = 10;
  bool rt_json = false;
  auto* retrieve = app.add_subcommand("retrieve", "Rank gallery photos for one sketch");
  retrieve->add_option("--sbir-ckpt", rt_sbir, "Retrieval checkpoint")->required();
  retrieve->add_option("--style-ckpt", rt_style, "Style checkpoint")->required();
  retrieve->add_option("--query", rt_query, "Sketch PNG")->required();
  retrieve->add_option("--gallery", rt_gallery, "Dataset root whose photos/ form the gallery")->required();
  retrieve->add_option("--k", rt_k, "Results to report");
  retrieve->add_option("--cache", rt_cache, "Gallery feature cache file");
  retrieve->add_flag("--json", rt_json, "JSON output");

  // evaluate
  std::string ev_sbir, ev_style, ev_data, ev_mode = "sbir", ev_json;
  std::size_t ev_limit = 0;
  auto* evaluate = app.add_subcommand("evaluate", "acc@k on a paired split");
  evaluate->add_option("--sbir-ckpt", ev_sbir, "Retrieval checkpoint")->required();
  evaluate->add_option("--style-ckpt", ev_style, "Style checkpoint")->required();
  evaluate->add_option("--data", ev_data, "Paired dataset root")->required();
  evaluate->add_option("--mode", ev_mode, "sbir or synthetic")->check(CLI::IsMember({"sbir", "synthetic"}));
  evaluate->add_option("--json", ev_json, "Report path ('-' for stdout)");
  evaluate->add_option("--gallery-limit", ev_limit, "Keep only the first N photos");

  // serve
  std::string sv_config;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", sv_config, "Key-value service config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_toy) {
      auto toy = data::make_toy_dataset(toy_seed, toy_n, toy_size);
      data::DatasetSplit split = toy.sketch_domain;
      split.contours = toy.contour_domain.contours;
      data::save_split(toy_out, split);
      std::cout << "wrote " << toy_n << " instances to " << toy_out << "\n";

    } else if (*extract) {
      tcfg.keep_mode = keep_mode == "above" ? contour::KeepMode::kAbove : contour::KeepMode::kBelow;
      tcfg.validate();
      fs::create_directories(ec_out);
      const contour::SobelDetector sobel;
      const auto inputs = ec_edges ? files_with(ec_in, {".grid", ".npy", ".png"}) : files_with(ec_in, {".png"});
      for (const auto& path : inputs) {
        ImageTensor c = ec_edges ? contour::dynamic_threshold(contour::load_edge_map(path.string()), tcfg)
                                 : contour::extract_contour(from_bytes(read_png(path.string())), sobel, tcfg, ec_size);
        write_png((fs::path(ec_out) / path.stem()).string() + ".png", to_bytes(c));
      }
      std::cout << "extracted " << inputs.size() << " contours\n";

    } else if (*train_style) {
      data::LoadOptions opts;
      opts.sketch_size = opts.photo_size = ts_size;
      const auto split = data::load_split(ts_data, data::SplitMode::kUnpaired, opts);
      auto net = ts_net == "vgg16" ? style::StyleNetConfig::vgg16() : style::StyleNetConfig::toy();
      net.seed = ts_seed;
      auto cfg = ts_preset == "toy" ? style::StyleTrainConfig::toy() : style::StyleTrainConfig{};
      cfg.apply(config_kv(ts_config));
      style::StyleModel model(net);
      style::train_style(model, split.sketches, split.contours, cfg, ts_seed, [&](const style::StyleLogRow& r) {
        if (r.iteration % 100 == 0)
          std::printf("%ld  D %.4f  G %.4f  embed %.4f  recons %.4f\n", r.iteration, r.d_total, r.g_total, r.embed,
                      r.recons);
      });
      style::save_style_model(ts_out, model, cfg.iterations);

    } else if (*stylize) {
      auto model = style::load_style_model(sz_ckpt);
      fs::create_directories(sz_out);
      const auto inputs = files_with(sz_in, {".png"});
      for (const auto& path : inputs) {
        const ByteImage raw = read_png(path.string());
        ImageTensor s = sz_size > 0 ? data::normalize_image(raw, sz_size) : from_bytes(raw).to_gray();
        if (s.channels() != 1) s = s.to_gray();
        const ImageTensor c = model->translate(s, style::Direction::kSketchToContour);
        write_png((fs::path(sz_out) / path.filename()).string(), to_bytes(c));
      }
      std::cout << "stylized " << inputs.size() << " sketches\n";

    } else if (*train_sbir) {
      auto net = tb_net == "resnet50" ? sbir::SbirNetConfig::resnet50() : sbir::SbirNetConfig::toy();
      if (tb_net == "toy") net.input_size = tb_size;
      net.seed = tb_seed;
      data::LoadOptions opts;
      opts.sketch_size = opts.photo_size = net.input_size;
      const auto split = data::load_split(tb_data, data::SplitMode::kPaired, opts);
      auto cfg = tb_preset == "toy" ? sbir::SbirTrainConfig::toy() : sbir::SbirTrainConfig{};
      cfg.apply(config_kv(tb_config));
      auto style_model = style::load_style_model(tb_style);
      sbir::SbirModel model(net);
      sbir::train_sbir(model, split, *style_model, cfg, tb_seed, [&](const sbir::SbirLogRow& r) {
        if (r.iteration % 100 == 0)
          std::printf("%ld  triplet %.4f  decorr %.4f  total %.4f\n", r.iteration, r.triplet, r.decorr, r.total);
      });
      sbir::save_sbir_model(tb_out, model, cfg.iterations);

    } else if (*retrieve) {
      auto sb = sbir::load_sbir_model(rt_sbir);
      auto st = style::load_style_model(rt_style);
      const int size = sb->config().input_size > 0 ? sb->config().input_size : 64;
      data::LoadOptions opts;
      opts.sketch_size = opts.photo_size = size;
      const auto photos = data::load_split(rt_gallery, data::SplitMode::kUnpaired, opts).photos;
      sbir::Gallery gallery;
      bool cached = false;
      if (!rt_cache.empty() && fs::exists(rt_cache)) {
        gallery = sbir::load_gallery_cache(rt_cache);
        std::vector<std::string> ids;
        for (const auto& p : photos) ids.push_back(p.instance_id);
        cached = gallery.model_fingerprint == module_fingerprint(*sb) && gallery.ids == ids;
      }
      if (!cached) {
        gallery = sbir::build_gallery(*sb, photos);
        if (!rt_cache.empty()) sbir::save_gallery_cache(rt_cache, gallery);
      }
      const ImageTensor query = data::normalize_image(read_png(rt_query), size);
      const auto result = sbir::retrieve(query, gallery, *sb, *st, fs::path(rt_query).stem().string());
      if (rt_k < 1) throw InvalidK("k must be at least 1");
      const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(rt_k), result.ranking.size());
      if (rt_json) {
        json items = json::array();
        for (std::size_t i = 0; i < k; ++i)
          items.push_back({{"rank", i + 1}, {"id", result.ranking[i].instance_id}, {"distance", result.ranking[i].distance}});
        print_json({{"query", result.query_id}, {"results", items}}, "-");
      } else {
        for (std::size_t i = 0; i < k; ++i)
          std::printf("%2zu  %-24s %.6f\n", i + 1, result.ranking[i].instance_id.c_str(), result.ranking[i].distance);
      }

    } else if (*evaluate) {
      auto sb = sbir::load_sbir_model(ev_sbir);
      auto st = style::load_style_model(ev_style);
      data::LoadOptions opts;
      opts.sketch_size = opts.photo_size = sb->config().input_size > 0 ? sb->config().input_size : 64;
      const auto split = data::load_split(ev_data, data::SplitMode::kPaired, opts);
      eval::EvalOptions eo;
      eo.mode = eval::parse_query_mode(ev_mode);
      eo.gallery_limit = ev_limit;
      auto report = eval::evaluate(*st, *sb, split, eo);
      json j = report.to_json();
      j["checkpoints"] = {{"sbir", sha256_file(ev_sbir)}, {"style", sha256_file(ev_style)}};
      if (ev_json.empty()) {
        for (const auto& [k, v] : report.accuracy) std::printf("acc@%d %.4f\n", k, v);
      } else {
        print_json(j, ev_json);
      }

    } else if (*serve) {
      service::ServiceConfig cfg = sv_config.empty() ? service::ServiceConfig{} : service::ServiceConfig::from_file(sv_config);
      cfg.apply_env([](const char* name) { return std::getenv(name); });
      service::Service svc(cfg);
      svc.load();
      service::HttpServer server(svc);
      const int port = server.bind(cfg.host, cfg.port);
      std::printf("listening on %s:%d\n", cfg.host.c_str(), port);
      std::fflush(stdout);
      server.listen();
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
