// Command-line front end for every pipeline stage and the rollout harness.
//
// Exit status: 0 success, 1 usage error, 2 pipeline failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "avi/geometry.hpp"
#include "avi/icp.hpp"
#include "avi/io.hpp"
#include "avi/locquant.hpp"
#include "avi/predictor.hpp"
#include "avi/rollout.hpp"
#include "avi/segmentation.hpp"
#include "avi/vqtok.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsageError = 1;
constexpr int kPipelineError = 2;

json read_json(const std::string& path) {
  try {
    return json::parse(avi::io::read_text(path));
  } catch (const json::parse_error& e) {
    throw avi::Error(path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) { avi::io::write_atomic(path, j.dump(2) + "\n"); }

avi::AABB parse_box(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 6) throw CLI::ValidationError("--box", "expects minx,miny,minz,maxx,maxy,maxz");
  avi::AABB box{avi::Vec3(v[0], v[1], v[2]), avi::Vec3(v[3], v[4], v[5])};
  if (box.degenerate()) throw CLI::ValidationError("--box", "box must have positive extent on every axis");
  return box;
}

avi::QuantConfig load_quant(const std::string& path) {
  return path.empty() ? avi::QuantConfig{} : read_json(path).get<avi::QuantConfig>();
}

std::shared_ptr<const avi::Codebook> load_codebook(const std::string& path) {
  return std::make_shared<const avi::Codebook>(avi::codebook_from_json(read_json(path)));
}

avi::TokenGrid read_token_grid(const std::string& path) {
  const auto ids = avi::io::parse_token_stream(avi::io::read_text(path));
  avi::TokenGrid g;
  for (auto id : ids) {
    if (id < 0 || id > INT32_MAX) throw avi::Error("shape token " + std::to_string(id) + " out of range");
    g.tokens.push_back(static_cast<std::int32_t>(id));
  }
  return g;
}

json vec_json(const avi::Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-centric 3D token pipeline: segmentation, location quantization, shape tokens, "
               "next-state prediction, ICP action recovery and rollout evaluation."};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  std::function<void()> run;

  // voxelize ---------------------------------------------------------------
  struct {
    std::string cloud, box, out;
    int res = 64;
  } vox;
  auto* voxelize = app.add_subcommand("voxelize", "Point cloud (x y z lines) to binary occupancy grid");
  voxelize->add_option("cloud", vox.cloud, "Input point cloud")->required()->check(CLI::ExistingFile);
  voxelize->add_option("--box", vox.box, "Grid bounds minx,miny,minz,maxx,maxy,maxz (default: cloud bounds)");
  voxelize->add_option("--res", vox.res, "Cells per axis")->capture_default_str()->check(CLI::Range(2, 1024));
  voxelize->add_option("--out", vox.out, "Output grid")->required();
  voxelize->callback([&] {
    run = [&] {
      const auto cloud = avi::read_point_cloud(vox.cloud);
      const auto box = vox.box.empty() ? avi::bounding_box(cloud) : parse_box(vox.box);
      avi::VoxelizeStats stats;
      const auto grid = avi::voxelize(cloud, box, vox.res, &stats);
      avi::io::write_atomic(vox.out, avi::encode_voxel_grid(grid));
      std::cout << grid.occupied_count() << " occupied cells, " << stats.clamped << " points clamped\n";
    };
  });

  // devoxelize -------------------------------------------------------------
  struct {
    std::string grid, box, out;
  } devox;
  auto* devoxelize = app.add_subcommand("devoxelize", "Occupancy grid to cell-center point cloud");
  devoxelize->add_option("grid", devox.grid, "Input grid")->required()->check(CLI::ExistingFile);
  devoxelize->add_option("--box", devox.box, "Grid bounds minx,miny,minz,maxx,maxy,maxz")->required();
  devoxelize->add_option("--out", devox.out, "Output point cloud")->required();
  devoxelize->callback([&] {
    run = [&] {
      const auto cloud = avi::devoxelize(avi::read_voxel_grid(devox.grid), parse_box(devox.box));
      avi::io::write_atomic(devox.out, avi::format_point_cloud(cloud));
    };
  });

  // lift -------------------------------------------------------------------
  struct {
    std::string depth, masks, camera, quant, out_dir;
  } lift;
  auto* lift_cmd = app.add_subcommand("lift", "Depth image + instance masks to per-object clouds and descriptors");
  lift_cmd->add_option("depth", lift.depth, "Depth image (AVID)")->required()->check(CLI::ExistingFile);
  lift_cmd->add_option("masks", lift.masks, "Mask image (AVIM)")->required()->check(CLI::ExistingFile);
  lift_cmd->add_option("camera", lift.camera, "Camera JSON")->required()->check(CLI::ExistingFile);
  lift_cmd->add_option("--quant", lift.quant, "Quantization config JSON")->check(CLI::ExistingFile);
  lift_cmd->add_option("--out-dir", lift.out_dir, "Output directory")->required();
  lift_cmd->callback([&] {
    run = [&] {
      const auto cam = avi::camera_from_json(read_json(lift.camera));
      const auto quant = load_quant(lift.quant);
      const auto scene = avi::lift_masks(avi::decode_depth(avi::io::read_bytes(lift.depth)), cam.intrinsics, cam.pose,
                                         avi::decode_masks(avi::io::read_bytes(lift.masks)), quant);
      fs::create_directories(lift.out_dir);
      json segments = json::array();
      for (const auto& s : scene.segments) {
        const std::string name = "object_" + std::to_string(s.id) + ".xyz";
        avi::io::write_atomic((fs::path(lift.out_dir) / name).string(), avi::format_point_cloud(s.cloud));
        segments.push_back({{"id", s.id}, {"cloud", name}, {"points", s.cloud.size()}, {"descriptor", s.descriptor}});
      }
      write_json((fs::path(lift.out_dir) / "segments.json").string(),
                 {{"segments", segments},
                  {"dropped_labels", scene.diagnostics.dropped_labels},
                  {"outside_workspace", scene.diagnostics.outside_workspace}});
      std::cout << scene.segments.size() << " segments\n";
    };
  });

  // locquant ---------------------------------------------------------------
  auto* locquant = app.add_subcommand("locquant", "Location quantization");
  locquant->require_subcommand(1);
  struct {
    std::string cloud, quant, out, bins;
    std::int64_t base = 32000;
  } lq;
  auto* lq_encode = locquant->add_subcommand("encode", "Cloud to location descriptor and token ids");
  lq_encode->add_option("cloud", lq.cloud, "Object point cloud")->required()->check(CLI::ExistingFile);
  lq_encode->add_option("--quant", lq.quant, "Quantization config JSON")->check(CLI::ExistingFile);
  lq_encode->add_option("--base", lq.base, "Base vocabulary size")->capture_default_str();
  lq_encode->add_option("--out", lq.out, "Output JSON (default: stdout)");
  lq_encode->callback([&] {
    run = [&] {
      const auto quant = load_quant(lq.quant);
      const auto desc = avi::quantize_location(avi::read_point_cloud(lq.cloud), quant);
      const auto vocab = avi::extend_vocabulary(lq.base, 2);  // location ids do not depend on the codebook size
      const json j = {{"descriptor", desc}, {"tokens", avi::tokens_of(desc, vocab)}};
      if (lq.out.empty())
        std::cout << j.dump(2) << "\n";
      else
        write_json(lq.out, j);
    };
  });
  auto* lq_decode = locquant->add_subcommand("decode", "Bins to decoded centroid and scale");
  lq_decode->add_option("--bins", lq.bins, "x,y,z,s (1-indexed)")->required();
  lq_decode->add_option("--quant", lq.quant, "Quantization config JSON")->check(CLI::ExistingFile);
  lq_decode->callback([&] {
    run = [&] {
      std::vector<int> v;
      std::stringstream ss(lq.bins);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(std::stoi(item));
      if (v.size() != 4) throw CLI::ValidationError("--bins", "expects x,y,z,s");
      const auto quant = load_quant(lq.quant);
      const auto loc = avi::dequantize_location({v[0], v[1], v[2], v[3]}, quant);
      std::cout << json{{"centroid", vec_json(loc.centroid)}, {"scale_fraction", loc.scale_fraction}}.dump(2) << "\n";
    };
  });
  auto* lq_table = locquant->add_subcommand("table1", "Effective resolution for V=64, s=1 configurations");
  lq_table->callback([&] {
    run = [&] {
      struct Row {
        const char* name;
        bool lq;
        int bins;
        double s;
      };
      for (const Row& r : {Row{"No-LQ", false, 64, 1.0}, Row{"B=64", true, 64, 1.0}, Row{"B=128", true, 128, 1.0},
                           Row{"B=256", true, 256, 1.0}}) {
        avi::QuantConfig cfg;
        cfg.lq_enabled = r.lq;
        cfg.position_bins = r.bins;
        std::printf("%-12s %d\n", r.name, avi::effective_resolution(cfg, 64, r.s));
      }
    };
  });

  // codebook ---------------------------------------------------------------
  auto* codebook = app.add_subcommand("codebook", "Shape codebook");
  codebook->require_subcommand(1);
  struct {
    std::vector<std::string> grids;
    int k = 8192;
    std::string out;
  } cbt;
  auto* cb_train = codebook->add_subcommand("train", "k-means over 4x4x2 patches of the given grids");
  cb_train->add_option("grids", cbt.grids, "Training grids")->required()->check(CLI::ExistingFile);
  cb_train->add_option("--k", cbt.k, "Codebook size")->capture_default_str()->check(CLI::Range(2, 1 << 20));
  cb_train->add_option("--out", cbt.out, "Output codebook JSON")->required();
  cb_train->callback([&] {
    run = [&] {
      std::vector<avi::VoxelGrid> grids;
      for (const auto& g : cbt.grids) grids.push_back(avi::read_voxel_grid(g));
      const auto result = avi::train_codebook(grids, cbt.k, seed);
      write_json(cbt.out, avi::codebook_to_json(result.codebook));
      std::cout << result.distinct_patterns << " distinct patterns, " << result.iterations << " iterations"
                << (result.padded ? ", padded" : "") << "\n";
    };
  });

  // shape ------------------------------------------------------------------
  auto* shape = app.add_subcommand("shape", "Shape tokenizer");
  shape->require_subcommand(1);
  struct {
    std::string in, codebook, out;
  } sh;
  auto* sh_encode = shape->add_subcommand("encode", "64^3 grid to 8192 shape tokens");
  auto* sh_decode = shape->add_subcommand("decode", "8192 shape tokens to 64^3 grid");
  for (auto* sub : {sh_encode, sh_decode}) {
    sub->add_option("input", sh.in, "Input grid or token file")->required()->check(CLI::ExistingFile);
    sub->add_option("--codebook", sh.codebook, "Codebook JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", sh.out, "Output file")->required();
  }
  sh_encode->callback([&] {
    run = [&] {
      const auto cb = load_codebook(sh.codebook);
      const auto tokens = avi::encode_grid(avi::read_voxel_grid(sh.in), *cb);
      const std::vector<std::int64_t> ids(tokens.tokens.begin(), tokens.tokens.end());
      avi::io::write_atomic(sh.out, avi::io::format_token_stream(ids));
    };
  });
  sh_decode->callback([&] {
    run = [&] {
      const auto cb = load_codebook(sh.codebook);
      avi::io::write_atomic(sh.out, avi::encode_voxel_grid(avi::decode_grid(read_token_grid(sh.in), *cb)));
    };
  });

  // predict ----------------------------------------------------------------
  struct {
    std::string predictor, in, out;
  } pr;
  auto* predict = app.add_subcommand("predict", "Next-state token sequence from the current one");
  predict->add_option("--predictor", pr.predictor, "Predictor JSON")->required()->check(CLI::ExistingFile);
  predict->add_option("--in", pr.in, "Input token stream")->required()->check(CLI::ExistingFile);
  predict->add_option("--out", pr.out, "Output token stream")->required();
  predict->callback([&] {
    run = [&] {
      const json j = read_json(pr.predictor);
      const std::string base_dir = fs::path(pr.predictor).parent_path().string();
      std::string cb_path = j.at("codebook").get<std::string>();
      if (fs::path(cb_path).is_relative()) cb_path = (fs::path(base_dir) / cb_path).string();
      const auto quant = j.contains("quant") ? j.at("quant").get<avi::QuantConfig>() : avi::QuantConfig{};
      const auto ctx = avi::TokenContext::make(j.value("base_vocabulary", std::int64_t{32000}), load_codebook(cb_path), quant);
      const auto kind = avi::predictor_from_json(j.at("predictor"), ctx, base_dir.empty() ? "." : base_dir);
      const auto current = avi::parse_sequence(avi::io::parse_token_stream(avi::io::read_text(pr.in)), ctx);
      const auto next = avi::predict_next(kind, current, ctx);
      avi::io::write_atomic(pr.out, avi::io::format_token_stream(avi::to_stream(next, ctx)));
    };
  });

  // icp --------------------------------------------------------------------
  struct {
    std::string source, target, init, config, out;
  } ic;
  auto* icp = app.add_subcommand("icp", "Rigid alignment of source onto target");
  icp->add_option("source", ic.source, "Source point cloud")->required()->check(CLI::ExistingFile);
  icp->add_option("target", ic.target, "Target point cloud")->required()->check(CLI::ExistingFile);
  icp->add_option("--init", ic.init, "Initial transform JSON")->check(CLI::ExistingFile);
  icp->add_option("--config", ic.config, "ICP config JSON")->check(CLI::ExistingFile);
  icp->add_option("--out", ic.out, "Output JSON (default: stdout)");
  icp->callback([&] {
    run = [&] {
      const auto cfg = ic.config.empty() ? avi::IcpConfig{} : avi::icp_config_from_json(read_json(ic.config));
      const auto init = ic.init.empty() ? avi::RigidTransform::identity() : avi::transform_from_json(read_json(ic.init));
      const auto result = avi::icp_align(avi::read_point_cloud(ic.source), avi::read_point_cloud(ic.target), cfg, init);
      const json j = avi::icp_result_to_json(result);
      if (ic.out.empty())
        std::cout << j.dump(2) << "\n";
      else
        write_json(ic.out, j);
      if (!result.diagnostic.empty()) throw avi::Error("icp failed: " + result.diagnostic);
    };
  });

  // rollout ----------------------------------------------------------------
  struct {
    std::string task, predictor, out_dir;
    int trials = -1;
  } ro;
  auto* rollout = app.add_subcommand("rollout", "Closed-loop episodes on generated scenes");
  rollout->add_option("--task", ro.task, "Scene/task config JSON")->required()->check(CLI::ExistingFile);
  rollout->add_option("--predictor", ro.predictor, "Predictor JSON")->required()->check(CLI::ExistingFile);
  rollout->add_option("--trials", ro.trials, "Number of rollouts (default: config value)")->check(CLI::PositiveNumber);
  rollout->add_option("--out-dir", ro.out_dir, "Output directory")->required();
  rollout->callback([&] {
    run = [&] {
      auto cfg = avi::rollout_config_from_json(read_json(ro.task));
      if (ro.trials > 0) cfg.trials = ro.trials;
      const auto training = avi::train_scene_codebook(cfg);
      auto pipeline = avi::make_pipeline(cfg, std::make_shared<const avi::Codebook>(training.codebook));
      pipeline.record = true;
      const auto kind = avi::predictor_from_json(read_json(ro.predictor), pipeline.tokens,
                                                 fs::path(ro.predictor).parent_path().string());
      const auto ev = avi::evaluate(cfg, pipeline, kind, cfg.trials, seed);
      fs::create_directories(ro.out_dir);
      const fs::path root(ro.out_dir);
      for (std::size_t i = 0; i < ev.traces.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "trial_%03zu", i);
        avi::write_trace(ev.traces[i], (root / name).string());
      }
      write_json((root / "codebook.json").string(), avi::codebook_to_json(training.codebook));
      write_json((root / "config.json").string(), avi::rollout_config_to_json(cfg));
      write_json((root / "outcomes.json").string(), avi::outcomes_to_json(ev.traces));
      std::cout << ev.summary.format() << "\n";
    };
  });

  // summarize --------------------------------------------------------------
  std::string outcomes_path;
  auto* summarize = app.add_subcommand("summarize", "Success rate as \"M.MM ± S.SS\"");
  summarize->add_option("outcomes", outcomes_path, "Outcomes JSON")->required()->check(CLI::ExistingFile);
  summarize->callback([&] {
    run = [&] { std::cout << avi::summarize(avi::outcomes_from_json(read_json(outcomes_path))).format() << "\n"; };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    run();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPipelineError;
  }
  return 0;
}
