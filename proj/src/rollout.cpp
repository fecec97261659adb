#include "avi/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "avi/io.hpp"

namespace avi {

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

const SceneObject* Scene::find(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

SceneObject* Scene::find(int id) {
  for (auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

void Scene::validate() const {
  int attached = 0;
  for (const auto& o : objects) {
    attached += o.attached ? 1 : 0;
    for (const auto& p : o.cloud.points)
      if (!workspace.contains(p)) throw Error("scene: object " + std::to_string(o.id) + " leaves the workspace");
  }
  if (attached > 1) throw Error("scene: more than one attached object");
}

CameraSetup default_camera() {
  CameraSetup cam;
  cam.intrinsics = CameraIntrinsics{300.0, 300.0, 127.5, 127.5, 256, 256};
  cam.pose.position = Vec3(0.5, 0.5, 2.0);
  cam.pose.orientation = Eigen::Quaterniond(0.0, 1.0, 0.0, 0.0);  // optical axis along -z, image v along -y
  return cam;
}

void SceneConfig::validate() const {
  if (object_count < 1 || object_count > 16) throw Error("scene: object_count must be in [1, 16]");
  if (min_points < 1 || max_points < min_points) throw Error("scene: invalid point count range");
  if (!(min_size > 0.0) || max_size < min_size) throw Error("scene: invalid size range");
  if (!(margin >= 0.0)) throw Error("scene: margin must be >= 0");
  if (workspace.degenerate()) throw Error("scene: degenerate workspace");
  camera.intrinsics.validate();
}

RenderedView render(const Scene& scene, const CameraSetup& camera) {
  const auto& k = camera.intrinsics;
  k.validate();
  RenderedView view;
  view.camera = camera;
  view.depth = DepthImage{k.width, k.height, std::vector<float>(static_cast<std::size_t>(k.width) * k.height, 0.0f)};
  view.masks = MaskSet{k.width, k.height, std::vector<std::uint16_t>(view.depth.depth.size(), 0), 0};
  const RigidTransform to_camera = invert(camera.pose.as_transform());
  for (const auto& obj : scene.objects) {
    if (obj.id < 1 || obj.id > 0xFFFF) throw Error("render: object id out of mask range");
    view.masks.object_count = std::max(view.masks.object_count, obj.id);
    for (const auto& p : obj.cloud.points) {
      const Vec3 c = to_camera.apply(p);
      if (c.z() <= 0.0) continue;
      const long u = std::lround(k.fx * c.x() / c.z() + k.cx);
      const long v = std::lround(k.fy * c.y() / c.z() + k.cy);
      if (u < 0 || v < 0 || u >= k.width || v >= k.height) continue;
      const std::size_t idx = static_cast<std::size_t>(v) * k.width + static_cast<std::size_t>(u);
      float& d = view.depth.depth[idx];
      const auto z = static_cast<float>(c.z());
      if (d == 0.0f || z < d) {
        d = z;
        view.masks.labels[idx] = static_cast<std::uint16_t>(obj.id);
      }
    }
  }
  return view;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

PointCloud sample_box(Rng& rng, const Vec3& dims, int n) {
  const double ax = dims.y() * dims.z(), ay = dims.x() * dims.z(), az = dims.x() * dims.y();
  std::discrete_distribution<int> face({ax, ax, ay, ay, az, az});
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    Vec3 p(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    p[axis] = (f % 2 == 0) ? -0.5 : 0.5;
    cloud.points.push_back(p.cwiseProduct(dims));
  }
  return cloud;
}

PointCloud sample_sphere(Rng& rng, double radius, int n) {
  std::normal_distribution<double> g;
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    Vec3 d(g(rng), g(rng), g(rng));
    while (d.norm() < 1e-9) d = Vec3(g(rng), g(rng), g(rng));
    cloud.points.push_back(radius * d.normalized());
  }
  return cloud;
}

PointCloud sample_cylinder(Rng& rng, double radius, double height, int n) {
  const double side = 2.0 * std::numbers::pi * radius * height, cap = std::numbers::pi * radius * radius;
  std::discrete_distribution<int> part({side, cap, cap});
  PointCloud cloud;
  for (int i = 0; i < n; ++i) {
    const int which = part(rng);
    const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    if (which == 0) {
      cloud.points.emplace_back(radius * std::cos(a), radius * std::sin(a), uniform(rng, -0.5, 0.5) * height);
    } else {
      const double r = radius * std::sqrt(uniform(rng, 0.0, 1.0));  // uniform over the disc
      cloud.points.emplace_back(r * std::cos(a), r * std::sin(a), which == 1 ? -0.5 * height : 0.5 * height);
    }
  }
  return cloud;
}

bool overlaps(const AABB& a, const AABB& b, double gap) {
  for (int i = 0; i < 3; ++i)
    if (a.max[i] + gap <= b.min[i] || b.max[i] + gap <= a.min[i]) return false;
  return true;
}

AABB shifted(const AABB& box, const Vec3& t) { return AABB{box.min + t, box.max + t}; }

constexpr double kPlacementGap = 0.02;
constexpr double kFloorClearance = 0.002;

}  // namespace

GeneratedScene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  GeneratedScene out;
  Scene& scene = out.scene;
  scene.workspace = cfg.workspace;
  std::vector<AABB> placed;
  static const char* kPrimitives[] = {"box", "sphere", "cylinder"};

  for (int id = 1; id <= cfg.object_count; ++id) {
    SceneObject obj;
    obj.id = id;
    const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
    obj.primitive = kPrimitives[kind];
    const int n = std::uniform_int_distribution<int>(cfg.min_points, cfg.max_points)(rng);
    PointCloud local;
    if (kind == 0) {
      local = sample_box(rng, Vec3(uniform(rng, cfg.min_size, cfg.max_size), uniform(rng, cfg.min_size, cfg.max_size),
                                   uniform(rng, cfg.min_size, cfg.max_size)), n);
    } else if (kind == 1) {
      local = sample_sphere(rng, 0.5 * uniform(rng, cfg.min_size, cfg.max_size), n);
    } else {
      local = sample_cylinder(rng, 0.5 * uniform(rng, cfg.min_size, cfg.max_size), uniform(rng, cfg.min_size, cfg.max_size), n);
    }
    const AABB local_box = bounding_box(local);

    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      const Vec3 lo = cfg.workspace.min - local_box.min;
      const Vec3 hi = cfg.workspace.max - local_box.max;
      if (!(lo.x() + cfg.margin < hi.x() - cfg.margin) || !(lo.y() + cfg.margin < hi.y() - cfg.margin)) break;
      // Objects sit just above the workspace floor so round-off in recovered motions stays inside.
      const Vec3 t(uniform(rng, lo.x() + cfg.margin, hi.x() - cfg.margin), uniform(rng, lo.y() + cfg.margin, hi.y() - cfg.margin),
                   lo.z() + kFloorClearance);
      const AABB box = shifted(local_box, t);
      if (std::any_of(placed.begin(), placed.end(), [&](const AABB& b) { return overlaps(box, b, kPlacementGap); }))
        continue;
      for (const auto& p : local.points) obj.cloud.points.push_back(p + t);
      placed.push_back(box);
      ok = true;
    }
    if (!ok) throw Error("generate_scene: could not place object " + std::to_string(id) + " after 1000 attempts");
    scene.objects.push_back(std::move(obj));
  }

  const SceneObject& first = scene.objects.front();
  scene.gripper.position = first.cloud.centroid() + Vec3(0.0, 0.0, 0.15);
  scene.objects.front().attached = true;
  scene.validate();
  out.view = render(scene, cfg.camera);
  return out;
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

void Task::validate() const {
  if (!(goal_radius > 0.0)) throw Error("task: goal radius must be positive");
  if (max_steps < 1) throw Error("task: max_steps must be >= 1");
  if (!(success_epsilon > 0.0)) throw Error("task: success_epsilon must be positive");
  if (instruction.text_tokens.size() > kMaxInstructionTokens) throw Error("task: instruction too long");
}

void TaskConfig::validate() const {
  if (!(min_goal_distance > 0.0) || max_goal_distance < min_goal_distance) throw Error("task: invalid goal distance range");
  if (max_steps < 1) throw Error("task: max_steps must be >= 1");
}

namespace {

Vec3 bin_step(const Vec3& from, const Vec3& goal, const Vec3& width, int max_bins) {
  Vec3 out;
  for (int a = 0; a < 3; ++a) {
    const double bins = std::clamp<double>(std::round((goal[a] - from[a]) / width[a]), -max_bins, max_bins);
    out[a] = bins * width[a];
  }
  return out;
}

}  // namespace

Task make_task(const Scene& scene, const TaskConfig& cfg, const QuantConfig& quant, std::uint64_t seed,
               int max_step_bins) {
  cfg.validate();
  quant.validate();
  if (max_step_bins < 1) throw Error("task: max_step_bins must be >= 1");
  const SceneObject* target = scene.find(cfg.target_object);
  if (!target) throw Error("task: target object " + std::to_string(cfg.target_object) + " not in scene");

  const Vec3 width = quant.bin_width();
  Task task;
  task.instruction = make_instruction(0, cfg.instruction);
  task.target_object = cfg.target_object;
  task.max_steps = cfg.max_steps;
  task.goal_radius = cfg.goal_radius > 0.0 ? cfg.goal_radius : 2.0 * width.maxCoeff();
  task.success_epsilon = cfg.success_epsilon > 0.0 ? cfg.success_epsilon : 2.0 * width.maxCoeff();

  const Vec3 start = target->cloud.centroid();
  const AABB box = bounding_box(target->cloud);
  Rng rng(seed);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double dist = uniform(rng, cfg.min_goal_distance, cfg.max_goal_distance);
    const Vec3 goal = start + dist * Vec3(std::cos(angle), std::sin(angle), 0.0);
    if ((goal - start).norm() <= task.goal_radius) continue;

    // Walk the oracle's path and reject goals whose route collides or leaves the workspace.
    Vec3 pos = start;
    bool clear = true;
    int steps = 0;
    for (; steps <= cfg.max_steps && clear; ++steps) {
      const AABB moved = shifted(box, pos - start);
      if (!scene.workspace.contains(moved.min) || !scene.workspace.contains(moved.max)) clear = false;
      for (const auto& other : scene.objects)
        if (other.id != target->id && overlaps(moved, bounding_box(other.cloud), 0.0)) clear = false;
      if ((pos - goal).norm() <= task.success_epsilon) break;
      pos += bin_step(pos, goal, width, max_step_bins);
    }
    if (!clear || steps > cfg.max_steps) continue;
    task.goal_center = goal;
    task.validate();
    return task;
  }
  throw Error("make_task: no reachable goal after 1000 attempts");
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

std::string to_string(FailureReason r) {
  switch (r) {
    case FailureReason::none: return "none";
    case FailureReason::timeout: return "timeout";
    case FailureReason::icp_failure: return "icp_failure";
    case FailureReason::out_of_workspace: return "out_of_workspace";
  }
  return "none";
}

FailureReason failure_reason_from_string(const std::string& s) {
  for (auto r : {FailureReason::none, FailureReason::timeout, FailureReason::icp_failure, FailureReason::out_of_workspace})
    if (to_string(r) == s) return r;
  throw Error("unknown failure reason '" + s + "'");
}

RigidTransform goal_step(const Scene& scene, const Task& task, const QuantConfig& quant, int max_step_bins) {
  const SceneObject* target = scene.find(task.target_object);
  if (!target) throw Error("goal_step: target object missing");
  return RigidTransform::from_translation(bin_step(target->cloud.centroid(), task.goal_center, quant.bin_width(), max_step_bins));
}

namespace {

PredictorKind bind_step(const PredictorKind& kind, const std::optional<RigidTransform>& delta, int target,
                        std::uint64_t step_seed) {
  if (const auto* oracle = std::get_if<OraclePredictor>(&kind)) {
    OraclePredictor o = *oracle;
    if (delta) {
      o.true_delta = *delta;
      o.target_object = target;
    }
    return o;
  }
  if (const auto* noisy = std::get_if<std::shared_ptr<const NoisyPredictor>>(&kind)) {
    const auto& n = **noisy;
    return make_noisy(bind_step(n.inner, delta, target, step_seed), n.flip_probability, mix_seed(n.seed, step_seed));
  }
  return kind;
}

StepResult fail(const Scene& scene, TraceEntry entry, FailureReason reason, std::string why) {
  StepResult r{scene, std::move(entry), RolloutOutcome{false, reason, std::move(why), 0}};
  r.scene.step_index = scene.step_index + 1;
  return r;
}

}  // namespace

StepResult step(const Scene& scene, const Task& task, const PredictorKind& predictor, const PipelineConfig& cfg,
                std::uint64_t step_seed) {
  if (scene.step_index >= task.max_steps) throw Error("step: step index has reached max_steps");
  const auto& ctx = cfg.tokens;
  const SceneObject* target = scene.find(task.target_object);
  if (!target) throw Error("step: target object missing from scene");

  TraceEntry entry;
  entry.step = scene.step_index;
  if (cfg.record) entry.snapshot = scene;
  entry.gripper = scene.gripper;
  entry.target_centroid = target->cloud.centroid();

  SceneTokens current, predicted;
  try {
    const RenderedView view = render(scene, cfg.camera);
    const SceneDecomposition seen =
        lift_masks(view.depth, cfg.camera.intrinsics, cfg.camera.pose, view.masks, ctx.quant);
    current = build_sequence(seen, task.instruction, ctx);
    if (!current.find(task.target_object)) throw Error("target object not visible");
    std::optional<RigidTransform> delta;
    if (cfg.goal_directed) delta = goal_step(scene, task, ctx.quant, cfg.max_step_bins);
    predicted = predict_next(bind_step(predictor, delta, task.target_object, step_seed), current, ctx);
  } catch (const Error& e) {
    return fail(scene, std::move(entry), FailureReason::icp_failure, e.what());
  }
  if (cfg.record) entry.predicted_stream = to_stream(predicted, ctx);

  const ObjectTokens* before = current.find(task.target_object);
  const ObjectTokens* after = predicted.find(task.target_object);
  if (!after) return fail(scene, std::move(entry), FailureReason::icp_failure, "prediction dropped the target object");
  entry.icp = object_delta(decode_grid(before->shape, *ctx.codebook, ctx.layout), before->location,
                           decode_grid(after->shape, *ctx.codebook, ctx.layout), after->location, ctx.quant, cfg.icp);
  if (!entry.icp.diagnostic.empty())
    return fail(scene, std::move(entry), FailureReason::icp_failure, entry.icp.diagnostic);

  Scene next = scene;
  SceneObject& moved = *next.find(task.target_object);
  moved.cloud = apply_transform(moved.cloud, entry.icp.transform);
  for (const auto& p : moved.cloud.points)
    if (!next.workspace.contains(p))
      return fail(scene, std::move(entry), FailureReason::out_of_workspace, "target object left the workspace");
  next.gripper = apply_to_pose(entry.icp.transform, scene.gripper);
  next.step_index = scene.step_index + 1;
  entry.gripper = next.gripper;
  entry.target_centroid = moved.cloud.centroid();
  return StepResult{std::move(next), std::move(entry), std::nullopt};
}

RolloutTrace run_rollout(const Scene& initial, const Task& task, const PredictorKind& predictor,
                         const PipelineConfig& cfg, std::uint64_t seed) {
  task.validate();
  RolloutTrace trace;
  trace.seed = seed;
  trace.task = task;
  Scene scene = initial;
  scene.step_index = 0;
  if (!scene.find(task.target_object)) throw Error("run_rollout: target object missing from scene");
  for (auto& o : scene.objects) o.attached = o.id == task.target_object;

  auto reached = [&](const Scene& s) {
    return (s.find(task.target_object)->cloud.centroid() - task.goal_center).norm() <= task.success_epsilon;
  };

  bool done = false;
  if (reached(scene)) {
    trace.outcome = RolloutOutcome{true, FailureReason::none, "", 0};
    done = true;
  }
  for (int i = 0; i < task.max_steps && !done; ++i) {
    StepResult r = step(scene, task, predictor, cfg, mix_seed(seed, static_cast<std::uint64_t>(i)));
    trace.entries.push_back(std::move(r.entry));
    scene = std::move(r.scene);
    if (r.failure) {
      trace.outcome = *r.failure;
      done = true;
    } else if (reached(scene)) {
      trace.outcome = RolloutOutcome{true, FailureReason::none, "", 0};
      done = true;
    }
  }
  if (!done) trace.outcome = RolloutOutcome{false, FailureReason::timeout, "goal not reached within max_steps", 0};
  trace.outcome.steps = static_cast<int>(trace.entries.size());
  trace.final_scene = std::move(scene);
  return trace;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

std::string RolloutSummary::format() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, std_error);
  return buf;
}

RolloutSummary summarize(int successes, int trials) {
  if (trials < 1) throw Error("summarize: no trials");
  if (successes < 0 || successes > trials) throw Error("summarize: successes outside [0, trials]");
  RolloutSummary s{successes, trials, static_cast<double>(successes) / trials, 0.0};
  s.std_error = std::sqrt(s.mean * (1.0 - s.mean) / trials);
  return s;
}

RolloutSummary summarize(const std::vector<bool>& outcomes) {
  if (outcomes.empty()) throw Error("summarize: empty outcome list");
  return summarize(static_cast<int>(std::count(outcomes.begin(), outcomes.end(), true)), static_cast<int>(outcomes.size()));
}

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

void RolloutConfig::validate() const {
  scene.validate();
  task.validate();
  quant.validate();
  icp.validate();
  if (codebook.k < 2 || codebook.training_scenes < 1) throw Error("rollout: codebook needs k >= 2 and >= 1 training scene");
  if (base_vocabulary < static_cast<std::int64_t>(task_words().size())) throw Error("rollout: base vocabulary too small");
  if (max_step_bins < 1) throw Error("rollout: max_step_bins must be >= 1");
  if (trials < 1) throw Error("rollout: trials must be >= 1");
  if (scene.workspace.min != quant.workspace.min || scene.workspace.max != quant.workspace.max)
    throw Error("rollout: scene and quantization workspaces differ");
}

RolloutConfig rollout_config_from_json(const nlohmann::json& j) {
  RolloutConfig cfg;
  if (j.contains("quant")) cfg.quant = j.at("quant").get<QuantConfig>();
  cfg.scene.workspace = cfg.quant.workspace;
  if (j.contains("scene")) {
    const auto& s = j.at("scene");
    cfg.scene.object_count = s.value("object_count", cfg.scene.object_count);
    cfg.scene.min_points = s.value("min_points", cfg.scene.min_points);
    cfg.scene.max_points = s.value("max_points", cfg.scene.max_points);
    cfg.scene.min_size = s.value("min_size", cfg.scene.min_size);
    cfg.scene.max_size = s.value("max_size", cfg.scene.max_size);
    cfg.scene.margin = s.value("margin", cfg.scene.margin);
    if (s.contains("camera")) cfg.scene.camera = camera_from_json(s.at("camera"));
  }
  if (j.contains("task")) {
    const auto& t = j.at("task");
    cfg.task.target_object = t.value("target_object", cfg.task.target_object);
    cfg.task.min_goal_distance = t.value("min_goal_distance", cfg.task.min_goal_distance);
    cfg.task.max_goal_distance = t.value("max_goal_distance", cfg.task.max_goal_distance);
    cfg.task.goal_radius = t.value("goal_radius", cfg.task.goal_radius);
    cfg.task.success_epsilon = t.value("success_epsilon", cfg.task.success_epsilon);
    cfg.task.max_steps = t.value("max_steps", cfg.task.max_steps);
    if (t.contains("instruction")) cfg.task.instruction = t.at("instruction").get<std::vector<std::string>>();
  }
  if (j.contains("icp")) cfg.icp = icp_config_from_json(j.at("icp"));
  if (j.contains("codebook")) {
    const auto& c = j.at("codebook");
    cfg.codebook.k = c.value("k", cfg.codebook.k);
    cfg.codebook.training_scenes = c.value("training_scenes", cfg.codebook.training_scenes);
    cfg.codebook.seed = c.value("seed", cfg.codebook.seed);
  }
  cfg.base_vocabulary = j.value("base_vocabulary", cfg.base_vocabulary);
  cfg.max_step_bins = j.value("max_step_bins", cfg.max_step_bins);
  cfg.trials = j.value("trials", cfg.trials);
  cfg.validate();
  return cfg;
}

nlohmann::json rollout_config_to_json(const RolloutConfig& cfg) {
  nlohmann::json icp = {{"max_iterations", cfg.icp.max_iterations},
                        {"convergence_tol", cfg.icp.convergence_tol},
                        {"min_points", cfg.icp.min_points}};
  icp["max_correspondence_distance"] = std::isfinite(cfg.icp.max_correspondence_distance)
                                           ? nlohmann::json(cfg.icp.max_correspondence_distance)
                                           : nlohmann::json(nullptr);
  return {{"quant", cfg.quant},
          {"scene",
           {{"object_count", cfg.scene.object_count},
            {"min_points", cfg.scene.min_points},
            {"max_points", cfg.scene.max_points},
            {"min_size", cfg.scene.min_size},
            {"max_size", cfg.scene.max_size},
            {"margin", cfg.scene.margin},
            {"camera", camera_to_json(cfg.scene.camera)}}},
          {"task",
           {{"target_object", cfg.task.target_object},
            {"min_goal_distance", cfg.task.min_goal_distance},
            {"max_goal_distance", cfg.task.max_goal_distance},
            {"goal_radius", cfg.task.goal_radius},
            {"success_epsilon", cfg.task.success_epsilon},
            {"max_steps", cfg.task.max_steps},
            {"instruction", cfg.task.instruction}}},
          {"icp", icp},
          {"codebook", {{"k", cfg.codebook.k}, {"training_scenes", cfg.codebook.training_scenes}, {"seed", cfg.codebook.seed}}},
          {"base_vocabulary", cfg.base_vocabulary},
          {"max_step_bins", cfg.max_step_bins},
          {"trials", cfg.trials}};
}

CodebookTraining train_scene_codebook(const RolloutConfig& cfg, const PatchLayout& layout) {
  cfg.validate();
  std::vector<VoxelGrid> grids;
  for (int s = 0; s < cfg.codebook.training_scenes; ++s) {
    const auto gs = generate_scene(cfg.scene, mix_seed(cfg.codebook.seed, static_cast<std::uint64_t>(s)));
    const auto seen = lift_masks(gs.view.depth, gs.view.camera.intrinsics, gs.view.camera.pose, gs.view.masks, cfg.quant);
    for (const auto& seg : seen.segments)
      grids.push_back(object_grid(seg.cloud, seg.descriptor, cfg.quant, layout.grid_resolution));
  }
  return train_codebook(grids, cfg.codebook.k, cfg.codebook.seed, layout);
}

PipelineConfig make_pipeline(const RolloutConfig& cfg, std::shared_ptr<const Codebook> codebook) {
  return PipelineConfig{TokenContext::make(cfg.base_vocabulary, std::move(codebook), cfg.quant),
                        cfg.icp,
                        cfg.scene.camera,
                        true,
                        cfg.max_step_bins,
                        false};
}

std::pair<GeneratedScene, Task> make_trial(const RolloutConfig& cfg, std::uint64_t seed, int index) {
  const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(index));
  GeneratedScene gs = generate_scene(cfg.scene, mix_seed(s, 1));
  Task task = make_task(gs.scene, cfg.task, cfg.quant, mix_seed(s, 2), cfg.max_step_bins);
  return {std::move(gs), std::move(task)};
}

Evaluation evaluate(const RolloutConfig& cfg, const PipelineConfig& pipeline, const PredictorKind& predictor,
                    int trials, std::uint64_t seed) {
  if (trials < 1) throw Error("evaluate: trials must be >= 1");
  Evaluation ev;
  std::vector<bool> outcomes;
  for (int i = 0; i < trials; ++i) {
    const auto [gs, task] = make_trial(cfg, seed, i);
    ev.traces.push_back(run_rollout(gs.scene, task, predictor, pipeline, mix_seed(seed, static_cast<std::uint64_t>(i))));
    outcomes.push_back(ev.traces.back().outcome.success);
  }
  ev.summary = summarize(outcomes);
  return ev;
}

// ---------------------------------------------------------------------------
// Trace output
// ---------------------------------------------------------------------------

namespace {

std::string numbered(const char* prefix, int n, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d%s", prefix, n, suffix);
  return buf;
}

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

nlohmann::json pose_json(const Pose& p) {
  const auto& q = p.orientation;
  return {{"position", vec_json(p.position)}, {"orientation_wxyz", {q.w(), q.x(), q.y(), q.z()}}};
}

nlohmann::json scene_files(const Scene& scene, int n) {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& o : scene.objects) files.push_back(numbered("scene", n, ("_obj" + std::to_string(o.id) + ".xyz").c_str()));
  return files;
}

}  // namespace

nlohmann::json trace_manifest(const RolloutTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& e : trace.entries) {
    nlohmann::json s = {{"index", e.step},
                        {"icp", numbered("icp", e.step, ".json")},
                        {"rmse", e.icp.rmse},
                        {"converged", e.icp.converged},
                        {"gripper", pose_json(e.gripper)},
                        {"target_centroid", vec_json(e.target_centroid)}};
    s["scene"] = e.snapshot ? scene_files(*e.snapshot, e.step) : nlohmann::json(nullptr);
    s["tokens"] = e.predicted_stream.empty() ? nlohmann::json(nullptr) : nlohmann::json(numbered("tokens", e.step, ".txt"));
    steps.push_back(std::move(s));
  }
  const int last = static_cast<int>(trace.entries.size());
  return {{"schema", "avi-trace/1"},
          {"seed", trace.seed},
          {"task",
           {{"target_object", trace.task.target_object},
            {"goal_center", vec_json(trace.task.goal_center)},
            {"goal_radius", trace.task.goal_radius},
            {"success_epsilon", trace.task.success_epsilon},
            {"max_steps", trace.task.max_steps},
            {"instruction", trace.task.instruction.text_tokens}}},
          {"outcome",
           {{"success", trace.outcome.success},
            {"reason", to_string(trace.outcome.reason)},
            {"diagnostic", trace.outcome.diagnostic},
            {"steps", trace.outcome.steps}}},
          {"steps", steps},
          {"final_scene", scene_files(trace.final_scene, last)},
          {"final_gripper", pose_json(trace.final_scene.gripper)}};
}

void write_trace(const RolloutTrace& trace, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path root(dir);
  auto write_scene = [&](const Scene& scene, int n) {
    for (const auto& o : scene.objects)
      io::write_atomic((root / numbered("scene", n, ("_obj" + std::to_string(o.id) + ".xyz").c_str())).string(),
                       format_point_cloud(o.cloud));
  };
  for (const auto& e : trace.entries) {
    if (e.snapshot) write_scene(*e.snapshot, e.step);
    if (!e.predicted_stream.empty())
      io::write_atomic((root / numbered("tokens", e.step, ".txt")).string(), io::format_token_stream(e.predicted_stream));
    io::write_atomic((root / numbered("icp", e.step, ".json")).string(), icp_result_to_json(e.icp).dump(2) + "\n");
  }
  write_scene(trace.final_scene, static_cast<int>(trace.entries.size()));
  io::write_atomic((root / "manifest.json").string(), trace_manifest(trace).dump(2) + "\n");
}

nlohmann::json outcomes_to_json(const std::vector<RolloutTrace>& traces) {
  nlohmann::json items = nlohmann::json::array();
  std::vector<bool> flags;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto& t = traces[i];
    items.push_back({{"trial", i},
                     {"seed", t.seed},
                     {"success", t.outcome.success},
                     {"reason", to_string(t.outcome.reason)},
                     {"steps", t.outcome.steps}});
    flags.push_back(t.outcome.success);
  }
  nlohmann::json out = {{"outcomes", items}};
  if (!flags.empty()) {
    const auto s = summarize(flags);
    out["summary"] = {{"successes", s.successes},
                      {"trials", s.trials},
                      {"mean", s.mean},
                      {"stderr", s.std_error},
                      {"formatted", s.format()}};
  }
  return out;
}

std::vector<bool> outcomes_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() ? j.at("outcomes") : j;
  if (!list.is_array()) throw Error("outcomes: expected an array");
  std::vector<bool> out;
  for (const auto& item : list) {
    if (item.is_boolean())
      out.push_back(item.get<bool>());
    else if (item.is_object() && item.contains("success"))
      out.push_back(item.at("success").get<bool>());
    else
      throw Error("outcomes: items must be booleans or objects with a 'success' field");
  }
  return out;
}

}  // namespace avi
