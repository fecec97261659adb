#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "avi/geometry.hpp"
#include "avi/icp.hpp"
#include "avi/locquant.hpp"
#include "avi/predictor.hpp"
#include "avi/segmentation.hpp"
#include "avi/vqtok.hpp"

namespace avi {

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct SceneObject {
  int id = 0;
  PointCloud cloud;
  bool attached = false;
  std::string primitive;  // box | sphere | cylinder
};

struct Scene {
  std::vector<SceneObject> objects;
  Pose gripper;
  AABB workspace = AABB::unit();
  int step_index = 0;

  const SceneObject* find(int id) const;
  SceneObject* find(int id);
  /// Throws when a cloud leaves the workspace or more than one object is attached.
  void validate() const;
};

/// Overhead camera looking straight down at the unit workspace.
CameraSetup default_camera();

struct SceneConfig {
  int object_count = 3;
  int min_points = 200;
  int max_points = 2000;
  double min_size = 0.06;  // meters, primitive extent along each axis
  double max_size = 0.15;
  double margin = 0.05;    // keep-out band along the workspace's horizontal border
  AABB workspace = AABB::unit();
  CameraSetup camera = default_camera();

  void validate() const;
};

struct RenderedView {
  DepthImage depth;
  MaskSet masks;
  CameraSetup camera;
};

struct GeneratedScene {
  Scene scene;
  RenderedView view;
};

/// Z-buffer point splatting: each point covers the pixel nearest its projection.
RenderedView render(const Scene& scene, const CameraSetup& camera);

GeneratedScene generate_scene(const SceneConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct Task {
  Instruction instruction;
  int target_object = 1;
  Vec3 goal_center = Vec3::Zero();
  double goal_radius = 0.0;
  int max_steps = 20;
  double success_epsilon = 0.0;

  void validate() const;
};

struct TaskConfig {
  int target_object = 1;
  double min_goal_distance = 0.04;
  double max_goal_distance = 0.10;
  double goal_radius = 0.0;      // <= 0 picks two position-bin widths
  double success_epsilon = 0.0;  // <= 0 picks two position-bin widths
  int max_steps = 20;
  std::vector<std::string> instruction = {"move", "the", "object", "to", "the", "goal", "region"};

  void validate() const;
};

/// Goal on the table plane. The integer-bin path to it (at most max_step_bins per axis and step)
/// must fit in max_steps and keep the target's box clear of every other object.
Task make_task(const Scene& scene, const TaskConfig& cfg, const QuantConfig& quant, std::uint64_t seed,
               int max_step_bins = 5);

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

struct PipelineConfig {
  TokenContext tokens;
  IcpConfig icp;
  CameraSetup camera = default_camera();
  /// Oracle predictors (bare or wrapped in noise) are re-aimed every step at
  /// clamp(round((goal - centroid) / bin), ±max_step_bins) bins along each axis.
  bool goal_directed = true;
  int max_step_bins = 5;
  bool record = false;  // keep scene snapshots and token streams for trace output
};

enum class FailureReason { none, timeout, icp_failure, out_of_workspace };

std::string to_string(FailureReason r);
FailureReason failure_reason_from_string(const std::string& s);

struct TraceEntry {
  int step = 0;
  std::optional<Scene> snapshot;              // scene before the step (recorded runs)
  std::vector<std::int64_t> predicted_stream;  // recorded runs
  IcpResult icp;
  Pose gripper;            // after the step
  Vec3 target_centroid;    // after the step
};

struct RolloutOutcome {
  bool success = false;
  FailureReason reason = FailureReason::none;
  std::string diagnostic;
  int steps = 0;
};

struct RolloutTrace {
  std::uint64_t seed = 0;
  Task task;
  std::vector<TraceEntry> entries;
  Scene final_scene;
  RolloutOutcome outcome;
};

struct StepResult {
  Scene scene;
  TraceEntry entry;
  std::optional<RolloutOutcome> failure;
};

/// Per-axis integer-bin move toward the goal for the target's true centroid.
RigidTransform goal_step(const Scene& scene, const Task& task, const QuantConfig& quant, int max_step_bins);

/// One perceive → tokenize → predict → decode → ICP → act cycle.
StepResult step(const Scene& scene, const Task& task, const PredictorKind& predictor, const PipelineConfig& cfg,
                std::uint64_t step_seed);

RolloutTrace run_rollout(const Scene& initial, const Task& task, const PredictorKind& predictor,
                         const PipelineConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct RolloutSummary {
  int successes = 0;
  int trials = 0;
  double mean = 0.0;
  double std_error = 0.0;

  /// "M.MM ± S.SS"
  std::string format() const;
};

RolloutSummary summarize(const std::vector<bool>& outcomes);
RolloutSummary summarize(int successes, int trials);

// ---------------------------------------------------------------------------
// Evaluation harness
// ---------------------------------------------------------------------------

struct CodebookSpec {
  int k = 256;
  int training_scenes = 8;
  std::uint64_t seed = 7;
};

struct RolloutConfig {
  SceneConfig scene;
  TaskConfig task;
  QuantConfig quant;
  IcpConfig icp;
  CodebookSpec codebook;
  std::int64_t base_vocabulary = 32000;
  int max_step_bins = 5;
  int trials = 20;

  void validate() const;
};

RolloutConfig rollout_config_from_json(const nlohmann::json& j);
nlohmann::json rollout_config_to_json(const RolloutConfig& cfg);

/// Codebook fitted to object grids lifted from freshly generated scenes.
CodebookTraining train_scene_codebook(const RolloutConfig& cfg, const PatchLayout& layout = PatchLayout::standard());

PipelineConfig make_pipeline(const RolloutConfig& cfg, std::shared_ptr<const Codebook> codebook);

/// Scene and task for trial `index`, drawn from mix_seed(seed, index).
std::pair<GeneratedScene, Task> make_trial(const RolloutConfig& cfg, std::uint64_t seed, int index);

struct Evaluation {
  std::vector<RolloutTrace> traces;
  RolloutSummary summary;
};

Evaluation evaluate(const RolloutConfig& cfg, const PipelineConfig& pipeline, const PredictorKind& predictor,
                    int trials, std::uint64_t seed);

/// Directory with numbered per-object clouds, token streams, ICP JSONs and manifest.json.
void write_trace(const RolloutTrace& trace, const std::string& dir);
nlohmann::json trace_manifest(const RolloutTrace& trace);
nlohmann::json outcomes_to_json(const std::vector<RolloutTrace>& traces);
/// Accepts [bool...], {"outcomes": [...]}, where items are booleans or {"success": bool}.
std::vector<bool> outcomes_from_json(const nlohmann::json& j);

}  // namespace avi
