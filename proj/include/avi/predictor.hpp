#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "avi/geometry.hpp"
#include "avi/locquant.hpp"
#include "avi/segmentation.hpp"
#include "avi/vqtok.hpp"

namespace avi {

// ---------------------------------------------------------------------------
// Instructions
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxInstructionTokens = 32;

struct Instruction {
  int task_id = 0;
  std::vector<std::int64_t> text_tokens;

  void validate(const Vocabulary& vocab) const;
};

/// Fixed word list occupying the first ids of the text segment.
std::span<const std::string_view> task_words();
std::int64_t word_id(std::string_view word);
Instruction make_instruction(int task_id, const std::vector<std::string>& words);

// ---------------------------------------------------------------------------
// Token layout: [text..., SEP, (loc x4, shape x8192) per object in id order]
// ---------------------------------------------------------------------------

struct ObjectTokens {
  int id = 0;
  LocationDescriptor location;
  TokenGrid shape;
  bool operator==(const ObjectTokens&) const = default;
};

struct SceneTokens {
  std::vector<std::int64_t> text;
  std::vector<ObjectTokens> objects;

  const ObjectTokens* find(int id) const;
  bool operator==(const SceneTokens&) const = default;
};

/// Everything needed to move between token ids and geometry.
struct TokenContext {
  Vocabulary vocab;
  std::shared_ptr<const Codebook> codebook;
  QuantConfig quant;
  PatchLayout layout;

  static TokenContext make(std::int64_t base_size, std::shared_ptr<const Codebook> codebook,
                           QuantConfig quant = {}, PatchLayout layout = PatchLayout::standard());
  void validate() const;
};

std::size_t sequence_length(std::size_t text_tokens, std::size_t objects, const PatchLayout& layout);

SceneTokens build_sequence(const SceneDecomposition& scene, const Instruction& instr, const TokenContext& ctx);

std::vector<std::int64_t> to_stream(const SceneTokens& tokens, const TokenContext& ctx);

/// Inverse of to_stream. Object ids come from `object_ids` when given, else 1..K.
SceneTokens parse_sequence(std::span<const std::int64_t> ids, const TokenContext& ctx,
                           const std::vector<int>& object_ids = {});

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

/// Exact n-gram counts with backoff, stored as a suffix automaton over the training pairs so
/// any context length (up to the order) can be queried without a table per order.
class NgramModel {
 public:
  NgramModel(int order, std::int64_t pair_separator);

  void add_pair(std::span<const std::int64_t> input, std::span<const std::int64_t> output);
  void finalize();

  int order() const { return order_; }
  bool empty() const { return corpus_tokens_ == 0; }

  /// Continues `input` + pair separator for `length` tokens.
  std::vector<std::int64_t> generate(std::span<const std::int64_t> input, std::size_t length) const;

 private:
  struct State {
    std::int64_t len = 0;
    std::int64_t link = -1;
    std::int64_t first_edge = -1;
    std::int64_t count = 0;
  };
  struct Edge {
    std::int64_t token;
    std::int64_t target;
    std::int64_t next;
  };

  std::int64_t transition(std::int64_t state, std::int64_t token) const;
  void set_transition(std::int64_t state, std::int64_t token, std::int64_t target);
  void extend(std::int64_t token);
  std::int64_t new_state(std::int64_t len);

  int order_;
  std::int64_t pair_separator_;
  std::int64_t boundary_;
  std::vector<State> states_;
  std::vector<Edge> edges_;
  std::unordered_map<std::uint64_t, std::int64_t> lookup_;
  std::int64_t last_ = 0;
  std::size_t corpus_tokens_ = 0;
  bool finalized_ = false;
};

struct OraclePredictor {
  RigidTransform true_delta;
  int target_object = 1;
};

struct NgramPredictor {
  std::shared_ptr<const NgramModel> model;
  std::uint64_t seed = 0;
};

struct NoisyPredictor;

using PredictorKind = std::variant<OraclePredictor, std::shared_ptr<const NoisyPredictor>, NgramPredictor>;

struct NoisyPredictor {
  PredictorKind inner;
  double flip_probability = 0.0;
  std::uint64_t seed = 0;
};

PredictorKind make_noisy(PredictorKind inner, double flip_probability, std::uint64_t seed);

SceneTokens predict_next(const PredictorKind& kind, const SceneTokens& current, const TokenContext& ctx);

/// Builds a model from consecutive states of each trajectory.
PredictorKind train_ngram(const std::vector<std::vector<SceneTokens>>& trajectories, int order,
                          const TokenContext& ctx);
PredictorKind train_ngram(const std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>>& pairs,
                          int order, const TokenContext& ctx);

/// Uniform double in [0, 1) keyed by (seed, counter); independent of evaluation order.
double counter_uniform(std::uint64_t seed, std::uint64_t counter);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// {"kind":"oracle"|"noisy"|"ngram", ...}. Relative corpus paths resolve against `base_dir`.
PredictorKind predictor_from_json(const nlohmann::json& j, const TokenContext& ctx, const std::string& base_dir = ".");

// ---------------------------------------------------------------------------
// LoRA merge (forward only)
// ---------------------------------------------------------------------------

inline constexpr int kLoraRanks[] = {4, 8, 16, 32, 64};

struct LoraConfig {
  int rank = 4;
  double alpha = 8.0;
  double dropout = 0.05;  // recorded only; nothing is trained here
  Eigen::MatrixXd base;   // W: d_out x d_in
  Eigen::MatrixXd down;   // A: r x d_in
  Eigen::MatrixXd up;     // B: d_out x r

  static LoraConfig with_rank(int rank, Eigen::MatrixXd base, Eigen::MatrixXd down, Eigen::MatrixXd up);
  double scaling() const { return alpha / rank; }
};

/// W + (alpha / r) · B · A, with alpha fixed at 2r.
Eigen::MatrixXd lora_effective_weight(const LoraConfig& cfg);

}  // namespace avi
