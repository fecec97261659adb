#include "avi/predictor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include "avi/io.hpp"

namespace avi {

// ---------------------------------------------------------------------------
// Instructions
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 24> kWords = {
    "<pad>", "move", "push",  "pick", "place", "the",   "object", "to",    "goal",     "region", "close", "drawer",
    "left",  "right", "up",   "down", "red",   "green", "blue",   "cube",  "sphere", "cylinder", "and",  "stop"};

}  // namespace

std::span<const std::string_view> task_words() { return kWords; }

std::int64_t word_id(std::string_view word) {
  const auto it = std::find(kWords.begin(), kWords.end(), word);
  if (it == kWords.end()) throw Error("unknown task word '" + std::string(word) + "'");
  return it - kWords.begin();
}

Instruction make_instruction(int task_id, const std::vector<std::string>& words) {
  Instruction instr{task_id, {}};
  for (const auto& w : words) instr.text_tokens.push_back(word_id(w));
  if (instr.text_tokens.size() > kMaxInstructionTokens) throw Error("instruction longer than 32 tokens");
  return instr;
}

void Instruction::validate(const Vocabulary& vocab) const {
  if (text_tokens.size() > kMaxInstructionTokens) throw Error("instruction longer than 32 tokens");
  for (auto id : text_tokens)
    if (!vocab.is_text(id)) throw Error("instruction token " + std::to_string(id) + " is outside the text segment");
}

// ---------------------------------------------------------------------------
// Token layout
// ---------------------------------------------------------------------------

const ObjectTokens* SceneTokens::find(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

TokenContext TokenContext::make(std::int64_t base_size, std::shared_ptr<const Codebook> codebook, QuantConfig quant,
                                PatchLayout layout) {
  if (!codebook) throw Error("token context needs a codebook");
  TokenContext ctx{extend_vocabulary(base_size, static_cast<std::int64_t>(codebook->size())), std::move(codebook),
                   quant, layout};
  ctx.validate();
  return ctx;
}

void TokenContext::validate() const {
  if (!codebook) throw Error("token context needs a codebook");
  quant.validate();
  layout.validate();
  if (vocab.codebook_size() != static_cast<std::int64_t>(codebook->size()))
    throw Error("vocabulary shape segment (" + std::to_string(vocab.codebook_size()) +
                ") does not match codebook size (" + std::to_string(codebook->size()) + ")");
  if (codebook->dim() != layout.voxels_per_patch()) throw Error("codebook dimension does not match patch layout");
  if (static_cast<std::size_t>(vocab.base_size()) < task_words().size())
    throw Error("vocabulary base is smaller than the task word list");
}

std::size_t sequence_length(std::size_t text_tokens, std::size_t objects, const PatchLayout& layout) {
  return text_tokens + 1 + objects * (4 + static_cast<std::size_t>(layout.patches_total()));
}

SceneTokens build_sequence(const SceneDecomposition& scene, const Instruction& instr, const TokenContext& ctx) {
  ctx.validate();
  instr.validate(ctx.vocab);
  if (scene.segments.empty()) throw Error("build_sequence: empty scene decomposition");
  SceneTokens out;
  out.text = instr.text_tokens;
  std::vector<const ObjectSegment*> order;
  for (const auto& s : scene.segments) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (const auto* seg : order) {
    const VoxelGrid grid = object_grid(seg->cloud, seg->descriptor, ctx.quant, ctx.layout.grid_resolution);
    out.objects.push_back({seg->id, seg->descriptor, encode_grid(grid, *ctx.codebook, ctx.layout)});
  }
  return out;
}

std::vector<std::int64_t> to_stream(const SceneTokens& tokens, const TokenContext& ctx) {
  std::vector<std::int64_t> ids;
  ids.reserve(sequence_length(tokens.text.size(), tokens.objects.size(), ctx.layout));
  ids.insert(ids.end(), tokens.text.begin(), tokens.text.end());
  ids.push_back(ctx.vocab.separator());
  for (const auto& o : tokens.objects) {
    const auto loc = tokens_of(o.location, ctx.vocab);
    ids.insert(ids.end(), loc.begin(), loc.end());
    if (static_cast<int>(o.shape.tokens.size()) != ctx.layout.patches_total())
      throw Error("to_stream: object " + std::to_string(o.id) + " has a malformed shape grid");
    for (auto t : o.shape.tokens) ids.push_back(ctx.vocab.shape_offset() + t);
  }
  return ids;
}

SceneTokens parse_sequence(std::span<const std::int64_t> ids, const TokenContext& ctx,
                           const std::vector<int>& object_ids) {
  const auto sep = std::find(ids.begin(), ids.end(), ctx.vocab.separator());
  if (sep == ids.end()) throw Error("parse_sequence: no separator token");
  SceneTokens out;
  out.text.assign(ids.begin(), sep);
  for (auto id : out.text)
    if (!ctx.vocab.is_text(id)) throw Error("parse_sequence: token " + std::to_string(id) + " before the separator is not text");

  const std::size_t block = 4 + static_cast<std::size_t>(ctx.layout.patches_total());
  const std::size_t rest = static_cast<std::size_t>(ids.end() - sep) - 1;
  if (rest == 0 || rest % block != 0)
    throw Error("parse_sequence: " + std::to_string(rest) + " tokens after the separator is not a whole number of " +
                std::to_string(block) + "-token object blocks");
  const std::size_t objects = rest / block;
  if (!object_ids.empty() && object_ids.size() != objects) throw Error("parse_sequence: object id count mismatch");

  const std::int64_t* p = &*(sep + 1);
  for (std::size_t o = 0; o < objects; ++o, p += block) {
    ObjectTokens obj;
    obj.id = object_ids.empty() ? static_cast<int>(o) + 1 : object_ids[o];
    obj.location = descriptor_of(std::span(p, 4), ctx.vocab);
    obj.shape.tokens.resize(ctx.layout.patches_total());
    for (int i = 0; i < ctx.layout.patches_total(); ++i) {
      const std::int64_t id = p[4 + i];
      if (!ctx.vocab.is_shape(id)) throw Error("parse_sequence: token " + std::to_string(id) + " is not a shape token");
      obj.shape.tokens[i] = static_cast<std::int32_t>(id - ctx.vocab.shape_offset());
    }
    out.objects.push_back(std::move(obj));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Counter-based randomness
// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ (b + 0x632BE59BD9B4E019ULL)); }

double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(mix_seed(seed, counter) >> 11) * 0x1.0p-53;
}

// ---------------------------------------------------------------------------
// n-gram model
// ---------------------------------------------------------------------------

NgramModel::NgramModel(int order, std::int64_t pair_separator)
    : order_(order), pair_separator_(pair_separator), boundary_(pair_separator + 1) {
  if (order < 1) throw Error("n-gram order must be >= 1");
  if (boundary_ >= (std::int64_t{1} << 24)) throw Error("n-gram model supports token ids below 2^24");
  states_.push_back(State{0, -1, -1, 0});
}

std::int64_t NgramModel::new_state(std::int64_t len) {
  states_.push_back(State{len, -1, -1, 0});
  return static_cast<std::int64_t>(states_.size()) - 1;
}

std::int64_t NgramModel::transition(std::int64_t state, std::int64_t token) const {
  const auto it = lookup_.find((static_cast<std::uint64_t>(state) << 24) | static_cast<std::uint64_t>(token));
  return it == lookup_.end() ? -1 : edges_[it->second].target;
}

void NgramModel::set_transition(std::int64_t state, std::int64_t token, std::int64_t target) {
  const std::uint64_t key = (static_cast<std::uint64_t>(state) << 24) | static_cast<std::uint64_t>(token);
  const auto it = lookup_.find(key);
  if (it != lookup_.end()) {
    edges_[it->second].target = target;
    return;
  }
  edges_.push_back(Edge{token, target, states_[state].first_edge});
  states_[state].first_edge = static_cast<std::int64_t>(edges_.size()) - 1;
  lookup_.emplace(key, states_[state].first_edge);
}

void NgramModel::extend(std::int64_t token) {
  if (token < 0 || token >= (std::int64_t{1} << 24)) throw Error("n-gram token id out of range");
  const std::int64_t cur = new_state(states_[last_].len + 1);
  states_[cur].count = 1;
  std::int64_t p = last_;
  while (p != -1 && transition(p, token) == -1) {
    set_transition(p, token, cur);
    p = states_[p].link;
  }
  if (p == -1) {
    states_[cur].link = 0;
  } else {
    const std::int64_t q = transition(p, token);
    if (states_[p].len + 1 == states_[q].len) {
      states_[cur].link = q;
    } else {
      const std::int64_t clone = new_state(states_[p].len + 1);
      for (std::int64_t e = states_[q].first_edge; e != -1; e = edges_[e].next)
        set_transition(clone, edges_[e].token, edges_[e].target);
      states_[clone].link = states_[q].link;
      while (p != -1 && transition(p, token) == q) {
        set_transition(p, token, clone);
        p = states_[p].link;
      }
      states_[q].link = clone;
      states_[cur].link = clone;
    }
  }
  last_ = cur;
}

void NgramModel::add_pair(std::span<const std::int64_t> input, std::span<const std::int64_t> output) {
  if (finalized_) throw Error("n-gram model already finalized");
  for (auto t : input) extend(t);
  extend(pair_separator_);
  for (auto t : output) extend(t);
  extend(boundary_);
  corpus_tokens_ += input.size() + output.size() + 2;
}

void NgramModel::finalize() {
  if (finalized_) return;
  // Occurrence counts flow up the suffix-link tree, longest states first.
  std::vector<std::int64_t> order(states_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return states_[a].len > states_[b].len; });
  for (auto v : order)
    if (states_[v].link >= 0) states_[states_[v].link].count += states_[v].count;
  finalized_ = true;
}

std::vector<std::int64_t> NgramModel::generate(std::span<const std::int64_t> input, std::size_t length) const {
  if (!finalized_) throw Error("n-gram model used before finalize()");
  if (empty()) throw Error("n-gram model has an empty corpus");
  const std::int64_t cap = order_ - 1;
  std::int64_t v = 0, matched = 0;

  auto advance = [&](std::int64_t token) {
    while (v != 0 && transition(v, token) == -1) {
      v = states_[v].link;
      matched = states_[v].len;
    }
    const std::int64_t t = transition(v, token);
    if (t != -1) {
      v = t;
      ++matched;
    } else {
      v = 0;
      matched = 0;
    }
    if (matched > cap) {
      matched = cap;
      while (v != 0 && states_[states_[v].link].len >= matched) v = states_[v].link;
    }
  };

  for (auto t : input) advance(t);
  advance(pair_separator_);

  std::vector<std::int64_t> out;
  out.reserve(length);
  while (out.size() < length) {
    std::int64_t ctx = v;
    std::int64_t best = -1, best_count = -1;
    for (;;) {
      for (std::int64_t e = states_[ctx].first_edge; e != -1; e = edges_[e].next) {
        const auto& edge = edges_[e];
        if (edge.token == boundary_) continue;
        const std::int64_t c = states_[edge.target].count;
        if (c > best_count || (c == best_count && edge.token < best)) {
          best = edge.token;
          best_count = c;
        }
      }
      if (best >= 0 || ctx == 0) break;
      ctx = states_[ctx].link;  // back off to a shorter context
    }
    if (best < 0) throw Error("n-gram model has no continuation");
    out.push_back(best);
    advance(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Predictors
// ---------------------------------------------------------------------------

PredictorKind make_noisy(PredictorKind inner, double flip_probability, std::uint64_t seed) {
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw Error("flip_probability must be in [0, 1]");
  return std::make_shared<const NoisyPredictor>(NoisyPredictor{std::move(inner), flip_probability, seed});
}

namespace {

int position_bin(double coord, double lo, double extent, int bins) {
  return std::clamp(static_cast<int>(std::floor((coord - lo) / extent * bins)), 0, bins - 1) + 1;
}

SceneTokens run_oracle(const OraclePredictor& oracle, const SceneTokens& current, const TokenContext& ctx) {
  if (!oracle.true_delta.valid()) throw Error("oracle: delta is not a rigid transform");
  SceneTokens out = current;
  auto it = std::find_if(out.objects.begin(), out.objects.end(),
                         [&](const ObjectTokens& o) { return o.id == oracle.target_object; });
  if (it == out.objects.end()) throw Error("oracle: target object " + std::to_string(oracle.target_object) + " absent");

  const AABB frame = object_frame(it->location, ctx.quant);
  const PointCloud decoded = devoxelize(decode_grid(it->shape, *ctx.codebook, ctx.layout), frame);
  const PointCloud moved = apply_transform(decoded, oracle.true_delta);

  // The decoded centroid is the object's reference point; it moves with the object and is
  // re-quantized, while the scale token is invariant under rigid motion.
  const Vec3 anchor = oracle.true_delta.apply(frame.center());
  const auto& ws = ctx.quant.workspace;
  LocationDescriptor next = it->location;
  next.x_bin = position_bin(anchor.x(), ws.min.x(), ws.extent().x(), ctx.quant.position_bins);
  next.y_bin = position_bin(anchor.y(), ws.min.y(), ws.extent().y(), ctx.quant.position_bins);
  next.z_bin = position_bin(anchor.z(), ws.min.z(), ws.extent().z(), ctx.quant.position_bins);

  const VoxelGrid grid = object_grid(moved, next, ctx.quant, ctx.layout.grid_resolution);
  it->location = next;
  it->shape = encode_grid(grid, *ctx.codebook, ctx.layout);
  return out;
}

SceneTokens run_noisy(const NoisyPredictor& noisy, const SceneTokens& current, const TokenContext& ctx) {
  SceneTokens out = predict_next(noisy.inner, current, ctx);
  if (noisy.flip_probability <= 0.0) return out;
  const auto& q = ctx.quant;
  const std::uint64_t block = 4 + static_cast<std::uint64_t>(ctx.layout.patches_total());
  const std::uint64_t k = ctx.codebook->size();

  auto flip = [&](std::uint64_t position, std::uint64_t choices, auto&& apply) {
    if (counter_uniform(noisy.seed, 2 * position) < noisy.flip_probability) {
      const auto pick = static_cast<std::uint64_t>(counter_uniform(noisy.seed, 2 * position + 1) * choices);
      apply(std::min(pick, choices - 1));
    }
  };

  for (std::size_t o = 0; o < out.objects.size(); ++o) {
    auto& obj = out.objects[o];
    const std::uint64_t base = out.text.size() + 1 + o * block;
    flip(base + 0, q.position_bins, [&](std::uint64_t v) { obj.location.x_bin = static_cast<int>(v) + 1; });
    flip(base + 1, q.position_bins, [&](std::uint64_t v) { obj.location.y_bin = static_cast<int>(v) + 1; });
    flip(base + 2, q.position_bins, [&](std::uint64_t v) { obj.location.z_bin = static_cast<int>(v) + 1; });
    flip(base + 3, q.scale_bins, [&](std::uint64_t v) { obj.location.s_bin = static_cast<int>(v) + 1; });
    for (std::size_t i = 0; i < obj.shape.tokens.size(); ++i)
      flip(base + 4 + i, k, [&](std::uint64_t v) { obj.shape.tokens[i] = static_cast<std::int32_t>(v); });
  }
  return out;
}

SceneTokens run_ngram(const NgramPredictor& ngram, const SceneTokens& current, const TokenContext& ctx) {
  if (!ngram.model) throw Error("n-gram predictor has no model");
  const auto input = to_stream(current, ctx);
  const auto output = ngram.model->generate(input, input.size());
  std::vector<int> ids;
  for (const auto& o : current.objects) ids.push_back(o.id);
  return parse_sequence(output, ctx, ids);
}

}  // namespace

SceneTokens predict_next(const PredictorKind& kind, const SceneTokens& current, const TokenContext& ctx) {
  if (current.objects.empty()) throw Error("predict_next: sequence has no objects");
  for (const auto& o : current.objects)
    if (static_cast<int>(o.shape.tokens.size()) != ctx.layout.patches_total())
      throw Error("predict_next: malformed shape block for object " + std::to_string(o.id));
  return std::visit(
      [&](const auto& p) -> SceneTokens {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, OraclePredictor>)
          return run_oracle(p, current, ctx);
        else if constexpr (std::is_same_v<T, NgramPredictor>)
          return run_ngram(p, current, ctx);
        else
          return run_noisy(*p, current, ctx);
      },
      kind);
}

PredictorKind train_ngram(const std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>>& pairs,
                          int order, const TokenContext& ctx) {
  if (pairs.empty()) throw Error("train_ngram: empty corpus");
  auto model = std::make_shared<NgramModel>(order, ctx.vocab.pair_separator());
  for (const auto& [in, out] : pairs) model->add_pair(in, out);
  model->finalize();
  return NgramPredictor{std::move(model), 0};
}

PredictorKind train_ngram(const std::vector<std::vector<SceneTokens>>& trajectories, int order,
                          const TokenContext& ctx) {
  std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> pairs;
  for (const auto& traj : trajectories)
    for (std::size_t t = 0; t + 1 < traj.size(); ++t) pairs.emplace_back(to_stream(traj[t], ctx), to_stream(traj[t + 1], ctx));
  return train_ngram(pairs, order, ctx);
}

PredictorKind predictor_from_json(const nlohmann::json& j, const TokenContext& ctx, const std::string& base_dir) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "oracle") {
    OraclePredictor o;
    o.target_object = j.value("target", 1);
    if (j.contains("delta")) {
      const auto& d = j.at("delta");
      if (d.contains("rotation")) {
        const auto rows = d.at("rotation").get<std::array<std::array<double, 3>, 3>>();
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) o.true_delta.rotation(r, c) = rows[r][c];
      }
      if (d.contains("translation")) {
        const auto t = d.at("translation").get<std::array<double, 3>>();
        o.true_delta.translation = Vec3(t[0], t[1], t[2]);
      }
      if (!o.true_delta.valid(1e-6)) throw Error("oracle delta is not a rigid transform");
    }
    return o;
  }
  if (kind == "noisy") {
    return make_noisy(predictor_from_json(j.at("inner"), ctx, base_dir), j.at("flip_probability").get<double>(),
                      j.value("seed", std::uint64_t{0}));
  }
  if (kind == "ngram") {
    std::filesystem::path corpus = j.at("corpus").get<std::string>();
    if (corpus.is_relative()) corpus = std::filesystem::path(base_dir) / corpus;
    const auto blocks = io::parse_token_blocks(io::read_text(corpus.string()));
    if (blocks.empty() || blocks.size() % 2 != 0) throw Error("n-gram corpus must hold input/output block pairs");
    std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> pairs;
    for (std::size_t i = 0; i < blocks.size(); i += 2) pairs.emplace_back(blocks[i], blocks[i + 1]);
    auto p = std::get<NgramPredictor>(train_ngram(pairs, j.at("order").get<int>(), ctx));
    p.seed = j.value("seed", std::uint64_t{0});
    return p;
  }
  throw Error("unknown predictor kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

LoraConfig LoraConfig::with_rank(int rank, Eigen::MatrixXd base, Eigen::MatrixXd down, Eigen::MatrixXd up) {
  return LoraConfig{rank, 2.0 * rank, 0.05, std::move(base), std::move(down), std::move(up)};
}

Eigen::MatrixXd lora_effective_weight(const LoraConfig& cfg) {
  if (cfg.rank < 1) throw Error("lora: rank must be >= 1");
  if (cfg.alpha != 2.0 * cfg.rank) throw Error("lora: alpha must equal 2 * rank");
  if (cfg.down.rows() != cfg.rank || cfg.down.cols() != cfg.base.cols())
    throw Error("lora: A must be rank x d_in");
  if (cfg.up.rows() != cfg.base.rows() || cfg.up.cols() != cfg.rank) throw Error("lora: B must be d_out x rank");
  return cfg.base + cfg.scaling() * (cfg.up * cfg.down);
}

}  // namespace avi
