#pragma once

// Decoder stack with one primary branch and n_aux training-only auxiliary
// branches per layer.
//
// Orientation: activations are row-major (one query per row) and a linear map
// is x·W with W stored as (in × out). A LoRA pair (A: r×in, B: out×r) therefore
// contributes x·(B·A)ᵀ = (x·Aᵀ)·Bᵀ, i.e. the effective weight is W + (B·A)ᵀ.
//
// Per layer:
//   q1   = q + SA(q)
//   h    = q1 + CA(q1, X)
//   next = h + FFN(h)              -> fed to the next layer
//   aux_i = h + FFN^{+LoRA_i}(h)   -> heads only
// SA and CA are evaluated once and shared by every branch.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "multiassign/numerics.hpp"

namespace multiassign {

enum class AuxMode { kLora, kFullFfn };

std::string to_string(AuxMode mode);
AuxMode parse_aux_mode(const std::string& text);

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t d_hidden = 64;
  std::size_t n_layers = 2;
  std::size_t n_queries = 20;
  std::size_t num_classes = 5;
  std::size_t n_aux = 0;
  std::size_t rank = 4;
  AuxMode aux_mode = AuxMode::kLora;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct FFNParams {
  GradSlot w1;     // d_model × d_hidden
  GradSlot bias1;  // 1 × d_hidden
  GradSlot w2;     // d_hidden × d_model
  GradSlot bias2;  // 1 × d_model
};

struct LoRAAdapter {
  std::size_t rank = 0;
  GradSlot a1;  // r × d_model
  GradSlot b1;  // d_hidden × r
  GradSlot a2;  // r × d_hidden
  GradSlot b2;  // d_model × r
};

// Single-head attention; all four maps are d_model × d_model.
struct AttentionParams {
  GradSlot wq;
  GradSlot wk;
  GradSlot wv;
  GradSlot wo;
};

struct DecoderLayer {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  FFNParams ffn;
  std::vector<LoRAAdapter> adapters;  // lora mode
  std::vector<FFNParams> aux_ffns;    // full_ffn mode

  std::size_t n_aux() const { return adapters.size() + aux_ffns.size(); }
};

// Shared by every branch of every layer.
struct Heads {
  GradSlot cls_w;  // d_model × num_classes
  GradSlot cls_b;
  GradSlot box_w;  // d_model × 4
  GradSlot box_b;
};

struct NamedParam {
  std::string name;
  GradSlot* slot = nullptr;
  bool box_head = false;
};

struct ConstNamedParam {
  std::string name;
  const GradSlot* slot = nullptr;
  bool box_head = false;
};

struct Model {
  ModelConfig config;
  GradSlot query_embed;  // n_queries × d_model
  std::vector<DecoderLayer> layers;
  Heads heads;

  Model() = default;
  // Deterministic initialization from config.seed. Base weights do not depend
  // on n_aux, rank or aux_mode, so models differing only in their auxiliary
  // branches start from identical shared parameters.
  explicit Model(const ModelConfig& cfg);

  std::size_t n_branches() const { return 1 + config.n_aux; }

  // Stable, documented order: queries, layers (sa, ca, ffn, auxiliaries), heads.
  std::vector<NamedParam> parameters();
  std::vector<ConstNamedParam> parameters() const;
  void zero_grad();
};

// ---- feed-forward --------------------------------------------------------

struct FfnCache {
  Tensor2D input;
  Tensor2D pre;     // pre-activation of the hidden layer
  Tensor2D hidden;  // relu(pre)
  Tensor2D u1;      // input·A1ᵀ   (lora only)
  Tensor2D u2;      // hidden·A2ᵀ  (lora only)
};

// W2ᵀ-free form: relu(x·W1 + b1)·W2 + b2.
Tensor2D ffn_forward(const Tensor2D& x, const FFNParams& ffn, FfnCache* cache = nullptr);
// Accumulates parameter gradients and returns dL/dx.
Tensor2D ffn_backward(FFNParams& ffn, const FfnCache& cache, const Tensor2D& d_out);

// Evaluates base and low-rank paths separately: x·W + (x·Aᵀ)·Bᵀ.
Tensor2D lora_ffn_forward(const Tensor2D& x, const FFNParams& ffn, const LoRAAdapter& adapter,
                          FfnCache* cache = nullptr);
// Accumulates into both the shared FFN and the adapter; returns dL/dx.
Tensor2D lora_ffn_backward(FFNParams& ffn, LoRAAdapter& adapter, const FfnCache& cache,
                           const Tensor2D& d_out);

// (B·A)ᵀ for the first and second FFN weights.
Tensor2D lora_delta_w1(const LoRAAdapter& adapter);
Tensor2D lora_delta_w2(const LoRAAdapter& adapter);
// Base FFN with the adapter folded into W1 and W2.
FFNParams merge_adapter(const FFNParams& ffn, const LoRAAdapter& adapter);

// ---- attention -----------------------------------------------------------

struct AttentionCache {
  Tensor2D queries;
  Tensor2D source;
  Tensor2D q;
  Tensor2D k;
  Tensor2D v;
  Tensor2D attn;
  Tensor2D ctx;
};

struct AttentionGrads {
  Tensor2D d_queries;
  Tensor2D d_source;
};

// softmax(q·kᵀ/√d)·v·Wo with q = queries·Wq, k = source·Wk, v = source·Wv.
Tensor2D attention_forward(const AttentionParams& p, const Tensor2D& queries, const Tensor2D& source,
                           AttentionCache* cache = nullptr);
// With source_grad = false, d_source is left empty (the source is a fixed
// input, as for cross-attention over scene features).
AttentionGrads attention_backward(AttentionParams& p, const AttentionCache& cache, const Tensor2D& d_out,
                                  bool source_grad = true);

// ---- decoder layer -------------------------------------------------------

struct LayerCache {
  AttentionCache self_attn;
  AttentionCache cross_attn;
  Tensor2D h;
  FfnCache primary;
  std::vector<FfnCache> aux;
};

struct LayerOutput {
  Tensor2D next;                 // primary branch, forwarded to the next layer
  std::vector<Tensor2D> aux;     // one per auxiliary branch
};

LayerOutput decoder_layer_forward(const Tensor2D& queries, const Tensor2D& features,
                                  const DecoderLayer& layer, LayerCache* cache = nullptr);
// d_aux may be empty (no auxiliary gradient) or hold one entry per branch;
// empty tensors inside it are skipped. Returns dL/dqueries.
Tensor2D decoder_layer_backward(DecoderLayer& layer, const LayerCache& cache, const Tensor2D& d_next,
                                const std::vector<Tensor2D>& d_aux);

// ---- whole model ---------------------------------------------------------

struct BranchOutput {
  Tensor2D class_probs;  // n_queries × num_classes, sigmoid
  Tensor2D boxes;        // n_queries × 4, (cx, cy, w, h), sigmoid
};

// outputs[layer][branch]; branch 0 is the primary branch.
struct ModelOutput {
  std::vector<std::vector<BranchOutput>> outputs;

  const BranchOutput& at(std::size_t layer, std::size_t branch) const { return outputs[layer][branch]; }
  const BranchOutput& final_primary() const { return outputs.back().front(); }
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  // Head inputs per [layer][branch].
  std::vector<std::vector<Tensor2D>> head_inputs;
};

struct BranchGrad {
  Tensor2D d_probs;  // empty = zero
  Tensor2D d_boxes;  // empty = zero
};

using OutputGrads = std::vector<std::vector<BranchGrad>>;

ModelOutput model_forward(const Model& model, const Tensor2D& features, ForwardCache* cache = nullptr);

// Backpropagates dL/d(outputs). Layers are processed last to first; within a
// layer the primary branch's gradient reaches the shared weights before the
// auxiliary branches', in ascending branch order.
void model_backward(Model& model, const ForwardCache& cache, const ModelOutput& out, const OutputGrads& grads);

// Drops every auxiliary branch. The primary branch of the result is computed
// by exactly the same operations as before, so its outputs are bit-identical.
Model strip_for_inference(const Model& model);

struct ParamCount {
  std::size_t base = 0;
  std::size_t adapters = 0;
  std::size_t heads = 0;

  std::size_t total() const { return base + adapters + heads; }
  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

ParamCount param_count(const Model& model);

// ---- checkpoints ---------------------------------------------------------
//
// Text container, one header line, one line per config field, then for each
// parameter a "param <name> <rows> <cols>" line followed by a line of
// row-major values printed with 17 significant digits (exact round-trip).

void save_checkpoint(const Model& model, std::ostream& os);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(std::istream& is);
Model load_checkpoint(const std::string& path);

}  // namespace multiassign
