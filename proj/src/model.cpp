#include "multiassign/model.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "multiassign/errors.hpp"

namespace multiassign {

std::string to_string(AuxMode mode) { return mode == AuxMode::kLora ? "lora" : "full_ffn"; }

AuxMode parse_aux_mode(const std::string& text) {
  if (text == "lora") return AuxMode::kLora;
  if (text == "full_ffn") return AuxMode::kFullFfn;
  throw ConfigError("aux_mode must be 'lora' or 'full_ffn', got '" + text + "'");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("model.") + key + " must be positive");
  };
  positive(d_model, "d_model");
  positive(d_hidden, "d_hidden");
  positive(n_layers, "n_layers");
  positive(n_queries, "n_queries");
  positive(num_classes, "num_classes");
  positive(rank, "rank");
  if (rank > std::min(d_model, d_hidden)) {
    std::ostringstream os;
    os << "model.rank=" << rank << " exceeds min(d_model, d_hidden)=" << std::min(d_model, d_hidden);
    throw ConfigError(os.str());
  }
}

namespace {

constexpr double kClassPrior = 0.01;

Tensor2D uniform(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor2D t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

GradSlot linear_weight(std::mt19937_64& rng, std::size_t in, std::size_t out) {
  return GradSlot(uniform(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in))));
}

GradSlot zeros(std::size_t rows, std::size_t cols) { return GradSlot(Tensor2D(rows, cols)); }

AttentionParams init_attention(std::mt19937_64& rng, std::size_t d) {
  AttentionParams p;
  p.wq = linear_weight(rng, d, d);
  p.wk = linear_weight(rng, d, d);
  p.wv = linear_weight(rng, d, d);
  p.wo = linear_weight(rng, d, d);
  return p;
}

FFNParams init_ffn(std::mt19937_64& rng, std::size_t d, std::size_t hidden) {
  FFNParams f;
  f.w1 = linear_weight(rng, d, hidden);
  f.bias1 = zeros(1, hidden);
  f.w2 = linear_weight(rng, hidden, d);
  f.bias2 = zeros(1, d);
  return f;
}

LoRAAdapter init_adapter(const ModelConfig& cfg, std::size_t layer, std::size_t branch) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    0x10AAu, static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(branch)};
  std::mt19937_64 rng(seq);
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.rank));
  LoRAAdapter a;
  a.rank = cfg.rank;
  a.a1 = GradSlot(uniform(rng, cfg.rank, cfg.d_model, bound));
  a.b1 = zeros(cfg.d_hidden, cfg.rank);
  a.a2 = GradSlot(uniform(rng, cfg.rank, cfg.d_hidden, bound));
  a.b2 = zeros(cfg.d_model, cfg.rank);
  return a;
}

void push(std::vector<NamedParam>& out, std::string name, GradSlot& slot, bool box_head = false) {
  out.push_back({std::move(name), &slot, box_head});
}

void push_ffn(std::vector<NamedParam>& out, const std::string& prefix, FFNParams& f) {
  push(out, prefix + ".w1", f.w1);
  push(out, prefix + ".bias1", f.bias1);
  push(out, prefix + ".w2", f.w2);
  push(out, prefix + ".bias2", f.bias2);
}

void push_attention(std::vector<NamedParam>& out, const std::string& prefix, AttentionParams& a) {
  push(out, prefix + ".wq", a.wq);
  push(out, prefix + ".wk", a.wk);
  push(out, prefix + ".wv", a.wv);
  push(out, prefix + ".wo", a.wo);
}

}  // namespace

Model::Model(const ModelConfig& cfg) : config(cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const std::size_t d = cfg.d_model;
  query_embed = GradSlot(uniform(rng, cfg.n_queries, d, 1.0));
  layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    DecoderLayer& layer = layers[l];
    layer.self_attn = init_attention(rng, d);
    layer.cross_attn = init_attention(rng, d);
    layer.ffn = init_ffn(rng, d, cfg.d_hidden);
  }
  heads.cls_w = linear_weight(rng, d, cfg.num_classes);
  heads.cls_b = GradSlot(Tensor2D(1, cfg.num_classes, -std::log((1.0 - kClassPrior) / kClassPrior)));
  heads.box_w = linear_weight(rng, d, 4);
  heads.box_b = zeros(1, 4);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t i = 0; i < cfg.n_aux; ++i) {
      if (cfg.aux_mode == AuxMode::kLora) {
        layers[l].adapters.push_back(init_adapter(cfg, l, i));
      } else {
        layers[l].aux_ffns.push_back(layers[l].ffn);
      }
    }
  }
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> out;
  push(out, "queries", query_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l);
    DecoderLayer& layer = layers[l];
    push_attention(out, p + ".sa", layer.self_attn);
    push_attention(out, p + ".ca", layer.cross_attn);
    push_ffn(out, p + ".ffn", layer.ffn);
    for (std::size_t i = 0; i < layer.adapters.size(); ++i) {
      const std::string a = p + ".adapter" + std::to_string(i);
      push(out, a + ".a1", layer.adapters[i].a1);
      push(out, a + ".b1", layer.adapters[i].b1);
      push(out, a + ".a2", layer.adapters[i].a2);
      push(out, a + ".b2", layer.adapters[i].b2);
    }
    for (std::size_t i = 0; i < layer.aux_ffns.size(); ++i)
      push_ffn(out, p + ".aux_ffn" + std::to_string(i), layer.aux_ffns[i]);
  }
  push(out, "heads.cls.w", heads.cls_w);
  push(out, "heads.cls.b", heads.cls_b);
  push(out, "heads.box.w", heads.box_w, true);
  push(out, "heads.box.b", heads.box_b, true);
  return out;
}

std::vector<ConstNamedParam> Model::parameters() const {
  std::vector<ConstNamedParam> out;
  for (auto& p : const_cast<Model*>(this)->parameters()) out.push_back({p.name, p.slot, p.box_head});
  return out;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.slot->zero_grad();
}

// ---- feed-forward --------------------------------------------------------

Tensor2D ffn_forward(const Tensor2D& x, const FFNParams& ffn, FfnCache* cache) {
  Tensor2D pre = add_bias(matmul(x, ffn.w1.value), ffn.bias1.value);
  Tensor2D hidden = relu(pre);
  Tensor2D out = add_bias(matmul(hidden, ffn.w2.value), ffn.bias2.value);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return out;
}

Tensor2D ffn_backward(FFNParams& ffn, const FfnCache& cache, const Tensor2D& d_out) {
  ffn.w2.accumulate(matmul_tn(cache.hidden, d_out));
  ffn.bias2.accumulate(add_bias_backward(d_out).d_bias);
  const Tensor2D d_pre = relu_backward(cache.pre, matmul_nt(d_out, ffn.w2.value));
  ffn.w1.accumulate(matmul_tn(cache.input, d_pre));
  ffn.bias1.accumulate(add_bias_backward(d_pre).d_bias);
  return matmul_nt(d_pre, ffn.w1.value);
}

Tensor2D lora_ffn_forward(const Tensor2D& x, const FFNParams& ffn, const LoRAAdapter& adapter, FfnCache* cache) {
  Tensor2D u1 = matmul_nt(x, adapter.a1.value);
  Tensor2D pre = add_bias(add(matmul(x, ffn.w1.value), matmul_nt(u1, adapter.b1.value)), ffn.bias1.value);
  Tensor2D hidden = relu(pre);
  Tensor2D u2 = matmul_nt(hidden, adapter.a2.value);
  Tensor2D out = add_bias(add(matmul(hidden, ffn.w2.value), matmul_nt(u2, adapter.b2.value)), ffn.bias2.value);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
    cache->hidden = std::move(hidden);
    cache->u1 = std::move(u1);
    cache->u2 = std::move(u2);
  }
  return out;
}

Tensor2D lora_ffn_backward(FFNParams& ffn, LoRAAdapter& adapter, const FfnCache& cache, const Tensor2D& d_out) {
  // Second projection: out = hidden·W2 + u2·B2ᵀ + b2, u2 = hidden·A2ᵀ.
  ffn.w2.accumulate(matmul_tn(cache.hidden, d_out));
  ffn.bias2.accumulate(add_bias_backward(d_out).d_bias);
  adapter.b2.accumulate(matmul_tn(d_out, cache.u2));
  const Tensor2D d_u2 = matmul(d_out, adapter.b2.value);
  adapter.a2.accumulate(matmul_tn(d_u2, cache.hidden));
  Tensor2D d_hidden = matmul_nt(d_out, ffn.w2.value);
  add_inplace(d_hidden, matmul(d_u2, adapter.a2.value));

  // First projection: pre = x·W1 + u1·B1ᵀ + b1, u1 = x·A1ᵀ.
  const Tensor2D d_pre = relu_backward(cache.pre, d_hidden);
  ffn.w1.accumulate(matmul_tn(cache.input, d_pre));
  ffn.bias1.accumulate(add_bias_backward(d_pre).d_bias);
  adapter.b1.accumulate(matmul_tn(d_pre, cache.u1));
  const Tensor2D d_u1 = matmul(d_pre, adapter.b1.value);
  adapter.a1.accumulate(matmul_tn(d_u1, cache.input));
  Tensor2D dx = matmul_nt(d_pre, ffn.w1.value);
  add_inplace(dx, matmul(d_u1, adapter.a1.value));
  return dx;
}

Tensor2D lora_delta_w1(const LoRAAdapter& adapter) { return transpose(matmul(adapter.b1.value, adapter.a1.value)); }

Tensor2D lora_delta_w2(const LoRAAdapter& adapter) { return transpose(matmul(adapter.b2.value, adapter.a2.value)); }

FFNParams merge_adapter(const FFNParams& ffn, const LoRAAdapter& adapter) {
  FFNParams merged = ffn;
  merged.w1 = GradSlot(add(ffn.w1.value, lora_delta_w1(adapter)));
  merged.w2 = GradSlot(add(ffn.w2.value, lora_delta_w2(adapter)));
  return merged;
}

// ---- attention -----------------------------------------------------------

Tensor2D attention_forward(const AttentionParams& p, const Tensor2D& queries, const Tensor2D& source,
                           AttentionCache* cache) {
  if (queries.cols() != p.wq.value.rows() || source.cols() != p.wk.value.rows())
    throw DimensionError("attention: input width " + queries.shape_string() + " / " + source.shape_string() +
                         " does not match projection " + p.wq.value.shape_string());
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(p.wq.value.cols()));
  Tensor2D q = matmul(queries, p.wq.value);
  Tensor2D k = matmul(source, p.wk.value);
  Tensor2D v = matmul(source, p.wv.value);
  Tensor2D attn = softmax_rows(scale(matmul_nt(q, k), scale_factor));
  Tensor2D ctx = matmul(attn, v);
  Tensor2D out = matmul(ctx, p.wo.value);
  if (cache) {
    cache->queries = queries;
    cache->source = source;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->attn = std::move(attn);
    cache->ctx = std::move(ctx);
  }
  return out;
}

AttentionGrads attention_backward(AttentionParams& p, const AttentionCache& c, const Tensor2D& d_out,
                                  bool source_grad) {
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(p.wq.value.cols()));
  p.wo.accumulate(matmul_tn(c.ctx, d_out));
  const Tensor2D d_ctx = matmul_nt(d_out, p.wo.value);
  const Tensor2D d_attn = matmul_nt(d_ctx, c.v);
  const Tensor2D d_v = matmul_tn(c.attn, d_ctx);
  const Tensor2D d_logits = scale(softmax_rows_backward(c.attn, d_attn), scale_factor);
  const Tensor2D d_q = matmul(d_logits, c.k);
  const Tensor2D d_k = matmul_tn(d_logits, c.q);
  p.wq.accumulate(matmul_tn(c.queries, d_q));
  p.wk.accumulate(matmul_tn(c.source, d_k));
  p.wv.accumulate(matmul_tn(c.source, d_v));
  AttentionGrads g;
  g.d_queries = matmul_nt(d_q, p.wq.value);
  if (source_grad) {
    g.d_source = matmul_nt(d_k, p.wk.value);
    add_inplace(g.d_source, matmul_nt(d_v, p.wv.value));
  }
  return g;
}

// ---- decoder layer -------------------------------------------------------

LayerOutput decoder_layer_forward(const Tensor2D& queries, const Tensor2D& features, const DecoderLayer& layer,
                                  LayerCache* cache) {
  const Tensor2D q1 = add(queries, attention_forward(layer.self_attn, queries, queries,
                                                     cache ? &cache->self_attn : nullptr));
  Tensor2D h = add(q1, attention_forward(layer.cross_attn, q1, features, cache ? &cache->cross_attn : nullptr));

  LayerOutput out;
  out.next = add(h, ffn_forward(h, layer.ffn, cache ? &cache->primary : nullptr));
  const std::size_t n_aux = layer.n_aux();
  if (cache) cache->aux.assign(n_aux, FfnCache{});
  out.aux.reserve(n_aux);
  for (std::size_t i = 0; i < layer.adapters.size(); ++i)
    out.aux.push_back(add(h, lora_ffn_forward(h, layer.ffn, layer.adapters[i], cache ? &cache->aux[i] : nullptr)));
  for (std::size_t i = 0; i < layer.aux_ffns.size(); ++i)
    out.aux.push_back(add(h, ffn_forward(h, layer.aux_ffns[i], cache ? &cache->aux[i] : nullptr)));
  if (cache) cache->h = std::move(h);
  return out;
}

Tensor2D decoder_layer_backward(DecoderLayer& layer, const LayerCache& cache, const Tensor2D& d_next,
                                const std::vector<Tensor2D>& d_aux) {
  if (!d_aux.empty() && d_aux.size() != layer.n_aux())
    throw DimensionError("decoder_layer_backward: expected " + std::to_string(layer.n_aux()) +
                         " auxiliary gradients, got " + std::to_string(d_aux.size()));
  Tensor2D d_h = d_next;
  add_inplace(d_h, ffn_backward(layer.ffn, cache.primary, d_next));
  for (std::size_t i = 0; i < d_aux.size(); ++i) {
    if (d_aux[i].empty()) continue;
    add_inplace(d_h, d_aux[i]);
    if (!layer.adapters.empty()) {
      add_inplace(d_h, lora_ffn_backward(layer.ffn, layer.adapters[i], cache.aux[i], d_aux[i]));
    } else {
      add_inplace(d_h, ffn_backward(layer.aux_ffns[i], cache.aux[i], d_aux[i]));
    }
  }
  const AttentionGrads ca = attention_backward(layer.cross_attn, cache.cross_attn, d_h, false);
  Tensor2D d_q1 = add(d_h, ca.d_queries);
  const AttentionGrads sa = attention_backward(layer.self_attn, cache.self_attn, d_q1);
  add_inplace(d_q1, sa.d_queries);
  add_inplace(d_q1, sa.d_source);
  return d_q1;
}

// ---- whole model ---------------------------------------------------------

namespace {

BranchOutput apply_heads(const Heads& heads, const Tensor2D& x) {
  return {sigmoid(add_bias(matmul(x, heads.cls_w.value), heads.cls_b.value)),
          sigmoid(add_bias(matmul(x, heads.box_w.value), heads.box_b.value))};
}

// Returns dL/dx (zero when the branch carries no gradient).
Tensor2D heads_backward(Heads& heads, const Tensor2D& x, const BranchOutput& out, const BranchGrad& g) {
  Tensor2D d_x(x.rows(), x.cols());
  if (!g.d_probs.empty()) {
    const Tensor2D d_logits = sigmoid_backward(out.class_probs, g.d_probs);
    heads.cls_w.accumulate(matmul_tn(x, d_logits));
    heads.cls_b.accumulate(add_bias_backward(d_logits).d_bias);
    add_inplace(d_x, matmul_nt(d_logits, heads.cls_w.value));
  }
  if (!g.d_boxes.empty()) {
    const Tensor2D d_logits = sigmoid_backward(out.boxes, g.d_boxes);
    heads.box_w.accumulate(matmul_tn(x, d_logits));
    heads.box_b.accumulate(add_bias_backward(d_logits).d_bias);
    add_inplace(d_x, matmul_nt(d_logits, heads.box_w.value));
  }
  return d_x;
}

}  // namespace

ModelOutput model_forward(const Model& model, const Tensor2D& features, ForwardCache* cache) {
  if (features.cols() != model.config.d_model)
    throw DimensionError("model_forward: features " + features.shape_string() + " must have d_model=" +
                         std::to_string(model.config.d_model) + " columns");
  ModelOutput out;
  out.outputs.resize(model.layers.size());
  if (cache) {
    cache->layers.assign(model.layers.size(), LayerCache{});
    cache->head_inputs.assign(model.layers.size(), {});
  }
  Tensor2D q = model.query_embed.value;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    LayerOutput lo = decoder_layer_forward(q, features, model.layers[l], cache ? &cache->layers[l] : nullptr);
    auto& branches = out.outputs[l];
    branches.reserve(1 + lo.aux.size());
    branches.push_back(apply_heads(model.heads, lo.next));
    for (const Tensor2D& a : lo.aux) branches.push_back(apply_heads(model.heads, a));
    if (cache) {
      auto& inputs = cache->head_inputs[l];
      inputs.push_back(lo.next);
      for (Tensor2D& a : lo.aux) inputs.push_back(std::move(a));
    }
    q = std::move(lo.next);
  }
  return out;
}

void model_backward(Model& model, const ForwardCache& cache, const ModelOutput& out, const OutputGrads& grads) {
  if (grads.size() != model.layers.size())
    throw DimensionError("model_backward: gradient layer count mismatch");
  Tensor2D d_from_above;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const auto& g = grads[l];
    const std::size_t n_branches = out.outputs[l].size();
    if (g.size() != n_branches) throw DimensionError("model_backward: gradient branch count mismatch");
    Tensor2D d_next = heads_backward(model.heads, cache.head_inputs[l][0], out.outputs[l][0], g[0]);
    if (!d_from_above.empty()) add_inplace(d_next, d_from_above);
    std::vector<Tensor2D> d_aux;
    d_aux.reserve(n_branches - 1);
    for (std::size_t b = 1; b < n_branches; ++b) {
      if (g[b].d_probs.empty() && g[b].d_boxes.empty()) {
        d_aux.emplace_back();
      } else {
        d_aux.push_back(heads_backward(model.heads, cache.head_inputs[l][b], out.outputs[l][b], g[b]));
      }
    }
    d_from_above = decoder_layer_backward(model.layers[l], cache.layers[l], d_next, d_aux);
  }
  model.query_embed.accumulate(d_from_above);
}

Model strip_for_inference(const Model& model) {
  Model stripped = model;
  stripped.config.n_aux = 0;
  for (DecoderLayer& layer : stripped.layers) {
    layer.adapters.clear();
    layer.aux_ffns.clear();
  }
  return stripped;
}

ParamCount param_count(const Model& model) {
  ParamCount pc;
  auto slot = [](const GradSlot& s) { return s.value.size(); };
  auto ffn = [&](const FFNParams& f) { return slot(f.w1) + slot(f.bias1) + slot(f.w2) + slot(f.bias2); };
  auto attn = [&](const AttentionParams& a) { return slot(a.wq) + slot(a.wk) + slot(a.wv) + slot(a.wo); };
  pc.base = slot(model.query_embed);
  for (const DecoderLayer& layer : model.layers) {
    pc.base += attn(layer.self_attn) + attn(layer.cross_attn) + ffn(layer.ffn);
    for (const LoRAAdapter& a : layer.adapters) pc.adapters += slot(a.a1) + slot(a.b1) + slot(a.a2) + slot(a.b2);
    for (const FFNParams& f : layer.aux_ffns) pc.adapters += ffn(f);
  }
  pc.heads = slot(model.heads.cls_w) + slot(model.heads.cls_b) + slot(model.heads.box_w) + slot(model.heads.box_b);
  return pc;
}

// ---- checkpoints ---------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "multiassign-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Model& model, std::ostream& os) {
  const ModelConfig& c = model.config;
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "config d_model " << c.d_model << '\n'
     << "config d_hidden " << c.d_hidden << '\n'
     << "config n_layers " << c.n_layers << '\n'
     << "config n_queries " << c.n_queries << '\n'
     << "config num_classes " << c.num_classes << '\n'
     << "config n_aux " << c.n_aux << '\n'
     << "config rank " << c.rank << '\n'
     << "config aux_mode " << to_string(c.aux_mode) << '\n'
     << "config seed " << c.seed << '\n';
  os << std::setprecision(17);
  for (const auto& p : model.parameters()) {
    const Tensor2D& v = p.slot->value;
    os << "param " << p.name << ' ' << v.rows() << ' ' << v.cols() << '\n';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v.data()[i];
    os << '\n';
  }
  os << "end\n";
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
  save_checkpoint(model, f);
  if (!f) throw CheckpointError("failed writing checkpoint: " + path);
}

Model load_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic)
    throw CheckpointError("not a multiassign checkpoint");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  std::map<std::string, Tensor2D> tensors;
  std::string tag;
  bool ended = false;
  while (is >> tag) {
    if (tag == "end") {
      ended = true;
      break;
    }
    if (tag == "config") {
      std::string key, value;
      is >> key >> value;
      try {
        if (key == "d_model") cfg.d_model = std::stoul(value);
        else if (key == "d_hidden") cfg.d_hidden = std::stoul(value);
        else if (key == "n_layers") cfg.n_layers = std::stoul(value);
        else if (key == "n_queries") cfg.n_queries = std::stoul(value);
        else if (key == "num_classes") cfg.num_classes = std::stoul(value);
        else if (key == "n_aux") cfg.n_aux = std::stoul(value);
        else if (key == "rank") cfg.rank = std::stoul(value);
        else if (key == "aux_mode") cfg.aux_mode = parse_aux_mode(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else throw CheckpointError("unknown checkpoint config key '" + key + "'");
      } catch (const std::logic_error&) {
        throw CheckpointError("bad value for checkpoint config key '" + key + "'");
      }
    } else if (tag == "param") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      if (!(is >> name >> rows >> cols)) throw CheckpointError("truncated param header");
      std::vector<double> data(rows * cols);
      for (double& v : data) {
        std::string tok;
        if (!(is >> tok)) throw CheckpointError("truncated data for '" + name + "'");
        char* end = nullptr;
        v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0') throw CheckpointError("bad number in '" + name + "'");
      }
      tensors.emplace(name, Tensor2D(rows, cols, std::move(data)));
    } else {
      throw CheckpointError("unexpected token '" + tag + "' in checkpoint");
    }
  }
  if (!ended) throw CheckpointError("checkpoint missing end marker");

  Model model(cfg);
  for (auto& p : model.parameters()) {
    auto it = tensors.find(p.name);
    if (it == tensors.end()) throw CheckpointError("checkpoint missing parameter '" + p.name + "'");
    if (!it->second.same_shape(p.slot->value))
      throw CheckpointError("shape mismatch for '" + p.name + "': " + it->second.shape_string() + " vs " +
                            p.slot->value.shape_string());
    *p.slot = GradSlot(std::move(it->second));
    tensors.erase(it);
  }
  if (!tensors.empty()) throw CheckpointError("checkpoint has unexpected parameter '" + tensors.begin()->first + "'");
  return model;
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  return load_checkpoint(f);
}

}  // namespace multiassign
