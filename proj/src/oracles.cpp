#include "multiassign/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "multiassign/assignment.hpp"
#include "multiassign/geometry.hpp"
#include "multiassign/losses.hpp"

namespace multiassign::oracle {

namespace {

void brute_force(const Tensor2D& cost, std::size_t gt, std::vector<char>& used, double partial, double& best) {
  if (gt == cost.cols()) {
    best = std::min(best, partial);
    return;
  }
  for (std::size_t q = 0; q < cost.rows(); ++q) {
    if (used[q]) continue;
    used[q] = 1;
    brute_force(cost, gt + 1, used, partial + cost(q, gt), best);
    used[q] = 0;
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-4;
constexpr double kKinkMargin = 1e-3;

struct Tracker {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;

  void add(const std::string& name, double err) {
    ++checks;
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
};

// f(x) = <R, op(x)> for a fixed random R, so the analytic gradient is op's
// backward applied to R.
double weighted(const Tensor2D& r, const Tensor2D& y) { return dot(r, y); }

}  // namespace

double brute_force_min_cost(const Tensor2D& cost) {
  if (cost.cols() == 0) return 0.0;
  std::vector<char> used(cost.rows(), 0);
  double best = std::numeric_limits<double>::infinity();
  brute_force(cost, 0, used, 0.0, best);
  return best;
}

Tensor2D random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor2D t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

double min_abs_entry(const Tensor2D& x) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : x.data()) m = std::min(m, std::abs(v));
  return m;
}

std::vector<double> singular_values(const Tensor2D& m) {
  // Work on columns of a copy; rotate pairs until they are orthogonal, then the
  // column norms are the singular values.
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<std::vector<double>> c(cols, std::vector<double>(rows));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) c[j][i] = m(i, j);
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += c[p][i] * c[p][i];
          beta += c[q][i] * c[q][i];
          gamma += c[p][i] * c[q][i];
        }
        if (gamma == 0.0) continue;
        off = std::max(off, std::abs(gamma) / std::sqrt(alpha * beta));
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t), sn = cs * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double x = c[p][i], y = c[q][i];
          c[p][i] = cs * x - sn * y;
          c[q][i] = sn * x + cs * y;
        }
      }
    }
    if (off < 1e-15) break;
  }
  std::vector<double> sv;
  for (const auto& col : c) {
    double n = 0.0;
    for (double v : col) n += v * v;
    sv.push_back(std::sqrt(n));
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

ParamCount expected_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, h = cfg.d_hidden, L = cfg.n_layers, r = cfg.rank;
  const std::size_t ffn = d * h + h + h * d + d;
  ParamCount pc;
  pc.base = cfg.n_queries * d + L * (2 * 4 * d * d + ffn);
  pc.heads = d * cfg.num_classes + cfg.num_classes + d * 4 + 4;
  pc.adapters = cfg.n_aux * L * (cfg.aux_mode == AuxMode::kLora ? 2 * r * (d + h) : ffn);
  return pc;
}

SuiteResult hungarian_suite(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coin(0, 2);
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t n_gts, n_queries;
    if (t % 2 == 0) {
      n_gts = n_queries = 1 + t / 2 % 6;
    } else {
      n_gts = 1 + (t / 2) % 5;
      n_queries = n_gts + (t / 2) % (9 - n_gts);
      n_queries = std::min<std::size_t>(n_queries, 8);
    }
    Tensor2D cost;
    if (coin(rng) == 0) {
      // Small integers force many equal-cost optima.
      cost = random_tensor(rng, n_queries, n_gts, 0.0, 4.0);
      for (double& v : cost.data()) v = std::floor(v);
    } else {
      cost = random_tensor(rng, n_queries, n_gts, 0.0, 10.0);
    }
    const auto pairs = hungarian(cost);
    std::vector<char> seen(n_queries, 0);
    for (std::size_t g = 0; g < pairs.size(); ++g) {
      if (pairs[g].second != g || seen[pairs[g].first])
        return {"hungarian", false, "trial " + std::to_string(t) + ": matching is not a valid assignment"};
      seen[pairs[g].first] = 1;
    }
    if (pairs.size() != n_gts)
      return {"hungarian", false, "trial " + std::to_string(t) + ": not every ground truth matched"};
    const double got = assignment_cost(cost, pairs);
    const double want = brute_force_min_cost(cost);
    if (got != want)
      return {"hungarian", false,
              "trial " + std::to_string(t) + ": cost " + fmt(got) + " != brute force " + fmt(want)};
  }
  return {"hungarian", true, std::to_string(trials) + " matrices match the brute-force optimum exactly"};
}

SuiteResult gradient_suite(std::size_t points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tracker tr;

  std::size_t draws = 0;  // distinct seeds for resampled model points
  for (std::size_t p = 0; p < points; ++p) {
    // matmul
    {
      const Tensor2D a = random_tensor(rng, 3, 4), b = random_tensor(rng, 4, 2), r = random_tensor(rng, 3, 2);
      const MatmulGrads g = matmul_backward(a, b, r);
      tr.add("matmul.a", finite_diff_check([&](const Tensor2D& x) { return weighted(r, matmul(x, b)); }, a, g.d_a));
      tr.add("matmul.b", finite_diff_check([&](const Tensor2D& x) { return weighted(r, matmul(a, x)); }, b, g.d_b));
    }
    // add_bias
    {
      const Tensor2D x = random_tensor(rng, 3, 4), bias = random_tensor(rng, 1, 4), r = random_tensor(rng, 3, 4);
      const BiasGrads g = add_bias_backward(r);
      tr.add("add_bias.x", finite_diff_check([&](const Tensor2D& v) { return weighted(r, add_bias(v, bias)); }, x, g.d_x));
      tr.add("add_bias.b",
             finite_diff_check([&](const Tensor2D& v) { return weighted(r, add_bias(x, v)); }, bias, g.d_bias));
    }
    // relu, away from the kink
    {
      Tensor2D x = random_tensor(rng, 3, 4);
      while (min_abs_entry(x) < kKinkMargin) x = random_tensor(rng, 3, 4);
      const Tensor2D r = random_tensor(rng, 3, 4);
      tr.add("relu", finite_diff_check([&](const Tensor2D& v) { return weighted(r, relu(v)); }, x, relu_backward(x, r)));
    }
    // sigmoid
    {
      const Tensor2D x = random_tensor(rng, 3, 4, -4.0, 4.0), r = random_tensor(rng, 3, 4);
      tr.add("sigmoid", finite_diff_check([&](const Tensor2D& v) { return weighted(r, sigmoid(v)); }, x,
                                          sigmoid_backward(sigmoid(x), r)));
    }
    // softmax
    {
      const Tensor2D x = random_tensor(rng, 3, 5, -3.0, 3.0), r = random_tensor(rng, 3, 5);
      tr.add("softmax_rows", finite_diff_check([&](const Tensor2D& v) { return weighted(r, softmax_rows(v)); }, x,
                                               softmax_rows_backward(softmax_rows(x), r)));
    }
    // attention w.r.t. inputs and weights
    {
      const std::size_t d = 4;
      AttentionParams ap{GradSlot(random_tensor(rng, d, d)), GradSlot(random_tensor(rng, d, d)),
                         GradSlot(random_tensor(rng, d, d)), GradSlot(random_tensor(rng, d, d))};
      const Tensor2D q = random_tensor(rng, 3, d), s = random_tensor(rng, 5, d), r = random_tensor(rng, 3, d);
      AttentionCache cache;
      attention_forward(ap, q, s, &cache);
      AttentionParams grads = ap;
      for (GradSlot* g : {&grads.wq, &grads.wk, &grads.wv, &grads.wo}) g->zero_grad();
      const AttentionGrads ag = attention_backward(grads, cache, r);
      tr.add("attention.queries", finite_diff_check([&](const Tensor2D& v) {
               return weighted(r, attention_forward(ap, v, s));
             }, q, ag.d_queries));
      tr.add("attention.source", finite_diff_check([&](const Tensor2D& v) {
               return weighted(r, attention_forward(ap, q, v));
             }, s, ag.d_source));
      const std::pair<const char*, GradSlot AttentionParams::*> members[] = {
          {"attention.wq", &AttentionParams::wq}, {"attention.wk", &AttentionParams::wk},
          {"attention.wv", &AttentionParams::wv}, {"attention.wo", &AttentionParams::wo}};
      for (const auto& [name, member] : members) {
        tr.add(name, finite_diff_check([&](const Tensor2D& v) {
                 AttentionParams probe = ap;
                 (probe.*member).value = v;
                 return weighted(r, attention_forward(probe, q, s));
               }, (ap.*member).value, (grads.*member).grad));
      }
    }
    // ffn and lora ffn
    {
      const std::size_t d = 4, h = 6, rank = 2;
      FFNParams ffn{GradSlot(random_tensor(rng, d, h)), GradSlot(random_tensor(rng, 1, h)),
                    GradSlot(random_tensor(rng, h, d)), GradSlot(random_tensor(rng, 1, d))};
      LoRAAdapter ad{rank, GradSlot(random_tensor(rng, rank, d)), GradSlot(random_tensor(rng, h, rank)),
                     GradSlot(random_tensor(rng, rank, h)), GradSlot(random_tensor(rng, d, rank))};
      Tensor2D x = random_tensor(rng, 3, d);
      const Tensor2D r = random_tensor(rng, 3, d);
      FfnCache plain, lora;
      ffn_forward(x, ffn, &plain);
      lora_ffn_forward(x, ffn, ad, &lora);
      if (min_abs_entry(plain.pre) < kKinkMargin || min_abs_entry(lora.pre) < kKinkMargin) {
        --p;  // resample this point
        continue;
      }
      FFNParams gffn = ffn;
      for (GradSlot* g : {&gffn.w1, &gffn.bias1, &gffn.w2, &gffn.bias2}) g->zero_grad();
      const Tensor2D dx = ffn_backward(gffn, plain, r);
      tr.add("ffn.x", finite_diff_check([&](const Tensor2D& v) { return weighted(r, ffn_forward(v, ffn)); }, x, dx));
      const std::pair<const char*, GradSlot FFNParams::*> ffn_members[] = {
          {"w1", &FFNParams::w1}, {"bias1", &FFNParams::bias1}, {"w2", &FFNParams::w2}, {"bias2", &FFNParams::bias2}};
      for (const auto& [name, member] : ffn_members) {
        tr.add(std::string("ffn.") + name, finite_diff_check([&](const Tensor2D& v) {
                 FFNParams probe = ffn;
                 (probe.*member).value = v;
                 return weighted(r, ffn_forward(x, probe));
               }, (ffn.*member).value, (gffn.*member).grad));
      }

      FFNParams lffn = ffn;
      LoRAAdapter lad = ad;
      for (GradSlot* g : {&lffn.w1, &lffn.bias1, &lffn.w2, &lffn.bias2, &lad.a1, &lad.b1, &lad.a2, &lad.b2})
        g->zero_grad();
      const Tensor2D ldx = lora_ffn_backward(lffn, lad, lora, r);
      tr.add("lora_ffn.x",
             finite_diff_check([&](const Tensor2D& v) { return weighted(r, lora_ffn_forward(v, ffn, ad)); }, x, ldx));
      for (const auto& [name, member] : ffn_members) {
        tr.add(std::string("lora_ffn.") + name, finite_diff_check([&](const Tensor2D& v) {
                 FFNParams probe = ffn;
                 (probe.*member).value = v;
                 return weighted(r, lora_ffn_forward(x, probe, ad));
               }, (ffn.*member).value, (lffn.*member).grad));
      }
      const std::pair<const char*, GradSlot LoRAAdapter::*> lora_members[] = {
          {"a1", &LoRAAdapter::a1}, {"b1", &LoRAAdapter::b1}, {"a2", &LoRAAdapter::a2}, {"b2", &LoRAAdapter::b2}};
      for (const auto& [name, member] : lora_members) {
        tr.add(std::string("lora_ffn.") + name, finite_diff_check([&](const Tensor2D& v) {
                 LoRAAdapter probe = ad;
                 (probe.*member).value = v;
                 return weighted(r, lora_ffn_forward(x, ffn, probe));
               }, (ad.*member).value, (lad.*member).grad));
      }
    }
    // vfl_plus
    {
      std::uniform_real_distribution<double> u(0.05, 0.95);
      const double s = u(rng), gamma = 1.5;
      for (int y : {0, 1}) {
        const Tensor2D x(1, 1, u(rng));
        const Tensor2D an(1, 1, vfl_plus(x(0, 0), s, y, gamma).grad);
        tr.add(y ? "vfl_plus.pos" : "vfl_plus.neg",
               finite_diff_check([&](const Tensor2D& v) { return vfl_plus(v(0, 0), s, y, gamma).value; }, x, an));
      }
    }
    // iou / giou / l1 on overlapping boxes in general position
    {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      auto rand_box = [&] {
        const double x1 = u(rng) * 0.5, y1 = u(rng) * 0.5;
        return BoxXYXY{x1, y1, x1 + 0.2 + 0.3 * u(rng), y1 + 0.2 + 0.3 * u(rng)};
      };
      const BoxXYXY a = rand_box(), b = rand_box();
      auto pack = [](const BoxXYXY& bx) {
        return Tensor2D(1, 4, std::vector<double>{bx.x1, bx.y1, bx.x2, bx.y2});
      };
      auto unpack = [](const Tensor2D& t) { return BoxXYXY{t(0, 0), t(0, 1), t(0, 2), t(0, 3)}; };
      const auto coords_a = a.as_array(), coords_b = b.as_array();
      bool tie = false;
      for (int i = 0; i < 4; ++i) tie |= std::abs(coords_a[i] - coords_b[i]) < kKinkMargin;
      if (tie || iou(a, b) == 0.0) {
        --p;
        continue;
      }
      const PairGrad gi = iou_with_grad(a, b), gg = giou_with_grad(a, b);
      tr.add("iou", finite_diff_check([&](const Tensor2D& v) { return iou(unpack(v), b); }, pack(a),
                                      Tensor2D(1, 4, std::vector<double>(gi.d_a.begin(), gi.d_a.end()))));
      tr.add("giou.a", finite_diff_check([&](const Tensor2D& v) { return giou(unpack(v), b); }, pack(a),
                                         Tensor2D(1, 4, std::vector<double>(gg.d_a.begin(), gg.d_a.end()))));
      tr.add("giou.b", finite_diff_check([&](const Tensor2D& v) { return giou(a, unpack(v)); }, pack(b),
                                         Tensor2D(1, 4, std::vector<double>(gg.d_b.begin(), gg.d_b.end()))));
      const BoxCXCYWH ca = to_cxcywh(a), cb = to_cxcywh(b);
      const L1Grad gl = l1_box_with_grad(ca, cb);
      tr.add("l1_box", finite_diff_check([&](const Tensor2D& v) {
               return l1_box(BoxCXCYWH{v(0, 0), v(0, 1), v(0, 2), v(0, 3)}, cb);
             }, Tensor2D(1, 4, std::vector<double>{ca.cx, ca.cy, ca.w, ca.h}),
             Tensor2D(1, 4, std::vector<double>(gl.d_a.begin(), gl.d_a.end()))));
    }
    // full model loss with frozen assignments
    {
      ++draws;
      ExperimentConfig cfg;
      cfg.model = ModelConfig{6, 8, 2, 5, 3, 2, 2, p % 2 ? AuxMode::kFullFfn : AuxMode::kLora, 100 + draws};
      cfg.train.k_set = {2, 4};
      cfg.match.tau = 0.05;
      FrozenLoss fl = make_frozen_loss(cfg, 1000 + draws);
      // Perturb the zero-initialized adapters so every term is exercised.
      for (auto& np : fl.model.parameters())
        if (np.name.find(".b1") != std::string::npos || np.name.find(".b2") != std::string::npos)
          np.slot->value = random_tensor(rng, np.slot->value.rows(), np.slot->value.cols(), -0.3, 0.3);
      ForwardCache cache;
      model_forward(fl.model, fl.features, &cache);
      double kink = std::numeric_limits<double>::infinity();
      for (const auto& lc : cache.layers) {
        kink = std::min(kink, min_abs_entry(lc.primary.pre));
        for (const auto& a : lc.aux) kink = std::min(kink, min_abs_entry(a.pre));
      }
      if (kink < kKinkMargin) {
        --p;
        continue;
      }
      const Model grads = fl.gradients();
      const auto params = fl.model.parameters();
      const auto gparams = grads.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        tr.add("model." + params[i].name, finite_diff_check([&](const Tensor2D& v) { return fl(params[i].name, v); },
                                                            params[i].slot->value, gparams[i].slot->grad, kStep));
      }
    }
  }
  const bool ok = tr.worst < kTolerance;
  return {"gradients", ok,
          std::to_string(tr.checks) + " checks, worst rel err " + fmt(tr.worst) + " (" + tr.worst_name + ")"};
}

std::vector<Prediction> random_predictions(std::mt19937_64& rng, std::size_t n, std::size_t num_classes) {
  std::uniform_real_distribution<double> u(0.0, 1.0), center(0.2, 0.8), size(0.05, 0.4);
  std::vector<Prediction> preds(n);
  for (auto& p : preds) {
    p.class_scores.resize(num_classes);
    for (double& c : p.class_scores) c = u(rng);
    p.box = {center(rng), center(rng), size(rng), size(rng)};
  }
  return preds;
}

std::vector<GroundTruth> random_gts(std::mt19937_64& rng, std::size_t n, std::size_t num_classes) {
  std::uniform_real_distribution<double> center(0.2, 0.8), size(0.05, 0.4);
  std::uniform_int_distribution<std::size_t> cls(0, num_classes - 1);
  std::vector<GroundTruth> gts(n);
  for (auto& g : gts) g = {cls(rng), {center(rng), center(rng), size(rng), size(rng)}};
  return gts;
}

SuiteResult matcher_suite(std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n_preds(1, 20), n_gts(1, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t positives = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto preds = random_predictions(rng, n_preds(rng), 3);
    const auto gts = random_gts(rng, n_gts(rng), 3);
    const double alpha = u(rng), tau = 0.5 * u(rng);
    std::vector<std::vector<AssignedPair>> sets;
    for (std::size_t k : {2, 4, 6}) {
      const MatchConfig cfg{alpha, tau, k};
      const AssignmentResult r = o2m_assign(preds, gts, cfg);
      std::vector<std::size_t> per_gt(gts.size(), 0), per_query(preds.size(), 0);
      for (const auto& p : r.pairs) {
        const double m = match_score(preds[p.query], gts[p.gt], alpha);
        if (!(m > tau) || p.quality != m)
          return {"matcher", false, "trial " + std::to_string(t) + ": positive with M <= tau or s != M"};
        if (++per_gt[p.gt] > k) return {"matcher", false, "trial " + std::to_string(t) + ": more than k per gt"};
        if (++per_query[p.query] > 1)
          return {"matcher", false, "trial " + std::to_string(t) + ": query positive for two gts"};
      }
      positives += r.pairs.size();
      sets.push_back(r.pairs);
    }
    for (std::size_t i = 0; i + 1 < sets.size(); ++i)
      for (const auto& p : sets[i])
        if (std::find(sets[i + 1].begin(), sets[i + 1].end(), p) == sets[i + 1].end())
          return {"matcher", false, "trial " + std::to_string(t) + ": positives not nested across k"};
  }
  return {"matcher", true,
          std::to_string(trials) + " random sets, " + std::to_string(positives) + " positives checked"};
}

SuiteResult vfl_suite() {
  double worst = 0.0;
  for (int i = 1; i <= 9; ++i) {
    const double s = 0.1 * i;
    double best_p = 0.0, best = std::numeric_limits<double>::infinity();
    for (int j = 1; j < 10000; ++j) {
      const double p = j / 10000.0;
      const double v = vfl_plus(p, s, 1, 1.5).value;
      if (v < best) {
        best = v;
        best_p = p;
      }
    }
    worst = std::max(worst, std::abs(best_p - s));
  }
  if (worst > 2e-4) return {"vfl", false, "grid argmin off by " + fmt(worst)};
  const double neg = vfl_plus(0.5, 0.0, 0, 1.5).value;
  const double expected = std::pow(0.5, 1.5) * std::log(2.0);
  if (std::abs(neg - expected) > 1e-12)
    return {"vfl", false, "negative branch " + fmt(neg) + " != 0.5^1.5 ln 2 = " + fmt(expected)};
  return {"vfl", true, "argmin within " + fmt(worst) + " of s; negative branch matches 0.5^1.5 ln 2"};
}

SuiteResult zero_init_suite(std::size_t inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (AuxMode mode : {AuxMode::kLora, AuxMode::kFullFfn}) {
    ModelConfig mc;
    mc.n_aux = 3;
    mc.aux_mode = mode;
    mc.seed = seed;
    const Model model(mc);
    for (std::size_t i = 0; i < inputs; ++i) {
      const Tensor2D x = random_tensor(rng, 64, mc.d_model);
      const ModelOutput out = model_forward(model, x);
      for (std::size_t l = 0; l < out.outputs.size(); ++l) {
        const auto& primary = out.outputs[l][0];
        for (std::size_t b = 1; b < out.outputs[l].size(); ++b) {
          if (!(out.outputs[l][b].class_probs == primary.class_probs) || !(out.outputs[l][b].boxes == primary.boxes))
            return {"zero_init", false,
                    to_string(mode) + ": branch " + std::to_string(b) + " differs at layer " + std::to_string(l)};
        }
      }
    }
  }
  return {"zero_init", true, "lora and full_ffn branches identical on " + std::to_string(inputs) + " inputs"};
}

SuiteResult strip_invariance_suite(std::size_t inputs, std::size_t train_steps, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.model.n_aux = 3;
  cfg.model.seed = seed;
  cfg.train.seed = seed;
  cfg.train.steps = train_steps;
  cfg.train.eval_interval = train_steps;
  cfg.data.val_scenes = 10;

  std::mt19937_64 rng(seed ^ 0x5719);
  auto check = [&](const Model& model, const char* when) -> std::string {
    const Model stripped = strip_for_inference(model);
    for (std::size_t i = 0; i < inputs; ++i) {
      const Tensor2D x = random_tensor(rng, 64, cfg.model.d_model);
      const ModelOutput full = model_forward(model, x);
      const ModelOutput lean = model_forward(stripped, x);
      for (std::size_t l = 0; l < full.outputs.size(); ++l) {
        if (!(full.outputs[l][0].class_probs == lean.outputs[l][0].class_probs) ||
            !(full.outputs[l][0].boxes == lean.outputs[l][0].boxes))
          return std::string("primary output differs ") + when + " training at layer " + std::to_string(l);
      }
    }
    return {};
  };
  if (auto err = check(Model(cfg.model), "before"); !err.empty()) return {"strip_invariance", false, err};
  const TrainResult tr = train(cfg);
  if (auto err = check(tr.model, "after"); !err.empty()) return {"strip_invariance", false, err};
  return {"strip_invariance", true,
          "bit-identical on " + std::to_string(inputs) + " inputs before and after " + std::to_string(train_steps) +
              " steps"};
}

double FrozenLoss::operator()(const std::string& param, const Tensor2D& value) const {
  Model probe = model;
  for (auto& np : probe.parameters())
    if (np.name == param) np.slot->value = value;
  const ModelOutput out = model_forward(probe, features);
  return total_loss(out, gts, assignments, loss).report.grand_total;
}

Model FrozenLoss::gradients() const {
  Model g = model;
  g.zero_grad();
  ForwardCache cache;
  const ModelOutput out = model_forward(g, features, &cache);
  const TotalLoss tl = total_loss(out, gts, assignments, loss);
  model_backward(g, cache, out, tl.grads);
  return g;
}

FrozenLoss make_frozen_loss(const ExperimentConfig& cfg, std::uint64_t scene_seed) {
  std::mt19937_64 rng(scene_seed);
  FrozenLoss fl;
  fl.model = Model(cfg.model);
  fl.loss = cfg.loss;
  fl.features = random_tensor(rng, 7, cfg.model.d_model);
  std::uniform_real_distribution<double> u(0.2, 0.8), size(0.15, 0.4);
  std::uniform_int_distribution<std::size_t> cls(0, cfg.model.num_classes - 1);
  for (int i = 0; i < 2; ++i) fl.gts.push_back({cls(rng), {u(rng), u(rng), size(rng), size(rng)}});
  const ModelOutput out = model_forward(fl.model, fl.features);
  fl.assignments = assign_all(out, fl.gts, cfg.cost, cfg.strategies());
  return fl;
}

}  // namespace multiassign::oracle
