#include "lct/gradcheck.hpp"

#include <cmath>
#include <cstdio>

#include "lct/loss.hpp"

namespace lct {

namespace {

double project(const TensorD& r, const TensorD& out) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
  return s;
}

TensorD grad_of(TensorD& t) {
  const auto g = t.grad();
  return TensorD(t.shape(), std::vector<double>(g.begin(), g.end()));
}

TensorD randn(Rng& rng, const Shape& s, double sigma = 1.0) { return rng_normal<double>(rng, s, 0, sigma); }

// Pushes values away from zero so ReLU kinks stay outside the difference step.
void off_kink(TensorD& t, double margin = 0.05) {
  for (auto& v : t.values()) v = v < 0 ? v - margin : v + margin;
}

using Factory = std::function<std::unique_ptr<Layer<double>>()>;

GradResult check_layer(const std::string& name, const std::string& scope, Layer<double>& layer, TensorD x, Mode mode,
                       const GradcheckOptions& opt, Rng& rng) {
  ParamRegistry<double> reg;
  layer.collect(reg, "");
  Probe p;
  p.inputs.emplace_back("x", &x);
  for (const auto& np : reg.params()) p.inputs.emplace_back(np.name, np.tensor);
  p.forward = [&] { return layer.forward(x, mode); };
  p.backward = [&](const TensorD& dy) {
    for (const auto& np : reg.params()) np.tensor->clear_grad();
    std::vector<TensorD> g{layer.backward(dy)};
    for (const auto& np : reg.params()) g.push_back(grad_of(*np.tensor));
    return g;
  };
  return check_probe(name, scope, p, opt, rng);
}

void randomize_attention(AttentionBlock<double>& a, Rng& rng) {
  const auto kind = a.config().kind;
  if (kind == AttentionKind::lct) {
    a.w = randn(rng, a.w.shape());
    a.b = randn(rng, a.b.shape());
  } else if (kind == AttentionKind::se || kind == AttentionKind::se_plus) {
    a.fc1_bias = randn(rng, a.fc1_bias.shape(), 0.5);
    a.fc2_bias = randn(rng, a.fc2_bias.shape(), 0.5);
  }
}

AttentionConfig attn_config(AttentionKind kind, std::size_t c, std::size_t groups, std::size_t reduction) {
  AttentionConfig cfg;
  cfg.kind = kind;
  cfg.channels = c;
  cfg.groups = groups;
  cfg.reduction = reduction;
  return cfg;
}

struct Unit {
  std::string name, scope;
  std::function<GradResult(const GradcheckOptions&, Rng&)> run;
};

Factory pick(const GradcheckOptions& opt, const std::string& name, Factory fallback) {
  const auto it = opt.layer_overrides.find(name);
  return it != opt.layer_overrides.end() ? it->second : fallback;
}

Unit layer_unit(std::string name, Shape in, Mode mode, Factory make, bool kinks = false,
                std::function<void(Layer<double>&, Rng&)> prepare = {}) {
  return {name, "layers", [=](const GradcheckOptions& opt, Rng& rng) {
            auto layer = pick(opt, name, make)();
            if (prepare) prepare(*layer, rng);
            TensorD x = randn(rng, in);
            if (kinks) off_kink(x);
            return check_layer(name, "layers", *layer, x, mode, opt, rng);
          }};
}

Unit block_unit(std::string name, AttentionConfig cfg, Shape in) {
  return {name, "blocks", [=](const GradcheckOptions& opt, Rng& rng) {
            AttentionBlock<double> block(cfg, rng);
            randomize_attention(block, rng);
            return check_layer(name, "blocks", block, randn(rng, in), Mode::train, opt, rng);
          }};
}

std::vector<Unit> all_units() {
  std::vector<Unit> u;
  u.push_back(layer_unit("conv3x3", {2, 3, 5, 5}, Mode::train, [] {
    Rng r(1);
    return std::make_unique<Conv2d<double>>(3, 4, 3, 1, r);
  }));
  u.push_back(layer_unit("conv3x3_stride2", {2, 3, 6, 5}, Mode::train, [] {
    Rng r(2);
    return std::make_unique<Conv2d<double>>(3, 4, 3, 2, r);
  }));
  u.push_back(layer_unit("conv1x1_stride2", {2, 4, 5, 5}, Mode::train, [] {
    Rng r(3);
    return std::make_unique<Conv2d<double>>(4, 3, 1, 2, r);
  }));
  auto bn_prepare = [](Layer<double>& l, Rng& rng) {
    auto& bn = dynamic_cast<BatchNorm2d<double>&>(l);
    bn.gamma = rng_uniform<double>(rng, bn.gamma.shape(), 0.5, 1.5);
    bn.beta = randn(rng, bn.beta.shape());
    bn.running_mean = randn(rng, bn.running_mean.shape());
    bn.running_var = rng_uniform<double>(rng, bn.running_var.shape(), 0.5, 2.0);
  };
  u.push_back(layer_unit(
      "batchnorm_train", {3, 4, 3, 3}, Mode::train, [] { return std::make_unique<BatchNorm2d<double>>(4); }, false,
      bn_prepare));
  u.push_back(layer_unit(
      "batchnorm_infer", {3, 4, 3, 3}, Mode::infer, [] { return std::make_unique<BatchNorm2d<double>>(4); }, false,
      bn_prepare));
  u.push_back(layer_unit("relu", {2, 3, 4, 4}, Mode::train, [] { return std::make_unique<ReLU<double>>(); }, true));
  u.push_back(layer_unit("sigmoid", {2, 3, 4, 4}, Mode::train, [] { return std::make_unique<Sigmoid<double>>(); }));
  u.push_back(layer_unit("linear", {3, 6}, Mode::train, [] {
    Rng r(4);
    return std::make_unique<Linear<double>>(6, 5, r);
  }));
  u.push_back(
      layer_unit("global_avg_pool", {2, 3, 4, 5}, Mode::train, [] { return std::make_unique<GlobalAvgPool<double>>(); }));
  u.push_back(
      layer_unit("avg_pool2d", {2, 3, 6, 7}, Mode::train, [] { return std::make_unique<AvgPool2d<double>>(2, 2); }));
  u.push_back({"softmax_cross_entropy", "layers", [](const GradcheckOptions& opt, Rng& rng) {
                 TensorD logits = randn(rng, {4, 5});
                 const std::vector<int> labels{0, 3, 4, 1};
                 Probe p;
                 p.scalar_loss = true;
                 p.inputs.emplace_back("logits", &logits);
                 p.forward = [&] { return TensorD::scalar(cross_entropy(logits, labels).loss); };
                 p.backward = [&](const TensorD&) {
                   return std::vector<TensorD>{cross_entropy(logits, labels).dlogits};
                 };
                 return check_probe("softmax_cross_entropy", "layers", p, opt, rng);
               }});

  // ---- attention operators
  u.push_back({"aggregate", "blocks", [](const GradcheckOptions& opt, Rng& rng) {
                 TensorD x = randn(rng, {2, 4, 3, 5});
                 Probe p;
                 p.inputs.emplace_back("x", &x);
                 p.forward = [&] { return aggregate(x); };
                 p.backward = [&](const TensorD& dz) { return std::vector<TensorD>{aggregate_backward(dz, x.shape())}; };
                 return check_probe("aggregate", "blocks", p, opt, rng);
               }});
  for (std::size_t groups : {std::size_t(1), std::size_t(2), std::size_t(8)}) {
    const std::string name = "normalize_g" + std::to_string(groups);
    u.push_back({name, "blocks", [=](const GradcheckOptions& opt, Rng& rng) {
                   TensorD z = randn(rng, {3, 8});
                   Probe p;
                   p.inputs.emplace_back("z", &z);
                   p.forward = [&] { return normalize(z, groups, 1e-5).out; };
                   p.backward = [&](const TensorD& dy) {
                     return std::vector<TensorD>{normalize_backward(dy, normalize(z, groups, 1e-5))};
                   };
                   return check_probe(name, "blocks", p, opt, rng);
                 }});
  }
  u.push_back({"transform", "blocks", [](const GradcheckOptions& opt, Rng& rng) {
                 TensorD zhat = randn(rng, {3, 6}), w = randn(rng, {6}), b = randn(rng, {6});
                 Probe p;
                 p.inputs = {{"zhat", &zhat}, {"w", &w}, {"b", &b}};
                 p.forward = [&] { return transform(zhat, w, b); };
                 p.backward = [&](const TensorD& da) {
                   TensorD dw(w.shape()), db(b.shape());
                   TensorD dz = transform_backward(da, zhat, w, dw.values(), db.values());
                   return std::vector<TensorD>{dz, dw, db};
                 };
                 return check_probe("transform", "blocks", p, opt, rng);
               }});
  u.push_back({"fuse", "blocks", [](const GradcheckOptions& opt, Rng& rng) {
                 TensorD x = randn(rng, {2, 3, 4, 4}), a = randn(rng, {2, 3});
                 Probe p;
                 p.inputs = {{"x", &x}, {"a", &a}};
                 p.forward = [&] { return fuse(x, a); };
                 p.backward = [&](const TensorD& dy) {
                   auto g = fuse_backward(dy, x, a);
                   return std::vector<TensorD>{g.dx, g.da};
                 };
                 return check_probe("fuse", "blocks", p, opt, rng);
               }});
  u.push_back({"se_excitation", "blocks", [](const GradcheckOptions& opt, Rng& rng) {
                 TensorD z = randn(rng, {3, 8}), w1 = randn(rng, {4, 8}), b1 = randn(rng, {4}, 0.5);
                 TensorD w2 = randn(rng, {8, 4}), b2 = randn(rng, {8});
                 Probe p;
                 p.inputs = {{"z", &z}, {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
                 const SeParams<double> sp{w1, b1, w2, b2};
                 p.forward = [&] { return se_excite(z, sp).scores; };
                 p.backward = [&](const TensorD& ds) {
                   auto g = se_excite_backward(ds, z, se_excite(z, sp), sp);
                   return std::vector<TensorD>{g.dz, g.dw1, g.db1, g.dw2, g.db2};
                 };
                 return check_probe("se_excitation", "blocks", p, opt, rng);
               }});

  // ---- whole attention blocks
  const Shape bx{2, 8, 3, 3};
  u.push_back(block_unit("se_block", attn_config(AttentionKind::se, 8, 2, 2), bx));
  u.push_back(block_unit("lct_block", attn_config(AttentionKind::lct, 8, 2, 2), bx));
  {
    auto c = attn_config(AttentionKind::lct, 8, 2, 2);
    c.skip_normalize = true;
    u.push_back(block_unit("lct_block_skip_normalize", c, bx));
    c.skip_normalize = false;
    c.skip_transform = true;
    u.push_back(block_unit("lct_block_skip_transform", c, bx));
    c.skip_normalize = true;
    u.push_back(block_unit("lct_block_skip_both", c, bx));
  }
  u.push_back(block_unit("lct_block_g1", attn_config(AttentionKind::lct, 8, 1, 2), bx));
  u.push_back(block_unit("se_plus_block", attn_config(AttentionKind::se_plus, 8, 2, 2), bx));

  // ---- residual blocks
  u.push_back({"basic_block_lct", "blocks", [](const GradcheckOptions& opt, Rng& rng) {
                 ResidualBlock<double> block(BlockKind::basic, 4, 8, 2, attn_config(AttentionKind::lct, 8, 2, 2), rng);
                 randomize_attention(block.attention(), rng);
                 return check_layer("basic_block_lct", "blocks", block, randn(rng, {2, 4, 5, 5}), Mode::train, opt,
                                    rng);
               }});
  u.push_back({"bottleneck_block_se", "blocks", [](const GradcheckOptions& opt, Rng& rng) {
                 ResidualBlock<double> block(BlockKind::bottleneck, 16, 16, 1,
                                             attn_config(AttentionKind::se, 16, 2, 4), rng);
                 randomize_attention(block.attention(), rng);
                 return check_layer("bottleneck_block_se", "blocks", block, randn(rng, {2, 16, 3, 3}), Mode::train,
                                    opt, rng);
               }});

  // ---- end to end
  u.push_back({"micro_network", "end2end", [](const GradcheckOptions& opt, Rng& rng) {
                 NetworkSpec spec;
                 spec.stem = {4, 3, 1, 0, 0};
                 spec.stages = {{1, 4, BlockKind::basic, 1}, {1, 8, BlockKind::basic, 2}};
                 spec.attention = attn_config(AttentionKind::lct, 0, 2, 2);
                 spec.num_classes = 3;
                 spec.input = {3, 6, 6};
                 Network<double> net(spec, rng);
                 for (auto& pt : net.attention_points()) randomize_attention(*pt.block_ptr, rng);
                 auto reg = net.registry();
                 TensorD x = randn(rng, {2, 3, 6, 6});
                 const std::vector<int> labels{1, 2};
                 Probe p;
                 p.scalar_loss = true;
                 for (const auto& np : reg.params()) p.inputs.emplace_back(np.name, np.tensor);
                 p.forward = [&] { return TensorD::scalar(cross_entropy(net.forward(x, Mode::train), labels).loss); };
                 p.backward = [&](const TensorD&) {
                   for (const auto& np : reg.params()) np.tensor->clear_grad();
                   net.backward(cross_entropy(net.forward(x, Mode::train), labels).dlogits);
                   std::vector<TensorD> g;
                   for (const auto& np : reg.params()) g.push_back(grad_of(*np.tensor));
                   return g;
                 };
                 GradcheckOptions o = opt;
                 o.max_coords = 0;  // 20 coordinates drawn across all parameters
                 return check_probe("micro_network", "end2end", p, o, rng);
               }});
  return u;
}

}  // namespace

GradResult check_probe(const std::string& name, const std::string& scope, Probe& probe,
                       const GradcheckOptions& opt, Rng& rng) {
  GradResult res{name, scope, 0, "", 0, false};
  const TensorD out = probe.forward();
  const TensorD r = probe.scalar_loss ? TensorD::scalar(1.0) : randn(rng, out.shape());
  const std::vector<TensorD> analytic = probe.backward(r);
  if (analytic.size() != probe.inputs.size()) throw StateError("gradcheck " + name + ": gradient count mismatch");

  auto loss = [&] {
    const TensorD o = probe.forward();
    return probe.scalar_loss ? o[0] : project(r, o);
  };
  auto check = [&](std::size_t in, std::size_t i) {
    TensorD& t = *probe.inputs[in].second;
    const double v = t[i];
    t[i] = v + opt.step;
    const double lp = loss();
    t[i] = v - opt.step;
    const double lm = loss();
    t[i] = v;
    const double num = (lp - lm) / (2 * opt.step);
    const double ana = analytic[in][i];
    const double rel = std::abs(ana - num) / std::max(opt.floor, std::abs(ana) + std::abs(num));
    ++res.checked;
    if (rel > res.max_rel_error || res.worst.empty()) {
      res.max_rel_error = std::max(res.max_rel_error, rel);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s[%zu] analytic=%.9g numeric=%.9g", probe.inputs[in].first.c_str(), i, ana,
                    num);
      res.worst = buf;
    }
  };

  if (opt.max_coords == 0) {
    std::size_t total = 0;
    for (const auto& [n, t] : probe.inputs) total += t->size();
    for (int k = 0; k < 20; ++k) {
      std::size_t flat = rng.below(total), in = 0;
      while (flat >= probe.inputs[in].second->size()) flat -= probe.inputs[in++].second->size();
      check(in, flat);
    }
  } else {
    for (std::size_t in = 0; in < probe.inputs.size(); ++in) {
      const std::size_t n = probe.inputs[in].second->size();
      if (n <= opt.max_coords) {
        for (std::size_t i = 0; i < n; ++i) check(in, i);
      } else {
        for (std::size_t k = 0; k < opt.max_coords; ++k) check(in, rng.below(n));
      }
    }
  }
  res.pass = res.max_rel_error < opt.tolerance;
  return res;
}

std::vector<std::string> gradcheck_units(const std::string& scope) {
  if (scope != "layers" && scope != "blocks" && scope != "end2end" && scope != "all") {
    throw ConfigError("unknown gradcheck scope '" + scope + "' (expected layers, blocks, end2end, all)");
  }
  std::vector<std::string> names;
  for (const auto& u : all_units())
    if (scope == "all" || u.scope == scope) names.push_back(u.name);
  return names;
}

std::vector<GradResult> run_gradcheck(const std::string& scope, const GradcheckOptions& options) {
  gradcheck_units(scope);
  std::vector<GradResult> out;
  std::uint64_t stream = 0;
  for (const auto& u : all_units()) {
    ++stream;
    if (scope != "all" && u.scope != scope) continue;
    Rng rng = Rng(options.seed).fork(stream);
    out.push_back(u.run(options, rng));
  }
  return out;
}

}  // namespace lct
