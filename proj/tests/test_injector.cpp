#include <doctest.h>

#include <cmath>

#include "lcirc/grad_check.hpp"
#include "test_util.hpp"

using namespace lcirc;
using namespace lcirc::testing;

namespace {

using Vec = std::vector<double>;

Vec ln_ref(const Vec& x, double eps) {
  double mean = 0, var = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  Vec out;
  for (double v : x) out.push_back((v - mean) / std::sqrt(var + eps));
  return out;
}

Vec affine_ref(const Vec& x, const M& w, const M& b) {
  Vec out(static_cast<std::size_t>(w.cols()), 0.0);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    double s = b(0, j);
    for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[static_cast<std::size_t>(i)] * w(i, j);
    out[static_cast<std::size_t>(j)] = s;
  }
  return out;
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::acos(-1.0)) * (x + 0.044715 * x * x * x))); }

// Scalar-loop GCA for a single query row; unit layer-norm gains, zero biases.
Vec gca_ref(const GcaBlock<double>& g, const Vec& x, const std::vector<Vec>& memory, double eps) {
  const auto heads = static_cast<std::size_t>(g.heads);
  const auto dq = static_cast<std::size_t>(g.query_dim);
  const auto hd = dq / heads;
  const Vec q = affine_ref(ln_ref(x, eps), g.q.weight.value(), g.q.bias.value());
  std::vector<Vec> ks, vs;
  for (const auto& m : memory) {
    const Vec mn = ln_ref(m, eps);
    ks.push_back(affine_ref(mn, g.k.weight.value(), g.k.bias.value()));
    vs.push_back(affine_ref(mn, g.v.weight.value(), g.v.bias.value()));
  }
  Vec att(dq, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    Vec s;
    for (const auto& k : ks) {
      double dot = 0;
      for (std::size_t i = h * hd; i < (h + 1) * hd; ++i) dot += q[i] * k[i];
      s.push_back(dot / std::sqrt(static_cast<double>(hd)));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (auto& v : s) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j < s.size(); ++j)
      for (std::size_t i = h * hd; i < (h + 1) * hd; ++i) att[i] += s[j] / z * vs[j][i];
  }
  const Vec ca = affine_ref(att, g.o.weight.value(), g.o.bias.value());
  const double a = std::tanh(g.gate_attn.item()), b = std::tanh(g.gate_mlp.item());
  Vec x1(dq);
  for (std::size_t i = 0; i < dq; ++i) x1[i] = a * ca[i] + x[i];
  Vec hmid = affine_ref(ln_ref(x1, eps), g.mlp.fc1.weight.value(), g.mlp.fc1.bias.value());
  for (auto& v : hmid) v = gelu_ref(v);
  const Vec m = affine_ref(hmid, g.mlp.fc2.weight.value(), g.mlp.fc2.bias.value());
  Vec out(dq);
  for (std::size_t i = 0; i < dq; ++i) out[i] = b * m[i] + x1[i];
  return out;
}

}  // namespace

TEST_CASE("fresh GCA block is the identity") {
  Rng rng(1);
  const auto g = GcaBlock<double>::make(rng, "g", 6, 4, 2, 2, 0.5, 1e-5);
  CHECK(g.alpha() == 0.0);
  CHECK(g.beta() == 0.0);
  const T x({3, 6}, random_matrix(rng, 3, 6));
  const T mem({5, 4}, random_matrix(rng, 5, 4));
  CHECK(g(x, mem).value() == x.value());
}

TEST_CASE("hand-evaluated d = 2 block") {
  auto g = GcaBlock<double>::make(Rng(2), "g", 2, 2, 1, 1, 0.1, 0.0);
  for (auto* lin : {&g.q, &g.k, &g.v, &g.o, &g.mlp.fc1, &g.mlp.fc2}) {
    lin->weight.mutable_value() = M::Identity(2, 2);
    lin->bias.mutable_value().setZero();
  }
  g.gate_attn.mutable_value()(0, 0) = std::atanh(0.5);
  g.gate_mlp.mutable_value()(0, 0) = std::atanh(0.25);
  // One memory row [1, 3]: LN gives [-1, 1], the only attention weight is 1,
  // so CA = [-1, 1]. x1 = [2, 0] + 0.5 [-1, 1] = [1.5, 0.5]; LN(x1) = [1, -1];
  // gelu(1) = 0.8411919906, gelu(-1) = -0.1588080094.
  const auto y = g(T(M{{2.0, 0.0}}), T(M{{1.0, 3.0}})).value();
  CHECK(std::abs(y(0, 0) - (1.5 + 0.25 * 0.8411919906)) < 1e-9);
  CHECK(std::abs(y(0, 1) - (0.5 - 0.25 * 0.1588080094)) < 1e-9);
}

TEST_CASE("GCA block matches a scalar-loop oracle") {
  Rng rng(3);
  auto g = GcaBlock<double>::make(rng, "g", 4, 6, 2, 2, 0.5, 1e-5);
  g.gate_attn.mutable_value()(0, 0) = 0.8;
  g.gate_mlp.mutable_value()(0, 0) = -0.6;
  const M x = random_matrix(rng, 3, 4), mem = random_matrix(rng, 5, 6);
  const auto y = g(T(x), T(mem)).value();
  std::vector<Vec> memory;
  for (Eigen::Index j = 0; j < mem.rows(); ++j) memory.emplace_back(mem.row(j).data(), mem.row(j).data() + 6);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vec xi(x.row(i).data(), x.row(i).data() + 4);
    const Vec ref = gca_ref(g, xi, memory, 1e-5);
    for (int j = 0; j < 4; ++j) CHECK(std::abs(y(i, j) - ref[static_cast<std::size_t>(j)]) < 1e-12);
  }
}

TEST_CASE("empty memory leaves the cross-attention term at zero") {
  Rng rng(4);
  auto g = GcaBlock<double>::make(rng, "g", 4, 6, 2, 2, 0.5, 1e-5);
  g.gate_attn.mutable_value()(0, 0) = 1.0;
  const T x({2, 4}, random_matrix(rng, 2, 4));
  CHECK(g(x, T::zeros({0, 6})).value() == x.value());
  CHECK_THROWS_AS(g(x, T::zeros({2, 5})), DimensionError);
}

TEST_CASE("injected model equals the base model at initialization") {
  const auto cfg = tiny_config();
  const auto base = BaseLM<double>::init(cfg, Rng(5));
  const auto inj = Injector<double>::init(cfg, Rng(6));
  const auto model = attach(base, inj);
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto ids = random_ids(rng, rng.uniform_int(1, cfg.max_positions));
    const T h({3 * cfg.n_queries, cfg.d_compress}, random_matrix(rng, 3 * cfg.n_queries, cfg.d_compress));
    CHECK(model.forward(ids, h).value() == base.forward(ids).value());
  }
  CHECK(&model.detach() == &base);
}

TEST_CASE("attach checks block count and width") {
  auto cfg = tiny_config();
  const auto base = BaseLM<double>::init(cfg, Rng(8));
  auto inj = Injector<double>::init(cfg, Rng(9));
  inj.blocks.pop_back();
  CHECK_THROWS_AS(attach(base, inj), ConfigError);
  cfg.gca_every = 2;
  const auto sparse = Injector<double>::init(cfg, Rng(9));
  CHECK(sparse.blocks.size() == 1);
  CHECK(sparse.block_for_layer(0) != nullptr);
  CHECK(sparse.block_for_layer(1) == nullptr);
}

TEST_CASE("GCA block gradients") {
  Rng rng(10);
  auto g = GcaBlock<double>::make(rng, "g", 4, 6, 2, 2, 0.5, 1e-5);
  g.gate_attn.mutable_value()(0, 0) = 0.4;
  g.gate_mlp.mutable_value()(0, 0) = 0.3;
  auto x = T::parameter({3, 4}, random_matrix(rng, 3, 4));
  auto mem = T::parameter({5, 6}, random_matrix(rng, 5, 6));
  const T w({3, 4}, random_matrix(rng, 3, 4));
  ParamList<double> params;
  g.collect(params, "g");
  std::vector<T> leaves{x, mem};
  for (const auto& [name, t] : params) leaves.push_back(t);
  CHECK(grad_check<double>([&] { return sum(mul(g(x, mem), w)); }, leaves) < 1e-5);
}

TEST_CASE("end-to-end loss gradient of a two-layer injected model") {
  auto cfg = tiny_config();
  cfg.vocab_size = 13;
  cfg.d_model = 4;
  cfg.d_compress = 4;
  const auto base = BaseLM<double>::init(cfg, Rng(11));
  auto inj = Injector<double>::init(cfg, Rng(12));
  for (auto& b : inj.blocks) {
    b.gate_attn.mutable_value()(0, 0) = 0.5;
    b.gate_mlp.mutable_value()(0, 0) = 0.5;
  }
  const auto model = attach(base, inj);
  Rng rng(13);
  const auto ids = random_ids(rng, 6, 13);
  auto h = T::parameter({4, 4}, random_matrix(rng, 4, 4));
  const auto in = std::span<const TokenId>(ids).first(5);
  const auto tg = std::span<const TokenId>(ids).subspan(1);
  std::vector<T> leaves{h};
  for (const auto& [name, t] : inj.parameters()) leaves.push_back(t);
  CHECK(grad_check<double>([&] { return cross_entropy(model.forward(in, h), tg); }, leaves) < 1e-5);
}
