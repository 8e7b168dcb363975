#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "lpgnas/supernet/supernet.hpp"
#include "unit/graph_fixtures.hpp"
#include "unit/test_support.hpp"

using namespace lpgnas;
using namespace lpgnas::supernet;
using quant::QuantPair;
using quant::QuantScheme;

namespace {

NetworkChoice make_choice(std::size_t blocks, ArchChoice arch, QuantPair q, bool routes_on) {
  NetworkChoice c;
  for (std::size_t k = 0; k < blocks; ++k)
    c.blocks.push_back({arch, BlockQuant::uniform(q), std::vector<std::uint8_t>(k + 1, routes_on)});
  return c;
}

NetworkChoice random_choice(const SiteLayout& layout, std::mt19937_64& rng) {
  std::vector<int> a, q;
  for (const Site& s : layout.arch) a.push_back(static_cast<int>(rng() % s.options));
  for (const Site& s : layout.quant) q.push_back(static_cast<int>(rng() % s.options));
  return layout.decode(a, q);
}

NetworkConfig small_config(const graph::Graph& g, std::size_t blocks, std::size_t hidden = 3) {
  return {.in_features = g.f, .hidden = hidden, .classes = g.c, .blocks = blocks, .dropout = 0};
}

Real projected_loss(Supernet& net, const graph::Graph& g, const NetworkChoice& choice) {
  ad::Tape tape;
  Var logits = net.forward(tape, g, choice);
  return testing::project(tape, logits, 77).value().item();
}

// Norm-wise relative error between backprop and central differences over the
// concatenated gradient of every parameter on the executed path.
Real network_gradient_error(Supernet& net, const graph::Graph& g, const NetworkChoice& choice) {
  for (ad::Parameter* p : net.parameters()) p->zero_grad();
  {
    ad::Tape tape;
    Var logits = net.forward(tape, g, choice);
    tape.backward(testing::project(tape, logits, 77));
  }
  std::vector<Real> analytic, numeric;
  const Real h = 1e-5;
  for (const std::string& name : net.path_parameters(choice)) {
    ad::Parameter& p = net.param(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real saved = p.value[i];
      p.value[i] = saved + h;
      const Real up = projected_loss(net, g, choice);
      p.value[i] = saved - h;
      const Real down = projected_loss(net, g, choice);
      p.value[i] = saved;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(p.grad[i]);
    }
  }
  const std::size_t n = analytic.size();
  return testing::relative_error(Tensor({n}, analytic), Tensor({n}, numeric));
}

const QuantPair kFloat = QuantPair::float_pair();

}  // namespace

TEST_CASE("architecture space and site layout") {
  CHECK(arch_space_size() == 672);
  SiteLayout l2 = SiteLayout::build(2);
  CHECK(l2.arch.size() == 2 * 4 + 3);
  CHECK(l2.quant.size() == 8);
  std::size_t routes = 0;
  for (const Site& s : l2.arch) routes += s.kind == SiteKind::route;
  CHECK(routes == 3);
  std::mt19937_64 rng(1);
  SiteLayout l3 = SiteLayout::build(3);
  for (int i = 0; i < 50; ++i) {
    NetworkChoice c = random_choice(l3, rng);
    CHECK(l3.decode(l3.encode_arch(c), l3.encode_quant(c)) == c);
    CHECK(choice_from_json(to_json(c)) == c);
  }
  CHECK_THROWS_AS(SiteLayout::build(0), ArgumentError);
}

TEST_CASE("const attention on a two-node graph averages neighbours") {
  graph::RawDataset d = testing::random_dataset(2, 0, 2, 2, 3);
  graph::Graph g = graph::preprocess(d, {.row_normalise = false});
  REQUIRE(g.num_edges() == 4);
  Supernet net({.in_features = 2, .hidden = 2, .classes = 2, .blocks = 1, .dropout = 0}, 1);
  net.param("block0.fc1.e1").value = Tensor({2, 2}, {1, 0, 0, 1});
  net.param("block0.fc2.e1").value = Tensor({2, 2}, {1, 0, 0, 1});
  BlockChoice b{{Attention::constant, ActivationKind::none, Reduce::sum, 1},
                BlockQuant::uniform(kFloat), {0}};
  ad::Tape tape;
  Var h = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Tensor out = net.block_forward(tape, g, h, 0, b).value();
  CHECK(out == Tensor({2, 2}, {2, 3, 2, 3}));
  Tensor alpha = ad::segment_softmax(tape.constant(Tensor({4, 1}, 1.0)), g.by_dst).value();
  for (Real a : alpha.data()) CHECK(a == 0.5);
}

TEST_CASE("gcn raw coefficient uses both degrees") {
  graph::RawDataset d = testing::random_dataset(12, 0, 2, 2, 3);
  d.edges.clear();
  d.edges.emplace_back(0, 1);
  for (std::size_t v = 2; v < 4; ++v) d.edges.emplace_back(0, v);
  for (std::size_t v = 4; v < 12; ++v) d.edges.emplace_back(1, v);
  graph::Graph g = graph::preprocess(d, {.row_normalise = false});
  CHECK(g.degree[0] == 4);
  CHECK(g.degree[1] == 10);
  d.edges.pop_back();
  g = graph::preprocess(d, {.row_normalise = false});
  REQUIRE(g.degree[1] == 9);
  Supernet net({.in_features = 2, .hidden = 2, .classes = 2, .blocks = 1}, 1);
  ad::Tape tape;
  Var h = tape.constant(Tensor({12, 2}, 0.5));
  Tensor s = net.attention_scores(tape, g, h, 0, Attention::gcn, QuantScheme::none()).value();
  bool found = false;
  for (std::size_t e = 0; e < g.num_edges(); ++e)
    if (g.edge_dst[e] == 0 && g.edge_src[e] == 1) {
      CHECK(s[e] == doctest::Approx(1.0 / 6).epsilon(1e-15));
      found = true;
    }
  CHECK(found);
}

TEST_CASE("sym-gat coefficients") {
  graph::Graph g = testing::random_graph(4, 4, 3, 2, 8);
  std::mt19937_64 rng(2);
  ad::Tape tape;
  Tensor raw = testing::random_tensor({g.num_edges(), 1}, rng);
  Tensor s = sym_gat_coefficients(tape.constant(raw), g.reverse_edge).value();
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    std::size_t rev = SIZE_MAX;
    for (std::size_t r = 0; r < g.num_edges(); ++r)
      if (g.edge_src[r] == g.edge_dst[e] && g.edge_dst[r] == g.edge_src[e]) rev = r;
    REQUIRE(rev != SIZE_MAX);
    CHECK(s[e] == raw[e] + raw[rev]);
    if (g.edge_src[e] == g.edge_dst[e]) CHECK(s[e] == 2 * raw[e]);
  }
  // identical node states and shared vectors: a_ij = 2 a_gat_ij
  Supernet net({.in_features = 3, .hidden = 3, .classes = 2, .blocks = 1}, 4);
  net.param("block0.sym-gat.l").value = net.param("block0.gat.l").value;
  net.param("block0.sym-gat.r").value = net.param("block0.gat.r").value;
  Var h = tape.constant(Tensor({4, 3}, {0.3, -0.2, 0.5, 0.3, -0.2, 0.5, 0.3, -0.2, 0.5, 0.3, -0.2, 0.5}));
  Tensor gat = net.attention_scores(tape, g, h, 0, Attention::gat, QuantScheme::none()).value();
  Tensor sym = net.attention_scores(tape, g, h, 0, Attention::sym_gat, QuantScheme::none()).value();
  for (std::size_t e = 0; e < g.num_edges(); ++e) CHECK(sym[e] == 2 * gat[e]);
  CHECK_THROWS_AS(sym_gat_coefficients(tape.constant(raw), std::vector<std::size_t>(2, 0)),
                  StructuralError);
}

TEST_CASE("block gradients match finite differences for every candidate") {
  graph::Graph g = testing::random_graph(6, 5, 3, 2, 4);
  const NetworkConfig cfg = small_config(g, 1);
  for (Attention att : kAttentions)
    for (ActivationKind act : kActivations)
      for (Reduce aggr : kAggregations) {
        Supernet net(cfg, 11);
        NetworkChoice c = make_choice(1, {att, act, aggr, 2}, kFloat, true);
        INFO(c.blocks[0].arch.name());
        CHECK(network_gradient_error(net, g, c) < 1e-4);
      }
}

TEST_CASE("two-block network gradients with the router") {
  graph::Graph g = testing::random_graph(7, 6, 4, 3, 5);
  std::mt19937_64 rng(3);
  const SiteLayout layout = SiteLayout::build(2);
  for (int trial = 0; trial < 12; ++trial) {
    Supernet net(small_config(g, 2), 100 + trial);
    NetworkChoice c = random_choice(layout, rng);
    for (auto& b : c.blocks) {
      b.quant = BlockQuant::uniform(kFloat);
      std::fill(b.route.begin(), b.route.end(), trial % 3 != 0);
    }
    INFO(to_json(c).dump());
    CHECK(network_gradient_error(net, g, c) < 1e-3);
  }
}

TEST_CASE("input gradient of a block matches finite differences") {
  graph::Graph g = testing::random_graph(5, 4, 3, 2, 6);
  Supernet net(small_config(g, 1), 2);
  for (Attention att : kAttentions) {
    BlockChoice b{{att, ActivationKind::elu, Reduce::mean, 1}, BlockQuant::uniform(kFloat), {1}};
    std::mt19937_64 rng(9);
    auto fn = [&](ad::Tape& tape, const std::vector<Var>& in) {
      return testing::project(tape, net.block_forward(tape, g, in[0], 0, b), 5);
    };
    auto r = testing::check_gradients(fn, {testing::random_tensor({5, 3}, rng)});
    INFO(attention_name(att));
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("float forward equals 16-bit quantised forward on grid-aligned values") {
  graph::RawDataset d = testing::random_dataset(2, 0, 2, 2, 3);
  d.features.values = {0.25, 0.5, 0.75, -0.5};
  graph::Graph g = graph::preprocess(d, {.row_normalise = false});
  Supernet fl({.in_features = 2, .hidden = 2, .classes = 2, .blocks = 1, .dropout = 0}, 1);
  std::mt19937_64 rng(4);
  for (const char* name :
       {"input.w", "block0.fc1.e1", "block0.fc2.e1", "route0.0", "classifier.w"}) {
    Tensor& v = fl.param(name).value;
    for (Real& x : v.data()) x = static_cast<Real>(static_cast<int>(rng() % 3) - 1);
  }
  const QuantPair q16 = quant::quant_search_space()[16];
  REQUIRE(q16.weight == QuantScheme::fixed(4, 12));
  REQUIRE(q16.activation == QuantScheme::fixed(8, 8));
  for (bool route : {false, true}) {
    ArchChoice a{Attention::constant, ActivationKind::relu, Reduce::sum, 1};
    ad::Tape t1, t2;
    Tensor ref = fl.forward(t1, g, make_choice(1, a, kFloat, route)).value();
    Tensor quantised = fl.forward(t2, g, make_choice(1, a, q16, route)).value();
    CHECK(ref == quantised);
  }
}

TEST_CASE("gates of value one leave the forward pass unchanged") {
  graph::Graph g = testing::random_graph(6, 5, 3, 2, 4);
  Supernet net(small_config(g, 2), 8);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    NetworkChoice c = random_choice(net.layout(), rng);
    ad::Tape t1, t2;
    Tensor plain = net.forward(t1, g, c).value();
    ChoiceGates gates;
    for (std::size_t i = 0; i < net.layout().arch.size(); ++i) {
      const Site& s = net.layout().arch[i];
      const bool off = s.kind == SiteKind::route && !c.blocks[s.block].route[s.source];
      gates.arch.push_back(t2.variable(Tensor::scalar(off ? 0.0 : 1.0)));
    }
    for (std::size_t i = 0; i < net.layout().quant.size(); ++i)
      gates.quant.push_back(t2.variable(Tensor::scalar(1.0)));
    Var logits = net.forward(t2, g, c, {.gates = &gates});
    CHECK(logits.value() == plain);
    t2.backward(ad::sum(logits));
    for (std::size_t i = 0; i < gates.arch.size(); ++i) {
      const Site& s = net.layout().arch[i];
      if (s.kind == SiteKind::route) CHECK(t2.grad(gates.arch[i]) != nullptr);
    }
  }
}

TEST_CASE("single path: only executed parameters receive gradients") {
  graph::Graph g = testing::random_graph(6, 5, 3, 2, 4);
  Supernet net(small_config(g, 2), 8);
  net.materialise_all();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    NetworkChoice c = random_choice(net.layout(), rng);
    for (ad::Parameter* p : net.parameters()) p->zero_grad();
    ad::Tape tape;
    std::mt19937_64 drop(1);
    Var logits = net.forward(tape, g, c, {.train = true, .rng = &drop});
    tape.backward(testing::project(tape, logits, 3));
    std::set<std::string> path;
    for (const auto& n : net.path_parameters(c)) path.insert(n);
    for (ad::Parameter* p : net.parameters()) {
      INFO(p->name);
      CHECK(p->touched == (path.count(p->name) == 1));
      if (!p->touched)
        for (Real x : p->grad.data()) CHECK(x == 0);
    }
  }
}

TEST_CASE("network composition") {
  graph::Graph g = testing::random_graph(6, 5, 3, 2, 4);
  Supernet net(small_config(g, 2), 13);
  ArchChoice a{Attention::gat, ActivationKind::tanh, Reduce::mean, 2};
  NetworkChoice c = make_choice(2, a, quant::quant_search_space()[10], false);
  ad::Tape t1, t2;
  Tensor logits = net.forward(t1, g, c).value();
  CHECK(logits.rows() == g.n);
  CHECK(logits.cols() == g.c);
  // route all-off is a plain sequential stack
  const auto& q = c.blocks[0].quant.linear;
  Var h = quant::quantise(ad::sparse_matmul(g.features, quant::quantise(t2.parameter(net.param("input.w")), q.weight)), q.activation);
  h = net.block_forward(t2, g, h, 0, c.blocks[0]);
  h = net.block_forward(t2, g, h, 1, c.blocks[1]);
  h = quant::quantise(h, q.activation);
  Var manual = ad::matmul(h, quant::quantise(t2.parameter(net.param("classifier.w")), q.weight));
  CHECK(manual.value() == logits);

  ad::Tape t3;
  Var bad = t3.constant(Tensor({6, 4}));
  CHECK_THROWS_AS(net.block_forward(t3, g, bad, 0, c.blocks[0]), DimensionError);
}

TEST_CASE("model size accounting") {
  NetworkConfig cfg{.in_features = 10, .hidden = 4, .classes = 3, .blocks = 2};
  ArchChoice a{Attention::gat, ActivationKind::elu, Reduce::sum, 1};
  const auto& space = quant::quant_search_space();
  NetworkChoice fl = make_choice(2, a, kFloat, true);
  NetworkChoice w8 = make_choice(2, a, space[10], true);  // fix4.4 weights
  NetworkChoice w4 = make_choice(2, a, space[6], true);   // fix2.2 weights
  NetworkChoice t2 = make_choice(2, a, space[2], true);   // ternary weights
  // oracle: count by hand
  const std::size_t params = 10 * 4 + 2 * (4 * 4 + 4 * 4 + 2 * 4) + 3 * 4 * 4 + 4 * 3;
  CHECK(model_size(cfg, fl) == params * 4);
  CHECK(model_size(cfg, w8) == params);
  CHECK(model_size(cfg, w4) * 2 == params);
  CHECK(model_size(cfg, t2) == params * 2 / 8);
  CHECK(model_size(cfg, fl) == 4 * model_size(cfg, w8));
  CHECK(model_size(cfg, fl) == 8 * model_size(cfg, w4));
  // mixed: one fix4.8 tensor of 10 params is 15 bytes
  NetworkConfig one{.in_features = 10, .hidden = 1, .classes = 1, .blocks = 1};
  NetworkChoice m = make_choice(1, {Attention::constant, ActivationKind::none, Reduce::sum, 1},
                                space[13], false);
  CHECK(model_size(one, m) == (10 * 12 + 2 * 12 + 12 + 7) / 8);
  // independent of the input graph: the function does not take one
  graph::Graph g = testing::random_graph(6, 5, 10, 3, 4);
  Supernet net(cfg, 1);
  std::size_t counted = 0;
  for (const auto& name : net.path_parameters(w8)) counted += net.param(name).size();
  CHECK(counted == params);
}

TEST_CASE("buffer size equals the instrumented forward pass") {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    graph::Graph g = testing::random_graph(9, 8, 5, 3, seed);
    for (std::size_t blocks : {1, 2, 3}) {
      Supernet net(small_config(g, blocks, 4), seed);
      for (int trial = 0; trial < 5; ++trial) {
        NetworkChoice c = random_choice(net.layout(), rng);
        ActivationRecorder rec;
        ad::Tape tape;
        net.forward(tape, g, c, {.recorder = &rec});
        std::size_t bits = 0;
        for (const auto& r : rec) bits += r.elements * static_cast<std::size_t>(r.bits);
        CHECK(buffer_size(net.config(), c, g.n, g.num_edges()) == (bits + 7) / 8);
      }
    }
  }
}

TEST_CASE("buffer size examples") {
  graph::Graph g = testing::random_graph(100, 50, 5, 3, 2);
  Supernet net(small_config(g, 1, 16), 1);
  const auto& space = quant::quant_search_space();
  NetworkChoice c = make_choice(1, {Attention::gcn, ActivationKind::relu, Reduce::sum, 1},
                                space[10], false);
  ActivationRecorder rec;
  ad::Tape tape;
  net.forward(tape, g, c, {.recorder = &rec});
  for (const auto& r : rec)
    if (r.site == "block0.linear" || r.site == "block0.aggregate")
      CHECK(r.elements * static_cast<std::size_t>(r.bits) / 8 == 1600);
  // halving activation bits halves everything but the float logits
  NetworkChoice wide = make_choice(1, {Attention::gcn, ActivationKind::relu, Reduce::sum, 1},
                                   space[11], false);  // fix4.8 activations
  NetworkChoice narrow = make_choice(1, {Attention::gcn, ActivationKind::relu, Reduce::sum, 1},
                                     space[3], false);  // ternary/fix4.4
  const std::size_t logits = g.n * g.c * 4;
  const std::size_t b16 = buffer_size(net.config(), make_choice(1, c.blocks[0].arch, space[12], false), g.n, g.num_edges());
  const std::size_t b8 = buffer_size(net.config(), c, g.n, g.num_edges());
  CHECK(b16 - logits == 2 * (b8 - logits));
  CHECK(buffer_size(net.config(), wide, g.n, g.num_edges()) >
        buffer_size(net.config(), narrow, g.n, g.num_edges()));
  // linear in n and E for fixed widths
  const std::size_t b1 = buffer_size(net.config(), c, 100, 300);
  const std::size_t b2 = buffer_size(net.config(), c, 200, 600);
  CHECK(b2 == 2 * b1);
}

TEST_CASE("checkpoint round trip") {
  graph::Graph g = testing::random_graph(6, 5, 3, 2, 4);
  Supernet net(small_config(g, 2), 21);
  std::mt19937_64 rng(8);
  NetworkChoice c = random_choice(net.layout(), rng);
  for (const auto& name : net.path_parameters(c))
    for (Real& x : net.param(name).value.data()) x += 1e-3 * std::sin(x * 1e5);
  nlohmann::json j = net.checkpoint(c);
  auto [back, choice] = Supernet::from_checkpoint(nlohmann::json::parse(j.dump()));
  CHECK(choice == c);
  CHECK(back.config() == net.config());
  for (const auto& name : net.path_parameters(c)) CHECK(back.param(name).value == net.param(name).value);
  ad::Tape t1, t2;
  CHECK(back.forward(t1, g, choice).value() == net.forward(t2, g, c).value());
  nlohmann::json broken = j;
  broken["params"]["input.w"]["shape"] = {1, 1};
  CHECK_THROWS_AS(Supernet::from_checkpoint(broken), SchemaError);
}

TEST_CASE("initialisation is deterministic per name and seed") {
  NetworkConfig cfg{.in_features = 5, .hidden = 4, .classes = 2, .blocks = 2};
  Supernet a(cfg, 3), b(cfg, 3), c(cfg, 4);
  b.param("block1.gat.l");  // creation order does not matter
  CHECK(a.param("input.w").value == b.param("input.w").value);
  CHECK(a.param("block1.gat.l").value == b.param("block1.gat.l").value);
  CHECK(!(a.param("input.w").value == c.param("input.w").value));
  CHECK(a.param("block0.cos.1").value.shape() == ad::Shape{1, 4});
  CHECK(a.param("block0.fc1.e8").value.shape() == ad::Shape{4, 32});
}
