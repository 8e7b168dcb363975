#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "lpgnas/nas/nas.hpp"
#include "unit/graph_fixtures.hpp"
#include "unit/test_support.hpp"

using namespace lpgnas;
using namespace lpgnas::nas;
using supernet::SiteKind;

namespace {

std::vector<Tensor> softmax_values(const std::vector<Tensor>& logits) {
  std::vector<Tensor> out;
  for (const Tensor& l : logits) {
    Tensor p = l;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (Real v : p.data()) mx = std::max(mx, v);
    Real z = 0;
    for (Real& v : p.data()) z += (v = std::exp(v - mx));
    for (Real& v : p.data()) v /= z;
    out.push_back(std::move(p));
  }
  return out;
}

Tensor row(std::vector<Real> v) {
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

bool same(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (values(a[i]) != values(b[i])) return false;
  return true;
}

graph::Graph toy_graph() { return testing::random_graph(30, 40, 5, 3, 11); }

NetworkConfig toy_config(const graph::Graph& g) {
  return {.in_features = g.f, .hidden = 4, .classes = g.c, .blocks = 2, .dropout = 0.5};
}

SearchConfig toy_search(std::size_t epochs, std::size_t arch_start, std::size_t quant_start) {
  SearchConfig c;
  c.epochs = epochs;
  c.arch_start = arch_start;
  c.quant_start = quant_start;
  c.steps = 1;
  c.seed = 5;
  return c;
}

// One-hot probability rows for an encoded choice.
std::vector<Tensor> one_hot(const std::vector<supernet::Site>& sites, const std::vector<int>& idx) {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    Tensor t({1, sites[s].options});
    t[static_cast<std::size_t>(idx[s])] = 1;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("noise_gen: zero scale, endpoint, determinism") {
  const std::vector<std::size_t> options{3, 17, 2};
  for (const Tensor& t : noise_gen(1, 4, 10, 0.0, options))
    for (Real v : t.data()) CHECK(v == 0);
  for (const Tensor& t : noise_gen(1, 10, 10, 1.0, options))
    for (Real v : t.data()) CHECK(v == 0);
  const auto a = noise_gen(9, 3, 10, 1.0, options);
  const auto b = noise_gen(9, 3, 10, 1.0, options);
  CHECK(same(a, b));
  CHECK_FALSE(same(a, noise_gen(9, 4, 10, 1.0, options)));
  REQUIRE(a.size() == 3);
  CHECK(a[1].shape() == ad::Shape{1, 17});

  // Same (seed, i) draws the same Gumbel samples; only the scale
  // alpha * (1 - i/M) differs: 0.5 at i = 5 of 10, 0.75 at i = 5 of 20.
  const auto at10 = noise_gen(2, 5, 10, 1.0, options);
  const auto at20 = noise_gen(2, 5, 20, 1.0, options);
  const auto alpha2 = noise_gen(2, 5, 10, 2.0, options);
  for (std::size_t s = 0; s < options.size(); ++s)
    for (std::size_t i = 0; i < options[s]; ++i) {
      CHECK(at10[s][i] / 0.5 == doctest::Approx(at20[s][i] / 0.75).epsilon(1e-12));
      CHECK(alpha2[s][i] == doctest::Approx(2 * at10[s][i]).epsilon(1e-12));
    }
}

TEST_CASE("noise_gen: samples look like Gumbel(0, 1)") {
  const std::vector<std::size_t> options{20000};
  const Tensor t = noise_gen(3, 0, 10, 1.0, options)[0];
  Real mean = 0;
  for (Real v : t.data()) mean += v;
  mean /= static_cast<Real>(t.size());
  CHECK(mean == doctest::Approx(0.5772156649).epsilon(0.03));  // Euler-Mascheroni
}

TEST_CASE("sample_choices: argmax with lowest-index ties") {
  const std::vector<Tensor> p{row({0.1, 0.7, 0.2}), row({0.25, 0.25, 0.25, 0.25}),
                              row({0.2, 0.4, 0.4})};
  CHECK(sample_choices(p) == std::vector<int>{1, 0, 1});

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor> logits{testing::random_tensor({1, 17}, rng, -3, 3)};
    std::vector<Tensor> shifted = logits;
    for (Real& v : shifted[0].data()) v += 123.25;
    CHECK(sample_choices(softmax_values(logits)) == sample_choices(softmax_values(shifted)));
  }
  CHECK_THROWS_AS(sample_choices(std::vector<Tensor>{Tensor({1, 0})}), ArgumentError);
}

TEST_CASE("qloss: worked example and degenerate cases") {
  CostTables t;
  t.terms.push_back({0, {2, 4}, 0, {1, 2}});
  const std::vector<Tensor> pa{row({0.5, 0.5})}, pq{row({0.5, 0.5})};
  CHECK(qloss_value(pa, pq, t) == 4.5);
  {
    Tape tape;
    std::vector<Var> va{tape.variable(pa[0])}, vq{tape.variable(pq[0])};
    CHECK(qloss(va, vq, t).value().item() == 4.5);
  }

  CostTables z;
  z.terms.push_back({0, {0, 0, 5}, 0, {1, 2}});
  CHECK(qloss_value(std::vector<Tensor>{row({1, 0, 0})}, pq, z) == 0);
  CHECK(qloss_value(std::vector<Tensor>{row({0, 1, 0})}, pq, z) == 0);

  CostTables bad;
  bad.terms.push_back({0, {2, 4, 8}, 0, {1, 2}});
  CHECK_THROWS_AS(qloss_value(pa, pq, bad), ContractError);
  bad.terms[0] = {3, {2, 4}, 0, {1, 2}};
  CHECK_THROWS_AS(qloss_value(pa, pq, bad), ContractError);
  bad.terms[0] = {0, {2, 4}, 0, {1, 2, 3}};
  CHECK_THROWS_AS(qloss_value(pa, pq, bad), ContractError);
  bad.terms[0] = {std::nullopt, {2, 4}, 0, {1, 2}};
  CHECK_THROWS_AS(qloss_value(pa, pq, bad), ContractError);
}

TEST_CASE("cost tables: zero-cost attentions and one-hot size agreement") {
  const NetworkConfig cfg{.in_features = 50, .hidden = 8, .classes = 5, .blocks = 3, .dropout = 0};
  const auto layout = supernet::SiteLayout::build(cfg.blocks);
  const CostTables t = CostTables::build(cfg, layout);
  for (const CostTerm& term : t.terms) {
    for (Real c : term.arch_cost) CHECK(c >= 0);
    for (Real c : term.quant_cost) CHECK(c >= 0);
    if (term.arch_site && layout.arch[*term.arch_site].kind == SiteKind::attention) {
      CHECK(term.arch_cost[0] == 0);  // const
      CHECK(term.arch_cost[1] == 0);  // gcn
    }
  }
  // With one-hot probabilities the regulariser is the exact weight-bit count
  // of that network, so it must agree with model_size.
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> a, q;
    for (const auto& s : layout.arch) a.push_back(static_cast<int>(rng() % s.options));
    for (const auto& s : layout.quant) q.push_back(static_cast<int>(rng() % s.options));
    const auto choice = layout.decode(a, q);
    const Real bits = qloss_value(one_hot(layout.arch, a), one_hot(layout.quant, q), t);
    CHECK(static_cast<std::size_t>(std::ceil(bits / 8)) == supernet::model_size(cfg, choice));
  }
}

TEST_CASE("qloss: gradient w.r.t. controller logits matches finite differences") {
  const NetworkConfig cfg{.in_features = 6, .hidden = 3, .classes = 2, .blocks = 2, .dropout = 0};
  const auto layout = supernet::SiteLayout::build(cfg.blocks);
  const CostTables t = CostTables::build(cfg, layout);
  std::mt19937_64 rng(12);
  std::vector<Tensor> inputs;
  for (const auto& s : layout.arch) inputs.push_back(testing::random_tensor({1, s.options}, rng));
  for (const auto& s : layout.quant) inputs.push_back(testing::random_tensor({1, s.options}, rng));
  const std::size_t na = layout.arch.size();
  auto fn = [&](Tape&, const std::vector<Var>& leaves) {
    std::vector<Var> pa, pq;
    for (std::size_t i = 0; i < leaves.size(); ++i)
      (i < na ? pa : pq).push_back(ad::softmax_rows(leaves[i]));
    return qloss(pa, pq, t);
  };
  const auto check = testing::check_gradients(fn, inputs);
  CHECK(check.max_rel_error < 1e-5);
}

TEST_CASE("qloss: monotone in each coordinate") {
  const NetworkConfig cfg{.in_features = 20, .hidden = 4, .classes = 3, .blocks = 2, .dropout = 0};
  const auto layout = supernet::SiteLayout::build(cfg.blocks);
  const CostTables t = CostTables::build(cfg, layout);
  std::mt19937_64 rng(21);
  std::vector<Tensor> logits_a, logits_q;
  for (const auto& s : layout.arch) logits_a.push_back(testing::random_tensor({1, s.options}, rng));
  for (const auto& s : layout.quant) logits_q.push_back(testing::random_tensor({1, s.options}, rng));
  const auto pa = softmax_values(logits_a);
  const auto pq = softmax_values(logits_q);
  const Real base = qloss_value(pa, pq, t);
  const auto& space = quant::quant_search_space();
  // Moving mass from a wider to a narrower weight scheme lowers the loss at
  // every site with weights; aggregation sites carry none.
  for (std::size_t s = 0; s < pq.size(); ++s) {
    const bool weighted = layout.quant[s].kind != SiteKind::q_aggregation;
    auto moved = pq;
    const std::size_t hi = 16, lo = 0;  // fix4.12 (16 bits) -> binary (1 bit)
    REQUIRE(space[hi].weight.total_bits() > space[lo].weight.total_bits());
    const Real eps = moved[s][hi] / 2;
    moved[s][hi] -= eps;
    moved[s][lo] += eps;
    if (weighted) CHECK(qloss_value(pa, moved, t) < base);
    else CHECK(qloss_value(pa, moved, t) == base);
  }
  // Likewise from expansion 8 to expansion 1.
  for (std::size_t k = 0; k < layout.blocks; ++k) {
    const std::size_t s = layout.arch_site(k, SiteKind::expansion);
    auto moved = pa;
    const Real eps = moved[s][3] / 2;
    moved[s][3] -= eps;
    moved[s][0] += eps;
    CHECK(qloss_value(moved, pq, t) < base);
  }
}

TEST_CASE("Adam: closed-form first step, zero gradient, untouched parameters") {
  Parameter p("p", Tensor::scalar(2.0));
  Adam opt(0.005);
  std::vector<Parameter*> ps{&p};
  p.grad[0] = 1;
  p.touched = true;
  opt.step(ps, true);
  CHECK(p.value[0] == doctest::Approx(2.0 - 0.005 / (1 + 1e-8)).epsilon(1e-15));
  for (int i = 0; i < 5; ++i) opt.step(ps, true);  // g = 1 repeated keeps steps at -lr
  CHECK(p.value[0] == doctest::Approx(2.0 - 6 * 0.005).epsilon(1e-9));

  Parameter z("z", Tensor({2, 2}, {1, 2, 3, 4}));
  std::vector<Parameter*> zs{&z};
  z.touched = true;
  Adam fresh(0.1);
  fresh.step(zs, true);
  CHECK(values(z.value) == std::vector<Real>{1, 2, 3, 4});

  Parameter u("u", Tensor::scalar(1.0));
  u.grad[0] = 5;
  u.touched = false;
  std::vector<Parameter*> us{&u};
  fresh.step(us, true);
  CHECK(u.value[0] == 1.0);
  fresh.step(us, false);
  CHECK(u.value[0] != 1.0);
}

TEST_CASE("controller: probabilities are distributions, init is seeded") {
  Controller c("quant", {17, 17, 2}, 3);
  Controller d("quant", {17, 17, 2}, 3);
  Controller e("quant", {17, 17, 2}, 4);
  CHECK(same(c.snapshot(), d.snapshot()));
  CHECK_FALSE(same(c.snapshot(), e.snapshot()));
  for (const Tensor& p : softmax_values(c.logit_values())) {
    Real total = 0;
    for (Real v : p.data()) {
      CHECK(v >= 0);
      total += v;
    }
    CHECK(std::abs(total - 1) < 1e-9);
  }
  Tape tape;
  const auto logits = c.logits(tape);
  const auto values = c.logit_values();
  for (std::size_t s = 0; s < logits.size(); ++s)
    for (std::size_t i = 0; i < values[s].size(); ++i)
      CHECK(logits[s].value()[i] == doctest::Approx(values[s][i]).epsilon(1e-14));
}

TEST_CASE("search config: JSON round trip and validation") {
  SearchConfig c;
  c.epochs = 7;
  c.arch_start = 5;
  c.quant_start = 2;
  c.beta = 0.25;
  c.qloss_to_arch = true;
  c.seed = 99;
  CHECK(search_config_from_json(to_json(c)) == c);
  CHECK(search_config_from_json(nlohmann::json{{"beta", 0.0}}).beta == 0);
  CHECK_THROWS_AS(search_config_from_json(nlohmann::json{{"betta", 1}}), SchemaError);
  CHECK_THROWS_AS(search_config_from_json(nlohmann::json{{"beta", "big"}}), SchemaError);
  CHECK_THROWS_AS(search_config_from_json(nlohmann::json{{"beta", -1.0}}), ArgumentError);
  CHECK_THROWS_AS(search_config_from_json(nlohmann::json{{"steps", 0}}), ArgumentError);
  CHECK_THROWS_AS(search_config_from_json(nlohmann::json{{"epochs", 10}, {"arch_start", 11}}),
                  ArgumentError);
}

TEST_CASE("check_finite: non-finite values abort with state") {
  CHECK_NOTHROW(check_finite(1.0, "x", {}));
  try {
    check_finite(std::nan(""), "validation loss", {{"epoch", 3}});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    CHECK(what.find("validation loss") != std::string::npos);
    CHECK(what.find("\"epoch\":3") != std::string::npos);
  }
}

TEST_CASE("search: schedule invariant with M = 60, M_a = 50, M_q = 20") {
  const auto g = toy_graph();
  Searcher s(g, toy_config(g), toy_search(60, 50, 20));
  const auto arch0 = s.arch_controller().snapshot();
  const auto quant0 = s.quant_controller().snapshot();
  for (std::size_t epoch = 0; epoch < 60; ++epoch) {
    const EpochLog log = s.run_epoch(epoch);
    CHECK(log.arch_updated == (epoch > 50));
    CHECK(log.quant_updated == (epoch > 20));
    if (epoch <= 50) CHECK(same(s.arch_controller().snapshot(), arch0));
    else CHECK_FALSE(same(s.arch_controller().snapshot(), arch0));
    if (epoch <= 20) CHECK(same(s.quant_controller().snapshot(), quant0));
    else CHECK_FALSE(same(s.quant_controller().snapshot(), quant0));
  }
}

TEST_CASE("search: non-sampled candidates are untouched every epoch") {
  const auto g = toy_graph();
  const auto net = toy_config(g);
  Searcher s(g, net, toy_search(12, 4, 2));
  s.supernet().materialise_all();
  for (std::size_t epoch = 0; epoch < 12; ++epoch) {
    std::map<std::string, std::vector<Real>> before;
    for (Parameter* p : s.supernet().parameters()) before[p->name] = values(p->value);
    const EpochLog log = s.run_epoch(epoch);
    const auto path = supernet::path_parameters(net, log.choice);
    const std::set<std::string> on_path(path.begin(), path.end());
    std::size_t changed = 0;
    for (Parameter* p : s.supernet().parameters()) {
      const bool differs = before.at(p->name) != values(p->value);
      if (!on_path.count(p->name)) CHECK_MESSAGE(!differs, p->name);
      changed += differs;
    }
    CHECK(changed > 0);
    CHECK(s.supernet().parameters().size() == before.size());
  }
}

TEST_CASE("search: controllers frozen when M_a = M_q = M") {
  const auto g = toy_graph();
  const SearchConfig cfg = toy_search(8, 8, 8);
  Searcher s(g, toy_config(g), cfg);
  const auto layout = supernet::SiteLayout::build(2);
  const auto expected = layout.decode(sample_choices(softmax_values(s.arch_controller().logit_values())),
                                      sample_choices(softmax_values(s.quant_controller().logit_values())));
  const auto a0 = s.arch_controller().snapshot();
  const auto q0 = s.quant_controller().snapshot();
  for (std::size_t e = 0; e < cfg.epochs; ++e) s.run_epoch(e);
  CHECK(same(s.arch_controller().snapshot(), a0));
  CHECK(same(s.quant_controller().snapshot(), q0));
  CHECK(s.final_choice() == expected);
  CHECK(search(g, toy_config(g), cfg).choice == expected);
}

TEST_CASE("search: beta = 0 leaves only the validation-loss gradient") {
  const auto g = toy_graph();
  SearchConfig zero = toy_search(10, 3, 3);
  zero.beta = 0;
  SearchConfig unscaled = toy_search(10, 3, 3);
  unscaled.qloss_scale = 0;
  SearchConfig regular = toy_search(10, 3, 3);
  Searcher a(g, toy_config(g), zero), b(g, toy_config(g), unscaled), c(g, toy_config(g), regular);
  for (std::size_t e = 0; e < 10; ++e) {
    a.run_epoch(e);
    b.run_epoch(e);
    c.run_epoch(e);
  }
  CHECK(same(a.quant_controller().snapshot(), b.quant_controller().snapshot()));
  CHECK(same(a.arch_controller().snapshot(), b.arch_controller().snapshot()));
  CHECK_FALSE(same(a.quant_controller().snapshot(), c.quant_controller().snapshot()));
}

TEST_CASE("search: final choice ignores per-site logit shifts") {
  const auto g = toy_graph();
  Searcher s(g, toy_config(g), toy_search(6, 2, 2));
  for (std::size_t e = 0; e < 6; ++e) s.run_epoch(e);
  const auto before = s.final_choice();
  auto params = s.arch_controller().parameters();
  for (std::size_t i = 2; i < params.size(); i += 3)  // every site's bias
    for (Real& v : params[i]->value.data()) v += static_cast<Real>(i) * 0.75;
  auto qparams = s.quant_controller().parameters();
  for (std::size_t i = 2; i < qparams.size(); i += 3)
    for (Real& v : qparams[i]->value.data()) v -= 3.5;
  CHECK(s.final_choice() == before);
}

TEST_CASE("search: reproducible per seed, log has one line per epoch") {
  const auto g = toy_graph();
  const SearchConfig cfg = toy_search(15, 6, 3);
  std::ostringstream log1, log2;
  const auto r1 = search(g, toy_config(g), cfg, &log1);
  const auto r2 = search(g, toy_config(g), cfg, &log2);
  CHECK(r1.choice == r2.choice);
  CHECK(log1.str() == log2.str());
  REQUIRE(r1.log.size() == cfg.epochs);
  std::istringstream lines(log1.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("epoch").get<std::size_t>() == count);
    CHECK(j.at("expected_size_bytes").get<Real>() > 0);
    CHECK(j.contains("choice"));
    ++count;
  }
  CHECK(count == cfg.epochs);
  SearchConfig other = cfg;
  other.seed = 6;
  CHECK(search(g, toy_config(g), other).log.front().val_loss != r1.log.front().val_loss);
}

TEST_CASE("search: warm-up samples are uniform per site") {
  const auto g = toy_graph();
  Searcher s(g, toy_config(g), toy_search(60, 60, 60));
  std::map<int, int> counts;
  const std::size_t att = s.supernet().layout().arch_site(0, SiteKind::attention);
  for (std::size_t e = 0; e < 60; ++e) ++counts[s.run_epoch(e).arch[att]];
  CHECK(counts.size() >= 5);  // 7 options, 60 draws
}

TEST_CASE("search: rejects graphs without train or validation nodes") {
  auto g = toy_graph();
  g.split.val.clear();
  CHECK_THROWS_AS(Searcher(g, toy_config(g), toy_search(2, 1, 1)), ArgumentError);
}
