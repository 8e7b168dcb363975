#include "lpgnas/nas/nas.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

namespace lpgnas::nas {

using json = nlohmann::json;
using supernet::SiteKind;

// --- config --------------------------------------------------------------

void SearchConfig::validate() const {
  if (epochs == 0) throw ArgumentError("search needs at least one epoch");
  if (arch_start > epochs || quant_start > epochs)
    throw ArgumentError("controller start epochs must not exceed the epoch count");
  if (steps == 0) throw ArgumentError("steps per epoch must be at least 1");
  if (beta < 0) throw ArgumentError("beta must be nonnegative");
  if (noise < 0) throw ArgumentError("noise scale must be nonnegative");
  if (!(lr > 0)) throw ArgumentError("learning rate must be positive");
  if (weight_decay < 0 || qloss_scale < 0) throw ArgumentError("negative regulariser setting");
}

json to_json(const SearchConfig& c) {
  return {{"epochs", c.epochs},         {"arch_start", c.arch_start},
          {"quant_start", c.quant_start}, {"steps", c.steps},
          {"noise", c.noise},           {"beta", c.beta},
          {"lr", c.lr},                 {"weight_decay", c.weight_decay},
          {"qloss_scale", c.qloss_scale}, {"qloss_to_arch", c.qloss_to_arch},
          {"seed", c.seed}};
}

SearchConfig search_config_from_json(const json& j, SearchConfig c) {
  if (!j.is_object()) throw SchemaError("search config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "arch_start") c.arch_start = value.get<std::size_t>();
      else if (key == "quant_start") c.quant_start = value.get<std::size_t>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "noise") c.noise = value.get<Real>();
      else if (key == "beta") c.beta = value.get<Real>();
      else if (key == "lr") c.lr = value.get<Real>();
      else if (key == "weight_decay") c.weight_decay = value.get<Real>();
      else if (key == "qloss_scale") c.qloss_scale = value.get<Real>();
      else if (key == "qloss_to_arch") c.qloss_to_arch = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw SchemaError("unknown search config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad search config value: ") + e.what());
  }
  c.validate();
  return c;
}

// --- Adam ----------------------------------------------------------------

void Adam::step(std::span<Parameter* const> params, bool only_touched) {
  for (Parameter* p : params) {
    if (only_touched && !p->touched) continue;
    State& s = state_[p];
    if (s.m.size() != p->value.size()) {
      s.m = Tensor::zeros_like(p->value);
      s.v = Tensor::zeros_like(p->value);
    }
    ++s.t;
    const Real c1 = 1 - std::pow(beta1_, static_cast<Real>(s.t));
    const Real c2 = 1 - std::pow(beta2_, static_cast<Real>(s.t));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real g = p->grad[i] + weight_decay_ * p->value[i];
      s.m[i] = beta1_ * s.m[i] + (1 - beta1_) * g;
      s.v[i] = beta2_ * s.v[i] + (1 - beta2_) * g * g;
      p->value[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
  }
}

// --- controllers ---------------------------------------------------------

Controller::Controller(std::string prefix, std::vector<std::size_t> options, std::uint64_t seed)
    : options_(std::move(options)) {
  sites_.reserve(options_.size());
  for (std::size_t s = 0; s < options_.size(); ++s) {
    const std::string name = prefix + "." + std::to_string(s);
    std::mt19937_64 rng(mix_seed(seed, fnv1a(name)));
    Tensor emb({1, kEmbeddingDim});
    for (Real& x : emb.data()) {
      Real u1 = uniform01(rng);
      while (u1 <= 0) u1 = uniform01(rng);
      x = std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * uniform01(rng));
    }
    const Real bound = 1 / std::sqrt(static_cast<Real>(kEmbeddingDim));
    Tensor head({kEmbeddingDim, options_[s]});
    for (Real& x : head.data()) x = (2 * uniform01(rng) - 1) * bound;
    Tensor bias({1, options_[s]});
    for (Real& x : bias.data()) x = (2 * uniform01(rng) - 1) * bound;
    sites_.push_back({Parameter(name + ".embedding", std::move(emb)),
                      Parameter(name + ".head", std::move(head)),
                      Parameter(name + ".bias", std::move(bias))});
  }
}

std::vector<Var> Controller::logits(Tape& tape) {
  std::vector<Var> out;
  for (Site& s : sites_)
    out.push_back(ad::add(ad::matmul(tape.parameter(s.embedding), tape.parameter(s.head)),
                          tape.parameter(s.bias)));
  return out;
}

std::vector<Tensor> Controller::logit_values() const {
  std::vector<Tensor> out;
  for (const Site& s : sites_) {
    Tensor l = s.bias.value;
    for (std::size_t o = 0; o < l.size(); ++o)
      for (std::size_t k = 0; k < kEmbeddingDim; ++k) l[o] += s.embedding.value[k] * s.head.value(k, o);
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<Parameter*> Controller::parameters() {
  std::vector<Parameter*> out;
  for (Site& s : sites_) {
    out.push_back(&s.embedding);
    out.push_back(&s.head);
    out.push_back(&s.bias);
  }
  return out;
}

std::vector<Tensor> Controller::snapshot() const {
  std::vector<Tensor> out;
  for (const Site& s : sites_) {
    out.push_back(s.embedding.value);
    out.push_back(s.head.value);
    out.push_back(s.bias.value);
  }
  return out;
}

// --- sampling ------------------------------------------------------------

std::vector<Tensor> noise_gen(std::uint64_t seed, std::size_t epoch, std::size_t total,
                              Real alpha, std::span<const std::size_t> options) {
  const Real progress = total ? static_cast<Real>(epoch) / static_cast<Real>(total) : 1;
  const Real scale = alpha * std::max<Real>(0, 1 - progress);
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::vector<Tensor> out;
  for (std::size_t n : options) {
    Tensor t({1, n});
    for (Real& x : t.data()) {
      Real u = uniform01(rng);
      while (u <= 0) u = uniform01(rng);
      x = scale == 0 ? 0 : scale * -std::log(-std::log(u));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<int> sample_choices(std::span<const Tensor> probabilities) {
  std::vector<int> out;
  for (const Tensor& p : probabilities) {
    if (p.empty()) throw ArgumentError("empty probability vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
      if (p[i] > p[best]) best = i;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

// --- regulariser ---------------------------------------------------------

CostTables CostTables::build(const NetworkConfig& config, const supernet::SiteLayout& layout) {
  const auto& space = quant::quant_search_space();
  std::vector<Real> bits;
  for (const auto& p : space) bits.push_back(p.weight.total_bits());
  CostTables t;
  auto arch_costs = [&](std::size_t site) {
    std::vector<Real> c;
    for (std::size_t o = 0; o < layout.arch[site].options; ++o)
      c.push_back(static_cast<Real>(supernet::option_parameters(config, layout.arch[site],
                                                                 static_cast<int>(o))));
    return c;
  };
  for (std::size_t k = 0; k < layout.blocks; ++k) {
    const std::size_t exp = layout.arch_site(k, SiteKind::expansion);
    t.terms.push_back({exp, arch_costs(exp), layout.quant_site(k, SiteKind::q_linear), bits});
    const std::size_t att = layout.arch_site(k, SiteKind::attention);
    t.terms.push_back({att, arch_costs(att), layout.quant_site(k, SiteKind::q_attention), bits});
    for (std::size_t j = 0; j <= k; ++j) {
      const std::size_t r = layout.arch_site(k, SiteKind::route, j);
      t.terms.push_back({r, arch_costs(r), layout.quant_site(k, SiteKind::q_router), bits});
    }
  }
  const Real h = static_cast<Real>(config.hidden);
  t.terms.push_back({std::nullopt, {static_cast<Real>(config.in_features) * h},
                     layout.quant_site(0, SiteKind::q_linear), bits});
  t.terms.push_back({std::nullopt, {h * static_cast<Real>(config.classes)},
                     layout.quant_site(layout.blocks - 1, SiteKind::q_linear), bits});
  return t;
}

namespace {

void check_term(const CostTerm& term, std::size_t arch_sites, std::size_t quant_sites,
                auto arch_width, auto quant_width) {
  if (term.arch_site) {
    if (*term.arch_site >= arch_sites) throw ContractError("cost term names a missing architecture site");
    if (arch_width(*term.arch_site) != term.arch_cost.size())
      throw ContractError("architecture cost table does not match its site");
  } else if (term.arch_cost.size() != 1) {
    throw ContractError("fixed cost term needs exactly one parameter count");
  }
  if (term.quant_site >= quant_sites) throw ContractError("cost term names a missing quantisation site");
  if (quant_width(term.quant_site) != term.quant_cost.size())
    throw ContractError("quantisation cost table does not match its site");
}

}  // namespace

Var qloss(std::span<const Var> p_arch, std::span<const Var> p_quant, const CostTables& costs) {
  if (p_quant.empty()) throw ContractError("qloss needs quantisation probabilities");
  Tape& tape = p_quant.front().tape();
  Var total = tape.constant(Tensor::scalar(0));
  for (const CostTerm& term : costs.terms) {
    check_term(term, p_arch.size(), p_quant.size(),
               [&](std::size_t s) { return p_arch[s].value().size(); },
               [&](std::size_t s) { return p_quant[s].value().size(); });
    const std::size_t nq = term.quant_cost.size();
    Var bits = ad::matmul(p_quant[term.quant_site],
                          tape.constant(Tensor({nq, 1}, std::vector<Real>(term.quant_cost))));
    Var params;
    if (term.arch_site) {
      const std::size_t na = term.arch_cost.size();
      params = ad::matmul(p_arch[*term.arch_site],
                          tape.constant(Tensor({na, 1}, std::vector<Real>(term.arch_cost))));
    } else {
      params = tape.constant(Tensor::scalar(term.arch_cost[0]));
    }
    total = ad::add(total, ad::mul(params, bits));
  }
  return total;
}

Real qloss_value(std::span<const Tensor> p_arch, std::span<const Tensor> p_quant,
                 const CostTables& costs) {
  Real total = 0;
  for (const CostTerm& term : costs.terms) {
    check_term(term, p_arch.size(), p_quant.size(),
               [&](std::size_t s) { return p_arch[s].size(); },
               [&](std::size_t s) { return p_quant[s].size(); });
    Real params = 0, bits = 0;
    if (term.arch_site)
      for (std::size_t o = 0; o < term.arch_cost.size(); ++o)
        params += term.arch_cost[o] * p_arch[*term.arch_site][o];
    else
      params = term.arch_cost[0];
    for (std::size_t o = 0; o < term.quant_cost.size(); ++o)
      bits += term.quant_cost[o] * p_quant[term.quant_site][o];
    total += params * bits;
  }
  return total;
}

Var task_loss(Var logits, const graph::Graph& g, std::span<const std::size_t> rows) {
  if (g.multi_label) return ad::sigmoid_binary_cross_entropy(logits, g.label_matrix, rows);
  return ad::softmax_cross_entropy(logits, g.labels, rows);
}

void check_finite(Real value, const std::string& what, const json& context) {
  if (std::isfinite(value)) return;
  throw NumericalError(what + " is not finite; state: " + context.dump());
}

json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", train_loss},
          {"val_loss", val_loss},
          {"val_metric", val_metric},
          {"qloss_bits", qloss_bits},
          {"expected_size_bytes", expected_size_bytes},
          {"arch_updated", arch_updated},
          {"quant_updated", quant_updated},
          {"arch", arch},
          {"quant", quant},
          {"choice", supernet::to_json(choice)}};
}

// --- search --------------------------------------------------------------

namespace {

std::vector<std::size_t> site_options(const std::vector<supernet::Site>& sites) {
  std::vector<std::size_t> out;
  for (const auto& s : sites) out.push_back(s.options);
  return out;
}

std::vector<Var> probabilities(Tape& tape, std::vector<Var> logits,
                               const std::vector<Tensor>& noise) {
  for (std::size_t s = 0; s < logits.size(); ++s)
    logits[s] = ad::softmax_rows(ad::add(logits[s], tape.constant(noise[s])));
  return logits;
}

std::vector<int> uniform_choices(std::span<const std::size_t> options, std::mt19937_64& rng) {
  std::vector<int> out;
  for (std::size_t n : options) out.push_back(static_cast<int>(uniform_below(rng, n)));
  return out;
}

constexpr std::uint64_t kArchStream = fnv1a("arch");
constexpr std::uint64_t kQuantStream = fnv1a("quant");

}  // namespace

Searcher::Searcher(const graph::Graph& g, NetworkConfig net, SearchConfig cfg)
    : g_(g),
      cfg_(cfg),
      net_(net, mix_seed(cfg.seed, fnv1a("supernet"))),
      arch_("arch", site_options(net_.layout().arch), mix_seed(cfg.seed, kArchStream)),
      quant_("quant", site_options(net_.layout().quant), mix_seed(cfg.seed, kQuantStream)),
      costs_(CostTables::build(net, net_.layout())),
      net_opt_(cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay),
      arch_opt_(cfg.lr),
      quant_opt_(cfg.lr) {
  cfg_.validate();
  if (g.split.train.empty() || g.split.val.empty())
    throw ArgumentError("search needs nonempty train and validation sets");
}

EpochLog Searcher::run_epoch(std::size_t epoch) {
  const auto& layout = net_.layout();
  EpochLog log;
  log.epoch = epoch;

  // Controller probabilities under annealed noise.
  Tape ctape;
  const auto noise_a = noise_gen(mix_seed(cfg_.seed, kArchStream), epoch, cfg_.epochs, cfg_.noise,
                                 arch_.options());
  const auto noise_q = noise_gen(mix_seed(cfg_.seed, kQuantStream), epoch, cfg_.epochs, cfg_.noise,
                                 quant_.options());
  std::vector<Var> p_arch = probabilities(ctape, arch_.logits(ctape), noise_a);
  std::vector<Var> p_quant = probabilities(ctape, quant_.logits(ctape), noise_q);
  std::vector<Tensor> pa_values, pq_values;
  for (Var v : p_arch) pa_values.push_back(v.value());
  for (Var v : p_quant) pq_values.push_back(v.value());

  const bool arch_warm = epoch <= cfg_.arch_start;
  const bool quant_warm = epoch <= cfg_.quant_start;
  std::mt19937_64 warm_rng(mix_seed(mix_seed(cfg_.seed, fnv1a("warm-up")), epoch));
  log.arch = arch_warm ? uniform_choices(arch_.options(), warm_rng) : sample_choices(pa_values);
  log.quant = quant_warm ? uniform_choices(quant_.options(), warm_rng) : sample_choices(pq_values);
  log.choice = layout.decode(log.arch, log.quant);
  const json context = {{"epoch", epoch}, {"choice", supernet::to_json(log.choice)}};

  // K supernet steps on the training nodes, sampled path only.
  auto params = net_.parameters();
  for (std::size_t step = 0; step < cfg_.steps; ++step) {
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    std::mt19937_64 drop_rng(mix_seed(mix_seed(cfg_.seed, epoch), step + 1));
    Var logits = net_.forward(tape, g_, log.choice, {.train = true, .rng = &drop_rng});
    Var loss = task_loss(logits, g_, g_.split.train);
    log.train_loss = loss.value().item();
    check_finite(log.train_loss, "training loss", context);
    tape.backward(loss);
    params = net_.parameters();  // first use may have created parameters
    net_opt_.step(params, true);
  }

  // Validation loss on the same path, with gates for the controllers.
  const bool update_arch = epoch > cfg_.arch_start;
  const bool update_quant = epoch > cfg_.quant_start;
  Tape vtape;
  supernet::ChoiceGates gates;
  for (const auto& s : layout.arch) {
    const bool off = s.kind == SiteKind::route && !log.choice.blocks[s.block].route[s.source];
    gates.arch.push_back(vtape.variable(Tensor::scalar(off ? 0.0 : 1.0)));
  }
  for (std::size_t i = 0; i < layout.quant.size(); ++i)
    gates.quant.push_back(vtape.variable(Tensor::scalar(1.0)));
  Var vlogits = net_.forward(vtape, g_, log.choice, {.gates = &gates});
  Var vloss = task_loss(vlogits, g_, g_.split.val);
  log.val_loss = vloss.value().item();
  check_finite(log.val_loss, "validation loss", context);
  log.val_metric = graph::evaluate(g_, vlogits.value(), g_.split.val);
  if (update_arch || update_quant) vtape.backward(vloss);
  for (Parameter* p : net_.parameters()) p->zero_grad();

  // Straight-through surrogate: d L_v / d P[site][option] = d L_v / d gate.
  auto gate_grad = [&](Var gate) {
    const Tensor* gr = vtape.grad(gate);
    return gr ? (*gr)[0] : 0.0;
  };
  Var objective = ctape.constant(Tensor::scalar(0));
  for (std::size_t s = 0; s < layout.arch.size() && update_arch; ++s) {
    const int option = layout.arch[s].kind == SiteKind::route ? 1 : log.arch[s];
    Tensor pick = Tensor::zeros_like(pa_values[s]);
    pick[static_cast<std::size_t>(option)] = gate_grad(gates.arch[s]);
    objective = ad::add(objective, ad::sum(ad::mul(p_arch[s], ctape.constant(std::move(pick)))));
  }
  for (std::size_t s = 0; s < layout.quant.size() && update_quant; ++s) {
    Tensor pick = Tensor::zeros_like(pq_values[s]);
    pick[static_cast<std::size_t>(log.quant[s])] = gate_grad(gates.quant[s]);
    objective = ad::add(objective, ad::sum(ad::mul(p_quant[s], ctape.constant(std::move(pick)))));
  }

  std::vector<Var> pa_for_q = p_arch;
  if (!cfg_.qloss_to_arch)
    for (std::size_t s = 0; s < pa_for_q.size(); ++s) pa_for_q[s] = ctape.constant(pa_values[s]);
  Var lq = qloss(pa_for_q, p_quant, costs_);
  log.qloss_bits = lq.value().item();
  log.expected_size_bytes = log.qloss_bits / 8;
  if (update_quant && cfg_.beta > 0)
    objective = ad::add(objective, ad::scale(lq, cfg_.beta * cfg_.qloss_scale));

  if (update_arch || update_quant) {
    for (Parameter* p : arch_.parameters()) p->zero_grad();
    for (Parameter* p : quant_.parameters()) p->zero_grad();
    ctape.backward(objective);
    if (update_arch) {
      auto ap = arch_.parameters();
      arch_opt_.step(ap, false);
      log.arch_updated = true;
    }
    if (update_quant) {
      auto qp = quant_.parameters();
      quant_opt_.step(qp, false);
      log.quant_updated = true;
    }
  }
  return log;
}

NetworkChoice Searcher::final_choice() const {
  const auto a = sample_choices(arch_.logit_values());
  const auto q = sample_choices(quant_.logit_values());
  return net_.layout().decode(a, q);
}

SearchResult search(const graph::Graph& g, const NetworkConfig& net, const SearchConfig& cfg,
                    std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  Searcher searcher(g, net, cfg);
  SearchResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog e = searcher.run_epoch(epoch);
    if (log) *log << e.to_json().dump() << '\n' << std::flush;
    result.log.push_back(std::move(e));
  }
  result.choice = searcher.final_choice();
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace lpgnas::nas
