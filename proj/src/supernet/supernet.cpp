#include "lpgnas/supernet/supernet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lpgnas::supernet {

using json = nlohmann::json;
using quant::QuantScheme;

namespace {

template <class Array, class T>
int position(const Array& options, T value) {
  auto it = std::find(options.begin(), options.end(), value);
  if (it == options.end()) throw ArgumentError("value outside the option set");
  return static_cast<int>(it - options.begin());
}

std::string block_prefix(std::size_t k) { return "block" + std::to_string(k); }

std::string route_name(std::size_t k, std::size_t j) {
  return "route" + std::to_string(k) + "." + std::to_string(j);
}

// Parameter parts of each attention type; empty for Const and GCN.
std::vector<std::string> attention_parts(Attention a) {
  switch (a) {
    case Attention::constant:
    case Attention::gcn: return {};
    case Attention::gat:
    case Attention::sym_gat: return {"l", "r"};
    case Attention::cos: return {"1", "2"};
    case Attention::linear: return {"w"};
    case Attention::gene_linear: return {"1", "2", "g"};
  }
  return {};
}

std::string attention_param(std::size_t k, Attention a, const std::string& part) {
  return block_prefix(k) + "." + attention_name(a) + "." + part;
}

Real normal(std::mt19937_64& rng) {
  Real u1 = uniform01(rng);
  while (u1 <= 0) u1 = uniform01(rng);
  const Real u2 = uniform01(rng);
  return std::sqrt(-2 * std::log(u1)) * std::cos(2 * std::numbers::pi * u2);
}

Var act_quant(Var x, const QuantScheme& scheme, const std::string& site,
              const ForwardOptions& options) {
  Var q = quant::quantise(x, scheme);
  if (options.recorder) options.recorder->push_back({site, x.value().size(), scheme.total_bits()});
  return q;
}

Var gated(Var x, const std::vector<Var>& gates, std::size_t site) {
  return ad::mul(x, gates.at(site));
}

}  // namespace

std::string attention_name(Attention a) {
  switch (a) {
    case Attention::constant: return "const";
    case Attention::gcn: return "gcn";
    case Attention::gat: return "gat";
    case Attention::sym_gat: return "sym-gat";
    case Attention::cos: return "cos";
    case Attention::linear: return "linear";
    case Attention::gene_linear: return "gene-linear";
  }
  return "const";
}

Attention attention_from_name(std::string_view name) {
  for (Attention a : kAttentions)
    if (attention_name(a) == name) return a;
  throw ArgumentError("unknown attention type '" + std::string(name) + "'");
}

std::string aggregation_name(Reduce r) {
  switch (r) {
    case Reduce::mean: return "mean";
    case Reduce::sum: return "add";
    case Reduce::max: return "max";
  }
  return "mean";
}

Reduce aggregation_from_name(std::string_view name) {
  for (Reduce r : kAggregations)
    if (aggregation_name(r) == name) return r;
  throw ArgumentError("unknown aggregation '" + std::string(name) + "'");
}

std::string ArchChoice::name() const {
  return attention_name(attention) + "/" + std::string(ad::activation_name(act)) + "/" +
         aggregation_name(aggr) + "/e" + std::to_string(expansion);
}

std::size_t arch_space_size() {
  return kAttentions.size() * kActivations.size() * kAggregations.size() * kExpansions.size();
}

// --- sites ---------------------------------------------------------------

SiteLayout SiteLayout::build(std::size_t blocks) {
  if (blocks == 0) throw ArgumentError("a network needs at least one block");
  SiteLayout layout;
  layout.blocks = blocks;
  for (std::size_t k = 0; k < blocks; ++k) {
    const std::string b = block_prefix(k);
    layout.arch.push_back({SiteKind::attention, k, 0, kAttentions.size(), b + ".attention"});
    layout.arch.push_back({SiteKind::activation, k, 0, kActivations.size(), b + ".activation"});
    layout.arch.push_back({SiteKind::aggregation, k, 0, kAggregations.size(), b + ".aggregation"});
    layout.arch.push_back({SiteKind::expansion, k, 0, kExpansions.size(), b + ".expansion"});
    for (std::size_t j = 0; j <= k; ++j)
      layout.arch.push_back({SiteKind::route, k, j, 2, route_name(k, j)});
    for (auto [kind, part] : {std::pair{SiteKind::q_linear, "linear"},
                              std::pair{SiteKind::q_attention, "attention"},
                              std::pair{SiteKind::q_aggregation, "aggregation"},
                              std::pair{SiteKind::q_router, "router"}})
      layout.quant.push_back({kind, k, 0, quant::kNumQuantOptions, b + ".q." + part});
  }
  return layout;
}

std::size_t SiteLayout::arch_site(std::size_t block, SiteKind kind, std::size_t source) const {
  for (std::size_t i = 0; i < arch.size(); ++i)
    if (arch[i].block == block && arch[i].kind == kind &&
        (kind != SiteKind::route || arch[i].source == source))
      return i;
  throw ArgumentError("no such architecture site");
}

std::size_t SiteLayout::quant_site(std::size_t block, SiteKind kind) const {
  for (std::size_t i = 0; i < quant.size(); ++i)
    if (quant[i].block == block && quant[i].kind == kind) return i;
  throw ArgumentError("no such quantisation site");
}

std::vector<int> SiteLayout::encode_arch(const NetworkChoice& choice) const {
  validate_choice(choice, blocks);
  std::vector<int> out;
  for (const Site& s : arch) {
    const BlockChoice& b = choice.blocks[s.block];
    switch (s.kind) {
      case SiteKind::attention: out.push_back(position(kAttentions, b.arch.attention)); break;
      case SiteKind::activation: out.push_back(position(kActivations, b.arch.act)); break;
      case SiteKind::aggregation: out.push_back(position(kAggregations, b.arch.aggr)); break;
      case SiteKind::expansion: out.push_back(position(kExpansions, b.arch.expansion)); break;
      case SiteKind::route: out.push_back(b.route[s.source] ? 1 : 0); break;
      default: break;
    }
  }
  return out;
}

std::vector<int> SiteLayout::encode_quant(const NetworkChoice& choice) const {
  validate_choice(choice, blocks);
  std::vector<int> out;
  for (const Site& s : quant) {
    const BlockQuant& q = choice.blocks[s.block].quant;
    const QuantPair* p = nullptr;
    switch (s.kind) {
      case SiteKind::q_linear: p = &q.linear; break;
      case SiteKind::q_attention: p = &q.attention; break;
      case SiteKind::q_aggregation: p = &q.aggregation; break;
      case SiteKind::q_router: p = &q.router; break;
      default: break;
    }
    if (p->is_float()) throw ArgumentError("float quantisation has no search-space index");
    out.push_back(p->index);
  }
  return out;
}

NetworkChoice SiteLayout::decode(std::span<const int> arch_idx,
                                 std::span<const int> quant_idx) const {
  if (arch_idx.size() != arch.size() || quant_idx.size() != quant.size())
    throw ContractError("choice vector does not match the site layout");
  NetworkChoice choice;
  choice.blocks.resize(blocks);
  for (std::size_t k = 0; k < blocks; ++k) choice.blocks[k].route.assign(k + 1, 0);
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const Site& s = arch[i];
    const int v = arch_idx[i];
    if (v < 0 || static_cast<std::size_t>(v) >= s.options)
      throw IndexError("option " + std::to_string(v) + " out of range at " + s.name);
    ArchChoice& a = choice.blocks[s.block].arch;
    switch (s.kind) {
      case SiteKind::attention: a.attention = kAttentions[v]; break;
      case SiteKind::activation: a.act = kActivations[v]; break;
      case SiteKind::aggregation: a.aggr = kAggregations[v]; break;
      case SiteKind::expansion: a.expansion = kExpansions[v]; break;
      case SiteKind::route: choice.blocks[s.block].route[s.source] = static_cast<std::uint8_t>(v); break;
      default: break;
    }
  }
  const auto& space = quant::quant_search_space();
  for (std::size_t i = 0; i < quant.size(); ++i) {
    const Site& s = quant[i];
    const int v = quant_idx[i];
    if (v < 0 || static_cast<std::size_t>(v) >= space.size())
      throw IndexError("option " + std::to_string(v) + " out of range at " + s.name);
    BlockQuant& q = choice.blocks[s.block].quant;
    const QuantPair& p = space[static_cast<std::size_t>(v)];
    switch (s.kind) {
      case SiteKind::q_linear: q.linear = p; break;
      case SiteKind::q_attention: q.attention = p; break;
      case SiteKind::q_aggregation: q.aggregation = p; break;
      case SiteKind::q_router: q.router = p; break;
      default: break;
    }
  }
  return choice;
}

void validate_choice(const NetworkChoice& choice, std::size_t blocks) {
  if (choice.blocks.size() != blocks)
    throw ArgumentError("choice has " + std::to_string(choice.blocks.size()) +
                        " blocks, network has " + std::to_string(blocks));
  for (std::size_t k = 0; k < blocks; ++k) {
    const BlockChoice& b = choice.blocks[k];
    if (b.route.size() != k + 1)
      throw ArgumentError(block_prefix(k) + " needs " + std::to_string(k + 1) + " route gates");
    position(kExpansions, b.arch.expansion);
    for (const QuantPair* p : {&b.quant.linear, &b.quant.attention, &b.quant.aggregation,
                               &b.quant.router})
      if (!p->is_float() && !(quant::quant_search_space().at(static_cast<std::size_t>(p->index)) == *p))
        throw ArgumentError(block_prefix(k) + ": quantisation pair does not match its index");
  }
}

// --- parameters -----------------------------------------------------------

ad::Shape parameter_shape(const NetworkConfig& config, const std::string& name) {
  const std::size_t h = config.hidden;
  if (name == "input.w") return {config.in_features, h};
  if (name == "classifier.w") return {h, config.classes};
  if (name.starts_with("route")) return {h, h};
  if (name.starts_with("block")) {
    const auto dot = name.find('.');
    const std::string rest = name.substr(dot + 1);
    if (rest.starts_with("fc1.e") || rest.starts_with("fc2.e")) {
      const std::size_t e = std::stoul(rest.substr(5));
      return rest[2] == '1' ? ad::Shape{h, e * h} : ad::Shape{e * h, h};
    }
    const auto dot2 = rest.find('.');
    const Attention a = attention_from_name(rest.substr(0, dot2));
    const std::string part = rest.substr(dot2 + 1);
    if (a == Attention::cos || (a == Attention::gene_linear && part != "g")) return {1, h};
    return {h, 1};
  }
  throw ArgumentError("unknown parameter '" + name + "'");
}

Supernet::Supernet(NetworkConfig config, std::uint64_t seed)
    : config_(config), layout_(SiteLayout::build(config.blocks)), seed_(seed) {
  if (config_.in_features == 0 || config_.hidden == 0 || config_.classes == 0)
    throw ArgumentError("network widths must be positive");
  if (config_.dropout < 0 || config_.dropout >= 1)
    throw ArgumentError("dropout must lie in [0, 1)");
}

Tensor Supernet::initial_value(const std::string& name) const {
  const ad::Shape shape = parameter_shape(config_, name);
  std::mt19937_64 rng(mix_seed(seed_, fnv1a(name)));
  Tensor t(shape);
  const bool attention = name.starts_with("block") && name.find(".fc") == std::string::npos;
  if (attention) {
    for (Real& v : t.data()) v = 0.1 * normal(rng);
  } else {
    const Real limit = std::sqrt(6.0 / static_cast<Real>(shape[0] + shape[1]));
    for (Real& v : t.data()) v = (2 * uniform01(rng) - 1) * limit;
  }
  return t;
}

Parameter& Supernet::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end())
    it = params_.emplace(name, std::make_unique<Parameter>(name, initial_value(name))).first;
  return *it->second;
}

std::vector<Parameter*> Supernet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : params_) out.push_back(p.get());
  return out;
}

std::vector<std::string> Supernet::path_parameters(const NetworkChoice& choice) const {
  return supernet::path_parameters(config_, choice);
}

std::vector<std::string> path_parameters(const NetworkConfig& config, const NetworkChoice& choice) {
  validate_choice(choice, config.blocks);
  std::vector<std::string> names{"input.w"};
  for (std::size_t k = 0; k < config.blocks; ++k) {
    const BlockChoice& b = choice.blocks[k];
    const std::string e = std::to_string(b.arch.expansion);
    names.push_back(block_prefix(k) + ".fc1.e" + e);
    names.push_back(block_prefix(k) + ".fc2.e" + e);
    for (const std::string& part : attention_parts(b.arch.attention))
      names.push_back(attention_param(k, b.arch.attention, part));
    for (std::size_t j = 0; j <= k; ++j)
      if (b.route[j]) names.push_back(route_name(k, j));
  }
  names.push_back("classifier.w");
  return names;
}

void Supernet::materialise_all() {
  param("input.w");
  param("classifier.w");
  for (std::size_t k = 0; k < config_.blocks; ++k) {
    for (int e : kExpansions) {
      param(block_prefix(k) + ".fc1.e" + std::to_string(e));
      param(block_prefix(k) + ".fc2.e" + std::to_string(e));
    }
    for (Attention a : kAttentions)
      for (const std::string& part : attention_parts(a)) param(attention_param(k, a, part));
    for (std::size_t j = 0; j <= k; ++j) param(route_name(k, j));
  }
}

Var Supernet::weight(Tape& tape, const std::string& name, const QuantScheme& scheme) {
  return quant::quantise(tape.parameter(param(name)), scheme);
}

// --- forward -------------------------------------------------------------

Var sym_gat_coefficients(Var scores, const std::vector<std::size_t>& reverse_edge) {
  const Tensor& s = scores.value();
  const std::size_t e = s.rows();
  if (reverse_edge.size() != e || s.cols() != 1)
    throw StructuralError("reverse-edge index does not match the score vector");
  Tensor out({e, 1});
  for (std::size_t i = 0; i < e; ++i) {
    const std::size_t r = reverse_edge[i];
    if (r >= e || reverse_edge[r] != i) throw StructuralError("edge without a reverse edge");
    out[i] = s[i] + s[r];
  }
  return scores.tape().record(std::move(out), {scores},
                              [scores, &reverse_edge](Tape& t, const Tensor& g) {
                                Tensor& gs = t.grad_buffer(scores);
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                  gs[i] += g[i];
                                  gs[reverse_edge[i]] += g[i];
                                }
                              });
}

Var Supernet::attention_scores(Tape& tape, const graph::Graph& g, Var h_lin, std::size_t block,
                               Attention type, const QuantScheme& weight_scheme) {
  const std::size_t e = g.num_edges();
  auto w = [&](const std::string& part) {
    return weight(tape, attention_param(block, type, part), weight_scheme);
  };
  auto gat = [&]() {
    Var el = ad::matmul(h_lin, w("l"));
    Var er = ad::matmul(h_lin, w("r"));
    return ad::leaky_relu(ad::add(ad::gather_rows(el, g.by_dst), ad::gather_rows(er, g.by_src)),
                          kAttentionSlope);
  };
  switch (type) {
    case Attention::constant: return tape.constant(Tensor({e, 1}, 1.0));
    case Attention::gcn: {
      Tensor s({e, 1});
      for (std::size_t i = 0; i < e; ++i)
        s[i] = 1 / std::sqrt(static_cast<Real>(g.degree[g.edge_dst[i]]) *
                             static_cast<Real>(g.degree[g.edge_src[i]]));
      return tape.constant(std::move(s));
    }
    case Attention::gat: return gat();
    case Attention::sym_gat: return sym_gat_coefficients(gat(), g.reverse_edge);
    case Attention::cos: {
      Var a = ad::gather_rows(ad::mul(h_lin, w("1")), g.by_dst);
      Var b = ad::gather_rows(ad::mul(h_lin, w("2")), g.by_src);
      return ad::row_sum(ad::mul(a, b));
    }
    case Attention::linear:
      return ad::activation(ad::gather_rows(ad::matmul(h_lin, w("w")), g.by_src),
                            ActivationKind::tanh);
    case Attention::gene_linear: {
      Var a = ad::gather_rows(ad::mul(h_lin, w("1")), g.by_dst);
      Var b = ad::gather_rows(ad::mul(h_lin, w("2")), g.by_src);
      return ad::matmul(ad::activation(ad::add(a, b), ActivationKind::tanh), w("g"));
    }
  }
  throw ArgumentError("unknown attention type");
}

Var Supernet::block_forward(Tape& tape, const graph::Graph& g, Var h_in, std::size_t block,
                            const BlockChoice& choice, const ForwardOptions& options) {
  if (h_in.cols() != config_.hidden || h_in.rows() != g.n)
    throw DimensionError("block input is " + ad::shape_string(h_in.shape()) + ", expected " +
                         std::to_string(g.n) + "x" + std::to_string(config_.hidden));
  if (block >= config_.blocks) throw IndexError("block index out of range");
  const ArchChoice& a = choice.arch;
  const BlockQuant& q = choice.quant;
  const ChoiceGates* gates = options.gates;
  const std::string b = block_prefix(block);
  const std::string e = std::to_string(a.expansion);

  Var h = act_quant(h_in, q.linear.activation, b + ".in", options);
  Var mid = ad::activation(ad::matmul(h, weight(tape, b + ".fc1.e" + e, q.linear.weight)),
                           ActivationKind::relu);
  mid = act_quant(mid, q.linear.activation, b + ".hidden", options);
  Var h_lin = ad::matmul(mid, weight(tape, b + ".fc2.e" + e, q.linear.weight));
  h_lin = act_quant(h_lin, q.linear.activation, b + ".linear", options);
  if (gates) {
    h_lin = gated(h_lin, gates->arch, layout_.arch_site(block, SiteKind::expansion));
    h_lin = gated(h_lin, gates->quant, layout_.quant_site(block, SiteKind::q_linear));
  }

  Var scores = attention_scores(tape, g, h_lin, block, a.attention, q.attention.weight);
  Var alpha = ad::segment_softmax(scores, g.by_dst);
  if (gates) alpha = gated(alpha, gates->arch, layout_.arch_site(block, SiteKind::attention));
  Var messages = ad::mul(ad::gather_rows(h_lin, g.by_src), alpha);
  messages = act_quant(messages, q.attention.activation, b + ".messages", options);
  if (gates) messages = gated(messages, gates->quant, layout_.quant_site(block, SiteKind::q_attention));

  Var agg = ad::segment_aggregate(messages, g.by_dst, a.aggr);
  agg = act_quant(agg, q.aggregation.activation, b + ".aggregate", options);
  if (gates) {
    agg = gated(agg, gates->arch, layout_.arch_site(block, SiteKind::aggregation));
    agg = gated(agg, gates->quant, layout_.quant_site(block, SiteKind::q_aggregation));
  }
  Var out = ad::activation(agg, a.act);
  if (gates) out = gated(out, gates->arch, layout_.arch_site(block, SiteKind::activation));
  return out;
}

Var Supernet::forward(Tape& tape, const graph::Graph& g, const NetworkChoice& choice,
                      const ForwardOptions& options) {
  validate_choice(choice, config_.blocks);
  if (g.f != config_.in_features || g.c != config_.classes)
    throw DimensionError("graph has f=" + std::to_string(g.f) + " c=" + std::to_string(g.c) +
                         ", network expects f=" + std::to_string(config_.in_features) +
                         " c=" + std::to_string(config_.classes));
  const bool drop = options.train && config_.dropout > 0;
  if (drop && !options.rng) throw ArgumentError("training forward needs an rng for dropout");
  const ChoiceGates* gates = options.gates;
  const BlockQuant& first = choice.blocks.front().quant;
  const BlockQuant& last = choice.blocks.back().quant;

  Var h0 = ad::sparse_matmul(g.features, weight(tape, "input.w", first.linear.weight));
  h0 = act_quant(h0, first.linear.activation, "input.out", options);
  std::vector<Var> sources{h0};
  Var stage = h0;
  for (std::size_t k = 0; k < config_.blocks; ++k) {
    const BlockChoice& b = choice.blocks[k];
    Var in = drop ? ad::dropout(stage, config_.dropout, *options.rng, true) : stage;
    Var out = block_forward(tape, g, in, k, b, options);
    Var sum = out;
    for (std::size_t j = 0; j <= k; ++j) {
      if (!b.route[j] && !gates) continue;
      // An unselected shortcut only runs to give its gate a gradient; it is
      // not part of the executed network, so it is not recorded.
      ForwardOptions route_options = options;
      if (!b.route[j]) route_options.recorder = nullptr;
      const std::string r = route_name(k, j);
      Var r_in = act_quant(sources[j], b.quant.router.activation, r + ".in", route_options);
      Var proj = ad::matmul(r_in, weight(tape, r, b.quant.router.weight));
      proj = act_quant(proj, b.quant.router.activation, r + ".out", route_options);
      if (gates) {
        proj = gated(proj, gates->arch, layout_.arch_site(k, SiteKind::route, j));
        if (b.route[j]) proj = gated(proj, gates->quant, layout_.quant_site(k, SiteKind::q_router));
      }
      sum = ad::add(sum, proj);
    }
    sources.push_back(out);
    stage = sum;
  }
  Var c_in = act_quant(stage, last.linear.activation, "classifier.in", options);
  if (drop) c_in = ad::dropout(c_in, config_.dropout, *options.rng, true);
  Var logits = ad::matmul(c_in, weight(tape, "classifier.w", last.linear.weight));
  if (options.recorder) options.recorder->push_back({"logits", logits.value().size(), 32});
  return logits;
}

// --- accounting ----------------------------------------------------------

QuantScheme weight_scheme_for(const NetworkChoice& choice, const std::string& name) {
  if (choice.blocks.empty()) throw ArgumentError("empty network choice");
  if (name == "input.w") return choice.blocks.front().quant.linear.weight;
  if (name == "classifier.w") return choice.blocks.back().quant.linear.weight;
  const bool route = name.starts_with("route");
  constexpr std::size_t start = 5;  // after "route" or "block"
  const std::size_t k = std::stoul(name.substr(start, name.find('.') - start));
  if (k >= choice.blocks.size()) throw IndexError("parameter '" + name + "' beyond last block");
  const BlockQuant& q = choice.blocks[k].quant;
  if (route) return q.router.weight;
  if (name.find(".fc") != std::string::npos) return q.linear.weight;
  return q.attention.weight;
}

std::size_t model_size(const NetworkConfig& config, const NetworkChoice& choice) {
  std::size_t bits = 0;
  for (const std::string& name : path_parameters(config, choice))
    bits += ad::shape_size(parameter_shape(config, name)) *
            static_cast<std::size_t>(weight_scheme_for(choice, name).total_bits());
  return (bits + 7) / 8;
}

std::size_t buffer_size(const NetworkConfig& config, const NetworkChoice& choice, std::size_t n,
                        std::size_t num_edges) {
  validate_choice(choice, config.blocks);
  const std::size_t h = config.hidden;
  auto bits = [](const QuantPair& p) {
    return static_cast<std::size_t>(p.activation.total_bits());
  };
  std::size_t total = n * h * bits(choice.blocks.front().quant.linear);
  for (std::size_t k = 0; k < config.blocks; ++k) {
    const BlockChoice& b = choice.blocks[k];
    const std::size_t lin = bits(b.quant.linear);
    total += n * h * lin                                              // block input
             + n * h * static_cast<std::size_t>(b.arch.expansion) * lin  // intermediate
             + n * h * lin                                            // linear output
             + num_edges * h * bits(b.quant.attention)                // messages
             + n * h * bits(b.quant.aggregation);                     // aggregate
    for (std::uint8_t on : b.route)
      if (on) total += 2 * n * h * bits(b.quant.router);
  }
  total += n * h * bits(choice.blocks.back().quant.linear);
  total += n * config.classes * 32;
  return (total + 7) / 8;
}

std::size_t option_parameters(const NetworkConfig& config, const Site& site, int option) {
  const std::size_t h = config.hidden;
  switch (site.kind) {
    case SiteKind::expansion:
      return 2 * static_cast<std::size_t>(kExpansions.at(static_cast<std::size_t>(option))) * h * h;
    case SiteKind::attention: {
      const Attention a = kAttentions.at(static_cast<std::size_t>(option));
      std::size_t count = 0;
      for (const std::string& part : attention_parts(a))
        count += ad::shape_size(parameter_shape(config, attention_param(site.block, a, part)));
      return count;
    }
    case SiteKind::route: return option == 1 ? h * h : 0;
    default: return 0;
  }
}

// --- serialisation -------------------------------------------------------

json to_json(const NetworkChoice& choice) {
  json blocks = json::array();
  for (const BlockChoice& b : choice.blocks) {
    blocks.push_back({{"attention", attention_name(b.arch.attention)},
                      {"activation", std::string(ad::activation_name(b.arch.act))},
                      {"aggregation", aggregation_name(b.arch.aggr)},
                      {"expansion", b.arch.expansion},
                      {"route", b.route},
                      {"quant",
                       {{"linear", b.quant.linear.name()},
                        {"attention", b.quant.attention.name()},
                        {"aggregation", b.quant.aggregation.name()},
                        {"router", b.quant.router.name()}}}});
  }
  return {{"blocks", blocks}};
}

NetworkChoice choice_from_json(const json& j) {
  try {
    NetworkChoice choice;
    for (const json& b : j.at("blocks")) {
      BlockChoice bc;
      bc.arch.attention = attention_from_name(b.at("attention").get<std::string>());
      bc.arch.act = ad::activation_from_name(b.at("activation").get<std::string>());
      bc.arch.aggr = aggregation_from_name(b.at("aggregation").get<std::string>());
      bc.arch.expansion = b.at("expansion").get<int>();
      bc.route = b.at("route").get<std::vector<std::uint8_t>>();
      const json& q = b.at("quant");
      bc.quant.linear = quant::pair_from_name(q.at("linear").get<std::string>());
      bc.quant.attention = quant::pair_from_name(q.at("attention").get<std::string>());
      bc.quant.aggregation = quant::pair_from_name(q.at("aggregation").get<std::string>());
      bc.quant.router = quant::pair_from_name(q.at("router").get<std::string>());
      choice.blocks.push_back(std::move(bc));
    }
    validate_choice(choice, choice.blocks.size());
    return choice;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed network choice: ") + e.what());
  }
}

json to_json(const NetworkConfig& c) {
  return {{"in_features", c.in_features},
          {"hidden", c.hidden},
          {"classes", c.classes},
          {"blocks", c.blocks},
          {"dropout", c.dropout}};
}

NetworkConfig config_from_json(const json& j) {
  try {
    NetworkConfig c;
    c.in_features = j.at("in_features").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.blocks = j.at("blocks").get<std::size_t>();
    c.dropout = j.value("dropout", c.dropout);
    return c;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed network config: ") + e.what());
  }
}

json Supernet::checkpoint(const NetworkChoice& choice) const {
  json params = json::object();
  for (const std::string& name : path_parameters(choice)) {
    auto it = params_.find(name);
    const Tensor value = it != params_.end() ? it->second->value : initial_value(name);
    params[name] = {{"shape", value.shape()}, {"values", value.storage()}};
  }
  return {{"format", "lpgnas-checkpoint"},
          {"version", 1},
          {"seed", seed_},
          {"config", to_json(config_)},
          {"choice", to_json(choice)},
          {"params", params}};
}

std::pair<Supernet, NetworkChoice> Supernet::from_checkpoint(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "lpgnas-checkpoint" || j.at("version").get<int>() != 1)
      throw SchemaError("unsupported checkpoint format");
    Supernet net(config_from_json(j.at("config")), j.at("seed").get<std::uint64_t>());
    NetworkChoice choice = choice_from_json(j.at("choice"));
    validate_choice(choice, net.config().blocks);
    for (const auto& [name, entry] : j.at("params").items()) {
      Parameter& p = net.param(name);
      const auto shape = entry.at("shape").get<ad::Shape>();
      if (shape != p.value.shape())
        throw SchemaError("checkpoint parameter '" + name + "' has shape " + ad::shape_string(shape) +
                          ", expected " + ad::shape_string(p.value.shape()));
      p.value = Tensor(shape, entry.at("values").get<std::vector<Real>>());
    }
    return {std::move(net), std::move(choice)};
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace lpgnas::supernet
