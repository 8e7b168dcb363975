#pragma once

// The searchable quantised GNN. A network is an input projection, a stack of
// graph blocks joined by a gated shortcut router, and a linear classifier.
// Every candidate operation owns its parameters; a NetworkChoice selects one
// path through them.

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgnas/autodiff/ops.hpp"
#include "lpgnas/graphdata/graph.hpp"
#include "lpgnas/quant/quant.hpp"

namespace lpgnas::supernet {

using ad::ActivationKind;
using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using kernels::Reduce;
using quant::QuantPair;

enum class Attention { constant, gcn, gat, sym_gat, cos, linear, gene_linear };

inline constexpr std::array kAttentions{Attention::constant, Attention::gcn,    Attention::gat,
                                        Attention::sym_gat,  Attention::cos,    Attention::linear,
                                        Attention::gene_linear};
inline constexpr std::array kActivations{
    ActivationKind::none, ActivationKind::sigmoid,    ActivationKind::tanh,  ActivationKind::softplus,
    ActivationKind::relu, ActivationKind::leaky_relu, ActivationKind::relu6, ActivationKind::elu};
inline constexpr std::array kAggregations{Reduce::mean, Reduce::sum, Reduce::max};
inline constexpr std::array kExpansions{1, 2, 4, 8};

// Slope of the LeakyReLU inside GAT-style attention scores.
inline constexpr Real kAttentionSlope = 0.2;

std::string attention_name(Attention a);
Attention attention_from_name(std::string_view name);
std::string aggregation_name(Reduce r);  // "mean" | "add" | "max"
Reduce aggregation_from_name(std::string_view name);

struct ArchChoice {
  Attention attention = Attention::constant;
  ActivationKind act = ActivationKind::relu;
  Reduce aggr = Reduce::mean;
  int expansion = 1;

  std::string name() const;  // e.g. "gat/elu/add/e1"
  friend bool operator==(const ArchChoice&, const ArchChoice&) = default;
};

// Number of distinct ArchChoice values for one block.
std::size_t arch_space_size();

// One QuantPair per quantisation site of a block.
struct BlockQuant {
  QuantPair linear;       // FC weights and linear activations
  QuantPair attention;    // attention parameters and attended messages
  QuantPair aggregation;  // aggregated activations (weight half unused)
  QuantPair router;       // shortcut projections into this block's stage

  static BlockQuant uniform(const QuantPair& q) { return {q, q, q, q}; }
  friend bool operator==(const BlockQuant&, const BlockQuant&) = default;
};

struct BlockChoice {
  ArchChoice arch;
  BlockQuant quant;
  // route[j] for j <= k (block k, 0-based): shortcut from source j into the
  // output stage of block k. Source 0 is the input projection, source j > 0
  // the output of block j - 1. The block's own output always passes through.
  std::vector<std::uint8_t> route;

  friend bool operator==(const BlockChoice&, const BlockChoice&) = default;
};

struct NetworkChoice {
  std::vector<BlockChoice> blocks;
  friend bool operator==(const NetworkChoice&, const NetworkChoice&) = default;
};

struct NetworkConfig {
  std::size_t in_features = 0;
  std::size_t hidden = 32;
  std::size_t classes = 0;
  std::size_t blocks = 2;
  Real dropout = 0.5;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// --- decision sites ------------------------------------------------------

enum class SiteKind {
  attention,
  activation,
  aggregation,
  expansion,
  route,
  q_linear,
  q_attention,
  q_aggregation,
  q_router
};

struct Site {
  SiteKind kind;
  std::size_t block = 0;
  std::size_t source = 0;  // route sites only
  std::size_t options = 0;
  std::string name;
};

// Flat enumeration of the architecture and quantisation decision sites of an
// l-block network, and conversion between NetworkChoice and per-site option
// indices. Per block k the architecture sites are attention, activation,
// aggregation, expansion, then k + 1 route gates ({off, on}); the quantisation
// sites are linear, attention, aggregation, router (17 options each).
struct SiteLayout {
  std::size_t blocks = 0;
  std::vector<Site> arch;
  std::vector<Site> quant;

  static SiteLayout build(std::size_t blocks);

  std::vector<int> encode_arch(const NetworkChoice& choice) const;
  std::vector<int> encode_quant(const NetworkChoice& choice) const;
  NetworkChoice decode(std::span<const int> arch_idx, std::span<const int> quant_idx) const;

  std::size_t arch_site(std::size_t block, SiteKind kind, std::size_t source = 0) const;
  std::size_t quant_site(std::size_t block, SiteKind kind) const;
};

void validate_choice(const NetworkChoice& choice, std::size_t blocks);

// --- forward ------------------------------------------------------------

// Scalar multipliers placed on the output of each chosen option so the
// controllers can read d(loss)/d(option). Indexed like SiteLayout::arch and
// SiteLayout::quant. Route gates also run the unselected shortcut, scaled by
// its gate value (0 when off).
struct ChoiceGates {
  std::vector<Var> arch;
  std::vector<Var> quant;
};

// Receives every quantised activation tensor of a forward pass.
struct ActivationRecord {
  std::string site;
  std::size_t elements = 0;
  int bits = 0;
};
using ActivationRecorder = std::vector<ActivationRecord>;

struct ForwardOptions {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train and dropout > 0
  const ChoiceGates* gates = nullptr;
  ActivationRecorder* recorder = nullptr;
};

class Supernet {
 public:
  Supernet(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  const SiteLayout& layout() const { return layout_; }
  std::uint64_t seed() const { return seed_; }

  // Full network, returns n x classes logits.
  Var forward(Tape& tape, const graph::Graph& g, const NetworkChoice& choice,
              const ForwardOptions& options = {});

  // One graph block on an n x hidden input.
  Var block_forward(Tape& tape, const graph::Graph& g, Var h_in, std::size_t block,
                    const BlockChoice& choice, const ForwardOptions& options = {});

  // Attention scores (before normalisation), E x 1.
  Var attention_scores(Tape& tape, const graph::Graph& g, Var h_lin, std::size_t block,
                       Attention type, const quant::QuantScheme& weight_scheme);

  // Parameter by name, created with its deterministic initial value on first
  // use. Names: input.w, block<k>.fc1.e<e>, block<k>.fc2.e<e>,
  // block<k>.<attention>.<part>, route<k>.<j>, classifier.w.
  Parameter& param(const std::string& name);
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  std::vector<Parameter*> parameters();

  // Names of the parameters a choice executes.
  std::vector<std::string> path_parameters(const NetworkChoice& choice) const;
  // Creates every candidate parameter of the supernet.
  void materialise_all();

  nlohmann::json checkpoint(const NetworkChoice& choice) const;
  static std::pair<Supernet, NetworkChoice> from_checkpoint(const nlohmann::json& j);

 private:
  Tensor initial_value(const std::string& name) const;
  Var weight(Tape& tape, const std::string& name, const quant::QuantScheme& scheme);

  NetworkConfig config_;
  SiteLayout layout_;
  std::uint64_t seed_;
  std::map<std::string, std::unique_ptr<Parameter>> params_;
};

// Symmetrised GAT scores: s[e] + s[reverse[e]].
Var sym_gat_coefficients(Var scores, const std::vector<std::size_t>& reverse_edge);

std::vector<std::string> path_parameters(const NetworkConfig& config, const NetworkChoice& choice);

// Shape of a named parameter for a given configuration.
ad::Shape parameter_shape(const NetworkConfig& config, const std::string& name);

// Weight scheme applied to a named parameter under a choice.
quant::QuantScheme weight_scheme_for(const NetworkChoice& choice, const std::string& name);

// ceil(sum over executed parameters of count x weight bits / 8).
std::size_t model_size(const NetworkConfig& config, const NetworkChoice& choice);
// Bytes of all quantised activations of one forward pass plus 32-bit logits.
std::size_t buffer_size(const NetworkConfig& config, const NetworkChoice& choice, std::size_t n,
                        std::size_t num_edges);

// Parameter count of one option of an architecture site.
std::size_t option_parameters(const NetworkConfig& config, const Site& site, int option);

nlohmann::json to_json(const NetworkChoice& choice);
NetworkChoice choice_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const nlohmann::json& j);

}  // namespace lpgnas::supernet
