#pragma once

// Joint architecture and quantisation search: controllers, annealed noise,
// the size regulariser, Adam, and the epoch loop that trains the supernet on
// one sampled path at a time.

#include <chrono>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lpgnas/supernet/supernet.hpp"

namespace lpgnas::nas {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using supernet::NetworkChoice;
using supernet::NetworkConfig;

struct SearchConfig {
  std::size_t epochs = 100;      // M
  std::size_t arch_start = 50;   // M_a: w_a updates only after this epoch
  std::size_t quant_start = 20;  // M_q: w_q updates only after this epoch
  std::size_t steps = 2;         // K supernet steps per epoch
  Real noise = 1.0;              // initial noise scale
  Real beta = 0.1;               // size regulariser weight
  Real lr = 0.005;
  Real weight_decay = 0;         // L2 on supernet weights
  // Multiplies the regulariser (in bits) before weighting, 1/8192 reads it
  // in KiB.
  Real qloss_scale = 1.0 / 8192;
  // Let the regulariser reach the architecture controller as well.
  bool qloss_to_arch = false;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SearchConfig&, const SearchConfig&) = default;
};

nlohmann::json to_json(const SearchConfig& cfg);
// Starts from `base` and overrides every key present in j; unknown keys are
// rejected.
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});

// Adam with per-parameter state and step counts.
class Adam {
 public:
  explicit Adam(Real lr, Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8,
                Real weight_decay = 0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  // Updates params from their .grad. With only_touched, parameters that got
  // no gradient in the last backward pass are left alone, state included.
  void step(std::span<Parameter* const> params, bool only_touched);

 private:
  struct State {
    Tensor m, v;
    std::size_t t = 0;
  };
  Real lr_, beta1_, beta2_, eps_, weight_decay_;
  std::unordered_map<const Parameter*, State> state_;
};

inline constexpr std::size_t kEmbeddingDim = 16;

// Input-independent controller: per site a trainable embedding and a linear
// head giving that site's logits.
class Controller {
 public:
  Controller(std::string prefix, std::vector<std::size_t> options, std::uint64_t seed);

  std::size_t num_sites() const { return options_.size(); }
  const std::vector<std::size_t>& options() const { return options_; }

  // 1 x options logits per site, recorded on the tape.
  std::vector<Var> logits(Tape& tape);
  // Noise-free logits without a tape.
  std::vector<Tensor> logit_values() const;

  std::vector<Parameter*> parameters();
  // Copy of every parameter value, for snapshot comparisons.
  std::vector<Tensor> snapshot() const;

 private:
  struct Site {
    Parameter embedding;  // 1 x 16
    Parameter head;       // 16 x options
    Parameter bias;       // 1 x options
  };
  std::vector<std::size_t> options_;
  std::vector<Site> sites_;
};

// Gumbel(0, 1) samples scaled by alpha * max(0, 1 - epoch / total), one
// 1 x options tensor per site; deterministic per (seed, epoch).
std::vector<Tensor> noise_gen(std::uint64_t seed, std::size_t epoch, std::size_t total,
                              Real alpha, std::span<const std::size_t> options);

// Per-site argmax, lowest index on ties.
std::vector<int> sample_choices(std::span<const Tensor> probabilities);

// One product term of the size regulariser: (cost . P_arch[arch_site]) x
// (bits . P_quant[quant_site]). A term with no architecture site has a fixed
// parameter count arch_cost[0].
struct CostTerm {
  std::optional<std::size_t> arch_site;
  std::vector<Real> arch_cost;
  std::size_t quant_site = 0;
  std::vector<Real> quant_cost;
};

struct CostTables {
  std::vector<CostTerm> terms;

  // Expansion x linear bits, attention type x attention bits, each route gate
  // x router bits per block, plus the input projection (first block linear
  // bits) and classifier (last block linear bits).
  static CostTables build(const NetworkConfig& config, const supernet::SiteLayout& layout);
};

// Expected weight bits of the sampled network. P vectors are 1 x options.
Var qloss(std::span<const Var> p_arch, std::span<const Var> p_quant, const CostTables& costs);
Real qloss_value(std::span<const Tensor> p_arch, std::span<const Tensor> p_quant,
                 const CostTables& costs);

// Task loss over the given rows: softmax cross-entropy or, for multi-hot
// labels, sigmoid binary cross-entropy.
Var task_loss(Var logits, const graph::Graph& g, std::span<const std::size_t> rows);

// Throws NumericalError carrying `context` when the value is not finite.
void check_finite(Real value, const std::string& what, const nlohmann::json& context);

struct EpochLog {
  std::size_t epoch = 0;
  Real train_loss = 0;
  Real val_loss = 0;
  Real val_metric = 0;
  Real qloss_bits = 0;
  Real expected_size_bytes = 0;
  bool arch_updated = false;
  bool quant_updated = false;
  std::vector<int> arch;
  std::vector<int> quant;
  NetworkChoice choice;

  nlohmann::json to_json() const;
};

struct SearchResult {
  NetworkChoice choice;  // noise-free argmax after the last epoch
  std::vector<EpochLog> log;
  double seconds = 0;
};

// Epoch-at-a-time driver, exposed so tests can observe state between epochs.
class Searcher {
 public:
  Searcher(const graph::Graph& g, NetworkConfig net, SearchConfig cfg);

  EpochLog run_epoch(std::size_t epoch);
  NetworkChoice final_choice() const;

  supernet::Supernet& supernet() { return net_; }
  Controller& arch_controller() { return arch_; }
  Controller& quant_controller() { return quant_; }
  const SearchConfig& config() const { return cfg_; }
  const CostTables& costs() const { return costs_; }

 private:
  const graph::Graph& g_;
  SearchConfig cfg_;
  supernet::Supernet net_;
  Controller arch_;
  Controller quant_;
  CostTables costs_;
  Adam net_opt_;
  Adam arch_opt_;
  Adam quant_opt_;
};

// Runs every epoch; each EpochLog is also written as a JSON line to `log`
// when given.
SearchResult search(const graph::Graph& g, const NetworkConfig& net, const SearchConfig& cfg,
                    std::ostream* log = nullptr);

}  // namespace lpgnas::nas
