#pragma once

// Simulated numeric formats for weights and activations, their straight-through
// autodiff wrappers, and the enumerated per-site quantisation options.

#include <string>
#include <string_view>
#include <vector>

#include "lpgnas/autodiff/ops.hpp"

namespace lpgnas::quant {

using ad::Tensor;
using ad::Var;

enum class SchemeKind { binary, ternary, fixed, none };

// One numeric format. `none` is the unquantised 32-bit float reference used by
// baselines and float-mode accounting; it never appears in the search space.
struct QuantScheme {
  SchemeKind kind = SchemeKind::none;
  int int_bits = 0;   // fixed only, includes the sign bit
  int frac_bits = 0;  // fixed only

  static QuantScheme binary() { return {SchemeKind::binary, 0, 0}; }
  static QuantScheme ternary() { return {SchemeKind::ternary, 0, 0}; }
  static QuantScheme fixed(int int_bits, int frac_bits);
  static QuantScheme none() { return {SchemeKind::none, 0, 0}; }

  int total_bits() const;
  bool is_float() const { return kind == SchemeKind::none; }

  // "binary" | "ternary" | "fix<int>.<frac>" | "float"
  std::string name() const;
  static QuantScheme parse(std::string_view text);

  friend bool operator==(const QuantScheme&, const QuantScheme&) = default;
};

int bit_cost(const QuantScheme& scheme);

// A (weight, activation) option. `index` is the row in quant_search_space(),
// or -1 for the float pair.
struct QuantPair {
  QuantScheme weight;
  QuantScheme activation;
  int index = -1;

  static QuantPair float_pair() { return {QuantScheme::none(), QuantScheme::none(), -1}; }
  bool is_float() const { return index < 0; }
  std::string name() const;  // "<weight>/<activation>"

  friend bool operator==(const QuantPair&, const QuantPair&) = default;
};

// The 17 options, most aggressive first.
const std::vector<QuantPair>& quant_search_space();
inline constexpr std::size_t kNumQuantOptions = 17;

// Looks up a pair by its "<weight>/<activation>" name or its row index.
QuantPair pair_from_name(std::string_view text);

// --- value-level quantisers (pure) ---------------------------------------

Real fixed_lower(int int_bits, int frac_bits);
Real fixed_upper(int int_bits, int frac_bits);
Real quantise_fixed_value(Real x, int int_bits, int frac_bits);

Tensor quantise_fixed_values(const Tensor& x, int int_bits, int frac_bits);
Tensor quantise_binary_values(const Tensor& x);
Tensor quantise_ternary_values(const Tensor& x);
Tensor quantise_values(const Tensor& x, const QuantScheme& scheme);

// Straight-through pass mask: 1 where the upstream gradient flows, else 0.
Tensor ste_mask(const Tensor& x, const QuantScheme& scheme);

// --- autodiff ops with straight-through backward -------------------------

Var quantise_fixed(Var x, int int_bits, int frac_bits);
Var quantise_binary(Var x);
Var quantise_ternary(Var x);
Var quantise(Var x, const QuantScheme& scheme);

}  // namespace lpgnas::quant
