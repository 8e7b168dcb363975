#include "lpgnas/quant/quant.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace lpgnas::quant {

QuantScheme QuantScheme::fixed(int int_bits, int frac_bits) {
  if (int_bits < 1 || frac_bits < 0)
    throw ArgumentError("fixed-point needs int_bits >= 1 and frac_bits >= 0");
  return {SchemeKind::fixed, int_bits, frac_bits};
}

int QuantScheme::total_bits() const {
  switch (kind) {
    case SchemeKind::binary: return 1;
    case SchemeKind::ternary: return 2;
    case SchemeKind::fixed: return int_bits + frac_bits;
    case SchemeKind::none: return 32;
  }
  return 32;
}

int bit_cost(const QuantScheme& scheme) { return scheme.total_bits(); }

std::string QuantScheme::name() const {
  switch (kind) {
    case SchemeKind::binary: return "binary";
    case SchemeKind::ternary: return "ternary";
    case SchemeKind::fixed:
      return "fix" + std::to_string(int_bits) + "." + std::to_string(frac_bits);
    case SchemeKind::none: return "float";
  }
  return "float";
}

QuantScheme QuantScheme::parse(std::string_view text) {
  if (text == "binary") return binary();
  if (text == "ternary") return ternary();
  if (text == "float") return none();
  if (text.starts_with("fix")) {
    const auto dot = text.find('.');
    if (dot != std::string_view::npos) {
      int i = 0, f = 0;
      const char* b = text.data();
      auto r1 = std::from_chars(b + 3, b + dot, i);
      auto r2 = std::from_chars(b + dot + 1, b + text.size(), f);
      if (r1.ec == std::errc{} && r1.ptr == b + dot && r2.ec == std::errc{} &&
          r2.ptr == b + text.size() && dot > 3 && dot + 1 < text.size())
        return fixed(i, f);
    }
  }
  throw ArgumentError("unrecognised quantisation scheme '" + std::string(text) + "'");
}

std::string QuantPair::name() const { return weight.name() + "/" + activation.name(); }

const std::vector<QuantPair>& quant_search_space() {
  static const std::vector<QuantPair> table = [] {
    using S = QuantScheme;
    const std::vector<std::pair<S, S>> rows{
        {S::binary(), S::fixed(2, 2)},    {S::binary(), S::fixed(4, 4)},
        {S::ternary(), S::fixed(2, 2)},   {S::ternary(), S::fixed(4, 4)},
        {S::ternary(), S::fixed(4, 8)},   {S::fixed(1, 3), S::fixed(4, 4)},
        {S::fixed(2, 2), S::fixed(4, 4)}, {S::fixed(1, 5), S::fixed(4, 4)},
        {S::fixed(3, 3), S::fixed(4, 4)}, {S::fixed(2, 4), S::fixed(4, 4)},
        {S::fixed(4, 4), S::fixed(4, 4)}, {S::fixed(4, 4), S::fixed(4, 8)},
        {S::fixed(4, 4), S::fixed(8, 8)}, {S::fixed(4, 8), S::fixed(4, 8)},
        {S::fixed(4, 12), S::fixed(4, 4)}, {S::fixed(4, 12), S::fixed(4, 8)},
        {S::fixed(4, 12), S::fixed(8, 8)},
    };
    std::vector<QuantPair> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
      out.push_back({rows[i].first, rows[i].second, static_cast<int>(i)});
    return out;
  }();
  return table;
}

QuantPair pair_from_name(std::string_view text) {
  if (text == "float" || text == "float/float") return QuantPair::float_pair();
  int index = -1;
  auto r = std::from_chars(text.data(), text.data() + text.size(), index);
  const auto& space = quant_search_space();
  if (r.ec == std::errc{} && r.ptr == text.data() + text.size()) {
    if (index < 0 || index >= static_cast<int>(space.size()))
      throw ArgumentError("quantisation option index out of range: " + std::string(text));
    return space[static_cast<std::size_t>(index)];
  }
  for (const QuantPair& p : space)
    if (p.name() == text) return p;
  throw ArgumentError("unknown quantisation option '" + std::string(text) + "'");
}

Real fixed_lower(int int_bits, int /*frac_bits*/) { return -std::ldexp(1.0, int_bits - 1); }

Real fixed_upper(int int_bits, int frac_bits) {
  return std::ldexp(1.0, int_bits - 1) - std::ldexp(1.0, -frac_bits);
}

Real quantise_fixed_value(Real x, int int_bits, int frac_bits) {
  // Scaling by a power of two is exact, so rounding happens exactly once.
  const Real steps = std::round(std::ldexp(x, frac_bits));  // half away from zero
  const Real lo = -std::ldexp(1.0, int_bits - 1 + frac_bits);
  const Real hi = std::ldexp(1.0, int_bits - 1 + frac_bits) - 1;
  return std::ldexp(std::clamp(steps, lo, hi), -frac_bits);
}

Tensor quantise_fixed_values(const Tensor& x, int int_bits, int frac_bits) {
  if (int_bits < 1) throw ArgumentError("fixed-point needs int_bits >= 1");
  Tensor out = x;
  for (Real& v : out.data()) v = quantise_fixed_value(v, int_bits, frac_bits);
  return out;
}

Tensor quantise_binary_values(const Tensor& x) {
  Real alpha = 0;
  for (Real v : x.data()) alpha += std::abs(v);
  if (!x.empty()) alpha /= static_cast<Real>(x.size());
  Tensor out = x;
  for (Real& v : out.data()) v = v >= 0 ? alpha : -alpha;
  return out;
}

Tensor quantise_ternary_values(const Tensor& x) {
  Real mean_abs = 0;
  for (Real v : x.data()) mean_abs += std::abs(v);
  if (!x.empty()) mean_abs /= static_cast<Real>(x.size());
  const Real delta = 0.7 * mean_abs;
  Real alpha = 0;
  std::size_t count = 0;
  for (Real v : x.data())
    if (std::abs(v) > delta) {
      alpha += std::abs(v);
      ++count;
    }
  if (count) alpha /= static_cast<Real>(count);
  Tensor out = x;
  for (Real& v : out.data()) v = std::abs(v) <= delta ? 0 : (v > 0 ? alpha : -alpha);
  return out;
}

Tensor quantise_values(const Tensor& x, const QuantScheme& scheme) {
  switch (scheme.kind) {
    case SchemeKind::binary: return quantise_binary_values(x);
    case SchemeKind::ternary: return quantise_ternary_values(x);
    case SchemeKind::fixed: return quantise_fixed_values(x, scheme.int_bits, scheme.frac_bits);
    case SchemeKind::none: return x;
  }
  return x;
}

Tensor ste_mask(const Tensor& x, const QuantScheme& scheme) {
  Tensor mask = Tensor::zeros_like(x);
  Real lo = -1, hi = 1;
  if (scheme.kind == SchemeKind::fixed) {
    lo = fixed_lower(scheme.int_bits, scheme.frac_bits);
    hi = fixed_upper(scheme.int_bits, scheme.frac_bits);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (scheme.kind == SchemeKind::none)
      mask[i] = 1;
    else
      mask[i] = (x[i] >= lo && x[i] <= hi) ? 1 : 0;
  }
  return mask;
}

namespace {

Var straight_through(Var x, Tensor quantised, const QuantScheme& scheme) {
  Tensor mask = ste_mask(x.value(), scheme);
  return x.tape().record(std::move(quantised), {x},
                         [x, mask = std::move(mask)](ad::Tape& t, const Tensor& g) {
                           Tensor& gx = t.grad_buffer(x);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (mask[i] != 0) gx[i] += g[i];
                         });
}

}  // namespace

Var quantise_fixed(Var x, int int_bits, int frac_bits) {
  const QuantScheme scheme = QuantScheme::fixed(int_bits, frac_bits);
  return straight_through(x, quantise_fixed_values(x.value(), int_bits, frac_bits), scheme);
}

Var quantise_binary(Var x) {
  return straight_through(x, quantise_binary_values(x.value()), QuantScheme::binary());
}

Var quantise_ternary(Var x) {
  return straight_through(x, quantise_ternary_values(x.value()), QuantScheme::ternary());
}

Var quantise(Var x, const QuantScheme& scheme) {
  switch (scheme.kind) {
    case SchemeKind::binary: return quantise_binary(x);
    case SchemeKind::ternary: return quantise_ternary(x);
    case SchemeKind::fixed: return quantise_fixed(x, scheme.int_bits, scheme.frac_bits);
    case SchemeKind::none: return x;
  }
  return x;
}

}  // namespace lpgnas::quant
