#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wce/error.hpp"
#include "wce/noise.hpp"
#include "wce/parallel.hpp"
#include "wce/tensor.hpp"

namespace wce {

// Probabilists' Hermite polynomial h_k(x) via h_{k+1} = x h_k - k h_{k-1}.
inline double hermite(unsigned k, double x) {
  if (k == 0) return 1.0;
  double prev = 1.0, cur = x;
  for (unsigned n = 1; n < k; ++n) {
    const double next = x * cur - static_cast<double>(n) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

// h_0(x) .. h_K(x) written into out[0..K].
inline void hermite_table(unsigned max_order, double x, double* out) {
  out[0] = 1.0;
  if (max_order >= 1) out[1] = x;
  for (unsigned n = 1; n < max_order; ++n) out[n + 1] = x * out[n] - static_cast<double>(n) * out[n - 1];
}

inline constexpr unsigned kMaxChaosOrder = 20;
inline constexpr std::size_t kMaxIndexSetSize = 100000;

inline std::uint64_t factorial(unsigned n) {
  if (n > kMaxChaosOrder) {
    throw Error(ErrorKind::capacity, "factorial of " + std::to_string(n) + " exceeds exact range (<= 20)");
  }
  std::uint64_t f = 1;
  for (unsigned k = 2; k <= n; ++k) f *= k;
  return f;
}

// binom(n + k, k) as a double (exact below 2^53), saturating at +inf.
inline double index_set_cardinality(std::size_t n_variables, unsigned max_order) {
  double c = 1.0;
  for (unsigned k = 1; k <= max_order; ++k) {
    c = c * static_cast<double>(n_variables + k) / static_cast<double>(k);
    if (!std::isfinite(c)) return std::numeric_limits<double>::infinity();
  }
  return std::round(c);
}

// Finitely supported multi-index alpha over (component m, mode j) pairs,
// stored sparsely with strictly positive powers sorted by (m, j).
class MultiIndex {
 public:
  struct Entry {
    std::uint32_t component;
    std::uint32_t mode;
    std::uint32_t power;
    auto operator<=>(const Entry&) const = default;
  };

  MultiIndex() = default;
  explicit MultiIndex(std::vector<Entry> entries) : entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) {
      return std::pair(a.component, a.mode) < std::pair(b.component, b.mode);
    });
    for (std::size_t q = 0; q < entries_.size(); ++q) {
      if (entries_[q].power == 0) throw Error(ErrorKind::parameter, "multi-index powers must be >= 1");
      if (q > 0 && entries_[q].component == entries_[q - 1].component &&
          entries_[q].mode == entries_[q - 1].mode) {
        throw Error(ErrorKind::parameter, "multi-index lists a (component, mode) pair twice");
      }
      degree_ += entries_[q].power;
    }
    if (degree_ > kMaxChaosOrder) {
      throw Error(ErrorKind::capacity, "multi-index degree " + std::to_string(degree_) + " exceeds 20");
    }
    for (const auto& e : entries_) factorial_ *= factorial(e.power);
  }

  static MultiIndex unit(std::uint32_t component, std::uint32_t mode, std::uint32_t power = 1) {
    return MultiIndex({{component, mode, power}});
  }

  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  [[nodiscard]] unsigned degree() const { return degree_; }
  [[nodiscard]] std::uint64_t factorial_value() const { return factorial_; }
  [[nodiscard]] bool is_zero() const { return entries_.empty(); }

  [[nodiscard]] std::uint32_t power(std::uint32_t component, std::uint32_t mode) const {
    for (const auto& e : entries_) {
      if (e.component == component && e.mode == mode) return e.power;
    }
    return 0;
  }

  // alpha - e_{m,j}; requires power(m, j) >= 1.
  [[nodiscard]] MultiIndex minus_unit(std::uint32_t component, std::uint32_t mode) const {
    std::vector<Entry> out;
    for (const auto& e : entries_) {
      if (e.component == component && e.mode == mode) {
        if (e.power > 1) out.push_back({e.component, e.mode, e.power - 1});
      } else {
        out.push_back(e);
      }
    }
    return MultiIndex(std::move(out));
  }

  friend MultiIndex operator+(const MultiIndex& a, const MultiIndex& b) {
    std::vector<Entry> out = a.entries_;
    for (const auto& e : b.entries_) {
      auto it = std::find_if(out.begin(), out.end(), [&](const Entry& x) {
        return x.component == e.component && x.mode == e.mode;
      });
      if (it == out.end()) {
        out.push_back(e);
      } else {
        it->power += e.power;
      }
    }
    return MultiIndex(std::move(out));
  }

  bool operator==(const MultiIndex& o) const { return entries_ == o.entries_; }
  bool operator<(const MultiIndex& o) const { return entries_ < o.entries_; }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries_) arr.push_back({e.component, e.mode, e.power});
    return arr;
  }

 private:
  std::vector<Entry> entries_;
  unsigned degree_ = 0;
  std::uint64_t factorial_ = 1;
};

// Index pairs (a, b) with alpha_a + alpha_b = alpha_c, all members of one set.
struct ProductTerm {
  std::size_t a, b, c;
};

// Truncated multi-index set J_{I,J,K}: every alpha over I components x J
// temporal modes with |alpha| <= K, in graded-lexicographic order. Within a
// degree, flattened exponent vectors (m-major, then j) are sorted in
// descending lexicographic order, so units come out as e_{0,0}, e_{0,1}, ...
class ChaosIndexSet {
 public:
  // Back-reference from alpha to alpha - e_{m,j}.
  struct Parent {
    std::size_t index;  // position of alpha - e_{m,j}, or npos if absent
    std::uint32_t component;
    std::uint32_t mode;
    std::uint32_t power;  // alpha_{m,j}
  };
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  static std::shared_ptr<const ChaosIndexSet> enumerate(std::size_t n_components,
                                                        std::size_t n_time_modes,
                                                        unsigned max_order) {
    check_bounds(n_components, n_time_modes, max_order);
    const std::size_t nv = n_components * n_time_modes;
    std::vector<MultiIndex> list;
    list.reserve(static_cast<std::size_t>(index_set_cardinality(nv, max_order)));
    std::vector<std::uint32_t> exps(nv, 0);
    for (unsigned g = 0; g <= max_order; ++g) {
      enumerate_degree(exps, 0, g, n_time_modes, list);
    }
    return std::shared_ptr<const ChaosIndexSet>(
        new ChaosIndexSet(n_components, n_time_modes, max_order, std::move(list)));
  }

  // Arbitrary user-supplied set; not necessarily closed under unit subtraction.
  static std::shared_ptr<const ChaosIndexSet> from_list(std::size_t n_components,
                                                        std::size_t n_time_modes,
                                                        unsigned max_order,
                                                        std::vector<MultiIndex> list) {
    for (const auto& a : list) {
      if (a.degree() > max_order) throw Error(ErrorKind::parameter, "multi-index degree exceeds max_order");
      for (const auto& e : a.entries()) {
        if (e.component >= n_components || e.mode >= n_time_modes) {
          throw Error(ErrorKind::parameter, "multi-index support outside the I x J grid");
        }
      }
    }
    return std::shared_ptr<const ChaosIndexSet>(
        new ChaosIndexSet(n_components, n_time_modes, max_order, std::move(list)));
  }

  [[nodiscard]] std::size_t size() const { return list_.size(); }
  [[nodiscard]] std::size_t n_components() const { return n_components_; }
  [[nodiscard]] std::size_t n_time_modes() const { return n_time_modes_; }
  [[nodiscard]] unsigned max_order() const { return max_order_; }
  [[nodiscard]] const MultiIndex& operator[](std::size_t q) const { return list_[q]; }
  [[nodiscard]] const std::vector<MultiIndex>& indices() const { return list_; }
  [[nodiscard]] auto begin() const { return list_.begin(); }
  [[nodiscard]] auto end() const { return list_.end(); }

  [[nodiscard]] std::optional<std::size_t> find(const MultiIndex& alpha) const {
    auto it = lookup_.find(alpha);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] const std::vector<Parent>& parents(std::size_t q) const { return parents_[q]; }

  [[nodiscard]] bool closed() const { return closed_; }

  // Positions of all members with the given degree, in set order.
  [[nodiscard]] std::vector<std::size_t> degree_block(unsigned degree) const {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < list_.size(); ++q) {
      if (list_[q].degree() == degree) out.push_back(q);
    }
    return out;
  }

  // Convolution table for the truncated Wick product; built on first use.
  [[nodiscard]] const std::vector<ProductTerm>& product_table() const {
    std::call_once(product_once_, [this] { build_product_table(); });
    return products_;
  }

  [[nodiscard]] bool same_as(const ChaosIndexSet& o) const {
    return this == &o || (n_components_ == o.n_components_ && n_time_modes_ == o.n_time_modes_ &&
                          max_order_ == o.max_order_ && list_ == o.list_);
  }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["ordering"] = "graded-lexicographic (degree ascending, flattened exponents descending)";
    j["n_components"] = n_components_;
    j["n_time_modes"] = n_time_modes_;
    j["max_order"] = max_order_;
    j["entry_format"] = "[component, mode, power]";
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : list_) arr.push_back(a.to_json());
    j["indices"] = std::move(arr);
    return j;
  }

  static void check_bounds(std::size_t n_components, std::size_t n_time_modes, unsigned max_order) {
    if (n_components == 0 || n_time_modes == 0) {
      throw Error(ErrorKind::parameter, "index set needs I >= 1 and J >= 1");
    }
    if (max_order > kMaxChaosOrder) {
      throw Error(ErrorKind::capacity, "max_order K=" + std::to_string(max_order) + " exceeds 20");
    }
    const double card = index_set_cardinality(n_components * n_time_modes, max_order);
    if (card > static_cast<double>(kMaxIndexSetSize)) {
      throw Error(ErrorKind::capacity,
                  "index set cardinality binom(I*J + K, K) = binom(" +
                      std::to_string(n_components * n_time_modes + max_order) + ", " +
                      std::to_string(max_order) + ") = " + std::to_string(card) + " exceeds 1e5");
    }
  }

 private:
  ChaosIndexSet(std::size_t I, std::size_t J, unsigned K, std::vector<MultiIndex> list)
      : n_components_(I), n_time_modes_(J), max_order_(K), list_(std::move(list)) {
    for (std::size_t q = 0; q < list_.size(); ++q) {
      if (!lookup_.emplace(list_[q], q).second) {
        throw Error(ErrorKind::parameter, "index set lists a multi-index twice");
      }
    }
    parents_.resize(list_.size());
    for (std::size_t q = 0; q < list_.size(); ++q) {
      for (const auto& e : list_[q].entries()) {
        auto p = find(list_[q].minus_unit(e.component, e.mode));
        if (!p) closed_ = false;
        parents_[q].push_back({p.value_or(npos), e.component, e.mode, e.power});
      }
    }
  }

  static void enumerate_degree(std::vector<std::uint32_t>& exps, std::size_t pos, unsigned remaining,
                               std::size_t J, std::vector<MultiIndex>& out) {
    if (pos + 1 == exps.size() || remaining == 0) {
      if (pos < exps.size()) exps[pos] = remaining;
      std::vector<MultiIndex::Entry> entries;
      for (std::size_t v = 0; v < exps.size(); ++v) {
        if (exps[v] > 0) {
          entries.push_back({static_cast<std::uint32_t>(v / J), static_cast<std::uint32_t>(v % J), exps[v]});
        }
      }
      out.emplace_back(std::move(entries));
      if (pos < exps.size()) exps[pos] = 0;
      return;
    }
    for (unsigned v = remaining + 1; v-- > 0;) {
      exps[pos] = v;
      enumerate_degree(exps, pos + 1, remaining - v, J, out);
    }
    exps[pos] = 0;
  }

  void build_product_table() const {
    // For each gamma, every split gamma = a + b with a <= gamma componentwise.
    for (std::size_t c = 0; c < list_.size(); ++c) {
      const auto& entries = list_[c].entries();
      std::vector<std::uint32_t> take(entries.size(), 0);
      while (true) {
        std::vector<MultiIndex::Entry> a, b;
        for (std::size_t q = 0; q < entries.size(); ++q) {
          if (take[q] > 0) a.push_back({entries[q].component, entries[q].mode, take[q]});
          if (entries[q].power > take[q]) {
            b.push_back({entries[q].component, entries[q].mode, entries[q].power - take[q]});
          }
        }
        auto ia = find(MultiIndex(std::move(a)));
        auto ib = find(MultiIndex(std::move(b)));
        if (ia && ib) products_.push_back({*ia, *ib, c});
        std::size_t q = 0;
        while (q < entries.size() && take[q] == entries[q].power) take[q++] = 0;
        if (q == entries.size()) break;
        ++take[q];
      }
    }
  }

  std::size_t n_components_;
  std::size_t n_time_modes_;
  unsigned max_order_;
  std::vector<MultiIndex> list_;
  std::map<MultiIndex, std::size_t> lookup_;
  std::vector<std::vector<Parent>> parents_;
  bool closed_ = true;
  mutable std::once_flag product_once_;
  mutable std::vector<ProductTerm> products_;
};

using IndexSetPtr = std::shared_ptr<const ChaosIndexSet>;

inline IndexSetPtr index_set(std::size_t n_components, std::size_t n_time_modes, unsigned max_order) {
  return ChaosIndexSet::enumerate(n_components, n_time_modes, max_order);
}

inline void require_same_set(const ChaosIndexSet& a, const ChaosIndexSet& b, const char* what) {
  if (!a.same_as(b)) throw Error(ErrorKind::shape, std::string(what) + ": index sets differ");
}

// Per-path normalized Wick monomials xi_alpha; column q belongs to set[q].
struct WickFeatures {
  IndexSetPtr set;
  Matrix values;  // n_paths x |set|

  [[nodiscard]] std::size_t n_paths() const { return static_cast<std::size_t>(values.rows()); }
};

// xi_alpha = prod h_{alpha_mj}(xi_mj) / sqrt(alpha!).
inline WickFeatures wick_features(const GaussianCoords& coords, const IndexSetPtr& set) {
  if (set->n_components() > coords.n_components() || set->n_time_modes() > coords.n_modes()) {
    throw Error(ErrorKind::shape, "coordinates cover " + std::to_string(coords.n_components()) + "x" +
                                      std::to_string(coords.n_modes()) + " (m, j) pairs, index set needs " +
                                      std::to_string(set->n_components()) + "x" +
                                      std::to_string(set->n_time_modes()));
  }
  const std::size_t np = coords.n_paths(), I = set->n_components(), J = set->n_time_modes();
  const unsigned K = set->max_order();
  std::vector<double> norm(set->size());
  for (std::size_t q = 0; q < set->size(); ++q) {
    norm[q] = 1.0 / std::sqrt(static_cast<double>((*set)[q].factorial_value()));
  }
  WickFeatures out{set, Matrix(np, set->size())};
  parallel_for(np, [&](std::size_t i) {
    std::vector<double> h(I * J * (K + 1));
    for (std::size_t m = 0; m < I; ++m) {
      for (std::size_t j = 0; j < J; ++j) hermite_table(K, coords.values(i, m, j), &h[(m * J + j) * (K + 1)]);
    }
    for (std::size_t q = 0; q < set->size(); ++q) {
      double v = norm[q];
      for (const auto& e : (*set)[q].entries()) v *= h[(e.component * J + e.mode) * (K + 1) + e.power];
      out.values(i, q) = v;
    }
  });
  return out;
}

// Concatenates [1, S-block, V-block, S x V products]. Products pair one
// non-constant S feature with one non-constant V feature whose degrees sum to
// at most max_total_degree. The result is indexed over a two-component set
// (component 0 = S driver, component 1 = V driver).
struct CrossPairRule {
  unsigned max_total_degree = 2;
};

inline WickFeatures crossed_features(const WickFeatures& s, const WickFeatures& v, CrossPairRule rule = {}) {
  if (s.n_paths() != v.n_paths()) {
    throw Error(ErrorKind::shape, "crossed_features: path counts " + std::to_string(s.n_paths()) + " and " +
                                      std::to_string(v.n_paths()) + " differ");
  }
  if (s.set->n_components() != 1 || v.set->n_components() != 1) {
    throw Error(ErrorKind::shape, "crossed_features expects single-component blocks");
  }
  auto constant = [](const ChaosIndexSet& set) { return set.find(MultiIndex()); };
  const auto s0 = constant(*s.set), v0 = constant(*v.set);
  auto relabel = [](const MultiIndex& a, std::uint32_t comp) {
    std::vector<MultiIndex::Entry> e = a.entries();
    for (auto& x : e) x.component = comp;
    return MultiIndex(std::move(e));
  };
  std::vector<MultiIndex> list{MultiIndex()};
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> columns{{-1, -1}};
  for (std::size_t a = 0; a < s.set->size(); ++a) {
    if (s0 && a == *s0) continue;
    list.push_back(relabel((*s.set)[a], 0));
    columns.emplace_back(static_cast<std::ptrdiff_t>(a), -1);
  }
  for (std::size_t b = 0; b < v.set->size(); ++b) {
    if (v0 && b == *v0) continue;
    list.push_back(relabel((*v.set)[b], 1));
    columns.emplace_back(-1, static_cast<std::ptrdiff_t>(b));
  }
  for (std::size_t a = 0; a < s.set->size(); ++a) {
    if (s0 && a == *s0) continue;
    for (std::size_t b = 0; b < v.set->size(); ++b) {
      if (v0 && b == *v0) continue;
      if ((*s.set)[a].degree() + (*v.set)[b].degree() > rule.max_total_degree) continue;
      list.push_back(relabel((*s.set)[a], 0) + relabel((*v.set)[b], 1));
      columns.emplace_back(static_cast<std::ptrdiff_t>(a), static_cast<std::ptrdiff_t>(b));
    }
  }
  const unsigned max_order = std::max({rule.max_total_degree, s.set->max_order(), v.set->max_order()});
  auto set = ChaosIndexSet::from_list(2, std::max(s.set->n_time_modes(), v.set->n_time_modes()), max_order,
                                      std::move(list));
  WickFeatures out{set, Matrix(s.n_paths(), static_cast<Eigen::Index>(columns.size()))};
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const auto [a, b] = columns[c];
    auto col = out.values.col(static_cast<Eigen::Index>(c));
    if (a < 0 && b < 0) {
      col.setOnes();
    } else if (b < 0) {
      col = s.values.col(a);
    } else if (a < 0) {
      col = v.values.col(b);
    } else {
      col = s.values.col(a).cwiseProduct(v.values.col(b));
    }
  }
  return out;
}

// Element of the truncated Wick algebra: coefficients indexed by a set.
struct ChaosCoefficients {
  IndexSetPtr set;
  Vector values;

  static ChaosCoefficients identity(const IndexSetPtr& set) {
    ChaosCoefficients c{set, Vector::Zero(static_cast<Eigen::Index>(set->size()))};
    if (auto z = set->find(MultiIndex())) c.values(static_cast<Eigen::Index>(*z)) = 1.0;
    return c;
  }
};

// Row-wise truncated Wick product of coefficient blocks (rows = chaos index,
// columns = independent pointwise values such as spatial nodes).
inline void wick_product_into(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                              const ChaosIndexSet& set, Eigen::Ref<Matrix> out) {
  out.setZero();
  for (const auto& t : set.product_table()) {
    out.row(static_cast<Eigen::Index>(t.c)) +=
        a.row(static_cast<Eigen::Index>(t.a)).cwiseProduct(b.row(static_cast<Eigen::Index>(t.b)));
  }
}

// (Z <> W)_gamma = sum_{alpha + beta = gamma} z_alpha w_beta; sums that fall
// outside the set are dropped.
inline ChaosCoefficients wick_product(const ChaosCoefficients& a, const ChaosCoefficients& b) {
  require_same_set(*a.set, *b.set, "wick_product");
  const auto n = static_cast<Eigen::Index>(a.set->size());
  if (a.values.size() != n || b.values.size() != n) {
    throw Error(ErrorKind::shape, "wick_product: coefficient length does not match index set");
  }
  Vector out = Vector::Zero(n);
  for (const auto& t : a.set->product_table()) {
    out(static_cast<Eigen::Index>(t.c)) +=
        a.values(static_cast<Eigen::Index>(t.a)) * b.values(static_cast<Eigen::Index>(t.b));
  }
  return {a.set, std::move(out)};
}

inline ChaosCoefficients wick_power(const ChaosCoefficients& z, unsigned p) {
  ChaosCoefficients out = ChaosCoefficients::identity(z.set);
  for (unsigned k = 0; k < p; ++k) out = wick_product(out, z);
  return out;
}

}  // namespace wce
