#include "milab/planning.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "milab/errors.hpp"

namespace milab {

namespace {

std::vector<int> sorted_union(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<int> complement_of(const std::vector<int>& set, int d) {
  std::vector<int> out;
  std::size_t pos = 0;
  for (int j = 0; j < d; ++j) {
    if (pos < set.size() && set[pos] == j) {
      ++pos;
    } else {
      out.push_back(j);
    }
  }
  return out;
}

std::int64_t space_of(const std::vector<int>& set, const std::vector<int>& domains) {
  std::int64_t n = 1;
  for (int j : set) n *= domains[static_cast<std::size_t>(j)];
  return n;
}

// Positions at which the elements of `sub` appear inside `super`;
// both sorted, sub subset of super.
std::vector<int> positions_in(const std::vector<int>& sub, const std::vector<int>& super) {
  std::vector<int> pos;
  pos.reserve(sub.size());
  std::size_t p = 0;
  for (int v : sub) {
    while (p < super.size() && super[p] != v) ++p;
    if (p == super.size()) throw InvalidInput("index set is not a subset of the union");
    pos.push_back(static_cast<int>(p));
  }
  return pos;
}

double l1_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s;
}

// Advances x through the assignments of the coordinates in `coords`
// (last coordinate fastest). Returns false after the last assignment.
bool odometer_step(StateVector& x, const std::vector<int>& coords,
                   const std::vector<int>& domains) {
  for (int p = static_cast<int>(coords.size()) - 1; p >= 0; --p) {
    const int j = coords[static_cast<std::size_t>(p)];
    if (++x[static_cast<std::size_t>(j)] < domains[static_cast<std::size_t>(j)]) return true;
    x[static_cast<std::size_t>(j)] = 0;
  }
  return false;
}

}  // namespace

double QTable::value(std::int64_t x) const {
  double best = q[static_cast<std::size_t>(x * actions)];
  for (int a = 1; a < actions; ++a) best = std::max(best, at(x, a));
  return best;
}

int QTable::greedy(std::int64_t x) const {
  int arg = 0;
  double best = at(x, 0);
  for (int a = 1; a < actions; ++a) {
    if (at(x, a) > best) {
      best = at(x, a);
      arg = a;
    }
  }
  return arg;
}

Policy QTable::greedy_policy() const {
  Policy pi;
  pi.action_count = actions;
  pi.probs.assign(static_cast<std::size_t>(states * actions), 0.0);
  for (std::int64_t x = 0; x < states; ++x)
    pi.probs[static_cast<std::size_t>(x * actions + greedy(x))] = 1.0;
  return pi;
}

std::span<const double> BlockWeights::row(std::int64_t abstract_state, int free_pos) const {
  const double* base = w.data() + abstract_state * stride + offsets[static_cast<std::size_t>(free_pos)];
  const int dom = domain_sizes[static_cast<std::size_t>(free_set[static_cast<std::size_t>(free_pos)])];
  return {base, static_cast<std::size_t>(dom)};
}

double BlockWeights::weight_of(std::int64_t abstract_state, const StateVector& x) const {
  double wt = 1.0;
  for (std::size_t j = 0; j < free_set.size(); ++j)
    wt *= row(abstract_state, static_cast<int>(j))[static_cast<std::size_t>(
        x[static_cast<std::size_t>(free_set[j])])];
  return wt;
}

void BlockWeights::validate() const {
  if (abstract_count < 1) throw InvalidInput("block weights: empty abstract space");
  std::int64_t expect_stride = 0;
  for (std::size_t j = 0; j < free_set.size(); ++j) {
    if (offsets[j] != expect_stride) throw InvalidInput("block weights: bad offsets");
    expect_stride += domain_sizes[static_cast<std::size_t>(free_set[j])];
  }
  if (expect_stride != stride) throw InvalidInput("block weights: bad stride");
  if (static_cast<std::int64_t>(w.size()) != abstract_count * stride)
    throw InvalidInput("block weights: table has wrong size");
  for (std::int64_t s = 0; s < abstract_count; ++s) {
    for (std::size_t j = 0; j < free_set.size(); ++j) {
      auto r = row(s, static_cast<int>(j));
      double sum = 0.0;
      for (double v : r) {
        if (!(v >= 0.0)) throw InvalidInput("block weights: negative entry");
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("block weights: row not normalized");
    }
  }
}

static BlockWeights make_weight_frame(const CdpShape& shape, const AbstractionPhi& phi) {
  shape.validate();
  phi.validate(shape.d);
  BlockWeights bw;
  bw.joint_set = phi.joint_index_set();
  bw.free_set = complement_of(bw.joint_set, shape.d);
  bw.domain_sizes = shape.domain_sizes;
  bw.abstract_count = space_of(bw.joint_set, shape.domain_sizes);
  bw.offsets.clear();
  std::int64_t off = 0;
  for (int j : bw.free_set) {
    bw.offsets.push_back(off);
    off += shape.domain_sizes[static_cast<std::size_t>(j)];
  }
  bw.stride = off;
  bw.w.assign(static_cast<std::size_t>(bw.abstract_count * std::max<std::int64_t>(bw.stride, 1)),
              0.0);
  if (bw.stride == 0) bw.w.clear();
  return bw;
}

BlockWeights BlockWeights::uniform(const CdpShape& shape, const AbstractionPhi& phi) {
  BlockWeights bw = make_weight_frame(shape, phi);
  for (std::int64_t s = 0; s < bw.abstract_count; ++s) {
    for (std::size_t j = 0; j < bw.free_set.size(); ++j) {
      double* base = bw.w.data() + s * bw.stride + bw.offsets[j];
      const int dom = shape.domain_sizes[static_cast<std::size_t>(bw.free_set[j])];
      for (int v = 0; v < dom; ++v) base[v] = 1.0 / dom;
    }
  }
  return bw;
}

BlockWeights BlockWeights::random(const CdpShape& shape, const AbstractionPhi& phi,
                                  std::uint64_t seed) {
  BlockWeights bw = make_weight_frame(shape, phi);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> exp1(1.0);
  for (std::int64_t s = 0; s < bw.abstract_count; ++s) {
    for (std::size_t j = 0; j < bw.free_set.size(); ++j) {
      double* base = bw.w.data() + s * bw.stride + bw.offsets[j];
      const int dom = shape.domain_sizes[static_cast<std::size_t>(bw.free_set[j])];
      double sum = 0.0;
      for (int v = 0; v < dom; ++v) {
        base[v] = exp1(rng) + 1e-12;
        sum += base[v];
      }
      for (int v = 0; v < dom; ++v) base[v] /= sum;
    }
  }
  return bw;
}

std::int64_t abstract_state_of(const CdpShape& shape, const std::vector<int>& joint_set,
                               const StateVector& x) {
  return key_over(joint_set, x, shape.domain_sizes);
}

AbstractMdp build_abstract_mdp(const FactoredCdp& cdp, const AbstractionPhi& phi,
                               const BlockWeights& weights, std::int64_t cap) {
  cdp.validate();
  phi.validate(cdp.d);
  weights.validate();
  if (weights.joint_set != phi.joint_index_set() || weights.domain_sizes != cdp.domain_sizes)
    throw InvalidInput("block weights were built for a different abstraction or shape");
  const std::int64_t n = cdp.state_count();
  if (n > cap) throw TooLarge("build_abstract_mdp: state space larger than cap");
  const std::int64_t m = weights.abstract_count;
  const int A = cdp.action_count;
  if (m > 0 && m * A > cap / m)
    throw TooLarge("build_abstract_mdp: abstract transition table larger than cap");

  AbstractMdp mdp;
  mdp.phi = phi;
  mdp.joint_set = weights.joint_set;
  mdp.abstract_count = m;
  mdp.action_count = A;
  mdp.gamma = cdp.gamma;
  mdp.r_max = cdp.r_max;
  mdp.p.assign(static_cast<std::size_t>(m * A * m), 0.0);
  mdp.r.assign(static_cast<std::size_t>(m * A), 0.0);

  // Every joint assignment is realizable because the state space is a full
  // product, so there are no empty preimages to drop.
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t s = 0; s < m; ++s) {
    StateVector x(static_cast<std::size_t>(cdp.d), 0);
    // forced coordinates take the values encoded by s
    std::int64_t rem = s;
    for (int p = static_cast<int>(mdp.joint_set.size()) - 1; p >= 0; --p) {
      const int j = mdp.joint_set[static_cast<std::size_t>(p)];
      x[static_cast<std::size_t>(j)] =
          static_cast<int>(rem % cdp.domain_sizes[static_cast<std::size_t>(j)]);
      rem /= cdp.domain_sizes[static_cast<std::size_t>(j)];
    }
    bool more = true;
    while (more) {
      const double wt = weights.weight_of(s, x);
      const std::int64_t xf = cdp.flat_index(x);
      for (int a = 0; a < A; ++a) {
        const std::vector<double> lifted = lifted_row(cdp, mdp.joint_set, x, a);
        double* dst = mdp.p.data() + (s * A + a) * m;
        for (std::int64_t t = 0; t < m; ++t) dst[t] += wt * lifted[static_cast<std::size_t>(t)];
        mdp.r[static_cast<std::size_t>(s * A + a)] += wt * cdp.reward_at(xf, a);
      }
      more = odometer_step(x, weights.free_set, cdp.domain_sizes);
    }
  }

  for (std::int64_t row = 0; row < m * A; ++row) {
    double sum = 0.0;
    for (std::int64_t t = 0; t < m; ++t) sum += mdp.p[static_cast<std::size_t>(row * m + t)];
    if (std::abs(sum - 1.0) > 1e-10)
      throw InvalidInput("build_abstract_mdp: abstract row failed normalization check");
  }
  return mdp;
}

std::vector<double> expected_next_value(const CdpShape& shape,
                                        const std::vector<std::vector<int>>& index_sets,
                                        const FactorRowFn& rows, const std::vector<double>& v,
                                        int a, std::vector<int>& union_out, std::int64_t cap,
                                        bool parallel) {
  const int d = shape.d;
  const auto& domains = shape.domain_sizes;
  if (static_cast<std::int64_t>(v.size()) != shape.state_count())
    throw InvalidInput("expected_next_value: value table has wrong size");
  if (static_cast<int>(index_sets.size()) != d)
    throw InvalidInput("expected_next_value: wrong number of index sets");

  std::vector<int> key_set;  // union of the index sets processed so far
  std::vector<double> t = v;
  std::int64_t prefix = shape.state_count();
  for (int i = d - 1; i >= 0; --i) {
    const auto& s_i = index_sets[static_cast<std::size_t>(i)];
    const std::vector<int> new_set = sorted_union(key_set, s_i);
    const std::int64_t dom = domains[static_cast<std::size_t>(i)];
    const std::int64_t prefix_new = prefix / dom;
    const std::int64_t space_new = space_of(new_set, domains);
    if (prefix_new > 0 && space_new > cap / std::max<std::int64_t>(prefix_new, 1))
      throw TooLarge("expected_next_value: intermediate table larger than cap");

    // map each assignment of the new union to its old-union and factor keys
    const std::vector<int> pos_old = positions_in(key_set, new_set);
    const std::vector<int> pos_fac = positions_in(s_i, new_set);
    std::vector<std::int64_t> old_key(static_cast<std::size_t>(space_new));
    std::vector<std::int64_t> fac_key(static_cast<std::size_t>(space_new));
    std::vector<int> vals(new_set.size());
    for (std::int64_t u = 0; u < space_new; ++u) {
      std::int64_t rem = u;
      for (int p = static_cast<int>(new_set.size()) - 1; p >= 0; --p) {
        const int j = new_set[static_cast<std::size_t>(p)];
        vals[static_cast<std::size_t>(p)] =
            static_cast<int>(rem % domains[static_cast<std::size_t>(j)]);
        rem /= domains[static_cast<std::size_t>(j)];
      }
      std::int64_t ko = 0;
      for (int p : pos_old)
        ko = ko * domains[static_cast<std::size_t>(new_set[static_cast<std::size_t>(p)])] +
             vals[static_cast<std::size_t>(p)];
      std::int64_t kf = 0;
      for (int p : pos_fac)
        kf = kf * domains[static_cast<std::size_t>(new_set[static_cast<std::size_t>(p)])] +
             vals[static_cast<std::size_t>(p)];
      old_key[static_cast<std::size_t>(u)] = ko;
      fac_key[static_cast<std::size_t>(u)] = kf;
    }

    std::vector<double> tn(static_cast<std::size_t>(space_new * prefix_new));
#pragma omp parallel for schedule(static) if (parallel)
    for (std::int64_t u = 0; u < space_new; ++u) {
      const auto row = rows(i, fac_key[static_cast<std::size_t>(u)], a);
      const double* src = t.data() + old_key[static_cast<std::size_t>(u)] * prefix;
      double* dst = tn.data() + u * prefix_new;
      for (std::int64_t pre = 0; pre < prefix_new; ++pre) {
        const double* cell = src + pre * dom;
        double acc = 0.0;
        for (std::int64_t vv = 0; vv < dom; ++vv) acc += row[static_cast<std::size_t>(vv)] * cell[vv];
        dst[pre] = acc;
      }
    }
    t.swap(tn);
    key_set = new_set;
    prefix = prefix_new;
  }
  union_out = key_set;
  return t;
}

namespace {

// Shared sweep loop: `ev_fn(V, a)` returns the per-key expected next values
// for one action and `key_of(x)` maps a state to its key in that table.
template <typename EvFn, typename KeyFn>
ValueIterationResult run_value_iteration(std::int64_t n, int A, double gamma, double tol,
                                         const std::vector<double>& reward, EvFn&& ev_fn,
                                         KeyFn&& key_of) {
  if (!(tol > 0.0)) throw InvalidInput("value iteration: tol must be positive");
  const double threshold = tol * (1.0 - gamma) / gamma;
  ValueIterationResult out;
  out.q.states = n;
  out.q.actions = A;
  out.q.q.assign(static_cast<std::size_t>(n * A), 0.0);
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  std::vector<std::vector<double>> ev(static_cast<std::size_t>(A));
  while (true) {
    for (int a = 0; a < A; ++a) ev[static_cast<std::size_t>(a)] = ev_fn(v, a);
    double res = 0.0;
#pragma omp parallel for schedule(static) reduction(max : res)
    for (std::int64_t x = 0; x < n; ++x) {
      const std::int64_t key = key_of(x);
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < A; ++a) {
        const double qn = reward[static_cast<std::size_t>(x * A + a)] +
                          gamma * ev[static_cast<std::size_t>(a)][static_cast<std::size_t>(key)];
        res = std::max(res, std::abs(qn - out.q.q[static_cast<std::size_t>(x * A + a)]));
        out.q.q[static_cast<std::size_t>(x * A + a)] = qn;
        best = std::max(best, qn);
      }
      v[static_cast<std::size_t>(x)] = best;
    }
    ++out.iterations;
    out.residual = res;
    if (res <= threshold) break;
  }
  return out;
}

std::vector<std::int64_t> state_keys(const CdpShape& shape, const std::vector<int>& key_set) {
  const std::int64_t n = shape.state_count();
  std::vector<std::int64_t> keys(static_cast<std::size_t>(n));
  StateVector x(static_cast<std::size_t>(shape.d), 0);
  std::vector<int> all(static_cast<std::size_t>(shape.d));
  std::iota(all.begin(), all.end(), 0);
  std::int64_t idx = 0;
  do {
    keys[static_cast<std::size_t>(idx++)] = key_over(key_set, x, shape.domain_sizes);
  } while (odometer_step(x, all, shape.domain_sizes));
  return keys;
}

}  // namespace

ValueIterationResult value_iteration(const FactoredCdp& cdp, double tol, std::int64_t cap) {
  cdp.validate();
  const CdpShape shape = cdp.shape();
  const std::int64_t n = shape.state_count();
  if (n > cap) throw TooLarge("value_iteration: state space larger than cap");
  std::vector<int> key_set;
  for (const auto& s : cdp.parents) key_set = sorted_union(key_set, s);
  const std::vector<std::int64_t> keys = state_keys(shape, key_set);
  const FactorRowFn rows = [&cdp](int i, std::int64_t key, int a) {
    return cdp.factor_row(i, key, a);
  };
  std::vector<int> scratch_union;
  auto ev_fn = [&](const std::vector<double>& v, int a) {
    return expected_next_value(shape, cdp.parents, rows, v, a, scratch_union, cap, true);
  };
  auto key_of = [&keys](std::int64_t x) { return keys[static_cast<std::size_t>(x)]; };
  return run_value_iteration(n, cdp.action_count, cdp.gamma, tol, cdp.reward, ev_fn, key_of);
}

ValueIterationResult value_iteration_serial(const FactoredCdp& cdp, double tol,
                                            std::int64_t cap) {
  cdp.validate();
  if (!(tol > 0.0)) throw InvalidInput("value iteration: tol must be positive");
  const std::int64_t n = cdp.state_count();
  if (n > cap) throw TooLarge("value_iteration_serial: state space larger than cap");
  const int A = cdp.action_count;
  const double threshold = tol * (1.0 - cdp.gamma) / cdp.gamma;
  ValueIterationResult out;
  out.q.states = n;
  out.q.actions = A;
  out.q.q.assign(static_cast<std::size_t>(n * A), 0.0);
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  std::vector<StateVector> states(static_cast<std::size_t>(n));
  for (std::int64_t x = 0; x < n; ++x) states[static_cast<std::size_t>(x)] = cdp.unflatten(x);
  while (true) {
    double res = 0.0;
    for (std::int64_t x = 0; x < n; ++x) {
      for (int a = 0; a < A; ++a) {
        const std::vector<double> row = compose_transition(cdp, states[static_cast<std::size_t>(x)], a, cap);
        double ev = 0.0;
        for (std::int64_t y = 0; y < n; ++y) ev += row[static_cast<std::size_t>(y)] * v[static_cast<std::size_t>(y)];
        const double qn = cdp.reward_at(x, a) + cdp.gamma * ev;
        res = std::max(res, std::abs(qn - out.q.q[static_cast<std::size_t>(x * A + a)]));
        out.q.q[static_cast<std::size_t>(x * A + a)] = qn;
      }
    }
    for (std::int64_t x = 0; x < n; ++x) v[static_cast<std::size_t>(x)] = out.q.value(x);
    ++out.iterations;
    out.residual = res;
    if (res <= threshold) break;
  }
  return out;
}

ValueIterationResult value_iteration(const AbstractMdp& mdp, double tol) {
  const std::int64_t m = mdp.abstract_count;
  const int A = mdp.action_count;
  auto ev_fn = [&](const std::vector<double>& v, int a) {
    std::vector<double> ev(static_cast<std::size_t>(m));
#pragma omp parallel for schedule(static)
    for (std::int64_t s = 0; s < m; ++s) {
      const auto row = mdp.row(s, a);
      double acc = 0.0;
      for (std::int64_t t = 0; t < m; ++t) acc += row[static_cast<std::size_t>(t)] * v[static_cast<std::size_t>(t)];
      ev[static_cast<std::size_t>(s)] = acc;
    }
    return ev;
  };
  auto key_of = [](std::int64_t s) { return s; };
  return run_value_iteration(m, A, mdp.gamma, tol, mdp.r, ev_fn, key_of);
}

ValueIterationResult value_iteration_serial(const AbstractMdp& mdp, double tol) {
  if (!(tol > 0.0)) throw InvalidInput("value iteration: tol must be positive");
  const std::int64_t m = mdp.abstract_count;
  const int A = mdp.action_count;
  const double threshold = tol * (1.0 - mdp.gamma) / mdp.gamma;
  ValueIterationResult out;
  out.q.states = m;
  out.q.actions = A;
  out.q.q.assign(static_cast<std::size_t>(m * A), 0.0);
  std::vector<double> v(static_cast<std::size_t>(m), 0.0);
  while (true) {
    double res = 0.0;
    for (std::int64_t s = 0; s < m; ++s) {
      for (int a = 0; a < A; ++a) {
        const auto row = mdp.row(s, a);
        double ev = 0.0;
        for (std::int64_t t = 0; t < m; ++t) ev += row[static_cast<std::size_t>(t)] * v[static_cast<std::size_t>(t)];
        const double qn = mdp.r[static_cast<std::size_t>(s * A + a)] + mdp.gamma * ev;
        res = std::max(res, std::abs(qn - out.q.q[static_cast<std::size_t>(s * A + a)]));
        out.q.q[static_cast<std::size_t>(s * A + a)] = qn;
      }
    }
    for (std::int64_t s = 0; s < m; ++s) v[static_cast<std::size_t>(s)] = out.q.value(s);
    ++out.iterations;
    out.residual = res;
    if (res <= threshold) break;
  }
  return out;
}

ValueIterationResult value_iteration(const FactoredCdp& true_cdp, const EstimatedModel& model,
                                     double tol, std::int64_t cap,
                                     std::int64_t* fallback_pairs_out) {
  true_cdp.validate();
  const CdpShape shape = true_cdp.shape();
  if (model.shape.d != shape.d || model.shape.domain_sizes != shape.domain_sizes ||
      model.shape.action_count != shape.action_count)
    throw InvalidInput("estimated model shape does not match the planning process");
  const std::int64_t n = shape.state_count();
  if (n > cap) throw TooLarge("value_iteration: state space larger than cap");
  const int A = shape.action_count;

  if (model.kind == EstimatorKind::kMle) {
    // Flatten the sparse counts once; fallback pairs use the uniform row,
    // whose expected value is just the mean of v.
    std::vector<std::int64_t> start(static_cast<std::size_t>(n * A + 1), 0);
    std::vector<char> present(static_cast<std::size_t>(n * A), 0);
    for (const auto& [key, counts] : model.mle)
      if (counts.total > 0) {
        present[static_cast<std::size_t>(key)] = 1;
        start[static_cast<std::size_t>(key + 1)] = static_cast<std::int64_t>(counts.next.size());
      }
    for (std::int64_t k = 0; k < n * A; ++k)
      start[static_cast<std::size_t>(k + 1)] += start[static_cast<std::size_t>(k)];
    std::vector<std::int64_t> nexts(static_cast<std::size_t>(start[static_cast<std::size_t>(n * A)]));
    std::vector<double> probs(nexts.size());
    for (const auto& [key, counts] : model.mle) {
      if (counts.total == 0) continue;
      std::int64_t at = start[static_cast<std::size_t>(key)];
      for (const auto& [next_flat, hits] : counts.next) {
        nexts[static_cast<std::size_t>(at)] = next_flat;
        probs[static_cast<std::size_t>(at)] =
            static_cast<double>(hits) / static_cast<double>(counts.total);
        ++at;
      }
    }
    std::int64_t fallback = 0;
    for (char f : present) fallback += f ? 0 : 1;
    if (fallback_pairs_out) *fallback_pairs_out = fallback;

    if (!(tol > 0.0)) throw InvalidInput("value iteration: tol must be positive");
    const double threshold = tol * (1.0 - true_cdp.gamma) / true_cdp.gamma;
    ValueIterationResult out;
    out.q.states = n;
    out.q.actions = A;
    out.q.q.assign(static_cast<std::size_t>(n * A), 0.0);
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    while (true) {
      double mean_v = 0.0;
      for (double val : v) mean_v += val;
      mean_v /= static_cast<double>(n);
      double res = 0.0;
#pragma omp parallel for schedule(static) reduction(max : res)
      for (std::int64_t x = 0; x < n; ++x) {
        for (int a = 0; a < A; ++a) {
          const std::int64_t key = x * A + a;
          double ev;
          if (present[static_cast<std::size_t>(key)]) {
            ev = 0.0;
            for (std::int64_t e = start[static_cast<std::size_t>(key)];
                 e < start[static_cast<std::size_t>(key + 1)]; ++e)
              ev += probs[static_cast<std::size_t>(e)] *
                    v[static_cast<std::size_t>(nexts[static_cast<std::size_t>(e)])];
          } else {
            ev = mean_v;
          }
          const double qn = true_cdp.reward_at(x, a) + true_cdp.gamma * ev;
          res = std::max(res, std::abs(qn - out.q.q[static_cast<std::size_t>(key)]));
          out.q.q[static_cast<std::size_t>(key)] = qn;
        }
      }
#pragma omp parallel for schedule(static)
      for (std::int64_t x = 0; x < n; ++x) v[static_cast<std::size_t>(x)] = out.q.value(x);
      ++out.iterations;
      out.residual = res;
      if (res <= threshold) break;
    }
    return out;
  }

  // Invariant flavor: materialize per-variable row tables (uniform rows where
  // the pool is empty) and run the same keyed contraction as the exact model.
  const auto& sets = model.phi.index_sets;
  std::vector<std::vector<double>> tables(static_cast<std::size_t>(shape.d));
  std::int64_t fallback = 0;
  for (int i = 0; i < shape.d; ++i) {
    const std::int64_t keys = space_of(sets[static_cast<std::size_t>(i)], shape.domain_sizes);
    const int dom = shape.domain_sizes[static_cast<std::size_t>(i)];
    tables[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(keys * A * dom), 0.0);
    for (std::int64_t key = 0; key < keys; ++key) {
      for (int a = 0; a < A; ++a) {
        double* dst =
            tables[static_cast<std::size_t>(i)].data() + (key * A + a) * dom;
        auto it = model.dims[static_cast<std::size_t>(i)].find(key * A + a);
        if (it == model.dims[static_cast<std::size_t>(i)].end() || it->second.total == 0) {
          ++fallback;
          for (int vv = 0; vv < dom; ++vv) dst[vv] = 1.0 / dom;
        } else {
          for (int vv = 0; vv < dom; ++vv)
            dst[vv] = static_cast<double>(it->second.counts[static_cast<std::size_t>(vv)]) /
                      static_cast<double>(it->second.total);
        }
      }
    }
  }
  if (fallback_pairs_out) *fallback_pairs_out = fallback;

  std::vector<int> key_set;
  for (const auto& s : sets) key_set = sorted_union(key_set, s);
  const std::vector<std::int64_t> keys = state_keys(shape, key_set);
  const FactorRowFn rows = [&tables, &shape, A](int i, std::int64_t key, int a) {
    const int dom = shape.domain_sizes[static_cast<std::size_t>(i)];
    return std::span<const double>(
        tables[static_cast<std::size_t>(i)].data() + (key * A + a) * dom,
        static_cast<std::size_t>(dom));
  };
  std::vector<int> scratch_union;
  auto ev_fn = [&](const std::vector<double>& v, int a) {
    return expected_next_value(shape, sets, rows, v, a, scratch_union, cap, true);
  };
  auto key_of = [&keys](std::int64_t x) { return keys[static_cast<std::size_t>(x)]; };
  return run_value_iteration(n, A, true_cdp.gamma, tol, true_cdp.reward, ev_fn, key_of);
}

QTable lift_q(const QTable& abstract_q, const std::vector<int>& joint_set,
              const CdpShape& shape) {
  shape.validate();
  const std::vector<std::int64_t> keys = state_keys(shape, joint_set);
  const std::int64_t n = shape.state_count();
  QTable out;
  out.states = n;
  out.actions = abstract_q.actions;
  out.q.resize(static_cast<std::size_t>(n * out.actions));
  for (std::int64_t x = 0; x < n; ++x)
    for (int a = 0; a < out.actions; ++a)
      out.q[static_cast<std::size_t>(x * out.actions + a)] =
          abstract_q.at(keys[static_cast<std::size_t>(x)], a);
  return out;
}

std::vector<double> bellman_apply(const FactoredCdp& cdp, const QTable& q, std::int64_t cap) {
  const CdpShape shape = cdp.shape();
  const std::int64_t n = shape.state_count();
  if (q.states != n || q.actions != cdp.action_count)
    throw InvalidInput("bellman_apply: Q table has wrong shape");
  std::vector<double> v(static_cast<std::size_t>(n));
  for (std::int64_t x = 0; x < n; ++x) v[static_cast<std::size_t>(x)] = q.value(x);
  std::vector<int> key_set;
  for (const auto& s : cdp.parents) key_set = sorted_union(key_set, s);
  const std::vector<std::int64_t> keys = state_keys(shape, key_set);
  const FactorRowFn rows = [&cdp](int i, std::int64_t key, int a) {
    return cdp.factor_row(i, key, a);
  };
  std::vector<int> scratch_union;
  std::vector<double> out(static_cast<std::size_t>(n * cdp.action_count));
  for (int a = 0; a < cdp.action_count; ++a) {
    const std::vector<double> ev =
        expected_next_value(shape, cdp.parents, rows, v, a, scratch_union, cap, true);
    for (std::int64_t x = 0; x < n; ++x)
      out[static_cast<std::size_t>(x * cdp.action_count + a)] =
          cdp.reward_at(x, a) +
          cdp.gamma * ev[static_cast<std::size_t>(keys[static_cast<std::size_t>(x)])];
  }
  return out;
}

namespace {

// Dense policy transition matrix P_pi(x -> y) and policy-averaged reward.
void dense_policy_model(const FactoredCdp& cdp, const Policy& pi, Eigen::MatrixXd& p_pi,
                        Eigen::VectorXd& r_pi, std::int64_t cap) {
  const std::int64_t n = cdp.state_count();
  p_pi.setZero(n, n);
  r_pi.setZero(n);
  for (std::int64_t x = 0; x < n; ++x) {
    const StateVector xs = cdp.unflatten(x);
    const auto pr = pi.row(x);
    for (int a = 0; a < cdp.action_count; ++a) {
      if (pr[static_cast<std::size_t>(a)] == 0.0) continue;
      const std::vector<double> row = compose_transition(cdp, xs, a, cap);
      for (std::int64_t y = 0; y < n; ++y)
        p_pi(x, y) += pr[static_cast<std::size_t>(a)] * row[static_cast<std::size_t>(y)];
      r_pi(x) += pr[static_cast<std::size_t>(a)] * cdp.reward_at(x, a);
    }
  }
}

// One policy-operator sweep: q_out = R + gamma * P (sum_a pi q).
double policy_sweep(const FactoredCdp& cdp, const Policy& pi,
                    const std::vector<std::int64_t>& keys, std::vector<double>& q,
                    std::int64_t cap) {
  const CdpShape shape = cdp.shape();
  const std::int64_t n = shape.state_count();
  const int A = cdp.action_count;
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t x = 0; x < n; ++x) {
    const auto pr = pi.row(x);
    double acc = 0.0;
    for (int a = 0; a < A; ++a)
      acc += pr[static_cast<std::size_t>(a)] * q[static_cast<std::size_t>(x * A + a)];
    v[static_cast<std::size_t>(x)] = acc;
  }
  const FactorRowFn rows = [&cdp](int i, std::int64_t key, int a) {
    return cdp.factor_row(i, key, a);
  };
  std::vector<int> scratch_union;
  double res = 0.0;
  for (int a = 0; a < A; ++a) {
    const std::vector<double> ev =
        expected_next_value(shape, cdp.parents, rows, v, a, scratch_union, cap, true);
    double res_a = 0.0;
#pragma omp parallel for schedule(static) reduction(max : res_a)
    for (std::int64_t x = 0; x < n; ++x) {
      const double qn =
          cdp.reward_at(x, a) +
          cdp.gamma * ev[static_cast<std::size_t>(keys[static_cast<std::size_t>(x)])];
      res_a = std::max(res_a, std::abs(qn - q[static_cast<std::size_t>(x * A + a)]));
      q[static_cast<std::size_t>(x * A + a)] = qn;
    }
    res = std::max(res, res_a);
  }
  return res;
}

}  // namespace

QTable policy_evaluation(const FactoredCdp& cdp, const Policy& pi, double residual_tol,
                         std::int64_t dense_cap) {
  cdp.validate();
  const std::int64_t n = cdp.state_count();
  pi.validate(n);
  if (pi.action_count != cdp.action_count)
    throw InvalidInput("policy_evaluation: policy has wrong action count");
  if (!(residual_tol > 0.0)) throw InvalidInput("policy_evaluation: tol must be positive");
  const int A = cdp.action_count;

  QTable out;
  out.states = n;
  out.actions = A;
  out.q.assign(static_cast<std::size_t>(n * A), 0.0);

  if (n <= dense_cap) {
    Eigen::MatrixXd p_pi;
    Eigen::VectorXd r_pi;
    dense_policy_model(cdp, pi, p_pi, r_pi, kDefaultStateCap);
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - cdp.gamma * p_pi;
    const Eigen::VectorXd v = lhs.partialPivLu().solve(r_pi);
    for (std::int64_t x = 0; x < n; ++x) {
      const StateVector xs = cdp.unflatten(x);
      for (int a = 0; a < A; ++a) {
        const std::vector<double> row = compose_transition(cdp, xs, a, kDefaultStateCap);
        double ev = 0.0;
        for (std::int64_t y = 0; y < n; ++y) ev += row[static_cast<std::size_t>(y)] * v(y);
        out.q[static_cast<std::size_t>(x * A + a)] = cdp.reward_at(x, a) + cdp.gamma * ev;
      }
    }
  }

  // Iterate the policy operator until the sweep change is within tolerance.
  // The dense solve already sits at the fixed point, so it exits after one
  // sweep; with no dense solve this is the whole computation. Because the
  // operator is a gamma-contraction, a final sweep change of delta leaves the
  // returned table with Bellman residual at most gamma * delta.
  const std::vector<std::int64_t> keys =
      state_keys(cdp.shape(), [&] {
        std::vector<int> u;
        for (const auto& s : cdp.parents) u = sorted_union(u, s);
        return u;
      }());
  while (true) {
    const double res = policy_sweep(cdp, pi, keys, out.q, kDefaultStateCap);
    if (res <= residual_tol) break;
  }
  return out;
}

std::vector<double> state_visitation(const FactoredCdp& cdp, const Policy& pi,
                                     std::int64_t dense_cap) {
  cdp.validate();
  const std::int64_t n = cdp.state_count();
  if (n > dense_cap) throw TooLarge("state_visitation: state space larger than dense cap");
  pi.validate(n);
  Eigen::MatrixXd p_pi;
  Eigen::VectorXd r_pi;
  dense_policy_model(cdp, pi, p_pi, r_pi, kDefaultStateCap);
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n, n) - cdp.gamma * p_pi.transpose();
  Eigen::VectorXd rhs(n);
  for (std::int64_t x = 0; x < n; ++x) rhs(x) = (1.0 - cdp.gamma) * cdp.mu0[static_cast<std::size_t>(x)];
  Eigen::VectorXd rho = lhs.partialPivLu().solve(rhs);
  std::vector<double> out(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (std::int64_t x = 0; x < n; ++x) {
    out[static_cast<std::size_t>(x)] = std::max(rho(x), 0.0);
    sum += out[static_cast<std::size_t>(x)];
  }
  if (std::abs(sum - 1.0) > 1e-10)
    throw InvalidInput("state_visitation: solve lost normalization");
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> discounted_visitation(const FactoredCdp& cdp, const Policy& pi,
                                          std::int64_t dense_cap) {
  const std::vector<double> rho = state_visitation(cdp, pi, dense_cap);
  const std::int64_t n = cdp.state_count();
  const int A = cdp.action_count;
  std::vector<double> nu(static_cast<std::size_t>(n * A));
  for (std::int64_t x = 0; x < n; ++x) {
    const auto pr = pi.row(x);
    for (int a = 0; a < A; ++a)
      nu[static_cast<std::size_t>(x * A + a)] =
          rho[static_cast<std::size_t>(x)] * pr[static_cast<std::size_t>(a)];
  }
  return nu;
}

double concentrability(const std::vector<double>& nu, const std::vector<double>& mu) {
  if (nu.size() != mu.size()) throw InvalidInput("concentrability: size mismatch");
  double c = 0.0;
  for (std::size_t k = 0; k < nu.size(); ++k) {
    if (nu[k] <= 0.0) continue;
    if (mu[k] <= 0.0) throw Unbounded("concentrability: nu is supported where mu is not");
    c = std::max(c, nu[k] / mu[k]);
  }
  return c;
}

double weighted_l2(const std::vector<double>& f, const std::vector<double>& weight) {
  if (f.size() != weight.size()) throw InvalidInput("weighted_l2: size mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) s += weight[k] * f[k] * f[k];
  return std::sqrt(s);
}

ModelErrorBoundReport verify_model_error_bound(const FactoredCdp& cdp,
                                               const AbstractionPhi& phi,
                                               const BlockWeights& weights, std::int64_t cap) {
  const AbstractMdp abs_mdp = build_abstract_mdp(cdp, phi, weights, cap);
  const std::vector<double> eps = epsilon_model_invariance(cdp, phi, cap);
  const CdpShape shape = cdp.shape();
  const std::int64_t n = shape.state_count();
  const int A = cdp.action_count;
  const auto& joint = abs_mdp.joint_set;
  const std::int64_t m = abs_mdp.abstract_count;

  ModelErrorBoundReport rep;
  rep.states = n;
  rep.actions = A;
  rep.eps_sum = std::accumulate(eps.begin(), eps.end(), 0.0);
  rep.lhs.assign(static_cast<std::size_t>(n * A), 0.0);

  double max_lhs = 0.0;
  double max_route_gap = 0.0;
#pragma omp parallel for schedule(dynamic) reduction(max : max_lhs) reduction(max : max_route_gap)
  for (std::int64_t x = 0; x < n; ++x) {
    const StateVector xs = shape.unflatten(x);
    const std::int64_t s = key_over(joint, xs, shape.domain_sizes);
    for (int a = 0; a < A; ++a) {
      const std::vector<double> phi_row = lifted_row(cdp, joint, xs, a);
      const double direct = l1_diff(abs_mdp.row(s, a), phi_row);

      // Independent route: average, over the preimage of s, the exact
      // per-dimension telescoping of the pushforward difference
      //   Phi P(xbar, a) - Phi P(x, a)
      //     = sum_j [prod_{l<j} q_l(xbar)] x (q_j(xbar) - q_j(x)) x [prod_{l>j} q_l(x)]
      // with l, j running over the joint set. Terms at free coordinates
      // vanish because their difference rows sum to zero and are
      // marginalized out by the pushforward.
      const std::size_t jm = joint.size();
      std::vector<std::vector<double>> suffix(jm + 1);
      suffix[jm] = {1.0};
      for (int p = static_cast<int>(jm) - 1; p >= 0; --p) {
        const auto q = cdp.factor_row_for(joint[static_cast<std::size_t>(p)], xs, a);
        const auto& prev = suffix[static_cast<std::size_t>(p) + 1];
        std::vector<double> cur(q.size() * prev.size());
        for (std::size_t vv = 0; vv < q.size(); ++vv)
          for (std::size_t t = 0; t < prev.size(); ++t)
            cur[vv * prev.size() + t] = q[vv] * prev[t];
        suffix[static_cast<std::size_t>(p)] = std::move(cur);
      }

      std::vector<double> tele(static_cast<std::size_t>(m), 0.0);
      StateVector xbar = xs;
      for (int j : weights.free_set) xbar[static_cast<std::size_t>(j)] = 0;
      bool more = true;
      std::vector<double> prefix;
      std::vector<double> prefix_next;
      while (more) {
        const double wt = weights.weight_of(s, xbar);
        prefix.assign(1, 1.0);
        for (std::size_t p = 0; p < jm; ++p) {
          const int coord = joint[p];
          const auto q_bar = cdp.factor_row_for(coord, xbar, a);
          const auto q_x = cdp.factor_row_for(coord, xs, a);
          const std::size_t suf_len = suffix[p + 1].size();
          const std::size_t dom = q_bar.size();
          // contribution of the difference at position p
          for (std::size_t pk = 0; pk < prefix.size(); ++pk) {
            const double pw = wt * prefix[pk];
            if (pw == 0.0) continue;
            for (std::size_t vv = 0; vv < dom; ++vv) {
              const double dq = pw * (q_bar[vv] - q_x[vv]);
              if (dq == 0.0) continue;
              double* dst = tele.data() + (pk * dom + vv) * suf_len;
              const double* suf = suffix[p + 1].data();
              for (std::size_t t = 0; t < suf_len; ++t) dst[t] += dq * suf[t];
            }
          }
          // extend the prefix with xbar's row at this position
          prefix_next.assign(prefix.size() * dom, 0.0);
          for (std::size_t pk = 0; pk < prefix.size(); ++pk)
            for (std::size_t vv = 0; vv < dom; ++vv)
              prefix_next[pk * dom + vv] = prefix[pk] * q_bar[vv];
          prefix.swap(prefix_next);
        }
        more = odometer_step(xbar, weights.free_set, shape.domain_sizes);
      }
      double tele_l1 = 0.0;
      for (double v : tele) tele_l1 += std::abs(v);

      rep.lhs[static_cast<std::size_t>(x * A + a)] = direct;
      max_lhs = std::max(max_lhs, direct);
      max_route_gap = std::max(max_route_gap, std::abs(direct - tele_l1));
    }
  }
  rep.max_lhs = max_lhs;
  rep.max_route_gap = max_route_gap;
  rep.min_slack = rep.eps_sum - rep.max_lhs;
  rep.bound_holds = rep.max_lhs <= rep.eps_sum + 1e-9;
  rep.routes_agree = rep.max_route_gap <= 1e-9;
  return rep;
}

ValueLossBoundReport verify_value_loss_bound(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                             const BlockWeights& weights,
                                             const std::vector<double>& mu,
                                             const std::vector<double>& nu, double vi_tol,
                                             std::int64_t cap) {
  const CdpShape shape = cdp.shape();
  const std::int64_t n = shape.state_count();
  const int A = cdp.action_count;
  if (static_cast<std::int64_t>(mu.size()) != n * A ||
      static_cast<std::int64_t>(nu.size()) != n * A)
    throw InvalidInput("verify_value_loss_bound: mu and nu must cover all state-action pairs");

  const AbstractMdp abs_mdp = build_abstract_mdp(cdp, phi, weights, cap);
  const ValueIterationResult vi_abs = value_iteration(abs_mdp, vi_tol);
  const QTable lifted = lift_q(vi_abs.q, abs_mdp.joint_set, shape);
  const ValueIterationResult vi_true = value_iteration(cdp, vi_tol, cap);
  const std::vector<double> tq = bellman_apply(cdp, lifted, cap);

  std::vector<double> gap(static_cast<std::size_t>(n * A));
  std::vector<double> residual(static_cast<std::size_t>(n * A));
  for (std::int64_t k = 0; k < n * A; ++k) {
    gap[static_cast<std::size_t>(k)] =
        lifted.q[static_cast<std::size_t>(k)] - vi_true.q.q[static_cast<std::size_t>(k)];
    residual[static_cast<std::size_t>(k)] =
        lifted.q[static_cast<std::size_t>(k)] - tq[static_cast<std::size_t>(k)];
  }

  const EpsilonProfile eps = epsilon_profile(cdp, phi, cap);

  ValueLossBoundReport rep;
  rep.c = concentrability(nu, mu);
  rep.bound1_lhs = weighted_l2(gap, nu);
  rep.bound2_lhs = weighted_l2(residual, mu);
  rep.bound1_rhs = std::sqrt(rep.c) / (1.0 - cdp.gamma) * rep.bound2_lhs;
  rep.bound2_rhs =
      eps.eps_r + cdp.gamma * eps.eps_p_sum() * cdp.r_max / (2.0 * (1.0 - cdp.gamma));
  rep.slack1 = rep.bound1_rhs - rep.bound1_lhs;
  rep.slack2 = rep.bound2_rhs - rep.bound2_lhs;
  rep.holds = rep.slack1 >= -1e-9 && rep.slack2 >= -1e-9;
  return rep;
}

ValueLossBoundReport verify_value_loss_bound(const FactoredCdp& cdp, const AbstractionPhi& phi,
                                             const BlockWeights& weights, const Policy& pi,
                                             double vi_tol, std::int64_t cap) {
  const std::int64_t n = cdp.state_count();
  const int A = cdp.action_count;
  std::vector<double> mu(static_cast<std::size_t>(n * A),
                         1.0 / static_cast<double>(n * A));
  const std::vector<double> nu = discounted_visitation(cdp, pi);
  return verify_value_loss_bound(cdp, phi, weights, mu, nu, vi_tol, cap);
}

CePlanReport certainty_equivalence_plan(const FactoredCdp& true_cdp, const EstimatedModel& model,
                                        double vi_tol, std::int64_t cap) {
  std::int64_t fallback = 0;
  const ValueIterationResult vi_est = value_iteration(true_cdp, model, vi_tol, cap, &fallback);

  CePlanReport rep;
  rep.fallback_pairs = fallback;
  const CdpShape shape = true_cdp.shape();
  if (model.kind == EstimatorKind::kMle) {
    rep.total_pairs = shape.state_count() * shape.action_count;
  } else {
    rep.total_pairs = 0;
    for (const auto& s : model.phi.index_sets)
      rep.total_pairs += space_of(s, shape.domain_sizes) * shape.action_count;
  }

  rep.policy = vi_est.q.greedy_policy();
  const ValueIterationResult vi_true = value_iteration(true_cdp, vi_tol, cap);
  const QTable q_pi = policy_evaluation(true_cdp, rep.policy);

  const std::int64_t n = shape.state_count();
  for (std::int64_t x = 0; x < n; ++x) {
    const double m0 = true_cdp.mu0[static_cast<std::size_t>(x)];
    if (m0 == 0.0) continue;
    rep.v_star += m0 * vi_true.q.value(x);
    double v_pi_x = 0.0;
    const auto pr = rep.policy.row(x);
    for (int a = 0; a < shape.action_count; ++a)
      v_pi_x += pr[static_cast<std::size_t>(a)] * q_pi.at(x, a);
    rep.v_pi += m0 * v_pi_x;
  }
  rep.gap = rep.v_star - rep.v_pi;
  return rep;
}

}  // namespace milab
