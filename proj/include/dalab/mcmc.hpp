#pragma once

#include "dalab/core.hpp"
#include "dalab/prior.hpp"
#include "dalab/random.hpp"

#include <cmath>
#include <functional>
#include <iostream>
#include <vector>

namespace dalab {

struct ChainState {
  Vector u;
  double phi = 0.0;
  std::size_t steps = 0;
  std::size_t accepted = 0;
  double beta = 0.015;
  bool last_accepted = false;

  double acceptance_rate() const { return steps ? double(accepted) / double(steps) : 0.0; }
};

/// Starts a chain at u, evaluating the potential once.
template <class Potential>
ChainState start_chain(Vector u, double beta, Potential&& phi) {
  require(beta > 0.0 && beta <= 1.0, "start_chain: beta must lie in (0,1]");
  ChainState s;
  s.phi = phi(u);
  require(std::isfinite(s.phi), "start_chain: potential is not finite at the initial state");
  s.u = std::move(u);
  s.beta = beta;
  return s;
}

/// One pCN Metropolis step. The proposal
///   v = sqrt(1 - beta^2) u + (1 - sqrt(1 - beta^2)) ubar + beta xi,  xi ~ N(0, C)
/// is accepted with probability min(1, exp(Phi(u) - Phi(v))). A forward
/// failure on the proposal counts as a rejection.
template <class Potential>
ChainState pcn_step(ChainState state, const PriorModel& prior, Potential&& phi, Rng& rng) {
  const double b = state.beta;
  const double rho = std::sqrt(std::max(0.0, 1.0 - b * b));
  const Vector& mean = prior.mean_vector();
  const Vector xi = rng.normal_vector(prior.whitened_dimension());
  const double log_u = std::log(rng.uniform());

  Vector proposal = mean + rho * (state.u - mean) + b * prior.color(xi);
  double phi_new = 0.0;
  bool ok = true;
  try {
    phi_new = phi(proposal);
    ok = std::isfinite(phi_new);
  } catch (const Error& e) {
    std::clog << "warning: pcn proposal rejected after forward failure: " << e.what() << '\n';
    ok = false;
  }

  ++state.steps;
  state.last_accepted = ok && log_u < state.phi - phi_new;
  if (state.last_accepted) {
    state.u = std::move(proposal);
    state.phi = phi_new;
    ++state.accepted;
  }
  return state;
}

struct ChainTrace {
  std::vector<double> phi;
  std::vector<char> accepted;
};

struct ChainResult {
  std::vector<Vector> samples;
  ChainTrace trace;
  ChainState final_state;
  double acceptance_rate = 0.0;
};

/// Calls visit(sample, step) for each retained post-burn-in sample and
/// returns the final state. Steps are numbered from 1; a sample is retained
/// after step k when k > burn_in and (k - burn_in) is a multiple of thin.
template <class Potential, class Visitor>
ChainState run_chain(ChainState state, std::size_t n_steps, std::size_t burn_in, std::size_t thin,
                     const PriorModel& prior, Potential&& phi, Rng& rng, Visitor&& visit,
                     ChainTrace* trace = nullptr) {
  require(n_steps > burn_in, "run_chain: n_steps must exceed burn_in");
  require(thin >= 1, "run_chain: thin must be positive");
  if (trace) {
    trace->phi.reserve(trace->phi.size() + n_steps);
    trace->accepted.reserve(trace->accepted.size() + n_steps);
  }
  for (std::size_t k = 1; k <= n_steps; ++k) {
    state = pcn_step(std::move(state), prior, phi, rng);
    if (trace) {
      trace->phi.push_back(state.phi);
      trace->accepted.push_back(state.last_accepted ? 1 : 0);
    }
    if (k > burn_in && (k - burn_in) % thin == 0) visit(state.u, k);
  }
  return state;
}

template <class Potential>
ChainResult run_chain(const Vector& init, std::size_t n_steps, std::size_t burn_in, std::size_t thin,
                      double beta, const PriorModel& prior, Potential&& phi, Rng& rng) {
  ChainResult out;
  ChainState s = start_chain(init, beta, phi);
  out.final_state = run_chain(
      std::move(s), n_steps, burn_in, thin, prior, phi, rng,
      [&](const Vector& u, std::size_t) { out.samples.push_back(u); }, &out.trace);
  out.acceptance_rate = out.final_state.acceptance_rate();
  return out;
}

struct PosteriorMoments {
  Vector mean;
  Vector variance;
  std::size_t count = 0;
};

/// Streaming pointwise mean and unbiased variance (Welford).
class MomentAccumulator {
public:
  void add(const Vector& x) {
    if (count_ == 0) {
      mean_ = Vector::Zero(x.size());
      m2_ = Vector::Zero(x.size());
    }
    require(x.size() == mean_.size(), "MomentAccumulator: size mismatch");
    ++count_;
    const Vector delta = x - mean_;
    mean_ += delta / double(count_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  std::size_t count() const { return count_; }

  PosteriorMoments moments() const {
    require(count_ >= 2, "posterior_moments: need at least two samples");
    return {mean_, (m2_ / double(count_ - 1)).cwiseMax(0.0), count_};
  }

private:
  std::size_t count_ = 0;
  Vector mean_;
  Vector m2_;
};

inline PosteriorMoments posterior_moments(const std::vector<Vector>& samples) {
  require(samples.size() >= 2, "posterior_moments: need at least two samples");
  const auto n = double(samples.size());
  Vector mean = Vector::Zero(samples.front().size());
  for (const auto& s : samples) mean += s;
  mean /= n;
  Vector var = Vector::Zero(mean.size());
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  return {mean, var / (n - 1.0), samples.size()};
}

/// Combines per-chain accumulators (equal weight per sample).
inline PosteriorMoments pool_moments(const std::vector<PosteriorMoments>& parts) {
  require(!parts.empty(), "pool_moments: nothing to pool");
  std::size_t total = 0;
  Vector mean = Vector::Zero(parts.front().mean.size());
  for (const auto& p : parts) {
    total += p.count;
    mean += double(p.count) * p.mean;
  }
  mean /= double(total);
  Vector ss = Vector::Zero(mean.size());
  for (const auto& p : parts)
    ss += double(p.count - 1) * p.variance + double(p.count) * (p.mean - mean).cwiseAbs2();
  return {mean, ss / double(total - 1), total};
}

}  // namespace dalab
