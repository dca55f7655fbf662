#pragma once

// Brute-force reference for the mean-splitting sort, written independently of
// the library implementation: a recursive splitter over (weight, position)
// pairs instead of an iterative loop over the remaining set. Arithmetic is
// pinned the same way (sums taken in ascending bank-position order) so the
// two must agree to the last bit.

#include <cstddef>
#include <vector>

#include "seqlink/array.hpp"

namespace oracle {

struct Level {
  std::vector<std::size_t> members;  // bank positions, ascending
};

namespace detail {

struct Entry {
  std::size_t position;
  double weight;
};

// levels_left counts this level plus everything above it.
inline void split(std::vector<Entry> pool, std::size_t levels_left,
                  std::vector<Level>& out) {
  if (levels_left == 1) {
    Level top;
    for (const Entry& e : pool) top.members.push_back(e.position);
    out.push_back(top);
    return;
  }
  if (pool.size() == 1) {
    // a lone candidate is never consumed below the top
    out.push_back(Level{});
    split(std::move(pool), levels_left - 1, out);
    return;
  }
  double sum = 0.0;
  for (const Entry& e : pool) sum += e.weight;  // ascending-position order
  const double mean = sum / double(pool.size());
  Level low;
  std::vector<Entry> rest;
  for (const Entry& e : pool) {
    if (e.weight <= mean) {
      low.members.push_back(e.position);
    } else {
      rest.push_back(e);
    }
  }
  out.push_back(low);
  if (rest.empty()) {
    // all-equal pool: everything landed here, the tail stays empty
    for (std::size_t j = 1; j < levels_left; ++j) out.push_back(Level{});
    return;
  }
  split(std::move(rest), levels_left - 1, out);
}

}  // namespace detail

inline std::vector<Level> mean_split(const seqlink::Array& alpha_row,
                                     const std::vector<std::size_t>& candidates,
                                     std::size_t levels) {
  std::vector<detail::Entry> pool;
  for (std::size_t pos : candidates) pool.push_back({pos, alpha_row[pos]});
  std::vector<Level> out;
  detail::split(std::move(pool), levels, out);
  return out;
}

// Elementwise mean of the members' bank trajectories, member-major ascending,
// mirroring the pinned summation order.
inline seqlink::Array level_trajectory(const std::vector<std::size_t>& members,
                                       const seqlink::Array& trajectories,
                                       std::size_t n, std::size_t latent) {
  seqlink::Array out({n, latent});
  if (members.empty()) return out;
  for (std::size_t pos : members) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < latent; ++d) {
        out.at(i, d) += trajectories.at(pos, i, d);
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] /= double(members.size());
  return out;
}

}  // namespace oracle
