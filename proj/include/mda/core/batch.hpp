#pragma once

#include <map>
#include <random>
#include <span>
#include <vector>

#include "mda/core/types.hpp"
#include "mda/errors.hpp"

namespace mda {

using Rng = std::mt19937_64;

/// Requested sample count per domain id.
using BatchComposition = std::map<int, int>;

struct MultiDomainBatch {
  std::map<int, std::vector<ImageSample>> per_domain;
  BatchComposition composition;

  bool satisfies_composition() const {
    if (per_domain.size() != composition.size()) return false;
    for (const auto& [id, count] : composition) {
      auto it = per_domain.find(id);
      if (it == per_domain.end() ||
          static_cast<int>(it->second.size()) != count)
        return false;
    }
    return true;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [id, v] : per_domain) n += v.size();
    return n;
  }
};

/// Uniform sampling with replacement from one pool.
inline std::vector<std::size_t> sample_indices(std::size_t pool_size, int count,
                                               Rng& rng) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(count));
  std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
  for (int i = 0; i < count; ++i) out.push_back(pick(rng));
  return out;
}

/// Draws composition[d] train samples (with replacement) from each domain d.
/// Domains are visited in ascending id order so a seed fixes the result.
inline MultiDomainBatch build_batch(std::span<const DomainDataset> datasets,
                                    const BatchComposition& composition,
                                    Rng& rng) {
  MultiDomainBatch batch;
  batch.composition = composition;
  for (const auto& [domain_id, count] : composition) {
    const DomainDataset* ds = nullptr;
    for (const auto& d : datasets)
      if (d.spec.domain_id == domain_id) ds = &d;
    if (ds == nullptr)
      throw ConfigError("batch composition names unknown domain " +
                        std::to_string(domain_id));
    if (count < 0)
      throw ConfigError("negative batch count for domain " +
                        std::to_string(domain_id));
    if (ds->train.empty())
      throw ConfigError("empty train split for domain '" + ds->spec.name + "'");
    auto& out = batch.per_domain[domain_id];
    for (auto idx : sample_indices(ds->train.size(), count, rng))
      out.push_back(ds->train[idx]);
  }
  return batch;
}

}  // namespace mda
