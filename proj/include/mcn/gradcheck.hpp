#pragma once

#include <functional>
#include <string>

#include "mcn/params.hpp"

namespace mcn {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_path;
    int64_t worst_index = -1;
    int64_t probes = 0;
};

// Central-difference verification of the tape gradients of a scalar-valued
// function of a ParamSet. Every element is probed when the set holds at most
// `subsample_above` elements; otherwise a seeded uniform subsample of
// `max_probes` elements is used. Relative error per element is
// |analytic - fd| / max(|analytic|, |fd|, 1e-3); the floor absorbs
// finite-difference noise on near-zero gradients while keeping a sign flip
// at magnitude ~2.
GradCheckResult grad_check(const std::function<Tensor(const ParamSet&)>& f, const ParamSet& params,
                           double epsilon, uint64_t probe_seed = 0, int64_t max_probes = 4096,
                           int64_t subsample_above = 10000);

}  // namespace mcn
