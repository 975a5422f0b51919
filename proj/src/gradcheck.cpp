#include "mcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mcn {

namespace {

double eval_at(const std::function<Tensor(const ParamSet&)>& f, const ParamSet& params) {
    Tensor loss = f(params);  // no tape active: pure evaluation
    if (loss.ndim() != 0) throw ShapeError("grad_check: function must return a 0-d tensor");
    return loss.item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor(const ParamSet&)>& f, const ParamSet& params,
                           double epsilon, uint64_t probe_seed, int64_t max_probes,
                           int64_t subsample_above) {
    if (epsilon <= 0 || epsilon > 1e-2)
        throw ShapeError("grad_check: epsilon must be in (0, 1e-2]");

    ParamSet work = params.clone();
    work.set_requires_grad(true);

    GradTape tape;
    {
        TapeScope scope(tape);
        Tensor loss = f(work);
        if (loss.ndim() != 0) throw ShapeError("grad_check: function must return a 0-d tensor");
        tape.backward(loss);
    }

    // Flat probe index space over all elements in path order.
    struct Span {
        std::string path;
        int64_t begin;
        int64_t count;
    };
    std::vector<Span> spans;
    int64_t total = 0;
    for (const auto& [path, t] : work) {
        spans.push_back({path, total, t.numel()});
        total += t.numel();
    }

    std::vector<int64_t> probes;
    if (total <= subsample_above) {
        probes.resize(static_cast<size_t>(total));
        for (int64_t i = 0; i < total; ++i) probes[static_cast<size_t>(i)] = i;
    } else {
        Rng rng(probe_seed);
        probes.reserve(static_cast<size_t>(max_probes));
        for (int64_t i = 0; i < max_probes; ++i)
            probes.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total))));
        std::sort(probes.begin(), probes.end());
        probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
    }

    GradCheckResult result;
    result.probes = static_cast<int64_t>(probes.size());
    size_t span_idx = 0;
    for (int64_t flat : probes) {
        while (flat >= spans[span_idx].begin + spans[span_idx].count) ++span_idx;
        const Span& sp = spans[span_idx];
        int64_t k = flat - sp.begin;

        Tensor original = work.at(sp.path);
        double saved = original.get(k);
        double analytic = tape.grad(original).get(k);

        original.set(k, saved + epsilon);
        double f_plus = eval_at(f, work);
        original.set(k, saved - epsilon);
        double f_minus = eval_at(f, work);
        original.set(k, saved);

        if (!std::isfinite(f_plus) || !std::isfinite(f_minus) || !std::isfinite(analytic))
            throw NumericError("grad_check: non-finite value at '" + sp.path + "' element " +
                               std::to_string(k));

        double fd = (f_plus - f_minus) / (2.0 * epsilon);
        double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-3});
        if (rel > result.max_rel_err) {
            result.max_rel_err = rel;
            result.worst_path = sp.path;
            result.worst_index = k;
        }
    }
    return result;
}

}  // namespace mcn
