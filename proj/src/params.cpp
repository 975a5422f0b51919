#include "mcn/params.hpp"

namespace mcn {

void ParamSet::insert(const std::string& path, Tensor t) {
    auto [it, ok] = items_.emplace(path, std::move(t));
    (void)it;
    if (!ok) throw ShapeError("ParamSet: duplicate path '" + path + "'");
}

void ParamSet::set(const std::string& path, Tensor t) { items_[path] = std::move(t); }

const Tensor& ParamSet::at(const std::string& path) const {
    auto it = items_.find(path);
    if (it == items_.end()) throw ShapeError("ParamSet: unknown path '" + path + "'");
    return it->second;
}

int64_t ParamSet::total_count() const {
    int64_t n = 0;
    for (const auto& [k, v] : items_) n += v.numel();
    return n;
}

ParamSet ParamSet::clone() const {
    ParamSet out;
    for (const auto& [k, v] : items_) out.items_.emplace(k, v.clone());
    return out;
}

ParamSet ParamSet::subset_with_prefix(const std::string& prefix) const {
    ParamSet out;
    for (const auto& [k, v] : items_)
        if (k.rfind(prefix, 0) == 0) out.items_.emplace(k, v);
    return out;
}

std::vector<std::string> ParamSet::paths() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& [k, v] : items_) out.push_back(k);
    return out;
}

void ParamSet::set_requires_grad(bool rg) {
    for (auto& [k, v] : items_) v.set_requires_grad(rg);
}

bool FreezeMask::frozen(const std::string& path) const {
    for (const auto& p : prefixes_) {
        if (path.size() < p.size()) continue;
        if (path.compare(0, p.size(), p) != 0) continue;
        if (path.size() == p.size() || path[p.size()] == '.') return true;
    }
    return false;
}

}  // namespace mcn
