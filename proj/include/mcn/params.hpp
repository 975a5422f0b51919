#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

// Named collection of trainable tensors. std::map keeps iteration order
// lexicographic, which is what every reduction and serialization relies on
// for determinism.
class ParamSet {
  public:
    using Map = std::map<std::string, Tensor>;

    void insert(const std::string& path, Tensor t);
    void set(const std::string& path, Tensor t);  // insert-or-replace
    const Tensor& at(const std::string& path) const;
    bool contains(const std::string& path) const { return items_.count(path) != 0; }
    size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    int64_t total_count() const;

    Map::const_iterator begin() const { return items_.begin(); }
    Map::const_iterator end() const { return items_.end(); }

    ParamSet clone() const;  // deep copy of every tensor
    ParamSet subset_with_prefix(const std::string& prefix) const;
    std::vector<std::string> paths() const;

    void set_requires_grad(bool rg);

  private:
    Map items_;
};

// Prefix-based predicate over parameter paths. A prefix matches a path when
// equal to it or followed by '.' (so "ctrl.enc1" never captures "ctrl.enc10").
class FreezeMask {
  public:
    static FreezeMask none() { return FreezeMask{}; }

    void add_prefix(const std::string& prefix) { prefixes_.insert(prefix); }
    bool frozen(const std::string& path) const;
    bool empty() const { return prefixes_.empty(); }
    const std::set<std::string>& prefixes() const { return prefixes_; }

  private:
    std::set<std::string> prefixes_;
};

}  // namespace mcn
