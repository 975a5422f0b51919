#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mcn/control.hpp"
#include "mcn/diffusion.hpp"
#include "mcn/meta.hpp"

namespace mcn {

// Flat dotted-key configuration: defaults, then an optional key=value file,
// then CLI overrides, in that order. Unknown keys are a startup error at
// every layer. The canonical sorted "k=v" line form feeds the config hash
// recorded in reports and checkpoints.
class RunConfig {
  public:
    RunConfig();

    void load_file(const std::string& path);
    void set_override(const std::string& key_equals_value);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    int get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;

    std::vector<std::pair<std::string, std::string>> items() const;  // sorted
    std::string canonical() const;
    std::string hash() const;  // first 16 hex chars of sha256(canonical)

    uint64_t seed() const { return get_u64("seed"); }
    UNetConfig unet() const;
    NoiseSchedule schedule() const;
    MetaConfig meta() const;
    AdaptConfig adapt() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace mcn
