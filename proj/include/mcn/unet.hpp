#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcn/params.hpp"

namespace mcn {

// Toy denoising U-Net: four encoder blocks, one middle block, four decoder
// blocks with skip connections, channel-norm + silu, no attention. Spatial
// size halves after enc1..enc3, so skips sit at S, S/2, S/4, S/8 and the
// middle block runs at S/8.
struct UNetConfig {
    int image_size = 32;            // must be divisible by 16
    int base_channels = 16;
    std::array<int, 4> channel_mult{1, 2, 2, 4};
    int time_embed_dim = 64;        // even
    int class_count = 0;            // 0 = unconditional

    int channels(int block) const { return base_channels * channel_mult[static_cast<size_t>(block)]; }
    void validate() const;
};

// Skip activations and middle-block output of one encoder pass; the decoder
// consumes them, possibly after control links were added.
struct EncoderOut {
    std::array<Tensor, 4> skips;
    Tensor mid;
};

ParamSet build_unet_params(const UNetConfig& cfg, uint64_t seed, const std::string& prefix,
                           DType dt = DType::F32);

// temb as produced by unet_time_embedding; prefix selects the parameter
// family ("base." / "ctrl.").
Tensor unet_time_embedding(const UNetConfig& cfg, const ParamSet& params,
                           const std::string& prefix, const std::vector<int>& t,
                           const std::vector<int>* class_ids, DType dt);
EncoderOut unet_encode(const UNetConfig& cfg, const ParamSet& params, const std::string& prefix,
                       const Tensor& x, const Tensor& temb);
Tensor unet_decode(const UNetConfig& cfg, const ParamSet& params, const std::string& prefix,
                   const EncoderOut& enc, const Tensor& temb);

Tensor unet_forward(const UNetConfig& cfg, const ParamSet& params, const std::string& prefix,
                    const Tensor& x, const std::vector<int>& t,
                    const std::vector<int>* class_ids);

struct BaseUNet {
    UNetConfig cfg;
    ParamSet params;  // all paths under "base."

    Tensor forward(const Tensor& x, const std::vector<int>& t,
                   const std::vector<int>* class_ids = nullptr) const {
        return unet_forward(cfg, params, "base.", x, t, class_ids);
    }
};

BaseUNet build_base_unet(const UNetConfig& cfg, uint64_t seed);

// Block name ("enc1".."enc4", "mid", "dec1".."dec4", "embed", "head") of a
// parameter path under the "base."/"ctrl." family; throws on foreign paths.
std::string block_of(const std::string& path);
std::map<std::string, std::vector<std::string>> named_blocks(const ParamSet& params);

}  // namespace mcn
