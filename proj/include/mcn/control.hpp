#pragma once

#include <array>
#include <set>
#include <string>

#include "mcn/diffusion.hpp"
#include "mcn/unet.hpp"

namespace mcn {

// Which ctrl blocks are exempt from updates during meta training. The zero
// links and the hint encoder stay trainable under every policy.
enum class FreezePolicy { None, Enc4Mid, Enc2to4Mid, Enc1to3 };

FreezePolicy freeze_policy_from_string(const std::string& s);
std::string to_string(FreezePolicy p);
FreezeMask freeze_mask_for(FreezePolicy p);

// Which zero-convolution links are wired into the base decoder. enc_link[k]
// feeds decoder block k+1; mid_link feeds the middle-block output. A
// disconnected link is absent from the forward graph, so no gradient reaches
// its zero convolution.
struct ConnectionPolicy {
    std::array<bool, 4> enc_link{true, true, true, true};
    bool mid_link = true;

    int active_count() const {
        int n = mid_link ? 1 : 0;
        for (bool b : enc_link) n += b ? 1 : 0;
        return n;
    }
};

// Frozen base U-Net plus a trainable clone of its encoder and middle block.
// The clone reads x_t shifted by the hint encoder's view of the control
// image, and its activations enter the base decoder through 1x1 convolutions
// initialized to exactly zero, so the assembled model reproduces the base
// bitwise until training moves the links.
struct ControlModel {
    UNetConfig cfg;
    ParamSet base;   // "base.*", bitwise constant through any training
    ParamSet theta;  // "ctrl.*" + "zc.*" + "hint.*"
    ConnectionPolicy links;

    Tensor forward_with(const ParamSet& theta_eval, const Tensor& x, const std::vector<int>& t,
                        const Tensor* control, const std::vector<int>* class_ids) const;
    Tensor forward(const Tensor& x, const std::vector<int>& t, const Tensor* control,
                   const std::vector<int>* class_ids = nullptr) const {
        return forward_with(theta, x, t, control, class_ids);
    }
};

ControlModel attach_control_branch(const ParamSet& base, const UNetConfig& cfg, uint64_t seed);

ControlModel set_connection_policy(const ControlModel& model,
                                   const std::set<int>& disconnected_decs);

// Denoiser closures for the diffusion trainers/samplers.
ModelFn control_model_fn(const ControlModel& model, const ParamSet& theta);
ModelFn base_model_fn(const UNetConfig& cfg, const ParamSet& base_params);

}  // namespace mcn
